#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "qpseg/errors.hpp"
#include "qpseg/harness.hpp"

namespace qpseg {
namespace {

ExperimentConfig toy_config() {
  ExperimentConfig cfg;
  cfg.dataset.kind = DatasetKind::Toy;
  cfg.dataset.width = cfg.dataset.height = 40;
  cfg.arch.kind = ArchKind::Toy;
  cfg.epochs = 1;
  cfg.iterations_per_epoch = 1;
  cfg.repetitions = 1;
  cfg.threads = 1;
  return cfg;
}

ExperimentConfig facade_config() {
  ExperimentConfig cfg;
  cfg.dataset.kind = DatasetKind::Facade;
  cfg.dataset.width = cfg.dataset.height = 24;
  cfg.dataset.train_images = 2;
  cfg.dataset.test_images = 1;
  cfg.arch.kind = ArchKind::Facade;
  cfg.epochs = 2;
  cfg.iterations_per_epoch = 3;
  cfg.repetitions = 1;
  cfg.threads = 1;
  return cfg;
}

std::size_t line_count(const std::string& text) { return static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n')); }

RunResult fake_run(std::size_t id, double loss, bool failed = false) {
  RunResult r;
  r.run_id = id;
  r.failed = failed;
  if (!failed)
    for (Phase p : {Phase::Train, Phase::Test}) r.records.push_back({id, "gd", 1, p, loss, 0.5 + loss, 0.25});
  return r;
}

TEST(RunTraining, OneEpochOneIterationGivesTwoRecords) {
  const auto cfg = toy_config();
  const auto data = build_dataset(cfg.dataset);
  const auto r = run_training(cfg, data, 1);
  EXPECT_FALSE(r.failed);
  ASSERT_EQ(r.records.size(), 2u);
  EXPECT_EQ(r.records[0].phase, Phase::Train);
  EXPECT_EQ(r.records[1].phase, Phase::Test);
  EXPECT_EQ(r.records[0].optimizer, "gd");
  EXPECT_TRUE(r.model.has_value());
}

TEST(RunTraining, SameSeedGivesIdenticalCsvBytes) {
  auto cfg = toy_config();
  cfg.epochs = 2;
  cfg.iterations_per_epoch = 50;
  cfg.repetitions = 2;
  cfg.optimizer = OptimizerKind::QuickProp;
  const auto data = build_dataset(cfg.dataset);
  auto csv = [&] {
    std::vector<MetricRecord> all;
    for (const auto& r : run_repetitions(cfg, data).runs) all.insert(all.end(), r.records.begin(), r.records.end());
    return records_to_csv(all, config_metadata(cfg));
  };
  EXPECT_EQ(csv(), csv());
}

TEST(RunTraining, GradientDescentMakesProgressOnToy) {
  auto cfg = toy_config();
  cfg.dataset.width = cfg.dataset.height = 64;
  cfg.epochs = 5;
  cfg.iterations_per_epoch = 2000;
  cfg.optim.learning_rate = 0.01;
  const auto data = build_dataset(cfg.dataset);
  const auto r = run_training(cfg, data, 1);
  ASSERT_EQ(r.records.size(), 10u);
  EXPECT_LT(r.records[8].loss, r.records[0].loss);
}

TEST(RunTraining, DivergenceIsRecordedNotThrown) {
  auto cfg = toy_config();
  cfg.divergence_threshold = 1e-9;
  const auto data = build_dataset(cfg.dataset);
  const auto r = run_training(cfg, data, 1);
  EXPECT_TRUE(r.failed);
  EXPECT_TRUE(r.records.empty());
  EXPECT_EQ(r.last_finite_epoch, 0u);
  EXPECT_FALSE(r.failure.empty());
  EXPECT_THROW(run_repetitions(cfg, data), ExperimentError);
}

TEST(RunTraining, AccumulateModeRuns) {
  auto cfg = toy_config();
  cfg.batch_mode = BatchMode::Accumulate;
  cfg.batch_size = 4;
  cfg.iterations_per_epoch = 10;
  cfg.optimizer = OptimizerKind::QuickProp;
  const auto r = run_training(cfg, build_dataset(cfg.dataset), 3);
  EXPECT_EQ(r.records.size(), 2u);
  EXPECT_GT(r.step_cases[0], 0u);
}

TEST(RunRepetitions, SingleRunHasZeroStd) {
  auto cfg = toy_config();
  cfg.epochs = 2;
  const auto rep = run_repetitions(cfg, build_dataset(cfg.dataset));
  ASSERT_EQ(rep.aggregate.size(), 4u);
  for (const auto& row : rep.aggregate) {
    EXPECT_EQ(row.runs, 1u);
    EXPECT_EQ(row.loss_std, 0.0);
    EXPECT_EQ(row.overall_acc_std, 0.0);
    EXPECT_EQ(row.mean_class_acc_std, 0.0);
  }
}

TEST(RunRepetitions, AddingARunKeepsEarlierRuns) {
  auto cfg = toy_config();
  cfg.iterations_per_epoch = 20;
  cfg.repetitions = 2;
  const auto data = build_dataset(cfg.dataset);
  const auto two = run_repetitions(cfg, data);
  cfg.repetitions = 3;
  cfg.threads = 2;
  const auto three = run_repetitions(cfg, data);
  for (std::size_t r = 0; r < 2; ++r) {
    EXPECT_EQ(two.runs[r].records, three.runs[r].records);
    EXPECT_EQ(three.runs[r].seed, cfg.base_seed + r);
  }
}

TEST(AggregateRuns, OneDivergedRunOfThree) {
  const std::vector<RunResult> runs{fake_run(0, 0.2), fake_run(1, 0.0, true), fake_run(2, 0.4)};
  const auto rows = aggregate_runs(runs, "gd", 1);
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[0].runs, 2u);
  EXPECT_EQ(rows[0].diverged, 1u);
  EXPECT_DOUBLE_EQ(rows[0].loss_mean, 0.3);
  EXPECT_DOUBLE_EQ(rows[0].loss_std, std::sqrt(0.02));
  EXPECT_DOUBLE_EQ(rows[0].overall_acc_mean, 0.8);
}

TEST(AggregateRuns, AllFailedThrows) {
  EXPECT_THROW(aggregate_runs({fake_run(0, 0, true)}, "gd", 1), ExperimentError);
}

TEST(AggregateRuns, OrderDoesNotMatter) {
  std::vector<RunResult> runs;
  for (std::size_t i = 0; i < 5; ++i) runs.push_back(fake_run(i, 0.1 * double(i * i) + 0.03));
  const auto a = aggregate_runs(runs, "gd", 1);
  std::reverse(runs.begin(), runs.end());
  std::swap(runs[0], runs[3]);
  const auto b = aggregate_runs(runs, "gd", 1);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_NEAR(a[i].loss_mean, b[i].loss_mean, 1e-15);
    EXPECT_NEAR(a[i].loss_std, b[i].loss_std, 1e-15);
  }
}

TEST(Sweeps, ScaleFiltersSingleValue) {
  auto cfg = facade_config();
  const auto data = build_dataset(cfg.dataset);
  const auto sweep = experiment_scale_filters(cfg, data, {2});
  ASSERT_EQ(sweep.cells.size(), 2u);
  EXPECT_EQ(sweep.cells[0].optimizer, "gd");
  EXPECT_EQ(sweep.cells[1].optimizer, "quickprop");
  EXPECT_EQ(sweep.cells[0].parameters, 1241u + 857u * 2u);
  const double gap = sweep.loss_gap(2, 2, Phase::Train);
  EXPECT_DOUBLE_EQ(gap, sweep.cells[1].rows[2].loss_mean - sweep.cells[0].rows[2].loss_mean);
  EXPECT_THROW(experiment_scale_filters(cfg, data, {0}), ParameterError);
}

TEST(Sweeps, ParameterCountsIncreaseWithK) {
  auto cfg = facade_config();
  cfg.epochs = 1;
  cfg.iterations_per_epoch = 1;
  const auto sweep = experiment_scale_filters(cfg, build_dataset(cfg.dataset), {1, 3, 5});
  for (std::size_t i = 2; i < sweep.cells.size(); i += 2)
    EXPECT_GT(sweep.cells[i].parameters, sweep.cells[i - 2].parameters);
}

TEST(Sweeps, ScaleLayersRowCountAndIncrements) {
  auto cfg = facade_config();
  cfg.epochs = 2;
  cfg.iterations_per_epoch = 1;
  cfg.layer_scaling_k = 2;
  const std::vector<std::size_t> ls{0, 1, 2};
  const auto sweep = experiment_scale_layers(cfg, build_dataset(cfg.dataset), ls);
  const auto csv = sweep_to_csv(sweep);
  EXPECT_EQ(line_count(csv), 1 + ls.size() * 2 * cfg.epochs * 2);
  EXPECT_EQ(csv.rfind("l,parameters,optimizer,epoch,phase,", 0), 0u);
  const std::size_t d1 = sweep.cells[2].parameters - sweep.cells[0].parameters;
  const std::size_t d2 = sweep.cells[4].parameters - sweep.cells[2].parameters;
  EXPECT_EQ(d1, d2);
  EXPECT_EQ(d1, 24u * 24u + 24u);
  EXPECT_EQ(sweep.cells[0].parameters, count_parameters(build_facade_net(2, 0)));
}

TEST(Sweeps, FailedCellsBecomeNanRows) {
  auto cfg = facade_config();
  cfg.epochs = 1;
  cfg.iterations_per_epoch = 1;
  cfg.divergence_threshold = 1e-12;
  const auto sweep = experiment_scale_filters(cfg, build_dataset(cfg.dataset), {1});
  ASSERT_EQ(sweep.cells.size(), 2u);
  EXPECT_FALSE(sweep.cells[0].error.empty());
  EXPECT_TRUE(std::isnan(sweep.loss_gap(1, 1, Phase::Train)));
  const auto csv = sweep_to_csv(sweep);
  EXPECT_EQ(line_count(csv), 1u + 2u * 2u);
  EXPECT_NE(csv.find("nan"), std::string::npos);
}

TEST(Csv, EmptyIsHeaderOnly) {
  EXPECT_EQ(records_to_csv({}), std::string(kCsvHeader) + "\n");
}

TEST(Csv, OneRecordIsTwoLines) {
  const auto csv = records_to_csv({{3, "quickprop", 7, Phase::Test, 0.125, 0.5, 0.25}});
  EXPECT_EQ(csv, std::string(kCsvHeader) + "\n3,quickprop,7,test,0.125,0.5,0.25\n");
}

TEST(Csv, RowsAreSorted) {
  std::vector<MetricRecord> recs{{1, "gd", 1, Phase::Test, 1, 1, 1},
                                 {0, "gd", 2, Phase::Train, 2, 2, 2},
                                 {1, "gd", 1, Phase::Train, 3, 3, 3},
                                 {0, "gd", 1, Phase::Test, 4, 4, 4}};
  const auto back = parse_records_csv(records_to_csv(recs));
  ASSERT_EQ(back.size(), 4u);
  EXPECT_EQ(back[0].loss, 4);
  EXPECT_EQ(back[1].loss, 2);
  EXPECT_EQ(back[2].loss, 3);
  EXPECT_EQ(back[3].loss, 1);
}

TEST(Csv, RoundTripAtPrintedPrecision) {
  Rng rng(31);
  std::vector<MetricRecord> recs;
  for (std::size_t i = 0; i < 200; ++i)
    recs.push_back({i % 7, i % 2 ? "gd" : "quickprop", i, i % 3 ? Phase::Train : Phase::Test,
                    rng.uniform(0, 5) * std::pow(10.0, -double(rng.below(12))), rng.uniform(), rng.uniform()});
  const std::vector<std::string> meta{"optimizer gd", "note x"};
  const auto text = records_to_csv(recs, meta);
  EXPECT_EQ(text.rfind("# optimizer gd\n# note x\n", 0), 0u);
  const auto back = parse_records_csv(text);
  ASSERT_EQ(back.size(), recs.size());
  EXPECT_EQ(records_to_csv(back, meta), text);
  for (const auto& b : back) {
    const auto it = std::find_if(recs.begin(), recs.end(), [&](const MetricRecord& r) {
      return r.run_id == b.run_id && r.epoch == b.epoch && r.phase == b.phase;
    });
    ASSERT_NE(it, recs.end());
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.9g", it->loss);
    EXPECT_EQ(b.loss, std::stod(buf));
  }
}

TEST(Csv, MalformedInput) {
  EXPECT_THROW(parse_records_csv("wrong,header\n"), FormatError);
  EXPECT_THROW(parse_records_csv(std::string(kCsvHeader) + "\n1,gd,1,train,0.1\n"), FormatError);
  EXPECT_THROW(write_csv({}, "/nonexistent/dir/out.csv"), IoError);
}

TEST(Evaluate, DoesNotMutateWeights) {
  const auto cfg = toy_config();
  const auto data = build_dataset(cfg.dataset);
  Network net(build_toy_net());
  Rng rng(5);
  net.init_uniform(rng);
  const std::vector<double> before(net.weights().begin(), net.weights().end());
  const auto gen = net.generation();
  const auto a = evaluate(net, data.test, std::nullopt);
  const auto b = evaluate(net, data.test, std::nullopt);
  EXPECT_EQ(a.loss, b.loss);
  EXPECT_EQ(a.overall_acc, b.overall_acc);
  EXPECT_EQ(a.mean_class_acc, b.mean_class_acc);
  EXPECT_TRUE(std::equal(before.begin(), before.end(), net.weights().begin()));
  EXPECT_EQ(net.generation(), gen);
}

TEST(Evaluate, PerfectScoresOnConstantImage) {
  // Sigmoid(large bias on class 0) predicts background everywhere.
  Network net(build_toy_net());
  auto w = net.mutable_weights();
  w[106] = 10.0;
  w[107] = w[108] = -10.0;
  LabeledImage img{Tensor({1, 9, 9}, 0.1), LabelMap{9, 9, std::vector<std::uint8_t>(81, 0)}, 3};
  const auto e = evaluate(net, {img}, std::nullopt);
  EXPECT_EQ(e.overall_acc, 1.0);
  EXPECT_EQ(e.mean_class_acc, 1.0);
  EXPECT_LT(e.loss, 1e-8);
  EXPECT_THROW(evaluate(net, {img}, 0), UndefinedMetricError);
}

TEST(Config, JsonRoundTrip) {
  auto cfg = facade_config();
  cfg.optimizer = OptimizerKind::QuickProp;
  cfg.optim.mu = 2.25;
  cfg.optim.same_sign_gradient = false;
  cfg.batch_mode = BatchMode::Accumulate;
  cfg.batch_size = 8;
  cfg.dataset.exclude_background = false;
  const auto back = config_from_json(config_to_json(cfg));
  EXPECT_EQ(config_to_json(back), config_to_json(cfg));
  EXPECT_EQ(back.optimizer, OptimizerKind::QuickProp);
  EXPECT_EQ(back.optim.mu, 2.25);
  EXPECT_FALSE(back.optim.same_sign_gradient);
  EXPECT_EQ(back.batch_size, 8u);
  EXPECT_EQ(back.dataset.exclude_background, false);
}

TEST(Config, DefaultsAndErrors) {
  const auto cfg = config_from_json("{}");
  EXPECT_EQ(cfg.epochs, 10u);
  EXPECT_EQ(cfg.iterations_per_epoch, 2000u);
  EXPECT_EQ(cfg.repetitions, 20u);
  EXPECT_EQ(cfg.optim.learning_rate, 0.01);
  EXPECT_EQ(cfg.optim.mu, 1.75);
  EXPECT_THROW(config_from_json("{"), FormatError);
  EXPECT_THROW(config_from_json(R"({"epoch": 3})"), FormatError);
  EXPECT_THROW(config_from_json(R"({"optimizer": {"name": "adam"}})"), ParameterError);
  EXPECT_THROW(config_from_json(R"({"epochs": 0})"), ParameterError);
  EXPECT_THROW(config_from_json(R"({"repetitions": 0})"), ParameterError);
  EXPECT_THROW(config_from_json(R"({"optimizer": {"learning_rate": -1}})"), ParameterError);
  EXPECT_THROW(load_config("/nonexistent/config.json"), IoError);
}

TEST(Dataset, BackgroundExclusionDefaults) {
  DatasetConfig toy;
  EXPECT_FALSE(build_dataset(toy).excluded_class.has_value());
  DatasetConfig fac;
  fac.kind = DatasetKind::Facade;
  fac.width = fac.height = 24;
  fac.train_images = fac.test_images = 1;
  const auto d = build_dataset(fac);
  EXPECT_EQ(d.excluded_class, std::optional<std::size_t>(0));
  EXPECT_EQ(d.input_channels, 3u);
  EXPECT_EQ(d.train.size(), 1u);
  EXPECT_EQ(d.test.size(), 1u);
}

}  // namespace
}  // namespace qpseg
