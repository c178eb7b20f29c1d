#include "qpseg/harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <limits>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "qpseg/errors.hpp"

namespace qpseg {

using nlohmann::json;

// ---- configuration ------------------------------------------------------------

void ExperimentConfig::validate() const {
  optim.validate();
  if (epochs < 1) throw ParameterError("epochs must be >= 1");
  if (iterations_per_epoch < 1) throw ParameterError("iterations_per_epoch must be >= 1");
  if (repetitions < 1) throw ParameterError("repetitions must be >= 1");
  if (batch_mode == BatchMode::Accumulate && batch_size < 1) throw ParameterError("batch_size must be >= 1");
  if (arch.kind == ArchKind::Facade && arch.k < 1) throw ParameterError("architecture k must be >= 1");
  if (!(divergence_threshold > 0.0)) throw ParameterError("divergence_threshold must be > 0");
  if (dataset.kind == DatasetKind::Directory && (dataset.train_dir.empty() || dataset.test_dir.empty()))
    throw ParameterError("directory dataset needs train_dir and test_dir");
  if (dataset.kind == DatasetKind::Facade && (dataset.train_images < 1 || dataset.test_images < 1))
    throw ParameterError("facade dataset needs at least one train and one test image");
}

namespace {

void reject_unknown(const json& obj, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!obj.is_object()) throw FormatError(where + ": expected a JSON object");
  std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [key, _] : obj.items())
    if (!ok.count(key)) throw FormatError(where + ": unknown field '" + key + "'");
}

template <typename T>
void read(const json& obj, const char* key, T& out) {
  if (obj.contains(key)) out = obj.at(key).get<T>();
}

const char* dataset_kind_name(DatasetKind k) {
  switch (k) {
    case DatasetKind::Toy: return "toy";
    case DatasetKind::Facade: return "facade";
    case DatasetKind::Directory: return "dir";
  }
  return "?";
}

}  // namespace

ExperimentConfig config_from_json(const std::string& text) {
  ExperimentConfig cfg;
  try {
    const auto doc = json::parse(text);
    reject_unknown(doc,
                   {"dataset", "architecture", "optimizer", "epochs", "iterations_per_epoch", "batch_mode",
                    "batch_size", "repetitions", "base_seed", "threads", "layer_scaling_k",
                    "divergence_threshold", "output", "model_output"},
                   "config");
    if (doc.contains("dataset")) {
      const auto& d = doc["dataset"];
      reject_unknown(d, {"kind", "seed", "width", "height", "train_images", "test_images", "train_dir", "test_dir",
                         "palette", "exclude_background"},
                     "config.dataset");
      const auto kind = d.value("kind", std::string("toy"));
      if (kind == "toy") cfg.dataset.kind = DatasetKind::Toy;
      else if (kind == "facade") cfg.dataset.kind = DatasetKind::Facade;
      else if (kind == "dir") cfg.dataset.kind = DatasetKind::Directory;
      else throw ParameterError("config.dataset.kind must be toy, facade or dir, got '" + kind + "'");
      read(d, "seed", cfg.dataset.seed);
      read(d, "width", cfg.dataset.width);
      read(d, "height", cfg.dataset.height);
      read(d, "train_images", cfg.dataset.train_images);
      read(d, "test_images", cfg.dataset.test_images);
      read(d, "train_dir", cfg.dataset.train_dir);
      read(d, "test_dir", cfg.dataset.test_dir);
      read(d, "palette", cfg.dataset.palette);
      if (d.contains("exclude_background")) cfg.dataset.exclude_background = d["exclude_background"].get<bool>();
    }
    if (doc.contains("architecture")) {
      const auto& a = doc["architecture"];
      reject_unknown(a, {"kind", "k", "l"}, "config.architecture");
      const auto kind = a.value("kind", std::string("toy"));
      if (kind == "toy") cfg.arch.kind = ArchKind::Toy;
      else if (kind == "facade") cfg.arch.kind = ArchKind::Facade;
      else throw ParameterError("config.architecture.kind must be toy or facade, got '" + kind + "'");
      read(a, "k", cfg.arch.k);
      read(a, "l", cfg.arch.l);
    }
    if (doc.contains("optimizer")) {
      const auto& o = doc["optimizer"];
      reject_unknown(o, {"name", "learning_rate", "mu", "momentum", "gradient_threshold", "same_sign_gradient"},
                     "config.optimizer");
      if (o.contains("name")) cfg.optimizer = parse_optimizer(o["name"].get<std::string>());
      read(o, "learning_rate", cfg.optim.learning_rate);
      read(o, "mu", cfg.optim.mu);
      read(o, "momentum", cfg.optim.momentum);
      read(o, "gradient_threshold", cfg.optim.gradient_threshold);
      read(o, "same_sign_gradient", cfg.optim.same_sign_gradient);
    }
    read(doc, "epochs", cfg.epochs);
    read(doc, "iterations_per_epoch", cfg.iterations_per_epoch);
    if (doc.contains("batch_mode")) {
      const auto mode = doc["batch_mode"].get<std::string>();
      if (mode == "per_sample") cfg.batch_mode = BatchMode::PerSample;
      else if (mode == "accumulate") cfg.batch_mode = BatchMode::Accumulate;
      else throw ParameterError("config.batch_mode must be per_sample or accumulate, got '" + mode + "'");
    }
    read(doc, "batch_size", cfg.batch_size);
    read(doc, "repetitions", cfg.repetitions);
    read(doc, "base_seed", cfg.base_seed);
    read(doc, "threads", cfg.threads);
    read(doc, "layer_scaling_k", cfg.layer_scaling_k);
    read(doc, "divergence_threshold", cfg.divergence_threshold);
    read(doc, "output", cfg.output);
    read(doc, "model_output", cfg.model_output);
  } catch (const json::exception& e) {
    throw FormatError(std::string("config: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return config_from_json(ss.str());
}

std::string config_to_json(const ExperimentConfig& cfg) {
  json d{{"kind", dataset_kind_name(cfg.dataset.kind)},
         {"seed", cfg.dataset.seed},
         {"width", cfg.dataset.width},
         {"height", cfg.dataset.height},
         {"train_images", cfg.dataset.train_images},
         {"test_images", cfg.dataset.test_images},
         {"train_dir", cfg.dataset.train_dir},
         {"test_dir", cfg.dataset.test_dir},
         {"palette", cfg.dataset.palette}};
  if (cfg.dataset.exclude_background) d["exclude_background"] = *cfg.dataset.exclude_background;
  json doc{{"dataset", d},
           {"architecture",
            {{"kind", cfg.arch.kind == ArchKind::Toy ? "toy" : "facade"}, {"k", cfg.arch.k}, {"l", cfg.arch.l}}},
           {"optimizer",
            {{"name", optimizer_name(cfg.optimizer)},
             {"learning_rate", cfg.optim.learning_rate},
             {"mu", cfg.optim.mu},
             {"momentum", cfg.optim.momentum},
             {"gradient_threshold", cfg.optim.gradient_threshold},
             {"same_sign_gradient", cfg.optim.same_sign_gradient}}},
           {"epochs", cfg.epochs},
           {"iterations_per_epoch", cfg.iterations_per_epoch},
           {"batch_mode", cfg.batch_mode == BatchMode::PerSample ? "per_sample" : "accumulate"},
           {"batch_size", cfg.batch_size},
           {"repetitions", cfg.repetitions},
           {"base_seed", cfg.base_seed},
           {"threads", cfg.threads},
           {"layer_scaling_k", cfg.layer_scaling_k},
           {"divergence_threshold", cfg.divergence_threshold},
           {"output", cfg.output},
           {"model_output", cfg.model_output}};
  return doc.dump(2);
}

NetworkSpec build_network_spec(const ArchConfig& arch) {
  return arch.kind == ArchKind::Toy ? build_toy_net() : build_facade_net(arch.k, arch.l);
}

Dataset build_dataset(const DatasetConfig& cfg) {
  Dataset d;
  switch (cfg.kind) {
    case DatasetKind::Toy:
      // One training image and one held-out image drawn from the next seed.
      d.train.push_back(gen_toy(cfg.seed, cfg.width, cfg.height));
      d.test.push_back(gen_toy(cfg.seed + 1, cfg.width, cfg.height));
      d.num_classes = 3;
      d.input_channels = 1;
      if (cfg.exclude_background.value_or(false)) d.excluded_class = 0;
      break;
    case DatasetKind::Facade: {
      auto all = gen_facade_like(cfg.seed, cfg.width, cfg.height, cfg.train_images + cfg.test_images);
      d.train.assign(std::make_move_iterator(all.begin()),
                     std::make_move_iterator(all.begin() + static_cast<std::ptrdiff_t>(cfg.train_images)));
      d.test.assign(std::make_move_iterator(all.begin() + static_cast<std::ptrdiff_t>(cfg.train_images)),
                    std::make_move_iterator(all.end()));
      d.num_classes = facade::kNumClasses;
      d.input_channels = 3;
      if (cfg.exclude_background.value_or(true)) d.excluded_class = facade::Background;
      break;
    }
    case DatasetKind::Directory: {
      if (cfg.palette.empty()) throw ParameterError("directory dataset needs a palette file");
      const auto palette = load_palette(cfg.palette);
      d.train = load_labeled_dir(cfg.train_dir, palette).images;
      d.test = load_labeled_dir(cfg.test_dir, palette).images;
      if (d.train.empty()) throw DataError("no labeled images in '" + cfg.train_dir + "'");
      if (d.test.empty()) throw DataError("no labeled images in '" + cfg.test_dir + "'");
      d.num_classes = palette.size();
      d.input_channels = d.train.front().image.dim(0);
      if (cfg.exclude_background.value_or(true) && palette.background) d.excluded_class = palette.background;
      break;
    }
  }
  for (const auto* split : {&d.train, &d.test})
    for (const auto& img : *split) {
      check_labeled_image(img);
      if (img.image.dim(0) != d.input_channels)
        throw DataError("dataset mixes images with " + std::to_string(img.image.dim(0)) + " and " +
                        std::to_string(d.input_channels) + " channels");
    }
  return d;
}

// ---- evaluation and training --------------------------------------------------

Evaluation evaluate(const Network& net, const std::vector<LabeledImage>& images,
                    std::optional<std::size_t> excluded_class) {
  const std::size_t k = net.spec().num_classes;
  ConfusionMatrix cm(k, excluded_class);
  RunningLoss loss;
  for (const auto& img : images) {
    const Tensor scores = predict(net, img.image);
    const std::size_t oh = scores.dim(1), ow = scores.dim(2);
    if (oh > img.height() || ow > img.width())
      throw DimensionError("evaluate: score map " + shape_to_string(scores.shape()) + " larger than image");
    const std::size_t oy = (img.height() - oh) / 2, ox = (img.width() - ow) / 2;
    Tensor target(scores.shape());
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t x = 0; x < ow; ++x) {
        const std::size_t truth = img.labels.at(oy + y, ox + x);
        if (truth >= k) throw DataError("evaluate: label " + std::to_string(truth) + " >= num_classes");
        target.at(truth, y, x) = 1.0;
        std::size_t best = 0;
        for (std::size_t c = 1; c < k; ++c)
          if (scores.at(c, y, x) > scores.at(best, y, x)) best = c;
        cm.add(truth, best);
      }
    loss.add(quadratic_loss(scores, target), oh * ow);
  }
  return {loss.mean(), overall_accuracy(cm), mean_class_accuracy(cm)};
}

namespace {

bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

}  // namespace

RunResult run_training(const ExperimentConfig& cfg, const Dataset& data, std::uint64_t seed, std::size_t run_id) {
  cfg.validate();
  const auto start = std::chrono::steady_clock::now();
  const NetworkSpec spec = build_network_spec(cfg.arch);
  if (spec.input_channels != data.input_channels)
    throw DataError("network expects " + std::to_string(spec.input_channels) + " input channels, dataset has " +
                    std::to_string(data.input_channels));
  if (spec.num_classes != data.num_classes)
    throw DataError("network predicts " + std::to_string(spec.num_classes) + " classes, dataset has " +
                    std::to_string(data.num_classes));
  if (data.train.empty()) throw DataError("dataset has no training images");

  const std::size_t patch = min_input_size(spec);
  if (output_shape(spec, patch, patch) != Shape{spec.num_classes, 1, 1} || patch % 2 == 0)
    throw ParameterError("patch training needs an architecture whose odd receptive field maps to one pixel");

  RunResult result;
  result.run_id = run_id;
  result.seed = seed;

  Network net(spec);
  Rng init_rng(derive_seed(seed, 1));
  net.init_uniform(init_rng);
  Rng sampler(derive_seed(seed, 2));
  auto optimizer = make_optimizer(cfg.optimizer, cfg.optim);
  auto* quickprop = dynamic_cast<QuickProp*>(optimizer.get());
  const std::string opt_name = optimizer->name();
  const std::size_t batch = cfg.batch_mode == BatchMode::PerSample ? 1 : cfg.batch_size;

  std::vector<double> gradient(net.parameter_count());
  Tensor target = Tensor::chw(spec.num_classes, 1, 1);

  auto fail = [&](std::string why) {
    result.failed = true;
    result.failure = std::move(why);
  };

  for (std::size_t epoch = 1; epoch <= cfg.epochs && !result.failed; ++epoch) {
    for (std::size_t it = 0; it < cfg.iterations_per_epoch; ++it) {
      std::fill(gradient.begin(), gradient.end(), 0.0);
      for (std::size_t b = 0; b < batch; ++b) {
        const auto& img = data.train[sampler.below(data.train.size())];
        const Patch p = sample_patch(img, patch, sampler);
        auto fr = forward(net, p.input);
        target.fill(0.0);
        target[p.label] = 1.0;
        const auto g = backward(net, fr.cache, target);
        for (std::size_t i = 0; i < gradient.size(); ++i) gradient[i] += g[i];
      }
      if (batch > 1)
        for (auto& g : gradient) g /= static_cast<double>(batch);

      try {
        optimizer->step(net.mutable_weights(), gradient);
      } catch (const NumericError& e) {
        fail(std::string("epoch ") + std::to_string(epoch) + ": " + e.what());
        break;
      }
      if (quickprop) {
        const auto& t = quickprop->last_tally();
        result.step_cases[0] += t.fallback;
        for (std::size_t c = 0; c < 3; ++c) result.step_cases[c + 1] += t.cases[c];
      }
      if (!all_finite(net.weights())) {
        fail("epoch " + std::to_string(epoch) + ": weights became non-finite");
        break;
      }
    }
    if (result.failed) break;

    const Evaluation train = evaluate(net, data.train, data.excluded_class);
    const Evaluation test = evaluate(net, data.test, data.excluded_class);
    for (double loss : {train.loss, test.loss})
      if (!std::isfinite(loss) || loss > cfg.divergence_threshold) {
        fail("epoch " + std::to_string(epoch) + ": loss diverged");
        break;
      }
    if (result.failed) break;
    result.records.push_back({run_id, opt_name, epoch, Phase::Train, train.loss, train.overall_acc, train.mean_class_acc});
    result.records.push_back({run_id, opt_name, epoch, Phase::Test, test.loss, test.overall_acc, test.mean_class_acc});
    result.last_finite_epoch = epoch;
  }
  if (!result.failed) result.model = std::move(net);
  result.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

// ---- repetitions ----------------------------------------------------------------

namespace {

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;
};

MeanStd mean_std(const std::vector<double>& v) {
  MeanStd r;
  if (v.empty()) return {std::numeric_limits<double>::quiet_NaN(), std::numeric_limits<double>::quiet_NaN()};
  for (double x : v) r.mean += x;
  r.mean /= static_cast<double>(v.size());
  if (v.size() > 1) {
    double ss = 0.0;
    for (double x : v) ss += (x - r.mean) * (x - r.mean);
    r.std = std::sqrt(ss / static_cast<double>(v.size() - 1));
  }
  return r;
}

}  // namespace

std::vector<AggregateRow> aggregate_runs(const std::vector<RunResult>& runs, const std::string& optimizer,
                                         std::size_t epochs) {
  std::vector<const RunResult*> ok;
  for (const auto& r : runs)
    if (!r.failed) ok.push_back(&r);
  if (ok.empty()) throw ExperimentError("all " + std::to_string(runs.size()) + " runs of '" + optimizer + "' diverged");

  std::vector<AggregateRow> rows;
  for (std::size_t epoch = 1; epoch <= epochs; ++epoch) {
    for (Phase phase : {Phase::Train, Phase::Test}) {
      std::vector<double> loss, oa, mca;
      for (const auto* r : ok)
        for (const auto& rec : r->records)
          if (rec.epoch == epoch && rec.phase == phase) {
            loss.push_back(rec.loss);
            oa.push_back(rec.overall_acc);
            mca.push_back(rec.mean_class_acc);
          }
      AggregateRow row;
      row.optimizer = optimizer;
      row.epoch = epoch;
      row.phase = phase;
      row.runs = loss.size();
      row.diverged = runs.size() - ok.size();
      const auto l = mean_std(loss), a = mean_std(oa), m = mean_std(mca);
      row.loss_mean = l.mean;
      row.loss_std = l.std;
      row.overall_acc_mean = a.mean;
      row.overall_acc_std = a.std;
      row.mean_class_acc_mean = m.mean;
      row.mean_class_acc_std = m.std;
      rows.push_back(row);
    }
  }
  return rows;
}

RepetitionResult run_repetitions(const ExperimentConfig& cfg, const Dataset& data) {
  cfg.validate();
  RepetitionResult result;
  result.runs.resize(cfg.repetitions);

  std::size_t workers = cfg.threads ? cfg.threads : std::max(1u, std::thread::hardware_concurrency());
  workers = std::min(workers, cfg.repetitions);
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto work = [&] {
    for (std::size_t r; (r = next++) < cfg.repetitions;) {
      try {
        result.runs[r] = run_training(cfg, data, cfg.base_seed + r, r);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!error) error = std::current_exception();
      }
    }
  };
  if (workers <= 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t i = 0; i < workers; ++i) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }
  if (error) std::rethrow_exception(error);

  for (const auto& r : result.runs) result.diverged += r.failed ? 1 : 0;
  result.aggregate = aggregate_runs(result.runs, optimizer_name(cfg.optimizer), cfg.epochs);
  return result;
}

// ---- sweeps -----------------------------------------------------------------------

namespace {

SweepResult sweep(const ExperimentConfig& base, const Dataset& data, const std::vector<std::size_t>& values,
                  const std::string& axis) {
  SweepResult out;
  out.axis = axis;
  out.epochs = base.epochs;
  for (std::size_t v : values) {
    ExperimentConfig cfg = base;
    cfg.arch.kind = ArchKind::Facade;
    if (axis == "k") {
      if (v < 1) throw ParameterError("scale-filters: every k must be >= 1");
      cfg.arch.k = v;
      cfg.arch.l = 0;
    } else {
      cfg.arch.k = base.layer_scaling_k;
      cfg.arch.l = v;
    }
    const std::size_t params = count_parameters(build_network_spec(cfg.arch));
    for (auto kind : {OptimizerKind::GradientDescent, OptimizerKind::QuickProp}) {
      cfg.optimizer = kind;
      SweepCell cell;
      cell.value = v;
      cell.parameters = params;
      cell.optimizer = optimizer_name(kind);
      try {
        auto rep = run_repetitions(cfg, data);
        cell.rows = std::move(rep.aggregate);
        cell.diverged = rep.diverged;
      } catch (const ExperimentError& e) {
        cell.error = e.what();
        cell.diverged = cfg.repetitions;
      }
      out.cells.push_back(std::move(cell));
    }
  }
  return out;
}

}  // namespace

double SweepResult::loss_gap(std::size_t value, std::size_t epoch, Phase phase) const {
  const AggregateRow* gd = nullptr;
  const AggregateRow* qp = nullptr;
  for (const auto& c : cells) {
    if (c.value != value) continue;
    for (const auto& r : c.rows)
      if (r.epoch == epoch && r.phase == phase) (c.optimizer == "gd" ? gd : qp) = &r;
  }
  if (!gd || !qp) return std::numeric_limits<double>::quiet_NaN();
  return qp->loss_mean - gd->loss_mean;
}

SweepResult experiment_scale_filters(const ExperimentConfig& base, const Dataset& data,
                                     const std::vector<std::size_t>& k_list) {
  return sweep(base, data, k_list, "k");
}

SweepResult experiment_scale_layers(const ExperimentConfig& base, const Dataset& data,
                                    const std::vector<std::size_t>& l_list) {
  return sweep(base, data, l_list, "l");
}

// ---- CSV --------------------------------------------------------------------------

namespace {

std::string fmt9(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

std::string comments(const std::vector<std::string>& metadata) {
  std::string s;
  for (const auto& m : metadata) s += "# " + m + "\n";
  return s;
}

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream ss(line);
  while (std::getline(ss, cur, sep)) out.push_back(cur);
  if (!line.empty() && line.back() == sep) out.emplace_back();
  return out;
}

std::size_t parse_size(const std::string& s, std::size_t line) {
  std::size_t pos = 0;
  unsigned long long v = 0;
  try {
    v = std::stoull(s, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos != s.size() || s.empty()) throw FormatError("csv line " + std::to_string(line) + ": bad integer '" + s + "'");
  return static_cast<std::size_t>(v);
}

double parse_double(const std::string& s, std::size_t line) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size())
    throw FormatError("csv line " + std::to_string(line) + ": bad number '" + s + "'");
  return v;
}

}  // namespace

std::string records_to_csv(std::vector<MetricRecord> records, const std::vector<std::string>& metadata) {
  std::stable_sort(records.begin(), records.end(), [](const MetricRecord& a, const MetricRecord& b) {
    if (a.run_id != b.run_id) return a.run_id < b.run_id;
    if (a.epoch != b.epoch) return a.epoch < b.epoch;
    return static_cast<int>(a.phase) < static_cast<int>(b.phase);
  });
  std::string out = comments(metadata);
  out += kCsvHeader;
  out += '\n';
  for (const auto& r : records) {
    out += std::to_string(r.run_id) + "," + r.optimizer + "," + std::to_string(r.epoch) + "," + phase_name(r.phase) +
           "," + fmt9(r.loss) + "," + fmt9(r.overall_acc) + "," + fmt9(r.mean_class_acc) + "\n";
  }
  return out;
}

std::vector<MetricRecord> parse_records_csv(const std::string& text) {
  std::vector<MetricRecord> out;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  bool header = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    if (!header) {
      if (line != kCsvHeader) throw FormatError("csv line " + std::to_string(lineno) + ": unexpected header '" + line + "'");
      header = true;
      continue;
    }
    const auto f = split(line, ',');
    if (f.size() != 7) throw FormatError("csv line " + std::to_string(lineno) + ": expected 7 fields");
    MetricRecord r;
    r.run_id = parse_size(f[0], lineno);
    r.optimizer = f[1];
    r.epoch = parse_size(f[2], lineno);
    r.phase = parse_phase(f[3]);
    r.loss = parse_double(f[4], lineno);
    r.overall_acc = parse_double(f[5], lineno);
    r.mean_class_acc = parse_double(f[6], lineno);
    out.push_back(std::move(r));
  }
  if (!header) throw FormatError("csv: missing header");
  return out;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << text;
  if (!out) throw IoError("write to '" + path + "' failed");
}

void write_csv(const std::vector<MetricRecord>& records, const std::string& path,
               const std::vector<std::string>& metadata) {
  write_text(path, records_to_csv(records, metadata));
}

namespace {

constexpr const char* kAggregateColumns =
    "optimizer,epoch,phase,runs,diverged,loss_mean,loss_std,overall_acc_mean,overall_acc_std,mean_class_acc_mean,"
    "mean_class_acc_std";

std::string aggregate_fields(const AggregateRow& r) {
  return r.optimizer + "," + std::to_string(r.epoch) + "," + phase_name(r.phase) + "," + std::to_string(r.runs) + "," +
         std::to_string(r.diverged) + "," + fmt9(r.loss_mean) + "," + fmt9(r.loss_std) + "," +
         fmt9(r.overall_acc_mean) + "," + fmt9(r.overall_acc_std) + "," + fmt9(r.mean_class_acc_mean) + "," +
         fmt9(r.mean_class_acc_std);
}

}  // namespace

std::string aggregate_to_csv(const std::vector<AggregateRow>& rows, const std::vector<std::string>& metadata) {
  std::string out = comments(metadata) + kAggregateColumns + "\n";
  for (const auto& r : rows) out += aggregate_fields(r) + "\n";
  return out;
}

std::string sweep_to_csv(const SweepResult& sweep, const std::vector<std::string>& metadata) {
  std::string out = comments(metadata) + sweep.axis + ",parameters," + kAggregateColumns + ",loss_gap\n";
  const double nan = std::numeric_limits<double>::quiet_NaN();
  for (const auto& cell : sweep.cells) {
    for (std::size_t epoch = 1; epoch <= sweep.epochs; ++epoch) {
      for (Phase phase : {Phase::Train, Phase::Test}) {
        AggregateRow row{cell.optimizer, epoch, phase, 0, cell.diverged, nan, nan, nan, nan, nan, nan};
        for (const auto& r : cell.rows)
          if (r.epoch == epoch && r.phase == phase) row = r;
        out += std::to_string(cell.value) + "," + std::to_string(cell.parameters) + "," + aggregate_fields(row) + "," +
               fmt9(sweep.loss_gap(cell.value, epoch, phase)) + "\n";
      }
    }
  }
  return out;
}

std::vector<std::string> config_metadata(const ExperimentConfig& cfg) {
  const auto spec = build_network_spec(cfg.arch);
  std::string arch = cfg.arch.kind == ArchKind::Toy
                         ? std::string("toy")
                         : "facade(k=" + std::to_string(cfg.arch.k) + ",l=" + std::to_string(cfg.arch.l) + ")";
  return {
      "dataset=" + std::string(dataset_kind_name(cfg.dataset.kind)) + " dataset_seed=" + std::to_string(cfg.dataset.seed) +
          " architecture=" + arch + " parameters=" + std::to_string(count_parameters(spec)),
      "optimizer=" + std::string(optimizer_name(cfg.optimizer)) + " learning_rate=" + fmt9(cfg.optim.learning_rate) +
          " mu=" + fmt9(cfg.optim.mu) + " momentum=" + fmt9(cfg.optim.momentum) +
          " gradient_threshold=" + fmt9(cfg.optim.gradient_threshold) +
          " same_sign_gradient=" + (cfg.optim.same_sign_gradient ? "true" : "false"),
      "batch_mode=" + std::string(cfg.batch_mode == BatchMode::PerSample ? "per_sample" : "accumulate") +
          " batch_size=" + std::to_string(cfg.batch_mode == BatchMode::PerSample ? 1 : cfg.batch_size) +
          " epochs=" + std::to_string(cfg.epochs) + " iterations_per_epoch=" + std::to_string(cfg.iterations_per_epoch) +
          " repetitions=" + std::to_string(cfg.repetitions) + " base_seed=" + std::to_string(cfg.base_seed),
  };
}

}  // namespace qpseg
