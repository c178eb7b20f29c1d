// qpseg: dataset generation, training runs and scaling sweeps.
//
// Exit codes: 0 success, 1 usage error, 2 data/format error, 3 all runs diverged.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "qpseg/datagen.hpp"
#include "qpseg/errors.hpp"
#include "qpseg/harness.hpp"
#include "qpseg/nn.hpp"

namespace fs = std::filesystem;
using namespace qpseg;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitDiverged = 3;

std::pair<std::size_t, std::size_t> parse_size(const std::string& s) {
  const auto x = s.find('x');
  if (x == std::string::npos) throw ParameterError("size must look like WxH, got '" + s + "'");
  try {
    return {std::stoul(s.substr(0, x)), std::stoul(s.substr(x + 1))};
  } catch (const std::exception&) {
    throw ParameterError("size must look like WxH, got '" + s + "'");
  }
}

struct TrainOverrides {
  std::string config;
  std::optional<std::string> optimizer;
  std::optional<double> lr;
  std::optional<double> mu;
  std::optional<std::size_t> epochs;
  std::optional<std::size_t> iterations;
  std::optional<std::size_t> repetitions;
  std::optional<std::size_t> batch_size;
  std::optional<std::size_t> threads;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::string> model_out;
};

void add_common_overrides(CLI::App* cmd, TrainOverrides& o) {
  cmd->add_option("--config", o.config, "JSON experiment config");
  cmd->add_option("--lr", o.lr, "learning rate");
  cmd->add_option("--mu", o.mu, "QuickProp maximum growth factor");
  cmd->add_option("--epochs", o.epochs, "number of epochs");
  cmd->add_option("--iterations", o.iterations, "weight updates per epoch");
  cmd->add_option("--repetitions", o.repetitions, "independent runs (seeds base_seed + r)");
  cmd->add_option("--batch-size", o.batch_size, "accumulate this many patches per update (switches to accumulate mode)");
  cmd->add_option("--threads", o.threads, "worker threads (0 = all cores)");
  cmd->add_option("--seed", o.seed, "base seed");
  cmd->add_option("--out", o.out, "output CSV path");
}

ExperimentConfig resolve(const TrainOverrides& o) {
  ExperimentConfig cfg = o.config.empty() ? ExperimentConfig{} : load_config(o.config);
  if (o.optimizer) cfg.optimizer = parse_optimizer(*o.optimizer);
  if (o.lr) cfg.optim.learning_rate = *o.lr;
  if (o.mu) cfg.optim.mu = *o.mu;
  if (o.epochs) cfg.epochs = *o.epochs;
  if (o.iterations) cfg.iterations_per_epoch = *o.iterations;
  if (o.repetitions) cfg.repetitions = *o.repetitions;
  if (o.batch_size) {
    cfg.batch_mode = *o.batch_size > 1 ? BatchMode::Accumulate : BatchMode::PerSample;
    cfg.batch_size = *o.batch_size;
  }
  if (o.threads) cfg.threads = *o.threads;
  if (o.seed) cfg.base_seed = *o.seed;
  if (o.out) cfg.output = *o.out;
  if (o.model_out) cfg.model_output = *o.model_out;
  cfg.validate();
  return cfg;
}

void emit(const std::string& path, const std::string& text) {
  if (path.empty())
    std::cout << text;
  else
    write_text(path, text);
}

std::string sibling(const std::string& path, const std::string& suffix) {
  fs::path p(path);
  return (p.parent_path() / (p.stem().string() + suffix + p.extension().string())).string();
}

int cmd_gen_toy(const std::string& out, std::uint64_t seed, const std::string& size) {
  const auto [w, h] = parse_size(size);
  const auto img = gen_toy(seed, w, h);
  const auto palette = toy_palette();
  save_labeled(img, out, "toy", palette, LabelEncoding::Indexed);
  save_palette(palette, (fs::path(out) / "palette.json").string());
  std::cout << "wrote " << (fs::path(out) / "toy.pgm").string() << " and labels (" << w << "x" << h << ")\n";
  return 0;
}

int cmd_gen_facade(const std::string& out, std::uint64_t seed, std::size_t count, const std::string& size) {
  const auto [w, h] = parse_size(size);
  const auto images = gen_facade_like(seed, w, h, count);
  const auto palette = facade_palette();
  for (std::size_t i = 0; i < images.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "facade_%03zu", i);
    save_labeled(images[i], out, name, palette, LabelEncoding::Color);
  }
  save_palette(palette, (fs::path(out) / "palette.json").string());
  std::cout << "wrote " << images.size() << " facade-like images to " << out << "\n";
  return 0;
}

int cmd_train(const TrainOverrides& o) {
  const auto cfg = resolve(o);
  const auto data = build_dataset(cfg.dataset);
  const auto rep = run_repetitions(cfg, data);

  std::vector<MetricRecord> records;
  double seconds = 0.0;
  for (const auto& r : rep.runs) {
    records.insert(records.end(), r.records.begin(), r.records.end());
    seconds += r.wall_seconds;
    if (r.failed) std::cerr << "run " << r.run_id << " diverged: " << r.failure << "\n";
  }
  const auto meta = config_metadata(cfg);
  emit(cfg.output, records_to_csv(records, meta));
  if (!cfg.output.empty()) write_text(sibling(cfg.output, "_summary"), aggregate_to_csv(rep.aggregate, meta));
  if (!cfg.model_output.empty()) {
    for (const auto& r : rep.runs)
      if (r.model) {
        save_model(*r.model, cfg.model_output);
        break;
      }
  }

  const auto& last_train = rep.aggregate[rep.aggregate.size() - 2];
  const auto& last_test = rep.aggregate.back();
  std::cerr << optimizer_name(cfg.optimizer) << ": " << rep.runs.size() - rep.diverged << "/" << rep.runs.size()
            << " runs finished, " << seconds << " s total\n"
            << "  final train: loss " << last_train.loss_mean << "  overall " << last_train.overall_acc_mean
            << "  class-wise " << last_train.mean_class_acc_mean << "\n"
            << "  final test:  loss " << last_test.loss_mean << "  overall " << last_test.overall_acc_mean
            << "  class-wise " << last_test.mean_class_acc_mean << "\n";
  return 0;
}

std::vector<std::size_t> parse_list(const std::string& s) {
  std::vector<std::size_t> out;
  std::size_t start = 0;
  while (start <= s.size()) {
    const auto comma = s.find(',', start);
    const auto item = s.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
    try {
      std::size_t pos = 0;
      out.push_back(std::stoul(item, &pos));
      if (pos != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ParameterError("expected a comma-separated list of integers, got '" + s + "'");
    }
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

int cmd_experiment(const std::string& which, const TrainOverrides& o, const std::string& list) {
  auto cfg = resolve(o);
  const auto values = parse_list(list);
  const auto data = build_dataset(cfg.dataset);
  const auto result = which == "k" ? experiment_scale_filters(cfg, data, values) : experiment_scale_layers(cfg, data, values);
  auto meta = config_metadata(cfg);
  meta.push_back(which == "k" ? "sweep=scale-filters" : "sweep=scale-layers k=" + std::to_string(cfg.layer_scaling_k));
  emit(cfg.output, sweep_to_csv(result, meta));

  bool any = false;
  for (const auto& c : result.cells) {
    if (!c.error.empty())
      std::cerr << which << "=" << c.value << " " << c.optimizer << ": " << c.error << "\n";
    else
      any = true;
  }
  for (std::size_t v : values)
    std::cerr << which << "=" << v << "  final train loss gap (quickprop - gd): "
              << result.loss_gap(v, cfg.epochs, Phase::Train) << "\n";
  if (!any) throw ExperimentError("every sweep cell diverged");
  return 0;
}

int cmd_eval(const std::string& model_path, const std::string& dir, std::string palette_path, bool exclude_bg) {
  const auto net = load_model(model_path);
  if (palette_path.empty()) palette_path = (fs::path(dir) / "palette.json").string();
  const auto palette = load_palette(palette_path);
  const auto set = load_labeled_dir(dir, palette);
  if (set.images.empty()) throw DataError("no labeled images in '" + dir + "'");
  for (const auto& u : set.report.unknown_colors)
    std::cerr << u.file << ": " << u.pixels << " pixels of unknown colour (" << int(u.rgb[0]) << "," << int(u.rgb[1])
              << "," << int(u.rgb[2]) << ") mapped to background\n";
  std::optional<std::size_t> excluded;
  if (exclude_bg && palette.background) excluded = palette.background;
  const auto e = evaluate(net, set.images, excluded);
  std::printf("images,loss,overall_acc,mean_class_acc\n%zu,%.9g,%.9g,%.9g\n", set.images.size(), e.loss,
              e.overall_acc, e.mean_class_acc);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"QuickProp vs gradient descent on per-pixel segmentation tasks"};
  app.require_subcommand(1);

  std::string out_dir, size = "64x64";
  std::uint64_t seed = 1;
  std::size_t count = 20;
  auto* gen_toy_cmd = app.add_subcommand("gen-toy", "write the three-class toy image");
  gen_toy_cmd->add_option("--out", out_dir, "output directory")->required();
  gen_toy_cmd->add_option("--seed", seed, "generator seed");
  gen_toy_cmd->add_option("--size", size, "WxH");

  std::string facade_size = "48x48";
  auto* gen_facade_cmd = app.add_subcommand("gen-facade", "write facade-like street scenes");
  gen_facade_cmd->add_option("--out", out_dir, "output directory")->required();
  gen_facade_cmd->add_option("--seed", seed, "generator seed");
  gen_facade_cmd->add_option("--count", count, "number of images");
  gen_facade_cmd->add_option("--size", facade_size, "WxH");

  TrainOverrides train_opts;
  auto* train_cmd = app.add_subcommand("train", "train with seeded repetitions and write per-epoch CSV");
  add_common_overrides(train_cmd, train_opts);
  train_cmd->add_option("--optimizer", train_opts.optimizer, "gd | momentum | quickprop");
  train_cmd->add_option("--model-out", train_opts.model_out, "write the first finished run's model JSON here");

  auto* exp_cmd = app.add_subcommand("experiment", "network-complexity sweeps");
  exp_cmd->require_subcommand(1);
  TrainOverrides filt_opts, layer_opts;
  std::string k_list = "2,7,12,17,22", l_list = "0,1,2,3,4,5";
  auto* filt_cmd = exp_cmd->add_subcommand("scale-filters", "sweep conv2 filters k (FC1 gets 12k kernels)");
  add_common_overrides(filt_cmd, filt_opts);
  filt_cmd->add_option("--k", k_list, "comma-separated k values");
  auto* layer_cmd = exp_cmd->add_subcommand("scale-layers", "sweep the number l of repeated FC1 layers");
  add_common_overrides(layer_cmd, layer_opts);
  layer_cmd->add_option("--l", l_list, "comma-separated l values");

  std::string model_path, data_dir, palette_path;
  bool exclude_bg = false;
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a saved model on a labeled directory");
  eval_cmd->add_option("--model", model_path, "model JSON")->required();
  eval_cmd->add_option("--data", data_dir, "directory of <name>.ppm/.pgm + <name>_labels.*")->required();
  eval_cmd->add_option("--palette", palette_path, "palette JSON (default: DATA/palette.json)");
  eval_cmd->add_flag("--exclude-background", exclude_bg, "leave the palette's background class out of accuracies");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    if (*gen_toy_cmd) return cmd_gen_toy(out_dir, seed, size);
    if (*gen_facade_cmd) return cmd_gen_facade(out_dir, seed, count, facade_size);
    if (*train_cmd) return cmd_train(train_opts);
    if (*filt_cmd) return cmd_experiment("k", filt_opts, k_list);
    if (*layer_cmd) return cmd_experiment("l", layer_opts, l_list);
    if (*eval_cmd) return cmd_eval(model_path, data_dir, palette_path, exclude_bg);
  } catch (const ParameterError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const ExperimentError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitDiverged;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  }
  return kExitUsage;
}
