#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "qpseg/datagen.hpp"
#include "qpseg/metrics.hpp"
#include "qpseg/nn.hpp"
#include "qpseg/optim.hpp"

namespace qpseg {

enum class DatasetKind { Toy, Facade, Directory };
enum class ArchKind { Toy, Facade };
enum class BatchMode { PerSample, Accumulate };

struct DatasetConfig {
  DatasetKind kind = DatasetKind::Toy;
  std::uint64_t seed = 1;
  std::size_t width = 64;
  std::size_t height = 64;
  std::size_t train_images = 10;  // facade only
  std::size_t test_images = 10;   // facade only
  std::string train_dir;          // directory only
  std::string test_dir;
  std::string palette;
  // Defaults: off for toy, on (class 0) for facade and directory data.
  std::optional<bool> exclude_background;
};

struct ArchConfig {
  ArchKind kind = ArchKind::Toy;
  std::size_t k = 2;
  std::size_t l = 0;
};

struct ExperimentConfig {
  DatasetConfig dataset;
  ArchConfig arch;
  OptimizerKind optimizer = OptimizerKind::GradientDescent;
  OptimConfig optim;
  std::size_t epochs = 10;
  std::size_t iterations_per_epoch = 2000;
  BatchMode batch_mode = BatchMode::PerSample;
  std::size_t batch_size = 1;  // patches per update in Accumulate mode
  std::size_t repetitions = 20;
  std::uint64_t base_seed = 1;
  std::size_t threads = 0;  // 0 = hardware concurrency
  std::size_t layer_scaling_k = FacadeDims::layer_scaling_k;
  double divergence_threshold = 1e6;
  std::string output;
  std::string model_output;

  void validate() const;
};

// Reads a JSON config; absent fields keep their defaults. Throws FormatError
// on malformed JSON and ParameterError on invalid values.
ExperimentConfig config_from_json(const std::string& text);
ExperimentConfig load_config(const std::string& path);
std::string config_to_json(const ExperimentConfig& cfg);

NetworkSpec build_network_spec(const ArchConfig& arch);

struct Dataset {
  std::vector<LabeledImage> train;
  std::vector<LabeledImage> test;
  std::size_t num_classes = 0;
  std::size_t input_channels = 0;
  std::optional<std::size_t> excluded_class;
};

Dataset build_dataset(const DatasetConfig& cfg);

struct Evaluation {
  double loss = 0.0;
  double overall_acc = 0.0;
  double mean_class_acc = 0.0;
};

// Fully convolutional pass over each image; labels are centre-cropped to the
// score map. Never modifies the network.
Evaluation evaluate(const Network& net, const std::vector<LabeledImage>& images,
                    std::optional<std::size_t> excluded_class);

struct RunResult {
  std::size_t run_id = 0;
  std::uint64_t seed = 0;
  std::vector<MetricRecord> records;  // train + test per completed epoch
  std::optional<Network> model;
  double wall_seconds = 0.0;
  bool failed = false;
  std::size_t last_finite_epoch = 0;
  std::string failure;
  // QuickProp only: fallback, quadratic, reversal, clamped component counts.
  std::array<std::uint64_t, 4> step_cases{};
};

RunResult run_training(const ExperimentConfig& cfg, const Dataset& data, std::uint64_t seed, std::size_t run_id = 0);

struct AggregateRow {
  std::string optimizer;
  std::size_t epoch = 0;
  Phase phase = Phase::Train;
  std::size_t runs = 0;
  std::size_t diverged = 0;
  double loss_mean = 0, loss_std = 0;
  double overall_acc_mean = 0, overall_acc_std = 0;
  double mean_class_acc_mean = 0, mean_class_acc_std = 0;
};

struct RepetitionResult {
  std::vector<RunResult> runs;  // index r used seed base_seed + r
  std::vector<AggregateRow> aggregate;  // per epoch, train then test
  std::size_t diverged = 0;
};

// Arithmetic mean and sample standard deviation over the runs that finished.
// Throws ExperimentError when none did.
std::vector<AggregateRow> aggregate_runs(const std::vector<RunResult>& runs, const std::string& optimizer,
                                         std::size_t epochs);

RepetitionResult run_repetitions(const ExperimentConfig& cfg, const Dataset& data);

struct SweepCell {
  std::size_t value = 0;  // k or l
  std::size_t parameters = 0;
  std::string optimizer;
  std::vector<AggregateRow> rows;  // empty when the cell failed
  std::size_t diverged = 0;
  std::string error;
};

struct SweepResult {
  std::string axis;  // "k" or "l"
  std::size_t epochs = 0;
  std::vector<SweepCell> cells;  // per value: gd then quickprop

  // QuickProp minus GD mean loss at (value, epoch, phase); NaN if a cell failed.
  double loss_gap(std::size_t value, std::size_t epoch, Phase phase) const;
};

SweepResult experiment_scale_filters(const ExperimentConfig& base, const Dataset& data,
                                     const std::vector<std::size_t>& k_list);
SweepResult experiment_scale_layers(const ExperimentConfig& base, const Dataset& data,
                                    const std::vector<std::size_t>& l_list);

// ---- CSV --------------------------------------------------------------------

inline constexpr const char* kCsvHeader = "run_id,optimizer,epoch,phase,loss,overall_acc,mean_class_acc";

// Records sorted by (run_id, epoch, phase), floats with 9 significant digits.
// Each metadata line is written first as a '#' comment.
std::string records_to_csv(std::vector<MetricRecord> records, const std::vector<std::string>& metadata = {});
std::vector<MetricRecord> parse_records_csv(const std::string& text);
void write_csv(const std::vector<MetricRecord>& records, const std::string& path,
               const std::vector<std::string>& metadata = {});

std::string aggregate_to_csv(const std::vector<AggregateRow>& rows, const std::vector<std::string>& metadata = {});
std::string sweep_to_csv(const SweepResult& sweep, const std::vector<std::string>& metadata = {});

std::vector<std::string> config_metadata(const ExperimentConfig& cfg);
void write_text(const std::string& path, const std::string& text);

}  // namespace qpseg
