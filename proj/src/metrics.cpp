#include "qpseg/metrics.hpp"

#include <numeric>

#include "qpseg/errors.hpp"

namespace qpseg {

ConfusionMatrix::ConfusionMatrix(std::size_t num_classes, std::optional<std::size_t> excluded)
    : k_(num_classes), excluded_(excluded), counts_(num_classes * num_classes, 0) {
  if (k_ == 0) throw ParameterError("confusion matrix needs at least one class");
}

void ConfusionMatrix::add(std::size_t truth, std::size_t predicted) {
  if (truth >= k_ || predicted >= k_)
    throw DataError("confusion matrix: label pair (" + std::to_string(truth) + ", " + std::to_string(predicted) +
                    ") out of range for " + std::to_string(k_) + " classes");
  if (excluded_ && truth == *excluded_) return;
  ++counts_[truth * k_ + predicted];
}

void ConfusionMatrix::accumulate(std::span<const std::uint8_t> truth, std::span<const std::uint8_t> predicted) {
  if (truth.size() != predicted.size())
    throw DimensionError("confusion matrix: " + std::to_string(truth.size()) + " true labels vs " +
                         std::to_string(predicted.size()) + " predictions");
  for (std::size_t i = 0; i < truth.size(); ++i) add(truth[i], predicted[i]);
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
  if (other.k_ != k_ || other.excluded_ != excluded_)
    throw ParameterError("confusion matrix: cannot merge matrices with different class setups");
  for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
}

std::uint64_t ConfusionMatrix::row_total(std::size_t truth) const {
  const auto row = counts_.begin() + static_cast<std::ptrdiff_t>(truth * k_);
  return std::accumulate(row, row + static_cast<std::ptrdiff_t>(k_), std::uint64_t{0});
}

std::uint64_t ConfusionMatrix::total() const {
  return std::accumulate(counts_.begin(), counts_.end(), std::uint64_t{0});
}

double overall_accuracy(const ConfusionMatrix& cm) {
  const auto total = cm.total();
  if (total == 0) throw UndefinedMetricError("overall accuracy of an empty confusion matrix");
  std::uint64_t diag = 0;
  for (std::size_t c = 0; c < cm.num_classes(); ++c) diag += cm.count(c, c);
  return static_cast<double>(diag) / static_cast<double>(total);
}

double mean_class_accuracy(const ConfusionMatrix& cm) {
  double sum = 0.0;
  std::size_t present = 0;
  for (std::size_t c = 0; c < cm.num_classes(); ++c) {
    const auto row = cm.row_total(c);
    if (row == 0) continue;
    sum += static_cast<double>(cm.count(c, c)) / static_cast<double>(row);
    ++present;
  }
  if (present == 0) throw UndefinedMetricError("mean class accuracy: no class has any pixels");
  return sum / static_cast<double>(present);
}

void RunningLoss::add(double per_pixel_loss, std::size_t pixel_count) {
  if (pixel_count == 0) throw ParameterError("running loss: pixel count must be > 0");
  weighted_sum_ += per_pixel_loss * static_cast<double>(pixel_count);
  pixels_ += pixel_count;
}

double RunningLoss::mean() const {
  if (pixels_ == 0) throw UndefinedMetricError("running loss: mean() before any add()");
  return weighted_sum_ / static_cast<double>(pixels_);
}

const char* phase_name(Phase p) { return p == Phase::Train ? "train" : "test"; }

Phase parse_phase(const std::string& s) {
  if (s == "train") return Phase::Train;
  if (s == "test") return Phase::Test;
  throw FormatError("unknown phase '" + s + "'");
}

}  // namespace qpseg
