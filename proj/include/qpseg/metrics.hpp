#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace qpseg {

/// K x K pixel counts, rows = true class, columns = predicted class.
/// Pixels whose true class equals the excluded index are skipped.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t num_classes, std::optional<std::size_t> excluded = std::nullopt);

  std::size_t num_classes() const { return k_; }
  std::optional<std::size_t> excluded() const { return excluded_; }

  void add(std::size_t truth, std::size_t predicted);
  void accumulate(std::span<const std::uint8_t> truth, std::span<const std::uint8_t> predicted);
  void merge(const ConfusionMatrix& other);

  std::uint64_t count(std::size_t truth, std::size_t predicted) const { return counts_[truth * k_ + predicted]; }
  std::uint64_t row_total(std::size_t truth) const;
  std::uint64_t total() const;

 private:
  std::size_t k_;
  std::optional<std::size_t> excluded_;
  std::vector<std::uint64_t> counts_;
};

// trace / total.
double overall_accuracy(const ConfusionMatrix& cm);
// Mean per-class recall over classes that occur; absent classes are left out.
double mean_class_accuracy(const ConfusionMatrix& cm);

// Pixel-weighted average of per-pixel losses.
class RunningLoss {
 public:
  void add(double per_pixel_loss, std::size_t pixel_count);
  double mean() const;
  std::size_t pixels() const { return pixels_; }

 private:
  double weighted_sum_ = 0.0;
  std::size_t pixels_ = 0;
};

enum class Phase { Train, Test };
const char* phase_name(Phase p);
Phase parse_phase(const std::string& s);

struct MetricRecord {
  std::size_t run_id = 0;
  std::string optimizer;
  std::size_t epoch = 0;
  Phase phase = Phase::Train;
  double loss = 0.0;
  double overall_acc = 0.0;
  double mean_class_acc = 0.0;

  friend bool operator==(const MetricRecord&, const MetricRecord&) = default;
};

}  // namespace qpseg
