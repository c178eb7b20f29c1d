#pragma once

#include <array>
#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace qpseg {

struct OptimConfig {
  double learning_rate = 0.01;
  double mu = 1.75;  // maximum growth factor
  double momentum = 0.9;
  double gradient_threshold = 1e-15;
  // Add -learning_rate * g to the QuickProp step when g and the previous g share a sign.
  bool same_sign_gradient = true;

  void validate() const;
};

// ---- scalar rules ---------------------------------------------------------

// Plain descent: w - lr * g.
double gd_step(double w, double g, double learning_rate);

struct MomentumResult {
  double weight;
  double step;
};
// step = momentum * prev_step - lr * g; weight = w + step.
MomentumResult momentum_step(double w, double g, double prev_step, double learning_rate, double momentum);

// Secant estimate of the second derivative from two consecutive slopes.
// Throws DegenerateError when prev_step == 0.
double second_derivative_estimate(double g, double g_prev, double prev_step);

enum class StepCase { Quadratic, Reversal, Clamped };
const char* step_case_name(StepCase c);

struct RawStep {
  double step;
  StepCase kind;
};

/// QuickProp step for one weight, before any gradient term is added.
///
/// The parabola through the two most recent slopes gives
///   step = g / (g_prev - g) * prev_step.
/// Slopes with the same sign and a shrinking magnitude take that step as is
/// (Quadratic); slopes of opposite sign also take it, which steps back towards
/// the previous weight (Reversal). A non-shrinking same-sign slope would give an
/// infinite or wrong-way step, and any step larger than mu * |prev_step| is too
/// large; both are replaced by mu * prev_step (Clamped).
RawStep quickprop_raw_step(double g, double g_prev, double prev_step, double mu);

struct ParabolaCoeffs {
  double a;
  double b;
  double c;

  double operator()(double offset) const { return (a * offset + b) * offset + c; }
  // Offset -b / (2a) of the stationary point; a must be non-zero.
  double vertex_offset() const { return -b / (2.0 * a); }
};

// Local model p(z) = a (z - w)^2 + b (z - w) + c around the current weight.
ParabolaCoeffs parabola_coefficients(double loss, double g, double g_prev, double prev_step);

// ---- vector optimizers ----------------------------------------------------

class Optimizer {
 public:
  virtual ~Optimizer() = default;
  virtual std::string name() const = 0;
  // Updates weights in place from the gradient at those weights.
  virtual void step(std::span<double> weights, std::span<const double> gradient) = 0;
};

class GradientDescent final : public Optimizer {
 public:
  explicit GradientDescent(OptimConfig cfg);
  std::string name() const override { return "gd"; }
  void step(std::span<double> weights, std::span<const double> gradient) override;

 private:
  OptimConfig cfg_;
};

class MomentumDescent final : public Optimizer {
 public:
  explicit MomentumDescent(OptimConfig cfg);
  std::string name() const override { return "momentum"; }
  void step(std::span<double> weights, std::span<const double> gradient) override;

 private:
  OptimConfig cfg_;
  std::vector<double> prev_step_;
};

struct QuickPropState {
  std::vector<double> prev_gradient;
  std::vector<double> prev_step;
  bool ignited = false;
};

// How many components took each branch during one update.
struct QuickPropTally {
  std::size_t fallback = 0;
  std::array<std::size_t, 3> cases{};  // indexed by StepCase

  std::size_t count(StepCase c) const { return cases[static_cast<std::size_t>(c)]; }
};

/// One QuickProp update over a whole weight vector. Per component:
///  1. before ignition, for |g| below the threshold, or when the previous step
///     is zero: gradient-descent step -lr * g;
///  2. otherwise the raw QuickProp step, plus -lr * g when g and g_prev have
///     the same (non-zero) sign and the config enables it.
/// The state then holds g and the step actually taken.
/// Throws NumericError naming the first non-finite gradient component.
QuickPropTally quickprop_update(std::span<double> weights, std::span<const double> gradient,
                                QuickPropState& state, const OptimConfig& cfg);

class QuickProp final : public Optimizer {
 public:
  explicit QuickProp(OptimConfig cfg);
  std::string name() const override { return "quickprop"; }
  void step(std::span<double> weights, std::span<const double> gradient) override;

  const QuickPropState& state() const { return state_; }
  const QuickPropTally& last_tally() const { return tally_; }

 private:
  OptimConfig cfg_;
  QuickPropState state_;
  QuickPropTally tally_;
};

enum class OptimizerKind { GradientDescent, Momentum, QuickProp };

OptimizerKind parse_optimizer(const std::string& name);
const char* optimizer_name(OptimizerKind kind);
std::unique_ptr<Optimizer> make_optimizer(OptimizerKind kind, const OptimConfig& cfg);

}  // namespace qpseg
