#include "qpseg/optim.hpp"

#include <cmath>

#include "qpseg/errors.hpp"

namespace qpseg {
namespace {

bool same_sign(double a, double b) { return (a > 0.0 && b > 0.0) || (a < 0.0 && b < 0.0); }

void check_lengths(std::span<double> weights, std::span<const double> gradient, const char* who) {
  if (weights.size() != gradient.size())
    throw DimensionError(std::string(who) + ": " + std::to_string(weights.size()) + " weights but " +
                         std::to_string(gradient.size()) + " gradient components");
}

void check_finite(std::span<const double> gradient) {
  for (std::size_t i = 0; i < gradient.size(); ++i)
    if (!std::isfinite(gradient[i]))
      throw NumericError("non-finite gradient component at index " + std::to_string(i));
}

}  // namespace

void OptimConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ParameterError("learning rate must be > 0");
  if (!(mu > 0.0)) throw ParameterError("maximum growth factor mu must be > 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ParameterError("momentum must be in [0, 1)");
  if (!(gradient_threshold > 0.0)) throw ParameterError("gradient threshold must be > 0");
}

double gd_step(double w, double g, double learning_rate) { return w - learning_rate * g; }

MomentumResult momentum_step(double w, double g, double prev_step, double learning_rate, double momentum) {
  const double step = momentum * prev_step - learning_rate * g;
  return {w + step, step};
}

double second_derivative_estimate(double g, double g_prev, double prev_step) {
  if (prev_step == 0.0) throw DegenerateError("second derivative estimate: previous step is zero");
  return (g - g_prev) / prev_step;
}

const char* step_case_name(StepCase c) {
  switch (c) {
    case StepCase::Quadratic: return "quadratic";
    case StepCase::Reversal: return "reversal";
    case StepCase::Clamped: return "clamped";
  }
  return "?";
}

RawStep quickprop_raw_step(double g, double g_prev, double prev_step, double mu) {
  if (prev_step == 0.0) throw DegenerateError("quickprop step: previous step is zero");
  const double limit = mu * prev_step;
  const bool same = same_sign(g, g_prev);
  if (same && std::abs(g) >= std::abs(g_prev)) return {limit, StepCase::Clamped};
  // Already at a stationary point of the local parabola.
  if (g == 0.0) return {0.0, StepCase::Quadratic};

  const double step = g / (g_prev - g) * prev_step;
  if (std::abs(step) > std::abs(limit)) return {limit, StepCase::Clamped};
  return {step, same ? StepCase::Quadratic : StepCase::Reversal};
}

ParabolaCoeffs parabola_coefficients(double loss, double g, double g_prev, double prev_step) {
  if (prev_step == 0.0) throw DegenerateError("parabola coefficients: previous step is zero");
  return {0.5 * (g - g_prev) / prev_step, g, loss};
}

// ---------------------------------------------------------------------------

GradientDescent::GradientDescent(OptimConfig cfg) : cfg_(cfg) { cfg_.validate(); }

void GradientDescent::step(std::span<double> weights, std::span<const double> gradient) {
  check_lengths(weights, gradient, "gd");
  check_finite(gradient);
  for (std::size_t i = 0; i < weights.size(); ++i) weights[i] = gd_step(weights[i], gradient[i], cfg_.learning_rate);
}

MomentumDescent::MomentumDescent(OptimConfig cfg) : cfg_(cfg) { cfg_.validate(); }

void MomentumDescent::step(std::span<double> weights, std::span<const double> gradient) {
  check_lengths(weights, gradient, "momentum");
  check_finite(gradient);
  if (prev_step_.empty()) prev_step_.assign(weights.size(), 0.0);
  if (prev_step_.size() != weights.size()) throw DimensionError("momentum: weight count changed between steps");
  for (std::size_t i = 0; i < weights.size(); ++i) {
    const auto r = momentum_step(weights[i], gradient[i], prev_step_[i], cfg_.learning_rate, cfg_.momentum);
    weights[i] = r.weight;
    prev_step_[i] = r.step;
  }
}

QuickPropTally quickprop_update(std::span<double> weights, std::span<const double> gradient,
                                QuickPropState& state, const OptimConfig& cfg) {
  check_lengths(weights, gradient, "quickprop");
  check_finite(gradient);
  const std::size_t n = weights.size();
  if (!state.ignited) {
    state.prev_gradient.assign(n, 0.0);
    state.prev_step.assign(n, 0.0);
  } else if (state.prev_gradient.size() != n || state.prev_step.size() != n) {
    throw DimensionError("quickprop: state holds " + std::to_string(state.prev_step.size()) +
                         " components, update has " + std::to_string(n));
  }

  QuickPropTally tally;
  const double lr = cfg.learning_rate;
  for (std::size_t i = 0; i < n; ++i) {
    const double g = gradient[i];
    const double g_prev = state.prev_gradient[i];
    const double prev = state.prev_step[i];
    double step;
    if (!state.ignited || std::abs(g) < cfg.gradient_threshold || prev == 0.0) {
      step = -lr * g;
      ++tally.fallback;
    } else {
      const auto raw = quickprop_raw_step(g, g_prev, prev, cfg.mu);
      step = raw.step;
      if (cfg.same_sign_gradient && same_sign(g, g_prev)) step -= lr * g;
      ++tally.cases[static_cast<std::size_t>(raw.kind)];
    }
    weights[i] += step;
    state.prev_gradient[i] = g;
    state.prev_step[i] = step;
  }
  state.ignited = true;
  return tally;
}

QuickProp::QuickProp(OptimConfig cfg) : cfg_(cfg) { cfg_.validate(); }

void QuickProp::step(std::span<double> weights, std::span<const double> gradient) {
  tally_ = quickprop_update(weights, gradient, state_, cfg_);
}

OptimizerKind parse_optimizer(const std::string& name) {
  if (name == "gd") return OptimizerKind::GradientDescent;
  if (name == "momentum") return OptimizerKind::Momentum;
  if (name == "quickprop") return OptimizerKind::QuickProp;
  throw ParameterError("unknown optimizer '" + name + "' (expected gd, momentum or quickprop)");
}

const char* optimizer_name(OptimizerKind kind) {
  switch (kind) {
    case OptimizerKind::GradientDescent: return "gd";
    case OptimizerKind::Momentum: return "momentum";
    case OptimizerKind::QuickProp: return "quickprop";
  }
  return "?";
}

std::unique_ptr<Optimizer> make_optimizer(OptimizerKind kind, const OptimConfig& cfg) {
  switch (kind) {
    case OptimizerKind::GradientDescent: return std::make_unique<GradientDescent>(cfg);
    case OptimizerKind::Momentum: return std::make_unique<MomentumDescent>(cfg);
    case OptimizerKind::QuickProp: return std::make_unique<QuickProp>(cfg);
  }
  throw ParameterError("unknown optimizer kind");
}

}  // namespace qpseg
