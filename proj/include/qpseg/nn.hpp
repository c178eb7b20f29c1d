#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "qpseg/kernels.hpp"
#include "qpseg/rng.hpp"
#include "qpseg/tensor.hpp"

namespace qpseg {

enum class LayerKind { Conv, MaxPool, Upsample, Tanh, Sigmoid };

const char* layer_kind_name(LayerKind kind);
LayerKind parse_layer_kind(const std::string& name);

struct LayerSpec {
  LayerKind kind = LayerKind::Tanh;
  std::size_t out_channels = 0;  // Conv
  std::size_t kernel_h = 0;      // Conv
  std::size_t kernel_w = 0;      // Conv
  std::size_t factor = 0;        // Upsample

  static LayerSpec conv(std::size_t out, std::size_t kh, std::size_t kw) {
    return {LayerKind::Conv, out, kh, kw, 0};
  }
  static LayerSpec conv1x1(std::size_t out) { return conv(out, 1, 1); }
  static LayerSpec maxpool() { return {LayerKind::MaxPool, 0, 0, 0, 0}; }
  static LayerSpec upsample(std::size_t f) { return {LayerKind::Upsample, 0, 0, 0, f}; }
  static LayerSpec tanh() { return {LayerKind::Tanh, 0, 0, 0, 0}; }
  static LayerSpec sigmoid() { return {LayerKind::Sigmoid, 0, 0, 0, 0}; }

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

struct NetworkSpec {
  std::size_t input_channels = 1;
  std::vector<LayerSpec> layers;
  std::size_t num_classes = 0;

  friend bool operator==(const NetworkSpec&, const NetworkSpec&) = default;
};

// Checks structural invariants (conv dims, final conv width == num_classes).
void validate(const NetworkSpec& spec);

// Output shape [K, H', W'] for an input of h x w. Throws DimensionError naming
// the first layer at which the spatial size collapses or pooling gets an odd size.
Shape output_shape(const NetworkSpec& spec, std::size_t h, std::size_t w);

// Smallest square input side for which the network produces a valid output.
std::size_t min_input_size(const NetworkSpec& spec);

// Sum over conv layers of out*in*kh*kw + out.
std::size_t count_parameters(const NetworkSpec& spec);

// Conv(1->2, 7x7), Tanh, Conv(2->3, 1x1), Sigmoid: 109 parameters, 7x7 input -> 1x1x3.
NetworkSpec build_toy_net();

// Fixed widths of the facade-style network. Filter scaling varies conv2 (k
// filters) and FC1 (12k kernels); everything else is fixed.
struct FacadeDims {
  static constexpr std::size_t input_channels = 3;
  static constexpr std::size_t num_classes = 9;
  static constexpr std::size_t conv1_filters = 16;
  static constexpr std::size_t conv1_kernel = 5;
  static constexpr std::size_t conv2_kernel = 5;
  static constexpr std::size_t conv3_filters = 16;
  static constexpr std::size_t conv3_kernel = 3;
  static constexpr std::size_t fc_per_k = 12;
  // k at which FC1 has 192 kernels, the width used for layer scaling.
  static constexpr std::size_t layer_scaling_k = 16;
};

// Conv(3->16,5x5) Tanh, Conv(16->k,5x5) Tanh, Conv(k->16,3x3) Tanh,
// FC1 = Conv(16->12k,1x1) Tanh, l x [Conv(12k->12k,1x1) Tanh], FC2 = Conv(12k->9,1x1) Sigmoid.
NetworkSpec build_facade_net(std::size_t k, std::size_t l);

// Closed form of count_parameters(build_facade_net(k, 0)).
constexpr std::size_t kFacadeCountIntercept = 1241;
constexpr std::size_t kFacadeCountSlope = 857;
constexpr std::size_t facade_parameter_count(std::size_t k, std::size_t l = 0) {
  const std::size_t fc = FacadeDims::fc_per_k * k;
  return kFacadeCountIntercept + kFacadeCountSlope * k + l * (fc * fc + fc);
}

struct ConvSlot {
  std::size_t layer = 0;
  std::size_t in_channels = 0;
  std::size_t kernel_offset = 0;
  std::size_t bias_offset = 0;
};

/// A network specification together with its flat weight vector.
///
/// Weights are laid out in layer order, each conv contributing its kernels
/// (row-major [out,in,kh,kw]) followed by its biases. Every call that hands
/// out mutable weights bumps the generation, which invalidates forward caches.
class Network {
 public:
  explicit Network(NetworkSpec spec);
  Network(NetworkSpec spec, std::vector<double> weights);

  const NetworkSpec& spec() const { return spec_; }
  std::span<const double> weights() const { return weights_; }
  std::span<double> mutable_weights();
  void set_weights(std::vector<double> weights);
  std::size_t parameter_count() const { return weights_.size(); }
  std::uint64_t generation() const { return generation_; }

  // Uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)], biases zero.
  void init_uniform(Rng& rng);

  // Conv slot for layer index, or nullptr for parameter-free layers.
  const ConvSlot* conv_slot(std::size_t layer) const;
  const std::vector<ConvSlot>& conv_slots() const { return slots_; }

 private:
  void touch();

  NetworkSpec spec_;
  std::vector<double> weights_;
  std::vector<ConvSlot> slots_;
  std::vector<std::optional<std::size_t>> slot_of_layer_;
  std::uint64_t generation_ = 0;
};

struct ForwardCache {
  std::uint64_t generation = 0;
  std::vector<Tensor> activations;  // activations[0] is the input, [i+1] the output of layer i
  std::vector<std::optional<ArgmaxMask>> masks;
};

struct ForwardResult {
  Tensor scores;
  ForwardCache cache;
};

ForwardResult forward(const Network& net, const Tensor& input);
// Forward pass without keeping intermediate activations.
Tensor predict(const Network& net, const Tensor& input);

// (1 / pixels) * sum_pixels 0.5 * sum_c (score - target)^2
double quadratic_loss(const Tensor& scores, const Tensor& target);

// Gradient of the quadratic loss with respect to the flat weight vector.
std::vector<double> backward(const Network& net, const ForwardCache& cache, const Tensor& target);
// Backpropagates an arbitrary upstream gradient dL/dscores.
std::vector<double> backward_from(const Network& net, const ForwardCache& cache, const Tensor& grad_scores);

// Model documents: {"format", "spec", "weights"}. Doubles are written in
// shortest round-trip decimal form, so a load recovers every weight bit-exactly.
std::string model_to_json(const Network& net);
Network model_from_json(const std::string& text);
void save_model(const Network& net, const std::string& path);
Network load_model(const std::string& path);

}  // namespace qpseg
