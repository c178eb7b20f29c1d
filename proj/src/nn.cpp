#include "qpseg/nn.hpp"

#include <atomic>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "qpseg/errors.hpp"

namespace qpseg {
namespace {

std::uint64_t next_generation() {
  static std::atomic<std::uint64_t> counter{0};
  return ++counter;
}

std::string layer_label(std::size_t index, const LayerSpec& layer) {
  return "layer " + std::to_string(index) + " (" + layer_kind_name(layer.kind) + ")";
}

}  // namespace

const char* layer_kind_name(LayerKind kind) {
  switch (kind) {
    case LayerKind::Conv: return "conv";
    case LayerKind::MaxPool: return "maxpool";
    case LayerKind::Upsample: return "upsample";
    case LayerKind::Tanh: return "tanh";
    case LayerKind::Sigmoid: return "sigmoid";
  }
  return "?";
}

LayerKind parse_layer_kind(const std::string& name) {
  if (name == "conv") return LayerKind::Conv;
  if (name == "maxpool") return LayerKind::MaxPool;
  if (name == "upsample") return LayerKind::Upsample;
  if (name == "tanh") return LayerKind::Tanh;
  if (name == "sigmoid") return LayerKind::Sigmoid;
  throw FormatError("unknown layer kind '" + name + "'");
}

void validate(const NetworkSpec& spec) {
  if (spec.input_channels == 0) throw ParameterError("network spec: input_channels must be >= 1");
  if (spec.num_classes == 0) throw ParameterError("network spec: num_classes must be >= 1");
  const LayerSpec* last_conv = nullptr;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const auto& l = spec.layers[i];
    if (l.kind == LayerKind::Conv) {
      if (l.out_channels == 0 || l.kernel_h == 0 || l.kernel_w == 0)
        throw ParameterError("network spec: " + layer_label(i, l) + " needs out_channels and kernel dims >= 1");
      last_conv = &l;
    } else if (l.kind == LayerKind::Upsample && l.factor == 0) {
      throw ParameterError("network spec: " + layer_label(i, l) + " needs factor >= 1");
    }
  }
  if (last_conv && last_conv->out_channels != spec.num_classes)
    throw ParameterError("network spec: final conv has " + std::to_string(last_conv->out_channels) +
                         " channels, expected num_classes = " + std::to_string(spec.num_classes));
}

Shape output_shape(const NetworkSpec& spec, std::size_t h, std::size_t w) {
  std::size_t c = spec.input_channels;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const auto& l = spec.layers[i];
    switch (l.kind) {
      case LayerKind::Conv:
        if (l.kernel_h > h || l.kernel_w > w)
          throw DimensionError("network: spatial size " + std::to_string(h) + "x" + std::to_string(w) +
                               " collapses below 1 at " + layer_label(i, l));
        h = h - l.kernel_h + 1;
        w = w - l.kernel_w + 1;
        c = l.out_channels;
        break;
      case LayerKind::MaxPool:
        if (h % 2 != 0 || w % 2 != 0)
          throw DimensionError("network: odd spatial size " + std::to_string(h) + "x" + std::to_string(w) +
                               " at " + layer_label(i, l));
        h /= 2;
        w /= 2;
        break;
      case LayerKind::Upsample:
        h *= l.factor;
        w *= l.factor;
        break;
      case LayerKind::Tanh:
      case LayerKind::Sigmoid:
        break;
    }
  }
  return {c, h, w};
}

std::size_t min_input_size(const NetworkSpec& spec) {
  for (std::size_t s = 1; s <= 4096; ++s) {
    try {
      output_shape(spec, s, s);
      return s;
    } catch (const DimensionError&) {
    }
  }
  throw DimensionError("network: no square input up to 4096 produces a valid output");
}

std::size_t count_parameters(const NetworkSpec& spec) {
  std::size_t c = spec.input_channels, total = 0;
  for (const auto& l : spec.layers) {
    if (l.kind != LayerKind::Conv) continue;
    total += l.out_channels * c * l.kernel_h * l.kernel_w + l.out_channels;
    c = l.out_channels;
  }
  return total;
}

NetworkSpec build_toy_net() {
  return NetworkSpec{1,
                     {LayerSpec::conv(2, 7, 7), LayerSpec::tanh(), LayerSpec::conv1x1(3), LayerSpec::sigmoid()},
                     3};
}

NetworkSpec build_facade_net(std::size_t k, std::size_t l) {
  if (k < 1) throw ParameterError("build_facade_net: k must be >= 1");
  using D = FacadeDims;
  const std::size_t fc = D::fc_per_k * k;
  NetworkSpec spec;
  spec.input_channels = D::input_channels;
  spec.num_classes = D::num_classes;
  spec.layers = {
      LayerSpec::conv(D::conv1_filters, D::conv1_kernel, D::conv1_kernel), LayerSpec::tanh(),
      LayerSpec::conv(k, D::conv2_kernel, D::conv2_kernel),                LayerSpec::tanh(),
      LayerSpec::conv(D::conv3_filters, D::conv3_kernel, D::conv3_kernel), LayerSpec::tanh(),
      LayerSpec::conv1x1(fc),                                              LayerSpec::tanh(),
  };
  for (std::size_t i = 0; i < l; ++i) {
    spec.layers.push_back(LayerSpec::conv1x1(fc));
    spec.layers.push_back(LayerSpec::tanh());
  }
  spec.layers.push_back(LayerSpec::conv1x1(D::num_classes));
  spec.layers.push_back(LayerSpec::sigmoid());
  return spec;
}

// ---------------------------------------------------------------------------

Network::Network(NetworkSpec spec) : spec_(std::move(spec)) {
  validate(spec_);
  slot_of_layer_.assign(spec_.layers.size(), std::nullopt);
  std::size_t c = spec_.input_channels, offset = 0;
  for (std::size_t i = 0; i < spec_.layers.size(); ++i) {
    const auto& l = spec_.layers[i];
    if (l.kind != LayerKind::Conv) continue;
    ConvSlot s;
    s.layer = i;
    s.in_channels = c;
    s.kernel_offset = offset;
    offset += l.out_channels * c * l.kernel_h * l.kernel_w;
    s.bias_offset = offset;
    offset += l.out_channels;
    slot_of_layer_[i] = slots_.size();
    slots_.push_back(s);
    c = l.out_channels;
  }
  weights_.assign(offset, 0.0);
  touch();
}

Network::Network(NetworkSpec spec, std::vector<double> weights) : Network(std::move(spec)) {
  set_weights(std::move(weights));
}

std::span<double> Network::mutable_weights() {
  touch();
  return weights_;
}

void Network::set_weights(std::vector<double> weights) {
  if (weights.size() != weights_.size())
    throw DimensionError("network: expected " + std::to_string(weights_.size()) + " weights, got " +
                         std::to_string(weights.size()));
  weights_ = std::move(weights);
  touch();
}

void Network::touch() { generation_ = next_generation(); }

void Network::init_uniform(Rng& rng) {
  for (const auto& s : slots_) {
    const auto& l = spec_.layers[s.layer];
    const std::size_t fan_in = s.in_channels * l.kernel_h * l.kernel_w;
    const double r = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (std::size_t i = s.kernel_offset; i < s.bias_offset; ++i) weights_[i] = rng.uniform(-r, r);
    for (std::size_t i = s.bias_offset; i < s.bias_offset + l.out_channels; ++i) weights_[i] = 0.0;
  }
  touch();
}

const ConvSlot* Network::conv_slot(std::size_t layer) const {
  const auto& s = slot_of_layer_.at(layer);
  return s ? &slots_[*s] : nullptr;
}

// ---------------------------------------------------------------------------

namespace {

Tensor kernel_tensor(const Network& net, const ConvSlot& s) {
  const auto& l = net.spec().layers[s.layer];
  auto w = net.weights();
  return Tensor({l.out_channels, s.in_channels, l.kernel_h, l.kernel_w},
                std::vector<double>(w.begin() + static_cast<std::ptrdiff_t>(s.kernel_offset),
                                    w.begin() + static_cast<std::ptrdiff_t>(s.bias_offset)));
}

std::span<const double> bias_span(const Network& net, const ConvSlot& s) {
  return net.weights().subspan(s.bias_offset, net.spec().layers[s.layer].out_channels);
}

Tensor apply_layer(const Network& net, std::size_t i, const Tensor& x, std::optional<ArgmaxMask>* mask) {
  const auto& l = net.spec().layers[i];
  switch (l.kind) {
    case LayerKind::Conv: {
      const ConvSlot& s = *net.conv_slot(i);
      if (x.dim(1) < l.kernel_h || x.dim(2) < l.kernel_w)
        throw DimensionError("forward: spatial size " + std::to_string(x.dim(1)) + "x" + std::to_string(x.dim(2)) +
                             " collapses below 1 at " + layer_label(i, l));
      return conv2d_forward(x, kernel_tensor(net, s), bias_span(net, s));
    }
    case LayerKind::MaxPool: {
      if (x.dim(1) % 2 != 0 || x.dim(2) % 2 != 0)
        throw DimensionError("forward: odd spatial size " + std::to_string(x.dim(1)) + "x" +
                             std::to_string(x.dim(2)) + " at " + layer_label(i, l));
      auto r = maxpool2x2(x);
      if (mask) *mask = std::move(r.mask);
      return std::move(r.output);
    }
    case LayerKind::Upsample:
      return upsample_nn(x, l.factor);
    case LayerKind::Tanh: {
      Tensor y = x;
      tanh_inplace(y);
      return y;
    }
    case LayerKind::Sigmoid: {
      Tensor y = x;
      sigmoid_inplace(y);
      return y;
    }
  }
  throw StateError("forward: unknown layer kind");
}

void check_input(const Network& net, const Tensor& input) {
  require_chw(input, "forward input");
  if (input.dim(0) != net.spec().input_channels)
    throw DimensionError("forward: input axis 0 has " + std::to_string(input.dim(0)) +
                         " channels, network expects " + std::to_string(net.spec().input_channels));
}

}  // namespace

ForwardResult forward(const Network& net, const Tensor& input) {
  check_input(net, input);
  ForwardResult r;
  const auto n = net.spec().layers.size();
  r.cache.generation = net.generation();
  r.cache.activations.reserve(n + 1);
  r.cache.masks.assign(n, std::nullopt);
  r.cache.activations.push_back(input);
  for (std::size_t i = 0; i < n; ++i)
    r.cache.activations.push_back(apply_layer(net, i, r.cache.activations.back(), &r.cache.masks[i]));
  r.scores = r.cache.activations.back();
  return r;
}

Tensor predict(const Network& net, const Tensor& input) {
  check_input(net, input);
  Tensor x = input;
  for (std::size_t i = 0; i < net.spec().layers.size(); ++i) x = apply_layer(net, i, x, nullptr);
  return x;
}

double quadratic_loss(const Tensor& scores, const Tensor& target) {
  if (scores.shape() != target.shape())
    throw DimensionError("quadratic_loss: scores " + shape_to_string(scores.shape()) + " vs target " +
                         shape_to_string(target.shape()));
  require_chw(scores, "quadratic_loss scores");
  const double pixels = static_cast<double>(scores.dim(1) * scores.dim(2));
  double sum = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const double d = scores[i] - target[i];
    sum += 0.5 * d * d;
  }
  return sum / pixels;
}

std::vector<double> backward(const Network& net, const ForwardCache& cache, const Tensor& target) {
  if (cache.activations.empty()) throw StateError("backward: empty forward cache");
  const Tensor& scores = cache.activations.back();
  if (scores.shape() != target.shape())
    throw DimensionError("backward: scores " + shape_to_string(scores.shape()) + " vs target " +
                         shape_to_string(target.shape()));
  const double inv_pixels = 1.0 / static_cast<double>(scores.dim(1) * scores.dim(2));
  Tensor grad(scores.shape());
  for (std::size_t i = 0; i < grad.size(); ++i) grad[i] = (scores[i] - target[i]) * inv_pixels;
  return backward_from(net, cache, grad);
}

std::vector<double> backward_from(const Network& net, const ForwardCache& cache, const Tensor& grad_scores) {
  if (cache.generation != net.generation())
    throw StateError("backward: forward cache is stale (generation " + std::to_string(cache.generation) +
                     ", network is at " + std::to_string(net.generation()) + ")");
  const auto& layers = net.spec().layers;
  if (cache.activations.size() != layers.size() + 1)
    throw StateError("backward: forward cache does not match the network depth");
  if (grad_scores.shape() != cache.activations.back().shape())
    throw DimensionError("backward: upstream gradient " + shape_to_string(grad_scores.shape()) +
                         " vs scores " + shape_to_string(cache.activations.back().shape()));

  std::vector<double> gradient(net.parameter_count(), 0.0);
  Tensor grad = grad_scores;
  // Earliest layer whose input gradient is still needed.
  std::size_t first_param = layers.size();
  for (std::size_t i = 0; i < layers.size(); ++i)
    if (layers[i].kind == LayerKind::Conv) {
      first_param = i;
      break;
    }

  for (std::size_t i = layers.size(); i-- > 0;) {
    const auto& l = layers[i];
    const Tensor& in = cache.activations[i];
    const Tensor& out = cache.activations[i + 1];
    const bool need_input = i > first_param;
    switch (l.kind) {
      case LayerKind::Conv: {
        const ConvSlot& s = *net.conv_slot(i);
        auto g = conv2d_backward(in, kernel_tensor(net, s), grad, need_input);
        std::copy(g.kernels.values().begin(), g.kernels.values().end(),
                  gradient.begin() + static_cast<std::ptrdiff_t>(s.kernel_offset));
        std::copy(g.bias.begin(), g.bias.end(), gradient.begin() + static_cast<std::ptrdiff_t>(s.bias_offset));
        if (need_input) grad = std::move(g.input);
        break;
      }
      case LayerKind::MaxPool:
        if (!cache.masks[i]) throw StateError("backward: missing pooling mask for " + layer_label(i, l));
        grad = maxpool2x2_backward(*cache.masks[i], grad);
        break;
      case LayerKind::Upsample:
        grad = upsample_nn_backward(grad, l.factor);
        break;
      case LayerKind::Tanh:
        grad = tanh_backward(out, grad);
        break;
      case LayerKind::Sigmoid:
        grad = sigmoid_backward(out, grad);
        break;
    }
    if (!need_input) break;
  }
  return gradient;
}

// ---------------------------------------------------------------------------

namespace {

nlohmann::json spec_to_json(const NetworkSpec& spec) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : spec.layers) {
    nlohmann::json j{{"kind", layer_kind_name(l.kind)}};
    if (l.kind == LayerKind::Conv) {
      j["out_channels"] = l.out_channels;
      j["kernel_h"] = l.kernel_h;
      j["kernel_w"] = l.kernel_w;
    } else if (l.kind == LayerKind::Upsample) {
      j["factor"] = l.factor;
    }
    layers.push_back(std::move(j));
  }
  return {{"input_channels", spec.input_channels}, {"num_classes", spec.num_classes}, {"layers", layers}};
}

NetworkSpec spec_from_json(const nlohmann::json& j) {
  NetworkSpec spec;
  spec.input_channels = j.at("input_channels").get<std::size_t>();
  spec.num_classes = j.at("num_classes").get<std::size_t>();
  for (const auto& lj : j.at("layers")) {
    LayerSpec l;
    l.kind = parse_layer_kind(lj.at("kind").get<std::string>());
    if (l.kind == LayerKind::Conv) {
      l.out_channels = lj.at("out_channels").get<std::size_t>();
      l.kernel_h = lj.at("kernel_h").get<std::size_t>();
      l.kernel_w = lj.at("kernel_w").get<std::size_t>();
    } else if (l.kind == LayerKind::Upsample) {
      l.factor = lj.at("factor").get<std::size_t>();
    }
    spec.layers.push_back(l);
  }
  return spec;
}

}  // namespace

std::string model_to_json(const Network& net) {
  nlohmann::json doc{{"format", "qpseg-model"},
                     {"version", 1},
                     {"spec", spec_to_json(net.spec())},
                     {"weights", std::vector<double>(net.weights().begin(), net.weights().end())}};
  return doc.dump();
}

Network model_from_json(const std::string& text) {
  try {
    const auto doc = nlohmann::json::parse(text);
    if (doc.value("format", "") != "qpseg-model") throw FormatError("model: missing format tag 'qpseg-model'");
    std::vector<double> weights;
    for (const auto& v : doc.at("weights")) {
      if (!v.is_number()) throw FormatError("model: non-numeric weight entry");
      weights.push_back(v.get<double>());
    }
    return Network(spec_from_json(doc.at("spec")), std::move(weights));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("model: ") + e.what());
  }
}

void save_model(const Network& net, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << model_to_json(net) << '\n';
  if (!out) throw IoError("write to '" + path + "' failed");
}

Network load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open model file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return model_from_json(ss.str());
}

}  // namespace qpseg
