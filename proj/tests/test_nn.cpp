#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <filesystem>

#include "oracles.hpp"
#include "qpseg/errors.hpp"
#include "qpseg/nn.hpp"

namespace qpseg {
namespace {

using testing::central_differences;
using testing::compare_gradients;
using testing::random_tensor;

Tensor one_hot_target(std::size_t k, std::size_t h, std::size_t w, Rng& rng) {
  Tensor t({k, h, w});
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) t.at(rng.below(k), y, x) = 1.0;
  return t;
}

// Returns the number of mismatching components.
std::size_t gradient_check(const NetworkSpec& spec, std::size_t side, std::uint64_t seed) {
  Rng rng(seed);
  Network net(spec);
  net.init_uniform(rng);
  auto input = random_tensor({spec.input_channels, side, side}, rng, 0.0, 1.0);
  const auto out = output_shape(spec, side, side);
  auto target = one_hot_target(spec.num_classes, out[1], out[2], rng);
  auto fr = forward(net, input);
  const auto analytic = backward(net, fr.cache, target);
  const auto w = std::vector<double>(net.weights().begin(), net.weights().end());
  const auto numeric =
      central_differences([&](std::span<const double> v) { return testing::loss_at(spec, v, input, target); }, w);
  const auto bad = compare_gradients(analytic, numeric, 1e-4, 1e-8);
  for (std::size_t i = 0; i < std::min<std::size_t>(bad.size(), 5); ++i)
    ADD_FAILURE() << "component " << bad[i].index << ": analytic " << bad[i].analytic << " numeric " << bad[i].numeric;
  return bad.size();
}

TEST(CountParameters, ToyNetHas109) {
  EXPECT_EQ(count_parameters(build_toy_net()), 109u);
}

TEST(CountParameters, EdgeCases) {
  EXPECT_EQ(count_parameters(NetworkSpec{1, {}, 1}), 0u);
  EXPECT_EQ(count_parameters(NetworkSpec{1, {LayerSpec::conv1x1(1)}, 1}), 2u);
}

TEST(BuildToyNet, LayersAndOutputSize) {
  const auto spec = build_toy_net();
  std::vector<LayerKind> kinds;
  for (const auto& l : spec.layers) kinds.push_back(l.kind);
  EXPECT_EQ(kinds, (std::vector<LayerKind>{LayerKind::Conv, LayerKind::Tanh, LayerKind::Conv, LayerKind::Sigmoid}));
  EXPECT_EQ(output_shape(spec, 7, 7), (Shape{3, 1, 1}));
  EXPECT_EQ(min_input_size(spec), 7u);
  Network net(spec);
  EXPECT_EQ(forward(net, Tensor({1, 7, 7})).scores.shape(), (Shape{3, 1, 1}));
}

TEST(BuildFacadeNet, LayerKinds) {
  const auto spec = build_facade_net(2, 0);
  std::vector<LayerKind> kinds;
  for (const auto& l : spec.layers) kinds.push_back(l.kind);
  using K = LayerKind;
  EXPECT_EQ(kinds, (std::vector<K>{K::Conv, K::Tanh, K::Conv, K::Tanh, K::Conv, K::Tanh, K::Conv, K::Tanh, K::Conv,
                                   K::Sigmoid}));
  EXPECT_EQ(spec.layers[2].out_channels, 2u);   // conv2 = k
  EXPECT_EQ(spec.layers[6].out_channels, 24u);  // FC1 = 12k
  EXPECT_EQ(spec.layers[6].kernel_h, 1u);
  EXPECT_EQ(spec.layers[8].kernel_w, 1u);
  EXPECT_EQ(spec.num_classes, 9u);
  EXPECT_EQ(output_shape(spec, 11, 11), (Shape{9, 1, 1}));
  EXPECT_THROW(build_facade_net(0, 0), ParameterError);
}

TEST(BuildFacadeNet, ParameterCountIsAffineInK) {
  for (std::size_t k = 1; k <= 30; ++k) EXPECT_EQ(count_parameters(build_facade_net(k, 0)), 1241 + 857 * k) << k;
  const auto c = [](std::size_t k) { return count_parameters(build_facade_net(k, 0)); };
  EXPECT_EQ(c(12) - c(7), c(7) - c(2));
}

TEST(BuildFacadeNet, RepeatedLayerAddsConstantCount) {
  const std::size_t k = FacadeDims::layer_scaling_k;
  EXPECT_EQ(build_facade_net(k, 0).layers[6].out_channels, 192u);
  for (std::size_t l = 0; l < 6; ++l) {
    EXPECT_EQ(count_parameters(build_facade_net(k, l + 1)) - count_parameters(build_facade_net(k, l)), 37056u);
    EXPECT_EQ(count_parameters(build_facade_net(k, l)), facade_parameter_count(k, l));
  }
}

TEST(Validate, FinalConvMustMatchClasses) {
  EXPECT_THROW(Network(NetworkSpec{1, {LayerSpec::conv1x1(2)}, 3}), ParameterError);
  EXPECT_THROW(Network(NetworkSpec{1, {LayerSpec::conv(3, 0, 1)}, 3}), ParameterError);
}

TEST(Forward, CollapseNamesTheLayer) {
  const auto spec = build_toy_net();
  try {
    output_shape(spec, 5, 9);
    FAIL();
  } catch (const DimensionError& e) {
    EXPECT_NE(std::string(e.what()).find("layer 0"), std::string::npos);
  }
  Network net(spec);
  EXPECT_THROW(forward(net, Tensor({1, 6, 6})), DimensionError);
  EXPECT_THROW(forward(net, Tensor({2, 7, 7})), DimensionError);
}

TEST(Forward, ZeroWeightsGiveHalfEverywhere) {
  Network net(build_toy_net());
  Rng rng(1);
  auto scores = forward(net, random_tensor({1, 9, 8}, rng)).scores;
  for (double v : scores.values()) EXPECT_EQ(v, 0.5);
}

TEST(Forward, IdentityOneByOneConv) {
  Network net(NetworkSpec{1, {LayerSpec::conv1x1(1)}, 1}, {1.0, 0.0});
  Rng rng(2);
  auto in = random_tensor({1, 4, 5}, rng);
  EXPECT_EQ(forward(net, in).scores, in);
}

TEST(Forward, DeterministicBits) {
  auto run = [] {
    Rng rng(77);
    Network net(build_toy_net());
    net.init_uniform(rng);
    auto in = random_tensor({1, 12, 12}, rng);
    return forward(net, in).scores;
  };
  const auto a = run(), b = run();
  ASSERT_EQ(a.size(), b.size());
  EXPECT_EQ(std::memcmp(a.values().data(), b.values().data(), a.size() * sizeof(double)), 0);
}

TEST(Forward, SigmoidScoresStrictlyInsideUnitInterval) {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    Network net(build_facade_net(2, 0));
    net.init_uniform(rng);
    auto in = random_tensor({3, 14, 14}, rng, 0.0, 1.0);
    auto scores = predict(net, in);
    for (double v : scores.values()) {
      EXPECT_GT(v, 0.0);
      EXPECT_LT(v, 1.0);
    }
    EXPECT_LE(quadratic_loss(scores, one_hot_target(9, 4, 4, rng)), 9.0 / 2.0);
  }
}

TEST(InitUniform, RangeAndZeroBias) {
  Rng rng(4);
  Network net(build_toy_net());
  net.init_uniform(rng);
  const auto w = net.weights();
  for (std::size_t i = 0; i < 98; ++i) EXPECT_LE(std::abs(w[i]), 1.0 / 7.0);
  EXPECT_EQ(w[98], 0.0);
  EXPECT_EQ(w[99], 0.0);
  for (std::size_t i = 100; i < 106; ++i) EXPECT_LE(std::abs(w[i]), 1.0 / std::sqrt(2.0));
  for (std::size_t i = 106; i < 109; ++i) EXPECT_EQ(w[i], 0.0);
}

TEST(QuadraticLoss, Examples) {
  Tensor s({2, 1, 1}, std::vector<double>{1, 0});
  Tensor t({2, 1, 1}, std::vector<double>{0, 1});
  EXPECT_EQ(quadratic_loss(s, s), 0.0);
  EXPECT_EQ(quadratic_loss(s, t), 1.0);
  Tensor s2({2, 1, 2}, std::vector<double>{1, 0, 0, 1});
  Tensor t2({2, 1, 2}, std::vector<double>{0, 0, 1, 1});
  EXPECT_EQ(quadratic_loss(s2, t2), 0.5);
  EXPECT_THROW(quadratic_loss(s, s2), DimensionError);
}

TEST(Backward, ZeroAtTheTarget) {
  Network net(build_toy_net());
  Rng rng(5);
  auto in = random_tensor({1, 7, 7}, rng);
  auto fr = forward(net, in);
  auto g = backward(net, fr.cache, fr.scores);
  for (double v : g) EXPECT_EQ(v, 0.0);
}

TEST(Backward, BiasGradientIsSumOfDeltas) {
  // Conv(1->1, 2x2) on a 3x3 input: a 2x2 map of upstream deltas.
  Network net(NetworkSpec{1, {LayerSpec::conv(1, 2, 2)}, 1}, {0.1, 0.2, 0.3, 0.4, 0.0});
  Rng rng(6);
  auto fr = forward(net, random_tensor({1, 3, 3}, rng));
  Tensor deltas({1, 2, 2}, std::vector<double>{0.5, -1.0, 2.0, 0.25});
  auto g = backward_from(net, fr.cache, deltas);
  EXPECT_DOUBLE_EQ(g[4], 1.75);
}

TEST(Backward, StaleCacheIsRejected) {
  Network net(build_toy_net());
  Rng rng(7);
  auto fr = forward(net, random_tensor({1, 7, 7}, rng));
  net.mutable_weights()[0] += 1.0;
  EXPECT_THROW(backward(net, fr.cache, fr.scores), StateError);
}

TEST(GradientCheck, ToyNet) {
  for (std::uint64_t s = 0; s < 5; ++s) EXPECT_EQ(gradient_check(build_toy_net(), 9, 100 + s), 0u);
}

TEST(GradientCheck, FacadeNets) {
  for (std::size_t k = 1; k <= 3; ++k)
    for (std::size_t l = 0; l <= 1; ++l) EXPECT_EQ(gradient_check(build_facade_net(k, l), 12, 10 * k + l), 0u);
}

TEST(GradientCheck, PoolingAndUpsampling) {
  NetworkSpec spec{1,
                   {LayerSpec::conv(2, 3, 3), LayerSpec::tanh(), LayerSpec::maxpool(), LayerSpec::upsample(2),
                    LayerSpec::conv1x1(2), LayerSpec::sigmoid()},
                   2};
  for (std::uint64_t s = 0; s < 5; ++s) EXPECT_EQ(gradient_check(spec, 6, 300 + s), 0u);
}

TEST(ModelJson, RoundTripIsBitExact) {
  Rng rng(8);
  Network net(build_facade_net(2, 1));
  net.init_uniform(rng);
  for (auto& w : net.mutable_weights()) w += rng.uniform(-1e-3, 1e-3);
  const auto back = model_from_json(model_to_json(net));
  EXPECT_EQ(back.spec(), net.spec());
  ASSERT_EQ(back.parameter_count(), net.parameter_count());
  EXPECT_EQ(std::memcmp(back.weights().data(), net.weights().data(), net.parameter_count() * sizeof(double)), 0);

  const auto path = (std::filesystem::temp_directory_path() / "qpseg_model_test.json").string();
  save_model(net, path);
  const auto loaded = load_model(path);
  EXPECT_EQ(std::memcmp(loaded.weights().data(), net.weights().data(), net.parameter_count() * sizeof(double)), 0);
  std::filesystem::remove(path);
}

TEST(ModelJson, MalformedDocuments) {
  EXPECT_THROW(model_from_json("{"), FormatError);
  EXPECT_THROW(model_from_json(R"({"format":"other"})"), FormatError);
  EXPECT_THROW(model_from_json(
                   R"({"format":"qpseg-model","spec":{"input_channels":1,"num_classes":1,"layers":[{"kind":"conv","out_channels":1,"kernel_h":1,"kernel_w":1}]},"weights":[1]})"),
               DimensionError);
  EXPECT_THROW(load_model("/nonexistent/model.json"), IoError);
}

}  // namespace
}  // namespace qpseg
