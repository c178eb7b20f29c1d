#include "qpseg/kernels.hpp"

#include <cmath>
#include <string>

#include "qpseg/errors.hpp"

namespace qpseg {
namespace {

void check_conv_shapes(const Tensor& input, const Tensor& kernels, std::size_t bias_len) {
  require_chw(input, "conv2d input");
  if (kernels.rank() != 4)
    throw DimensionError("conv2d kernels: expected [Cout,Cin,Kh,Kw], got " +
                         shape_to_string(kernels.shape()));
  if (kernels.dim(1) != input.dim(0))
    throw DimensionError("conv2d: kernel axis 1 (in channels = " + std::to_string(kernels.dim(1)) +
                         ") != input axis 0 (channels = " + std::to_string(input.dim(0)) + ")");
  if (kernels.dim(2) > input.dim(1))
    throw DimensionError("conv2d: kernel axis 2 (height = " + std::to_string(kernels.dim(2)) +
                         ") exceeds input axis 1 (height = " + std::to_string(input.dim(1)) + ")");
  if (kernels.dim(3) > input.dim(2))
    throw DimensionError("conv2d: kernel axis 3 (width = " + std::to_string(kernels.dim(3)) +
                         ") exceeds input axis 2 (width = " + std::to_string(input.dim(2)) + ")");
  if (bias_len != kernels.dim(0))
    throw DimensionError("conv2d: bias length " + std::to_string(bias_len) +
                         " != kernel axis 0 (out channels = " + std::to_string(kernels.dim(0)) + ")");
}

}  // namespace

Tensor conv2d_forward(const Tensor& input, const Tensor& kernels, std::span<const double> bias) {
  check_conv_shapes(input, kernels, bias.size());
  const std::size_t cin = input.dim(0), h = input.dim(1), w = input.dim(2);
  const std::size_t cout = kernels.dim(0), kh = kernels.dim(2), kw = kernels.dim(3);
  const std::size_t oh = h - kh + 1, ow = w - kw + 1;

  Tensor out({cout, oh, ow});
  const double* in = input.data().data();
  const double* k = kernels.data().data();
  double* o = out.data().data();
  for (std::size_t oc = 0; oc < cout; ++oc) {
    double* oplane = o + oc * oh * ow;
    for (std::size_t i = 0; i < oh * ow; ++i) oplane[i] = bias[oc];
    for (std::size_t c = 0; c < cin; ++c) {
      const double* iplane = in + c * h * w;
      const double* kplane = k + (oc * cin + c) * kh * kw;
      for (std::size_t i = 0; i < kh; ++i) {
        for (std::size_t j = 0; j < kw; ++j) {
          const double kv = kplane[i * kw + j];
          for (std::size_t y = 0; y < oh; ++y) {
            const double* irow = iplane + (y + i) * w + j;
            double* orow = oplane + y * ow;
            for (std::size_t x = 0; x < ow; ++x) orow[x] += kv * irow[x];
          }
        }
      }
    }
  }
  return out;
}

ConvGrads conv2d_backward(const Tensor& input, const Tensor& kernels, const Tensor& grad_out,
                          bool want_input_grad) {
  check_conv_shapes(input, kernels, kernels.rank() == 4 ? kernels.dim(0) : 0);
  const std::size_t cin = input.dim(0), h = input.dim(1), w = input.dim(2);
  const std::size_t cout = kernels.dim(0), kh = kernels.dim(2), kw = kernels.dim(3);
  const std::size_t oh = h - kh + 1, ow = w - kw + 1;
  const Shape expected{cout, oh, ow};
  if (grad_out.shape() != expected)
    throw DimensionError("conv2d_backward: grad_out shape " + shape_to_string(grad_out.shape()) +
                         " != forward output shape " + shape_to_string(expected));

  ConvGrads g;
  g.kernels = Tensor(kernels.shape());
  g.bias.assign(cout, 0.0);
  if (want_input_grad) g.input = Tensor(input.shape());

  const double* in = input.data().data();
  const double* k = kernels.data().data();
  const double* go = grad_out.data().data();
  double* gk = g.kernels.data().data();
  double* gi = want_input_grad ? g.input.data().data() : nullptr;

  for (std::size_t oc = 0; oc < cout; ++oc) {
    const double* gplane = go + oc * oh * ow;
    double bsum = 0.0;
    for (std::size_t i = 0; i < oh * ow; ++i) bsum += gplane[i];
    g.bias[oc] = bsum;
    for (std::size_t c = 0; c < cin; ++c) {
      const double* iplane = in + c * h * w;
      const double* kplane = k + (oc * cin + c) * kh * kw;
      double* gkplane = gk + (oc * cin + c) * kh * kw;
      double* giplane = gi ? gi + c * h * w : nullptr;
      for (std::size_t i = 0; i < kh; ++i) {
        for (std::size_t j = 0; j < kw; ++j) {
          const double kv = kplane[i * kw + j];
          double acc = 0.0;
          for (std::size_t y = 0; y < oh; ++y) {
            const double* irow = iplane + (y + i) * w + j;
            const double* grow = gplane + y * ow;
            for (std::size_t x = 0; x < ow; ++x) acc += grow[x] * irow[x];
            if (giplane) {
              double* girow = giplane + (y + i) * w + j;
              for (std::size_t x = 0; x < ow; ++x) girow[x] += grow[x] * kv;
            }
          }
          gkplane[i * kw + j] = acc;
        }
      }
    }
  }
  return g;
}

PoolResult maxpool2x2(const Tensor& input) {
  require_chw(input, "maxpool2x2 input");
  const std::size_t c = input.dim(0), h = input.dim(1), w = input.dim(2);
  if (h % 2 != 0 || w % 2 != 0)
    throw DimensionError("maxpool2x2: input height " + std::to_string(h) + " and width " +
                         std::to_string(w) + " must both be even");
  const std::size_t oh = h / 2, ow = w / 2;
  PoolResult r{Tensor({c, oh, ow}), ArgmaxMask{input.shape(), {}}};
  r.mask.winners.resize(c * oh * ow);
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t y = 0; y < oh; ++y) {
      for (std::size_t x = 0; x < ow; ++x) {
        std::size_t best = (ch * h + 2 * y) * w + 2 * x;
        for (std::size_t dy = 0; dy < 2; ++dy) {
          for (std::size_t dx = 0; dx < 2; ++dx) {
            const std::size_t idx = (ch * h + 2 * y + dy) * w + 2 * x + dx;
            if (input[idx] > input[best]) best = idx;  // strict: first occurrence wins ties
          }
        }
        const std::size_t o = (ch * oh + y) * ow + x;
        r.output[o] = input[best];
        r.mask.winners[o] = best;
      }
    }
  }
  return r;
}

Tensor maxpool2x2_backward(const ArgmaxMask& mask, const Tensor& grad_out) {
  if (grad_out.size() != mask.winners.size())
    throw DimensionError("maxpool2x2_backward: grad_out has " + std::to_string(grad_out.size()) +
                         " values, mask routes " + std::to_string(mask.winners.size()));
  Tensor gi(mask.input_shape);
  for (std::size_t o = 0; o < mask.winners.size(); ++o) gi[mask.winners[o]] += grad_out[o];
  return gi;
}

Tensor upsample_nn(const Tensor& input, std::size_t factor) {
  if (factor == 0) throw ParameterError("upsample_nn: factor must be >= 1");
  require_chw(input, "upsample_nn input");
  const std::size_t c = input.dim(0), h = input.dim(1), w = input.dim(2);
  Tensor out({c, h * factor, w * factor});
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < h * factor; ++y)
      for (std::size_t x = 0; x < w * factor; ++x) out.at(ch, y, x) = input.at(ch, y / factor, x / factor);
  return out;
}

Tensor upsample_nn_backward(const Tensor& grad_out, std::size_t factor) {
  if (factor == 0) throw ParameterError("upsample_nn_backward: factor must be >= 1");
  require_chw(grad_out, "upsample_nn_backward grad_out");
  const std::size_t c = grad_out.dim(0), h = grad_out.dim(1), w = grad_out.dim(2);
  if (h % factor != 0 || w % factor != 0)
    throw DimensionError("upsample_nn_backward: grad_out " + shape_to_string(grad_out.shape()) +
                         " is not a multiple of factor " + std::to_string(factor));
  Tensor gi({c, h / factor, w / factor});
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) gi.at(ch, y / factor, x / factor) += grad_out.at(ch, y, x);
  return gi;
}

void tanh_inplace(Tensor& t) {
  for (auto& v : t.data()) v = std::tanh(v);
}

void sigmoid_inplace(Tensor& t) {
  for (auto& v : t.data()) v = 1.0 / (1.0 + std::exp(-v));
}

Tensor tanh_backward(const Tensor& output, const Tensor& grad_out) {
  if (output.shape() != grad_out.shape())
    throw DimensionError("tanh_backward: shapes " + shape_to_string(output.shape()) + " and " +
                         shape_to_string(grad_out.shape()) + " differ");
  Tensor g(output.shape());
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = grad_out[i] * (1.0 - output[i] * output[i]);
  return g;
}

Tensor sigmoid_backward(const Tensor& output, const Tensor& grad_out) {
  if (output.shape() != grad_out.shape())
    throw DimensionError("sigmoid_backward: shapes " + shape_to_string(output.shape()) + " and " +
                         shape_to_string(grad_out.shape()) + " differ");
  Tensor g(output.shape());
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = grad_out[i] * output[i] * (1.0 - output[i]);
  return g;
}

}  // namespace qpseg
