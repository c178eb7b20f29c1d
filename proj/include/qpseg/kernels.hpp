#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "qpseg/tensor.hpp"

namespace qpseg {

// Valid (unpadded, stride 1) cross-correlation plus a per-output-channel bias.
//   out[o,y,x] = bias[o] + sum_{c,i,j} input[c,y+i,x+j] * kernels[o,c,i,j]
Tensor conv2d_forward(const Tensor& input, const Tensor& kernels, std::span<const double> bias);

struct ConvGrads {
  Tensor input;    // empty when not requested
  Tensor kernels;
  std::vector<double> bias;
};

ConvGrads conv2d_backward(const Tensor& input, const Tensor& kernels, const Tensor& grad_out,
                          bool want_input_grad = true);

// Flat input index of the winning element for every output element.
struct ArgmaxMask {
  Shape input_shape;
  std::vector<std::size_t> winners;
};

struct PoolResult {
  Tensor output;
  ArgmaxMask mask;
};

// 2x2 max pooling with stride 2. Ties go to the first element in row-major order.
PoolResult maxpool2x2(const Tensor& input);
Tensor maxpool2x2_backward(const ArgmaxMask& mask, const Tensor& grad_out);

// Nearest-neighbour upsampling: out[c,y,x] = in[c,y/f,x/f].
Tensor upsample_nn(const Tensor& input, std::size_t factor);
// Sums each f x f block of grad_out.
Tensor upsample_nn_backward(const Tensor& grad_out, std::size_t factor);

void tanh_inplace(Tensor& t);
void sigmoid_inplace(Tensor& t);
// Given the activation output y and dL/dy, returns dL/dx.
Tensor tanh_backward(const Tensor& output, const Tensor& grad_out);
Tensor sigmoid_backward(const Tensor& output, const Tensor& grad_out);

}  // namespace qpseg
