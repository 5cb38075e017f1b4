/* Copyright 2026 The DefXAttn Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/
#ifndef DEFXATTN_OPS_HPP_
#define DEFXATTN_OPS_HPP_

#include <cstdint>
#include <vector>

#include "defxattn/tensor.hpp"

namespace defxattn {

// Elementwise; operand shapes must match exactly. There is no implicit
// broadcasting beyond the batched matmul leading dims.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);

Tensor gelu(const Tensor& x);
Tensor leaky_relu(const Tensor& x, double negative_slope);

// Batched matrix product: A[..,M,K] x B[..,K,N] -> [..,M,N]; leading extents
// must be identical.
Tensor matmul(const Tensor& a, const Tensor& b);

Tensor softmax(const Tensor& x, int64_t axis);

// Normalizes over the last axis (length C) to zero mean / unit variance,
// then applies the affine pair.
Tensor layernorm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                 double eps = 1e-5);

// Cross-correlation on channels-first volumes.
//   x[C_in,H,W,D], kernel[C_out,C_in/groups,k,k,k] -> [C_out,H',W',D']
// with E' = floor((E + 2*pad - k)/stride) + 1. Depthwise = groups == C_in.
Tensor conv3d(const Tensor& x, const Tensor& kernel, int64_t stride,
              int64_t pad, int64_t groups);

Tensor add_channel_bias(const Tensor& x, const Tensor& bias);  // x[C,...]
Tensor add_last_bias(const Tensor& x, const Tensor& bias);     // x[...,C]

// Trilinear sampling of a channels-last field x[H,W,D,C] at continuous
// grid coordinates coords[...,3] (axis order matches the field's H,W,D).
// Out-of-range coordinates clamp to the border. Differentiable w.r.t. both
// x and coords; sampling at exact integer coordinates reproduces the stored
// token bit-exactly.
Tensor grid_sample(const Tensor& x, const Tensor& coords);

// Row gather from x[N,C]: out[m,:] = x[indices[m],:], with index -1 giving a
// zero row (used for window padding). Backward scatter-adds.
Tensor gather_rows(const Tensor& x, const std::vector<int64_t>& indices);

Tensor reshape(const Tensor& x, Shape shape);
Tensor permute(const Tensor& x, const std::vector<int64_t>& axes);
Tensor concat(const std::vector<Tensor>& parts, int64_t axis);
Tensor narrow(const Tensor& x, int64_t axis, int64_t start, int64_t length);

Tensor sum(const Tensor& x);   // scalar
Tensor mean(const Tensor& x);  // scalar

}  // namespace defxattn

#endif  // DEFXATTN_OPS_HPP_
