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
// Spatial warping, the unsupervised similarity/regularity losses, and the
// deformation-quality metrics (Dice, HD95, Jacobian statistics).
#ifndef DEFXATTN_REGISTRATION_HPP_
#define DEFXATTN_REGISTRATION_HPP_

#include <array>
#include <cstdint>
#include <vector>

#include "defxattn/network.hpp"
#include "defxattn/tensor.hpp"

namespace defxattn {

// Hard anatomical labels on the voxel grid. Label id 0 is background.
struct LabelMap {
  std::array<int64_t, 3> extents{0, 0, 0};
  std::vector<int32_t> labels;  // row-major [H,W,D]

  LabelMap() = default;
  LabelMap(std::array<int64_t, 3> e, std::vector<int32_t> l);

  int64_t voxels() const { return extents[0] * extents[1] * extents[2]; }
  int32_t at(int64_t i, int64_t j, int64_t k) const {
    return labels[static_cast<size_t>((i * extents[1] + j) * extents[2] + k)];
  }
};

// Central-difference Jacobian determinants of the map x -> x + u(x).
struct JacobianMap {
  Tensor det;  // [H,W,D], no gradient
};

struct InvertibilityStats {
  double sdlogj = 0.0;          // std of log det (clamped at 1e-9)
  double pct_nonpositive = 0.0; // 100 * fraction of voxels with det <= 0
  double pct_ndv = 0.0;         // corner-sampled non-diffeomorphic volume, %
};

struct DiceResult {
  std::vector<double> per_label;  // aligned with the requested ids; NaN when a
                                  // label is absent from both volumes
  double mean = 0.0;              // over labels present in at least one volume
};

// Resamples an intensity image at x + u(x) with trilinear interpolation and
// border clamping. Differentiable with respect to both inputs.
Tensor warp_trilinear(const Tensor& image, const DisplacementField& field);

// Nearest-neighbour label resampling for metric evaluation.
LabelMap warp_nearest(const LabelMap& labels, const DisplacementField& field);

// Indicator volume [L,H,W,D] for the given label ids, in order.
Tensor one_hot(const LabelMap& map, const std::vector<int32_t>& label_ids);

// Negated mean squared local normalized cross-correlation over cubic windows
// of odd edge `window`. Value lies in [-1, 0].
Tensor ncc_loss(const Tensor& warped, const Tensor& fixed, int64_t window = 9);

// 1 - mean over channels of (2*sum(pq)+eps)/(sum(p)+sum(q)+eps) on soft
// one-hot volumes [L,H,W,D].
Tensor soft_dice_loss(const Tensor& warped_onehot, const Tensor& fixed_onehot);

// Mean squared forward difference of the field over all component/axis pairs.
Tensor diffusion_regularizer(const DisplacementField& field);

JacobianMap jacobian_map(const DisplacementField& field);

InvertibilityStats invertibility_metrics(const DisplacementField& field);

DiceResult dice_metric(const LabelMap& a, const LabelMap& b,
                       const std::vector<int32_t>& label_ids);

// Symmetric 95th-percentile surface distance (in voxels) between the
// 6-connectivity boundaries of one label.
double hd95_metric(const LabelMap& a, const LabelMap& b, int32_t label);

}  // namespace defxattn

#endif  // DEFXATTN_REGISTRATION_HPP_
