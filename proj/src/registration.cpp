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
#include "defxattn/registration.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <string>

#include "defxattn/errors.hpp"
#include "defxattn/ops.hpp"

namespace defxattn {
namespace {

constexpr double kEps = 1e-5;
constexpr double kLogClamp = 1e-9;

std::string triple_str(int64_t a, int64_t b, int64_t c) {
  return "(" + std::to_string(a) + "," + std::to_string(b) + "," +
         std::to_string(c) + ")";
}

void require_image(const Tensor& image, const char* name) {
  if (image.shape().size() != 4 || image.shape()[0] != 1) {
    throw ShapeError(std::string(name) +
                     " must have shape [1,H,W,D], got " + shape_str(image.shape()));
  }
}

std::array<int64_t, 3> field_extents(const DisplacementField& field) {
  const Shape& s = field.data.shape();
  if (s.size() != 4 || s[0] != 3) {
    throw ShapeError("displacement field must have shape [3,H,W,D], got " +
                     shape_str(field.data.shape()));
  }
  return {s[1], s[2], s[3]};
}

// Continuous voxel coordinates of the identity map, channels-last [H,W,D,3].
Tensor identity_coords(const std::array<int64_t, 3>& e) {
  std::vector<double> v(static_cast<size_t>(e[0] * e[1] * e[2] * 3));
  size_t at = 0;
  for (int64_t i = 0; i < e[0]; ++i) {
    for (int64_t j = 0; j < e[1]; ++j) {
      for (int64_t k = 0; k < e[2]; ++k) {
        v[at++] = static_cast<double>(i);
        v[at++] = static_cast<double>(j);
        v[at++] = static_cast<double>(k);
      }
    }
  }
  return Tensor::create({e[0], e[1], e[2], 3}, std::move(v));
}

// Local sums over a cubic window via convolution with a ones kernel
// (zero padding, stride 1).
Tensor window_sums(const Tensor& x, int64_t window) {
  Tensor ones = Tensor::full({1, 1, window, window, window}, 1.0);
  return conv3d(x, ones, 1, (window - 1) / 2, 1);
}

double det3(const double m[3][3]) {
  return m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) -
         m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0]) +
         m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
}

// Sorted-sample percentile with linear interpolation between order statistics.
double percentile(std::vector<double>& v, double q) {
  std::sort(v.begin(), v.end());
  const double h = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<size_t>(h);
  if (lo + 1 >= v.size()) return v.back();
  return v[lo] + (h - static_cast<double>(lo)) * (v[lo + 1] - v[lo]);
}

}  // namespace

LabelMap::LabelMap(std::array<int64_t, 3> e, std::vector<int32_t> l)
    : extents(e), labels(std::move(l)) {
  if (extents[0] < 1 || extents[1] < 1 || extents[2] < 1) {
    throw ShapeError("label map extents must be positive, got " +
                     triple_str(extents[0], extents[1], extents[2]));
  }
  if (static_cast<int64_t>(labels.size()) != voxels()) {
    throw ShapeError("label map holds " + std::to_string(labels.size()) +
                     " values for extents " +
                     triple_str(extents[0], extents[1], extents[2]));
  }
}

Tensor warp_trilinear(const Tensor& image, const DisplacementField& field) {
  require_image(image, "image");
  const std::array<int64_t, 3> e = field_extents(field);
  if (image.shape()[1] != e[0] || image.shape()[2] != e[1] ||
      image.shape()[3] != e[2]) {
    throw ShapeError("image extents " + shape_str(image.shape()) +
                     " do not match displacement field " +
                     shape_str(field.data.shape()));
  }
  Tensor coords = add(permute(field.data, {1, 2, 3, 0}), identity_coords(e));
  Tensor sampled = grid_sample(permute(image, {1, 2, 3, 0}), coords);
  return permute(sampled, {3, 0, 1, 2});
}

LabelMap warp_nearest(const LabelMap& labels, const DisplacementField& field) {
  const std::array<int64_t, 3> e = field_extents(field);
  if (labels.extents != e) {
    throw ShapeError("label map extents " +
                     triple_str(labels.extents[0], labels.extents[1],
                                labels.extents[2]) +
                     " do not match displacement field " +
                     shape_str(field.data.shape()));
  }
  const auto u = field.data.data();
  const int64_t n = labels.voxels();
  std::vector<int32_t> out(static_cast<size_t>(n));
  int64_t at = 0;
  for (int64_t i = 0; i < e[0]; ++i) {
    for (int64_t j = 0; j < e[1]; ++j) {
      for (int64_t k = 0; k < e[2]; ++k, ++at) {
        const int64_t src[3] = {
            std::clamp<int64_t>(
                std::llround(static_cast<double>(i) + u[static_cast<size_t>(at)]),
                0, e[0] - 1),
            std::clamp<int64_t>(
                std::llround(static_cast<double>(j) +
                             u[static_cast<size_t>(n + at)]),
                0, e[1] - 1),
            std::clamp<int64_t>(
                std::llround(static_cast<double>(k) +
                             u[static_cast<size_t>(2 * n + at)]),
                0, e[2] - 1)};
        out[static_cast<size_t>(at)] = labels.at(src[0], src[1], src[2]);
      }
    }
  }
  return LabelMap(e, std::move(out));
}

Tensor one_hot(const LabelMap& map, const std::vector<int32_t>& label_ids) {
  if (label_ids.empty()) {
    throw ConfigError("one_hot needs at least one label id");
  }
  const int64_t n = map.voxels();
  const auto l = static_cast<int64_t>(label_ids.size());
  std::vector<double> v(static_cast<size_t>(l * n), 0.0);
  for (int64_t c = 0; c < l; ++c) {
    for (int64_t t = 0; t < n; ++t) {
      if (map.labels[static_cast<size_t>(t)] ==
          label_ids[static_cast<size_t>(c)]) {
        v[static_cast<size_t>(c * n + t)] = 1.0;
      }
    }
  }
  return Tensor::create({l, map.extents[0], map.extents[1], map.extents[2]},
                        std::move(v));
}

Tensor ncc_loss(const Tensor& warped, const Tensor& fixed, int64_t window) {
  require_image(warped, "warped");
  require_image(fixed, "fixed");
  if (warped.shape() != fixed.shape()) {
    throw ShapeError("ncc_loss inputs differ: " + shape_str(warped.shape()) + " vs " +
                     shape_str(fixed.shape()));
  }
  if (window < 1 || window % 2 == 0) {
    throw ConfigError("ncc_loss window must be odd and positive, got " +
                      std::to_string(window));
  }
  // Per-voxel count of in-range window members, so border windows compute
  // true sample statistics instead of zero-inflated ones.
  Tensor counts = window_sums(Tensor::full(warped.shape(), 1.0), window);
  Tensor i_sum = window_sums(warped, window);
  Tensor j_sum = window_sums(fixed, window);
  Tensor i2_sum = window_sums(mul(warped, warped), window);
  Tensor j2_sum = window_sums(mul(fixed, fixed), window);
  Tensor ij_sum = window_sums(mul(warped, fixed), window);
  Tensor cross = sub(ij_sum, div(mul(i_sum, j_sum), counts));
  Tensor var_i = sub(i2_sum, div(mul(i_sum, i_sum), counts));
  Tensor var_j = sub(j2_sum, div(mul(j_sum, j_sum), counts));
  Tensor cc = div(mul(cross, cross), add_scalar(mul(var_i, var_j), kEps));
  return scale(mean(cc), -1.0);
}

Tensor soft_dice_loss(const Tensor& warped_onehot, const Tensor& fixed_onehot) {
  if (warped_onehot.shape().size() != 4 || fixed_onehot.shape().size() != 4) {
    throw ShapeError("soft_dice_loss expects [L,H,W,D] volumes");
  }
  if (warped_onehot.shape() != fixed_onehot.shape()) {
    throw ShapeError("soft_dice_loss inputs differ: " +
                     shape_str(warped_onehot.shape()) + " vs " +
                     shape_str(fixed_onehot.shape()));
  }
  const int64_t l = warped_onehot.shape()[0];
  Tensor acc = Tensor::zeros({1});
  for (int64_t c = 0; c < l; ++c) {
    Tensor p = narrow(warped_onehot, 0, c, 1);
    Tensor q = narrow(fixed_onehot, 0, c, 1);
    Tensor num = add_scalar(scale(sum(mul(p, q)), 2.0), kEps);
    Tensor den = add_scalar(add(sum(p), sum(q)), kEps);
    acc = add(acc, div(num, den));
  }
  return add_scalar(scale(acc, -1.0 / static_cast<double>(l)), 1.0);
}

Tensor diffusion_regularizer(const DisplacementField& field) {
  const std::array<int64_t, 3> e = field_extents(field);
  Tensor total = Tensor::zeros({1});
  for (int64_t axis = 0; axis < 3; ++axis) {
    const int64_t extent = e[static_cast<size_t>(axis)];
    if (extent < 2) continue;  // no differences along a degenerate axis
    Tensor hi = narrow(field.data, axis + 1, 1, extent - 1);
    Tensor lo = narrow(field.data, axis + 1, 0, extent - 1);
    Tensor d = sub(hi, lo);
    total = add(total, mean(mul(d, d)));
  }
  return scale(total, 1.0 / 3.0);
}

JacobianMap jacobian_map(const DisplacementField& field) {
  const std::array<int64_t, 3> e = field_extents(field);
  if (e[0] < 3 || e[1] < 3 || e[2] < 3) {
    throw ShapeError("jacobian_map needs extents of at least 3, got " +
                     shape_str(field.data.shape()));
  }
  const auto u = field.data.data();
  const int64_t n = e[0] * e[1] * e[2];
  auto phi = [&](int64_t comp, int64_t i, int64_t j, int64_t k) {
    const double coord[3] = {static_cast<double>(i), static_cast<double>(j),
                             static_cast<double>(k)};
    return coord[comp] +
           u[static_cast<size_t>(comp * n + (i * e[1] + j) * e[2] + k)];
  };
  std::vector<double> det(static_cast<size_t>(n));
  int64_t at = 0;
  for (int64_t i = 0; i < e[0]; ++i) {
    for (int64_t j = 0; j < e[1]; ++j) {
      for (int64_t k = 0; k < e[2]; ++k, ++at) {
        double m[3][3];
        const int64_t pos[3] = {i, j, k};
        for (int64_t axis = 0; axis < 3; ++axis) {
          int64_t hi[3] = {i, j, k};
          int64_t lo[3] = {i, j, k};
          hi[axis] = std::min(pos[axis] + 1, e[static_cast<size_t>(axis)] - 1);
          lo[axis] = std::max(pos[axis] - 1, int64_t{0});
          const double width = static_cast<double>(hi[axis] - lo[axis]);
          for (int64_t comp = 0; comp < 3; ++comp) {
            m[comp][axis] = (phi(comp, hi[0], hi[1], hi[2]) -
                             phi(comp, lo[0], lo[1], lo[2])) /
                            width;
          }
        }
        det[static_cast<size_t>(at)] = det3(m);
      }
    }
  }
  return JacobianMap{Tensor::create({e[0], e[1], e[2]}, std::move(det))};
}

InvertibilityStats invertibility_metrics(const DisplacementField& field) {
  const std::array<int64_t, 3> e = field_extents(field);
  JacobianMap jm = jacobian_map(field);
  const auto det = jm.det.data();
  const auto n = static_cast<double>(det.size());

  double log_sum = 0.0;
  int64_t nonpositive = 0;
  for (double d : det) {
    if (d <= 0.0) ++nonpositive;
    log_sum += std::log(std::max(d, kLogClamp));
  }
  const double log_mean = log_sum / n;
  double log_var = 0.0;
  for (double d : det) {
    const double dev = std::log(std::max(d, kLogClamp)) - log_mean;
    log_var += dev * dev;
  }

  // Corner-sampled one-sided Jacobians: at every voxel, take the eight
  // forward/backward difference combinations (flipped to the in-range side at
  // faces) and accumulate the negative part of each determinant.
  const auto u = field.data.data();
  const int64_t voxels = e[0] * e[1] * e[2];
  auto phi = [&](int64_t comp, int64_t i, int64_t j, int64_t k) {
    const double coord[3] = {static_cast<double>(i), static_cast<double>(j),
                             static_cast<double>(k)};
    return coord[comp] +
           u[static_cast<size_t>(comp * voxels + (i * e[1] + j) * e[2] + k)];
  };
  double ndv_sum = 0.0;
  for (int64_t i = 0; i < e[0]; ++i) {
    for (int64_t j = 0; j < e[1]; ++j) {
      for (int64_t k = 0; k < e[2]; ++k) {
        const int64_t pos[3] = {i, j, k};
        for (int corner = 0; corner < 8; ++corner) {
          double m[3][3];
          for (int64_t axis = 0; axis < 3; ++axis) {
            int64_t dir = (corner >> axis) & 1 ? 1 : -1;
            if (pos[axis] + dir < 0 ||
                pos[axis] + dir >= e[static_cast<size_t>(axis)]) {
              dir = -dir;
            }
            int64_t nb[3] = {i, j, k};
            nb[axis] += dir;
            for (int64_t comp = 0; comp < 3; ++comp) {
              m[comp][axis] = static_cast<double>(dir) *
                              (phi(comp, nb[0], nb[1], nb[2]) -
                               phi(comp, i, j, k));
            }
          }
          ndv_sum += std::max(0.0, -det3(m));
        }
      }
    }
  }

  InvertibilityStats stats;
  stats.sdlogj = std::sqrt(log_var / n);
  stats.pct_nonpositive = 100.0 * static_cast<double>(nonpositive) / n;
  stats.pct_ndv = 100.0 * ndv_sum / (8.0 * static_cast<double>(voxels));
  return stats;
}

DiceResult dice_metric(const LabelMap& a, const LabelMap& b,
                       const std::vector<int32_t>& label_ids) {
  if (a.extents != b.extents) {
    throw ShapeError("dice_metric extents differ: " +
                     triple_str(a.extents[0], a.extents[1], a.extents[2]) +
                     " vs " +
                     triple_str(b.extents[0], b.extents[1], b.extents[2]));
  }
  std::map<int32_t, std::array<int64_t, 3>> counts;  // |A|, |B|, |A∩B|
  for (int32_t id : label_ids) counts[id] = {0, 0, 0};
  for (size_t t = 0; t < a.labels.size(); ++t) {
    auto ia = counts.find(a.labels[t]);
    if (ia != counts.end()) ++ia->second[0];
    auto ib = counts.find(b.labels[t]);
    if (ib != counts.end()) {
      ++ib->second[1];
      if (a.labels[t] == b.labels[t]) ++ib->second[2];
    }
  }
  DiceResult result;
  double total = 0.0;
  int64_t present = 0;
  for (int32_t id : label_ids) {
    const auto& c = counts[id];
    if (c[0] + c[1] == 0) {
      result.per_label.push_back(std::numeric_limits<double>::quiet_NaN());
      continue;
    }
    const double dice =
        2.0 * static_cast<double>(c[2]) / static_cast<double>(c[0] + c[1]);
    result.per_label.push_back(dice);
    total += dice;
    ++present;
  }
  result.mean = present > 0 ? total / static_cast<double>(present)
                            : std::numeric_limits<double>::quiet_NaN();
  return result;
}

double hd95_metric(const LabelMap& a, const LabelMap& b, int32_t label) {
  if (a.extents != b.extents) {
    throw ShapeError("hd95_metric extents differ");
  }
  const std::array<int64_t, 3>& e = a.extents;
  auto boundary = [&](const LabelMap& m) {
    std::vector<std::array<int64_t, 3>> pts;
    for (int64_t i = 0; i < e[0]; ++i) {
      for (int64_t j = 0; j < e[1]; ++j) {
        for (int64_t k = 0; k < e[2]; ++k) {
          if (m.at(i, j, k) != label) continue;
          bool edge = false;
          const int64_t d[6][3] = {{1, 0, 0},  {-1, 0, 0}, {0, 1, 0},
                                   {0, -1, 0}, {0, 0, 1},  {0, 0, -1}};
          for (const auto& step : d) {
            const int64_t ni = i + step[0];
            const int64_t nj = j + step[1];
            const int64_t nk = k + step[2];
            if (ni < 0 || ni >= e[0] || nj < 0 || nj >= e[1] || nk < 0 ||
                nk >= e[2] || m.at(ni, nj, nk) != label) {
              edge = true;
              break;
            }
          }
          if (edge) pts.push_back({i, j, k});
        }
      }
    }
    return pts;
  };
  const auto pa = boundary(a);
  const auto pb = boundary(b);
  if (pa.empty() || pb.empty()) {
    throw MetricError("hd95_metric: label " + std::to_string(label) +
                      " is empty in " + (pa.empty() ? "the first" : "the second") +
                      " volume");
  }
  auto directed = [](const std::vector<std::array<int64_t, 3>>& from,
                     const std::vector<std::array<int64_t, 3>>& to) {
    std::vector<double> dist;
    dist.reserve(from.size());
    for (const auto& p : from) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& q : to) {
        const double dx = static_cast<double>(p[0] - q[0]);
        const double dy = static_cast<double>(p[1] - q[1]);
        const double dz = static_cast<double>(p[2] - q[2]);
        best = std::min(best, dx * dx + dy * dy + dz * dz);
      }
      dist.push_back(std::sqrt(best));
    }
    return dist;
  };
  std::vector<double> ab = directed(pa, pb);
  std::vector<double> ba = directed(pb, pa);
  return std::max(percentile(ab, 0.95), percentile(ba, 0.95));
}

}  // namespace defxattn
