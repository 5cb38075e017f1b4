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
#include "defxattn/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <sstream>
#include <string>

#include "defxattn/errors.hpp"
#include "defxattn/volume_io.hpp"

namespace defxattn {
namespace {

constexpr double kLabelThreshold = 0.15;  // blob ownership cut, pre-normalization
constexpr double kSmoothSigma = 3.0;      // field smoothing, in voxels
constexpr int kMaxFieldTries = 100;

std::string pair_base(const std::string& dir, int64_t index,
                      const char* suffix) {
  char name[32];
  std::snprintf(name, sizeof name, "pair%03lld", static_cast<long long>(index));
  return dir + "/" + name + "." + suffix;
}

// Separable Gaussian blur along one axis with a truncated, per-position
// renormalized kernel (constant fields stay constant up to the border).
void blur_axis(std::vector<double>& v, const std::array<int64_t, 3>& e,
               int64_t comp_stride, int64_t comp, int axis) {
  const int64_t radius = static_cast<int64_t>(std::ceil(3.0 * kSmoothSigma));
  std::vector<double> kernel(static_cast<size_t>(2 * radius + 1));
  for (int64_t t = -radius; t <= radius; ++t) {
    kernel[static_cast<size_t>(t + radius)] =
        std::exp(-0.5 * static_cast<double>(t * t) /
                 (kSmoothSigma * kSmoothSigma));
  }
  const int64_t strides[3] = {e[1] * e[2], e[2], 1};
  const int64_t extent = e[static_cast<size_t>(axis)];
  std::vector<double> line(static_cast<size_t>(extent));
  // Iterate over all lines along `axis`.
  const int a1 = axis == 0 ? 1 : 0;
  const int a2 = axis == 2 ? 1 : 2;
  for (int64_t p = 0; p < e[static_cast<size_t>(a1)]; ++p) {
    for (int64_t q = 0; q < e[static_cast<size_t>(a2)]; ++q) {
      const int64_t base = comp * comp_stride + p * strides[a1] +
                           q * strides[a2];
      for (int64_t t = 0; t < extent; ++t) {
        line[static_cast<size_t>(t)] =
            v[static_cast<size_t>(base + t * strides[axis])];
      }
      for (int64_t t = 0; t < extent; ++t) {
        double acc = 0.0;
        double mass = 0.0;
        const int64_t lo = std::max<int64_t>(0, t - radius);
        const int64_t hi = std::min<int64_t>(extent - 1, t + radius);
        for (int64_t s = lo; s <= hi; ++s) {
          const double w = kernel[static_cast<size_t>(s - t + radius)];
          acc += w * line[static_cast<size_t>(s)];
          mass += w;
        }
        v[static_cast<size_t>(base + t * strides[axis])] = acc / mass;
      }
    }
  }
}

DisplacementField random_smooth_field(Rng& rng,
                                      const std::array<int64_t, 3>& e,
                                      double max_warp) {
  const int64_t n = e[0] * e[1] * e[2];
  if (max_warp == 0.0) {
    return DisplacementField{Tensor::zeros({3, e[0], e[1], e[2]})};
  }
  for (int attempt = 0; attempt < kMaxFieldTries; ++attempt) {
    std::vector<double> v(static_cast<size_t>(3 * n));
    for (double& x : v) x = rng.gauss();
    for (int64_t comp = 0; comp < 3; ++comp) {
      for (int axis = 0; axis < 3; ++axis) {
        blur_axis(v, e, n, comp, axis);
      }
    }
    double peak = 0.0;
    for (double x : v) peak = std::max(peak, std::abs(x));
    if (peak == 0.0) continue;
    const double s = max_warp / peak;
    for (double& x : v) x *= s;
    DisplacementField field{Tensor::create({3, e[0], e[1], e[2]}, std::move(v))};
    if (invertibility_metrics(field).pct_nonpositive == 0.0) {
      return field;
    }
  }
  throw GenerationError(
      "no invertible field found in " + std::to_string(kMaxFieldTries) +
      " tries; lower max_warp (requested " + std::to_string(max_warp) + ")");
}

}  // namespace

SynthPair make_synth_pair(Rng& rng, std::array<int64_t, 3> extents,
                          int64_t n_labels, double max_warp, bool multimodal) {
  if (extents[0] < 3 || extents[1] < 3 || extents[2] < 3) {
    throw ConfigError("synthetic volumes need extents of at least 3");
  }
  if (n_labels < 1) {
    throw ConfigError("synthetic volumes need at least one label");
  }
  const int64_t n = extents[0] * extents[1] * extents[2];
  const double mean_extent =
      static_cast<double>(extents[0] + extents[1] + extents[2]) / 3.0;

  struct Blob {
    double c[3];
    double sigma;
    double amp;
  };
  std::vector<Blob> blobs(static_cast<size_t>(n_labels));
  for (auto& b : blobs) {
    for (int axis = 0; axis < 3; ++axis) {
      const double extent = static_cast<double>(extents[static_cast<size_t>(axis)]);
      b.c[axis] = (0.2 + 0.6 * rng.uniform()) * extent;
    }
    b.sigma = (0.07 + 0.05 * rng.uniform()) * mean_extent;
    b.amp = 0.7 + 0.3 * rng.uniform();
  }

  std::vector<double> intensity(static_cast<size_t>(n));
  std::vector<int32_t> owner(static_cast<size_t>(n), 0);
  double peak = 0.0;
  int64_t at = 0;
  for (int64_t i = 0; i < extents[0]; ++i) {
    for (int64_t j = 0; j < extents[1]; ++j) {
      for (int64_t k = 0; k < extents[2]; ++k, ++at) {
        double total = 0.0;
        double best = 0.0;
        int32_t best_blob = 0;
        for (size_t b = 0; b < blobs.size(); ++b) {
          const double dx = static_cast<double>(i) - blobs[b].c[0];
          const double dy = static_cast<double>(j) - blobs[b].c[1];
          const double dz = static_cast<double>(k) - blobs[b].c[2];
          const double g =
              blobs[b].amp *
              std::exp(-0.5 * (dx * dx + dy * dy + dz * dz) /
                       (blobs[b].sigma * blobs[b].sigma));
          total += g;
          if (g > best) {
            best = g;
            best_blob = static_cast<int32_t>(b) + 1;
          }
        }
        intensity[static_cast<size_t>(at)] = total;
        if (best > kLabelThreshold) owner[static_cast<size_t>(at)] = best_blob;
        peak = std::max(peak, total);
      }
    }
  }
  if (peak > 0.0) {
    for (double& v : intensity) v /= peak;
  }

  SynthPair pair;
  pair.moving = Tensor::create({1, extents[0], extents[1], extents[2]},
                               std::move(intensity));
  pair.labels_moving = LabelMap(extents, std::move(owner));
  pair.gt = random_smooth_field(rng, extents, max_warp);
  pair.fixed = warp_trilinear(pair.moving, pair.gt);
  pair.labels_fixed = warp_nearest(pair.labels_moving, pair.gt);
  if (multimodal) {
    // Monotone-then-inverted intensity remap emulating a contrast change.
    std::vector<double> remapped(pair.fixed.data().begin(),
                                 pair.fixed.data().end());
    for (double& v : remapped) {
      v = 1.0 - std::pow(std::max(v, 0.0), 0.7);
    }
    pair.fixed = Tensor::create({1, extents[0], extents[1], extents[2]},
                                std::move(remapped));
  }
  return pair;
}

SynthDataset make_synth_dataset(uint64_t seed, int64_t n_pairs,
                                std::array<int64_t, 3> extents,
                                int64_t n_labels, double max_warp,
                                bool multimodal) {
  if (n_pairs < 1) {
    throw ConfigError("a dataset needs at least one pair");
  }
  SynthDataset dataset;
  dataset.extents = extents;
  dataset.n_labels = n_labels;
  Rng master(seed);
  for (int64_t i = 0; i < n_pairs; ++i) {
    Rng stream = master.fork(i);
    dataset.pairs.push_back(
        make_synth_pair(stream, extents, n_labels, max_warp, multimodal));
  }
  return dataset;
}

void save_synth_dataset(const SynthDataset& dataset, const std::string& dir) {
  std::filesystem::create_directories(dir);
  {
    std::FILE* f = std::fopen((dir + "/dataset.txt").c_str(), "wb");
    if (f == nullptr) {
      throw IoError("cannot open '" + dir + "/dataset.txt'");
    }
    std::ostringstream out;
    out << "pairs=" << dataset.pairs.size() << '\n'
        << "extents=" << dataset.extents[0] << ',' << dataset.extents[1] << ','
        << dataset.extents[2] << '\n'
        << "labels=" << dataset.n_labels << '\n';
    const std::string text = out.str();
    const size_t written = std::fwrite(text.data(), 1, text.size(), f);
    std::fclose(f);
    if (written != text.size()) {
      throw IoError("short write to '" + dir + "/dataset.txt'");
    }
  }
  for (size_t i = 0; i < dataset.pairs.size(); ++i) {
    const SynthPair& p = dataset.pairs[i];
    const auto idx = static_cast<int64_t>(i);
    save_raw_volume(pair_base(dir, idx, "moving"), p.moving);
    save_raw_volume(pair_base(dir, idx, "fixed"), p.fixed);
    save_label_volume(pair_base(dir, idx, "labels_m"), p.labels_moving);
    save_label_volume(pair_base(dir, idx, "labels_f"), p.labels_fixed);
    save_raw_volume(pair_base(dir, idx, "gt"), p.gt.data);
  }
}

SynthDataset load_synth_dataset(const std::string& dir) {
  std::FILE* f = std::fopen((dir + "/dataset.txt").c_str(), "rb");
  if (f == nullptr) {
    throw IoError("cannot open '" + dir + "/dataset.txt'");
  }
  std::string text;
  char buf[256];
  size_t got;
  while ((got = std::fread(buf, 1, sizeof buf, f)) > 0) text.append(buf, got);
  std::fclose(f);

  SynthDataset dataset;
  int64_t n_pairs = -1;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.rfind("pairs=", 0) == 0) {
      n_pairs = std::stoll(line.substr(6));
    } else if (line.rfind("extents=", 0) == 0) {
      if (std::sscanf(line.c_str(), "extents=%lld,%lld,%lld",
                      reinterpret_cast<long long*>(&dataset.extents[0]),
                      reinterpret_cast<long long*>(&dataset.extents[1]),
                      reinterpret_cast<long long*>(&dataset.extents[2])) != 3) {
        throw FormatError("bad extents line in '" + dir + "/dataset.txt'");
      }
    } else if (line.rfind("labels=", 0) == 0) {
      dataset.n_labels = std::stoll(line.substr(7));
    }
  }
  if (n_pairs < 1 || dataset.extents[0] < 1 || dataset.n_labels < 1) {
    throw FormatError("'" + dir + "/dataset.txt' is incomplete");
  }
  for (int64_t i = 0; i < n_pairs; ++i) {
    SynthPair p;
    p.moving = load_raw_volume(pair_base(dir, i, "moving"));
    p.fixed = load_raw_volume(pair_base(dir, i, "fixed"));
    p.labels_moving = load_label_volume(pair_base(dir, i, "labels_m"));
    p.labels_fixed = load_label_volume(pair_base(dir, i, "labels_f"));
    p.gt = DisplacementField{load_raw_volume(pair_base(dir, i, "gt"))};
    const Shape expect{1, dataset.extents[0], dataset.extents[1],
                       dataset.extents[2]};
    if (p.moving.shape() != expect || p.fixed.shape() != expect) {
      throw FormatError("pair " + std::to_string(i) +
                        " volumes do not match the manifest extents");
    }
    dataset.pairs.push_back(std::move(p));
  }
  return dataset;
}

}  // namespace defxattn
