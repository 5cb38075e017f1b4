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
// Synthetic registration pairs: a Gaussian-blob phantom with blob-ownership
// labels, deformed by a smoothed random displacement field whose Jacobian is
// rejection-checked to stay positive. The generating field is retained as
// ground truth.
#ifndef DEFXATTN_SYNTH_HPP_
#define DEFXATTN_SYNTH_HPP_

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "defxattn/registration.hpp"
#include "defxattn/rng.hpp"

namespace defxattn {

struct SynthPair {
  Tensor moving;          // [1,H,W,D], intensities in [0,1]
  Tensor fixed;           // moving resampled through the ground-truth field
  LabelMap labels_moving;
  LabelMap labels_fixed;
  DisplacementField gt;   // [3,H,W,D]
};

struct SynthDataset {
  std::array<int64_t, 3> extents{0, 0, 0};
  int64_t n_labels = 0;
  std::vector<SynthPair> pairs;
};

// One pair from an already-positioned generator stream.
SynthPair make_synth_pair(Rng& rng, std::array<int64_t, 3> extents,
                          int64_t n_labels, double max_warp, bool multimodal);

// Whole dataset; pair i draws from fork(i) of the master stream, so the
// content of a pair depends only on (seed, i).
SynthDataset make_synth_dataset(uint64_t seed, int64_t n_pairs,
                                std::array<int64_t, 3> extents,
                                int64_t n_labels, double max_warp,
                                bool multimodal);

// Writes a manifest plus one file set per pair into an existing directory.
void save_synth_dataset(const SynthDataset& dataset, const std::string& dir);

SynthDataset load_synth_dataset(const std::string& dir);

}  // namespace defxattn

#endif  // DEFXATTN_SYNTH_HPP_
