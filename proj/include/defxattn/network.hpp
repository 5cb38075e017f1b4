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
#ifndef DEFXATTN_NETWORK_HPP_
#define DEFXATTN_NETWORK_HPP_

#include <array>
#include <cstdint>
#include <vector>

#include "defxattn/attention.hpp"
#include "defxattn/rng.hpp"
#include "defxattn/tensor.hpp"

namespace defxattn {

// Architecture description.  Defaults are the desk-scale configuration used
// throughout the tests; larger setups (e.g. 160x192x224 volumes with 96
// embedding channels) are expressed by overriding fields.
struct ModelConfig {
  std::array<int64_t, 3> image{16, 16, 16};
  int64_t patch_size = 4;
  int64_t embed_dim = 8;
  std::vector<int64_t> stage_depths{2, 2};
  std::vector<int64_t> stage_heads{2, 2};
  std::vector<std::array<int64_t, 3>> stage_windows{{2, 2, 2}, {2, 2, 2}};
  std::vector<int64_t> decoder_channels{8, 8, 8};
  int64_t offset_kernel = 3;
  bool share_encoder_params = false;

  int64_t n_stages() const;
  int64_t stage_channels(int64_t s) const;            // doubles per stage
  std::array<int64_t, 3> stage_grid(int64_t s) const;  // ceil-halved cascade
  int64_t upsample_steps() const;                      // log2(patch_size)
  int64_t decoder_steps() const;  // pyramid merges + upsample steps
  // Throws ConfigError listing every offending field.
  void validate() const;
};

// Dense voxel displacements u; the deformation maps x to x + u(x).
struct DisplacementField {
  Tensor data;  // [3, H, W, D]
};

struct DecoderStepParams {
  Tensor w1, b1, w2, b2;
};

struct ModelParams {
  Tensor embed_kernel, embed_bias;
  // blocks_[a|b][stage][block]; path b aliases path a's tensors when the
  // config shares encoder parameters.
  std::vector<std::vector<AttentionParams>> blocks_a, blocks_b;
  std::vector<Tensor> merge_a, merge_b;  // one per inter-stage downsampling
  std::vector<DecoderStepParams> decoder;
  Tensor head_w, head_b;  // zero-initialized displacement head
};

ModelParams make_model_params(ParameterStore& store, const ModelConfig& config,
                              Rng& rng);

// Tokenizes a single-channel volume [1,H,W,D] with a strided convolution;
// extents must be divisible by the patch size.
TokenField patch_embed(const Tensor& volume, const ModelConfig& config,
                       const ModelParams& params);

// Concatenates 2x2x2 neighbourhoods (zero-padding odd grids) and projects
// 8C -> 2C with the given weight matrix.
TokenField patch_merging(const TokenField& x, const Tensor& proj);

// Trilinear resampling of a token field onto a new grid (border-clamped,
// half-voxel aligned).
TokenField upsample_trilinear(const TokenField& x,
                              std::array<int64_t, 3> target);

// The two per-stage encoder streams at the moment they are fused: path a
// evolves the moving stream against the fixed stream, path b the reverse.
struct StageStreams {
  TokenField a, b;
};

// Runs both role-swapped encoder paths and returns the fused skip pyramid,
// highest resolution first.  Both paths update simultaneously: each block
// reads the other stream's previous output.
std::vector<TokenField> dual_encoder_forward(
    const Tensor& moving, const Tensor& fixed, const ModelParams& params,
    const ModelConfig& config, CrossMode mode = CrossMode::kDeformable,
    std::vector<StageStreams>* streams_out = nullptr);

// Decodes the skip pyramid to a full-resolution displacement field: repeated
// x2 upsampling, skip concatenation (the raw image pair at full resolution),
// two convolution+LeakyReLU refinements per step, and a zero-initialized
// 3-channel head.
DisplacementField conv_decoder_forward(const std::vector<TokenField>& skips,
                                       const Tensor& moving,
                                       const Tensor& fixed,
                                       const ModelParams& params,
                                       const ModelConfig& config);

DisplacementField model_forward(const Tensor& moving, const Tensor& fixed,
                                const ModelParams& params,
                                const ModelConfig& config,
                                CrossMode mode = CrossMode::kDeformable);

}  // namespace defxattn

#endif  // DEFXATTN_NETWORK_HPP_
