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
#ifndef DEFXATTN_ATTENTION_HPP_
#define DEFXATTN_ATTENTION_HPP_

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "defxattn/ops.hpp"
#include "defxattn/rng.hpp"
#include "defxattn/tensor.hpp"

namespace defxattn {

// Tokens on a 3D grid, stored as [H,W,D,C].
struct TokenField {
  Tensor data;

  TokenField() = default;
  explicit TokenField(Tensor t);

  int64_t extent(int axis) const { return data.extent(axis); }
  int64_t channels() const { return data.extent(3); }
  int64_t tokens() const { return data.numel() / channels(); }
  std::array<int64_t, 3> grid() const {
    return {data.extent(0), data.extent(1), data.extent(2)};
  }
};

// Per-token, per-head 3-vector sampling displacements, [H,W,D,3*n_heads].
struct OffsetField {
  Tensor data;
};

// Precomputed window tiling of a token grid: the grid is zero-padded up to
// window multiples, cyclically rolled by `shift`, and tiled into windows.
// `gather` maps (window, slot) to a raw token row (-1 = padding); `scatter`
// is its inverse over raw rows.  `slot_coords` holds each slot's coordinate
// in the original (unrolled) frame — the reference points for deformable
// sampling.  `mask` carries additive attention masking (0 or -1e9) that
// blocks padding keys and, in shifted layouts, pairs of slots that were not
// spatial neighbors before the roll.
struct WindowLayout {
  std::array<int64_t, 3> grid{};
  std::array<int64_t, 3> window{};
  std::array<int64_t, 3> shift{};
  std::array<int64_t, 3> padded{};
  std::array<int64_t, 3> blocks{};
  int64_t n_windows = 0;
  int64_t slots = 0;  // tokens per window
  std::vector<int64_t> gather;    // [n_windows*slots] -> raw row or -1
  std::vector<int64_t> scatter;   // [grid tokens] -> window*slots index
  std::vector<double> slot_coords;  // [n_windows*slots*3], original frame
  Tensor mask;                    // [n_windows, slots, slots]
};

WindowLayout make_layout(std::array<int64_t, 3> grid,
                         std::array<int64_t, 3> window,
                         std::array<int64_t, 3> shift);

// All learnable tensors of one attention block.
struct AttentionParams {
  int64_t channels = 0;
  int64_t n_heads = 1;
  int64_t offset_kernel = 3;  // odd
  Tensor u_q, u_k, u_v, out_proj;          // [C,C], bias-free
  Tensor ln_b_gamma, ln_b_beta;            // base-stream norm
  Tensor ln_r_gamma, ln_r_beta;            // reference-stream norm
  Tensor ln2_gamma, ln2_beta;              // feed-forward sublayer norm
  Tensor mlp_w1, mlp_b1, mlp_w2, mlp_b2;   // C -> 4C -> C
  Tensor offset_dw;                        // [C,1,m,m,m] depthwise conv
  Tensor offset_pw, offset_pw_bias;        // [3h,C,1,1,1] + [3h], zero-init
};

// Creates and registers all block parameters under `prefix.`; the pointwise
// offset projection starts at exactly zero so sampling begins on the
// rectangular grid.
AttentionParams make_attention_params(ParameterStore& store,
                                      const std::string& prefix,
                                      int64_t channels, int64_t n_heads,
                                      int64_t offset_kernel, Rng& rng);

// Running multiply tallies for the attention cores, used to cross-check the
// analytic complexity ledger.  Always on; reset between measurements.
struct MultiplyCounters {
  uint64_t score_mults = 0;
  uint64_t av_mults = 0;
};
MultiplyCounters& multiply_counters();
void reset_multiply_counters();

// Tiles tokens into [n_windows, slots, C] via the layout's gather map.
Tensor window_partition(const TokenField& x, const WindowLayout& layout);

// Inverse of window_partition; padding slots are dropped.
TokenField window_reverse(const Tensor& windows, const WindowLayout& layout);

// Circular roll by `shifts` (taken modulo the grid extents).  The forward
// direction is the roll applied before partitioning; inverse undoes it.
TokenField cyclic_shift(const TokenField& x, std::array<int64_t, 3> shifts,
                        bool inverse = false);

// softmax(Q Kᵀ / sqrt(D_k)) V over batched windows.
Tensor scaled_dot_product_attention(const Tensor& q, const Tensor& k,
                                    const Tensor& v);

// Predicts per-token, per-head sampling displacements from the summed base
// and reference streams: depthwise conv (same-padded), GELU, then a
// zero-initialized pointwise projection to 3*n_heads channels.
OffsetField offset_network_forward(const TokenField& x_b,
                                   const TokenField& x_r,
                                   const AttentionParams& params);

// Trilinearly samples `x_r` at each window slot's reference point plus that
// head's displacement; returns the head's channel slice per slot as
// [n_windows, slots, C/n_heads].  On window-divisible grids with zero
// offsets this reproduces window_partition(x_r) exactly; padding slots
// instead sample the border-clamped field (their rows are discarded by
// window_reverse).  `coords_out`, when non-null, receives the sampling
// coordinates [n_windows, slots, 3] as a detached tensor.
Tensor deformable_window_sample(const TokenField& x_r,
                                const OffsetField& offsets,
                                const WindowLayout& layout, int64_t head,
                                Tensor* coords_out = nullptr);

enum class CrossMode {
  kDeformable,   // queries sampled at offset positions
  kFixedWindow,  // queries gathered on the rectangular grid
};

// One cross-attention block: keys/values projected from the windowed base
// stream, queries taken from the reference stream (sampled or gathered per
// `mode`), attention per window, merge, output projection, residual, then an
// LN + 2-layer GELU MLP sublayer.  When `sample_coords_out` is non-null and
// mode is deformable, it receives the per-head sampling coordinates as
// [n_windows, slots, n_heads, 3].
TokenField dw_mca_block(const TokenField& x_b, const TokenField& x_r,
                        const AttentionParams& params,
                        const WindowLayout& layout, CrossMode mode,
                        Tensor* sample_coords_out = nullptr);

// Self-attention block over one stream (queries, keys, and values all from
// `x`); same sublayer structure as the cross block.
TokenField windowed_sa_block(const TokenField& x, const AttentionParams& params,
                             const WindowLayout& layout);

// Cross-attention where each window's keys/values come from an enlarged
// search region of alpha*h x beta*w x gamma*d tokens centered on the window
// (clamped at the grid border).  Queries are the reference tokens at the
// window's own positions.  Comparison kernel for the complexity ledger;
// requires an unshifted layout on a window-divisible grid.
TokenField expanded_window_ca(const TokenField& x_b, const TokenField& x_r,
                              const AttentionParams& params,
                              const WindowLayout& layout, int64_t alpha,
                              int64_t beta, int64_t gamma);

// Writes sampling coordinates (as produced by dw_mca_block) to CSV with
// columns window_id, slot_id, head, x, y, z.
void dump_sampling_grid(const Tensor& coords, const std::string& path);

}  // namespace defxattn

#endif  // DEFXATTN_ATTENTION_HPP_
