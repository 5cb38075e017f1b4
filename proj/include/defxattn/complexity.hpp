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
#ifndef DEFXATTN_COMPLEXITY_HPP_
#define DEFXATTN_COMPLEXITY_HPP_

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace defxattn {

// The three attention mechanisms the ledger compares.
enum class Mechanism { kFixedWindowSA, kExpandedWindowCA, kDwMca };

const char* mechanism_name(Mechanism mech);

// One attention configuration to account for.  `grid` is only needed by the
// grid-level counts; the per-window ledger ignores it.
struct ComplexityConfig {
  std::array<int64_t, 3> window{5, 6, 7};
  std::array<int64_t, 3> expand{1, 1, 1};  // search-box growth per axis
  int64_t channels = 96;
  int64_t n_heads = 4;
  int64_t offset_kernel = 5;
  std::array<int64_t, 3> grid{0, 0, 0};

  int64_t base_tokens() const;    // tokens per window
  int64_t search_tokens() const;  // tokens per unclamped search box
  void validate() const;          // throws ConfigError listing the problem
};

// Exact per-window multiply counts for one attention layer.  Conventions:
// multiplies only (the paired adds ride along), softmax exponentials and
// normalizations excluded, and each token's q/k/v projection counted once —
// overlapping search boxes reuse their neighbours' projections, matching how
// the layer is actually evaluated.
struct FlopReport {
  uint64_t qkv_proj = 0;
  uint64_t scores = 0;
  uint64_t attn_v = 0;
  uint64_t offset_depthwise = 0;
  uint64_t offset_pointwise = 0;
  uint64_t sampling = 0;

  // Sum of every component above.
  uint64_t total() const;
  // Both halves of the attention core (QK^T plus attention*V).
  uint64_t score_av() const;
  // The two leading terms of the factor-two cost claim: the attention core
  // counted once at big-O granularity plus the depthwise offset convolution.
  uint64_t claim_total() const;
};

FlopReport attention_flops(Mechanism mech, const ComplexityConfig& cfg);

// Score/AV multiply count for one layer executed on cfg.grid: windows are
// padded up (pad slots attend like real ones before masking), and expanded
// search boxes are clamped at the volume border.  These are the numbers the
// runtime multiply counters must reproduce exactly.
uint64_t grid_score_av(Mechanism mech, const ComplexityConfig& cfg);

// CSV table, one row per mechanism per config, with per-component counts and
// ratios against the fixed-window baseline.  An empty config list yields just
// the header row.
std::string complexity_report_csv(const std::vector<ComplexityConfig>& configs);

}  // namespace defxattn

#endif  // DEFXATTN_COMPLEXITY_HPP_
