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
#include "defxattn/attention.hpp"

#include <cmath>
#include <cstdio>

#include "defxattn/errors.hpp"

namespace defxattn {

namespace {

constexpr double kMaskValue = -1e9;

MultiplyCounters g_multiply_counters;

void require_grid(const TokenField& x, const WindowLayout& layout,
                  const char* op) {
  if (x.grid() != layout.grid) {
    throw ShapeError(std::string(op) + ": field grid " + shape_str(x.data.shape()) +
                     " does not match layout grid (" +
                     std::to_string(layout.grid[0]) + "," +
                     std::to_string(layout.grid[1]) + "," +
                     std::to_string(layout.grid[2]) + ")");
  }
}

void require_block_inputs(const TokenField& x_b, const TokenField& x_r,
                          const AttentionParams& p, const WindowLayout& layout,
                          const char* op) {
  require_grid(x_b, layout, op);
  require_grid(x_r, layout, op);
  if (x_b.channels() != p.channels || x_r.channels() != p.channels) {
    throw ShapeError(std::string(op) + ": channel count mismatch with params");
  }
  if (p.channels % p.n_heads != 0) {
    throw ConfigError(std::string(op) + ": channels " +
                      std::to_string(p.channels) + " not divisible by " +
                      std::to_string(p.n_heads) + " heads");
  }
}

// Per-axis contiguity segment of an original-frame position.  Positions in
// different segments were not neighbors before the cyclic roll, so attention
// between them is masked in shifted layouts.
int seg_of(int64_t pos, int64_t padded, int64_t window, int64_t shift) {
  if (shift == 0) return 0;
  if (pos < padded - window) return 0;
  if (pos < padded - shift) return 1;
  return 2;
}

// softmax(Q Kᵀ / sqrt(dk) [+ mask]) V with multiply tallies.
Tensor attention_core(const Tensor& q, const Tensor& k, const Tensor& v,
                      const Tensor* mask) {
  const int64_t n = q.extent(0);
  const int64_t nq = q.extent(1);
  const int64_t dk = q.extent(2);
  const int64_t nk = k.extent(1);
  const uint64_t mults = static_cast<uint64_t>(n * nq * nk * dk);
  g_multiply_counters.score_mults += mults;
  g_multiply_counters.av_mults += mults;
  Tensor scores = scale(matmul(q, permute(k, {0, 2, 1})),
                        1.0 / std::sqrt(static_cast<double>(dk)));
  if (mask != nullptr) scores = add(scores, *mask);
  return matmul(softmax(scores, 2), v);
}

// Splits [*, *, C] tensors into heads along the channel axis and runs the
// attention core per head.
Tensor heads_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                       const Tensor* mask, int64_t n_heads) {
  const int64_t c = q.extent(2);
  const int64_t dk = c / n_heads;
  std::vector<Tensor> outs;
  outs.reserve(static_cast<size_t>(n_heads));
  for (int64_t h = 0; h < n_heads; ++h) {
    Tensor qh = narrow(q, 2, h * dk, dk);
    Tensor kh = narrow(k, 2, h * dk, dk);
    Tensor vh = narrow(v, 2, h * dk, dk);
    outs.push_back(attention_core(qh, kh, vh, mask));
  }
  return n_heads == 1 ? outs[0] : concat(outs, 2);
}

// Output projection, residual to the block input, then LN + 2-layer GELU MLP
// with a second residual.  All tensors are token-major [N, C].
Tensor block_tail(const Tensor& x_flat, const Tensor& merged,
                  const AttentionParams& p) {
  Tensor y = add(x_flat, matmul(merged, p.out_proj));
  Tensor normed = layernorm(y, p.ln2_gamma, p.ln2_beta);
  Tensor hidden = gelu(add_last_bias(matmul(normed, p.mlp_w1), p.mlp_b1));
  Tensor ff = add_last_bias(matmul(hidden, p.mlp_w2), p.mlp_b2);
  return add(y, ff);
}

Tensor merge_windows(const Tensor& windows, const WindowLayout& layout,
                     int64_t channels) {
  Tensor flat = reshape(windows, {layout.n_windows * layout.slots, channels});
  return gather_rows(flat, layout.scatter);  // [grid tokens, C]
}

}  // namespace

TokenField::TokenField(Tensor t) : data(std::move(t)) {
  if (data.rank() != 4) {
    throw ShapeError("TokenField requires [H,W,D,C] data, got " +
                     shape_str(data.shape()));
  }
}

MultiplyCounters& multiply_counters() { return g_multiply_counters; }
void reset_multiply_counters() { g_multiply_counters = MultiplyCounters{}; }

WindowLayout make_layout(std::array<int64_t, 3> grid,
                         std::array<int64_t, 3> window,
                         std::array<int64_t, 3> shift) {
  for (int a = 0; a < 3; ++a) {
    if (grid[a] < 1 || window[a] < 1) {
      throw ConfigError("make_layout: grid and window extents must be >= 1");
    }
    if (shift[a] < 0 || shift[a] >= window[a]) {
      throw ConfigError("make_layout: shift " + std::to_string(shift[a]) +
                        " outside [0, window) on axis " + std::to_string(a));
    }
  }
  WindowLayout layout;
  layout.grid = grid;
  layout.window = window;
  layout.shift = shift;
  for (int a = 0; a < 3; ++a) {
    layout.blocks[a] = (grid[a] + window[a] - 1) / window[a];
    layout.padded[a] = layout.blocks[a] * window[a];
  }
  layout.n_windows = layout.blocks[0] * layout.blocks[1] * layout.blocks[2];
  layout.slots = window[0] * window[1] * window[2];

  const int64_t total = layout.n_windows * layout.slots;
  layout.gather.assign(static_cast<size_t>(total), -1);
  layout.slot_coords.assign(static_cast<size_t>(total * 3), 0.0);
  std::vector<int32_t> region(static_cast<size_t>(total), -1);

  for (int64_t w0 = 0; w0 < layout.blocks[0]; ++w0) {
    for (int64_t w1 = 0; w1 < layout.blocks[1]; ++w1) {
      for (int64_t w2 = 0; w2 < layout.blocks[2]; ++w2) {
        const int64_t wflat = (w0 * layout.blocks[1] + w1) * layout.blocks[2] + w2;
        for (int64_t s0 = 0; s0 < window[0]; ++s0) {
          for (int64_t s1 = 0; s1 < window[1]; ++s1) {
            for (int64_t s2 = 0; s2 < window[2]; ++s2) {
              const int64_t sflat = (s0 * window[1] + s1) * window[2] + s2;
              const int64_t idx = wflat * layout.slots + sflat;
              const int64_t pc[3] = {w0 * window[0] + s0, w1 * window[1] + s1,
                                     w2 * window[2] + s2};
              int64_t oc[3];
              bool in_grid = true;
              for (int a = 0; a < 3; ++a) {
                oc[a] = (pc[a] + shift[a]) % layout.padded[a];
                layout.slot_coords[static_cast<size_t>(idx * 3 + a)] =
                    static_cast<double>(oc[a]);
                in_grid = in_grid && oc[a] < grid[a];
              }
              if (in_grid) {
                layout.gather[static_cast<size_t>(idx)] =
                    (oc[0] * grid[1] + oc[1]) * grid[2] + oc[2];
                const int r0 = seg_of(oc[0], layout.padded[0], window[0], shift[0]);
                const int r1 = seg_of(oc[1], layout.padded[1], window[1], shift[1]);
                const int r2 = seg_of(oc[2], layout.padded[2], window[2], shift[2]);
                region[static_cast<size_t>(idx)] = (r0 * 3 + r1) * 3 + r2;
              }
            }
          }
        }
      }
    }
  }

  const int64_t raw_tokens = grid[0] * grid[1] * grid[2];
  layout.scatter.assign(static_cast<size_t>(raw_tokens), 0);
  for (int64_t r0 = 0; r0 < grid[0]; ++r0) {
    for (int64_t r1 = 0; r1 < grid[1]; ++r1) {
      for (int64_t r2 = 0; r2 < grid[2]; ++r2) {
        const int64_t rc[3] = {r0, r1, r2};
        int64_t wflat = 0;
        int64_t sflat = 0;
        for (int a = 0; a < 3; ++a) {
          const int64_t pc =
              (rc[a] - shift[a] + layout.padded[a]) % layout.padded[a];
          wflat = wflat * layout.blocks[a] + pc / window[a];
          sflat = sflat * window[a] + pc % window[a];
        }
        layout.scatter[static_cast<size_t>((r0 * grid[1] + r1) * grid[2] + r2)] =
            wflat * layout.slots + sflat;
      }
    }
  }

  std::vector<double> mask_vals(
      static_cast<size_t>(layout.n_windows * layout.slots * layout.slots));
  for (int64_t w = 0; w < layout.n_windows; ++w) {
    for (int64_t i = 0; i < layout.slots; ++i) {
      const int32_t ri = region[static_cast<size_t>(w * layout.slots + i)];
      for (int64_t j = 0; j < layout.slots; ++j) {
        const int32_t rj = region[static_cast<size_t>(w * layout.slots + j)];
        const bool allowed = rj >= 0 && ri == rj;
        mask_vals[static_cast<size_t>((w * layout.slots + i) * layout.slots + j)] =
            allowed ? 0.0 : kMaskValue;
      }
    }
  }
  layout.mask = Tensor::create({layout.n_windows, layout.slots, layout.slots},
                               std::move(mask_vals));
  return layout;
}

AttentionParams make_attention_params(ParameterStore& store,
                                      const std::string& prefix,
                                      int64_t channels, int64_t n_heads,
                                      int64_t offset_kernel, Rng& rng) {
  if (channels < 1 || n_heads < 1 || channels % n_heads != 0) {
    throw ConfigError("attention params: channels " + std::to_string(channels) +
                      " must be a positive multiple of n_heads " +
                      std::to_string(n_heads));
  }
  if (offset_kernel < 1 || offset_kernel % 2 == 0) {
    throw ConfigError("attention params: offset kernel must be odd, got " +
                      std::to_string(offset_kernel));
  }
  AttentionParams p;
  p.channels = channels;
  p.n_heads = n_heads;
  p.offset_kernel = offset_kernel;
  const int64_t c = channels;
  const int64_t m = offset_kernel;
  const int64_t oc = 3 * n_heads;
  p.u_q = store.create_gauss(prefix + ".u_q", {c, c}, c, 1.0, rng);
  p.u_k = store.create_gauss(prefix + ".u_k", {c, c}, c, 1.0, rng);
  p.u_v = store.create_gauss(prefix + ".u_v", {c, c}, c, 1.0, rng);
  p.out_proj = store.create_gauss(prefix + ".out_proj", {c, c}, c, 1.0, rng);
  p.ln_b_gamma = store.create_full(prefix + ".ln_b.gamma", {c}, 1.0);
  p.ln_b_beta = store.create_zeros(prefix + ".ln_b.beta", {c});
  p.ln_r_gamma = store.create_full(prefix + ".ln_r.gamma", {c}, 1.0);
  p.ln_r_beta = store.create_zeros(prefix + ".ln_r.beta", {c});
  p.ln2_gamma = store.create_full(prefix + ".ln2.gamma", {c}, 1.0);
  p.ln2_beta = store.create_zeros(prefix + ".ln2.beta", {c});
  p.mlp_w1 = store.create_gauss(prefix + ".mlp.w1", {c, 4 * c}, c, 1.0, rng);
  p.mlp_b1 = store.create_zeros(prefix + ".mlp.b1", {4 * c});
  p.mlp_w2 =
      store.create_gauss(prefix + ".mlp.w2", {4 * c, c}, 4 * c, 1.0, rng);
  p.mlp_b2 = store.create_zeros(prefix + ".mlp.b2", {c});
  p.offset_dw = store.create_gauss(prefix + ".offset.dw", {c, 1, m, m, m},
                                   m * m * m, 1.0, rng);
  p.offset_pw = store.create_zeros(prefix + ".offset.pw", {oc, c, 1, 1, 1});
  p.offset_pw_bias = store.create_zeros(prefix + ".offset.pw_bias", {oc});
  return p;
}

Tensor window_partition(const TokenField& x, const WindowLayout& layout) {
  require_grid(x, layout, "window_partition");
  const int64_t c = x.channels();
  Tensor flat = reshape(x.data, {x.tokens(), c});
  Tensor rows = gather_rows(flat, layout.gather);
  return reshape(rows, {layout.n_windows, layout.slots, c});
}

TokenField window_reverse(const Tensor& windows, const WindowLayout& layout) {
  if (windows.rank() != 3 || windows.extent(0) != layout.n_windows ||
      windows.extent(1) != layout.slots) {
    throw ShapeError("window_reverse: windows " + shape_str(windows.shape()) +
                     " do not match layout (" +
                     std::to_string(layout.n_windows) + " windows of " +
                     std::to_string(layout.slots) + " slots)");
  }
  const int64_t c = windows.extent(2);
  Tensor merged = merge_windows(windows, layout, c);
  return TokenField(
      reshape(merged, {layout.grid[0], layout.grid[1], layout.grid[2], c}));
}

TokenField cyclic_shift(const TokenField& x, std::array<int64_t, 3> shifts,
                        bool inverse) {
  const auto g = x.grid();
  int64_t s[3];
  for (int a = 0; a < 3; ++a) {
    s[a] = ((shifts[a] % g[a]) + g[a]) % g[a];
    if (inverse) s[a] = (g[a] - s[a]) % g[a];
  }
  std::vector<int64_t> index(static_cast<size_t>(x.tokens()));
  for (int64_t i = 0; i < g[0]; ++i) {
    for (int64_t j = 0; j < g[1]; ++j) {
      for (int64_t k = 0; k < g[2]; ++k) {
        const int64_t src = (((i + s[0]) % g[0]) * g[1] + (j + s[1]) % g[1]) *
                                g[2] +
                            (k + s[2]) % g[2];
        index[static_cast<size_t>((i * g[1] + j) * g[2] + k)] = src;
      }
    }
  }
  Tensor flat = reshape(x.data, {x.tokens(), x.channels()});
  return TokenField(
      reshape(gather_rows(flat, index), {g[0], g[1], g[2], x.channels()}));
}

Tensor scaled_dot_product_attention(const Tensor& q, const Tensor& k,
                                    const Tensor& v) {
  if (q.rank() != 3 || k.rank() != 3 || v.rank() != 3) {
    throw ShapeError("attention operands must be [n, tokens, dim]");
  }
  if (q.extent(2) != k.extent(2)) {
    throw ShapeError("attention: query dim " + std::to_string(q.extent(2)) +
                     " != key dim " + std::to_string(k.extent(2)));
  }
  if (k.extent(1) != v.extent(1) || k.extent(0) != v.extent(0) ||
      q.extent(0) != k.extent(0)) {
    throw ShapeError("attention: key/value window shapes disagree");
  }
  return attention_core(q, k, v, nullptr);
}

OffsetField offset_network_forward(const TokenField& x_b,
                                   const TokenField& x_r,
                                   const AttentionParams& params) {
  if (x_b.data.shape() != x_r.data.shape()) {
    throw ShapeError("offset network: stream shapes differ, " +
                     shape_str(x_b.data.shape()) + " vs " +
                     shape_str(x_r.data.shape()));
  }
  if (x_b.channels() != params.channels) {
    throw ShapeError("offset network: channel mismatch with params");
  }
  const int64_t m = params.offset_kernel;
  Tensor summed = add(x_b.data, x_r.data);
  Tensor chw = permute(summed, {3, 0, 1, 2});
  Tensor depth = conv3d(chw, params.offset_dw, 1, (m - 1) / 2, params.channels);
  Tensor point = conv3d(gelu(depth), params.offset_pw, 1, 0, 1);
  Tensor biased = add_channel_bias(point, params.offset_pw_bias);
  return OffsetField{permute(biased, {1, 2, 3, 0})};
}

Tensor deformable_window_sample(const TokenField& x_r,
                                const OffsetField& offsets,
                                const WindowLayout& layout, int64_t head,
                                Tensor* coords_out) {
  require_grid(x_r, layout, "deformable_window_sample");
  if (offsets.data.rank() != 4 || offsets.data.extent(0) != layout.grid[0] ||
      offsets.data.extent(1) != layout.grid[1] ||
      offsets.data.extent(2) != layout.grid[2]) {
    throw ShapeError("deformable_window_sample: offset grid mismatch");
  }
  const int64_t off_c = offsets.data.extent(3);
  if (off_c % 3 != 0) {
    throw ShapeError("deformable_window_sample: offset channels must be 3*heads");
  }
  const int64_t n_heads = off_c / 3;
  if (head < 0 || head >= n_heads) {
    throw ShapeError("deformable_window_sample: head index out of range");
  }
  if (x_r.channels() % n_heads != 0) {
    throw ConfigError("deformable_window_sample: channels not divisible by heads");
  }
  const int64_t dk = x_r.channels() / n_heads;
  Tensor off_flat = reshape(offsets.data, {x_r.tokens(), off_c});
  Tensor off_win = reshape(gather_rows(off_flat, layout.gather),
                           {layout.n_windows, layout.slots, off_c});
  Tensor base = Tensor::create({layout.n_windows, layout.slots, 3},
                               std::vector<double>(layout.slot_coords));
  Tensor coords = add(base, narrow(off_win, 2, 3 * head, 3));
  if (coords_out != nullptr) {
    *coords_out = Tensor::create(
        coords.shape(),
        std::vector<double>(coords.data().begin(), coords.data().end()));
  }
  Tensor head_field = narrow(x_r.data, 3, head * dk, dk);
  return grid_sample(head_field, coords);
}

TokenField dw_mca_block(const TokenField& x_b, const TokenField& x_r,
                        const AttentionParams& params,
                        const WindowLayout& layout, CrossMode mode,
                        Tensor* sample_coords_out) {
  require_block_inputs(x_b, x_r, params, layout, "dw_mca_block");
  const int64_t c = params.channels;
  const int64_t n = x_b.tokens();
  Tensor xb_flat = reshape(x_b.data, {n, c});
  Tensor xr_flat = reshape(x_r.data, {n, c});
  Tensor nb = layernorm(xb_flat, params.ln_b_gamma, params.ln_b_beta);
  Tensor nr = layernorm(xr_flat, params.ln_r_gamma, params.ln_r_beta);
  Tensor k_full = matmul(nb, params.u_k);
  Tensor v_full = matmul(nb, params.u_v);
  Tensor q_full = matmul(nr, params.u_q);
  Tensor k_win = reshape(gather_rows(k_full, layout.gather),
                         {layout.n_windows, layout.slots, c});
  Tensor v_win = reshape(gather_rows(v_full, layout.gather),
                         {layout.n_windows, layout.slots, c});

  Tensor windows;
  if (mode == CrossMode::kFixedWindow) {
    Tensor q_win = reshape(gather_rows(q_full, layout.gather),
                           {layout.n_windows, layout.slots, c});
    windows = heads_attention(q_win, k_win, v_win, &layout.mask, params.n_heads);
  } else {
    TokenField nb_field(reshape(nb, x_b.data.shape()));
    TokenField nr_field(reshape(nr, x_r.data.shape()));
    OffsetField offsets = offset_network_forward(nb_field, nr_field, params);
    TokenField q_field(reshape(q_full, x_r.data.shape()));
    const int64_t dk = c / params.n_heads;
    std::vector<Tensor> outs;
    std::vector<Tensor> coord_parts;
    outs.reserve(static_cast<size_t>(params.n_heads));
    for (int64_t h = 0; h < params.n_heads; ++h) {
      Tensor head_coords;
      Tensor qh = deformable_window_sample(
          q_field, offsets, layout, h,
          sample_coords_out != nullptr ? &head_coords : nullptr);
      Tensor kh = narrow(k_win, 2, h * dk, dk);
      Tensor vh = narrow(v_win, 2, h * dk, dk);
      outs.push_back(attention_core(qh, kh, vh, &layout.mask));
      if (sample_coords_out != nullptr) {
        coord_parts.push_back(
            reshape(head_coords, {layout.n_windows, layout.slots, 1, 3}));
      }
    }
    windows = params.n_heads == 1 ? outs[0] : concat(outs, 2);
    if (sample_coords_out != nullptr) {
      *sample_coords_out = coord_parts.size() == 1 ? coord_parts[0]
                                                   : concat(coord_parts, 2);
    }
  }

  Tensor merged = merge_windows(windows, layout, c);
  Tensor out_flat = block_tail(xb_flat, merged, params);
  return TokenField(reshape(out_flat, x_b.data.shape()));
}

TokenField windowed_sa_block(const TokenField& x, const AttentionParams& params,
                             const WindowLayout& layout) {
  require_block_inputs(x, x, params, layout, "windowed_sa_block");
  const int64_t c = params.channels;
  Tensor x_flat = reshape(x.data, {x.tokens(), c});
  Tensor normed = layernorm(x_flat, params.ln_b_gamma, params.ln_b_beta);
  Tensor q_win = reshape(gather_rows(matmul(normed, params.u_q), layout.gather),
                         {layout.n_windows, layout.slots, c});
  Tensor k_win = reshape(gather_rows(matmul(normed, params.u_k), layout.gather),
                         {layout.n_windows, layout.slots, c});
  Tensor v_win = reshape(gather_rows(matmul(normed, params.u_v), layout.gather),
                         {layout.n_windows, layout.slots, c});
  Tensor windows =
      heads_attention(q_win, k_win, v_win, &layout.mask, params.n_heads);
  Tensor merged = merge_windows(windows, layout, c);
  Tensor out_flat = block_tail(x_flat, merged, params);
  return TokenField(reshape(out_flat, x.data.shape()));
}

TokenField expanded_window_ca(const TokenField& x_b, const TokenField& x_r,
                              const AttentionParams& params,
                              const WindowLayout& layout, int64_t alpha,
                              int64_t beta, int64_t gamma) {
  require_block_inputs(x_b, x_r, params, layout, "expanded_window_ca");
  const int64_t factors[3] = {alpha, beta, gamma};
  for (int64_t f : factors) {
    if (f < 1) {
      throw ConfigError("expanded_window_ca: expansion factors must be >= 1");
    }
    if (f % 2 == 0) {
      throw ConfigError(
          "expanded_window_ca: expansion factors must be odd (centered search "
          "window)");
    }
  }
  for (int a = 0; a < 3; ++a) {
    if (layout.shift[a] != 0) {
      throw ConfigError("expanded_window_ca: layout must be unshifted");
    }
    if (layout.grid[a] % layout.window[a] != 0) {
      throw ConfigError(
          "expanded_window_ca: grid must be divisible by the window");
    }
  }
  const int64_t c = params.channels;
  const int64_t n = x_b.tokens();
  Tensor xb_flat = reshape(x_b.data, {n, c});
  Tensor xr_flat = reshape(x_r.data, {n, c});
  Tensor nb = layernorm(xb_flat, params.ln_b_gamma, params.ln_b_beta);
  Tensor nr = layernorm(xr_flat, params.ln_r_gamma, params.ln_r_beta);
  Tensor k_full = matmul(nb, params.u_k);
  Tensor v_full = matmul(nb, params.u_v);
  Tensor q_full = matmul(nr, params.u_q);
  Tensor q_win = reshape(gather_rows(q_full, layout.gather),
                         {layout.n_windows, layout.slots, c});

  std::vector<Tensor> window_outs;
  window_outs.reserve(static_cast<size_t>(layout.n_windows));
  for (int64_t w0 = 0; w0 < layout.blocks[0]; ++w0) {
    for (int64_t w1 = 0; w1 < layout.blocks[1]; ++w1) {
      for (int64_t w2 = 0; w2 < layout.blocks[2]; ++w2) {
        const int64_t wflat =
            (w0 * layout.blocks[1] + w1) * layout.blocks[2] + w2;
        const int64_t blocks3[3] = {w0, w1, w2};
        int64_t lo[3], hi[3];
        for (int a = 0; a < 3; ++a) {
          const int64_t start = blocks3[a] * layout.window[a] -
                                ((factors[a] - 1) / 2) * layout.window[a];
          lo[a] = std::max<int64_t>(0, start);
          hi[a] = std::min<int64_t>(layout.grid[a],
                                    start + factors[a] * layout.window[a]);
        }
        std::vector<int64_t> keys;
        keys.reserve(
            static_cast<size_t>((hi[0] - lo[0]) * (hi[1] - lo[1]) * (hi[2] - lo[2])));
        for (int64_t i = lo[0]; i < hi[0]; ++i) {
          for (int64_t j = lo[1]; j < hi[1]; ++j) {
            for (int64_t k = lo[2]; k < hi[2]; ++k) {
              keys.push_back((i * layout.grid[1] + j) * layout.grid[2] + k);
            }
          }
        }
        const int64_t ns = static_cast<int64_t>(keys.size());
        Tensor kw = reshape(gather_rows(k_full, keys), {1, ns, c});
        Tensor vw = reshape(gather_rows(v_full, keys), {1, ns, c});
        Tensor qw = narrow(q_win, 0, wflat, 1);
        window_outs.push_back(
            heads_attention(qw, kw, vw, nullptr, params.n_heads));
      }
    }
  }
  Tensor windows =
      window_outs.size() == 1 ? window_outs[0] : concat(window_outs, 0);
  Tensor merged = merge_windows(windows, layout, c);
  Tensor out_flat = block_tail(xb_flat, merged, params);
  return TokenField(reshape(out_flat, x_b.data.shape()));
}

void dump_sampling_grid(const Tensor& coords, const std::string& path) {
  if (coords.rank() != 4 || coords.extent(3) != 3) {
    throw ShapeError("dump_sampling_grid: coords must be [windows,slots,heads,3]");
  }
  std::FILE* f = std::fopen(path.c_str(), "wb");
  if (f == nullptr) {
    throw IoError("cannot open " + path + " for writing");
  }
  std::fprintf(f, "window_id,slot_id,head,x,y,z\n");
  const int64_t n_w = coords.extent(0);
  const int64_t slots = coords.extent(1);
  const int64_t heads = coords.extent(2);
  const double* p = coords.data().data();
  for (int64_t w = 0; w < n_w; ++w) {
    for (int64_t s = 0; s < slots; ++s) {
      for (int64_t h = 0; h < heads; ++h) {
        const double* v = p + ((w * slots + s) * heads + h) * 3;
        std::fprintf(f, "%lld,%lld,%lld,%.17g,%.17g,%.17g\n",
                     static_cast<long long>(w), static_cast<long long>(s),
                     static_cast<long long>(h), v[0], v[1], v[2]);
      }
    }
  }
  std::fclose(f);
}

}  // namespace defxattn
