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
#include "defxattn/complexity.hpp"

#include <algorithm>
#include <cstdarg>
#include <cstdio>

#include "defxattn/errors.hpp"

namespace defxattn {

namespace {

std::string triple_str(const std::array<int64_t, 3>& t) {
  return std::to_string(t[0]) + "x" + std::to_string(t[1]) + "x" +
         std::to_string(t[2]);
}

void append(std::string& out, const char* fmt, ...) {
  char buf[256];
  va_list args;
  va_start(args, fmt);
  std::vsnprintf(buf, sizeof(buf), fmt, args);
  va_end(args);
  out += buf;
}

}  // namespace

const char* mechanism_name(Mechanism mech) {
  switch (mech) {
    case Mechanism::kFixedWindowSA:
      return "fixed_window_sa";
    case Mechanism::kExpandedWindowCA:
      return "expanded_window_ca";
    case Mechanism::kDwMca:
      return "dw_mca";
  }
  return "unknown";
}

int64_t ComplexityConfig::base_tokens() const {
  return window[0] * window[1] * window[2];
}

int64_t ComplexityConfig::search_tokens() const {
  return expand[0] * expand[1] * expand[2] * base_tokens();
}

void ComplexityConfig::validate() const {
  for (int a = 0; a < 3; ++a) {
    if (window[a] < 1) {
      throw ConfigError("complexity config: window extents must be >= 1, got " +
                        triple_str(window));
    }
    if (expand[a] < 1 || expand[a] % 2 == 0) {
      throw ConfigError(
          "complexity config: expansion factors must be odd and >= 1, got " +
          triple_str(expand));
    }
  }
  if (channels < 1 || n_heads < 1 || channels % n_heads != 0) {
    throw ConfigError("complexity config: channels " +
                      std::to_string(channels) +
                      " must be a positive multiple of n_heads " +
                      std::to_string(n_heads));
  }
  if (offset_kernel < 1 || offset_kernel % 2 == 0) {
    throw ConfigError("complexity config: offset kernel must be odd, got " +
                      std::to_string(offset_kernel));
  }
}

uint64_t FlopReport::total() const {
  return qkv_proj + scores + attn_v + offset_depthwise + offset_pointwise +
         sampling;
}

uint64_t FlopReport::score_av() const { return scores + attn_v; }

uint64_t FlopReport::claim_total() const { return scores + offset_depthwise; }

FlopReport attention_flops(Mechanism mech, const ComplexityConfig& cfg) {
  cfg.validate();
  const uint64_t n = static_cast<uint64_t>(cfg.base_tokens());
  const uint64_t c = static_cast<uint64_t>(cfg.channels);
  const uint64_t h = static_cast<uint64_t>(cfg.n_heads);
  const uint64_t m = static_cast<uint64_t>(cfg.offset_kernel);
  const uint64_t ns = mech == Mechanism::kExpandedWindowCA
                          ? static_cast<uint64_t>(cfg.search_tokens())
                          : n;
  FlopReport rep;
  rep.qkv_proj = 3 * n * c * c;
  rep.scores = n * ns * c;
  rep.attn_v = n * ns * c;
  if (mech == Mechanism::kDwMca) {
    rep.offset_depthwise = n * c * m * m * m;
    rep.offset_pointwise = 3 * h * n * c;
    rep.sampling = 8 * n * c;
  }
  return rep;
}

uint64_t grid_score_av(Mechanism mech, const ComplexityConfig& cfg) {
  cfg.validate();
  for (int a = 0; a < 3; ++a) {
    if (cfg.grid[a] < 1) {
      throw ConfigError("grid counts need grid extents >= 1, got " +
                        triple_str(cfg.grid));
    }
  }
  const uint64_t n = static_cast<uint64_t>(cfg.base_tokens());
  const uint64_t c = static_cast<uint64_t>(cfg.channels);
  int64_t blocks[3];
  for (int a = 0; a < 3; ++a) {
    blocks[a] = (cfg.grid[a] + cfg.window[a] - 1) / cfg.window[a];
  }
  if (mech != Mechanism::kExpandedWindowCA) {
    const uint64_t n_windows =
        static_cast<uint64_t>(blocks[0] * blocks[1] * blocks[2]);
    return 2 * n_windows * n * n * c;
  }
  for (int a = 0; a < 3; ++a) {
    if (cfg.grid[a] % cfg.window[a] != 0) {
      throw ConfigError(
          "expanded-window grid counts need a window-divisible grid, got " +
          triple_str(cfg.grid) + " with window " + triple_str(cfg.window));
    }
  }
  uint64_t pairs = 0;
  for (int64_t b0 = 0; b0 < blocks[0]; ++b0) {
    for (int64_t b1 = 0; b1 < blocks[1]; ++b1) {
      for (int64_t b2 = 0; b2 < blocks[2]; ++b2) {
        const int64_t block3[3] = {b0, b1, b2};
        uint64_t keys = 1;
        for (int a = 0; a < 3; ++a) {
          const int64_t start =
              block3[a] * cfg.window[a] -
              ((cfg.expand[a] - 1) / 2) * cfg.window[a];
          const int64_t lo = std::max<int64_t>(0, start);
          const int64_t hi = std::min<int64_t>(
              cfg.grid[a], start + cfg.expand[a] * cfg.window[a]);
          keys *= static_cast<uint64_t>(hi - lo);
        }
        pairs += keys;
      }
    }
  }
  return 2 * n * pairs * c;
}

std::string complexity_report_csv(const std::vector<ComplexityConfig>& configs) {
  std::string out =
      "config,window,channels,heads,offset_kernel,expand,mechanism,"
      "qkv_proj,scores,attn_v,offset_depthwise,offset_pointwise,sampling,"
      "total,score_av,claim_total,ratio_total,ratio_score_av,ratio_claim\n";
  const Mechanism mechs[3] = {Mechanism::kFixedWindowSA,
                              Mechanism::kExpandedWindowCA, Mechanism::kDwMca};
  for (size_t i = 0; i < configs.size(); ++i) {
    const ComplexityConfig& cfg = configs[i];
    const FlopReport base = attention_flops(Mechanism::kFixedWindowSA, cfg);
    for (Mechanism mech : mechs) {
      const FlopReport rep = attention_flops(mech, cfg);
      append(out, "%zu,%s,%lld,%lld,%lld,%s,%s,", i, triple_str(cfg.window).c_str(),
             static_cast<long long>(cfg.channels),
             static_cast<long long>(cfg.n_heads),
             static_cast<long long>(cfg.offset_kernel),
             triple_str(cfg.expand).c_str(), mechanism_name(mech));
      append(out, "%llu,%llu,%llu,%llu,%llu,%llu,%llu,%llu,%llu,",
             static_cast<unsigned long long>(rep.qkv_proj),
             static_cast<unsigned long long>(rep.scores),
             static_cast<unsigned long long>(rep.attn_v),
             static_cast<unsigned long long>(rep.offset_depthwise),
             static_cast<unsigned long long>(rep.offset_pointwise),
             static_cast<unsigned long long>(rep.sampling),
             static_cast<unsigned long long>(rep.total()),
             static_cast<unsigned long long>(rep.score_av()),
             static_cast<unsigned long long>(rep.claim_total()));
      append(out, "%.17g,%.17g,%.17g\n",
             static_cast<double>(rep.total()) / static_cast<double>(base.total()),
             static_cast<double>(rep.score_av()) /
                 static_cast<double>(base.score_av()),
             static_cast<double>(rep.claim_total()) /
                 static_cast<double>(base.claim_total()));
    }
  }
  return out;
}

}  // namespace defxattn
