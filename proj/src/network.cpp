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
#include "defxattn/network.hpp"

#include <string>

#include "defxattn/errors.hpp"
#include "defxattn/ops.hpp"

namespace defxattn {

namespace {

bool is_power_of_two(int64_t v) { return v >= 1 && (v & (v - 1)) == 0; }

std::string triple_str(const std::array<int64_t, 3>& t) {
  return std::to_string(t[0]) + "x" + std::to_string(t[1]) + "x" +
         std::to_string(t[2]);
}

void require_volume(const Tensor& v, const std::array<int64_t, 3>& image,
                    const char* what) {
  if (v.rank() != 4 || v.extent(0) != 1) {
    throw ShapeError(std::string(what) + " must be [1,H,W,D], got " +
                     shape_str(v.shape()));
  }
  if (v.extent(1) != image[0] || v.extent(2) != image[1] ||
      v.extent(3) != image[2]) {
    throw ShapeError(std::string(what) + " extents " + shape_str(v.shape()) +
                     " do not match configured image " + triple_str(image));
  }
}

Tensor to_channel_major(const Tensor& field) {  // [H,W,D,C] -> [C,H,W,D]
  return permute(field, {3, 0, 1, 2});
}

Tensor to_channel_last(const Tensor& field) {  // [C,H,W,D] -> [H,W,D,C]
  return permute(field, {1, 2, 3, 0});
}

Tensor conv_block(const Tensor& x, const Tensor& w, const Tensor& b) {
  return leaky_relu(add_channel_bias(conv3d(x, w, 1, 1, 1), b), 0.2);
}

}  // namespace

int64_t ModelConfig::n_stages() const {
  return static_cast<int64_t>(stage_depths.size());
}

int64_t ModelConfig::stage_channels(int64_t s) const {
  return embed_dim << s;
}

std::array<int64_t, 3> ModelConfig::stage_grid(int64_t s) const {
  std::array<int64_t, 3> g;
  for (int a = 0; a < 3; ++a) g[a] = image[a] / patch_size;
  for (int64_t i = 0; i < s; ++i) {
    for (int a = 0; a < 3; ++a) g[a] = (g[a] + 1) / 2;
  }
  return g;
}

int64_t ModelConfig::upsample_steps() const {
  int64_t steps = 0;
  for (int64_t p = patch_size; p > 1; p /= 2) ++steps;
  return steps;
}

int64_t ModelConfig::decoder_steps() const {
  return n_stages() - 1 + upsample_steps();
}

void ModelConfig::validate() const {
  std::vector<std::string> problems;
  for (int a = 0; a < 3; ++a) {
    if (image[a] < 1) {
      problems.push_back("image extents must be >= 1, got " +
                         triple_str(image));
      break;
    }
  }
  if (!is_power_of_two(patch_size)) {
    problems.push_back("patch_size must be a power of two, got " +
                       std::to_string(patch_size));
  } else {
    for (int a = 0; a < 3; ++a) {
      if (image[a] % patch_size != 0) {
        problems.push_back("image extents " + triple_str(image) +
                           " must be divisible by patch_size " +
                           std::to_string(patch_size));
        break;
      }
    }
  }
  if (embed_dim < 1) {
    problems.push_back("embed_dim must be >= 1, got " +
                       std::to_string(embed_dim));
  }
  if (stage_depths.empty()) {
    problems.push_back("stage_depths must be non-empty");
  }
  for (int64_t d : stage_depths) {
    if (d < 1) {
      problems.push_back("stage depths must be >= 1");
      break;
    }
  }
  if (stage_heads.size() != stage_depths.size()) {
    problems.push_back("stage_heads must list one head count per stage");
  } else {
    for (size_t s = 0; s < stage_heads.size(); ++s) {
      const int64_t c = stage_channels(static_cast<int64_t>(s));
      if (stage_heads[s] < 1 || c % stage_heads[s] != 0) {
        problems.push_back("stage " + std::to_string(s) + " channels " +
                           std::to_string(c) + " not divisible by " +
                           std::to_string(stage_heads[s]) + " heads");
      }
    }
  }
  if (stage_windows.size() != stage_depths.size()) {
    problems.push_back("stage_windows must list one window per stage");
  } else {
    for (size_t s = 0; s < stage_windows.size(); ++s) {
      for (int a = 0; a < 3; ++a) {
        if (stage_windows[s][a] < 1) {
          problems.push_back("stage " + std::to_string(s) +
                             " window extents must be >= 1");
          break;
        }
      }
    }
  }
  if (static_cast<int64_t>(decoder_channels.size()) != decoder_steps()) {
    problems.push_back("decoder_channels must list " +
                       std::to_string(decoder_steps()) + " widths, got " +
                       std::to_string(decoder_channels.size()));
  }
  for (int64_t c : decoder_channels) {
    if (c < 1) {
      problems.push_back("decoder channel widths must be >= 1");
      break;
    }
  }
  if (offset_kernel < 1 || offset_kernel % 2 == 0) {
    problems.push_back("offset_kernel must be odd, got " +
                       std::to_string(offset_kernel));
  }
  if (!problems.empty()) {
    std::string msg = "invalid model config:";
    for (const std::string& p : problems) msg += "\n  - " + p;
    throw ConfigError(msg);
  }
}

ModelParams make_model_params(ParameterStore& store, const ModelConfig& config,
                              Rng& rng) {
  config.validate();
  ModelParams params;
  const int64_t p = config.patch_size;
  params.embed_kernel = store.create_gauss(
      "embed.kernel", {config.embed_dim, 1, p, p, p}, p * p * p, 1.0, rng);
  params.embed_bias = store.create_zeros("embed.bias", {config.embed_dim});

  const int64_t stages = config.n_stages();
  params.blocks_a.resize(static_cast<size_t>(stages));
  params.blocks_b.resize(static_cast<size_t>(stages));
  for (int64_t s = 0; s < stages; ++s) {
    const int64_t c = config.stage_channels(s);
    for (int64_t b = 0; b < config.stage_depths[static_cast<size_t>(s)]; ++b) {
      const std::string suffix =
          ".s" + std::to_string(s) + ".b" + std::to_string(b);
      params.blocks_a[static_cast<size_t>(s)].push_back(make_attention_params(
          store, "enc.a" + suffix, c, config.stage_heads[static_cast<size_t>(s)],
          config.offset_kernel, rng));
      if (config.share_encoder_params) {
        params.blocks_b[static_cast<size_t>(s)].push_back(
            params.blocks_a[static_cast<size_t>(s)].back());
      } else {
        params.blocks_b[static_cast<size_t>(s)].push_back(make_attention_params(
            store, "enc.b" + suffix, c,
            config.stage_heads[static_cast<size_t>(s)], config.offset_kernel,
            rng));
      }
    }
    if (s + 1 < stages) {
      const std::string name = ".s" + std::to_string(s) + ".merge.w";
      params.merge_a.push_back(
          store.create_gauss("enc.a" + name, {8 * c, 2 * c}, 8 * c, 1.0, rng));
      if (config.share_encoder_params) {
        params.merge_b.push_back(params.merge_a.back());
      } else {
        params.merge_b.push_back(store.create_gauss(
            "enc.b" + name, {8 * c, 2 * c}, 8 * c, 1.0, rng));
      }
    }
  }

  int64_t in_ch = config.stage_channels(stages - 1);
  for (int64_t i = 0; i < config.decoder_steps(); ++i) {
    int64_t cat_ch = 0;
    if (i < stages - 1) {
      cat_ch = config.stage_channels(stages - 2 - i);
    } else if (i == config.decoder_steps() - 1 && config.upsample_steps() > 0) {
      cat_ch = 2;  // raw moving + fixed pair at full resolution
    }
    const int64_t out_ch = config.decoder_channels[static_cast<size_t>(i)];
    const std::string prefix = "dec.u" + std::to_string(i);
    DecoderStepParams step;
    step.w1 = store.create_gauss(prefix + ".c1.w", {out_ch, in_ch + cat_ch, 3, 3, 3},
                                 (in_ch + cat_ch) * 27, 1.0, rng);
    step.b1 = store.create_zeros(prefix + ".c1.bias", {out_ch});
    step.w2 = store.create_gauss(prefix + ".c2.w", {out_ch, out_ch, 3, 3, 3},
                                 out_ch * 27, 1.0, rng);
    step.b2 = store.create_zeros(prefix + ".c2.bias", {out_ch});
    params.decoder.push_back(step);
    in_ch = out_ch;
  }
  params.head_w = store.create_zeros("dec.head.w", {3, in_ch, 3, 3, 3});
  params.head_b = store.create_zeros("dec.head.bias", {3});
  return params;
}

TokenField patch_embed(const Tensor& volume, const ModelConfig& config,
                       const ModelParams& params) {
  if (volume.rank() != 4 || volume.extent(0) != 1) {
    throw ShapeError("patch_embed expects a [1,H,W,D] volume, got " +
                     shape_str(volume.shape()));
  }
  for (int a = 0; a < 3; ++a) {
    if (volume.extent(a + 1) % config.patch_size != 0) {
      throw ConfigError("volume extents " + shape_str(volume.shape()) +
                        " are not divisible by patch size " +
                        std::to_string(config.patch_size));
    }
  }
  Tensor tokens = conv3d(volume, params.embed_kernel, config.patch_size, 0, 1);
  tokens = add_channel_bias(tokens, params.embed_bias);
  return TokenField(to_channel_last(tokens));
}

TokenField patch_merging(const TokenField& x, const Tensor& proj) {
  const auto g = x.grid();
  const int64_t c = x.channels();
  if (proj.rank() != 2 || proj.extent(0) != 8 * c) {
    throw ShapeError("patch merging projection must be [8C,2C] for C=" +
                     std::to_string(c) + ", got " + shape_str(proj.shape()));
  }
  std::array<int64_t, 3> out;
  for (int a = 0; a < 3; ++a) out[a] = (g[a] + 1) / 2;
  const int64_t out_n = out[0] * out[1] * out[2];
  std::vector<int64_t> indices;
  indices.reserve(static_cast<size_t>(out_n * 8));
  for (int64_t i = 0; i < out[0]; ++i) {
    for (int64_t j = 0; j < out[1]; ++j) {
      for (int64_t k = 0; k < out[2]; ++k) {
        for (int64_t b0 = 0; b0 < 2; ++b0) {
          for (int64_t b1 = 0; b1 < 2; ++b1) {
            for (int64_t b2 = 0; b2 < 2; ++b2) {
              const int64_t si = 2 * i + b0;
              const int64_t sj = 2 * j + b1;
              const int64_t sk = 2 * k + b2;
              const bool in_grid = si < g[0] && sj < g[1] && sk < g[2];
              indices.push_back(in_grid ? (si * g[1] + sj) * g[2] + sk : -1);
            }
          }
        }
      }
    }
  }
  Tensor rows = gather_rows(reshape(x.data, {x.tokens(), c}), indices);
  Tensor merged = matmul(reshape(rows, {out_n, 8 * c}), proj);
  return TokenField(reshape(merged, {out[0], out[1], out[2], proj.extent(1)}));
}

TokenField upsample_trilinear(const TokenField& x,
                              std::array<int64_t, 3> target) {
  const auto g = x.grid();
  for (int a = 0; a < 3; ++a) {
    if (target[a] < 1) {
      throw ShapeError("upsample target extents must be >= 1");
    }
  }
  std::vector<double> coords(
      static_cast<size_t>(target[0] * target[1] * target[2] * 3));
  size_t idx = 0;
  for (int64_t i = 0; i < target[0]; ++i) {
    for (int64_t j = 0; j < target[1]; ++j) {
      for (int64_t k = 0; k < target[2]; ++k) {
        const int64_t t3[3] = {i, j, k};
        for (int a = 0; a < 3; ++a) {
          const double scale =
              static_cast<double>(g[a]) / static_cast<double>(target[a]);
          coords[idx++] = (static_cast<double>(t3[a]) + 0.5) * scale - 0.5;
        }
      }
    }
  }
  Tensor grid = Tensor::create({target[0], target[1], target[2], 3},
                               std::move(coords));
  return TokenField(grid_sample(x.data, grid));
}

std::vector<TokenField> dual_encoder_forward(
    const Tensor& moving, const Tensor& fixed, const ModelParams& params,
    const ModelConfig& config, CrossMode mode,
    std::vector<StageStreams>* streams_out) {
  config.validate();
  require_volume(moving, config.image, "moving volume");
  require_volume(fixed, config.image, "fixed volume");

  TokenField a = patch_embed(moving, config, params);
  TokenField b = patch_embed(fixed, config, params);

  std::vector<TokenField> skips;
  const int64_t stages = config.n_stages();
  for (int64_t s = 0; s < stages; ++s) {
    const auto grid = config.stage_grid(s);
    const auto win = config.stage_windows[static_cast<size_t>(s)];
    std::array<int64_t, 3> half;
    for (int a3 = 0; a3 < 3; ++a3) half[a3] = win[a3] / 2;
    const WindowLayout even = make_layout(grid, win, {0, 0, 0});
    const WindowLayout odd = make_layout(grid, win, half);
    for (int64_t k = 0; k < config.stage_depths[static_cast<size_t>(s)]; ++k) {
      const WindowLayout& layout = (k % 2 == 0) ? even : odd;
      TokenField a_next = dw_mca_block(
          a, b, params.blocks_a[static_cast<size_t>(s)][static_cast<size_t>(k)],
          layout, mode);
      TokenField b_next = dw_mca_block(
          b, a, params.blocks_b[static_cast<size_t>(s)][static_cast<size_t>(k)],
          layout, mode);
      a = a_next;
      b = b_next;
    }
    skips.emplace_back(add(a.data, b.data));
    if (streams_out != nullptr) streams_out->push_back({a, b});
    if (s + 1 < stages) {
      a = patch_merging(a, params.merge_a[static_cast<size_t>(s)]);
      b = patch_merging(b, params.merge_b[static_cast<size_t>(s)]);
    }
  }
  return skips;
}

DisplacementField conv_decoder_forward(const std::vector<TokenField>& skips,
                                       const Tensor& moving,
                                       const Tensor& fixed,
                                       const ModelParams& params,
                                       const ModelConfig& config) {
  config.validate();
  require_volume(moving, config.image, "moving volume");
  require_volume(fixed, config.image, "fixed volume");
  const int64_t stages = config.n_stages();
  if (static_cast<int64_t>(skips.size()) != stages) {
    throw ShapeError("skip pyramid has " + std::to_string(skips.size()) +
                     " levels, expected " + std::to_string(stages));
  }
  for (int64_t s = 0; s < stages; ++s) {
    const auto grid = config.stage_grid(s);
    const TokenField& skip = skips[static_cast<size_t>(s)];
    if (skip.grid() != grid || skip.channels() != config.stage_channels(s)) {
      throw ShapeError("skip level " + std::to_string(s) + " has shape " +
                       shape_str(skip.data.shape()) +
                       ", expected grid " + triple_str(grid) + " with " +
                       std::to_string(config.stage_channels(s)) + " channels");
    }
  }

  Tensor x = to_channel_major(skips[static_cast<size_t>(stages - 1)].data);
  const int64_t steps = config.decoder_steps();
  for (int64_t i = 0; i < steps; ++i) {
    std::array<int64_t, 3> target;
    if (i < stages - 1) {
      target = config.stage_grid(stages - 2 - i);
    } else {
      const int64_t remaining = steps - 1 - i;
      for (int a = 0; a < 3; ++a) {
        target[a] = config.image[a] >> remaining;
      }
    }
    TokenField up = upsample_trilinear(TokenField(to_channel_last(x)), target);
    x = to_channel_major(up.data);
    if (i < stages - 1) {
      x = concat(
          {x, to_channel_major(skips[static_cast<size_t>(stages - 2 - i)].data)},
          0);
    } else if (i == steps - 1 && config.upsample_steps() > 0) {
      x = concat({x, moving, fixed}, 0);
    }
    const DecoderStepParams& step = params.decoder[static_cast<size_t>(i)];
    x = conv_block(x, step.w1, step.b1);
    x = conv_block(x, step.w2, step.b2);
  }
  Tensor u = add_channel_bias(conv3d(x, params.head_w, 1, 1, 1), params.head_b);
  return DisplacementField{u};
}

DisplacementField model_forward(const Tensor& moving, const Tensor& fixed,
                                const ModelParams& params,
                                const ModelConfig& config, CrossMode mode) {
  std::vector<TokenField> skips =
      dual_encoder_forward(moving, fixed, params, config, mode);
  return conv_decoder_forward(skips, moving, fixed, params, config);
}

}  // namespace defxattn
