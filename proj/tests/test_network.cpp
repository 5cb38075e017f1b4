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
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "defxattn/errors.hpp"
#include "defxattn/gradcheck.hpp"
#include "defxattn/network.hpp"
#include "defxattn/ops.hpp"
#include "defxattn/rng.hpp"
#include "defxattn/tensor.hpp"

using namespace defxattn;

namespace {

Tensor random_tensor(const Shape& shape, Rng& rng, double lo, double hi) {
  int64_t n = 1;
  for (int64_t e : shape) n *= e;
  std::vector<double> v(static_cast<size_t>(n));
  for (double& x : v) x = lo + (hi - lo) * rng.uniform();
  return Tensor::create(shape, std::move(v));
}

bool all_equal(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  for (size_t i = 0; i < a.data().size(); ++i) {
    if (!(a.data()[i] == b.data()[i])) return false;
  }
  return true;
}

void jitter_displacement_head(AttentionParams& p, Rng& rng) {
  const double sigma = 0.05 / std::sqrt(static_cast<double>(p.channels));
  for (double& v : p.offset_pw.mutable_data()) v = sigma * rng.gauss();
  for (double& v : p.offset_pw_bias.mutable_data()) {
    const double mag = 0.15 + 0.3 * rng.uniform();
    v = rng.uniform() < 0.5 ? -mag : mag;
  }
}

void jitter_all_offsets(ModelParams& params, Rng& rng) {
  for (auto& stage : params.blocks_a) {
    for (auto& block : stage) jitter_displacement_head(block, rng);
  }
  for (auto& stage : params.blocks_b) {
    for (auto& block : stage) jitter_displacement_head(block, rng);
  }
}

}  // namespace

TEST_CASE("config shape helpers at desk and full scale") {
  ModelConfig desk;
  desk.validate();
  CHECK(desk.n_stages() == 2);
  CHECK(desk.stage_grid(0) == std::array<int64_t, 3>{4, 4, 4});
  CHECK(desk.stage_grid(1) == std::array<int64_t, 3>{2, 2, 2});
  CHECK(desk.stage_channels(0) == 8);
  CHECK(desk.stage_channels(1) == 16);
  CHECK(desk.upsample_steps() == 2);
  CHECK(desk.decoder_steps() == 3);

  ModelConfig full;
  full.image = {160, 192, 224};
  full.patch_size = 4;
  full.embed_dim = 96;
  full.stage_depths = {2, 2, 4};
  full.stage_heads = {4, 4, 4};
  full.stage_windows = {{5, 6, 7}, {5, 6, 7}, {5, 6, 7}};
  full.decoder_channels = {48, 32, 32, 16};
  full.validate();
  CHECK(full.stage_grid(0) == std::array<int64_t, 3>{40, 48, 56});
  CHECK(full.stage_grid(1) == std::array<int64_t, 3>{20, 24, 28});
  CHECK(full.stage_grid(2) == std::array<int64_t, 3>{10, 12, 14});
  CHECK(full.stage_channels(0) == 96);
  CHECK(full.stage_channels(2) == 384);
  CHECK(full.decoder_steps() == 4);
}

TEST_CASE("config validation collects every offender") {
  ModelConfig bad;
  bad.patch_size = 3;
  bad.embed_dim = 10;
  bad.stage_heads = {4, 4};
  bad.offset_kernel = 4;
  bad.decoder_channels = {8};
  try {
    bad.validate();
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("patch_size") != std::string::npos);
    CHECK(msg.find("heads") != std::string::npos);
    CHECK(msg.find("offset_kernel") != std::string::npos);
    CHECK(msg.find("decoder_channels") != std::string::npos);
  }
}

TEST_CASE("patch embedding tokenizes strided blocks") {
  Rng rng(401);
  ModelConfig config;
  ParameterStore store;
  ModelParams params = make_model_params(store, config, rng);

  SUBCASE("desk-scale shape") {
    Tensor vol = random_tensor({1, 16, 16, 16}, rng, 0.0, 1.0);
    TokenField tokens = patch_embed(vol, config, params);
    CHECK(tokens.data.shape() == Shape{4, 4, 4, 8});
  }
  SUBCASE("zero volume passes through the embedding bias") {
    auto bias = params.embed_bias.mutable_data();
    for (size_t c = 0; c < bias.size(); ++c) {
      bias[c] = 0.1 * static_cast<double>(c + 1);
    }
    TokenField tokens =
        patch_embed(Tensor::zeros({1, 16, 16, 16}), config, params);
    for (int64_t t = 0; t < tokens.tokens(); ++t) {
      for (int64_t c = 0; c < 8; ++c) {
        CHECK(tokens.data.data()[static_cast<size_t>(t * 8 + c)] ==
              0.1 * static_cast<double>(c + 1));
      }
    }
  }
  SUBCASE("indivisible extents are rejected") {
    CHECK_THROWS_AS(patch_embed(Tensor::zeros({1, 15, 16, 16}), config, params),
                    ConfigError);
    CHECK_THROWS_AS(patch_embed(Tensor::zeros({2, 16, 16, 16}), config, params),
                    ShapeError);
  }
}

TEST_CASE("patch merging halves the grid and doubles channels") {
  Rng rng(409);
  SUBCASE("shape contract") {
    TokenField x(random_tensor({4, 4, 4, 8}, rng, -1.0, 1.0));
    Tensor proj = random_tensor({64, 16}, rng, -0.5, 0.5);
    TokenField merged = patch_merging(x, proj);
    CHECK(merged.data.shape() == Shape{2, 2, 2, 16});
  }
  SUBCASE("column-normalized projection preserves constant fields") {
    TokenField x(Tensor::full({4, 4, 4, 8}, 0.625));
    std::vector<double> w(64 * 16, 0.0);
    for (int64_t p = 0; p < 64; ++p) {
      w[static_cast<size_t>(p * 16 + p % 16)] = 0.25;
    }
    Tensor proj = Tensor::create({64, 16}, std::move(w));
    TokenField merged = patch_merging(x, proj);
    for (double v : merged.data.data()) CHECK(v == 0.625);
  }
  SUBCASE("odd grids are zero-padded") {
    TokenField x(Tensor::full({3, 4, 4, 8}, 0.5));
    Tensor proj = Tensor::full({64, 16}, 0.125);
    TokenField merged = patch_merging(x, proj);
    CHECK(merged.data.shape() == Shape{2, 2, 2, 16});
    for (int64_t i = 0; i < 2; ++i) {
      for (int64_t jk = 0; jk < 4; ++jk) {
        for (int64_t c = 0; c < 16; ++c) {
          const double v =
              merged.data.data()[static_cast<size_t>((i * 4 + jk) * 16 + c)];
          // Full cells average eight 0.5-neighbourhoods; the padded half loses
          // the out-of-range plane.
          CHECK(v == (i == 0 ? 4.0 : 2.0));
        }
      }
    }
  }
  SUBCASE("projection shape is validated") {
    TokenField x(Tensor::zeros({4, 4, 4, 8}));
    CHECK_THROWS_AS(patch_merging(x, Tensor::zeros({32, 16})), ShapeError);
  }
}

TEST_CASE("trilinear upsampling") {
  SUBCASE("doubling a ramp uses half-voxel alignment") {
    TokenField x(Tensor::create({2, 1, 1, 1}, {0.0, 1.0}));
    TokenField up = upsample_trilinear(x, {4, 1, 1});
    REQUIRE(up.data.shape() == Shape{4, 1, 1, 1});
    CHECK(up.data.data()[0] == doctest::Approx(0.0));
    CHECK(up.data.data()[1] == doctest::Approx(0.25));
    CHECK(up.data.data()[2] == doctest::Approx(0.75));
    CHECK(up.data.data()[3] == doctest::Approx(1.0));
  }
  SUBCASE("constant fields stay constant") {
    TokenField x(Tensor::full({2, 2, 2, 3}, -1.5));
    TokenField up = upsample_trilinear(x, {4, 4, 4});
    for (double v : up.data.data()) {
      CHECK(v == doctest::Approx(-1.5).epsilon(1e-12));
    }
  }
}

TEST_CASE("dual encoder builds the fused skip pyramid") {
  Rng rng(419);
  ModelConfig config;
  ParameterStore store;
  ModelParams params = make_model_params(store, config, rng);
  Tensor moving = random_tensor({1, 16, 16, 16}, rng, 0.0, 1.0);
  Tensor fixed = random_tensor({1, 16, 16, 16}, rng, 0.0, 1.0);

  std::vector<TokenField> skips =
      dual_encoder_forward(moving, fixed, params, config);
  REQUIRE(skips.size() == 2);
  CHECK(skips[0].data.shape() == Shape{4, 4, 4, 8});
  CHECK(skips[1].data.shape() == Shape{2, 2, 2, 16});

  SUBCASE("volume mismatch is rejected") {
    Tensor small = random_tensor({1, 8, 16, 16}, rng, 0.0, 1.0);
    CHECK_THROWS_AS(dual_encoder_forward(moving, small, params, config),
                    ShapeError);
  }
}

TEST_CASE("identical inputs with shared parameters give symmetric streams") {
  Rng rng(421);
  ModelConfig config;
  config.share_encoder_params = true;
  ParameterStore store;
  ModelParams params = make_model_params(store, config, rng);
  Tensor vol = random_tensor({1, 16, 16, 16}, rng, 0.0, 1.0);

  std::vector<StageStreams> streams;
  std::vector<TokenField> skips = dual_encoder_forward(
      vol, vol, params, config, CrossMode::kDeformable, &streams);
  REQUIRE(streams.size() == 2);
  for (size_t s = 0; s < streams.size(); ++s) {
    CHECK(all_equal(streams[s].a.data, streams[s].b.data));
    // The fused skip is exactly twice either stream.
    for (size_t i = 0; i < skips[s].data.data().size(); ++i) {
      CHECK(skips[s].data.data()[i] == 2.0 * streams[s].a.data.data()[i]);
    }
  }

  SUBCASE("swapping the inputs swaps the paths") {
    Tensor m = random_tensor({1, 16, 16, 16}, rng, 0.0, 1.0);
    Tensor f = random_tensor({1, 16, 16, 16}, rng, 0.0, 1.0);
    std::vector<StageStreams> fwd, swp;
    dual_encoder_forward(m, f, params, config, CrossMode::kDeformable, &fwd);
    dual_encoder_forward(f, m, params, config, CrossMode::kDeformable, &swp);
    for (size_t s = 0; s < fwd.size(); ++s) {
      CHECK(all_equal(fwd[s].a.data, swp[s].b.data));
      CHECK(all_equal(fwd[s].b.data, swp[s].a.data));
    }
  }
}

TEST_CASE("fresh encoders match the fixed-window variant exactly") {
  Rng rng(431);
  ModelConfig config;
  ParameterStore store;
  ModelParams params = make_model_params(store, config, rng);
  Tensor moving = random_tensor({1, 16, 16, 16}, rng, 0.0, 1.0);
  Tensor fixed = random_tensor({1, 16, 16, 16}, rng, 0.0, 1.0);
  std::vector<TokenField> a = dual_encoder_forward(moving, fixed, params,
                                                   config,
                                                   CrossMode::kDeformable);
  std::vector<TokenField> b = dual_encoder_forward(moving, fixed, params,
                                                   config,
                                                   CrossMode::kFixedWindow);
  REQUIRE(a.size() == b.size());
  for (size_t s = 0; s < a.size(); ++s) {
    CHECK(all_equal(a[s].data, b[s].data));
  }
}

TEST_CASE("fresh models produce the identity deformation") {
  Rng rng(433);
  ModelConfig config;
  ParameterStore store;
  ModelParams params = make_model_params(store, config, rng);
  Tensor moving = random_tensor({1, 16, 16, 16}, rng, 0.0, 1.0);
  Tensor fixed = random_tensor({1, 16, 16, 16}, rng, 0.0, 1.0);
  DisplacementField u = model_forward(moving, fixed, params, config);
  REQUIRE(u.data.shape() == Shape{3, 16, 16, 16});
  for (double v : u.data.data()) CHECK(v == 0.0);
}

TEST_CASE("zero activations propagate through the decoder") {
  Rng rng(439);
  ModelConfig config;
  ParameterStore store;
  ModelParams params = make_model_params(store, config, rng);
  // Make the head non-trivial; zero inputs must still yield a zero field
  // because every convolution bias starts at zero.
  for (double& v : params.head_w.mutable_data()) v = 0.3 * rng.gauss();
  std::vector<TokenField> skips;
  skips.emplace_back(Tensor::zeros({4, 4, 4, 8}));
  skips.emplace_back(Tensor::zeros({2, 2, 2, 16}));
  DisplacementField u =
      conv_decoder_forward(skips, Tensor::zeros({1, 16, 16, 16}),
                           Tensor::zeros({1, 16, 16, 16}), params, config);
  for (double v : u.data.data()) CHECK(v == 0.0);

  SUBCASE("pyramid mismatches are rejected") {
    std::vector<TokenField> wrong;
    wrong.emplace_back(Tensor::zeros({4, 4, 4, 8}));
    CHECK_THROWS_AS(
        conv_decoder_forward(wrong, Tensor::zeros({1, 16, 16, 16}),
                             Tensor::zeros({1, 16, 16, 16}), params, config),
        ShapeError);
    wrong.emplace_back(Tensor::zeros({2, 2, 2, 8}));
    CHECK_THROWS_AS(
        conv_decoder_forward(wrong, Tensor::zeros({1, 16, 16, 16}),
                             Tensor::zeros({1, 16, 16, 16}), params, config),
        ShapeError);
  }
}

TEST_CASE("the decoder is smaller than the encoder") {
  Rng rng(443);
  ModelConfig config;
  ParameterStore store;
  make_model_params(store, config, rng);
  int64_t encoder = 0;
  int64_t decoder = 0;
  for (const auto& [name, tensor] : store.entries()) {
    int64_t n = 1;
    for (int64_t e : tensor.shape()) n *= e;
    if (name.rfind("dec.", 0) == 0) {
      decoder += n;
    } else {
      encoder += n;  // embedding + both encoder paths
    }
  }
  CHECK(decoder > 0);
  CHECK(encoder > 0);
  CHECK(decoder < encoder);
}

TEST_CASE("model gradients match numeric differentiation in every group") {
  Rng rng(449);
  ModelConfig config;
  ParameterStore store;
  ModelParams params = make_model_params(store, config, rng);
  Rng jit = rng.fork(4);
  jitter_all_offsets(params, jit);
  for (double& v : params.head_w.mutable_data()) {
    v = 0.02 * jit.gauss();
  }
  Tensor moving = random_tensor({1, 16, 16, 16}, rng, 0.0, 1.0);
  Tensor fixed = random_tensor({1, 16, 16, 16}, rng, 0.0, 1.0);
  auto f = [&]() {
    DisplacementField u = model_forward(moving, fixed, params, config);
    return sum(mul(u.data, u.data));
  };
  GradcheckOptions opts;
  opts.entries_per_tensor = 8;
  GradcheckReport rep = gradcheck(f,
                                  {{"embed.kernel", params.embed_kernel},
                                   {"enc.a.s0.b0.u_q", params.blocks_a[0][0].u_q},
                                   {"enc.a.s0.b0.offset.pw",
                                    params.blocks_a[0][0].offset_pw},
                                   {"dec.u0.c1.w", params.decoder[0].w1}},
                                  opts);
  INFO("worst rel err ", rep.worst.rel_err, " at ", rep.worst.tensor);
  CHECK(rep.passes(1e-4));
}
