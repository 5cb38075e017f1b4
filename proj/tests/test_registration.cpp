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
#include <vector>

#include "defxattn/errors.hpp"
#include "defxattn/gradcheck.hpp"
#include "defxattn/ops.hpp"
#include "defxattn/registration.hpp"
#include "defxattn/rng.hpp"
#include "defxattn/tensor.hpp"

using namespace defxattn;

namespace {

Tensor random_tensor(const Shape& shape, Rng& rng, double lo, double hi,
                     bool requires_grad = false) {
  int64_t n = 1;
  for (int64_t e : shape) n *= e;
  std::vector<double> v(static_cast<size_t>(n));
  for (double& x : v) x = lo + (hi - lo) * rng.uniform();
  return Tensor::create(shape, std::move(v), requires_grad);
}

bool all_equal(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  for (size_t i = 0; i < a.data().size(); ++i) {
    if (!(a.data()[i] == b.data()[i])) return false;
  }
  return true;
}

DisplacementField zero_field(int64_t h, int64_t w, int64_t d) {
  return DisplacementField{Tensor::zeros({3, h, w, d})};
}

// Fills component `comp` of a fresh field according to f(i,j,k).
template <typename F>
DisplacementField make_field(std::array<int64_t, 3> e, F f) {
  std::vector<double> v(static_cast<size_t>(3 * e[0] * e[1] * e[2]), 0.0);
  size_t at = 0;
  for (int64_t c = 0; c < 3; ++c) {
    for (int64_t i = 0; i < e[0]; ++i) {
      for (int64_t j = 0; j < e[1]; ++j) {
        for (int64_t k = 0; k < e[2]; ++k) {
          v[at++] = f(c, i, j, k);
        }
      }
    }
  }
  return DisplacementField{
      Tensor::create({3, e[0], e[1], e[2]}, std::move(v))};
}

// Independent trilinear resampler mirroring the border-clamp convention.
double ref_sample(const std::vector<double>& img, std::array<int64_t, 3> e,
                  double x, double y, double z) {
  const double c[3] = {x, y, z};
  int64_t i0[3];
  double t[3];
  for (int axis = 0; axis < 3; ++axis) {
    double v = c[axis];
    const double hi = static_cast<double>(e[static_cast<size_t>(axis)] - 1);
    if (v < 0.0) v = 0.0;
    if (v > hi) v = hi;
    int64_t base = static_cast<int64_t>(std::floor(v));
    if (base > e[static_cast<size_t>(axis)] - 2) {
      base = std::max<int64_t>(0, e[static_cast<size_t>(axis)] - 2);
    }
    i0[axis] = base;
    t[axis] = v - static_cast<double>(base);
  }
  double acc = 0.0;
  for (int dx = 0; dx < 2; ++dx) {
    for (int dy = 0; dy < 2; ++dy) {
      for (int dz = 0; dz < 2; ++dz) {
        const double w = (dx ? t[0] : 1.0 - t[0]) * (dy ? t[1] : 1.0 - t[1]) *
                         (dz ? t[2] : 1.0 - t[2]);
        if (w == 0.0) continue;
        const int64_t ix = std::min(i0[0] + dx, e[0] - 1);
        const int64_t iy = std::min(i0[1] + dy, e[1] - 1);
        const int64_t iz = std::min(i0[2] + dz, e[2] - 1);
        acc += w * img[static_cast<size_t>((ix * e[1] + iy) * e[2] + iz)];
      }
    }
  }
  return acc;
}

// Brute-force squared local NCC over in-range window members only.
double ref_ncc(const std::vector<double>& a, const std::vector<double>& b,
               std::array<int64_t, 3> e, int64_t w) {
  const int64_t r = (w - 1) / 2;
  double acc = 0.0;
  for (int64_t i = 0; i < e[0]; ++i) {
    for (int64_t j = 0; j < e[1]; ++j) {
      for (int64_t k = 0; k < e[2]; ++k) {
        double sa = 0, sb = 0, saa = 0, sbb = 0, sab = 0, n = 0;
        for (int64_t di = -r; di <= r; ++di) {
          for (int64_t dj = -r; dj <= r; ++dj) {
            for (int64_t dk = -r; dk <= r; ++dk) {
              const int64_t x = i + di, y = j + dj, z = k + dk;
              if (x < 0 || x >= e[0] || y < 0 || y >= e[1] || z < 0 ||
                  z >= e[2]) {
                continue;
              }
              const double va =
                  a[static_cast<size_t>((x * e[1] + y) * e[2] + z)];
              const double vb =
                  b[static_cast<size_t>((x * e[1] + y) * e[2] + z)];
              sa += va;
              sb += vb;
              saa += va * va;
              sbb += vb * vb;
              sab += va * vb;
              n += 1.0;
            }
          }
        }
        const double cross = sab - sa * sb / n;
        const double var_a = saa - sa * sa / n;
        const double var_b = sbb - sb * sb / n;
        acc += cross * cross / (var_a * var_b + 1e-5);
      }
    }
  }
  return -acc / static_cast<double>(e[0] * e[1] * e[2]);
}

LabelMap flat_map(std::array<int64_t, 3> e, const std::vector<int32_t>& l) {
  return LabelMap(e, l);
}

}  // namespace

TEST_CASE("warping under the identity field is exact") {
  Rng rng(601);
  Tensor img = random_tensor({1, 8, 8, 8}, rng, -1.0, 1.0);
  Tensor out = warp_trilinear(img, zero_field(8, 8, 8));
  CHECK(all_equal(out, img));
}

TEST_CASE("integer shifts translate a ramp with border clamping") {
  auto field = make_field({6, 4, 4}, [](int64_t c, int64_t, int64_t, int64_t) {
    return c == 0 ? 1.0 : 0.0;
  });
  std::vector<double> ramp(6 * 4 * 4);
  for (int64_t i = 0; i < 6; ++i) {
    for (int64_t t = 0; t < 16; ++t) {
      ramp[static_cast<size_t>(i * 16 + t)] = static_cast<double>(i);
    }
  }
  Tensor img = Tensor::create({1, 6, 4, 4}, std::move(ramp));
  Tensor out = warp_trilinear(img, field);
  for (int64_t i = 0; i < 6; ++i) {
    for (int64_t t = 0; t < 16; ++t) {
      const double expected = static_cast<double>(std::min<int64_t>(i + 1, 5));
      CHECK(out.data()[static_cast<size_t>(i * 16 + t)] == expected);
    }
  }
}

TEST_CASE("warping matches a brute-force resampler") {
  Rng rng(607);
  Tensor img = random_tensor({1, 8, 8, 8}, rng, 0.0, 1.0);
  Tensor noise = random_tensor({3, 8, 8, 8}, rng, -2.5, 2.5);
  DisplacementField field{noise};
  Tensor out = warp_trilinear(img, field);
  const std::vector<double> data(img.data().begin(), img.data().end());
  const auto u = field.data.data();
  for (int64_t i = 0; i < 8; ++i) {
    for (int64_t j = 0; j < 8; ++j) {
      for (int64_t k = 0; k < 8; ++k) {
        const size_t at = static_cast<size_t>((i * 8 + j) * 8 + k);
        const double expected =
            ref_sample(data, {8, 8, 8}, static_cast<double>(i) + u[at],
                       static_cast<double>(j) + u[512 + at],
                       static_cast<double>(k) + u[1024 + at]);
        CHECK(std::abs(out.data()[at] - expected) < 1e-12);
      }
    }
  }
  SUBCASE("extent mismatches are rejected") {
    CHECK_THROWS_AS(warp_trilinear(img, zero_field(8, 8, 4)), ShapeError);
    CHECK_THROWS_AS(
        warp_trilinear(random_tensor({2, 8, 8, 8}, rng, 0.0, 1.0), field),
        ShapeError);
  }
}

TEST_CASE("warp gradients flow into image and field") {
  Rng rng(613);
  Tensor img = random_tensor({1, 6, 6, 6}, rng, 0.0, 1.0, true);
  Tensor u = random_tensor({3, 6, 6, 6}, rng, -0.35, 0.35, true);
  auto f = [&]() {
    Tensor w = warp_trilinear(img, DisplacementField{u});
    return sum(mul(w, w));
  };
  GradcheckOptions opts;
  opts.entries_per_tensor = 16;
  GradcheckReport rep = gradcheck(f, {{"image", img}, {"field", u}}, opts);
  INFO("worst rel err ", rep.worst.rel_err, " at ", rep.worst.tensor);
  CHECK(rep.passes(1e-4));
}

TEST_CASE("nearest-neighbour label warping") {
  std::vector<int32_t> l(4 * 4 * 4);
  for (size_t t = 0; t < l.size(); ++t) l[t] = static_cast<int32_t>(t % 5);
  LabelMap labels = flat_map({4, 4, 4}, l);

  SUBCASE("sub-half shifts round back to the original labels") {
    auto field = make_field({4, 4, 4}, [](int64_t c, int64_t, int64_t, int64_t) {
      return c == 0 ? 0.4 : 0.0;
    });
    LabelMap warped = warp_nearest(labels, field);
    CHECK(warped.labels == labels.labels);
  }
  SUBCASE("identity keeps labels") {
    LabelMap warped = warp_nearest(labels, zero_field(4, 4, 4));
    CHECK(warped.labels == labels.labels);
  }
  SUBCASE("unit shifts pull the next plane") {
    auto field = make_field({4, 4, 4}, [](int64_t c, int64_t, int64_t, int64_t) {
      return c == 0 ? 1.0 : 0.0;
    });
    LabelMap warped = warp_nearest(labels, field);
    for (int64_t i = 0; i < 4; ++i) {
      for (int64_t j = 0; j < 4; ++j) {
        for (int64_t k = 0; k < 4; ++k) {
          CHECK(warped.at(i, j, k) == labels.at(std::min<int64_t>(i + 1, 3), j, k));
        }
      }
    }
  }
  SUBCASE("extent mismatch is rejected") {
    CHECK_THROWS_AS(warp_nearest(labels, zero_field(4, 4, 5)), ShapeError);
  }
  SUBCASE("label maps validate their payload size") {
    CHECK_THROWS_AS(LabelMap({4, 4, 4}, std::vector<int32_t>(63)), ShapeError);
  }
}

TEST_CASE("one-hot encoding counts every requested id") {
  Rng rng(617);
  std::vector<int32_t> l(4 * 4 * 4);
  std::array<int64_t, 4> counts{0, 0, 0, 0};
  for (auto& v : l) {
    v = static_cast<int32_t>(rng.uniform() * 4.0);
    ++counts[static_cast<size_t>(v)];
  }
  LabelMap map = flat_map({4, 4, 4}, l);
  Tensor oh = one_hot(map, {1, 2, 3});
  REQUIRE(oh.shape() == Shape{3, 4, 4, 4});
  for (int64_t c = 0; c < 3; ++c) {
    double s = 0.0;
    for (int64_t t = 0; t < 64; ++t) {
      const double v = oh.data()[static_cast<size_t>(c * 64 + t)];
      CHECK((v == 0.0 || v == 1.0));
      s += v;
    }
    CHECK(s == static_cast<double>(counts[static_cast<size_t>(c + 1)]));
  }
  CHECK_THROWS_AS(one_hot(map, {}), ConfigError);
}

TEST_CASE("local correlation loss at its extremes") {
  Rng rng(619);
  Tensor img = random_tensor({1, 8, 8, 8}, rng, 0.2, 1.0);
  SUBCASE("identical content is perfectly correlated") {
    Tensor loss = ncc_loss(img, img, 3);
    CHECK(loss.data()[0] == doctest::Approx(-1.0).epsilon(1e-3));
  }
  SUBCASE("negated content is equally correlated under the square") {
    Tensor loss = ncc_loss(scale(img, -1.0), img, 3);
    CHECK(loss.data()[0] == doctest::Approx(-1.0).epsilon(1e-3));
  }
  SUBCASE("independent noise decorrelates") {
    Tensor a = random_tensor({1, 16, 16, 16}, rng, 0.0, 1.0);
    Tensor b = random_tensor({1, 16, 16, 16}, rng, 0.0, 1.0);
    Tensor loss = ncc_loss(a, b, 5);
    CHECK(std::abs(loss.data()[0]) < 0.1);
  }
  SUBCASE("loss stays within [-1, 0]") {
    Tensor a = random_tensor({1, 8, 8, 8}, rng, -1.0, 1.0);
    Tensor b = random_tensor({1, 8, 8, 8}, rng, -1.0, 1.0);
    const double v = ncc_loss(a, b, 3).data()[0];
    CHECK(v <= 0.0);
    CHECK(v >= -1.0);
  }
  SUBCASE("parameters are validated") {
    CHECK_THROWS_AS(ncc_loss(img, img, 4), ConfigError);
    CHECK_THROWS_AS(ncc_loss(img, random_tensor({1, 8, 8, 4}, rng, 0.0, 1.0), 3),
                    ShapeError);
  }
}

TEST_CASE("local correlation loss matches a brute-force oracle") {
  Rng rng(631);
  Tensor a = random_tensor({1, 8, 8, 8}, rng, 0.0, 1.0);
  Tensor b = random_tensor({1, 8, 8, 8}, rng, 0.0, 1.0);
  const double got = ncc_loss(a, b, 3).data()[0];
  const double want =
      ref_ncc(std::vector<double>(a.data().begin(), a.data().end()),
              std::vector<double>(b.data().begin(), b.data().end()), {8, 8, 8},
              3);
  CHECK(std::abs(got - want) < 1e-10);
}

TEST_CASE("correlation loss gradients are numerically correct") {
  Rng rng(641);
  Tensor a = random_tensor({1, 8, 8, 8}, rng, 0.0, 1.0, true);
  Tensor b = random_tensor({1, 8, 8, 8}, rng, 0.0, 1.0, true);
  auto f = [&]() { return ncc_loss(a, b, 3); };
  GradcheckOptions opts;
  opts.entries_per_tensor = 12;
  GradcheckReport rep = gradcheck(f, {{"warped", a}, {"fixed", b}}, opts);
  INFO("worst rel err ", rep.worst.rel_err, " at ", rep.worst.tensor);
  CHECK(rep.passes(1e-4));
}

TEST_CASE("correlation loss differentiates through the warp") {
  Rng rng(643);
  Tensor moving = random_tensor({1, 6, 6, 6}, rng, 0.0, 1.0);
  Tensor fixed = random_tensor({1, 6, 6, 6}, rng, 0.0, 1.0);
  Tensor u = random_tensor({3, 6, 6, 6}, rng, -0.35, 0.35, true);
  auto f = [&]() {
    return ncc_loss(warp_trilinear(moving, DisplacementField{u}), fixed, 3);
  };
  GradcheckOptions opts;
  opts.entries_per_tensor = 16;
  GradcheckReport rep = gradcheck(f, {{"field", u}}, opts);
  INFO("worst rel err ", rep.worst.rel_err, " at ", rep.worst.tensor);
  CHECK(rep.passes(1e-4));
}

TEST_CASE("soft overlap loss on crafted masks") {
  SUBCASE("identical masks cost exactly zero") {
    std::vector<double> v(2 * 4 * 4 * 4, 0.0);
    for (size_t t = 0; t < 64; ++t) v[t] = (t % 3 == 0) ? 1.0 : 0.0;
    for (size_t t = 64; t < 128; ++t) v[t] = (t % 3 == 1) ? 1.0 : 0.0;
    Tensor p = Tensor::create({2, 4, 4, 4}, std::move(v));
    CHECK(soft_dice_loss(p, p).data()[0] == 0.0);
  }
  SUBCASE("disjoint masks cost one") {
    std::vector<double> a(8 * 8 * 8, 0.0), b(8 * 8 * 8, 0.0);
    for (size_t t = 0; t < 256; ++t) a[t] = 1.0;
    for (size_t t = 256; t < 512; ++t) b[t] = 1.0;
    Tensor pa = Tensor::create({1, 8, 8, 8}, std::move(a));
    Tensor pb = Tensor::create({1, 8, 8, 8}, std::move(b));
    CHECK(soft_dice_loss(pa, pb).data()[0] ==
          doctest::Approx(1.0).epsilon(1e-6));
  }
  SUBCASE("half overlap costs one half") {
    std::vector<double> a(8 * 8 * 8, 0.0), b(8 * 8 * 8, 0.0);
    for (size_t t = 0; t < 256; ++t) a[t] = 1.0;          // slabs i < 4
    for (size_t t = 128; t < 384; ++t) b[t] = 1.0;        // slabs 2 <= i < 6
    Tensor pa = Tensor::create({1, 8, 8, 8}, std::move(a));
    Tensor pb = Tensor::create({1, 8, 8, 8}, std::move(b));
    CHECK(soft_dice_loss(pa, pb).data()[0] ==
          doctest::Approx(0.5).epsilon(1e-6));
  }
  SUBCASE("channel mismatch is rejected") {
    CHECK_THROWS_AS(
        soft_dice_loss(Tensor::zeros({2, 4, 4, 4}), Tensor::zeros({1, 4, 4, 4})),
        ShapeError);
  }
}

TEST_CASE("soft overlap loss gradients are numerically correct") {
  Rng rng(647);
  Tensor p = random_tensor({2, 4, 4, 4}, rng, 0.1, 0.9, true);
  Tensor q = random_tensor({2, 4, 4, 4}, rng, 0.1, 0.9, true);
  auto f = [&]() { return soft_dice_loss(p, q); };
  GradcheckOptions opts;
  opts.entries_per_tensor = 12;
  GradcheckReport rep = gradcheck(f, {{"p", p}, {"q", q}}, opts);
  CHECK(rep.passes(1e-4));
}

TEST_CASE("smoothness penalty on reference fields") {
  SUBCASE("zero and constant fields are free") {
    CHECK(diffusion_regularizer(zero_field(5, 5, 5)).data()[0] == 0.0);
    auto constant = make_field({5, 5, 5}, [](int64_t, int64_t, int64_t, int64_t) {
      return 3.0;
    });
    CHECK(diffusion_regularizer(constant).data()[0] == 0.0);
  }
  SUBCASE("a unit ramp in one component costs one ninth") {
    auto ramp = make_field({5, 5, 5}, [](int64_t c, int64_t i, int64_t, int64_t) {
      return c == 0 ? static_cast<double>(i) : 0.0;
    });
    CHECK(diffusion_regularizer(ramp).data()[0] ==
          doctest::Approx(1.0 / 9.0).epsilon(1e-12));
  }
  SUBCASE("gradients are numerically correct") {
    Rng rng(653);
    Tensor u = random_tensor({3, 5, 5, 5}, rng, -1.0, 1.0, true);
    auto f = [&]() {
      return diffusion_regularizer(DisplacementField{u});
    };
    GradcheckOptions opts;
    opts.entries_per_tensor = 16;
    GradcheckReport rep = gradcheck(f, {{"field", u}}, opts);
    CHECK(rep.passes(1e-4));
  }
}

TEST_CASE("determinant map on analytic fields") {
  SUBCASE("identity gives det one everywhere") {
    JacobianMap jm = jacobian_map(zero_field(5, 6, 7));
    for (double v : jm.det.data()) CHECK(v == 1.0);
  }
  SUBCASE("uniform dilation gives the cubed factor") {
    auto field = make_field({5, 5, 5},
                            [](int64_t c, int64_t i, int64_t j, int64_t k) {
                              const double x[3] = {static_cast<double>(i),
                                                   static_cast<double>(j),
                                                   static_cast<double>(k)};
                              return 0.1 * x[c];
                            });
    JacobianMap jm = jacobian_map(field);
    for (double v : jm.det.data()) {
      CHECK(v == doctest::Approx(1.331).epsilon(1e-12));
    }
  }
  SUBCASE("a global fold flips the sign") {
    auto field = make_field({5, 5, 5},
                            [](int64_t c, int64_t i, int64_t, int64_t) {
                              return c == 0 ? -2.0 * static_cast<double>(i) : 0.0;
                            });
    JacobianMap jm = jacobian_map(field);
    for (double v : jm.det.data()) CHECK(v == doctest::Approx(-1.0).epsilon(1e-12));
  }
  SUBCASE("a random linear field matches the analytic determinant") {
    Rng rng(659);
    double a[3][3];
    for (auto& row : a) {
      for (double& v : row) v = 0.2 * rng.gauss();
    }
    auto field = make_field({6, 5, 4},
                            [&](int64_t c, int64_t i, int64_t j, int64_t k) {
                              const double x[3] = {static_cast<double>(i),
                                                   static_cast<double>(j),
                                                   static_cast<double>(k)};
                              return a[c][0] * x[0] + a[c][1] * x[1] +
                                     a[c][2] * x[2];
                            });
    double m[3][3];
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 3; ++j) m[i][j] = (i == j ? 1.0 : 0.0) + a[i][j];
    }
    const double expected = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) -
                            m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0]) +
                            m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
    JacobianMap jm = jacobian_map(field);
    for (double v : jm.det.data()) {
      CHECK(v == doctest::Approx(expected).epsilon(1e-12));
    }
  }
  SUBCASE("small extents are rejected") {
    CHECK_THROWS_AS(jacobian_map(zero_field(2, 5, 5)), ShapeError);
  }
}

TEST_CASE("invertibility statistics on reference fields") {
  SUBCASE("identity is perfectly regular") {
    InvertibilityStats s = invertibility_metrics(zero_field(5, 5, 5));
    CHECK(s.sdlogj == 0.0);
    CHECK(s.pct_nonpositive == 0.0);
    CHECK(s.pct_ndv == 0.0);
  }
  SUBCASE("uniform dilation has constant determinant") {
    auto field = make_field({5, 5, 5},
                            [](int64_t c, int64_t i, int64_t j, int64_t k) {
                              const double x[3] = {static_cast<double>(i),
                                                   static_cast<double>(j),
                                                   static_cast<double>(k)};
                              return 0.1 * x[c];
                            });
    InvertibilityStats s = invertibility_metrics(field);
    CHECK(s.sdlogj == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(s.pct_nonpositive == 0.0);
    CHECK(s.pct_ndv == 0.0);
  }
  SUBCASE("a global fold is fully non-diffeomorphic") {
    auto field = make_field({5, 5, 5},
                            [](int64_t c, int64_t i, int64_t, int64_t) {
                              return c == 0 ? -2.0 * static_cast<double>(i) : 0.0;
                            });
    InvertibilityStats s = invertibility_metrics(field);
    CHECK(s.pct_nonpositive == 100.0);
    CHECK(s.pct_ndv == doctest::Approx(100.0).epsilon(1e-12));
  }
  SUBCASE("the volume measure is never negative") {
    Rng rng(661);
    Tensor noise = random_tensor({3, 6, 6, 6}, rng, -1.5, 1.5);
    InvertibilityStats s = invertibility_metrics(DisplacementField{noise});
    CHECK(s.pct_ndv >= 0.0);
    CHECK(s.pct_nonpositive >= 0.0);
    CHECK(s.pct_nonpositive <= 100.0);
  }
}

TEST_CASE("hard overlap metric") {
  SUBCASE("identical maps score one") {
    Rng rng(673);
    std::vector<int32_t> l(5 * 5 * 5);
    for (auto& v : l) v = static_cast<int32_t>(rng.uniform() * 3.0);
    LabelMap a = flat_map({5, 5, 5}, l);
    DiceResult r = dice_metric(a, a, {1, 2});
    CHECK(r.mean == 1.0);
    CHECK(r.per_label[0] == 1.0);
    CHECK(r.per_label[1] == 1.0);
  }
  SUBCASE("disjoint masks score zero") {
    std::vector<int32_t> a(64, 0), b(64, 0);
    a[0] = 1;
    b[63] = 1;
    DiceResult r = dice_metric(flat_map({4, 4, 4}, a), flat_map({4, 4, 4}, b),
                               {1});
    CHECK(r.mean == 0.0);
  }
  SUBCASE("counting example gives one half") {
    std::vector<int32_t> a(200, 0), b(200, 0);
    for (size_t t = 0; t < 100; ++t) a[t] = 1;
    for (size_t t = 50; t < 150; ++t) b[t] = 1;
    LabelMap ma = flat_map({5, 5, 8}, a);
    LabelMap mb = flat_map({5, 5, 8}, b);
    DiceResult r = dice_metric(ma, mb, {1, 9});
    CHECK(r.per_label[0] == 0.5);
    CHECK(std::isnan(r.per_label[1]));  // label 9 absent from both
    CHECK(r.mean == 0.5);
    DiceResult swapped = dice_metric(mb, ma, {1, 9});
    CHECK(swapped.per_label[0] == r.per_label[0]);
    CHECK(swapped.mean == r.mean);
  }
  SUBCASE("extent mismatch is rejected") {
    CHECK_THROWS_AS(dice_metric(flat_map({4, 4, 4}, std::vector<int32_t>(64)),
                                flat_map({4, 4, 5}, std::vector<int32_t>(80)),
                                {1}),
                    ShapeError);
  }
}

TEST_CASE("surface distance metric") {
  SUBCASE("identical masks are at distance zero") {
    std::vector<int32_t> l(8 * 8 * 8, 0);
    for (int64_t i = 2; i < 5; ++i) {
      for (int64_t j = 2; j < 5; ++j) {
        for (int64_t k = 2; k < 5; ++k) {
          l[static_cast<size_t>((i * 8 + j) * 8 + k)] = 4;
        }
      }
    }
    LabelMap a = flat_map({8, 8, 8}, l);
    CHECK(hd95_metric(a, a, 4) == 0.0);
  }
  SUBCASE("unit cubes three voxels apart") {
    std::vector<int32_t> a(8 * 8 * 8, 0), b(8 * 8 * 8, 0);
    a[static_cast<size_t>((2 * 8 + 2) * 8 + 2)] = 7;
    b[static_cast<size_t>((5 * 8 + 2) * 8 + 2)] = 7;
    CHECK(hd95_metric(flat_map({8, 8, 8}, a), flat_map({8, 8, 8}, b), 7) == 3.0);
  }
  SUBCASE("asymmetric boundaries interpolate the percentile") {
    std::vector<int32_t> a(5 * 5 * 5, 0), b(5 * 5 * 5, 0);
    for (int64_t i = 0; i < 3; ++i) {
      a[static_cast<size_t>((i * 5 + 0) * 5 + 0)] = 1;
    }
    b[0] = 1;
    // Distances 0,1,2 from the segment; the 95th percentile interpolates
    // between the last two order statistics at rank 1.9.
    CHECK(hd95_metric(flat_map({5, 5, 5}, a), flat_map({5, 5, 5}, b), 1) ==
          doctest::Approx(1.9).epsilon(1e-12));
  }
  SUBCASE("empty masks raise a metric error") {
    std::vector<int32_t> a(64, 0);
    a[0] = 1;
    CHECK_THROWS_AS(hd95_metric(flat_map({4, 4, 4}, a),
                                flat_map({4, 4, 4}, std::vector<int32_t>(64, 0)),
                                1),
                    MetricError);
  }
}
