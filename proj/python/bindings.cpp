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
// Thin Python face over the C++ core: a handful of flat-vector entry points
// for the main operations plus two self-contained demonstrations (the
// zero-offset equivalence of the deformable block and the analytic
// search-box cost factor). Heavy training workflows stay on the CLI.
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <array>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "defxattn/attention.hpp"
#include "defxattn/complexity.hpp"
#include "defxattn/network.hpp"
#include "defxattn/ops.hpp"
#include "defxattn/registration.hpp"
#include "defxattn/rng.hpp"
#include "defxattn/tensor.hpp"

namespace py = pybind11;
using namespace defxattn;

namespace {

Tensor from_flat(const std::vector<double>& values,
                 const std::vector<int64_t>& shape) {
  int64_t n = 1;
  for (int64_t e : shape) n *= e;
  if (n != static_cast<int64_t>(values.size())) {
    throw std::invalid_argument("values length does not match shape");
  }
  return Tensor::create(Shape(shape.begin(), shape.end()),
                        std::vector<double>(values));
}

std::vector<double> to_flat(const Tensor& t) {
  return std::vector<double>(t.data().begin(), t.data().end());
}

std::vector<double> py_softmax(const std::vector<double>& values,
                               const std::vector<int64_t>& shape) {
  return to_flat(softmax(from_flat(values, shape), -1));
}

std::vector<double> py_matmul(const std::vector<double>& a, int64_t rows_a,
                              int64_t cols_a, const std::vector<double>& b,
                              int64_t cols_b) {
  return to_flat(matmul(from_flat(a, {rows_a, cols_a}),
                        from_flat(b, {cols_a, cols_b})));
}

std::vector<double> py_gelu(const std::vector<double>& values) {
  return to_flat(
      gelu(from_flat(values, {static_cast<int64_t>(values.size())})));
}

std::vector<double> py_layernorm(const std::vector<double>& values,
                                 int64_t rows, int64_t channels) {
  Tensor x = from_flat(values, {rows, channels});
  Tensor g = Tensor::full({channels}, 1.0);
  Tensor b = Tensor::zeros({channels});
  return to_flat(layernorm(x, g, b));
}

double py_ncc_loss(const std::vector<double>& warped,
                   const std::vector<double>& fixed,
                   const std::vector<int64_t>& extents, int64_t window) {
  if (extents.size() != 3) {
    throw std::invalid_argument("extents must have three entries");
  }
  const std::vector<int64_t> shape{1, extents[0], extents[1], extents[2]};
  return ncc_loss(from_flat(warped, shape), from_flat(fixed, shape), window)
      .data()[0];
}

// Builds one randomly initialized block (offset projection zero, as always at
// init), runs it in deformable and fixed-window mode on the same random
// token fields, and returns the largest absolute output difference — zero by
// construction of the sampling grid.
double py_zero_offset_equivalence(uint64_t seed) {
  Rng rng(seed);
  ParameterStore store;
  AttentionParams params = make_attention_params(store, "demo", 8, 2, 3, rng);
  auto field = [&]() {
    std::vector<double> v(4 * 4 * 4 * 8);
    for (double& x : v) x = 2.0 * rng.uniform() - 1.0;
    return TokenField(Tensor::create({4, 4, 4, 8}, std::move(v)));
  };
  TokenField xb = field();
  TokenField xr = field();
  WindowLayout layout = make_layout({4, 4, 4}, {2, 2, 2}, {0, 0, 0});
  TokenField a = dw_mca_block(xb, xr, params, layout, CrossMode::kDeformable);
  TokenField b = dw_mca_block(xb, xr, params, layout, CrossMode::kFixedWindow);
  auto da = a.data.data();
  auto db = b.data.data();
  double worst = 0.0;
  for (size_t i = 0; i < da.size(); ++i) {
    worst = std::max(worst, std::abs(da[i] - db[i]));
  }
  return worst;
}

// Analytic score+AV multiply ratio of expanded-window cross-attention over
// fixed-window attention for per-axis expansion factors (alpha, beta, gamma);
// equals alpha*beta*gamma.
double py_expansion_cost_ratio(int64_t alpha, int64_t beta, int64_t gamma) {
  ComplexityConfig cfg;
  cfg.window = {5, 6, 7};
  cfg.expand = {alpha, beta, gamma};
  cfg.channels = 96;
  cfg.n_heads = 4;
  cfg.offset_kernel = 5;
  cfg.validate();
  const FlopReport fixed = attention_flops(Mechanism::kFixedWindowSA, cfg);
  const FlopReport expanded =
      attention_flops(Mechanism::kExpandedWindowCA, cfg);
  return static_cast<double>(expanded.score_av()) /
         static_cast<double>(fixed.score_av());
}

}  // namespace

PYBIND11_MODULE(_defxattn, m) {
  m.doc() = "Deformable window cross-attention registration core";
  m.attr("__version__") = "0.1.0";

  m.def("softmax", &py_softmax, py::arg("values"), py::arg("shape"),
        "Softmax over the last axis of a flat row-major array.");
  m.def("matmul", &py_matmul, py::arg("a"), py::arg("rows_a"),
        py::arg("cols_a"), py::arg("b"), py::arg("cols_b"),
        "Row-major matrix product of two flat arrays.");
  m.def("gelu", &py_gelu, py::arg("values"),
        "Exact (erf-based) GELU applied elementwise.");
  m.def("layernorm", &py_layernorm, py::arg("values"), py::arg("rows"),
        py::arg("channels"),
        "Per-row layer normalization (unit gain, zero shift, eps 1e-5).");
  m.def("ncc_loss", &py_ncc_loss, py::arg("warped"), py::arg("fixed"),
        py::arg("extents"), py::arg("window") = 9,
        "Negative mean squared local normalized cross-correlation of two "
        "volumes given as flat row-major arrays.");
  m.def("zero_offset_equivalence", &py_zero_offset_equivalence,
        py::arg("seed") = 7,
        "Max |deformable - fixed-window| block output difference with the "
        "offset projection at its zero initialization; returns 0.0.");
  m.def("expansion_cost_ratio", &py_expansion_cost_ratio,
        py::arg("alpha") = 3, py::arg("beta") = 3, py::arg("gamma") = 3,
        "Analytic attention-cost multiplier of an expanded search box; "
        "27.0 for the default 3x3x3 expansion.");
}
