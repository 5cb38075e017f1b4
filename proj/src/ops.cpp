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
#include "defxattn/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <utility>

#include "defxattn/threading.hpp"

namespace defxattn {

namespace {

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

void check_finite(const char* op, const Tensor& t) {
  if (!nan_check_enabled()) return;
  for (double v : t.data()) {
    if (!std::isfinite(v)) {
      throw NumericError(std::string("non-finite value in output of ") + op);
    }
  }
}

void finish(const char* op, std::initializer_list<const Tensor*> inputs,
            Tensor& out, std::function<void()> bw) {
  check_finite(op, out);
  bool any_rg = false;
  for (const Tensor* t : inputs) any_rg = any_rg || (*t).requires_grad();
  if (!any_rg) return;
  out.set_requires_grad(true);
  if (Tape::active() == nullptr) return;
  Tape::Node node;
  node.op = op;
  for (const Tensor* t : inputs) node.inputs.push_back((*t).impl());
  node.output = out.impl();
  node.backward = std::move(bw);
  Tape::active()->record(std::move(node));
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " +
                     shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

// Floor division for possibly negative numerators, b > 0.
int64_t floor_div(int64_t a, int64_t b) {
  return a >= 0 ? a / b : -((-a + b - 1) / b);
}
int64_t ceil_div(int64_t a, int64_t b) { return floor_div(a + b - 1, b); }

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape("add", a, b);
  const auto pa = a.data();
  const auto pb = b.data();
  std::vector<double> y(pa.size());
  for (size_t i = 0; i < y.size(); ++i) y[i] = pa[i] + pb[i];
  Tensor out = Tensor::create(a.shape(), std::move(y));
  auto ai = a.impl();
  auto bi = b.impl();
  auto oi = out.impl();
  finish("add", {&a, &b}, out, [ai, bi, oi] {
    if (ai->requires_grad) ai->accumulate_grad(oi->grad);
    if (bi->requires_grad) bi->accumulate_grad(oi->grad);
  });
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape("sub", a, b);
  const auto pa = a.data();
  const auto pb = b.data();
  std::vector<double> y(pa.size());
  for (size_t i = 0; i < y.size(); ++i) y[i] = pa[i] - pb[i];
  Tensor out = Tensor::create(a.shape(), std::move(y));
  auto ai = a.impl();
  auto bi = b.impl();
  auto oi = out.impl();
  finish("sub", {&a, &b}, out, [ai, bi, oi] {
    if (ai->requires_grad) ai->accumulate_grad(oi->grad);
    if (bi->requires_grad) {
      std::vector<double> g(oi->grad.size());
      for (size_t i = 0; i < g.size(); ++i) g[i] = -oi->grad[i];
      bi->accumulate_grad(g);
    }
  });
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape("mul", a, b);
  const auto pa = a.data();
  const auto pb = b.data();
  std::vector<double> y(pa.size());
  for (size_t i = 0; i < y.size(); ++i) y[i] = pa[i] * pb[i];
  Tensor out = Tensor::create(a.shape(), std::move(y));
  auto ai = a.impl();
  auto bi = b.impl();
  auto oi = out.impl();
  finish("mul", {&a, &b}, out, [ai, bi, oi] {
    std::vector<double> g(oi->grad.size());
    if (ai->requires_grad) {
      for (size_t i = 0; i < g.size(); ++i) g[i] = oi->grad[i] * bi->data[i];
      ai->accumulate_grad(g);
    }
    if (bi->requires_grad) {
      for (size_t i = 0; i < g.size(); ++i) g[i] = oi->grad[i] * ai->data[i];
      bi->accumulate_grad(g);
    }
  });
  return out;
}

Tensor div(const Tensor& a, const Tensor& b) {
  require_same_shape("div", a, b);
  const auto pa = a.data();
  const auto pb = b.data();
  std::vector<double> y(pa.size());
  for (size_t i = 0; i < y.size(); ++i) y[i] = pa[i] / pb[i];
  Tensor out = Tensor::create(a.shape(), std::move(y));
  auto ai = a.impl();
  auto bi = b.impl();
  auto oi = out.impl();
  finish("div", {&a, &b}, out, [ai, bi, oi] {
    std::vector<double> g(oi->grad.size());
    if (ai->requires_grad) {
      for (size_t i = 0; i < g.size(); ++i) g[i] = oi->grad[i] / bi->data[i];
      ai->accumulate_grad(g);
    }
    if (bi->requires_grad) {
      for (size_t i = 0; i < g.size(); ++i) {
        g[i] = -oi->grad[i] * ai->data[i] / (bi->data[i] * bi->data[i]);
      }
      bi->accumulate_grad(g);
    }
  });
  return out;
}

Tensor scale(const Tensor& a, double s) {
  const auto pa = a.data();
  std::vector<double> y(pa.size());
  for (size_t i = 0; i < y.size(); ++i) y[i] = pa[i] * s;
  Tensor out = Tensor::create(a.shape(), std::move(y));
  auto ai = a.impl();
  auto oi = out.impl();
  finish("scale", {&a}, out, [ai, oi, s] {
    std::vector<double> g(oi->grad.size());
    for (size_t i = 0; i < g.size(); ++i) g[i] = oi->grad[i] * s;
    ai->accumulate_grad(g);
  });
  return out;
}

Tensor add_scalar(const Tensor& a, double s) {
  const auto pa = a.data();
  std::vector<double> y(pa.size());
  for (size_t i = 0; i < y.size(); ++i) y[i] = pa[i] + s;
  Tensor out = Tensor::create(a.shape(), std::move(y));
  auto ai = a.impl();
  auto oi = out.impl();
  finish("add_scalar", {&a}, out,
         [ai, oi] { ai->accumulate_grad(oi->grad); });
  return out;
}

Tensor gelu(const Tensor& x) {
  const auto px = x.data();
  std::vector<double> y(px.size());
  for (size_t i = 0; i < y.size(); ++i) {
    y[i] = 0.5 * px[i] * (1.0 + std::erf(px[i] * kInvSqrt2));
  }
  Tensor out = Tensor::create(x.shape(), std::move(y));
  auto xi = x.impl();
  auto oi = out.impl();
  finish("gelu", {&x}, out, [xi, oi] {
    std::vector<double> g(oi->grad.size());
    for (size_t i = 0; i < g.size(); ++i) {
      const double v = xi->data[i];
      const double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
      const double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
      g[i] = oi->grad[i] * (cdf + v * pdf);
    }
    xi->accumulate_grad(g);
  });
  return out;
}

Tensor leaky_relu(const Tensor& x, double negative_slope) {
  const auto px = x.data();
  std::vector<double> y(px.size());
  for (size_t i = 0; i < y.size(); ++i) {
    y[i] = px[i] >= 0.0 ? px[i] : negative_slope * px[i];
  }
  Tensor out = Tensor::create(x.shape(), std::move(y));
  auto xi = x.impl();
  auto oi = out.impl();
  finish("leaky_relu", {&x}, out, [xi, oi, negative_slope] {
    std::vector<double> g(oi->grad.size());
    for (size_t i = 0; i < g.size(); ++i) {
      g[i] = oi->grad[i] * (xi->data[i] >= 0.0 ? 1.0 : negative_slope);
    }
    xi->accumulate_grad(g);
  });
  return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() < 2 || b.rank() < 2 || a.rank() != b.rank()) {
    throw ShapeError("matmul: operands must share rank >= 2, got " +
                     shape_str(a.shape()) + " and " + shape_str(b.shape()));
  }
  const int64_t r = a.rank();
  for (int64_t i = 0; i < r - 2; ++i) {
    if (a.extent(i) != b.extent(i)) {
      throw ShapeError("matmul: batch extents differ, " + shape_str(a.shape()) +
                       " vs " + shape_str(b.shape()));
    }
  }
  const int64_t m = a.extent(r - 2);
  const int64_t k = a.extent(r - 1);
  const int64_t k2 = b.extent(r - 2);
  const int64_t n = b.extent(r - 1);
  if (k != k2) {
    throw ShapeError("matmul: inner extents differ, " + shape_str(a.shape()) +
                     " x " + shape_str(b.shape()));
  }
  int64_t batch = 1;
  for (int64_t i = 0; i < r - 2; ++i) batch *= a.extent(i);
  Shape out_shape(a.shape());
  out_shape[static_cast<size_t>(r - 1)] = n;

  std::vector<double> y(static_cast<size_t>(batch * m * n), 0.0);
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  for (int64_t bi = 0; bi < batch; ++bi) {
    const double* A = pa + bi * m * k;
    const double* B = pb + bi * k * n;
    double* C = y.data() + bi * m * n;
    for (int64_t i = 0; i < m; ++i) {
      for (int64_t p = 0; p < k; ++p) {
        const double av = A[i * k + p];
        const double* Brow = B + p * n;
        double* Crow = C + i * n;
        for (int64_t j = 0; j < n; ++j) Crow[j] += av * Brow[j];
      }
    }
  }
  Tensor out = Tensor::create(std::move(out_shape), std::move(y));
  auto ai = a.impl();
  auto bi_ = b.impl();
  auto oi = out.impl();
  finish("matmul", {&a, &b}, out, [ai, bi_, oi, batch, m, k, n] {
    const double* G = oi->grad.data();
    if (ai->requires_grad) {
      std::vector<double> ga(ai->data.size(), 0.0);
      for (int64_t bt = 0; bt < batch; ++bt) {
        const double* Gb = G + bt * m * n;
        const double* B = bi_->data.data() + bt * k * n;
        double* GA = ga.data() + bt * m * k;
        // gA[i,p] = sum_j G[i,j] * B[p,j]
        for (int64_t i = 0; i < m; ++i) {
          for (int64_t p = 0; p < k; ++p) {
            double acc = 0.0;
            const double* Grow = Gb + i * n;
            const double* Brow = B + p * n;
            for (int64_t j = 0; j < n; ++j) acc += Grow[j] * Brow[j];
            GA[i * k + p] = acc;
          }
        }
      }
      ai->accumulate_grad(ga);
    }
    if (bi_->requires_grad) {
      std::vector<double> gb(bi_->data.size(), 0.0);
      for (int64_t bt = 0; bt < batch; ++bt) {
        const double* Gb = G + bt * m * n;
        const double* A = ai->data.data() + bt * m * k;
        double* GB = gb.data() + bt * k * n;
        // gB[p,j] = sum_i A[i,p] * G[i,j]
        for (int64_t i = 0; i < m; ++i) {
          for (int64_t p = 0; p < k; ++p) {
            const double av = A[i * k + p];
            const double* Grow = Gb + i * n;
            double* GBrow = GB + p * n;
            for (int64_t j = 0; j < n; ++j) GBrow[j] += av * Grow[j];
          }
        }
      }
      bi_->accumulate_grad(gb);
    }
  });
  return out;
}

Tensor softmax(const Tensor& x, int64_t axis) {
  const int64_t r = x.rank();
  if (axis < -r || axis >= r) {
    throw AxisError("softmax: axis " + std::to_string(axis) +
                    " out of range for rank " + std::to_string(r));
  }
  if (axis < 0) axis += r;
  int64_t outer = 1, inner = 1;
  for (int64_t i = 0; i < axis; ++i) outer *= x.extent(i);
  const int64_t len = x.extent(axis);
  for (int64_t i = axis + 1; i < r; ++i) inner *= x.extent(i);

  const double* px = x.data().data();
  std::vector<double> y(x.data().size());
  for (int64_t o = 0; o < outer; ++o) {
    for (int64_t in = 0; in < inner; ++in) {
      const int64_t base = o * len * inner + in;
      double mx = px[base];
      for (int64_t l = 1; l < len; ++l) {
        mx = std::max(mx, px[base + l * inner]);
      }
      double denom = 0.0;
      for (int64_t l = 0; l < len; ++l) {
        const double e = std::exp(px[base + l * inner] - mx);
        y[base + l * inner] = e;
        denom += e;
      }
      for (int64_t l = 0; l < len; ++l) y[base + l * inner] /= denom;
    }
  }
  Tensor out = Tensor::create(x.shape(), std::move(y));
  auto xi = x.impl();
  auto oi = out.impl();
  finish("softmax", {&x}, out, [xi, oi, outer, len, inner] {
    std::vector<double> g(oi->grad.size());
    const double* Y = oi->data.data();
    const double* G = oi->grad.data();
    for (int64_t o = 0; o < outer; ++o) {
      for (int64_t in = 0; in < inner; ++in) {
        const int64_t base = o * len * inner + in;
        double dot = 0.0;
        for (int64_t l = 0; l < len; ++l) {
          dot += G[base + l * inner] * Y[base + l * inner];
        }
        for (int64_t l = 0; l < len; ++l) {
          const int64_t idx = base + l * inner;
          g[idx] = Y[idx] * (G[idx] - dot);
        }
      }
    }
    xi->accumulate_grad(g);
  });
  return out;
}

Tensor layernorm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                 double eps) {
  const int64_t c = x.extent(x.rank() - 1);
  if (gamma.rank() != 1 || gamma.extent(0) != c || beta.rank() != 1 ||
      beta.extent(0) != c) {
    throw ShapeError("layernorm: affine pair must have shape (" +
                     std::to_string(c) + "), got gamma " +
                     shape_str(gamma.shape()) + ", beta " +
                     shape_str(beta.shape()));
  }
  const int64_t rows = x.numel() / c;
  const double* px = x.data().data();
  const double* pg = gamma.data().data();
  const double* pb = beta.data().data();
  std::vector<double> y(x.data().size());
  std::vector<double> inv_std(static_cast<size_t>(rows));
  std::vector<double> mean_row(static_cast<size_t>(rows));
  for (int64_t r = 0; r < rows; ++r) {
    const double* row = px + r * c;
    double mu = 0.0;
    for (int64_t j = 0; j < c; ++j) mu += row[j];
    mu /= static_cast<double>(c);
    double var = 0.0;
    for (int64_t j = 0; j < c; ++j) {
      const double d = row[j] - mu;
      var += d * d;
    }
    var /= static_cast<double>(c);
    const double inv = 1.0 / std::sqrt(var + eps);
    inv_std[static_cast<size_t>(r)] = inv;
    mean_row[static_cast<size_t>(r)] = mu;
    double* yrow = y.data() + r * c;
    for (int64_t j = 0; j < c; ++j) {
      yrow[j] = (row[j] - mu) * inv * pg[j] + pb[j];
    }
  }
  Tensor out = Tensor::create(x.shape(), std::move(y));
  auto xi = x.impl();
  auto gi = gamma.impl();
  auto bi = beta.impl();
  auto oi = out.impl();
  finish("layernorm", {&x, &gamma, &beta}, out,
         [xi, gi, bi, oi, rows, c, inv_std = std::move(inv_std),
          mean_row = std::move(mean_row)] {
           const double* G = oi->grad.data();
           const double* X = xi->data.data();
           const double* gam = gi->data.data();
           std::vector<double> gx(xi->data.size(), 0.0);
           std::vector<double> ggamma(static_cast<size_t>(c), 0.0);
           std::vector<double> gbeta(static_cast<size_t>(c), 0.0);
           const double cn = static_cast<double>(c);
           for (int64_t r = 0; r < rows; ++r) {
             const double inv = inv_std[static_cast<size_t>(r)];
             const double mu = mean_row[static_cast<size_t>(r)];
             const double* grow = G + r * c;
             const double* xrow = X + r * c;
             double sum_dxhat = 0.0;
             double sum_dxhat_xhat = 0.0;
             for (int64_t j = 0; j < c; ++j) {
               const double xhat = (xrow[j] - mu) * inv;
               const double dxhat = grow[j] * gam[j];
               sum_dxhat += dxhat;
               sum_dxhat_xhat += dxhat * xhat;
               ggamma[static_cast<size_t>(j)] += grow[j] * xhat;
               gbeta[static_cast<size_t>(j)] += grow[j];
             }
             double* gxrow = gx.data() + r * c;
             for (int64_t j = 0; j < c; ++j) {
               const double xhat = (xrow[j] - mu) * inv;
               const double dxhat = grow[j] * gam[j];
               gxrow[j] = inv * (dxhat - sum_dxhat / cn -
                                 xhat * sum_dxhat_xhat / cn);
             }
           }
           if (xi->requires_grad) xi->accumulate_grad(gx);
           if (gi->requires_grad) gi->accumulate_grad(ggamma);
           if (bi->requires_grad) bi->accumulate_grad(gbeta);
         });
  return out;
}

namespace {

struct Conv3dDims {
  int64_t cin, h, w, d;
  int64_t cout, cpg, k;
  int64_t ho, wo, dout;
  int64_t stride, pad, groups;
};

Conv3dDims conv3d_check(const Tensor& x, const Tensor& kernel, int64_t stride,
                        int64_t pad, int64_t groups) {
  if (x.rank() != 4) {
    throw ShapeError("conv3d: input must be [C,H,W,D], got " +
                     shape_str(x.shape()));
  }
  if (kernel.rank() != 5) {
    throw ShapeError("conv3d: kernel must be [C_out,C_in/groups,k,k,k], got " +
                     shape_str(kernel.shape()));
  }
  Conv3dDims dd;
  dd.cin = x.extent(0);
  dd.h = x.extent(1);
  dd.w = x.extent(2);
  dd.d = x.extent(3);
  dd.cout = kernel.extent(0);
  dd.cpg = kernel.extent(1);
  dd.k = kernel.extent(2);
  if (kernel.extent(3) != dd.k || kernel.extent(4) != dd.k) {
    throw ShapeError("conv3d: kernel must be cubic, got " +
                     shape_str(kernel.shape()));
  }
  if (stride < 1 || pad < 0 || groups < 1) {
    throw ConfigError("conv3d: invalid stride/pad/groups");
  }
  if (dd.cin % groups != 0 || dd.cout % groups != 0) {
    throw ConfigError("conv3d: channels not divisible by groups (C_in=" +
                      std::to_string(dd.cin) + ", C_out=" +
                      std::to_string(dd.cout) + ", groups=" +
                      std::to_string(groups) + ")");
  }
  if (dd.cin / groups != dd.cpg) {
    throw ShapeError("conv3d: kernel C_in/groups extent is " +
                     std::to_string(dd.cpg) + ", expected " +
                     std::to_string(dd.cin / groups));
  }
  dd.stride = stride;
  dd.pad = pad;
  dd.groups = groups;
  dd.ho = (dd.h + 2 * pad - dd.k) / stride + 1;
  dd.wo = (dd.w + 2 * pad - dd.k) / stride + 1;
  dd.dout = (dd.d + 2 * pad - dd.k) / stride + 1;
  if (dd.h + 2 * pad < dd.k || dd.w + 2 * pad < dd.k || dd.d + 2 * pad < dd.k) {
    throw ShapeError("conv3d: kernel larger than padded input");
  }
  return dd;
}

// Valid output range [lo, hi] such that o*stride - pad + kk stays inside
// [0, extent).
std::pair<int64_t, int64_t> out_range(int64_t extent, int64_t out_extent,
                                      int64_t stride, int64_t pad,
                                      int64_t kk) {
  const int64_t lo = std::max<int64_t>(0, ceil_div(pad - kk, stride));
  const int64_t hi =
      std::min<int64_t>(out_extent - 1, floor_div(extent - 1 + pad - kk, stride));
  return {lo, hi};
}

}  // namespace

Tensor conv3d(const Tensor& x, const Tensor& kernel, int64_t stride,
              int64_t pad, int64_t groups) {
  const Conv3dDims dd = conv3d_check(x, kernel, stride, pad, groups);
  std::vector<double> y(
      static_cast<size_t>(dd.cout * dd.ho * dd.wo * dd.dout), 0.0);
  const double* px = x.data().data();
  const double* pw = kernel.data().data();
  const int64_t cout_per_group = dd.cout / dd.groups;

  parallel_for(dd.cout, [&](int64_t co) {
    const int64_t g = co / cout_per_group;
    double* yc = y.data() + co * dd.ho * dd.wo * dd.dout;
    for (int64_t cl = 0; cl < dd.cpg; ++cl) {
      const int64_t ci = g * dd.cpg + cl;
      const double* xc = px + ci * dd.h * dd.w * dd.d;
      const double* wc = pw + (co * dd.cpg + cl) * dd.k * dd.k * dd.k;
      for (int64_t kh = 0; kh < dd.k; ++kh) {
        const auto [h_lo, h_hi] = out_range(dd.h, dd.ho, dd.stride, dd.pad, kh);
        for (int64_t kw = 0; kw < dd.k; ++kw) {
          const auto [w_lo, w_hi] =
              out_range(dd.w, dd.wo, dd.stride, dd.pad, kw);
          for (int64_t kd = 0; kd < dd.k; ++kd) {
            const auto [d_lo, d_hi] =
                out_range(dd.d, dd.dout, dd.stride, dd.pad, kd);
            const double wv = wc[(kh * dd.k + kw) * dd.k + kd];
            if (wv == 0.0) continue;
            for (int64_t oh = h_lo; oh <= h_hi; ++oh) {
              const int64_t ih = oh * dd.stride - dd.pad + kh;
              for (int64_t ow = w_lo; ow <= w_hi; ++ow) {
                const int64_t iw = ow * dd.stride - dd.pad + kw;
                const double* xrow = xc + (ih * dd.w + iw) * dd.d;
                double* yrow = yc + (oh * dd.wo + ow) * dd.dout;
                for (int64_t od = d_lo; od <= d_hi; ++od) {
                  yrow[od] += wv * xrow[od * dd.stride - dd.pad + kd];
                }
              }
            }
          }
        }
      }
    }
  });

  Tensor out =
      Tensor::create({dd.cout, dd.ho, dd.wo, dd.dout}, std::move(y));
  auto xi = x.impl();
  auto wi = kernel.impl();
  auto oi = out.impl();
  finish("conv3d", {&x, &kernel}, out, [xi, wi, oi, dd, cout_per_group] {
    const double* G = oi->grad.data();
    if (xi->requires_grad) {
      std::vector<double> gx(xi->data.size(), 0.0);
      // Disjoint writes per input channel; contributions from all output
      // channels in the input channel's group, accumulated serially.
      parallel_for(dd.cin, [&](int64_t ci) {
        const int64_t g = ci / dd.cpg;
        const int64_t cl = ci % dd.cpg;
        double* gxc = gx.data() + ci * dd.h * dd.w * dd.d;
        for (int64_t col = 0; col < cout_per_group; ++col) {
          const int64_t co = g * cout_per_group + col;
          const double* gyc = G + co * dd.ho * dd.wo * dd.dout;
          const double* wc =
              wi->data.data() + (co * dd.cpg + cl) * dd.k * dd.k * dd.k;
          for (int64_t kh = 0; kh < dd.k; ++kh) {
            const auto [h_lo, h_hi] =
                out_range(dd.h, dd.ho, dd.stride, dd.pad, kh);
            for (int64_t kw = 0; kw < dd.k; ++kw) {
              const auto [w_lo, w_hi] =
                  out_range(dd.w, dd.wo, dd.stride, dd.pad, kw);
              for (int64_t kd = 0; kd < dd.k; ++kd) {
                const auto [d_lo, d_hi] =
                    out_range(dd.d, dd.dout, dd.stride, dd.pad, kd);
                const double wv = wc[(kh * dd.k + kw) * dd.k + kd];
                if (wv == 0.0) continue;
                for (int64_t oh = h_lo; oh <= h_hi; ++oh) {
                  const int64_t ih = oh * dd.stride - dd.pad + kh;
                  for (int64_t ow = w_lo; ow <= w_hi; ++ow) {
                    const int64_t iw = ow * dd.stride - dd.pad + kw;
                    double* gxrow = gxc + (ih * dd.w + iw) * dd.d;
                    const double* grow = gyc + (oh * dd.wo + ow) * dd.dout;
                    for (int64_t od = d_lo; od <= d_hi; ++od) {
                      gxrow[od * dd.stride - dd.pad + kd] += wv * grow[od];
                    }
                  }
                }
              }
            }
          }
        }
      });
      xi->accumulate_grad(gx);
    }
    if (wi->requires_grad) {
      std::vector<double> gw(wi->data.size(), 0.0);
      parallel_for(dd.cout, [&](int64_t co) {
        const int64_t g = co / cout_per_group;
        const double* gyc = G + co * dd.ho * dd.wo * dd.dout;
        for (int64_t cl = 0; cl < dd.cpg; ++cl) {
          const int64_t ci = g * dd.cpg + cl;
          const double* xc = xi->data.data() + ci * dd.h * dd.w * dd.d;
          double* gwc = gw.data() + (co * dd.cpg + cl) * dd.k * dd.k * dd.k;
          for (int64_t kh = 0; kh < dd.k; ++kh) {
            const auto [h_lo, h_hi] =
                out_range(dd.h, dd.ho, dd.stride, dd.pad, kh);
            for (int64_t kw = 0; kw < dd.k; ++kw) {
              const auto [w_lo, w_hi] =
                  out_range(dd.w, dd.wo, dd.stride, dd.pad, kw);
              for (int64_t kd = 0; kd < dd.k; ++kd) {
                const auto [d_lo, d_hi] =
                    out_range(dd.d, dd.dout, dd.stride, dd.pad, kd);
                double acc = 0.0;
                for (int64_t oh = h_lo; oh <= h_hi; ++oh) {
                  const int64_t ih = oh * dd.stride - dd.pad + kh;
                  for (int64_t ow = w_lo; ow <= w_hi; ++ow) {
                    const int64_t iw = ow * dd.stride - dd.pad + kw;
                    const double* xrow = xc + (ih * dd.w + iw) * dd.d;
                    const double* grow = gyc + (oh * dd.wo + ow) * dd.dout;
                    for (int64_t od = d_lo; od <= d_hi; ++od) {
                      acc += grow[od] * xrow[od * dd.stride - dd.pad + kd];
                    }
                  }
                }
                gwc[(kh * dd.k + kw) * dd.k + kd] += acc;
              }
            }
          }
        }
      });
      wi->accumulate_grad(gw);
    }
  });
  return out;
}

Tensor add_channel_bias(const Tensor& x, const Tensor& bias) {
  if (bias.rank() != 1 || bias.extent(0) != x.extent(0)) {
    throw ShapeError("add_channel_bias: bias " + shape_str(bias.shape()) +
                     " does not match leading extent of " +
                     shape_str(x.shape()));
  }
  const int64_t c = x.extent(0);
  const int64_t spatial = x.numel() / c;
  const double* px = x.data().data();
  const double* pb = bias.data().data();
  std::vector<double> y(x.data().size());
  for (int64_t ch = 0; ch < c; ++ch) {
    const double bv = pb[ch];
    for (int64_t s = 0; s < spatial; ++s) {
      y[static_cast<size_t>(ch * spatial + s)] = px[ch * spatial + s] + bv;
    }
  }
  Tensor out = Tensor::create(x.shape(), std::move(y));
  auto xi = x.impl();
  auto bi = bias.impl();
  auto oi = out.impl();
  finish("add_channel_bias", {&x, &bias}, out, [xi, bi, oi, c, spatial] {
    if (xi->requires_grad) xi->accumulate_grad(oi->grad);
    if (bi->requires_grad) {
      std::vector<double> gb(static_cast<size_t>(c), 0.0);
      for (int64_t ch = 0; ch < c; ++ch) {
        double acc = 0.0;
        for (int64_t s = 0; s < spatial; ++s) {
          acc += oi->grad[static_cast<size_t>(ch * spatial + s)];
        }
        gb[static_cast<size_t>(ch)] = acc;
      }
      bi->accumulate_grad(gb);
    }
  });
  return out;
}

Tensor add_last_bias(const Tensor& x, const Tensor& bias) {
  const int64_t c = x.extent(x.rank() - 1);
  if (bias.rank() != 1 || bias.extent(0) != c) {
    throw ShapeError("add_last_bias: bias " + shape_str(bias.shape()) +
                     " does not match last extent of " + shape_str(x.shape()));
  }
  const int64_t rows = x.numel() / c;
  const double* px = x.data().data();
  const double* pb = bias.data().data();
  std::vector<double> y(x.data().size());
  for (int64_t r = 0; r < rows; ++r) {
    for (int64_t j = 0; j < c; ++j) {
      y[static_cast<size_t>(r * c + j)] = px[r * c + j] + pb[j];
    }
  }
  Tensor out = Tensor::create(x.shape(), std::move(y));
  auto xi = x.impl();
  auto bi = bias.impl();
  auto oi = out.impl();
  finish("add_last_bias", {&x, &bias}, out, [xi, bi, oi, rows, c] {
    if (xi->requires_grad) xi->accumulate_grad(oi->grad);
    if (bi->requires_grad) {
      std::vector<double> gb(static_cast<size_t>(c), 0.0);
      for (int64_t r = 0; r < rows; ++r) {
        for (int64_t j = 0; j < c; ++j) {
          gb[static_cast<size_t>(j)] += oi->grad[static_cast<size_t>(r * c + j)];
        }
      }
      bi->accumulate_grad(gb);
    }
  });
  return out;
}

namespace {

struct SampleCell {
  int64_t i0[3];
  double t[3];
  bool clamped[3];
};

SampleCell locate(double cx, double cy, double cz, int64_t h, int64_t w,
                  int64_t d) {
  SampleCell cell;
  const double c[3] = {cx, cy, cz};
  const int64_t e[3] = {h, w, d};
  for (int axis = 0; axis < 3; ++axis) {
    const double hi = static_cast<double>(e[axis] - 1);
    double v = c[axis];
    cell.clamped[axis] = v < 0.0 || v > hi;
    if (v < 0.0) v = 0.0;
    if (v > hi) v = hi;
    int64_t i0 = static_cast<int64_t>(std::floor(v));
    if (i0 > e[axis] - 2) i0 = std::max<int64_t>(0, e[axis] - 2);
    cell.i0[axis] = i0;
    cell.t[axis] = v - static_cast<double>(i0);
  }
  return cell;
}

}  // namespace

Tensor grid_sample(const Tensor& x, const Tensor& coords) {
  if (x.rank() != 4) {
    throw ShapeError("grid_sample: field must be [H,W,D,C], got " +
                     shape_str(x.shape()));
  }
  if (coords.extent(coords.rank() - 1) != 3) {
    throw ShapeError("grid_sample: coords last extent must be 3, got " +
                     shape_str(coords.shape()));
  }
  const int64_t h = x.extent(0), w = x.extent(1), d = x.extent(2),
                c = x.extent(3);
  const int64_t m = coords.numel() / 3;
  Shape out_shape(coords.shape().begin(), coords.shape().end() - 1);
  out_shape.push_back(c);

  const double* px = x.data().data();
  const double* pc = coords.data().data();
  std::vector<double> y(static_cast<size_t>(m * c), 0.0);
  for (int64_t s = 0; s < m; ++s) {
    const SampleCell cell =
        locate(pc[s * 3 + 0], pc[s * 3 + 1], pc[s * 3 + 2], h, w, d);
    const double wx[2] = {1.0 - cell.t[0], cell.t[0]};
    const double wy[2] = {1.0 - cell.t[1], cell.t[1]};
    const double wz[2] = {1.0 - cell.t[2], cell.t[2]};
    double* yrow = y.data() + s * c;
    for (int dx = 0; dx < 2; ++dx) {
      const int64_t ix = std::min<int64_t>(cell.i0[0] + dx, h - 1);
      for (int dy = 0; dy < 2; ++dy) {
        const int64_t iy = std::min<int64_t>(cell.i0[1] + dy, w - 1);
        for (int dz = 0; dz < 2; ++dz) {
          const int64_t iz = std::min<int64_t>(cell.i0[2] + dz, d - 1);
          const double wgt = wx[dx] * wy[dy] * wz[dz];
          if (wgt == 0.0) continue;
          const double* src = px + (((ix * w) + iy) * d + iz) * c;
          for (int64_t ch = 0; ch < c; ++ch) yrow[ch] += wgt * src[ch];
        }
      }
    }
  }
  Tensor out = Tensor::create(std::move(out_shape), std::move(y));
  auto xi = x.impl();
  auto ci = coords.impl();
  auto oi = out.impl();
  finish("grid_sample", {&x, &coords}, out, [xi, ci, oi, h, w, d, c, m] {
    const double* G = oi->grad.data();
    const double* px = xi->data.data();
    const double* pc = ci->data.data();
    std::vector<double> gx;
    std::vector<double> gc;
    if (xi->requires_grad) gx.assign(xi->data.size(), 0.0);
    if (ci->requires_grad) gc.assign(ci->data.size(), 0.0);
    for (int64_t s = 0; s < m; ++s) {
      const SampleCell cell =
          locate(pc[s * 3 + 0], pc[s * 3 + 1], pc[s * 3 + 2], h, w, d);
      const double wx[2] = {1.0 - cell.t[0], cell.t[0]};
      const double wy[2] = {1.0 - cell.t[1], cell.t[1]};
      const double wz[2] = {1.0 - cell.t[2], cell.t[2]};
      const double* grow = G + s * c;
      double dcoord[3] = {0.0, 0.0, 0.0};
      for (int dx = 0; dx < 2; ++dx) {
        const int64_t ix = std::min<int64_t>(cell.i0[0] + dx, h - 1);
        const double sx = dx == 0 ? -1.0 : 1.0;
        for (int dy = 0; dy < 2; ++dy) {
          const int64_t iy = std::min<int64_t>(cell.i0[1] + dy, w - 1);
          const double sy = dy == 0 ? -1.0 : 1.0;
          for (int dz = 0; dz < 2; ++dz) {
            const int64_t iz = std::min<int64_t>(cell.i0[2] + dz, d - 1);
            const double sz = dz == 0 ? -1.0 : 1.0;
            const double wgt = wx[dx] * wy[dy] * wz[dz];
            const int64_t off = (((ix * w) + iy) * d + iz) * c;
            double gdot = 0.0;
            if (!gc.empty() || wgt != 0.0) {
              for (int64_t ch = 0; ch < c; ++ch) {
                gdot += grow[ch] * px[off + ch];
              }
            }
            if (!gx.empty() && wgt != 0.0) {
              double* dst = gx.data() + off;
              for (int64_t ch = 0; ch < c; ++ch) dst[ch] += wgt * grow[ch];
            }
            if (!gc.empty()) {
              dcoord[0] += sx * wy[dy] * wz[dz] * gdot;
              dcoord[1] += wx[dx] * sy * wz[dz] * gdot;
              dcoord[2] += wx[dx] * wy[dy] * sz * gdot;
            }
          }
        }
      }
      if (!gc.empty()) {
        for (int axis = 0; axis < 3; ++axis) {
          gc[static_cast<size_t>(s * 3 + axis)] =
              cell.clamped[axis] ? 0.0 : dcoord[axis];
        }
      }
    }
    if (!gx.empty()) xi->accumulate_grad(gx);
    if (!gc.empty()) ci->accumulate_grad(gc);
  });
  return out;
}

Tensor gather_rows(const Tensor& x, const std::vector<int64_t>& indices) {
  if (x.rank() != 2) {
    throw ShapeError("gather_rows: input must be [N,C], got " +
                     shape_str(x.shape()));
  }
  const int64_t n = x.extent(0);
  const int64_t c = x.extent(1);
  const int64_t m = static_cast<int64_t>(indices.size());
  for (int64_t idx : indices) {
    if (idx < -1 || idx >= n) {
      throw ShapeError("gather_rows: index " + std::to_string(idx) +
                       " out of range [0," + std::to_string(n) + ")");
    }
  }
  const double* px = x.data().data();
  std::vector<double> y(static_cast<size_t>(m * c), 0.0);
  for (int64_t i = 0; i < m; ++i) {
    const int64_t idx = indices[static_cast<size_t>(i)];
    if (idx >= 0) {
      std::memcpy(y.data() + i * c, px + idx * c,
                  static_cast<size_t>(c) * sizeof(double));
    }
  }
  Tensor out = Tensor::create({m, c}, std::move(y));
  auto xi = x.impl();
  auto oi = out.impl();
  finish("gather_rows", {&x}, out, [xi, oi, indices, c, m] {
    std::vector<double> gx(xi->data.size(), 0.0);
    const double* G = oi->grad.data();
    for (int64_t i = 0; i < m; ++i) {
      const int64_t idx = indices[static_cast<size_t>(i)];
      if (idx < 0) continue;
      double* dst = gx.data() + idx * c;
      const double* src = G + i * c;
      for (int64_t j = 0; j < c; ++j) dst[j] += src[j];
    }
    xi->accumulate_grad(gx);
  });
  return out;
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " +
                     shape_str(shape));
  }
  std::vector<double> y(x.data().begin(), x.data().end());
  Tensor out = Tensor::create(std::move(shape), std::move(y));
  auto xi = x.impl();
  auto oi = out.impl();
  finish("reshape", {&x}, out, [xi, oi] { xi->accumulate_grad(oi->grad); });
  return out;
}

namespace {

std::vector<int64_t> row_major_strides(const Shape& shape) {
  std::vector<int64_t> strides(shape.size(), 1);
  for (size_t i = shape.size(); i-- > 1;) {
    strides[i - 1] = strides[i] * shape[i];
  }
  return strides;
}

void permute_into(const double* src, double* dst, const Shape& in_shape,
                  const std::vector<int64_t>& axes) {
  const size_t r = in_shape.size();
  Shape out_shape(r);
  for (size_t i = 0; i < r; ++i) out_shape[i] = in_shape[axes[i]];
  const auto in_strides = row_major_strides(in_shape);
  std::vector<int64_t> gather_strides(r);
  for (size_t i = 0; i < r; ++i) gather_strides[i] = in_strides[axes[i]];
  const int64_t n = shape_numel(in_shape);
  std::vector<int64_t> idx(r, 0);
  for (int64_t flat = 0; flat < n; ++flat) {
    int64_t src_off = 0;
    for (size_t i = 0; i < r; ++i) src_off += idx[i] * gather_strides[i];
    dst[flat] = src[src_off];
    for (size_t i = r; i-- > 0;) {
      if (++idx[i] < out_shape[i]) break;
      idx[i] = 0;
    }
  }
}

}  // namespace

Tensor permute(const Tensor& x, const std::vector<int64_t>& axes) {
  const size_t r = static_cast<size_t>(x.rank());
  if (axes.size() != r) {
    throw ShapeError("permute: axes size must equal rank");
  }
  std::vector<bool> seen(r, false);
  for (int64_t a : axes) {
    if (a < 0 || a >= static_cast<int64_t>(r) || seen[static_cast<size_t>(a)]) {
      throw ShapeError("permute: axes must be a permutation of 0..rank-1");
    }
    seen[static_cast<size_t>(a)] = true;
  }
  Shape out_shape(r);
  for (size_t i = 0; i < r; ++i) out_shape[i] = x.extent(axes[i]);
  std::vector<double> y(x.data().size());
  permute_into(x.data().data(), y.data(), x.shape(), axes);
  Tensor out = Tensor::create(std::move(out_shape), std::move(y));
  auto xi = x.impl();
  auto oi = out.impl();
  finish("permute", {&x}, out, [xi, oi, axes] {
    const size_t r = axes.size();
    std::vector<int64_t> inverse(r);
    for (size_t i = 0; i < r; ++i) inverse[static_cast<size_t>(axes[i])] = i;
    std::vector<double> gx(xi->data.size());
    permute_into(oi->grad.data(), gx.data(), oi->shape, inverse);
    xi->accumulate_grad(gx);
  });
  return out;
}

Tensor concat(const std::vector<Tensor>& parts, int64_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const int64_t r = parts[0].rank();
  if (axis < 0 || axis >= r) {
    throw AxisError("concat: axis " + std::to_string(axis) +
                    " out of range for rank " + std::to_string(r));
  }
  Shape out_shape = parts[0].shape();
  int64_t axis_total = 0;
  for (const Tensor& p : parts) {
    if (p.rank() != r) throw ShapeError("concat: rank mismatch");
    for (int64_t i = 0; i < r; ++i) {
      if (i != axis && p.extent(i) != out_shape[static_cast<size_t>(i)]) {
        throw ShapeError("concat: extent mismatch on axis " +
                         std::to_string(i));
      }
    }
    axis_total += p.extent(axis);
  }
  out_shape[static_cast<size_t>(axis)] = axis_total;

  int64_t outer = 1, inner = 1;
  for (int64_t i = 0; i < axis; ++i) outer *= out_shape[static_cast<size_t>(i)];
  for (int64_t i = axis + 1; i < r; ++i) {
    inner *= out_shape[static_cast<size_t>(i)];
  }
  std::vector<double> y(static_cast<size_t>(outer * axis_total * inner));
  int64_t offset = 0;
  for (const Tensor& p : parts) {
    const int64_t len = p.extent(axis);
    const double* src = p.data().data();
    for (int64_t o = 0; o < outer; ++o) {
      std::memcpy(y.data() + (o * axis_total + offset) * inner,
                  src + o * len * inner,
                  static_cast<size_t>(len * inner) * sizeof(double));
    }
    offset += len;
  }
  Tensor out = Tensor::create(std::move(out_shape), std::move(y));
  bool any_rg = false;
  for (const Tensor& p : parts) any_rg = any_rg || p.requires_grad();
  check_finite("concat", out);
  if (any_rg) {
    out.set_requires_grad(true);
    if (Tape::active() != nullptr) {
      Tape::Node node;
      node.op = "concat";
      std::vector<std::shared_ptr<TensorImpl>> impls;
      for (const Tensor& p : parts) impls.push_back(p.impl());
      node.inputs = impls;
      node.output = out.impl();
      auto oi = out.impl();
      std::vector<int64_t> lens;
      for (const Tensor& p : parts) lens.push_back(p.extent(axis));
      node.backward = [impls, oi, lens, outer, inner, axis_total] {
        int64_t offset = 0;
        for (size_t pi = 0; pi < impls.size(); ++pi) {
          const int64_t len = lens[pi];
          if (impls[pi]->requires_grad) {
            std::vector<double> g(static_cast<size_t>(outer * len * inner));
            for (int64_t o = 0; o < outer; ++o) {
              std::memcpy(g.data() + o * len * inner,
                          oi->grad.data() + (o * axis_total + offset) * inner,
                          static_cast<size_t>(len * inner) * sizeof(double));
            }
            impls[pi]->accumulate_grad(g);
          }
          offset += len;
        }
      };
      Tape::active()->record(std::move(node));
    }
  }
  return out;
}

Tensor narrow(const Tensor& x, int64_t axis, int64_t start, int64_t length) {
  const int64_t r = x.rank();
  if (axis < 0 || axis >= r) {
    throw AxisError("narrow: axis out of range");
  }
  if (start < 0 || length < 1 || start + length > x.extent(axis)) {
    throw ShapeError("narrow: slice [" + std::to_string(start) + "," +
                     std::to_string(start + length) + ") out of range for " +
                     shape_str(x.shape()) + " axis " + std::to_string(axis));
  }
  Shape out_shape = x.shape();
  out_shape[static_cast<size_t>(axis)] = length;
  int64_t outer = 1, inner = 1;
  for (int64_t i = 0; i < axis; ++i) outer *= x.extent(i);
  for (int64_t i = axis + 1; i < r; ++i) inner *= x.extent(i);
  const int64_t full = x.extent(axis);
  const double* px = x.data().data();
  std::vector<double> y(static_cast<size_t>(outer * length * inner));
  for (int64_t o = 0; o < outer; ++o) {
    std::memcpy(y.data() + o * length * inner,
                px + (o * full + start) * inner,
                static_cast<size_t>(length * inner) * sizeof(double));
  }
  Tensor out = Tensor::create(std::move(out_shape), std::move(y));
  auto xi = x.impl();
  auto oi = out.impl();
  finish("narrow", {&x}, out, [xi, oi, outer, inner, full, start, length] {
    std::vector<double> gx(xi->data.size(), 0.0);
    for (int64_t o = 0; o < outer; ++o) {
      const double* src = oi->grad.data() + o * length * inner;
      double* dst = gx.data() + (o * full + start) * inner;
      for (int64_t j = 0; j < length * inner; ++j) dst[j] += src[j];
    }
    xi->accumulate_grad(gx);
  });
  return out;
}

Tensor sum(const Tensor& x) {
  double acc = 0.0;
  for (double v : x.data()) acc += v;
  Tensor out = Tensor::scalar(acc);
  auto xi = x.impl();
  auto oi = out.impl();
  finish("sum", {&x}, out, [xi, oi] {
    std::vector<double> g(xi->data.size(), oi->grad[0]);
    xi->accumulate_grad(g);
  });
  return out;
}

Tensor mean(const Tensor& x) {
  double acc = 0.0;
  for (double v : x.data()) acc += v;
  const double n = static_cast<double>(x.numel());
  Tensor out = Tensor::scalar(acc / n);
  auto xi = x.impl();
  auto oi = out.impl();
  finish("mean", {&x}, out, [xi, oi, n] {
    std::vector<double> g(xi->data.size(), oi->grad[0] / n);
    xi->accumulate_grad(g);
  });
  return out;
}

}  // namespace defxattn
