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
#include "defxattn/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "defxattn/errors.hpp"
#include "defxattn/rng.hpp"

namespace defxattn {

GradcheckReport gradcheck(
    const std::function<Tensor()>& f,
    const std::vector<std::pair<std::string, Tensor>>& wrt,
    const GradcheckOptions& opts) {
  for (const auto& [name, t] : wrt) {
    if (!t.requires_grad()) {
      throw GraphError("gradcheck: tensor '" + name +
                       "' does not require grad");
    }
    Tensor handle = t;  // value handle; shares storage
    handle.zero_grad();
  }

  Tape tape;
  {
    Tape::Scope scope(tape);
    Tensor loss = f();
    if (loss.numel() != 1) {
      throw ShapeError("gradcheck: f must return a scalar, got " +
                       shape_str(loss.shape()));
    }
    backward(loss, tape);
  }

  GradcheckReport report;
  report.worst.rel_err = 0.0;
  Rng rng(opts.sample_seed);
  for (const auto& [name, t] : wrt) {
    const auto& grad = t.impl()->grad;
    const int64_t n = t.numel();
    std::vector<int64_t> probe;
    if (opts.entries_per_tensor <= 0 || opts.entries_per_tensor >= n) {
      probe.resize(static_cast<size_t>(n));
      for (int64_t i = 0; i < n; ++i) probe[static_cast<size_t>(i)] = i;
    } else {
      // Sample without replacement via partial Fisher-Yates.
      std::vector<int64_t> pool(static_cast<size_t>(n));
      for (int64_t i = 0; i < n; ++i) pool[static_cast<size_t>(i)] = i;
      for (int64_t i = 0; i < opts.entries_per_tensor; ++i) {
        const int64_t j = i + static_cast<int64_t>(rng.next_below(
                                  static_cast<uint64_t>(n - i)));
        std::swap(pool[static_cast<size_t>(i)], pool[static_cast<size_t>(j)]);
      }
      probe.assign(pool.begin(), pool.begin() + opts.entries_per_tensor);
      std::sort(probe.begin(), probe.end());
    }

    Tensor handle = t;  // value handle; shares storage
    double* data = handle.mutable_data().data();
    for (int64_t idx : probe) {
      const double saved = data[idx];
      data[idx] = saved + opts.step;
      const double fp = f().item();
      data[idx] = saved - opts.step;
      const double fm = f().item();
      data[idx] = saved;
      const double numeric = (fp - fm) / (2.0 * opts.step);
      const double analytic =
          grad.empty() ? 0.0 : grad[static_cast<size_t>(idx)];
      const double denom =
          std::max({std::fabs(analytic), std::fabs(numeric), 1e-3});
      const double rel = std::fabs(analytic - numeric) / denom;
      ++report.entries_checked;
      if (rel > report.worst.rel_err) {
        report.worst = {name, idx, analytic, numeric, rel};
      }
    }
  }
  return report;
}

}  // namespace defxattn
