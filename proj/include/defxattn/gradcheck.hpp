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
#ifndef DEFXATTN_GRADCHECK_HPP_
#define DEFXATTN_GRADCHECK_HPP_

#include <functional>
#include <string>
#include <vector>

#include "defxattn/tensor.hpp"

namespace defxattn {

struct GradcheckOptions {
  double step = 1e-5;           // absolute central-difference step
  int64_t entries_per_tensor = 0;  // 0 = exhaustive; else sampled count
  uint64_t sample_seed = 7;
};

struct GradcheckEntry {
  std::string tensor;
  int64_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_err = 0.0;
};

struct GradcheckReport {
  int64_t entries_checked = 0;
  GradcheckEntry worst;
  bool passes(double tol) const { return worst.rel_err < tol; }
};

// Compares tape gradients of a scalar-valued function against central
// differences.  `f` must rebuild its computation from the tensors' current
// contents on every call; it runs once under a recording tape for the
// analytic side and twice per probed entry with no tape for the numeric side.
// rel_err = |a - n| / max(|a|, |n|, 1e-3).
GradcheckReport gradcheck(const std::function<Tensor()>& f,
                          const std::vector<std::pair<std::string, Tensor>>& wrt,
                          const GradcheckOptions& opts = {});

}  // namespace defxattn

#endif  // DEFXATTN_GRADCHECK_HPP_
