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
#ifndef DEFXATTN_THREADING_HPP_
#define DEFXATTN_THREADING_HPP_

#include <cstdint>
#include <functional>

namespace defxattn {

// Worker cap: DEFXATTN_THREADS env var, default 1 (fully serial).
// Read once per process.
int max_threads();

// Runs fn(i) for i in [0, n). Work is split into contiguous index ranges,
// one per worker; every index is computed by exactly one worker with the
// same serial inner order, so results are bitwise identical for any worker
// count as long as different indices write disjoint outputs.
void parallel_for(int64_t n, const std::function<void(int64_t)>& fn);

}  // namespace defxattn

#endif  // DEFXATTN_THREADING_HPP_
