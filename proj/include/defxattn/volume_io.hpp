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
// Raw little-endian volume files: `<base>.raw` holds the packed payload
// (float32 or int32), `<base>.hdr` is a small text sidecar with dtype and
// extents. Trivially loadable from any language.
#ifndef DEFXATTN_VOLUME_IO_HPP_
#define DEFXATTN_VOLUME_IO_HPP_

#include <string>

#include "defxattn/registration.hpp"
#include "defxattn/tensor.hpp"

namespace defxattn {

// Writes `<base>.raw` (float32) and `<base>.hdr` for a tensor of any rank.
void save_raw_volume(const std::string& base, const Tensor& tensor);
Tensor load_raw_volume(const std::string& base);

// Same pair of files with an int32 payload and the rank-3 label extents.
void save_label_volume(const std::string& base, const LabelMap& labels);
LabelMap load_label_volume(const std::string& base);

}  // namespace defxattn

#endif  // DEFXATTN_VOLUME_IO_HPP_
