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
// Binary parameter snapshots. Layout (all integers little-endian):
//   "DCAX" | u32 version (1) | u32 config_len | config text |
//   u32 n_tensors | per tensor: u16 name_len, name, u8 rank, u32 extents[rank],
//   u64 offset into the payload (in floats) | payload: float32 values.
// Tensors are stored in name order; save→load→save is byte-identical.
#ifndef DEFXATTN_CHECKPOINT_HPP_
#define DEFXATTN_CHECKPOINT_HPP_

#include <string>

#include "defxattn/tensor.hpp"

namespace defxattn {

inline constexpr uint32_t kCheckpointVersion = 1;

// Writes every store entry (float32) plus the config echo text.
void save_checkpoint(const std::string& path, const ParameterStore& store,
                     const std::string& config_echo);

// Restores values into an already-built store (same names and shapes as at
// save time) and returns the config echo. Name or shape mismatches raise
// ConfigError listing every offender; corrupt or truncated files raise
// FormatError.
std::string load_checkpoint(const std::string& path, ParameterStore& store);

// Reads only the config echo, for rebuilding the store before a full load.
std::string read_checkpoint_config(const std::string& path);

}  // namespace defxattn

#endif  // DEFXATTN_CHECKPOINT_HPP_
