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
// Flat key=value run configuration: architecture, optimizer, loss weights,
// dataset parameters, and output location. `#` starts a comment; unknown keys
// are rejected. serialize_run_config emits a canonical form that the
// checkpoint header echoes verbatim.
#ifndef DEFXATTN_CONFIG_HPP_
#define DEFXATTN_CONFIG_HPP_

#include <cstdint>
#include <string>

#include "defxattn/network.hpp"

namespace defxattn {

struct RunConfig {
  ModelConfig model = desk_model_config();

  // Optimizer and loss mix.
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double w_ncc = 1.0;
  double w_dice = 1.0;
  double w_reg = 1.0;
  int64_t iters = 500;
  int64_t val_every = 50;
  int64_t ncc_window = 5;

  // Synthetic dataset.
  uint64_t seed = 7;
  int64_t pairs = 8;
  int64_t labels = 4;
  double max_warp = 5.0;
  bool multimodal = false;

  std::string out_dir = "out";

  void validate() const;  // delegates to model.validate() plus its own checks

  // Deterministic single-window desk architecture used when no config file is
  // given: 16^3 volume, patch 2, two stages of width 8/16.
  static ModelConfig desk_model_config();
};

// Parses config text; later assignments win. Unknown keys, malformed values,
// or out-of-range numbers raise ConfigError.
RunConfig parse_run_config(const std::string& text);

RunConfig load_run_config(const std::string& path);

// Applies one "key=value" override on top of an existing config.
void apply_override(RunConfig& config, const std::string& assignment);

// Canonical serialization: fixed key order, %.17g doubles. Parsing the result
// reproduces the config exactly.
std::string serialize_run_config(const RunConfig& config);

}  // namespace defxattn

#endif  // DEFXATTN_CONFIG_HPP_
