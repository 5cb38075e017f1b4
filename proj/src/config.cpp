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
#include "defxattn/config.hpp"

#include <cstdio>
#include <memory>
#include <sstream>
#include <vector>

#include "defxattn/errors.hpp"

namespace defxattn {
namespace {

std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r\n");
  if (begin == std::string::npos) return "";
  const auto end = s.find_last_not_of(" \t\r\n");
  return s.substr(begin, end - begin + 1);
}

int64_t parse_int(const std::string& key, const std::string& value) {
  size_t used = 0;
  int64_t out;
  try {
    out = std::stoll(value, &used);
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "' needs an integer, got '" +
                      value + "'");
  }
  if (used != value.size()) {
    throw ConfigError("config key '" + key + "' needs an integer, got '" +
                      value + "'");
  }
  return out;
}

double parse_double(const std::string& key, const std::string& value) {
  size_t used = 0;
  double out;
  try {
    out = std::stod(value, &used);
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "' needs a number, got '" + value +
                      "'");
  }
  if (used != value.size()) {
    throw ConfigError("config key '" + key + "' needs a number, got '" + value +
                      "'");
  }
  return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "0" || value == "false") return false;
  if (value == "1" || value == "true") return true;
  throw ConfigError("config key '" + key + "' needs 0/1, got '" + value + "'");
}

std::vector<int64_t> parse_int_list(const std::string& key,
                                    const std::string& value) {
  std::vector<int64_t> out;
  std::istringstream in(value);
  std::string item;
  while (std::getline(in, item, ',')) {
    out.push_back(parse_int(key, trim(item)));
  }
  if (out.empty()) {
    throw ConfigError("config key '" + key + "' lists no values");
  }
  return out;
}

std::vector<double> parse_double_list(const std::string& key,
                                      const std::string& value) {
  std::vector<double> out;
  std::istringstream in(value);
  std::string item;
  while (std::getline(in, item, ',')) {
    out.push_back(parse_double(key, trim(item)));
  }
  return out;
}

std::array<int64_t, 3> parse_triple(const std::string& key,
                                    const std::string& value) {
  const std::vector<int64_t> list = parse_int_list(key, value);
  if (list.size() != 3) {
    throw ConfigError("config key '" + key + "' needs exactly 3 values, got " +
                      std::to_string(list.size()));
  }
  return {list[0], list[1], list[2]};
}

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string fmt_list(const std::vector<int64_t>& v) {
  std::string out;
  for (size_t i = 0; i < v.size(); ++i) {
    if (i > 0) out += ',';
    out += std::to_string(v[i]);
  }
  return out;
}

}  // namespace

ModelConfig RunConfig::desk_model_config() {
  ModelConfig m;
  m.image = {16, 16, 16};
  m.patch_size = 2;
  m.embed_dim = 8;
  m.stage_depths = {2, 2};
  m.stage_heads = {2, 2};
  m.stage_windows = {{2, 2, 2}, {2, 2, 2}};
  m.decoder_channels = {8, 8};
  m.offset_kernel = 3;
  m.share_encoder_params = false;
  return m;
}

void RunConfig::validate() const {
  std::vector<std::string> problems;
  try {
    model.validate();
  } catch (const ConfigError& e) {
    // Fold the model's bullet list into this report so a single exception
    // names every offending field.
    std::istringstream in(e.what());
    std::string line;
    std::getline(in, line);  // the model report's banner line
    while (std::getline(in, line)) {
      const auto dash = line.find("- ");
      problems.push_back(dash == std::string::npos ? line
                                                   : line.substr(dash + 2));
    }
  }
  if (!(lr > 0.0)) problems.push_back("lr must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0)) problems.push_back("beta1 must be in [0,1)");
  if (!(beta2 >= 0.0 && beta2 < 1.0)) problems.push_back("beta2 must be in [0,1)");
  if (w_ncc < 0.0 || w_dice < 0.0 || w_reg < 0.0) {
    problems.push_back("loss_weights must be non-negative");
  }
  if (iters < 0) problems.push_back("iters must be non-negative");
  if (val_every < 1) problems.push_back("val_every must be at least 1");
  if (ncc_window < 1 || ncc_window % 2 == 0) {
    problems.push_back("ncc_window must be odd and positive");
  }
  if (pairs < 1) problems.push_back("pairs must be at least 1");
  if (labels < 1) problems.push_back("labels must be at least 1");
  if (max_warp < 0.0) problems.push_back("max_warp must be non-negative");
  if (out_dir.empty()) problems.push_back("out_dir must not be empty");
  if (!problems.empty()) {
    std::string msg = "invalid run config:";
    for (const std::string& p : problems) msg += "\n  - " + p;
    throw ConfigError(msg);
  }
}

void apply_override(RunConfig& config, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) {
    throw ConfigError("expected key=value, got '" + assignment + "'");
  }
  const std::string key = trim(assignment.substr(0, eq));
  const std::string value = trim(assignment.substr(eq + 1));
  if (key.empty()) {
    throw ConfigError("empty config key in '" + assignment + "'");
  }

  if (key == "image") {
    config.model.image = parse_triple(key, value);
  } else if (key == "patch_size") {
    config.model.patch_size = parse_int(key, value);
  } else if (key == "embed_dim") {
    config.model.embed_dim = parse_int(key, value);
  } else if (key == "depths") {
    config.model.stage_depths = parse_int_list(key, value);
    // Every stage keeps the currently configured window extents.
    const std::array<int64_t, 3> win = config.model.stage_windows.empty()
                                           ? std::array<int64_t, 3>{2, 2, 2}
                                           : config.model.stage_windows[0];
    config.model.stage_windows.assign(config.model.stage_depths.size(), win);
  } else if (key == "heads") {
    config.model.stage_heads = parse_int_list(key, value);
  } else if (key == "window") {
    const std::array<int64_t, 3> win = parse_triple(key, value);
    if (config.model.stage_windows.empty()) {
      config.model.stage_windows.assign(config.model.stage_depths.size(), win);
    }
    for (auto& w : config.model.stage_windows) w = win;
  } else if (key == "decoder_channels") {
    config.model.decoder_channels = parse_int_list(key, value);
  } else if (key == "offset_kernel") {
    config.model.offset_kernel = parse_int(key, value);
  } else if (key == "share_encoder") {
    config.model.share_encoder_params = parse_bool(key, value);
  } else if (key == "lr") {
    config.lr = parse_double(key, value);
  } else if (key == "beta1") {
    config.beta1 = parse_double(key, value);
  } else if (key == "beta2") {
    config.beta2 = parse_double(key, value);
  } else if (key == "loss_weights") {
    const std::vector<double> w = parse_double_list(key, value);
    if (w.size() != 3) {
      throw ConfigError("loss_weights needs exactly 3 values, got " +
                        std::to_string(w.size()));
    }
    config.w_ncc = w[0];
    config.w_dice = w[1];
    config.w_reg = w[2];
  } else if (key == "iters") {
    config.iters = parse_int(key, value);
  } else if (key == "val_every") {
    config.val_every = parse_int(key, value);
  } else if (key == "ncc_window") {
    config.ncc_window = parse_int(key, value);
  } else if (key == "seed") {
    config.seed = static_cast<uint64_t>(parse_int(key, value));
  } else if (key == "pairs") {
    config.pairs = parse_int(key, value);
  } else if (key == "labels") {
    config.labels = parse_int(key, value);
  } else if (key == "max_warp") {
    config.max_warp = parse_double(key, value);
  } else if (key == "multimodal") {
    config.multimodal = parse_bool(key, value);
  } else if (key == "out_dir") {
    config.out_dir = value;
  } else {
    throw ConfigError("unknown config key '" + key + "'");
  }
}

RunConfig parse_run_config(const std::string& text) {
  RunConfig config;
  std::istringstream in(text);
  std::string line;
  int64_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    try {
      apply_override(config, line);
    } catch (const ConfigError& e) {
      throw ConfigError("line " + std::to_string(line_no) + ": " +
                        std::string(e.what()));
    }
  }
  return config;
}

RunConfig load_run_config(const std::string& path) {
  std::FILE* f = std::fopen(path.c_str(), "rb");
  if (f == nullptr) {
    throw IoError("cannot open config '" + path + "'");
  }
  std::string text;
  char buf[512];
  size_t got;
  while ((got = std::fread(buf, 1, sizeof buf, f)) > 0) text.append(buf, got);
  std::fclose(f);
  return parse_run_config(text);
}

std::string serialize_run_config(const RunConfig& config) {
  const ModelConfig& m = config.model;
  for (const auto& w : m.stage_windows) {
    if (w != m.stage_windows.front()) {
      throw ConfigError(
          "the config file format applies one window to every stage; "
          "per-stage windows cannot be serialized");
    }
  }
  std::ostringstream out;
  out << "image=" << m.image[0] << ',' << m.image[1] << ',' << m.image[2]
      << '\n';
  out << "patch_size=" << m.patch_size << '\n';
  out << "embed_dim=" << m.embed_dim << '\n';
  out << "depths=" << fmt_list(m.stage_depths) << '\n';
  out << "heads=" << fmt_list(m.stage_heads) << '\n';
  const std::array<int64_t, 3> win =
      m.stage_windows.empty() ? std::array<int64_t, 3>{2, 2, 2}
                              : m.stage_windows[0];
  out << "window=" << win[0] << ',' << win[1] << ',' << win[2] << '\n';
  out << "decoder_channels=" << fmt_list(m.decoder_channels) << '\n';
  out << "offset_kernel=" << m.offset_kernel << '\n';
  out << "share_encoder=" << (m.share_encoder_params ? 1 : 0) << '\n';
  out << "lr=" << fmt_double(config.lr) << '\n';
  out << "beta1=" << fmt_double(config.beta1) << '\n';
  out << "beta2=" << fmt_double(config.beta2) << '\n';
  out << "loss_weights=" << fmt_double(config.w_ncc) << ','
      << fmt_double(config.w_dice) << ',' << fmt_double(config.w_reg) << '\n';
  out << "iters=" << config.iters << '\n';
  out << "val_every=" << config.val_every << '\n';
  out << "ncc_window=" << config.ncc_window << '\n';
  out << "seed=" << config.seed << '\n';
  out << "pairs=" << config.pairs << '\n';
  out << "labels=" << config.labels << '\n';
  out << "max_warp=" << fmt_double(config.max_warp) << '\n';
  out << "multimodal=" << (config.multimodal ? 1 : 0) << '\n';
  out << "out_dir=" << config.out_dir << '\n';
  return out.str();
}

}  // namespace defxattn
