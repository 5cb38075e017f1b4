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
#ifndef DEFXATTN_ERRORS_HPP_
#define DEFXATTN_ERRORS_HPP_

#include <stdexcept>
#include <string>

namespace defxattn {

// Error taxonomy. Every exception carries a stable machine-parseable code()
// that the CLI prints as `error: <CODE>: <message>` before exiting nonzero.
class Error : public std::runtime_error {
 public:
  Error(std::string code, const std::string& msg)
      : std::runtime_error(msg), code_(std::move(code)) {}
  const std::string& code() const { return code_; }

 private:
  std::string code_;
};

struct ShapeError : Error {
  explicit ShapeError(const std::string& msg) : Error("SHAPE_ERROR", msg) {}
};

struct AxisError : Error {
  explicit AxisError(const std::string& msg) : Error("AXIS_ERROR", msg) {}
};

struct ConfigError : Error {
  explicit ConfigError(const std::string& msg) : Error("CONFIG_ERROR", msg) {}
};

struct GraphError : Error {
  explicit GraphError(const std::string& msg) : Error("GRAPH_ERROR", msg) {}
};

struct MetricError : Error {
  explicit MetricError(const std::string& msg) : Error("METRIC_ERROR", msg) {}
};

struct FormatError : Error {
  explicit FormatError(const std::string& msg) : Error("FORMAT_ERROR", msg) {}
};

struct GenerationError : Error {
  explicit GenerationError(const std::string& msg)
      : Error("GENERATION_ERROR", msg) {}
};

// Non-finite value detected by the opt-in NaN guard or the training loop.
struct NumericError : Error {
  explicit NumericError(const std::string& msg) : Error("NUMERIC_ERROR", msg) {}
};

struct IoError : Error {
  explicit IoError(const std::string& msg) : Error("IO_ERROR", msg) {}
};

}  // namespace defxattn

#endif  // DEFXATTN_ERRORS_HPP_
