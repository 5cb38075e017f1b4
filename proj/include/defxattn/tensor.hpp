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
#ifndef DEFXATTN_TENSOR_HPP_
#define DEFXATTN_TENSOR_HPP_

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "defxattn/errors.hpp"
#include "defxattn/rng.hpp"

namespace defxattn {

using Shape = std::vector<int64_t>;

int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Dense row-major array of 64-bit floats with an optional gradient slot.
// Values are immutable once created except through mutable_data() (used by
// the optimizer between steps) and grad accumulation inside backward().
struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until backward touches this tensor
  bool requires_grad = false;
  bool produced_by_tape = false;

  void accumulate_grad(std::span<const double> g);
};

class Tensor {
 public:
  Tensor() = default;

  static Tensor create(Shape shape, std::vector<double> data,
                       bool requires_grad = false);
  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  int64_t rank() const { return static_cast<int64_t>(impl_->shape.size()); }
  int64_t numel() const { return static_cast<int64_t>(impl_->data.size()); }
  int64_t extent(int64_t axis) const { return impl_->shape[axis]; }

  std::span<const double> data() const { return impl_->data; }
  std::span<double> mutable_data() { return impl_->data; }
  double item() const;

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool v) { impl_->requires_grad = v; }
  bool has_grad() const { return !impl_->grad.empty(); }
  std::span<const double> grad() const;
  void zero_grad();

  bool all_finite() const;

  const std::shared_ptr<TensorImpl>& impl() const { return impl_; }

 private:
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}
  std::shared_ptr<TensorImpl> impl_;
};

// Opt-in guard: when enabled, every op forward scans its output and throws
// NumericError on NaN/Inf. Mandatory in tests, opt-in per training step.
void set_nan_check(bool enabled);
bool nan_check_enabled();

// Recorded-tape reverse-mode engine. Ops append nodes while a Tape scope is
// active and at least one input requires grad; nodes are stored in forward
// (topological) order and replayed once, in reverse, by backward().
class Tape {
 public:
  struct Node {
    std::string op;
    std::vector<std::shared_ptr<TensorImpl>> inputs;
    std::shared_ptr<TensorImpl> output;
    std::function<void()> backward;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* active();
  void record(Node node);
  size_t size() const { return nodes_.size(); }
  const std::vector<Node>& nodes() const { return nodes_; }
  void clear() { nodes_.clear(); }

  // RAII activation; scopes may nest, the innermost tape records.
  class Scope {
   public:
    explicit Scope(Tape& tape);
    ~Scope();
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;

   private:
    Tape* prev_;
  };

  // Name of the first recorded node whose output holds a non-finite value,
  // or empty string. Used for NaN-abort diagnostics in the trainer.
  std::string first_nonfinite_node() const;

 private:
  std::vector<Node> nodes_;
};

// Reverse-mode sweep: seeds d(loss)/d(loss) = 1 and replays the tape once in
// reverse order. Gradients accumulate additively across fan-out. The loss
// must be a scalar produced by this tape.
void backward(const Tensor& loss, Tape& tape);

// Named map of trainable tensors.
class ParameterStore {
 public:
  Tensor& create(const std::string& name, Shape shape,
                 std::vector<double> data);
  Tensor& create_zeros(const std::string& name, Shape shape);
  Tensor& create_full(const std::string& name, Shape shape, double value);
  // Gaussian init, std = scale / sqrt(fan_in).
  Tensor& create_gauss(const std::string& name, Shape shape, int64_t fan_in,
                       double scale, Rng& rng);
  void adopt(const std::string& name, const Tensor& t);

  bool contains(const std::string& name) const;
  Tensor& get(const std::string& name);
  const Tensor& get(const std::string& name) const;

  std::vector<std::string> names() const;  // sorted
  size_t size() const { return params_.size(); }
  int64_t total_entries() const;
  void zero_grad_all();

  std::map<std::string, Tensor>& entries() { return params_; }
  const std::map<std::string, Tensor>& entries() const { return params_; }

 private:
  std::map<std::string, Tensor> params_;
};

}  // namespace defxattn

#endif  // DEFXATTN_TENSOR_HPP_
