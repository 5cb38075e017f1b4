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
#include "defxattn/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace defxattn {

namespace {
thread_local Tape* g_active_tape = nullptr;
bool g_nan_check = false;
}  // namespace

int64_t shape_numel(const Shape& shape) {
  int64_t n = 1;
  for (int64_t e : shape) n *= e;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "(";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ",";
    os << shape[i];
  }
  os << ")";
  return os.str();
}

void TensorImpl::accumulate_grad(std::span<const double> g) {
  if (grad.empty()) grad.assign(data.size(), 0.0);
  for (size_t i = 0; i < g.size(); ++i) grad[i] += g[i];
}

Tensor Tensor::create(Shape shape, std::vector<double> data,
                      bool requires_grad) {
  for (int64_t e : shape) {
    if (e < 1) {
      throw ShapeError("tensor extents must be >= 1, got " + shape_str(shape));
    }
  }
  if (shape_numel(shape) != static_cast<int64_t>(data.size())) {
    throw ShapeError("shape " + shape_str(shape) + " expects " +
                     std::to_string(shape_numel(shape)) + " values, got " +
                     std::to_string(data.size()));
  }
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  std::vector<double> data(static_cast<size_t>(shape_numel(shape)), 0.0);
  return create(std::move(shape), std::move(data), requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  std::vector<double> data(static_cast<size_t>(shape_numel(shape)), value);
  return create(std::move(shape), std::move(data), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return create({1}, {value}, requires_grad);
}

double Tensor::item() const {
  if (numel() != 1) {
    throw ShapeError("item() requires a single-element tensor, shape is " +
                     shape_str(shape()));
  }
  return impl_->data[0];
}

std::span<const double> Tensor::grad() const {
  if (impl_->grad.empty()) {
    throw GraphError("tensor has no gradient; run backward first");
  }
  return impl_->grad;
}

void Tensor::zero_grad() { impl_->grad.clear(); }

bool Tensor::all_finite() const {
  for (double v : impl_->data) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

void set_nan_check(bool enabled) { g_nan_check = enabled; }
bool nan_check_enabled() { return g_nan_check; }

Tape* Tape::active() { return g_active_tape; }

void Tape::record(Node node) {
  node.output->produced_by_tape = true;
  nodes_.push_back(std::move(node));
}

Tape::Scope::Scope(Tape& tape) : prev_(g_active_tape) {
  g_active_tape = &tape;
}

Tape::Scope::~Scope() { g_active_tape = prev_; }

std::string Tape::first_nonfinite_node() const {
  for (size_t i = 0; i < nodes_.size(); ++i) {
    for (double v : nodes_[i].output->data) {
      if (!std::isfinite(v)) {
        return nodes_[i].op + "#" + std::to_string(i);
      }
    }
  }
  return "";
}

void backward(const Tensor& loss, Tape& tape) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ShapeError("backward requires a scalar loss");
  }
  TensorImpl* loss_impl = loss.impl().get();
  bool produced = false;
  for (const auto& node : tape.nodes()) {
    if (node.output.get() == loss_impl) {
      produced = true;
      break;
    }
  }
  if (!produced) {
    throw GraphError("loss is not produced by this tape (detached graph)");
  }
  loss_impl->grad.assign(1, 1.0);
  const auto& nodes = tape.nodes();
  for (size_t i = nodes.size(); i-- > 0;) {
    const auto& node = nodes[i];
    if (node.output->grad.empty()) continue;  // not on a path to the loss
    node.backward();
  }
}

Tensor& ParameterStore::create(const std::string& name, Shape shape,
                               std::vector<double> data) {
  if (params_.count(name)) {
    throw ConfigError("duplicate parameter name: " + name);
  }
  Tensor t = Tensor::create(std::move(shape), std::move(data), true);
  auto [it, ok] = params_.emplace(name, std::move(t));
  (void)ok;
  return it->second;
}

Tensor& ParameterStore::create_zeros(const std::string& name, Shape shape) {
  std::vector<double> data(static_cast<size_t>(shape_numel(shape)), 0.0);
  return create(name, std::move(shape), std::move(data));
}

Tensor& ParameterStore::create_full(const std::string& name, Shape shape,
                                    double value) {
  std::vector<double> data(static_cast<size_t>(shape_numel(shape)), value);
  return create(name, std::move(shape), std::move(data));
}

Tensor& ParameterStore::create_gauss(const std::string& name, Shape shape,
                                     int64_t fan_in, double scale, Rng& rng) {
  const double std_dev = scale / std::sqrt(static_cast<double>(fan_in));
  std::vector<double> data(static_cast<size_t>(shape_numel(shape)));
  for (double& v : data) v = std_dev * rng.gauss();
  return create(name, std::move(shape), std::move(data));
}

void ParameterStore::adopt(const std::string& name, const Tensor& t) {
  if (params_.count(name)) {
    throw ConfigError("duplicate parameter name: " + name);
  }
  params_.emplace(name, t);
}

bool ParameterStore::contains(const std::string& name) const {
  return params_.count(name) != 0;
}

Tensor& ParameterStore::get(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) {
    throw ConfigError("unknown parameter: " + name);
  }
  return it->second;
}

const Tensor& ParameterStore::get(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) {
    throw ConfigError("unknown parameter: " + name);
  }
  return it->second;
}

std::vector<std::string> ParameterStore::names() const {
  std::vector<std::string> out;
  out.reserve(params_.size());
  for (const auto& [name, t] : params_) out.push_back(name);
  return out;
}

int64_t ParameterStore::total_entries() const {
  int64_t n = 0;
  for (const auto& [name, t] : params_) n += t.numel();
  return n;
}

void ParameterStore::zero_grad_all() {
  for (auto& [name, t] : params_) t.zero_grad();
}

}  // namespace defxattn
