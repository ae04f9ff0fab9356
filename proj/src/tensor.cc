// Copyright 2026 The exitrec Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "exitrec/tensor.h"

#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>

#include "exitrec/errors.h"

namespace exitrec {
namespace {

std::size_t Product(const std::vector<std::size_t>& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

}  // namespace

Tensor::Tensor(std::vector<std::size_t> shape)
    : shape_(std::move(shape)), data_(Product(shape_), 0.0) {}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (Product(shape_) != data_.size()) {
    throw DimensionError("tensor shape " + ShapeString() + " needs " +
                         std::to_string(Product(shape_)) + " values, got " +
                         std::to_string(data_.size()));
  }
}

Tensor Tensor::Scalar(double value) { return Tensor({}, {value}); }

Tensor Tensor::Matrix(
    std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t n_rows = rows.size();
  const std::size_t n_cols = n_rows == 0 ? 0 : rows.begin()->size();
  std::vector<double> data;
  data.reserve(n_rows * n_cols);
  for (const auto& row : rows) {
    if (row.size() != n_cols) throw DimensionError("ragged matrix literal");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Tensor({n_rows, n_cols}, std::move(data));
}

Tensor Tensor::Vector(std::initializer_list<double> values) {
  return Tensor({values.size()}, std::vector<double>(values));
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= shape_.size()) {
    throw DimensionError("axis " + std::to_string(axis) +
                         " out of range for shape " + ShapeString());
  }
  return shape_[axis];
}

double Tensor::item() const {
  if (data_.size() != 1) {
    throw DimensionError("item() on tensor of shape " + ShapeString());
  }
  return data_[0];
}

void Tensor::Fill(double value) { std::fill(data_.begin(), data_.end(), value); }

bool Tensor::AllFinite() const {
  for (double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

std::string Tensor::ShapeString() const {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape_.size(); ++i) {
    if (i) out << 'x';
    out << shape_[i];
  }
  out << ']';
  return out.str();
}

ParameterStore::ParameterStore(const ParameterStore& other) { *this = other; }

ParameterStore& ParameterStore::operator=(const ParameterStore& other) {
  if (this == &other) return *this;
  params_.clear();
  index_.clear();
  for (const auto& p : other.params_) {
    Parameter& copy = Add(p->name, p->value);
    copy.grad = p->grad;
  }
  return *this;
}

Parameter& ParameterStore::Add(const std::string& name, Tensor value) {
  if (index_.contains(name)) {
    throw ContractError("duplicate parameter name: " + name);
  }
  auto param = std::make_unique<Parameter>();
  param->name = name;
  param->grad = Tensor(value.shape());
  param->value = std::move(value);
  index_.emplace(name, params_.size());
  params_.push_back(std::move(param));
  return *params_.back();
}

Parameter& ParameterStore::Get(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw IndexError("unknown parameter: " + name);
  return *params_[it->second];
}

const Parameter& ParameterStore::Get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw IndexError("unknown parameter: " + name);
  return *params_[it->second];
}

bool ParameterStore::Contains(const std::string& name) const {
  return index_.contains(name);
}

std::vector<Parameter*> ParameterStore::All() {
  std::vector<Parameter*> out;
  out.reserve(params_.size());
  for (auto& p : params_) out.push_back(p.get());
  return out;
}

std::vector<const Parameter*> ParameterStore::All() const {
  std::vector<const Parameter*> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.push_back(p.get());
  return out;
}

std::size_t ParameterStore::TotalElements() const {
  std::size_t total = 0;
  for (const auto& p : params_) total += p->value.size();
  return total;
}

void ParameterStore::ZeroGrad() {
  for (auto& p : params_) p->ZeroGrad();
}

}  // namespace exitrec
