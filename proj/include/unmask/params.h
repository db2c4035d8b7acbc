// Copyright 2026 The Unmask Lab Authors
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

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "unmask/error.h"

namespace unmask {

template <typename T>
struct Param {
  std::string name;
  std::vector<std::size_t> shape;
  std::vector<T> value;
  bool trainable = true;
  // Decoupled weight decay applies only to matrices and embeddings.
  bool decay = true;

  std::size_t size() const { return value.size(); }
};

inline std::size_t shape_size(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

// Ordered, name-addressable parameter collection. Order is the manifest order.
template <typename T>
class ParamSet {
 public:
  Param<T>& add(std::string name, std::vector<std::size_t> shape, bool decay) {
    if (index_.count(name)) {
      throw Error(ErrorCode::kInvalidSpec, "duplicate parameter " + name);
    }
    Param<T> p;
    p.name = name;
    p.value.assign(shape_size(shape), T(0));
    p.shape = std::move(shape);
    p.decay = decay;
    index_.emplace(std::move(name), entries_.size());
    entries_.push_back(std::move(p));
    return entries_.back();
  }

  bool contains(std::string_view name) const { return index_.find(name) != index_.end(); }

  std::size_t index_of(std::string_view name) const {
    auto it = index_.find(name);
    if (it == index_.end()) {
      throw Error(ErrorCode::kTargetNotFound, "no parameter named " + std::string(name));
    }
    return it->second;
  }

  Param<T>& at(std::string_view name) { return entries_[index_of(name)]; }
  const Param<T>& at(std::string_view name) const { return entries_[index_of(name)]; }

  Param<T>& operator[](std::size_t i) { return entries_[i]; }
  const Param<T>& operator[](std::size_t i) const { return entries_[i]; }

  std::size_t size() const { return entries_.size(); }
  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

  void erase(std::string_view name) {
    entries_.erase(entries_.begin() + static_cast<std::ptrdiff_t>(index_of(name)));
    reindex();
  }

  std::size_t element_count() const {
    std::size_t n = 0;
    for (const auto& p : entries_) n += p.size();
    return n;
  }

  std::size_t trainable_count() const {
    std::size_t n = 0;
    for (const auto& p : entries_) {
      if (p.trainable) n += p.size();
    }
    return n;
  }

  template <typename U>
  ParamSet<U> cast() const {
    ParamSet<U> out;
    for (const auto& p : entries_) {
      auto& q = out.add(p.name, p.shape, p.decay);
      q.trainable = p.trainable;
      for (std::size_t i = 0; i < p.size(); ++i) q.value[i] = static_cast<U>(p.value[i]);
    }
    return out;
  }

 private:
  void reindex() {
    index_.clear();
    for (std::size_t i = 0; i < entries_.size(); ++i) index_.emplace(entries_[i].name, i);
  }

  std::vector<Param<T>> entries_;
  std::map<std::string, std::size_t, std::less<>> index_;
};

// Aligned with a ParamSet; an empty slot marks a frozen parameter.
template <typename T>
using Gradients = std::vector<std::vector<T>>;

template <typename T>
Gradients<T> zero_gradients(const ParamSet<T>& params) {
  Gradients<T> g(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].trainable) g[i].assign(params[i].size(), T(0));
  }
  return g;
}

// FNV-1a over the raw bytes of a parameter; used to prove tensors untouched.
template <typename T>
std::uint64_t checksum(const Param<T>& p) {
  std::uint64_t h = 1469598103934665603ull;
  const auto* bytes = reinterpret_cast<const unsigned char*>(p.value.data());
  for (std::size_t i = 0; i < p.value.size() * sizeof(T); ++i) {
    h ^= bytes[i];
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace unmask
