/* Copyright 2026 The altcond Authors. All Rights Reserved.

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

#include "altcond/param_store.hpp"

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

#include "altcond/error.hpp"

namespace altcond {
namespace {

constexpr char kMagic[4] = {'A', 'C', 'T', 'C'};
constexpr std::uint32_t kVersion = 1;
constexpr std::uint8_t kDtypeFloat64 = 1;

template <typename T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

void put_str(std::ostream& os, const std::string& s) {
  put<std::uint32_t>(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

template <typename T>
T get(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw DataError("truncated tensor container");
  return v;
}

std::string get_str(std::istream& is) {
  const auto n = get<std::uint32_t>(is);
  if (n > (1u << 28)) throw DataError("corrupt string length in container");
  std::string s(n, '\0');
  is.read(s.data(), n);
  if (!is) throw DataError("truncated tensor container");
  return s;
}

}  // namespace

Parameter& ParamStore::add(const std::string& name, Matrix init) {
  if (contains(name)) {
    throw ContractError("duplicate parameter name '" + name + "'");
  }
  index_.emplace(name, params_.size());
  Parameter p;
  p.name = name;
  p.grad = Matrix::Zero(init.rows(), init.cols());
  p.m = Matrix::Zero(init.rows(), init.cols());
  p.v = Matrix::Zero(init.rows(), init.cols());
  p.value = std::move(init);
  params_.push_back(std::move(p));
  return params_.back();
}

std::size_t ParamStore::index(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) {
    throw ContractError("unknown parameter '" + name + "'");
  }
  return it->second;
}

std::size_t ParamStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += static_cast<std::size_t>(p.value.size());
  return n;
}

void ParamStore::zero_grad() {
  for (auto& p : params_) p.grad.setZero();
}

Gradients ParamStore::zero_gradients() const {
  Gradients g;
  g.reserve(params_.size());
  for (const auto& p : params_) {
    g.push_back(Matrix::Zero(p.value.rows(), p.value.cols()));
  }
  return g;
}

void ParamStore::add_gradients(const Gradients& g) {
  if (g.size() != params_.size()) {
    throw ContractError("gradient buffer count does not match parameters");
  }
  for (std::size_t i = 0; i < g.size(); ++i) params_[i].grad += g[i];
}

bool ParamStore::same_layout(const ParamStore& other) const {
  if (size() != other.size()) return false;
  for (std::size_t i = 0; i < size(); ++i) {
    const auto& a = params_[i];
    const auto& b = other.params_[i];
    if (a.name != b.name || a.value.rows() != b.value.rows() ||
        a.value.cols() != b.value.cols()) {
      return false;
    }
  }
  return true;
}

void write_container(std::ostream& os, const Header& header,
                     const ParamStore& store) {
  os.write(kMagic, sizeof(kMagic));
  put<std::uint32_t>(os, kVersion);
  put<std::uint32_t>(os, static_cast<std::uint32_t>(header.size()));
  for (const auto& [k, v] : header) {
    put_str(os, k);
    put_str(os, v);
  }
  put<std::uint32_t>(os, static_cast<std::uint32_t>(store.size()));
  for (const auto& p : store.params()) {
    put_str(os, p.name);
    put<std::uint8_t>(os, kDtypeFloat64);
    put<std::uint32_t>(os, 2);
    put<std::uint64_t>(os, static_cast<std::uint64_t>(p.value.rows()));
    put<std::uint64_t>(os, static_cast<std::uint64_t>(p.value.cols()));
    os.write(reinterpret_cast<const char*>(p.value.data()),
             static_cast<std::streamsize>(sizeof(double) * p.value.size()));
  }
  if (!os) throw DataError("failed writing tensor container");
}

ParamStore read_container(std::istream& is, Header* header) {
  char magic[4];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kMagic, sizeof(magic)) != 0) {
    throw DataError("not a tensor container (bad magic)");
  }
  if (get<std::uint32_t>(is) != kVersion) {
    throw DataError("unsupported tensor container version");
  }
  Header h;
  const auto n_header = get<std::uint32_t>(is);
  for (std::uint32_t i = 0; i < n_header; ++i) {
    std::string k = get_str(is);
    h[k] = get_str(is);
  }
  ParamStore store;
  const auto n_tensors = get<std::uint32_t>(is);
  for (std::uint32_t i = 0; i < n_tensors; ++i) {
    std::string name = get_str(is);
    if (get<std::uint8_t>(is) != kDtypeFloat64) {
      throw DataError("tensor '" + name + "' has unsupported dtype");
    }
    if (get<std::uint32_t>(is) != 2) {
      throw DataError("tensor '" + name + "' is not rank 2");
    }
    const auto rows = get<std::uint64_t>(is);
    const auto cols = get<std::uint64_t>(is);
    if (rows * cols > (1ull << 32)) {
      throw DataError("tensor '" + name + "' is implausibly large");
    }
    Matrix value(static_cast<Eigen::Index>(rows),
                 static_cast<Eigen::Index>(cols));
    is.read(reinterpret_cast<char*>(value.data()),
            static_cast<std::streamsize>(sizeof(double) * value.size()));
    if (!is) throw DataError("truncated payload for tensor '" + name + "'");
    store.add(name, std::move(value));
  }
  if (header) *header = std::move(h);
  return store;
}

void save_container(const std::string& path, const Header& header,
                    const ParamStore& store) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write " + path);
  write_container(os, header, store);
}

ParamStore load_container(const std::string& path, Header* header) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot read " + path);
  return read_container(is, header);
}

Matrix xavier_uniform(Eigen::Index rows, Eigen::Index cols, double fan_in,
                      double fan_out, std::mt19937_64& rng) {
  const double a = std::sqrt(6.0 / (fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-a, a);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  return m;
}

}  // namespace altcond
