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

// Named trainable parameters with Adam moment buffers, and the binary
// named-tensor container used for checkpoints.
//
// Container layout (all integers little-endian):
//   magic   "ACTC" (4 bytes), u32 version = 1
//   u32     header entry count, then per entry: str key, str value
//   u32     tensor count, then per tensor:
//             str name, u8 dtype (1 = float64), u32 rank (always 2),
//             u64 rows, u64 cols, rows*cols float64 values in row-major order
//   str = u32 byte length followed by the bytes.

#pragma once

#include <cstddef>
#include <iosfwd>
#include <map>
#include <random>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "altcond/matrix.hpp"

namespace altcond {

struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;
  Matrix m;  // Adam first moment
  Matrix v;  // Adam second moment
};

// Per-parameter gradient buffers aligned with ParamStore order.
using Gradients = std::vector<Matrix>;

class ParamStore {
 public:
  Parameter& add(const std::string& name, Matrix init);

  bool contains(const std::string& name) const {
    return index_.count(name) != 0;
  }
  std::size_t index(const std::string& name) const;
  Parameter& get(const std::string& name) { return params_[index(name)]; }
  const Parameter& get(const std::string& name) const {
    return params_[index(name)];
  }
  Parameter& at(std::size_t i) { return params_.at(i); }
  const Parameter& at(std::size_t i) const { return params_.at(i); }

  std::span<Parameter> params() { return params_; }
  std::span<const Parameter> params() const { return params_; }
  std::size_t size() const { return params_.size(); }
  // Total number of scalar weights.
  std::size_t scalar_count() const;

  void zero_grad();
  Gradients zero_gradients() const;
  void add_gradients(const Gradients& g);

  // Same names and shapes, in the same order.
  bool same_layout(const ParamStore& other) const;

 private:
  std::vector<Parameter> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

using Header = std::map<std::string, std::string>;

void write_container(std::ostream& os, const Header& header,
                     const ParamStore& store);
// Loaded parameters have zero grad and moment buffers.
ParamStore read_container(std::istream& is, Header* header = nullptr);
void save_container(const std::string& path, const Header& header,
                    const ParamStore& store);
ParamStore load_container(const std::string& path, Header* header = nullptr);

// Uniform(-a, a) with a = sqrt(6 / (fan_in + fan_out)).
Matrix xavier_uniform(Eigen::Index rows, Eigen::Index cols, double fan_in,
                      double fan_out, std::mt19937_64& rng);

}  // namespace altcond
