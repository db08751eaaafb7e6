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

// Tape-based reverse-mode differentiation over dense matrices.
//
// Nodes are appended in evaluation order, so the tape index order is a
// topological order and backward() simply walks it in reverse. A tape is
// single-threaded; independent tapes may be used from different threads.

#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "altcond/matrix.hpp"
#include "altcond/param_store.hpp"

namespace altcond::diff {

inline constexpr double kLayerNormEps = 1e-5;

enum class Op {
  kConstant,
  kVariable,
  kParam,
  kMatmul,
  kAdd,
  kSub,
  kMul,
  kAddBias,
  kScale,
  kTranspose,
  kSoftmaxRows,
  kLogSoftmaxRows,
  kLayerNormRows,
  kSwish,
  kLinear,
  kSliceCols,
  kConcatCols,
  kConcatRows,
  kMaskRows,
  kMean,
  kSum,
  kDepthwiseConv,
  kCustom,
};

const char* op_name(Op op);

class Tape;

// Handle to a node on a tape.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Matrix& value() const;
  const Matrix& grad() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
};

class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix value);
  Var variable(Matrix value);
  // Leaf holding a copy of the named parameter. Repeated requests on the same
  // tape return the same node, so shared weights accumulate one gradient.
  Var param(const ParamStore& store, const std::string& name);

  // Appends an op node. `backward` reads grad(self) and adds into the grads
  // of the parents that require them.
  Var record(Op op, Matrix value, std::vector<std::size_t> parents,
             BackwardFn backward);

  const Matrix& value(std::size_t id) const { return nodes_.at(id).value; }
  const Matrix& grad(std::size_t id) const { return nodes_.at(id).grad; }
  Matrix& grad(std::size_t id) { return nodes_.at(id).grad; }
  bool requires_grad(std::size_t id) const {
    return nodes_.at(id).requires_grad;
  }
  Op op(std::size_t id) const { return nodes_.at(id).op; }
  const std::vector<std::size_t>& parents(std::size_t id) const {
    return nodes_.at(id).parents;
  }
  std::size_t size() const { return nodes_.size(); }

  // Seeds d loss / d loss = 1 and propagates. Running it a second time
  // without zero_grad() is rejected with ContractError.
  void backward(Var loss);
  void zero_grad();

  // Adds the gradients of parameter leaves into store grads / a buffer.
  void accumulate_param_grads(ParamStore& store) const;
  void accumulate_param_grads(Gradients& out) const;

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    Op op = Op::kConstant;
    std::vector<std::size_t> parents;
    BackwardFn backward;
    bool requires_grad = false;
  };

  std::vector<Node> nodes_;
  std::unordered_map<std::string, std::size_t> param_nodes_;
  std::vector<std::pair<std::size_t, std::size_t>> param_bindings_;
  bool backward_done_ = false;
};

// Runs backward on `loss` and adds parameter gradients into `store`.
void backward(Var loss, ParamStore& store);

Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
// x (R x C) + b (1 x C) broadcast over rows.
Var add_bias(Var x, Var b);
Var scale(Var x, double s);
Var transpose(Var x);
Var softmax_rows(Var x);
Var log_softmax_rows(Var x);
// Normalises each row to zero mean and unit variance (eps = kLayerNormEps).
Var layer_norm_rows(Var x);
// As above followed by the per-column affine map gamma * xhat + beta.
Var layer_norm_rows(Var x, Var gamma, Var beta);
Var swish(Var x);
// x W + b, with W (D x K) and b (1 x K).
Var linear(Var x, Var w, Var b);
Var slice_cols(Var x, Eigen::Index start, Eigen::Index count);
Var concat_cols(std::span<const Var> parts);
Var concat_rows(std::span<const Var> parts);
// Zeroes every row whose flag is false.
Var mask_rows(Var x, const std::vector<bool>& keep);
Var mean(Var x);
Var sum(Var x);
// Per-channel 1-D convolution over rows with zero padding; kernel is
// (K x C) with odd K, centred on the output frame; bias is (1 x C).
Var depthwise_conv1d(Var x, Var kernel, Var bias);

// Relative error between analytic and numeric derivatives:
// |a - n| / max(|a|, |n|, kGradCheckFloor).
inline constexpr double kGradCheckFloor = 1e-6;
double relative_error(double analytic, double numeric);

using ScalarFn = std::function<Var(Tape&, std::span<const Var>)>;

// Compares backward() against central differences with step `eps` for every
// entry of every input and returns the max relative error.
double grad_check(const ScalarFn& f, std::vector<Matrix> inputs,
                  double eps = 1e-5);

using ParamLossFn = std::function<Var(Tape&, const ParamStore&)>;

// Same comparison on `samples` randomly chosen scalar weights of a store.
double grad_check_params(const ParamLossFn& f, ParamStore& store,
                         std::size_t samples, std::uint64_t seed,
                         double eps = 1e-5);

}  // namespace altcond::diff
