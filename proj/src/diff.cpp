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

#include "altcond/diff.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "altcond/error.hpp"

namespace altcond::diff {
namespace {

std::string dims(const Matrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

[[noreturn]] void shape_error(Op op, const std::string& what) {
  throw ShapeError(std::string(op_name(op)) + ": " + what);
}

void same_tape(Var a, Var b, Op op) {
  if (a.tape == nullptr || a.tape != b.tape) {
    shape_error(op, "operands live on different tapes");
  }
}

template <typename Expr>
void accumulate(Tape& t, std::size_t id, const Expr& e) {
  if (t.requires_grad(id)) t.grad(id) += e;
}

Matrix row_softmax(const Matrix& x) {
  Matrix y(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double mx = x.row(r).maxCoeff();
    y.row(r) = (x.row(r).array() - mx).exp().matrix();
    y.row(r) /= y.row(r).sum();
  }
  return y;
}

inline double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

}  // namespace

const char* op_name(Op op) {
  switch (op) {
    case Op::kConstant: return "constant";
    case Op::kVariable: return "variable";
    case Op::kParam: return "param";
    case Op::kMatmul: return "matmul";
    case Op::kAdd: return "add";
    case Op::kSub: return "sub";
    case Op::kMul: return "mul";
    case Op::kAddBias: return "add_bias";
    case Op::kScale: return "scale";
    case Op::kTranspose: return "transpose";
    case Op::kSoftmaxRows: return "softmax_rows";
    case Op::kLogSoftmaxRows: return "log_softmax_rows";
    case Op::kLayerNormRows: return "layer_norm_rows";
    case Op::kSwish: return "swish";
    case Op::kLinear: return "linear";
    case Op::kSliceCols: return "slice_cols";
    case Op::kConcatCols: return "concat_cols";
    case Op::kConcatRows: return "concat_rows";
    case Op::kMaskRows: return "mask_rows";
    case Op::kMean: return "mean";
    case Op::kSum: return "sum";
    case Op::kDepthwiseConv: return "depthwise_conv1d";
    case Op::kCustom: return "custom";
  }
  return "unknown";
}

const Matrix& Var::value() const { return tape->value(id); }
const Matrix& Var::grad() const { return tape->grad(id); }

Var Tape::constant(Matrix value) {
  return record(Op::kConstant, std::move(value), {}, nullptr);
}

Var Tape::variable(Matrix value) {
  Var v = record(Op::kVariable, std::move(value), {}, nullptr);
  nodes_[v.id].requires_grad = true;
  return v;
}

Var Tape::param(const ParamStore& store, const std::string& name) {
  auto it = param_nodes_.find(name);
  if (it != param_nodes_.end()) return Var{this, it->second};
  const std::size_t index = store.index(name);
  Var v = record(Op::kParam, store.at(index).value, {}, nullptr);
  nodes_[v.id].requires_grad = true;
  param_nodes_.emplace(name, v.id);
  param_bindings_.emplace_back(v.id, index);
  return v;
}

Var Tape::record(Op op, Matrix value, std::vector<std::size_t> parents,
                 BackwardFn backward) {
  Node n;
  n.grad = Matrix::Zero(value.rows(), value.cols());
  n.value = std::move(value);
  n.op = op;
  for (std::size_t p : parents) {
    if (p >= nodes_.size()) {
      throw ContractError(std::string(op_name(op)) +
                          ": parent node does not exist on this tape");
    }
    n.requires_grad = n.requires_grad || nodes_[p].requires_grad;
  }
  n.parents = std::move(parents);
  n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var{this, nodes_.size() - 1};
}

void Tape::backward(Var loss) {
  if (loss.tape != this) {
    throw ContractError("backward: loss node is not on this tape");
  }
  const Matrix& lv = value(loss.id);
  if (lv.rows() != 1 || lv.cols() != 1) {
    throw ContractError("backward: loss must be a 1x1 scalar, got " +
                        dims(lv));
  }
  if (backward_done_) {
    throw ContractError(
        "backward: already run on this tape; call zero_grad() first");
  }
  backward_done_ = true;

  std::vector<char> needed(loss.id + 1, 0);
  needed[loss.id] = 1;
  nodes_[loss.id].grad(0, 0) += 1.0;
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    if (!needed[i] || !nodes_[i].requires_grad) continue;
    for (std::size_t p : nodes_[i].parents) needed[p] = 1;
    if (nodes_[i].backward) nodes_[i].backward(*this, i);
  }
}

void Tape::zero_grad() {
  for (auto& n : nodes_) n.grad.setZero();
  backward_done_ = false;
}

void Tape::accumulate_param_grads(ParamStore& store) const {
  for (const auto& [node, index] : param_bindings_) {
    store.at(index).grad += nodes_[node].grad;
  }
}

void Tape::accumulate_param_grads(Gradients& out) const {
  for (const auto& [node, index] : param_bindings_) {
    out.at(index) += nodes_[node].grad;
  }
}

void backward(Var loss, ParamStore& store) {
  loss.tape->backward(loss);
  loss.tape->accumulate_param_grads(store);
}

Var matmul(Var a, Var b) {
  same_tape(a, b, Op::kMatmul);
  if (a.cols() != b.rows()) {
    shape_error(Op::kMatmul, dims(a.value()) + " times " + dims(b.value()));
  }
  const std::size_t ia = a.id, ib = b.id;
  return a.tape->record(
      Op::kMatmul, a.value() * b.value(), {ia, ib},
      [ia, ib](Tape& t, std::size_t self) {
        const Matrix& g = t.grad(self);
        if (t.requires_grad(ia)) t.grad(ia).noalias() += g * t.value(ib).transpose();
        if (t.requires_grad(ib)) t.grad(ib).noalias() += t.value(ia).transpose() * g;
      });
}

Var add(Var a, Var b) {
  same_tape(a, b, Op::kAdd);
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    shape_error(Op::kAdd, dims(a.value()) + " vs " + dims(b.value()));
  }
  const std::size_t ia = a.id, ib = b.id;
  return a.tape->record(Op::kAdd, a.value() + b.value(), {ia, ib},
                        [ia, ib](Tape& t, std::size_t self) {
                          accumulate(t, ia, t.grad(self));
                          accumulate(t, ib, t.grad(self));
                        });
}

Var sub(Var a, Var b) {
  same_tape(a, b, Op::kSub);
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    shape_error(Op::kSub, dims(a.value()) + " vs " + dims(b.value()));
  }
  const std::size_t ia = a.id, ib = b.id;
  return a.tape->record(Op::kSub, a.value() - b.value(), {ia, ib},
                        [ia, ib](Tape& t, std::size_t self) {
                          accumulate(t, ia, t.grad(self));
                          accumulate(t, ib, -t.grad(self));
                        });
}

Var mul(Var a, Var b) {
  same_tape(a, b, Op::kMul);
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    shape_error(Op::kMul, dims(a.value()) + " vs " + dims(b.value()));
  }
  const std::size_t ia = a.id, ib = b.id;
  return a.tape->record(
      Op::kMul, a.value().cwiseProduct(b.value()), {ia, ib},
      [ia, ib](Tape& t, std::size_t self) {
        const Matrix& g = t.grad(self);
        accumulate(t, ia, g.cwiseProduct(t.value(ib)));
        accumulate(t, ib, g.cwiseProduct(t.value(ia)));
      });
}

Var add_bias(Var x, Var b) {
  same_tape(x, b, Op::kAddBias);
  if (b.rows() != 1 || b.cols() != x.cols()) {
    shape_error(Op::kAddBias,
                "bias " + dims(b.value()) + " for input " + dims(x.value()));
  }
  const std::size_t ix = x.id, ib = b.id;
  Matrix y = x.value().rowwise() + b.value().row(0);
  return x.tape->record(Op::kAddBias, std::move(y), {ix, ib},
                        [ix, ib](Tape& t, std::size_t self) {
                          const Matrix& g = t.grad(self);
                          accumulate(t, ix, g);
                          accumulate(t, ib, g.colwise().sum());
                        });
}

Var scale(Var x, double s) {
  const std::size_t ix = x.id;
  return x.tape->record(Op::kScale, x.value() * s, {ix},
                        [ix, s](Tape& t, std::size_t self) {
                          accumulate(t, ix, t.grad(self) * s);
                        });
}

Var transpose(Var x) {
  const std::size_t ix = x.id;
  Matrix y = x.value().transpose();
  return x.tape->record(Op::kTranspose, std::move(y), {ix},
                        [ix](Tape& t, std::size_t self) {
                          accumulate(t, ix, t.grad(self).transpose());
                        });
}

Var softmax_rows(Var x) {
  const std::size_t ix = x.id;
  return x.tape->record(
      Op::kSoftmaxRows, row_softmax(x.value()), {ix},
      [ix](Tape& t, std::size_t self) {
        if (!t.requires_grad(ix)) return;
        const Matrix& y = t.value(self);
        const Matrix& g = t.grad(self);
        Eigen::VectorXd dot = g.cwiseProduct(y).rowwise().sum();
        t.grad(ix) +=
            y.cwiseProduct((g.colwise() - dot));
      });
}

Var log_softmax_rows(Var x) {
  const std::size_t ix = x.id;
  const Matrix& xv = x.value();
  Matrix y(xv.rows(), xv.cols());
  for (Eigen::Index r = 0; r < xv.rows(); ++r) {
    const double mx = xv.row(r).maxCoeff();
    const double lse =
        mx + std::log((xv.row(r).array() - mx).exp().sum());
    y.row(r) = xv.row(r).array() - lse;
  }
  return x.tape->record(
      Op::kLogSoftmaxRows, std::move(y), {ix},
      [ix](Tape& t, std::size_t self) {
        if (!t.requires_grad(ix)) return;
        const Matrix& g = t.grad(self);
        Matrix p = t.value(self).array().exp().matrix();
        Eigen::VectorXd gsum = g.rowwise().sum();
        t.grad(ix) += g - Matrix(p.array().colwise() * gsum.array());
      });
}

namespace {

// Shared forward/backward for layer norm with optional affine parameters.
Var layer_norm_impl(Var x, const Var* gamma, const Var* beta) {
  const Matrix& xv = x.value();
  const Eigen::Index C = xv.cols();
  if (gamma != nullptr) {
    same_tape(x, *gamma, Op::kLayerNormRows);
    same_tape(x, *beta, Op::kLayerNormRows);
    if (gamma->rows() != 1 || gamma->cols() != C || beta->rows() != 1 ||
        beta->cols() != C) {
      shape_error(Op::kLayerNormRows, "affine parameters " +
                                          dims(gamma->value()) + "/" +
                                          dims(beta->value()) +
                                          " for input " + dims(xv));
    }
  }
  if (C == 0) shape_error(Op::kLayerNormRows, "input has no columns");

  Matrix xhat(xv.rows(), C);
  Eigen::VectorXd inv_std(xv.rows());
  for (Eigen::Index r = 0; r < xv.rows(); ++r) {
    const double mu = xv.row(r).mean();
    const double var = (xv.row(r).array() - mu).square().mean();
    inv_std(r) = 1.0 / std::sqrt(var + kLayerNormEps);
    xhat.row(r) = (xv.row(r).array() - mu) * inv_std(r);
  }
  Matrix y = xhat;
  std::vector<std::size_t> parents{x.id};
  std::size_t ig = 0, ib = 0;
  const bool affine = gamma != nullptr;
  if (affine) {
    y = (xhat.array().rowwise() * gamma->value().row(0).array()).matrix();
    y.rowwise() += beta->value().row(0);
    ig = gamma->id;
    ib = beta->id;
    parents.push_back(ig);
    parents.push_back(ib);
  }
  const std::size_t ix = x.id;
  return x.tape->record(
      Op::kLayerNormRows, std::move(y), std::move(parents),
      [ix, ig, ib, affine, xhat = std::move(xhat),
       inv_std = std::move(inv_std)](Tape& t, std::size_t self) {
        const Matrix& g = t.grad(self);
        Matrix dxhat = g;
        if (affine) {
          dxhat = (g.array().rowwise() * t.value(ig).row(0).array()).matrix();
          accumulate(t, ig, g.cwiseProduct(xhat).colwise().sum());
          accumulate(t, ib, g.colwise().sum());
        }
        if (!t.requires_grad(ix)) return;
        const double n = static_cast<double>(g.cols());
        Eigen::VectorXd mean_d = dxhat.rowwise().sum() / n;
        Eigen::VectorXd mean_dx = dxhat.cwiseProduct(xhat).rowwise().sum() / n;
        Matrix dx = dxhat.colwise() - mean_d;
        dx -= Matrix(xhat.array().colwise() * mean_dx.array());
        dx = (dx.array().colwise() * inv_std.array()).matrix();
        t.grad(ix) += dx;
      });
}

}  // namespace

Var layer_norm_rows(Var x) { return layer_norm_impl(x, nullptr, nullptr); }

Var layer_norm_rows(Var x, Var gamma, Var beta) {
  return layer_norm_impl(x, &gamma, &beta);
}

Var swish(Var x) {
  const std::size_t ix = x.id;
  Matrix y = x.value().unaryExpr([](double v) { return v * sigmoid(v); });
  return x.tape->record(
      Op::kSwish, std::move(y), {ix}, [ix](Tape& t, std::size_t self) {
        if (!t.requires_grad(ix)) return;
        Matrix d = t.value(ix).unaryExpr([](double v) {
          const double s = sigmoid(v);
          return s + v * s * (1.0 - s);
        });
        t.grad(ix) += t.grad(self).cwiseProduct(d);
      });
}

Var linear(Var x, Var w, Var b) {
  same_tape(x, w, Op::kLinear);
  same_tape(x, b, Op::kLinear);
  if (x.cols() != w.rows() || b.rows() != 1 || b.cols() != w.cols()) {
    shape_error(Op::kLinear, "input " + dims(x.value()) + ", weight " +
                                 dims(w.value()) + ", bias " +
                                 dims(b.value()));
  }
  Matrix y = x.value() * w.value();
  y.rowwise() += b.value().row(0);
  const std::size_t ix = x.id, iw = w.id, ib = b.id;
  return x.tape->record(
      Op::kLinear, std::move(y), {ix, iw, ib},
      [ix, iw, ib](Tape& t, std::size_t self) {
        const Matrix& g = t.grad(self);
        if (t.requires_grad(ix)) t.grad(ix).noalias() += g * t.value(iw).transpose();
        if (t.requires_grad(iw)) t.grad(iw).noalias() += t.value(ix).transpose() * g;
        accumulate(t, ib, g.colwise().sum());
      });
}

Var slice_cols(Var x, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > x.cols()) {
    shape_error(Op::kSliceCols, "columns [" + std::to_string(start) + ", " +
                                    std::to_string(start + count) +
                                    ") of " + dims(x.value()));
  }
  const std::size_t ix = x.id;
  Matrix y = x.value().middleCols(start, count);
  return x.tape->record(Op::kSliceCols, std::move(y), {ix},
                        [ix, start, count](Tape& t, std::size_t self) {
                          if (!t.requires_grad(ix)) return;
                          t.grad(ix).middleCols(start, count) += t.grad(self);
                        });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) shape_error(Op::kConcatCols, "no inputs");
  const Eigen::Index rows = parts[0].rows();
  Eigen::Index cols = 0;
  std::vector<std::size_t> ids;
  for (const Var& p : parts) {
    same_tape(parts[0], p, Op::kConcatCols);
    if (p.rows() != rows) {
      shape_error(Op::kConcatCols, "row count mismatch " +
                                       dims(parts[0].value()) + " vs " +
                                       dims(p.value()));
    }
    cols += p.cols();
    ids.push_back(p.id);
  }
  Matrix y(rows, cols);
  Eigen::Index at = 0;
  for (const Var& p : parts) {
    y.middleCols(at, p.cols()) = p.value();
    at += p.cols();
  }
  std::vector<std::size_t> parents = ids;
  return parts[0].tape->record(
      Op::kConcatCols, std::move(y), std::move(parents),
      [ids](Tape& t, std::size_t self) {
        Eigen::Index at = 0;
        for (std::size_t id : ids) {
          const Eigen::Index c = t.value(id).cols();
          accumulate(t, id, t.grad(self).middleCols(at, c));
          at += c;
        }
      });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) shape_error(Op::kConcatRows, "no inputs");
  const Eigen::Index cols = parts[0].cols();
  Eigen::Index rows = 0;
  std::vector<std::size_t> ids;
  for (const Var& p : parts) {
    same_tape(parts[0], p, Op::kConcatRows);
    if (p.cols() != cols) {
      shape_error(Op::kConcatRows, "column count mismatch " +
                                       dims(parts[0].value()) + " vs " +
                                       dims(p.value()));
    }
    rows += p.rows();
    ids.push_back(p.id);
  }
  Matrix y(rows, cols);
  Eigen::Index at = 0;
  for (const Var& p : parts) {
    y.middleRows(at, p.rows()) = p.value();
    at += p.rows();
  }
  std::vector<std::size_t> parents = ids;
  return parts[0].tape->record(
      Op::kConcatRows, std::move(y), std::move(parents),
      [ids](Tape& t, std::size_t self) {
        Eigen::Index at = 0;
        for (std::size_t id : ids) {
          const Eigen::Index r = t.value(id).rows();
          accumulate(t, id, t.grad(self).middleRows(at, r));
          at += r;
        }
      });
}

Var mask_rows(Var x, const std::vector<bool>& keep) {
  if (static_cast<Eigen::Index>(keep.size()) != x.rows()) {
    shape_error(Op::kMaskRows, std::to_string(keep.size()) +
                                   " flags for input " + dims(x.value()));
  }
  Matrix y = x.value();
  for (Eigen::Index r = 0; r < y.rows(); ++r) {
    if (!keep[static_cast<std::size_t>(r)]) y.row(r).setZero();
  }
  const std::size_t ix = x.id;
  return x.tape->record(Op::kMaskRows, std::move(y), {ix},
                        [ix, keep](Tape& t, std::size_t self) {
                          if (!t.requires_grad(ix)) return;
                          const Matrix& g = t.grad(self);
                          for (Eigen::Index r = 0; r < g.rows(); ++r) {
                            if (keep[static_cast<std::size_t>(r)]) {
                              t.grad(ix).row(r) += g.row(r);
                            }
                          }
                        });
}

Var mean(Var x) {
  if (x.value().size() == 0) shape_error(Op::kMean, "empty input");
  const std::size_t ix = x.id;
  const double n = static_cast<double>(x.value().size());
  Matrix y(1, 1);
  y(0, 0) = x.value().mean();
  return x.tape->record(Op::kMean, std::move(y), {ix},
                        [ix, n](Tape& t, std::size_t self) {
                          if (!t.requires_grad(ix)) return;
                          t.grad(ix).array() += t.grad(self)(0, 0) / n;
                        });
}

Var sum(Var x) {
  const std::size_t ix = x.id;
  Matrix y(1, 1);
  y(0, 0) = x.value().sum();
  return x.tape->record(Op::kSum, std::move(y), {ix},
                        [ix](Tape& t, std::size_t self) {
                          if (!t.requires_grad(ix)) return;
                          t.grad(ix).array() += t.grad(self)(0, 0);
                        });
}

Var depthwise_conv1d(Var x, Var kernel, Var bias) {
  same_tape(x, kernel, Op::kDepthwiseConv);
  same_tape(x, bias, Op::kDepthwiseConv);
  const Eigen::Index T = x.rows();
  const Eigen::Index C = x.cols();
  const Eigen::Index K = kernel.rows();
  if (kernel.cols() != C || K % 2 == 0 || bias.rows() != 1 ||
      bias.cols() != C) {
    shape_error(Op::kDepthwiseConv, "input " + dims(x.value()) + ", kernel " +
                                        dims(kernel.value()) + ", bias " +
                                        dims(bias.value()));
  }
  const Eigen::Index half = K / 2;
  const Matrix& xv = x.value();
  const Matrix& w = kernel.value();
  Matrix y(T, C);
  y.rowwise() = bias.value().row(0);
  for (Eigen::Index t = 0; t < T; ++t) {
    for (Eigen::Index j = 0; j < K; ++j) {
      const Eigen::Index src = t + j - half;
      if (src < 0 || src >= T) continue;
      y.row(t) += w.row(j).cwiseProduct(xv.row(src));
    }
  }
  const std::size_t ix = x.id, iw = kernel.id, ib = bias.id;
  return x.tape->record(
      Op::kDepthwiseConv, std::move(y), {ix, iw, ib},
      [ix, iw, ib, half](Tape& t, std::size_t self) {
        const Matrix& g = t.grad(self);
        const Matrix& xv = t.value(ix);
        const Matrix& w = t.value(iw);
        const Eigen::Index T = g.rows();
        const Eigen::Index K = w.rows();
        const bool gx = t.requires_grad(ix);
        const bool gw = t.requires_grad(iw);
        for (Eigen::Index tt = 0; tt < T; ++tt) {
          for (Eigen::Index j = 0; j < K; ++j) {
            const Eigen::Index src = tt + j - half;
            if (src < 0 || src >= T) continue;
            if (gx) t.grad(ix).row(src) += w.row(j).cwiseProduct(g.row(tt));
            if (gw) t.grad(iw).row(j) += xv.row(src).cwiseProduct(g.row(tt));
          }
        }
        accumulate(t, ib, g.colwise().sum());
      });
}

double relative_error(double analytic, double numeric) {
  const double denom =
      std::max({std::abs(analytic), std::abs(numeric), kGradCheckFloor});
  return std::abs(analytic - numeric) / denom;
}

double grad_check(const ScalarFn& f, std::vector<Matrix> inputs, double eps) {
  auto evaluate = [&](bool with_grad, std::vector<Matrix>* grads) {
    Tape tape;
    std::vector<Var> vars;
    vars.reserve(inputs.size());
    for (const auto& m : inputs) vars.push_back(tape.variable(m));
    Var out = f(tape, vars);
    if (out.rows() != 1 || out.cols() != 1) {
      throw ContractError("grad_check: function must return a 1x1 scalar");
    }
    if (with_grad) {
      tape.backward(out);
      for (const Var& v : vars) grads->push_back(v.grad());
    }
    return out.value()(0, 0);
  };

  std::vector<Matrix> analytic;
  evaluate(true, &analytic);
  double worst = 0.0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    for (Eigen::Index e = 0; e < inputs[i].size(); ++e) {
      double& slot = inputs[i].data()[e];
      const double saved = slot;
      slot = saved + eps;
      const double up = evaluate(false, nullptr);
      slot = saved - eps;
      const double down = evaluate(false, nullptr);
      slot = saved;
      const double numeric = (up - down) / (2.0 * eps);
      worst = std::max(worst,
                       relative_error(analytic[i].data()[e], numeric));
    }
  }
  return worst;
}

double grad_check_params(const ParamLossFn& f, ParamStore& store,
                         std::size_t samples, std::uint64_t seed,
                         double eps) {
  auto evaluate = [&](bool with_grad) {
    Tape tape;
    Var out = f(tape, store);
    if (out.rows() != 1 || out.cols() != 1) {
      throw ContractError(
          "grad_check_params: function must return a 1x1 scalar");
    }
    if (with_grad) backward(out, store);
    return out.value()(0, 0);
  };

  store.zero_grad();
  evaluate(true);
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick_param(0, store.size() - 1);
  double worst = 0.0;
  for (std::size_t s = 0; s < samples; ++s) {
    Parameter& p = store.at(pick_param(rng));
    std::uniform_int_distribution<Eigen::Index> pick_entry(
        0, p.value.size() - 1);
    const Eigen::Index e = pick_entry(rng);
    double& slot = p.value.data()[e];
    const double saved = slot;
    slot = saved + eps;
    const double up = evaluate(false);
    slot = saved - eps;
    const double down = evaluate(false);
    slot = saved;
    const double numeric = (up - down) / (2.0 * eps);
    worst = std::max(worst, relative_error(p.grad.data()[e], numeric));
  }
  return worst;
}

}  // namespace altcond::diff
