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

#include "altcond/ctc.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "altcond/error.hpp"

namespace altcond::ctc {
namespace {

inline double log_sum_exp(double a, double b) {
  if (a == kLogZero) return b;
  if (b == kLogZero) return a;
  if (a < b) std::swap(a, b);
  return a + std::log1p(std::exp(b - a));
}

std::vector<TokenId> extend_with_blanks(std::span<const TokenId> target) {
  std::vector<TokenId> ext;
  ext.reserve(2 * target.size() + 1);
  for (TokenId l : target) {
    ext.push_back(kBlankId);
    ext.push_back(l);
  }
  ext.push_back(kBlankId);
  return ext;
}

void check_target(std::span<const TokenId> target, Eigen::Index classes) {
  for (TokenId l : target) {
    if (l <= kBlankId || l >= classes) {
      throw InvalidTokenError("target id " + std::to_string(l) +
                              " invalid for " + std::to_string(classes) +
                              " output classes");
    }
  }
}

void check_feasible(Eigen::Index frames, std::span<const TokenId> target) {
  if (!feasible(static_cast<std::size_t>(frames), target)) {
    throw InfeasibleAlignmentError(
        "target of length " + std::to_string(target.size()) + " needs " +
        std::to_string(min_frames(target)) + " frames, got " +
        std::to_string(frames));
  }
}

}  // namespace

ProbMatrix::ProbMatrix(Matrix values) : values_(std::move(values)) {
  for (Eigen::Index t = 0; t < values_.rows(); ++t) {
    double sum = 0.0;
    for (Eigen::Index k = 0; k < values_.cols(); ++k) {
      const double z = values_(t, k);
      if (!std::isfinite(z) || z < 0.0) {
        throw ContractError("probability matrix entry (" + std::to_string(t) +
                            "," + std::to_string(k) +
                            ") is negative or non-finite");
      }
      sum += z;
    }
    if (std::abs(sum - 1.0) > kRowSumTolerance) {
      throw ContractError("probability matrix row " + std::to_string(t) +
                          " sums to " + std::to_string(sum));
    }
  }
}

std::size_t count_repeats(std::span<const TokenId> target) {
  std::size_t repeats = 0;
  for (std::size_t i = 1; i < target.size(); ++i) {
    if (target[i] == target[i - 1]) ++repeats;
  }
  return repeats;
}

std::size_t min_frames(std::span<const TokenId> target) {
  return target.size() + count_repeats(target);
}

bool feasible(std::size_t frames, std::span<const TokenId> target) {
  return frames >= min_frames(target);
}

CtcResult ctc_loss_log(const Matrix& log_probs,
                       std::span<const TokenId> target) {
  const Eigen::Index T = log_probs.rows();
  const Eigen::Index K = log_probs.cols();
  if (T == 0) throw ContractError("CTC input has no frames");
  check_target(target, K);
  check_feasible(T, target);
  if (!log_probs.allFinite()) {
    throw NumericError("CTC input contains non-finite log-probabilities");
  }

  const std::vector<TokenId> ext = extend_with_blanks(target);
  const auto S = static_cast<Eigen::Index>(ext.size());
  // A state may be entered by skipping the preceding blank unless it is a
  // blank itself or repeats the label two states back.
  std::vector<char> can_skip(ext.size(), 0);
  for (Eigen::Index s = 2; s < S; ++s) {
    can_skip[s] = ext[s] != kBlankId && ext[s] != ext[s - 2];
  }

  CtcResult r;
  r.log_alpha = Matrix::Constant(T, S, kLogZero);
  r.log_beta = Matrix::Constant(T, S, kLogZero);
  Matrix& la = r.log_alpha;
  Matrix& lb = r.log_beta;

  la(0, 0) = log_probs(0, ext[0]);
  if (S > 1) la(0, 1) = log_probs(0, ext[1]);
  for (Eigen::Index t = 1; t < T; ++t) {
    for (Eigen::Index s = 0; s < S; ++s) {
      double acc = la(t - 1, s);
      if (s >= 1) acc = log_sum_exp(acc, la(t - 1, s - 1));
      if (can_skip[s]) acc = log_sum_exp(acc, la(t - 1, s - 2));
      if (acc != kLogZero) la(t, s) = acc + log_probs(t, ext[s]);
    }
  }

  lb(T - 1, S - 1) = 0.0;
  if (S > 1) lb(T - 1, S - 2) = 0.0;
  for (Eigen::Index t = T - 2; t >= 0; --t) {
    for (Eigen::Index s = 0; s < S; ++s) {
      double acc = lb(t + 1, s) + log_probs(t + 1, ext[s]);
      if (s + 1 < S) {
        acc = log_sum_exp(acc, lb(t + 1, s + 1) + log_probs(t + 1, ext[s + 1]));
      }
      if (s + 2 < S && can_skip[s + 2]) {
        acc = log_sum_exp(acc, lb(t + 1, s + 2) + log_probs(t + 1, ext[s + 2]));
      }
      lb(t, s) = acc;
    }
  }

  double log_p = la(T - 1, S - 1);
  if (S > 1) log_p = log_sum_exp(log_p, la(T - 1, S - 2));
  if (log_p == kLogZero) {
    throw InfeasibleAlignmentError("no path collapses to the target");
  }
  r.loss = -log_p;

  // d loss / d log z_{t,k} = -(sum_{s: ext[s]=k} alpha_t(s) beta_t(s)) / P.
  r.grad = Matrix::Zero(T, K);
  for (Eigen::Index t = 0; t < T; ++t) {
    for (Eigen::Index s = 0; s < S; ++s) {
      const double occ = la(t, s) + lb(t, s);
      if (occ == kLogZero) continue;
      r.grad(t, ext[s]) -= std::exp(occ - log_p);
    }
  }
  return r;
}

CtcResult ctc_loss(const Matrix& probs, std::span<const TokenId> target) {
  if (!probs.allFinite() || (probs.array() < 0.0).any()) {
    throw NumericError("CTC input probabilities must be finite and >= 0");
  }
  const Matrix floored = probs.cwiseMax(kProbFloor);
  CtcResult r = ctc_loss_log(floored.array().log().matrix(), target);
  r.grad = (r.grad.array() / floored.array()).matrix();
  return r;
}

Matrix ctc_grad_wrt_probs(const Matrix& probs,
                          std::span<const TokenId> target) {
  return ctc_loss(probs, target).grad;
}

Path argmax_path(const Matrix& probs) {
  Path path(static_cast<std::size_t>(probs.rows()));
  for (Eigen::Index t = 0; t < probs.rows(); ++t) {
    Eigen::Index best = 0;
    for (Eigen::Index k = 1; k < probs.cols(); ++k) {
      if (probs(t, k) > probs(t, best)) best = k;
    }
    path[static_cast<std::size_t>(t)] = static_cast<TokenId>(best);
  }
  return path;
}

LabelSeq greedy_decode(const Matrix& probs) {
  return collapse(argmax_path(probs), static_cast<std::size_t>(probs.cols()));
}

double brute_force_loss(const Matrix& probs, std::span<const TokenId> target) {
  const auto T = static_cast<std::size_t>(probs.rows());
  const auto K = static_cast<std::size_t>(probs.cols());
  double n_paths = 1.0;
  for (std::size_t t = 0; t < T; ++t) n_paths *= static_cast<double>(K);
  if (n_paths > static_cast<double>(kOracleMaxPaths)) {
    throw OracleSizeError("brute-force oracle would enumerate " +
                          std::to_string(n_paths) + " paths");
  }
  const LabelSeq want(target.begin(), target.end());
  Path path(T, 0);
  double total = 0.0;
  const auto count = static_cast<std::size_t>(n_paths);
  for (std::size_t code = 0; code < count; ++code) {
    std::size_t rest = code;
    double prod = 1.0;
    for (std::size_t t = 0; t < T; ++t) {
      path[t] = static_cast<TokenId>(rest % K);
      rest /= K;
      prod *= probs(static_cast<Eigen::Index>(t), path[t]);
    }
    if (collapse(path, K) == want) total += prod;
  }
  if (total <= 0.0) return std::numeric_limits<double>::infinity();
  return -std::log(total);
}

}  // namespace altcond::ctc
