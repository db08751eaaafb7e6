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

// CTC loss by forward-backward over the blank-interleaved label lattice.
//
// The lattice for a target (l_1..l_L) is the extended sequence
//   blank, l_1, blank, l_2, ..., l_L, blank      (S = 2L + 1 states).
// log_alpha(t, s) is the log probability of all path prefixes a_1..a_t that
// end in state s, including the emission at t. log_beta(t, s) is the log
// probability of all suffixes a_{t+1}..a_T that complete the target from s,
// excluding the emission at t. Hence alpha * beta is the total probability of
// paths occupying s at frame t.

#pragma once

#include <cstddef>
#include <limits>
#include <span>

#include "altcond/labels.hpp"
#include "altcond/matrix.hpp"

namespace altcond::ctc {

inline constexpr double kProbFloor = 1e-30;
inline constexpr double kRowSumTolerance = 1e-6;
inline constexpr double kLogZero = -std::numeric_limits<double>::infinity();

// T x K row-stochastic matrix of per-frame posteriors.
class ProbMatrix {
 public:
  ProbMatrix() = default;
  // Throws ContractError unless every entry is finite and non-negative and
  // every row sums to 1 within kRowSumTolerance.
  explicit ProbMatrix(Matrix values);

  const Matrix& values() const { return values_; }
  Eigen::Index frames() const { return values_.rows(); }
  Eigen::Index classes() const { return values_.cols(); }
  double operator()(Eigen::Index t, Eigen::Index k) const {
    return values_(t, k);
  }

 private:
  Matrix values_;
};

struct CtcResult {
  double loss = 0.0;  // nats
  Matrix grad;        // d loss / d z, same shape as the input
  Matrix log_alpha;   // T x (2L + 1)
  Matrix log_beta;    // T x (2L + 1)
};

// Number of adjacent equal pairs in the target.
std::size_t count_repeats(std::span<const TokenId> target);
// The minimum number of frames needed to emit the target: L + repeats.
std::size_t min_frames(std::span<const TokenId> target);
bool feasible(std::size_t frames, std::span<const TokenId> target);

// Loss and gradient w.r.t. the log-probabilities. `log_probs` is log z with
// the floor already applied. The gradient is -occupancy(t, k), which is what
// a log-softmax layer needs for backpropagation.
CtcResult ctc_loss_log(const Matrix& log_probs,
                       std::span<const TokenId> target);

// Loss and gradient w.r.t. the per-frame scores z (floored at kProbFloor).
// z need not be normalised, which lets finite differences perturb single
// entries.
CtcResult ctc_loss(const Matrix& probs, std::span<const TokenId> target);
inline CtcResult ctc_loss(const ProbMatrix& probs,
                          std::span<const TokenId> target) {
  return ctc_loss(probs.values(), target);
}

Matrix ctc_grad_wrt_probs(const Matrix& probs, std::span<const TokenId> target);

// Argmax per row (ties to the lowest id), then collapse.
LabelSeq greedy_decode(const Matrix& probs);
inline LabelSeq greedy_decode(const ProbMatrix& probs) {
  return greedy_decode(probs.values());
}
Path argmax_path(const Matrix& probs);

inline constexpr std::size_t kOracleMaxPaths = 1000000;

// Direct evaluation of -log sum over every path of length T that collapses
// to the target. Returns +inf when no path does. Throws OracleSizeError when
// K^T exceeds kOracleMaxPaths.
double brute_force_loss(const Matrix& probs, std::span<const TokenId> target);

}  // namespace altcond::ctc
