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

// Loss mixing, Adam with the Noam schedule, checkpoint averaging and the
// training loop.

#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "altcond/diff.hpp"
#include "altcond/encoder.hpp"
#include "altcond/error.hpp"
#include "altcond/param_store.hpp"
#include "altcond/synthdata.hpp"

namespace altcond::train {

struct TrainConfig {
  double lambda = 0.5;
  int epochs = 0;         // 0: bounded by max_steps only
  int max_steps = 3000;   // 0: bounded by epochs only
  int batch_size = 4;
  int warmup_steps = 400;
  double lr_factor = 2.0;
  std::uint64_t seed = 1;
  int average_k = 5;
  int eval_every = 100;
  double clip_norm = 5.0;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.98;
  double adam_eps = 1e-9;
  int workers = 1;          // >1 shards each batch across threads
  std::string out_dir;      // checkpoints and metrics are written here if set
  Header extra_header;      // copied into every checkpoint header

  void validate() const;
};

// Per-head CTC losses and their mixture.
struct LossBreakdown {
  double total = 0.0;
  double final = 0.0;
  std::map<int, double> char_layers;
  std::map<int, double> syl_layers;
};

struct LossWeights {
  double final = 1.0;
  double intermediate = 0.0;  // per intermediate term
};

// (1 - lambda) for the final head and lambda / (|N| + |Nq|) per
// intermediate head. With no intermediate heads the final weight is 1.
LossWeights loss_weights(const encoder::PlacementConfig& pl, double lambda);

LossBreakdown total_loss(const encoder::ForwardOutput& out,
                         std::span<const TokenId> chars,
                         std::span<const TokenId> syls,
                         const encoder::PlacementConfig& pl, double lambda);

// CTC loss as a tape node over log-probabilities.
diff::Var ctc_loss_var(diff::Var log_probs, std::span<const TokenId> target);

// Differentiable mixture; fills `parts` with the individual loss values.
diff::Var total_loss_var(const encoder::ForwardVars& out,
                         std::span<const TokenId> chars,
                         std::span<const TokenId> syls,
                         const encoder::PlacementConfig& pl, double lambda,
                         LossBreakdown* parts = nullptr);

// factor * d_model^-0.5 * min(step^-0.5, step * warmup^-1.5); step >= 1.
double noam_lr(long step, int d_model, int warmup, double factor);

class Adam {
 public:
  Adam(double beta1 = 0.9, double beta2 = 0.98, double eps = 1e-9)
      : beta1_(beta1), beta2_(beta2), eps_(eps) {}

  // Bias-corrected update from the grads held in the store. Throws
  // NumericError naming the first parameter with a non-finite gradient.
  void step(ParamStore& params, double lr);
  long steps() const { return t_; }

 private:
  double beta1_;
  double beta2_;
  double eps_;
  long t_ = 0;
};

// Scales grads so their global L2 norm is at most max_norm; returns the
// norm before clipping.
double clip_grad_norm(ParamStore& params, double max_norm);

ParamStore average_checkpoints(std::span<const ParamStore> stores);

struct MetricsRow {
  long step = 0;
  double lr = 0.0;
  LossBreakdown train_loss;  // mean over the training set
  double valid_loss = 0.0;   // mean total loss over the validation set
  double cer_valid = 0.0;
  std::map<int, double> ser_valid;  // syllable layer -> SER
};

std::string metrics_header(const encoder::PlacementConfig& pl);
std::string metrics_line(const MetricsRow& row,
                         const encoder::PlacementConfig& pl);
void write_metrics_csv(std::ostream& os, const std::vector<MetricsRow>& rows,
                       const encoder::PlacementConfig& pl);

struct EvalReport {
  LossBreakdown loss;  // mean over utterances
  double cer = 0.0;    // final head
  std::map<int, double> cer_layers;  // intermediate character layers
  std::map<int, double> ser_layers;  // syllable layers
};

// Greedy decoding at every head plus mean losses.
EvalReport evaluate(const encoder::EncoderModel& model,
                    std::span<const synth::Utterance> data, double lambda);

struct Checkpoint {
  long step = 0;
  double valid_loss = 0.0;
  ParamStore params;
};

struct TrainResult {
  encoder::EncoderModel model;  // average of the best checkpoints
  std::vector<MetricsRow> metrics;
  std::vector<Checkpoint> best;  // ascending validation loss
  encoder::EncoderModel last;    // parameters after the final step
};

// Aborted training; carries the last parameters that produced finite losses.
class TrainingDiverged : public NumericError {
 public:
  TrainingDiverged(const std::string& what, long step, ParamStore last_good)
      : NumericError(what), step_(step), last_good_(std::move(last_good)) {}
  long step() const { return step_; }
  const ParamStore& last_good() const { return last_good_; }

 private:
  long step_;
  ParamStore last_good_;
};

// Deterministic given cfg.seed (and workers == 1). If cfg.valid is empty
// the training set is used for checkpoint selection.
TrainResult train(std::span<const synth::Utterance> train_set,
                  std::span<const synth::Utterance> valid_set,
                  const encoder::ModelConfig& model_cfg,
                  const TrainConfig& cfg);

// Rejects utterances whose targets cannot be aligned to their frames.
void check_feasible(std::span<const synth::Utterance> data);

}  // namespace altcond::train
