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

// Stacked encoder blocks with shared character/syllable CTC heads and
// intermediate conditioning.
//
// Layer n (1-based) runs block n, then:
//   - if n is a character layer, Z(n) = softmax(char_head(X(n)));
//   - if n is a syllable layer,  R(n) = softmax(syl_head(X(n)));
//   - if conditioning is on and n < N, the next block sees
//       X(n) + char_cond(Z(n)) [+ syl_cond(R(n))]
//     with whichever predictions exist at n.
// The final prediction Z = softmax(char_head(X(N))).

#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>

#include "altcond/ctc.hpp"
#include "altcond/diff.hpp"
#include "altcond/matrix.hpp"
#include "altcond/param_store.hpp"

namespace altcond::encoder {

enum class Strategy {
  kBaseline,
  kMultitask,
  kInterCtc,
  kSelfCond,
  kParallel,
  kHierarchical,
  kAlternate,
  kCustom,
};

const char* strategy_name(Strategy s);
// Accepts the lowercase names printed by strategy_name().
Strategy parse_strategy(const std::string& name);

struct PlacementConfig {
  int n_layers = 6;
  std::set<int> char_layers;  // intermediate character heads; never n_layers
  std::set<int> syl_layers;   // syllable heads; may include n_layers
  bool condition = false;
  Strategy strategy = Strategy::kCustom;

  // Throws ContractError on out-of-range indices or a character layer at N.
  void validate() const;
  bool operator==(const PlacementConfig&) const = default;
};

// Layer sets defined for an 18-layer encoder.
inline constexpr int kReferenceDepth = 18;

// Maps reference-depth layer indices onto an n_layers encoder: each index is
// multiplied by n_layers / 18, rounded to the nearest integer (halves away
// from zero), clamped to [1, max_layer] and deduplicated.
std::set<int> scale_layers(const std::set<int>& reference, int n_layers,
                           int max_layer);

// Expands a named strategy to its (char layers, syllable layers, condition)
// triple. For n_layers == 18 the sets are exactly:
//   baseline     {}                {}           off
//   multitask    {}                {15}         off
//   interctc     {3,6,9,12,15}     {}           off
//   selfcond     {3,6,9,12,15}     {}           on
//   parallel     {6,12}            {6,12,18}    on
//   hierarchical {12,15}           {3,6,9}      on
//   alternate    {6,12}            {3,9,15}     on
// Character sets are scaled with max_layer = N - 1, syllable sets with N.
PlacementConfig preset(Strategy s, int n_layers);

struct ModelConfig {
  int input_dim = 16;
  int d_model = 64;
  int n_heads = 4;
  int ff_dim = 128;
  int conv_kernel = 7;
  int char_vocab = 0;  // |V'| including blank
  int syl_vocab = 0;   // |W'| including blank
  bool positional_encoding = true;
  // Layer-normalise the conditioned sum with one shared affine LN.
  bool cond_layer_norm = false;
  PlacementConfig placement;

  void validate() const;
};

Header to_header(const ModelConfig& cfg);
ModelConfig model_config_from_header(const Header& h);

enum class HeadKind { kChar, kSyl };

struct HeadVars {
  diff::Var logits;
  diff::Var log_probs;
  diff::Var probs;
};

struct ForwardVars {
  HeadVars final;
  std::map<int, HeadVars> char_inters;
  std::map<int, HeadVars> syl_inters;
};

struct ForwardOutput {
  ctc::ProbMatrix final;
  std::map<int, ctc::ProbMatrix> char_inters;
  std::map<int, ctc::ProbMatrix> syl_inters;
};

// Allocates every parameter the configuration uses. Heads and conditioning
// projections are one matrix per role however many layers use them.
ParamStore init_params(const ModelConfig& cfg, std::uint64_t seed);

// Pre-norm residual block: x + attn(LN x), then + conv(LN .), then
// + ffn(LN .). Shape preserving. Throws NumericError naming the layer when
// the output is not finite.
diff::Var block_forward(diff::Tape& tape, diff::Var x, const ParamStore& params,
                        int layer, const ModelConfig& cfg);

HeadVars predict_head(diff::Tape& tape, diff::Var x, const ParamStore& params,
                      HeadKind head);

// Feedback after layer n. `z` must be given iff n is a character layer and
// `r` iff n is a syllable layer; returns x unchanged when conditioning is off
// or neither is present.
diff::Var condition(diff::Tape& tape, diff::Var x, const diff::Var* z,
                    const diff::Var* r, int layer, const ModelConfig& cfg,
                    const ParamStore& params);

// Sinusoidal absolute position table (frames x dim).
Matrix positional_encoding(Eigen::Index frames, Eigen::Index dim);

ForwardVars forward(diff::Tape& tape, const Matrix& features,
                    const ParamStore& params, const ModelConfig& cfg);

class EncoderModel {
 public:
  EncoderModel(ModelConfig cfg, std::uint64_t seed);
  EncoderModel(ModelConfig cfg, ParamStore params);

  const ModelConfig& config() const { return cfg_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  ForwardVars forward(diff::Tape& tape, const Matrix& features) const {
    return encoder::forward(tape, features, params_, cfg_);
  }

 private:
  ModelConfig cfg_;
  ParamStore params_;
};

// Inference-only forward pass returning the final and intermediate
// posteriors.
ForwardOutput encoder_forward(const Matrix& features, const EncoderModel& model);

// Parameter name helpers.
std::string head_weight(HeadKind head);
std::string head_bias(HeadKind head);

}  // namespace altcond::encoder
