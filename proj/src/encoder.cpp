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

#include "altcond/encoder.hpp"

#include <cmath>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "altcond/error.hpp"

namespace altcond::encoder {
namespace {

using diff::Var;

std::string block_prefix(int layer) {
  return "block" + std::to_string(layer) + ".";
}

std::string join_layers(const std::set<int>& s) {
  std::string out;
  for (int v : s) {
    if (!out.empty()) out += ',';
    out += std::to_string(v);
  }
  return out;
}

std::set<int> parse_layers(const std::string& text) {
  std::set<int> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    try {
      out.insert(std::stoi(item));
    } catch (const std::exception&) {
      throw ConfigError("bad layer index '" + item + "'");
    }
  }
  return out;
}

const std::string& header_at(const Header& h, const std::string& key) {
  auto it = h.find(key);
  if (it == h.end()) throw DataError("checkpoint header lacks '" + key + "'");
  return it->second;
}

int header_int(const Header& h, const std::string& key) {
  const std::string& v = header_at(h, key);
  try {
    return std::stoi(v);
  } catch (const std::exception&) {
    throw DataError("checkpoint header '" + key + "' is not an integer");
  }
}

Var row_param(diff::Tape& tape, const ParamStore& params,
              const std::string& name) {
  return tape.param(params, name);
}

void check_finite(const Var& v, int layer) {
  if (!v.value().allFinite()) {
    throw NumericError("non-finite activations at encoder layer " +
                       std::to_string(layer));
  }
}

Var attention(diff::Tape& tape, Var x, const ParamStore& params,
              const std::string& p, const ModelConfig& cfg) {
  Var q = diff::linear(x, tape.param(params, p + "att.wq"),
                       tape.param(params, p + "att.bq"));
  Var k = diff::linear(x, tape.param(params, p + "att.wk"),
                       tape.param(params, p + "att.bk"));
  Var v = diff::linear(x, tape.param(params, p + "att.wv"),
                       tape.param(params, p + "att.bv"));
  const Eigen::Index dh = cfg.d_model / cfg.n_heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Var> heads;
  heads.reserve(static_cast<std::size_t>(cfg.n_heads));
  for (int h = 0; h < cfg.n_heads; ++h) {
    Var qh = diff::slice_cols(q, h * dh, dh);
    Var kh = diff::slice_cols(k, h * dh, dh);
    Var vh = diff::slice_cols(v, h * dh, dh);
    Var scores = diff::scale(diff::matmul(qh, diff::transpose(kh)), inv_sqrt);
    heads.push_back(diff::matmul(diff::softmax_rows(scores), vh));
  }
  Var merged = heads.size() == 1 ? heads[0] : diff::concat_cols(heads);
  return diff::linear(merged, tape.param(params, p + "att.wo"),
                      tape.param(params, p + "att.bo"));
}

}  // namespace

const char* strategy_name(Strategy s) {
  switch (s) {
    case Strategy::kBaseline: return "baseline";
    case Strategy::kMultitask: return "multitask";
    case Strategy::kInterCtc: return "interctc";
    case Strategy::kSelfCond: return "selfcond";
    case Strategy::kParallel: return "parallel";
    case Strategy::kHierarchical: return "hierarchical";
    case Strategy::kAlternate: return "alternate";
    case Strategy::kCustom: return "custom";
  }
  return "custom";
}

Strategy parse_strategy(const std::string& name) {
  for (Strategy s :
       {Strategy::kBaseline, Strategy::kMultitask, Strategy::kInterCtc,
        Strategy::kSelfCond, Strategy::kParallel, Strategy::kHierarchical,
        Strategy::kAlternate, Strategy::kCustom}) {
    if (name == strategy_name(s)) return s;
  }
  throw ConfigError("unknown strategy '" + name + "'");
}

void PlacementConfig::validate() const {
  if (n_layers < 1) throw ContractError("encoder needs at least one layer");
  for (int n : char_layers) {
    if (n < 1 || n >= n_layers) {
      throw ContractError("character layer " + std::to_string(n) +
                          " outside [1, " + std::to_string(n_layers - 1) +
                          "]; layer N carries the final head");
    }
  }
  for (int n : syl_layers) {
    if (n < 1 || n > n_layers) {
      throw ContractError("syllable layer " + std::to_string(n) +
                          " outside [1, " + std::to_string(n_layers) + "]");
    }
  }
}

std::set<int> scale_layers(const std::set<int>& reference, int n_layers,
                           int max_layer) {
  std::set<int> out;
  if (max_layer < 1) return out;
  for (int n : reference) {
    const double scaled =
        static_cast<double>(n) * n_layers / static_cast<double>(kReferenceDepth);
    long v = std::lround(scaled);
    if (v < 1) v = 1;
    if (v > max_layer) v = max_layer;
    out.insert(static_cast<int>(v));
  }
  return out;
}

PlacementConfig preset(Strategy s, int n_layers) {
  if (n_layers < 1) throw ConfigError("n_layers must be >= 1");
  std::set<int> chars, syls;
  bool cond = false;
  switch (s) {
    case Strategy::kBaseline:
      break;
    case Strategy::kMultitask:
      syls = {15};
      break;
    case Strategy::kInterCtc:
      chars = {3, 6, 9, 12, 15};
      break;
    case Strategy::kSelfCond:
      chars = {3, 6, 9, 12, 15};
      cond = true;
      break;
    case Strategy::kParallel:
      chars = {6, 12};
      syls = {6, 12, 18};
      cond = true;
      break;
    case Strategy::kHierarchical:
      chars = {12, 15};
      syls = {3, 6, 9};
      cond = true;
      break;
    case Strategy::kAlternate:
      chars = {6, 12};
      syls = {3, 9, 15};
      cond = true;
      break;
    case Strategy::kCustom:
      throw ConfigError("'custom' has no preset; give layer sets explicitly");
  }
  PlacementConfig p;
  p.n_layers = n_layers;
  p.char_layers = scale_layers(chars, n_layers, n_layers - 1);
  p.syl_layers = scale_layers(syls, n_layers, n_layers);
  p.condition = cond;
  p.strategy = s;
  p.validate();
  return p;
}

void ModelConfig::validate() const {
  placement.validate();
  if (input_dim < 1 || d_model < 1 || ff_dim < 1 || n_heads < 1) {
    throw ContractError("model dimensions must be positive");
  }
  if (d_model % n_heads != 0) {
    throw ContractError("d_model must be divisible by n_heads");
  }
  if (conv_kernel < 1 || conv_kernel % 2 == 0) {
    throw ContractError("conv_kernel must be a positive odd number");
  }
  if (char_vocab < 2) throw ContractError("char_vocab must include blank + 1");
  if (!placement.syl_layers.empty() && syl_vocab < 2) {
    throw ContractError("syllable layers need a syllable vocabulary");
  }
}

Header to_header(const ModelConfig& cfg) {
  Header h;
  h["input_dim"] = std::to_string(cfg.input_dim);
  h["d_model"] = std::to_string(cfg.d_model);
  h["n_heads"] = std::to_string(cfg.n_heads);
  h["ff_dim"] = std::to_string(cfg.ff_dim);
  h["conv_kernel"] = std::to_string(cfg.conv_kernel);
  h["char_vocab_size"] = std::to_string(cfg.char_vocab);
  h["syl_vocab_size"] = std::to_string(cfg.syl_vocab);
  h["positional_encoding"] = cfg.positional_encoding ? "1" : "0";
  h["cond_layer_norm"] = cfg.cond_layer_norm ? "1" : "0";
  h["n_layers"] = std::to_string(cfg.placement.n_layers);
  h["char_layers"] = join_layers(cfg.placement.char_layers);
  h["syl_layers"] = join_layers(cfg.placement.syl_layers);
  h["condition"] = cfg.placement.condition ? "1" : "0";
  h["strategy"] = strategy_name(cfg.placement.strategy);
  return h;
}

ModelConfig model_config_from_header(const Header& h) {
  ModelConfig cfg;
  cfg.input_dim = header_int(h, "input_dim");
  cfg.d_model = header_int(h, "d_model");
  cfg.n_heads = header_int(h, "n_heads");
  cfg.ff_dim = header_int(h, "ff_dim");
  cfg.conv_kernel = header_int(h, "conv_kernel");
  cfg.char_vocab = header_int(h, "char_vocab_size");
  cfg.syl_vocab = header_int(h, "syl_vocab_size");
  cfg.positional_encoding = header_int(h, "positional_encoding") != 0;
  cfg.cond_layer_norm = header_int(h, "cond_layer_norm") != 0;
  cfg.placement.n_layers = header_int(h, "n_layers");
  cfg.placement.char_layers = parse_layers(header_at(h, "char_layers"));
  cfg.placement.syl_layers = parse_layers(header_at(h, "syl_layers"));
  cfg.placement.condition = header_int(h, "condition") != 0;
  cfg.placement.strategy = parse_strategy(header_at(h, "strategy"));
  cfg.validate();
  return cfg;
}

std::string head_weight(HeadKind head) {
  return head == HeadKind::kChar ? "char_head.w" : "syl_head.w";
}

std::string head_bias(HeadKind head) {
  return head == HeadKind::kChar ? "char_head.b" : "syl_head.b";
}

ParamStore init_params(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  ParamStore ps;
  const Eigen::Index D = cfg.d_model;
  const Eigen::Index F = cfg.ff_dim;
  auto lin = [&](const std::string& name, Eigen::Index in, Eigen::Index out) {
    ps.add(name + ".w",
           xavier_uniform(in, out, static_cast<double>(in),
                          static_cast<double>(out), rng));
    ps.add(name + ".b", Matrix::Zero(1, out));
  };
  auto norm = [&](const std::string& name, Eigen::Index dim) {
    ps.add(name + ".g", Matrix::Ones(1, dim));
    ps.add(name + ".b", Matrix::Zero(1, dim));
  };

  lin("input", cfg.input_dim, D);
  for (int n = 1; n <= cfg.placement.n_layers; ++n) {
    const std::string p = block_prefix(n);
    norm(p + "ln_att", D);
    ps.add(p + "att.wq", xavier_uniform(D, D, D, D, rng));
    ps.add(p + "att.bq", Matrix::Zero(1, D));
    ps.add(p + "att.wk", xavier_uniform(D, D, D, D, rng));
    ps.add(p + "att.bk", Matrix::Zero(1, D));
    ps.add(p + "att.wv", xavier_uniform(D, D, D, D, rng));
    ps.add(p + "att.bv", Matrix::Zero(1, D));
    ps.add(p + "att.wo", xavier_uniform(D, D, D, D, rng));
    ps.add(p + "att.bo", Matrix::Zero(1, D));
    norm(p + "ln_conv", D);
    ps.add(p + "conv.dw",
           xavier_uniform(cfg.conv_kernel, D, cfg.conv_kernel,
                          cfg.conv_kernel, rng));
    ps.add(p + "conv.db", Matrix::Zero(1, D));
    ps.add(p + "conv.pw", xavier_uniform(D, D, D, D, rng));
    ps.add(p + "conv.pb", Matrix::Zero(1, D));
    norm(p + "ln_ff", D);
    ps.add(p + "ff.w1", xavier_uniform(D, F, D, F, rng));
    ps.add(p + "ff.b1", Matrix::Zero(1, F));
    ps.add(p + "ff.w2", xavier_uniform(F, D, F, D, rng));
    ps.add(p + "ff.b2", Matrix::Zero(1, D));
  }

  const auto& pl = cfg.placement;
  lin("char_head", D, cfg.char_vocab);
  if (!pl.syl_layers.empty()) lin("syl_head", D, cfg.syl_vocab);
  if (pl.condition && !pl.char_layers.empty()) {
    lin("char_cond", cfg.char_vocab, D);
  }
  if (pl.condition && !pl.syl_layers.empty()) {
    lin("syl_cond", cfg.syl_vocab, D);
  }
  if (pl.condition && cfg.cond_layer_norm &&
      !(pl.char_layers.empty() && pl.syl_layers.empty())) {
    norm("cond_norm", D);
  }
  return ps;
}

Var block_forward(diff::Tape& tape, Var x, const ParamStore& params, int layer,
                  const ModelConfig& cfg) {
  if (x.cols() != cfg.d_model) {
    throw ShapeError("block_forward: input has " + std::to_string(x.cols()) +
                     " columns, model dimension is " +
                     std::to_string(cfg.d_model));
  }
  if (!x.value().allFinite()) {
    throw NumericError("non-finite input to encoder layer " +
                       std::to_string(layer));
  }
  const std::string p = block_prefix(layer);
  auto ln = [&](Var v, const std::string& name) {
    return diff::layer_norm_rows(v, tape.param(params, p + name + ".g"),
                                 tape.param(params, p + name + ".b"));
  };

  Var h = diff::add(x, attention(tape, ln(x, "ln_att"), params, p, cfg));

  Var c = diff::depthwise_conv1d(ln(h, "ln_conv"),
                                 tape.param(params, p + "conv.dw"),
                                 tape.param(params, p + "conv.db"));
  c = diff::linear(diff::swish(c), tape.param(params, p + "conv.pw"),
                   tape.param(params, p + "conv.pb"));
  h = diff::add(h, c);

  Var f = diff::linear(ln(h, "ln_ff"), tape.param(params, p + "ff.w1"),
                       tape.param(params, p + "ff.b1"));
  f = diff::linear(diff::swish(f), tape.param(params, p + "ff.w2"),
                   tape.param(params, p + "ff.b2"));
  Var out = diff::add(h, f);
  check_finite(out, layer);
  return out;
}

HeadVars predict_head(diff::Tape& tape, Var x, const ParamStore& params,
                      HeadKind head) {
  Var w = row_param(tape, params, head_weight(head));
  Var b = row_param(tape, params, head_bias(head));
  if (w.rows() != x.cols()) {
    throw ShapeError("predict_head: input has " + std::to_string(x.cols()) +
                     " columns, head expects " + std::to_string(w.rows()));
  }
  HeadVars out;
  out.logits = diff::linear(x, w, b);
  out.log_probs = diff::log_softmax_rows(out.logits);
  out.probs = diff::softmax_rows(out.logits);
  return out;
}

Var condition(diff::Tape& tape, Var x, const Var* z, const Var* r, int layer,
              const ModelConfig& cfg, const ParamStore& params) {
  const auto& pl = cfg.placement;
  const bool is_char = pl.char_layers.count(layer) != 0;
  const bool is_syl = pl.syl_layers.count(layer) != 0;
  if ((z != nullptr) != is_char || (r != nullptr) != is_syl) {
    throw ContractError(
        "condition: predictions given at layer " + std::to_string(layer) +
        " do not match the placement (char " + (is_char ? "yes" : "no") +
        ", syllable " + (is_syl ? "yes" : "no") + ")");
  }
  if (!pl.condition || (!is_char && !is_syl)) return x;

  Var out = x;
  if (z != nullptr) {
    out = diff::add(out, diff::linear(*z, tape.param(params, "char_cond.w"),
                                      tape.param(params, "char_cond.b")));
  }
  if (r != nullptr) {
    out = diff::add(out, diff::linear(*r, tape.param(params, "syl_cond.w"),
                                      tape.param(params, "syl_cond.b")));
  }
  if (cfg.cond_layer_norm) {
    out = diff::layer_norm_rows(out, tape.param(params, "cond_norm.g"),
                                tape.param(params, "cond_norm.b"));
  }
  return out;
}

Matrix positional_encoding(Eigen::Index frames, Eigen::Index dim) {
  Matrix pe(frames, dim);
  for (Eigen::Index t = 0; t < frames; ++t) {
    for (Eigen::Index i = 0; i < dim; ++i) {
      const double expo = static_cast<double>(2 * (i / 2)) /
                          static_cast<double>(dim);
      const double angle = static_cast<double>(t) / std::pow(10000.0, expo);
      pe(t, i) = (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
    }
  }
  return pe;
}

ForwardVars forward(diff::Tape& tape, const Matrix& features,
                    const ParamStore& params, const ModelConfig& cfg) {
  if (features.rows() < 1) {
    throw ContractError("encoder input must have at least one frame");
  }
  if (features.cols() != cfg.input_dim) {
    throw ShapeError("encoder input has " + std::to_string(features.cols()) +
                     " feature dims, model expects " +
                     std::to_string(cfg.input_dim));
  }
  const auto& pl = cfg.placement;
  Var x = diff::linear(tape.constant(features), tape.param(params, "input.w"),
                       tape.param(params, "input.b"));
  if (cfg.positional_encoding) {
    x = diff::add(x, tape.constant(positional_encoding(features.rows(),
                                                       cfg.d_model)));
  }

  ForwardVars out;
  for (int n = 1; n <= pl.n_layers; ++n) {
    x = block_forward(tape, x, params, n, cfg);
    const Var* z = nullptr;
    const Var* r = nullptr;
    if (pl.char_layers.count(n)) {
      auto [it, _] = out.char_inters.emplace(
          n, predict_head(tape, x, params, HeadKind::kChar));
      z = &it->second.probs;
    }
    if (pl.syl_layers.count(n)) {
      auto [it, _] = out.syl_inters.emplace(
          n, predict_head(tape, x, params, HeadKind::kSyl));
      r = &it->second.probs;
    }
    if (n < pl.n_layers) x = condition(tape, x, z, r, n, cfg, params);
  }
  out.final = predict_head(tape, x, params, HeadKind::kChar);
  return out;
}

EncoderModel::EncoderModel(ModelConfig cfg, std::uint64_t seed)
    : cfg_(std::move(cfg)), params_(init_params(cfg_, seed)) {}

EncoderModel::EncoderModel(ModelConfig cfg, ParamStore params)
    : cfg_(std::move(cfg)), params_(std::move(params)) {
  cfg_.validate();
}

ForwardOutput encoder_forward(const Matrix& features,
                              const EncoderModel& model) {
  diff::Tape tape;
  ForwardVars vars = model.forward(tape, features);
  ForwardOutput out;
  out.final = ctc::ProbMatrix(vars.final.probs.value());
  for (const auto& [n, h] : vars.char_inters) {
    out.char_inters.emplace(n, ctc::ProbMatrix(h.probs.value()));
  }
  for (const auto& [n, h] : vars.syl_inters) {
    out.syl_inters.emplace(n, ctc::ProbMatrix(h.probs.value()));
  }
  return out;
}

}  // namespace altcond::encoder
