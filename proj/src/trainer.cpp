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

#include "altcond/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <ostream>
#include <random>
#include <thread>

#include "altcond/ctc.hpp"
#include "altcond/labels.hpp"

namespace altcond::train {
namespace {

using diff::Var;

std::string fmt_num(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

[[noreturn]] void rethrow_for_layer(const Error& e, const std::string& where) {
  throw InfeasibleAlignmentError(where + ": " + e.what());
}

template <typename Fn>
auto at_head(const std::string& where, Fn&& fn) {
  try {
    return fn();
  } catch (const InfeasibleAlignmentError& e) {
    rethrow_for_layer(e, where);
  }
}

std::string char_site(int n) {
  return "character head at layer " + std::to_string(n);
}
std::string syl_site(int n) {
  return "syllable head at layer " + std::to_string(n);
}

struct BatchResult {
  Gradients grads;
  double loss_sum = 0.0;
};

void run_shard(const encoder::EncoderModel& model,
               std::span<const synth::Utterance* const> utts, double lambda,
               BatchResult& out) {
  out.grads = model.params().zero_gradients();
  for (const synth::Utterance* u : utts) {
    diff::Tape tape;
    auto vars = model.forward(tape, u->features);
    Var loss = total_loss_var(vars, u->chars, u->syls,
                              model.config().placement, lambda);
    tape.backward(loss);
    tape.accumulate_param_grads(out.grads);
    out.loss_sum += loss.value()(0, 0);
  }
}

// Mean gradient over the batch written into the store; returns mean loss.
double batch_gradients(encoder::EncoderModel& model,
                       const std::vector<const synth::Utterance*>& batch,
                       double lambda, int workers) {
  const std::size_t n = batch.size();
  const std::size_t shards =
      std::min<std::size_t>(n, static_cast<std::size_t>(std::max(1, workers)));
  std::vector<BatchResult> results(shards);
  std::span<const synth::Utterance* const> all(batch);
  auto shard_span = [&](std::size_t s) {
    const std::size_t begin = s * n / shards;
    const std::size_t end = (s + 1) * n / shards;
    return all.subspan(begin, end - begin);
  };
  if (shards == 1) {
    run_shard(model, all, lambda, results[0]);
  } else {
    std::vector<std::thread> threads;
    std::vector<std::exception_ptr> errors(shards);
    for (std::size_t s = 0; s < shards; ++s) {
      threads.emplace_back([&, s] {
        try {
          run_shard(model, shard_span(s), lambda, results[s]);
        } catch (...) {
          errors[s] = std::current_exception();
        }
      });
    }
    for (auto& t : threads) t.join();
    for (auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }
  ParamStore& ps = model.params();
  ps.zero_grad();
  double loss_sum = 0.0;
  for (const auto& r : results) {
    ps.add_gradients(r.grads);
    loss_sum += r.loss_sum;
  }
  const double inv = 1.0 / static_cast<double>(n);
  for (auto& p : ps.params()) p.grad *= inv;
  return loss_sum * inv;
}

void add_breakdown(LossBreakdown& acc, const LossBreakdown& x) {
  acc.total += x.total;
  acc.final += x.final;
  for (const auto& [n, v] : x.char_layers) acc.char_layers[n] += v;
  for (const auto& [n, v] : x.syl_layers) acc.syl_layers[n] += v;
}

void scale_breakdown(LossBreakdown& acc, double s) {
  acc.total *= s;
  acc.final *= s;
  for (auto& [n, v] : acc.char_layers) v *= s;
  for (auto& [n, v] : acc.syl_layers) v *= s;
}

}  // namespace

void TrainConfig::validate() const {
  if (!(lambda >= 0.0 && lambda < 1.0)) {
    throw ConfigError("lambda must lie in [0, 1)");
  }
  if (epochs < 0 || max_steps < 0 || (epochs == 0 && max_steps == 0)) {
    throw ConfigError("need epochs > 0 or max_steps > 0");
  }
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (warmup_steps < 1) throw ConfigError("warmup_steps must be >= 1");
  if (!(lr_factor > 0.0)) throw ConfigError("lr_factor must be > 0");
  if (average_k < 1) throw ConfigError("average_k must be >= 1");
  if (eval_every < 1) throw ConfigError("eval_every must be >= 1");
  if (workers < 1) throw ConfigError("workers must be >= 1");
}

LossWeights loss_weights(const encoder::PlacementConfig& pl, double lambda) {
  const std::size_t n_inter = pl.char_layers.size() + pl.syl_layers.size();
  if (n_inter == 0) return {1.0, 0.0};
  return {1.0 - lambda, lambda / static_cast<double>(n_inter)};
}

LossBreakdown total_loss(const encoder::ForwardOutput& out,
                         std::span<const TokenId> chars,
                         std::span<const TokenId> syls,
                         const encoder::PlacementConfig& pl, double lambda) {
  if (out.char_inters.size() != pl.char_layers.size() ||
      out.syl_inters.size() != pl.syl_layers.size()) {
    throw ContractError("total_loss: forward output does not match placement");
  }
  const LossWeights w = loss_weights(pl, lambda);
  LossBreakdown b;
  b.final = at_head("final character head", [&] {
    return ctc::ctc_loss(out.final, chars).loss;
  });
  b.total = w.final * b.final;
  for (const auto& [n, z] : out.char_inters) {
    const double l = at_head(char_site(n), [&] {
      return ctc::ctc_loss(z, chars).loss;
    });
    b.char_layers[n] = l;
    b.total += w.intermediate * l;
  }
  for (const auto& [n, r] : out.syl_inters) {
    const double l = at_head(syl_site(n), [&] {
      return ctc::ctc_loss(r, syls).loss;
    });
    b.syl_layers[n] = l;
    b.total += w.intermediate * l;
  }
  return b;
}

Var ctc_loss_var(Var log_probs, std::span<const TokenId> target) {
  ctc::CtcResult r = ctc::ctc_loss_log(log_probs.value(), target);
  Matrix value(1, 1);
  value(0, 0) = r.loss;
  const std::size_t ix = log_probs.id;
  return log_probs.tape->record(
      diff::Op::kCustom, std::move(value), {ix},
      [ix, g = std::move(r.grad)](diff::Tape& t, std::size_t self) {
        if (t.requires_grad(ix)) t.grad(ix) += g * t.grad(self)(0, 0);
      });
}

Var total_loss_var(const encoder::ForwardVars& out,
                   std::span<const TokenId> chars,
                   std::span<const TokenId> syls,
                   const encoder::PlacementConfig& pl, double lambda,
                   LossBreakdown* parts) {
  const LossWeights w = loss_weights(pl, lambda);
  LossBreakdown b;
  Var final = at_head("final character head", [&] {
    return ctc_loss_var(out.final.log_probs, chars);
  });
  b.final = final.value()(0, 0);
  Var total = w.final == 1.0 ? final : diff::scale(final, w.final);
  for (const auto& [n, h] : out.char_inters) {
    Var l = at_head(char_site(n), [&] { return ctc_loss_var(h.log_probs, chars); });
    b.char_layers[n] = l.value()(0, 0);
    if (w.intermediate != 0.0) {
      total = diff::add(total, diff::scale(l, w.intermediate));
    }
  }
  for (const auto& [n, h] : out.syl_inters) {
    Var l = at_head(syl_site(n), [&] { return ctc_loss_var(h.log_probs, syls); });
    b.syl_layers[n] = l.value()(0, 0);
    if (w.intermediate != 0.0) {
      total = diff::add(total, diff::scale(l, w.intermediate));
    }
  }
  b.total = total.value()(0, 0);
  if (parts) *parts = std::move(b);
  return total;
}

double noam_lr(long step, int d_model, int warmup, double factor) {
  if (step < 1) throw ContractError("noam_lr: step must be >= 1");
  if (d_model < 1 || warmup < 1) {
    throw ContractError("noam_lr: d_model and warmup must be >= 1");
  }
  const double s = static_cast<double>(step);
  const double w = static_cast<double>(warmup);
  return factor * std::pow(static_cast<double>(d_model), -0.5) *
         std::min(std::pow(s, -0.5), s * std::pow(w, -1.5));
}

void Adam::step(ParamStore& params, double lr) {
  for (const auto& p : params.params()) {
    if (!p.grad.allFinite()) {
      throw NumericError("non-finite gradient for parameter '" + p.name + "'");
    }
  }
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (auto& p : params.params()) {
    p.m = beta1_ * p.m + (1.0 - beta1_) * p.grad;
    p.v = beta2_ * p.v + (1.0 - beta2_) * p.grad.cwiseProduct(p.grad);
    p.value.array() -= lr * (p.m.array() / c1) /
                       ((p.v.array() / c2).sqrt() + eps_);
  }
}

double clip_grad_norm(ParamStore& params, double max_norm) {
  double sq = 0.0;
  for (const auto& p : params.params()) sq += p.grad.squaredNorm();
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const double s = max_norm / norm;
    for (auto& p : params.params()) p.grad *= s;
  }
  return norm;
}

ParamStore average_checkpoints(std::span<const ParamStore> stores) {
  if (stores.empty()) {
    throw ContractError("average_checkpoints: no checkpoints given");
  }
  for (const auto& s : stores) {
    if (!s.same_layout(stores[0])) {
      throw ContractError(
          "average_checkpoints: checkpoints have different parameters");
    }
  }
  ParamStore out;
  const double inv = 1.0 / static_cast<double>(stores.size());
  for (std::size_t i = 0; i < stores[0].size(); ++i) {
    Matrix acc = stores[0].at(i).value;
    for (std::size_t k = 1; k < stores.size(); ++k) acc += stores[k].at(i).value;
    out.add(stores[0].at(i).name, acc * inv);
  }
  return out;
}

std::string metrics_header(const encoder::PlacementConfig& pl) {
  std::string h = "step,lr,loss_total,loss_final";
  for (int n = 1; n <= pl.n_layers; ++n) {
    if (pl.char_layers.count(n)) h += ",loss_layer_" + std::to_string(n) + "_char";
    if (pl.syl_layers.count(n)) h += ",loss_layer_" + std::to_string(n) + "_syl";
  }
  h += ",cer_valid";
  for (int n : pl.syl_layers) h += ",ser_valid_" + std::to_string(n);
  return h;
}

std::string metrics_line(const MetricsRow& row,
                         const encoder::PlacementConfig& pl) {
  std::string s = std::to_string(row.step) + "," + fmt_num(row.lr) + "," +
                  fmt_num(row.train_loss.total) + "," +
                  fmt_num(row.train_loss.final);
  for (int n = 1; n <= pl.n_layers; ++n) {
    if (pl.char_layers.count(n)) {
      s += "," + fmt_num(row.train_loss.char_layers.at(n));
    }
    if (pl.syl_layers.count(n)) {
      s += "," + fmt_num(row.train_loss.syl_layers.at(n));
    }
  }
  s += "," + fmt_num(row.cer_valid);
  for (int n : pl.syl_layers) s += "," + fmt_num(row.ser_valid.at(n));
  return s;
}

void write_metrics_csv(std::ostream& os, const std::vector<MetricsRow>& rows,
                       const encoder::PlacementConfig& pl) {
  os << metrics_header(pl) << '\n';
  for (const auto& r : rows) os << metrics_line(r, pl) << '\n';
}

EvalReport evaluate(const encoder::EncoderModel& model,
                    std::span<const synth::Utterance> data, double lambda) {
  const auto& pl = model.config().placement;
  EvalReport rep;
  if (data.empty()) return rep;
  ErrorTally final_tally;
  std::map<int, ErrorTally> char_tally, syl_tally;
  for (const auto& u : data) {
    encoder::ForwardOutput out = encoder::encoder_forward(u.features, model);
    add_breakdown(rep.loss, total_loss(out, u.chars, u.syls, pl, lambda));
    final_tally.add(u.chars, ctc::greedy_decode(out.final));
    for (const auto& [n, z] : out.char_inters) {
      char_tally[n].add(u.chars, ctc::greedy_decode(z));
    }
    for (const auto& [n, r] : out.syl_inters) {
      syl_tally[n].add(u.syls, ctc::greedy_decode(r));
    }
  }
  scale_breakdown(rep.loss, 1.0 / static_cast<double>(data.size()));
  rep.cer = final_tally.rate();
  for (const auto& [n, t] : char_tally) rep.cer_layers[n] = t.rate();
  for (const auto& [n, t] : syl_tally) rep.ser_layers[n] = t.rate();
  return rep;
}

void check_feasible(std::span<const synth::Utterance> data) {
  for (const auto& u : data) {
    const auto frames = static_cast<std::size_t>(u.features.rows());
    if (!ctc::feasible(frames, u.chars) || !ctc::feasible(frames, u.syls)) {
      throw DataError("utterance '" + u.id + "' has targets longer than its " +
                      std::to_string(frames) + " frames allow");
    }
    if (u.chars.empty()) {
      throw DataError("utterance '" + u.id + "' has no character targets");
    }
  }
}

TrainResult train(std::span<const synth::Utterance> train_set,
                  std::span<const synth::Utterance> valid_set,
                  const encoder::ModelConfig& model_cfg,
                  const TrainConfig& cfg) {
  cfg.validate();
  model_cfg.validate();
  if (train_set.empty()) throw DataError("training set is empty");
  check_feasible(train_set);
  check_feasible(valid_set);
  if (valid_set.empty()) valid_set = train_set;
  if (!cfg.out_dir.empty() && !std::filesystem::is_directory(cfg.out_dir)) {
    throw DataError("output directory does not exist: " + cfg.out_dir);
  }

  const auto& pl = model_cfg.placement;
  encoder::EncoderModel model(model_cfg, synth::mix_seed(cfg.seed, 0x1417));
  Adam adam(cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
  std::mt19937_64 rng(synth::mix_seed(cfg.seed, 0x5eed));

  const std::size_t n = train_set.size();
  const long batches_per_epoch =
      static_cast<long>((n + static_cast<std::size_t>(cfg.batch_size) - 1) /
                        static_cast<std::size_t>(cfg.batch_size));
  long total_steps = cfg.max_steps;
  if (cfg.epochs > 0) {
    const long by_epochs = batches_per_epoch * cfg.epochs;
    total_steps = total_steps > 0 ? std::min(total_steps, by_epochs) : by_epochs;
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = n;

  TrainResult result{model, {}, {}, model};
  std::vector<Checkpoint> candidates;
  ParamStore last_good = model.params();

  auto checkpoint_header = [&](long step, double valid_loss) {
    Header h = encoder::to_header(model_cfg);
    for (const auto& [k, v] : cfg.extra_header) h[k] = v;
    h["step"] = std::to_string(step);
    h["valid_loss"] = fmt_num(valid_loss);
    h["lambda"] = fmt_num(cfg.lambda);
    return h;
  };

  // Saves the last parameters that evaluated cleanly and aborts.
  auto diverged = [&](long step, const std::string& why) {
    if (!cfg.out_dir.empty()) {
      save_container(cfg.out_dir + "/last_good.bin",
                     checkpoint_header(step, 0.0), last_good);
    }
    throw TrainingDiverged("training diverged at step " +
                               std::to_string(step) + ": " + why,
                           step, last_good);
  };

  auto eval_point = [&](long step) {
    MetricsRow row;
    row.step = step;
    row.lr = noam_lr(std::max(1L, step), model_cfg.d_model, cfg.warmup_steps,
                     cfg.lr_factor);
    EvalReport tr, va;
    try {
      tr = evaluate(model, train_set, cfg.lambda);
      va = evaluate(model, valid_set, cfg.lambda);
    } catch (const NumericError& e) {
      diverged(step, e.what());
    }
    row.train_loss = tr.loss;
    row.valid_loss = va.loss.total;
    row.cer_valid = va.cer;
    row.ser_valid = va.ser_layers;
    if (!std::isfinite(row.train_loss.total) || !std::isfinite(row.valid_loss)) {
      diverged(step, "evaluation loss is not finite");
    }
    last_good = model.params();
    result.metrics.push_back(row);
    candidates.push_back({step, row.valid_loss, model.params()});
    std::stable_sort(candidates.begin(), candidates.end(),
                     [](const Checkpoint& a, const Checkpoint& b) {
                       return a.valid_loss < b.valid_loss;
                     });
    if (candidates.size() > static_cast<std::size_t>(cfg.average_k)) {
      candidates.resize(static_cast<std::size_t>(cfg.average_k));
    }
    if (!cfg.out_dir.empty()) {
      save_container(cfg.out_dir + "/ckpt_" + std::to_string(step) + ".bin",
                     checkpoint_header(step, row.valid_loss), model.params());
    }
  };

  eval_point(0);
  for (long step = 1; step <= total_steps; ++step) {
    std::vector<const synth::Utterance*> batch;
    if (cursor >= n) {
      std::shuffle(order.begin(), order.end(), rng);
      cursor = 0;
    }
    while (batch.size() < static_cast<std::size_t>(cfg.batch_size) &&
           cursor < n) {
      batch.push_back(&train_set[order[cursor++]]);
    }

    try {
      const double loss = batch_gradients(model, batch, cfg.lambda, cfg.workers);
      if (!std::isfinite(loss)) {
        throw NumericError("non-finite batch loss");
      }
      clip_grad_norm(model.params(), cfg.clip_norm);
      adam.step(model.params(),
                noam_lr(step, model_cfg.d_model, cfg.warmup_steps,
                        cfg.lr_factor));
    } catch (const NumericError& e) {
      diverged(step, e.what());
    }

    if (step % cfg.eval_every == 0 || step == total_steps) eval_point(step);
  }

  std::vector<ParamStore> best;
  best.reserve(candidates.size());
  for (const auto& c : candidates) best.push_back(c.params);
  result.model = encoder::EncoderModel(model_cfg, average_checkpoints(best));
  result.last = model;
  result.best = std::move(candidates);

  if (!cfg.out_dir.empty()) {
    Header h = checkpoint_header(total_steps, result.best.front().valid_loss);
    std::string steps;
    for (const auto& c : result.best) {
      if (!steps.empty()) steps += ',';
      steps += std::to_string(c.step);
    }
    h["averaged_steps"] = steps;
    save_container(cfg.out_dir + "/final.bin", h, result.model.params());
    std::ofstream os(cfg.out_dir + "/metrics.csv", std::ios::binary);
    if (!os) throw DataError("cannot write " + cfg.out_dir + "/metrics.csv");
    write_metrics_csv(os, result.metrics, pl);
  }
  return result;
}

}  // namespace altcond::train
