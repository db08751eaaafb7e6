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

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"

#include "altcond/ctc.hpp"
#include "altcond/encoder.hpp"
#include "altcond/error.hpp"
#include "altcond/synthdata.hpp"
#include "altcond/trainer.hpp"
#include "test_util.hpp"

namespace altcond::train {
namespace {

using encoder::ModelConfig;
using encoder::Strategy;
using testing::random_matrix;

struct Toy {
  synth::ToyLanguage lang;
  synth::Dataset data;
};

Toy toy(int n_train, int n_valid, std::uint64_t seed = 3) {
  Toy t{synth::make_language(seed, 6, 14, 2, 8), {}};
  synth::DatasetSpec spec;
  spec.n_train = n_train;
  spec.n_valid = n_valid;
  spec.min_len = 2;
  spec.max_len = 3;
  spec.seed = seed;
  t.data = synth::generate_dataset(t.lang, spec);
  return t;
}

ModelConfig model_for(const synth::ToyLanguage& lang, Strategy s, int n_layers,
                      int d_model) {
  ModelConfig cfg;
  cfg.input_dim = lang.feature_dim();
  cfg.d_model = d_model;
  cfg.n_heads = 4;
  cfg.ff_dim = 2 * d_model;
  cfg.conv_kernel = 3;
  cfg.char_vocab = static_cast<int>(lang.chars.size());
  cfg.syl_vocab = static_cast<int>(lang.syllables.size());
  cfg.placement = encoder::preset(s, n_layers);
  return cfg;
}

std::string temp_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("altcond_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir.string();
}

std::string slurp(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

TEST_SUITE("trainer") {

TEST_CASE("loss weights") {
  const auto alt = encoder::preset(Strategy::kAlternate, 18);
  const LossWeights w = loss_weights(alt, 0.5);
  CHECK(w.final == 0.5);
  CHECK(w.intermediate == doctest::Approx(0.1).epsilon(1e-15));
  CHECK(w.final + 5 * w.intermediate == doctest::Approx(1.0).epsilon(1e-15));

  const LossWeights sc = loss_weights(encoder::preset(Strategy::kSelfCond, 18), 0.5);
  CHECK(sc.intermediate == doctest::Approx(0.1).epsilon(1e-15));

  const LossWeights base = loss_weights(encoder::preset(Strategy::kBaseline, 18), 0.5);
  CHECK(base.final == 1.0);
  CHECK(base.intermediate == 0.0);

  for (double lambda : {0.0, 0.1, 0.3, 0.7, 0.9}) {
    for (Strategy s : {Strategy::kParallel, Strategy::kHierarchical,
                       Strategy::kMultitask, Strategy::kInterCtc}) {
      const auto pl = encoder::preset(s, 18);
      const LossWeights lw = loss_weights(pl, lambda);
      const double terms =
          static_cast<double>(pl.char_layers.size() + pl.syl_layers.size());
      CHECK(lw.final + terms * lw.intermediate ==
            doctest::Approx(1.0).epsilon(1e-14));
    }
  }
}

TEST_CASE("total loss combines the heads") {
  const Toy t = toy(1, 1);
  const ModelConfig cfg = model_for(t.lang, Strategy::kAlternate, 6, 16);
  const encoder::EncoderModel model(cfg, 1);
  const synth::Utterance& u = t.data.train[0];
  const auto out = encoder::encoder_forward(u.features, model);

  const LossBreakdown zero = total_loss(out, u.chars, u.syls, cfg.placement, 0.0);
  CHECK(zero.total == ctc::ctc_loss(out.final, u.chars).loss);

  const LossBreakdown half = total_loss(out, u.chars, u.syls, cfg.placement, 0.5);
  double manual = 0.5 * ctc::ctc_loss(out.final, u.chars).loss;
  for (const auto& [n, z] : out.char_inters) {
    manual += 0.1 * ctc::ctc_loss(z, u.chars).loss;
    CHECK(half.char_layers.at(n) == ctc::ctc_loss(z, u.chars).loss);
  }
  for (const auto& [n, r] : out.syl_inters) {
    manual += 0.1 * ctc::ctc_loss(r, u.syls).loss;
  }
  CHECK(half.total == doctest::Approx(manual).epsilon(1e-12));

  // The differentiable version agrees and lambda = 0 matches exactly too.
  for (double lambda : {0.0, 0.5}) {
    diff::Tape tape;
    const auto fv = model.forward(tape, u.features);
    LossBreakdown parts;
    const diff::Var v = total_loss_var(fv, u.chars, u.syls, cfg.placement,
                                       lambda, &parts);
    CHECK(v.value()(0, 0) ==
          doctest::Approx(lambda == 0.0 ? zero.total : half.total).epsilon(1e-12));
    if (lambda == 0.0) {
      CHECK(v.value()(0, 0) ==
            ctc_loss_var(fv.final.log_probs, u.chars).value()(0, 0));
    }
  }
}

TEST_CASE("infeasible targets name the layer") {
  const Toy t = toy(1, 1);
  const ModelConfig cfg = model_for(t.lang, Strategy::kAlternate, 6, 16);
  const encoder::EncoderModel model(cfg, 1);
  const Matrix x = Matrix::Zero(2, cfg.input_dim);
  const auto out = encoder::encoder_forward(x, model);
  try {
    total_loss(out, LabelSeq{1}, LabelSeq{1, 1, 1}, cfg.placement, 0.5);
    FAIL("expected infeasibility");
  } catch (const InfeasibleAlignmentError& e) {
    CHECK(std::string(e.what()).find("layer 1") != std::string::npos);
  }
}

TEST_CASE("noam schedule") {
  CHECK(noam_lr(25000, 256, 25000, 5.0) ==
        doctest::Approx(5.0 / 16.0 / std::sqrt(25000.0)).epsilon(1e-12));
  CHECK(noam_lr(25000, 256, 25000, 5.0) == doctest::Approx(1.9764e-3).epsilon(1e-4));
  CHECK(noam_lr(1, 256, 25000, 5.0) ==
        doctest::Approx(5.0 / 16.0 * std::pow(25000.0, -1.5)).epsilon(1e-12));
  CHECK(noam_lr(24999, 256, 25000, 5.0) < noam_lr(25000, 256, 25000, 5.0));
  CHECK(noam_lr(25001, 256, 25000, 5.0) < noam_lr(25000, 256, 25000, 5.0));
  // Both branches meet at the peak.
  const double peak = noam_lr(400, 64, 400, 2.0);
  CHECK(2.0 / 8.0 * 400 * std::pow(400.0, -1.5) == doctest::Approx(peak).epsilon(1e-14));
  CHECK(2.0 / 8.0 / std::sqrt(400.0) == doctest::Approx(peak).epsilon(1e-14));
  CHECK_THROWS_AS(noam_lr(0, 256, 25000, 5.0), ContractError);
}

TEST_CASE("adam") {
  SUBCASE("first step moves by lr against the gradient sign") {
    ParamStore s;
    s.add("w", (Matrix(1, 3) << 1.0, 1.0, 1.0).finished());
    s.get("w").grad << 0.3, -2.0, 1e-3;
    Adam adam;
    adam.step(s, 0.01);
    const Matrix& w = s.get("w").value;
    CHECK(w(0, 0) == doctest::Approx(0.99).epsilon(1e-9));
    CHECK(w(0, 1) == doctest::Approx(1.01).epsilon(1e-9));
    CHECK(w(0, 2) == doctest::Approx(0.99).epsilon(1e-6));
  }
  SUBCASE("zero gradient leaves parameters unchanged") {
    ParamStore s;
    s.add("w", Matrix::Constant(2, 2, 0.7));
    Adam adam;
    for (int i = 0; i < 5; ++i) adam.step(s, 0.1);
    CHECK(s.get("w").value == Matrix::Constant(2, 2, 0.7));
  }
  SUBCASE("minimises a quadratic") {
    ParamStore s;
    s.add("x", Matrix::Constant(1, 1, 1.0));
    Adam adam;
    for (int i = 0; i < 100; ++i) {
      s.get("x").grad = 2.0 * s.get("x").value;
      adam.step(s, 0.1);
    }
    CHECK(std::abs(s.get("x").value(0, 0)) < 0.1);
  }
  SUBCASE("non-finite gradients are rejected by name") {
    ParamStore s;
    s.add("ok", Matrix::Zero(1, 1));
    s.add("bad", Matrix::Zero(1, 1));
    s.get("bad").grad(0, 0) = std::nan("");
    Adam adam;
    try {
      adam.step(s, 0.1);
      FAIL("expected a numeric error");
    } catch (const NumericError& e) {
      CHECK(std::string(e.what()).find("bad") != std::string::npos);
    }
  }
}

TEST_CASE("gradient clipping") {
  ParamStore s;
  s.add("a", Matrix::Zero(1, 2));
  s.add("b", Matrix::Zero(1, 1));
  s.get("a").grad << 3.0, 4.0;
  s.get("b").grad << 12.0;
  const double norm = clip_grad_norm(s, 5.0);
  CHECK(norm == doctest::Approx(13.0));
  CHECK(s.get("a").grad(0, 0) == doctest::Approx(15.0 / 13.0));
  CHECK(s.get("b").grad(0, 0) == doctest::Approx(60.0 / 13.0));
  CHECK(clip_grad_norm(s, 5.0) == doctest::Approx(5.0));
  CHECK(s.get("b").grad(0, 0) == doctest::Approx(60.0 / 13.0));
}

TEST_CASE("checkpoint averaging") {
  {
    ParamStore a, b;
    a.add("w", Matrix::Constant(1, 1, 1.0));
    b.add("w", Matrix::Constant(1, 1, 3.0));
    const std::vector<ParamStore> both{a, b};
    CHECK(average_checkpoints(both).get("w").value(0, 0) == 2.0);
  }
  std::mt19937_64 rng(4);
  std::vector<ParamStore> stores;
  for (int i = 0; i < 10; ++i) {
    ParamStore s;
    s.add("w", random_matrix(3, 4, rng));
    s.add("b", random_matrix(1, 4, rng));
    stores.push_back(std::move(s));
  }
  const ParamStore avg = average_checkpoints(stores);
  for (const char* name : {"w", "b"}) {
    const Matrix& got = avg.get(name).value;
    for (Eigen::Index e = 0; e < got.size(); ++e) {
      double naive = 0.0;
      for (const auto& s : stores) naive += s.get(name).value.data()[e];
      naive /= 10.0;
      CHECK(std::abs(got.data()[e] - naive) < 1e-12);
    }
  }
  const std::vector<ParamStore> same(3, stores[0]);
  CHECK(average_checkpoints(same).get("w").value.isApprox(stores[0].get("w").value, 1e-15));

  ParamStore other;
  other.add("v", Matrix::Zero(3, 4));
  other.add("b", Matrix::Zero(1, 4));
  const std::vector<ParamStore> mixed{stores[0], other};
  CHECK_THROWS_AS(average_checkpoints(mixed), ContractError);
  CHECK_THROWS_AS(average_checkpoints(std::span<const ParamStore>{}), ContractError);
}

TEST_CASE("the feedback path carries gradient") {
  const Toy t = toy(1, 1);
  const ModelConfig cfg = model_for(t.lang, Strategy::kAlternate, 6, 16);
  encoder::EncoderModel model(cfg, 5);
  const synth::Utterance& u = t.data.train[0];
  diff::Tape tape;
  const auto fv = model.forward(tape, u.features);
  model.params().zero_grad();
  diff::backward(total_loss_var(fv, u.chars, u.syls, cfg.placement, 0.5),
                 model.params());
  CHECK(model.params().get("char_cond.w").grad.norm() > 0.0);
  CHECK(model.params().get("syl_cond.w").grad.norm() > 0.0);
}

TEST_CASE("metrics csv header") {
  CHECK(metrics_header(encoder::preset(Strategy::kBaseline, 6)) ==
        "step,lr,loss_total,loss_final,cer_valid");
  CHECK(metrics_header(encoder::preset(Strategy::kMultitask, 6)) ==
        "step,lr,loss_total,loss_final,loss_layer_5_syl,cer_valid,ser_valid_5");
  CHECK(metrics_header(encoder::preset(Strategy::kAlternate, 6)) ==
        "step,lr,loss_total,loss_final,loss_layer_1_syl,loss_layer_2_char,"
        "loss_layer_3_syl,loss_layer_4_char,loss_layer_5_syl,cer_valid,"
        "ser_valid_1,ser_valid_3,ser_valid_5");
  CHECK(metrics_header(encoder::preset(Strategy::kParallel, 6)) ==
        "step,lr,loss_total,loss_final,loss_layer_2_char,loss_layer_2_syl,"
        "loss_layer_4_char,loss_layer_4_syl,loss_layer_6_syl,cer_valid,"
        "ser_valid_2,ser_valid_4,ser_valid_6");
}

TEST_CASE("configuration validation") {
  TrainConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  cfg.lambda = 1.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg.lambda = 0.0;
  CHECK_NOTHROW(cfg.validate());
  cfg.average_k = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg.average_k = 1;
  cfg.max_steps = 0;
  cfg.epochs = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("a single utterance is memorised") {
  const Toy t = toy(1, 1);
  const ModelConfig cfg = model_for(t.lang, Strategy::kAlternate, 6, 64);
  TrainConfig tc;
  tc.max_steps = 200;
  tc.batch_size = 1;
  tc.warmup_steps = 50;
  tc.lr_factor = 1.0;
  tc.eval_every = 50;
  const TrainResult r = train(t.data.train, {}, cfg, tc);
  const EvalReport rep = evaluate(r.model, t.data.train, tc.lambda);
  CHECK(rep.cer == 0.0);
  const auto out = encoder::encoder_forward(t.data.train[0].features, r.model);
  CHECK(ctc::greedy_decode(out.final) == t.data.train[0].chars);
}

TEST_CASE("training is deterministic and lowers every loss") {
  const Toy t = toy(8, 3);
  const ModelConfig cfg = model_for(t.lang, Strategy::kAlternate, 6, 16);
  TrainConfig tc;
  tc.max_steps = 120;
  tc.batch_size = 2;
  tc.warmup_steps = 30;
  tc.lr_factor = 1.0;
  tc.eval_every = 40;
  tc.average_k = 2;
  const std::string dir_a = temp_dir("det_a");
  const std::string dir_b = temp_dir("det_b");
  tc.out_dir = dir_a;
  const TrainResult a = train(t.data.train, t.data.valid, cfg, tc);
  tc.out_dir = dir_b;
  const TrainResult b = train(t.data.train, t.data.valid, cfg, tc);

  CHECK(slurp(dir_a + "/metrics.csv") == slurp(dir_b + "/metrics.csv"));
  CHECK(slurp(dir_a + "/final.bin") == slurp(dir_b + "/final.bin"));
  CHECK(b.metrics.size() == a.metrics.size());
  REQUIRE(a.metrics.size() == 4);
  CHECK(a.best.size() == 2);

  const auto& first = a.metrics.front().train_loss;
  const auto& last = a.metrics.back().train_loss;
  CHECK(last.final < first.final);
  CHECK(first.char_layers.size() + first.syl_layers.size() == 5);
  for (const auto& [n, v] : first.char_layers) {
    CAPTURE(n);
    CHECK(last.char_layers.at(n) < v);
  }
  for (const auto& [n, v] : first.syl_layers) {
    CAPTURE(n);
    CHECK(last.syl_layers.at(n) < v);
  }
  CHECK(std::filesystem::exists(dir_a + "/ckpt_120.bin"));
}

TEST_CASE("threaded batches match the single-threaded run closely") {
  const Toy t = toy(8, 2);
  const ModelConfig cfg = model_for(t.lang, Strategy::kParallel, 3, 16);
  TrainConfig tc;
  tc.max_steps = 20;
  tc.batch_size = 4;
  tc.warmup_steps = 10;
  tc.eval_every = 20;
  tc.average_k = 1;
  const TrainResult one = train(t.data.train, t.data.valid, cfg, tc);
  tc.workers = 3;
  const TrainResult three = train(t.data.train, t.data.valid, cfg, tc);
  for (std::size_t i = 0; i < one.model.params().size(); ++i) {
    const Matrix& p = one.model.params().at(i).value;
    const Matrix& q = three.model.params().at(i).value;
    CHECK((p - q).cwiseAbs().maxCoeff() < 1e-8);
  }
}

TEST_CASE("divergence aborts with the last good parameters") {
  Toy t = toy(2, 1);
  t.data.train[1].features(0, 0) = std::numeric_limits<double>::infinity();
  const ModelConfig cfg = model_for(t.lang, Strategy::kBaseline, 2, 16);
  TrainConfig tc;
  tc.max_steps = 10;
  tc.out_dir = temp_dir("diverge");
  try {
    train(t.data.train, {}, cfg, tc);
    FAIL("expected divergence");
  } catch (const TrainingDiverged& e) {
    CHECK(e.step() == 0);
    CHECK(e.last_good().same_layout(encoder::init_params(cfg, 0)));
  }
  CHECK(std::filesystem::exists(tc.out_dir + "/last_good.bin"));
}

TEST_CASE("infeasible or empty data is rejected before training") {
  Toy t = toy(2, 1);
  const ModelConfig cfg = model_for(t.lang, Strategy::kBaseline, 2, 16);
  TrainConfig tc;
  CHECK_THROWS_AS(train({}, {}, cfg, tc), DataError);
  t.data.train[0].features.conservativeResize(1, Eigen::NoChange);
  CHECK_THROWS_AS(train(t.data.train, {}, cfg, tc), DataError);
}

}  // TEST_SUITE
}  // namespace
}  // namespace altcond::train
