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

#include "cli.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"

#include "altcond/ctc.hpp"
#include "altcond/encoder.hpp"
#include "altcond/error.hpp"
#include "altcond/labels.hpp"
#include "altcond/param_store.hpp"
#include "altcond/synthdata.hpp"
#include "altcond/trainer.hpp"
#include "run_config.hpp"

namespace altcond::cli {
namespace {

using json = nlohmann::ordered_json;

struct Command {
  std::string name;
  std::string help;
  std::vector<KeySpec> schema;
  std::function<void(const RunConfig&, std::ostream&)> action;
};

std::string fmt_rate(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

std::string join_tokens(const Vocabulary& v) {
  std::string out;
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (i > 1) out += ' ';
    out += v.tokens()[i];
  }
  return out;
}

Vocabulary split_tokens(const std::string& s) {
  std::istringstream is(s);
  std::vector<std::string> tokens;
  std::string tok;
  while (is >> tok) tokens.push_back(tok);
  return Vocabulary(tokens);
}

std::set<int> parse_layer_list(const std::string& text) {
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

std::string layer_list(const std::set<int>& s) {
  std::string out;
  for (int v : s) {
    if (!out.empty()) out += ',';
    out += std::to_string(v);
  }
  return out;
}

void require_dir(const std::string& dir) {
  if (!std::filesystem::is_directory(dir)) {
    throw DataError("directory does not exist: " + dir);
  }
}

// gen-data ------------------------------------------------------------------

std::vector<KeySpec> gen_data_schema() {
  return {
      {"out-dir", "", "existing directory for the dataset files", true},
      {"seed", "1", "random seed"},
      {"n-syllables", "20", "syllable inventory size"},
      {"n-chars", "60", "character inventory size"},
      {"max-pron", "2", "maximum pronunciations per character"},
      {"feature-dim", "16", "feature dimensions per frame"},
      {"n-train", "50", "training utterances"},
      {"n-valid", "20", "validation utterances"},
      {"min-len", "2", "minimum characters per utterance"},
      {"max-len", "5", "maximum characters per utterance"},
      {"min-frames", "2", "minimum frames per syllable"},
      {"max-frames", "4", "maximum frames per syllable"},
      {"noise", "0.1", "Gaussian feature noise sigma"},
      {"homophones-only", "false", "draw only homophone characters", false,
       true},
  };
}

void cmd_gen_data(const RunConfig& c, std::ostream& out) {
  const std::string dir = c.str("out-dir");
  require_dir(dir);
  synth::ToyLanguage lang = synth::make_language(
      c.u64("seed"), static_cast<int>(c.integer("n-syllables")),
      static_cast<int>(c.integer("n-chars")),
      static_cast<int>(c.integer("max-pron")),
      static_cast<int>(c.integer("feature-dim")));
  synth::DatasetSpec spec;
  spec.n_train = static_cast<int>(c.integer("n-train"));
  spec.n_valid = static_cast<int>(c.integer("n-valid"));
  spec.min_len = static_cast<int>(c.integer("min-len"));
  spec.max_len = static_cast<int>(c.integer("max-len"));
  spec.seed = c.u64("seed");
  spec.homophones_only = c.flag("homophones-only");
  spec.synth.min_frames = static_cast<int>(c.integer("min-frames"));
  spec.synth.max_frames = static_cast<int>(c.integer("max-frames"));
  spec.synth.noise = c.real("noise");
  synth::Dataset data = synth::generate_dataset(lang, spec);
  synth::write_dataset_files(dir, lang, data);
  out << "wrote " << data.train.size() << " train and " << data.valid.size()
      << " valid utterances to " << dir << '\n';
}

// train ---------------------------------------------------------------------

std::vector<KeySpec> train_schema() {
  return {
      {"data-dir", "", "directory written by gen-data", true},
      {"out-dir", "", "existing directory for checkpoints and metrics", true},
      {"strategy", "alternate",
       "baseline|multitask|interctc|selfcond|parallel|hierarchical|alternate|"
       "custom"},
      {"char-layers", "", "custom strategy: character layers, e.g. 2,4"},
      {"syl-layers", "", "custom strategy: syllable layers, e.g. 1,3,5"},
      {"condition", "true", "custom strategy: feed predictions back", false,
       true},
      {"n-layers", "6", "encoder blocks"},
      {"d-model", "64", "encoder dimension"},
      {"n-heads", "4", "attention heads"},
      {"ff-dim", "128", "feed-forward dimension"},
      {"conv-kernel", "7", "depthwise convolution kernel"},
      {"positional-encoding", "true", "add sinusoidal positions", false, true},
      {"cond-layer-norm", "false", "layer-normalise conditioned sums", false,
       true},
      {"lambda", "0.5", "intermediate loss weight"},
      {"epochs", "0", "epoch limit (0: none)"},
      {"max-steps", "3000", "step limit (0: none)"},
      {"batch-size", "4", "utterances per step"},
      {"warmup-steps", "400", "Noam warmup steps"},
      {"lr-factor", "2.0", "Noam learning-rate factor"},
      {"seed", "1", "random seed"},
      {"average-k", "5", "best checkpoints to average"},
      {"eval-every", "100", "steps between evaluations"},
      {"clip-norm", "5.0", "global gradient norm limit"},
      {"workers", "1", "threads per batch"},
  };
}

encoder::PlacementConfig placement_from(const RunConfig& c) {
  const int n_layers = static_cast<int>(c.integer("n-layers"));
  const encoder::Strategy s = encoder::parse_strategy(c.str("strategy"));
  if (s != encoder::Strategy::kCustom) {
    if (c.has("char-layers") || c.has("syl-layers")) {
      throw ConfigError("char-layers/syl-layers require strategy=custom");
    }
    return encoder::preset(s, n_layers);
  }
  encoder::PlacementConfig p;
  p.n_layers = n_layers;
  p.char_layers = parse_layer_list(c.str("char-layers"));
  p.syl_layers = parse_layer_list(c.str("syl-layers"));
  p.condition = c.flag("condition");
  p.strategy = s;
  try {
    p.validate();
  } catch (const ContractError& e) {
    throw ConfigError(e.what());
  }
  return p;
}

void cmd_train(const RunConfig& c, std::ostream& out) {
  const std::string data_dir = c.str("data-dir");
  const std::string out_dir = c.str("out-dir");
  require_dir(data_dir);
  require_dir(out_dir);
  const Vocabulary chars = Vocabulary::load(data_dir + "/chars.vocab");
  const Vocabulary syls = Vocabulary::load(data_dir + "/syllables.vocab");
  const auto train_set =
      synth::load_jsonl(data_dir + "/train.jsonl", chars, syls);
  const auto valid_set =
      synth::load_jsonl(data_dir + "/valid.jsonl", chars, syls);
  if (train_set.empty()) throw DataError("training set is empty");

  encoder::ModelConfig mc;
  mc.input_dim = static_cast<int>(train_set.front().features.cols());
  mc.d_model = static_cast<int>(c.integer("d-model"));
  mc.n_heads = static_cast<int>(c.integer("n-heads"));
  mc.ff_dim = static_cast<int>(c.integer("ff-dim"));
  mc.conv_kernel = static_cast<int>(c.integer("conv-kernel"));
  mc.char_vocab = static_cast<int>(chars.size());
  mc.syl_vocab = static_cast<int>(syls.size());
  mc.positional_encoding = c.flag("positional-encoding");
  mc.cond_layer_norm = c.flag("cond-layer-norm");
  mc.placement = placement_from(c);
  try {
    mc.validate();
  } catch (const ContractError& e) {
    throw ConfigError(e.what());
  }

  train::TrainConfig tc;
  tc.lambda = c.real("lambda");
  tc.epochs = static_cast<int>(c.integer("epochs"));
  tc.max_steps = static_cast<int>(c.integer("max-steps"));
  tc.batch_size = static_cast<int>(c.integer("batch-size"));
  tc.warmup_steps = static_cast<int>(c.integer("warmup-steps"));
  tc.lr_factor = c.real("lr-factor");
  tc.seed = c.u64("seed");
  tc.average_k = static_cast<int>(c.integer("average-k"));
  tc.eval_every = static_cast<int>(c.integer("eval-every"));
  tc.clip_norm = c.real("clip-norm");
  tc.workers = static_cast<int>(c.integer("workers"));
  tc.out_dir = out_dir;
  tc.extra_header["char_vocab"] = join_tokens(chars);
  tc.extra_header["syl_vocab"] = join_tokens(syls);

  out << "strategy=" << encoder::strategy_name(mc.placement.strategy)
      << " char_layers={" << layer_list(mc.placement.char_layers)
      << "} syl_layers={" << layer_list(mc.placement.syl_layers)
      << "} condition=" << (mc.placement.condition ? "on" : "off") << '\n';
  train::TrainResult r = train::train(train_set, valid_set, mc, tc);
  const train::EvalReport rep =
      train::evaluate(r.model, valid_set.empty() ? train_set : valid_set,
                      tc.lambda);
  out << "final valid CER " << fmt_rate(rep.cer) << '\n';
  for (const auto& [n, v] : rep.ser_layers) {
    out << "final valid SER layer " << n << ' ' << fmt_rate(v) << '\n';
  }
  out << "wrote " << out_dir << "/final.bin and " << out_dir
      << "/metrics.csv\n";
}

// decode --------------------------------------------------------------------

std::vector<KeySpec> decode_schema() {
  return {
      {"model", "", "checkpoint written by train", true},
      {"data", "", "JSON-lines dataset to decode", true},
      {"out", "", "hypothesis JSON-lines output", true},
      {"dump-intermediate", "false", "include every head's hypothesis", false,
       true},
  };
}

void cmd_decode(const RunConfig& c, std::ostream& out) {
  Header h;
  ParamStore params = load_container(c.str("model"), &h);
  encoder::ModelConfig mc = encoder::model_config_from_header(h);
  if (!h.count("char_vocab") || !h.count("syl_vocab")) {
    throw DataError("checkpoint lacks vocabularies");
  }
  const Vocabulary chars = split_tokens(h.at("char_vocab"));
  const Vocabulary syls = split_tokens(h.at("syl_vocab"));
  if (static_cast<int>(chars.size()) != mc.char_vocab ||
      static_cast<int>(syls.size()) != mc.syl_vocab) {
    throw DataError("checkpoint vocabularies do not match its model sizes");
  }
  encoder::EncoderModel model(mc, std::move(params));
  const auto data = synth::load_jsonl(c.str("data"), chars, syls);
  std::ofstream os(c.str("out"), std::ios::binary);
  if (!os) throw DataError("cannot write " + c.str("out"));
  const bool dump = c.flag("dump-intermediate");
  const auto& pl = mc.placement;
  for (const auto& u : data) {
    if (u.features.cols() != mc.input_dim) {
      throw DataError("utterance '" + u.id + "' has " +
                      std::to_string(u.features.cols()) +
                      " feature dims, model expects " +
                      std::to_string(mc.input_dim));
    }
    const encoder::ForwardOutput fo = encoder::encoder_forward(u.features, model);
    json rec;
    rec["id"] = u.id;
    rec["chars"] = chars.decode(ctc::greedy_decode(fo.final));
    if (dump) {
      json layers = json::array();
      for (int n = 1; n <= pl.n_layers; ++n) {
        const bool is_char = fo.char_inters.count(n) || n == pl.n_layers;
        const bool is_syl = fo.syl_inters.count(n) != 0;
        if (!is_char && !is_syl) continue;
        json block;
        block["layer"] = n;
        if (n == pl.n_layers) {
          block["char"] = chars.decode(ctc::greedy_decode(fo.final));
        } else if (is_char) {
          block["char"] = chars.decode(ctc::greedy_decode(fo.char_inters.at(n)));
        }
        if (is_syl) {
          block["syl"] = syls.decode(ctc::greedy_decode(fo.syl_inters.at(n)));
        }
        layers.push_back(std::move(block));
      }
      rec["final_layer"] = pl.n_layers;
      rec["layers"] = std::move(layers);
    }
    os << rec.dump() << '\n';
  }
  out << "decoded " << data.size() << " utterances to " << c.str("out")
      << '\n';
}

// eval ----------------------------------------------------------------------

std::vector<KeySpec> eval_schema() {
  return {
      {"ref", "", "reference JSON-lines dataset", true},
      {"hyp", "", "hypotheses written by decode", true},
      {"csv", "", "optional per-layer error-rate CSV"},
  };
}

// Maps token strings to dense ids so edit distance can run on them.
class Interner {
 public:
  LabelSeq ids(const std::vector<std::string>& tokens) {
    LabelSeq out;
    for (const auto& t : tokens) {
      auto [it, _] = map_.emplace(t, static_cast<TokenId>(map_.size() + 1));
      out.push_back(it->second);
    }
    return out;
  }

 private:
  std::map<std::string, TokenId> map_;
};

std::vector<json> read_records(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot read " + path);
  std::vector<json> out;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    try {
      out.push_back(json::parse(line));
    } catch (const nlohmann::json::exception& e) {
      throw DataError("malformed record in " + path + ": " + e.what());
    }
  }
  return out;
}

std::vector<std::string> tokens_at(const json& j, const char* key,
                                   const std::string& id) {
  if (!j.contains(key)) {
    throw DataError("record '" + id + "' lacks '" + key + "'");
  }
  try {
    return j.at(key).get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception&) {
    throw DataError("record '" + id + "' has malformed '" + key + "'");
  }
}

struct RateKey {
  int layer;
  std::string level;
  bool operator<(const RateKey& o) const {
    return std::tie(layer, level) < std::tie(o.layer, o.level);
  }
};

void cmd_eval(const RunConfig& c, std::ostream& out) {
  const auto refs = read_records(c.str("ref"));
  const auto hyps = read_records(c.str("hyp"));
  std::map<std::string, const json*> ref_by_id;
  for (const auto& r : refs) {
    const std::string id = r.value("id", "");
    if (id.empty() || !ref_by_id.emplace(id, &r).second) {
      throw DataError("reference ids must be present and unique");
    }
  }
  std::set<std::string> seen;
  for (const auto& h : hyps) {
    const std::string id = h.value("id", "");
    if (!ref_by_id.count(id)) {
      throw DataError("hypothesis id '" + id + "' not in the references");
    }
    if (!seen.insert(id).second) {
      throw DataError("duplicate hypothesis id '" + id + "'");
    }
  }
  if (seen.size() != ref_by_id.size()) {
    throw DataError("references and hypotheses cover different ids (" +
                    std::to_string(ref_by_id.size()) + " vs " +
                    std::to_string(seen.size()) + ")");
  }

  Interner chars, syls;
  ErrorTally final_tally;
  std::map<RateKey, ErrorTally> layer_tally;
  int final_layer = 0;
  for (const auto& h : hyps) {
    const std::string id = h.at("id").get<std::string>();
    const json& r = *ref_by_id.at(id);
    const LabelSeq ref_chars = chars.ids(tokens_at(r, "chars", id));
    final_tally.add(ref_chars, chars.ids(tokens_at(h, "chars", id)));
    if (!h.contains("layers")) continue;
    final_layer = h.value("final_layer", 0);
    const LabelSeq ref_syls = syls.ids(tokens_at(r, "syllables", id));
    for (const auto& block : h.at("layers")) {
      const int n = block.at("layer").get<int>();
      if (block.contains("char")) {
        layer_tally[{n, "char"}].add(ref_chars,
                                     chars.ids(tokens_at(block, "char", id)));
      }
      if (block.contains("syl")) {
        layer_tally[{n, "syl"}].add(ref_syls,
                                    syls.ids(tokens_at(block, "syl", id)));
      }
    }
  }

  out << "utterances " << hyps.size() << '\n';
  if (hyps.empty()) return;
  const auto& fc = final_tally.counts();
  out << "CER " << fmt_rate(final_tally.rate()) << " (sub " << fc.sub
      << " ins " << fc.ins << " del " << fc.del << " / "
      << final_tally.ref_tokens() << ")\n";
  for (const auto& [k, t] : layer_tally) {
    out << "layer " << k.layer << ' ' << k.level << ' '
        << (k.level == "char" ? "CER " : "SER ") << fmt_rate(t.rate())
        << (k.layer == final_layer && k.level == "char" ? " (final)" : "")
        << '\n';
  }
  if (c.has("csv")) {
    std::ofstream os(c.str("csv"), std::ios::binary);
    if (!os) throw DataError("cannot write " + c.str("csv"));
    os << "layer,level,rate,errors,ref_tokens\n";
    if (layer_tally.empty()) {
      os << "final,char," << fmt_rate(final_tally.rate()) << ','
         << fc.total() << ',' << final_tally.ref_tokens() << '\n';
    }
    for (const auto& [k, t] : layer_tally) {
      os << k.layer << ',' << k.level << ',' << fmt_rate(t.rate()) << ','
         << t.counts().total() << ',' << t.ref_tokens() << '\n';
    }
  }
}

std::vector<Command> commands() {
  return {
      {"gen-data", "generate a synthetic homophone dataset", gen_data_schema(),
       cmd_gen_data},
      {"train", "train an encoder", train_schema(), cmd_train},
      {"decode", "greedy-decode a dataset", decode_schema(), cmd_decode},
      {"eval", "score hypotheses against references", eval_schema(),
       cmd_eval},
  };
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out,
        std::ostream& err) {
  CLI::App app{"altcond: CTC training with alternate intermediate conditioning"};
  app.require_subcommand(1);
  const std::vector<Command> cmds = commands();

  struct Parsed {
    std::string config;
    bool print_config = false;
    std::map<std::string, std::optional<std::string>> values;
  };
  std::vector<Parsed> parsed(cmds.size());
  std::vector<CLI::App*> subs;
  for (std::size_t i = 0; i < cmds.size(); ++i) {
    CLI::App* sub = app.add_subcommand(cmds[i].name, cmds[i].help);
    sub->add_option("--config", parsed[i].config, "key=value config file");
    sub->add_flag("--print-config", parsed[i].print_config,
                  "print the resolved configuration and exit");
    for (const auto& k : cmds[i].schema) {
      auto& slot = parsed[i].values[k.key];
      std::string help = k.help;
      if (!k.default_value.empty()) help += " [" + k.default_value + "]";
      if (k.boolean) {
        sub->add_flag("--" + k.key + "{true}", slot, help);
      } else {
        sub->add_option("--" + k.key, slot, help);
      }
    }
    subs.push_back(sub);
  }

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      out << app.help();
      return kExitOk;
    }
    err << "error: " << e.what() << '\n';
    return kExitConfig;
  }

  for (std::size_t i = 0; i < cmds.size(); ++i) {
    if (!subs[i]->parsed()) continue;
    try {
      RunConfig cfg(cmds[i].schema);
      if (!parsed[i].config.empty()) cfg.merge_file(parsed[i].config);
      for (const auto& [key, v] : parsed[i].values) {
        if (v) cfg.set(key, *v);
      }
      if (parsed[i].print_config) {
        out << cfg.dump();
        return kExitOk;
      }
      cfg.check_required();
      cmds[i].action(cfg, out);
      return kExitOk;
    } catch (const ConfigError& e) {
      err << "config error: " << e.what() << '\n';
      return kExitConfig;
    } catch (const ContractError& e) {
      err << "config error: " << e.what() << '\n';
      return kExitConfig;
    } catch (const NumericError& e) {
      err << "numeric failure: " << e.what() << '\n';
      return kExitNumeric;
    } catch (const Error& e) {
      err << "data error: " << e.what() << '\n';
      return kExitData;
    }
  }
  return kExitConfig;
}

}  // namespace altcond::cli
