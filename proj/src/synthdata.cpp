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

#include "altcond/synthdata.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <random>

#include "json.hpp"

#include "altcond/error.hpp"

namespace altcond::synth {
namespace {

using ordered_json = nlohmann::ordered_json;

constexpr const char* kConsonants[] = {"k", "s", "t", "n", "h", "m", "y",
                                       "r", "w", "g", "z", "d", "b", "p"};
constexpr const char* kVowels[] = {"a", "i", "u", "e", "o"};
constexpr int kNumConsonants = sizeof(kConsonants) / sizeof(kConsonants[0]);

std::string syllable_name(int i) {
  std::string s = std::string(kConsonants[(i / 5) % kNumConsonants]) +
                  kVowels[i % 5];
  if (i >= 5 * kNumConsonants) s += std::to_string(i / (5 * kNumConsonants));
  return s;
}

std::string char_name(int i) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "C%03d", i);
  return buf;
}

int uniform_int(std::mt19937_64& rng, int lo, int hi) {
  return std::uniform_int_distribution<int>(lo, hi)(rng);
}

}  // namespace

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

ToyLanguage make_language(std::uint64_t seed, int n_syl, int n_char,
                          int max_pron, int feature_dim) {
  if (n_syl < 2 || n_char <= n_syl) {
    throw ContractError("make_language needs n_char > n_syl >= 2");
  }
  if (max_pron < 2) {
    throw ContractError("make_language needs max_pron >= 2 so that a "
                        "multi-pronunciation character can exist");
  }
  if (feature_dim < 1) throw ContractError("feature_dim must be >= 1");

  std::mt19937_64 rng(mix_seed(seed, 0x1a96));
  ToyLanguage lang;
  lang.seed = seed;

  std::vector<std::string> syl_names, char_names;
  for (int i = 0; i < n_syl; ++i) syl_names.push_back(syllable_name(i));
  for (int i = 0; i < n_char; ++i) char_names.push_back(char_name(i));
  lang.syllables = Vocabulary(syl_names);
  lang.chars = Vocabulary(char_names);

  auto random_pron = [&] {
    LabelSeq p(static_cast<std::size_t>(uniform_int(rng, 1, 2)));
    for (auto& s : p) s = uniform_int(rng, 1, n_syl);
    return p;
  };

  // A random subset of n_syl characters gets a distinct single-syllable
  // first pronunciation, which covers every syllable.
  std::vector<int> char_order(static_cast<std::size_t>(n_char));
  for (int i = 0; i < n_char; ++i) char_order[i] = i + 1;
  std::shuffle(char_order.begin(), char_order.end(), rng);
  std::vector<int> syl_order(static_cast<std::size_t>(n_syl));
  for (int i = 0; i < n_syl; ++i) syl_order[i] = i + 1;
  std::shuffle(syl_order.begin(), syl_order.end(), rng);

  lang.pron.assign(static_cast<std::size_t>(n_char) + 1, {});
  for (int rank = 0; rank < n_char; ++rank) {
    const int c = char_order[static_cast<std::size_t>(rank)];
    auto& prons = lang.pron[static_cast<std::size_t>(c)];
    const int count = uniform_int(rng, 1, max_pron);
    if (rank < n_syl) prons.push_back({syl_order[static_cast<std::size_t>(rank)]});
    while (static_cast<int>(prons.size()) < count) {
      LabelSeq p = random_pron();
      if (std::find(prons.begin(), prons.end(), p) == prons.end()) {
        prons.push_back(std::move(p));
      }
    }
  }

  // Homophone: some pronunciation used by two characters.
  std::map<LabelSeq, int> users;
  for (int c = 1; c <= n_char; ++c) {
    for (const auto& p : lang.pron[static_cast<std::size_t>(c)]) ++users[p];
  }
  const bool has_homophone = std::any_of(
      users.begin(), users.end(), [](const auto& kv) { return kv.second >= 2; });
  if (!has_homophone) {
    const int donor = char_order.front();
    const int taker = char_order.back();
    auto& prons = lang.pron[static_cast<std::size_t>(taker)];
    const LabelSeq& shared = lang.pron[static_cast<std::size_t>(donor)].front();
    if (static_cast<int>(prons.size()) < max_pron) {
      prons.push_back(shared);
    } else {
      prons.back() = shared;
    }
  }

  // Polyphone: some character with two pronunciations.
  const bool has_polyphone = std::any_of(
      lang.pron.begin() + 1, lang.pron.end(),
      [](const auto& prons) { return prons.size() >= 2; });
  if (!has_polyphone) {
    auto& prons = lang.pron[static_cast<std::size_t>(char_order.back())];
    LabelSeq p = prons.front();
    p.push_back(p.front() % n_syl + 1);
    prons.push_back(std::move(p));
  }

  std::normal_distribution<double> gauss(0.0, 1.0);
  lang.prototypes = Matrix::Zero(n_syl + 1, feature_dim);
  for (int s = 1; s <= n_syl; ++s) {
    for (int d = 0; d < feature_dim; ++d) lang.prototypes(s, d) = gauss(rng);
  }
  return lang;
}

Utterance synthesize_with_pronunciations(const ToyLanguage& lang,
                                         const LabelSeq& chars,
                                         const std::vector<int>& choice,
                                         std::uint64_t seed,
                                         const SynthOptions& opts,
                                         std::string id) {
  if (chars.empty()) {
    throw ContractError("synthesize_utterance: empty character sequence");
  }
  if (choice.size() != chars.size()) {
    throw ContractError("synthesize_utterance: one pronunciation choice per "
                        "character is required");
  }
  if (opts.min_frames < 2 || opts.max_frames < opts.min_frames) {
    throw ContractError("synthesize_utterance: need 2 <= min_frames <= "
                        "max_frames");
  }
  Utterance u;
  u.id = std::move(id);
  u.chars = chars;
  for (std::size_t i = 0; i < chars.size(); ++i) {
    const TokenId c = chars[i];
    if (c < 1 || c > lang.n_chars()) {
      throw InvalidTokenError("character id " + std::to_string(c) +
                              " not in the language");
    }
    const auto& prons = lang.pron[static_cast<std::size_t>(c)];
    if (choice[i] < 0 || choice[i] >= static_cast<int>(prons.size())) {
      throw ContractError("pronunciation choice out of range");
    }
    const auto& p = prons[static_cast<std::size_t>(choice[i])];
    u.syls.insert(u.syls.end(), p.begin(), p.end());
  }

  std::mt19937_64 rng(mix_seed(seed, 0xfea7));
  std::vector<int> durations;
  int total = 0;
  for (std::size_t m = 0; m < u.syls.size(); ++m) {
    durations.push_back(uniform_int(rng, opts.min_frames, opts.max_frames));
    total += durations.back();
  }
  std::normal_distribution<double> gauss(0.0, 1.0);
  u.features = Matrix(total, lang.feature_dim());
  Eigen::Index t = 0;
  for (std::size_t m = 0; m < u.syls.size(); ++m) {
    for (int k = 0; k < durations[m]; ++k, ++t) {
      u.features.row(t) = lang.prototypes.row(u.syls[m]);
      if (opts.noise > 0.0) {
        for (Eigen::Index d = 0; d < u.features.cols(); ++d) {
          u.features(t, d) += opts.noise * gauss(rng);
        }
      }
    }
  }
  return u;
}

Utterance synthesize_utterance(const ToyLanguage& lang, const LabelSeq& chars,
                               std::uint64_t seed, const SynthOptions& opts,
                               std::string id) {
  std::mt19937_64 rng(mix_seed(seed, 0x9409));
  std::vector<int> choice;
  choice.reserve(chars.size());
  for (TokenId c : chars) {
    if (c < 1 || c > lang.n_chars()) {
      throw InvalidTokenError("character id " + std::to_string(c) +
                              " not in the language");
    }
    const int n = static_cast<int>(lang.pron[static_cast<std::size_t>(c)].size());
    choice.push_back(uniform_int(rng, 0, n - 1));
  }
  return synthesize_with_pronunciations(lang, chars, choice, seed, opts,
                                        std::move(id));
}

bool can_pronounce(const ToyLanguage& lang, const LabelSeq& chars,
                   const LabelSeq& syls) {
  // reach[j]: syls[0..j) is covered by the characters processed so far.
  std::vector<char> reach(syls.size() + 1, 0);
  reach[0] = 1;
  for (TokenId c : chars) {
    if (c < 1 || c > lang.n_chars()) return false;
    std::vector<char> next(syls.size() + 1, 0);
    for (std::size_t j = 0; j <= syls.size(); ++j) {
      if (!reach[j]) continue;
      for (const auto& p : lang.pron[static_cast<std::size_t>(c)]) {
        if (j + p.size() <= syls.size() &&
            std::equal(p.begin(), p.end(), syls.begin() + static_cast<long>(j))) {
          next[j + p.size()] = 1;
        }
      }
    }
    reach = std::move(next);
  }
  return reach[syls.size()] != 0;
}

std::vector<TokenId> homophone_chars(const ToyLanguage& lang) {
  std::map<LabelSeq, std::vector<TokenId>> users;
  for (int c = 1; c <= lang.n_chars(); ++c) {
    for (const auto& p : lang.pron[static_cast<std::size_t>(c)]) {
      users[p].push_back(c);
    }
  }
  std::vector<TokenId> out;
  for (const auto& [p, cs] : users) {
    if (cs.size() >= 2) out.insert(out.end(), cs.begin(), cs.end());
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

std::pair<Utterance, Utterance> homophone_pair(const ToyLanguage& lang,
                                               std::uint64_t seed,
                                               const SynthOptions& opts) {
  for (int a = 1; a <= lang.n_chars(); ++a) {
    const auto& pa = lang.pron[static_cast<std::size_t>(a)];
    for (int b = a + 1; b <= lang.n_chars(); ++b) {
      const auto& pb = lang.pron[static_cast<std::size_t>(b)];
      for (std::size_t i = 0; i < pa.size(); ++i) {
        for (std::size_t j = 0; j < pb.size(); ++j) {
          if (pa[i] != pb[j]) continue;
          return {synthesize_with_pronunciations(lang, {a}, {static_cast<int>(i)},
                                                 seed, opts, "homophone-a"),
                  synthesize_with_pronunciations(lang, {b}, {static_cast<int>(j)},
                                                 mix_seed(seed, 1), opts,
                                                 "homophone-b")};
        }
      }
    }
  }
  throw ContractError("language has no homophones");
}

std::vector<Utterance> generate_split(const ToyLanguage& lang,
                                      const DatasetSpec& spec,
                                      const std::string& name, int count,
                                      std::uint64_t stream) {
  if (spec.min_len < 1 || spec.max_len < spec.min_len) {
    throw ContractError("dataset length range must satisfy 1 <= min <= max");
  }
  std::vector<TokenId> pool;
  if (spec.homophones_only) {
    pool = homophone_chars(lang);
  } else {
    for (int c = 1; c <= lang.n_chars(); ++c) pool.push_back(c);
  }
  std::mt19937_64 rng(mix_seed(spec.seed, stream));
  std::vector<Utterance> out;
  out.reserve(static_cast<std::size_t>(std::max(count, 0)));
  for (int i = 0; i < count; ++i) {
    const int len = uniform_int(rng, spec.min_len, spec.max_len);
    LabelSeq chars(static_cast<std::size_t>(len));
    for (auto& c : chars) {
      c = pool[static_cast<std::size_t>(
          uniform_int(rng, 0, static_cast<int>(pool.size()) - 1))];
    }
    char id[64];
    std::snprintf(id, sizeof(id), "%s-%06d", name.c_str(), i);
    out.push_back(synthesize_utterance(
        lang, chars, mix_seed(mix_seed(spec.seed, stream), static_cast<std::uint64_t>(i)),
        spec.synth, id));
  }
  return out;
}

Dataset generate_dataset(const ToyLanguage& lang, const DatasetSpec& spec) {
  if (spec.n_train < 1 || spec.n_valid < 1) {
    throw ContractError("dataset sizes must be >= 1");
  }
  Dataset d;
  d.train = generate_split(lang, spec, "train", spec.n_train, 0x7a1);
  d.valid = generate_split(lang, spec, "valid", spec.n_valid, 0x7a2);
  return d;
}

std::string serialize_utterance(const Utterance& u, const Vocabulary& chars,
                                const Vocabulary& syls) {
  ordered_json j;
  j["id"] = u.id;
  j["dims"] = {u.features.rows(), u.features.cols()};
  std::vector<double> flat(u.features.data(),
                           u.features.data() + u.features.size());
  j["features"] = flat;
  j["chars"] = chars.decode(u.chars);
  j["syllables"] = syls.decode(u.syls);
  return j.dump();
}

Utterance parse_utterance(const std::string& line, const Vocabulary& chars,
                          const Vocabulary& syls) {
  ordered_json j;
  try {
    j = ordered_json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed dataset record: ") + e.what());
  }
  try {
    Utterance u;
    u.id = j.at("id").get<std::string>();
    const auto dims = j.at("dims").get<std::vector<long>>();
    if (dims.size() != 2 || dims[0] < 0 || dims[1] < 0) {
      throw DataError("record '" + u.id + "' has malformed dims");
    }
    const auto flat = j.at("features").get<std::vector<double>>();
    if (static_cast<long>(flat.size()) != dims[0] * dims[1]) {
      throw DataError("record '" + u.id + "' feature count does not match dims");
    }
    u.features = Eigen::Map<const Matrix>(flat.data(), dims[0], dims[1]);
    u.chars = chars.encode(j.at("chars").get<std::vector<std::string>>());
    u.syls = syls.encode(j.at("syllables").get<std::vector<std::string>>());
    return u;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed dataset record: ") + e.what());
  } catch (const InvalidTokenError& e) {
    throw DataError(std::string("dataset record uses ") + e.what());
  }
}

void write_jsonl(std::ostream& os, const std::vector<Utterance>& utts,
                 const Vocabulary& chars, const Vocabulary& syls) {
  for (const auto& u : utts) os << serialize_utterance(u, chars, syls) << '\n';
}

std::vector<Utterance> read_jsonl(std::istream& is, const Vocabulary& chars,
                                  const Vocabulary& syls) {
  std::vector<Utterance> out;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    out.push_back(parse_utterance(line, chars, syls));
  }
  return out;
}

std::vector<Utterance> load_jsonl(const std::string& path,
                                  const Vocabulary& chars,
                                  const Vocabulary& syls) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot read dataset " + path);
  return read_jsonl(is, chars, syls);
}

void write_lexicon(std::ostream& os, const ToyLanguage& lang) {
  for (int c = 1; c <= lang.n_chars(); ++c) {
    for (const auto& p : lang.pron[static_cast<std::size_t>(c)]) {
      os << lang.chars.token(c);
      for (TokenId s : p) os << ' ' << lang.syllables.token(s);
      os << '\n';
    }
  }
}

void write_dataset_files(const std::string& dir, const ToyLanguage& lang,
                         const Dataset& data) {
  if (!std::filesystem::is_directory(dir)) {
    throw DataError("output directory does not exist: " + dir);
  }
  auto open = [&](const std::string& name) {
    std::ofstream os(dir + "/" + name, std::ios::binary);
    if (!os) throw DataError("cannot write " + dir + "/" + name);
    return os;
  };
  {
    auto os = open("train.jsonl");
    write_jsonl(os, data.train, lang.chars, lang.syllables);
  }
  {
    auto os = open("valid.jsonl");
    write_jsonl(os, data.valid, lang.chars, lang.syllables);
  }
  {
    auto os = open("chars.vocab");
    lang.chars.write(os);
  }
  {
    auto os = open("syllables.vocab");
    lang.syllables.write(os);
  }
  {
    auto os = open("lexicon.txt");
    write_lexicon(os, lang);
  }
}

}  // namespace altcond::synth
