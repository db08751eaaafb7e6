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

// Toy ideogram language with homophones and polyphones, plus synthetic
// frame features, dataset generation and the JSON-lines dataset format.
//
// Dataset record (one JSON object per line, keys in this order):
//   {"id": str, "dims": [T, D], "features": [T*D numbers, row-major],
//    "chars": [str...], "syllables": [str...]}

#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "altcond/labels.hpp"
#include "altcond/matrix.hpp"

namespace altcond::synth {

inline constexpr int kDefaultFeatureDim = 16;

struct ToyLanguage {
  Vocabulary syllables;
  Vocabulary chars;
  // pron[c] lists the pronunciations of character id c (index 0 unused).
  std::vector<std::vector<LabelSeq>> pron;
  // One prototype feature vector per syllable id (row 0 unused).
  Matrix prototypes;
  std::uint64_t seed = 0;

  int feature_dim() const { return static_cast<int>(prototypes.cols()); }
  int n_syllables() const { return static_cast<int>(syllables.size()) - 1; }
  int n_chars() const { return static_cast<int>(chars.size()) - 1; }
};

// Deterministic in `seed`. Requires n_char > n_syl >= 2 and max_pron >= 2.
// Every character has 1..max_pron pronunciations of 1-2 syllables, every
// syllable is used, and at least one homophone and one polyphone exist.
ToyLanguage make_language(std::uint64_t seed, int n_syl, int n_char,
                          int max_pron, int feature_dim = kDefaultFeatureDim);

struct Utterance {
  std::string id;
  Matrix features;  // T x D
  LabelSeq chars;   // Y
  LabelSeq syls;    // Q

  bool operator==(const Utterance& o) const {
    return id == o.id && features == o.features && chars == o.chars &&
           syls == o.syls;
  }
};

struct SynthOptions {
  int min_frames = 2;  // per syllable
  int max_frames = 4;
  double noise = 0.1;
};

// Samples one pronunciation per character uniformly.
Utterance synthesize_utterance(const ToyLanguage& lang, const LabelSeq& chars,
                               std::uint64_t seed,
                               const SynthOptions& opts = {},
                               std::string id = {});

// As above with the pronunciation of chars[i] fixed to
// lang.pron[chars[i]][choice[i]].
Utterance synthesize_with_pronunciations(const ToyLanguage& lang,
                                         const LabelSeq& chars,
                                         const std::vector<int>& choice,
                                         std::uint64_t seed,
                                         const SynthOptions& opts = {},
                                         std::string id = {});

// True when `syls` is a concatenation of one pronunciation per character.
bool can_pronounce(const ToyLanguage& lang, const LabelSeq& chars,
                   const LabelSeq& syls);

// Characters sharing at least one pronunciation with another character.
std::vector<TokenId> homophone_chars(const ToyLanguage& lang);

// Two single-character utterances with identical syllables and different
// characters.
std::pair<Utterance, Utterance> homophone_pair(const ToyLanguage& lang,
                                               std::uint64_t seed,
                                               const SynthOptions& opts = {});

struct DatasetSpec {
  int n_train = 50;
  int n_valid = 20;
  int min_len = 2;  // characters per utterance
  int max_len = 5;
  std::uint64_t seed = 1;
  // Draw characters only from homophone_chars(lang).
  bool homophones_only = false;
  SynthOptions synth;
};

struct Dataset {
  std::vector<Utterance> train;
  std::vector<Utterance> valid;
};

// Train and valid use disjoint RNG streams; each utterance gets its own
// derived seed. Ids are "train-000000", "valid-000000", ...
Dataset generate_dataset(const ToyLanguage& lang, const DatasetSpec& spec);
std::vector<Utterance> generate_split(const ToyLanguage& lang,
                                      const DatasetSpec& spec,
                                      const std::string& name, int count,
                                      std::uint64_t stream);

std::string serialize_utterance(const Utterance& u, const Vocabulary& chars,
                                const Vocabulary& syls);
Utterance parse_utterance(const std::string& line, const Vocabulary& chars,
                          const Vocabulary& syls);

void write_jsonl(std::ostream& os, const std::vector<Utterance>& utts,
                 const Vocabulary& chars, const Vocabulary& syls);
std::vector<Utterance> read_jsonl(std::istream& is, const Vocabulary& chars,
                                  const Vocabulary& syls);
std::vector<Utterance> load_jsonl(const std::string& path,
                                  const Vocabulary& chars,
                                  const Vocabulary& syls);

// Lexicon: one line per pronunciation, "<char> <syl> [<syl>]".
void write_lexicon(std::ostream& os, const ToyLanguage& lang);

// Writes train.jsonl, valid.jsonl, chars.vocab, syllables.vocab and
// lexicon.txt into an existing directory.
void write_dataset_files(const std::string& dir, const ToyLanguage& lang,
                         const Dataset& data);

// SplitMix64 finaliser; used to derive independent seeds.
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);

}  // namespace altcond::synth
