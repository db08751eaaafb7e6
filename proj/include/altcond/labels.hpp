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

// Token vocabularies, the CTC collapsing function and edit-distance metrics.

#pragma once

#include <cstddef>
#include <iosfwd>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace altcond {

using TokenId = int;

// Label sequence: token ids, never blank.
using LabelSeq = std::vector<TokenId>;
// Frame-level alignment path: one id per frame, blanks allowed.
using Path = std::vector<TokenId>;

inline constexpr TokenId kBlankId = 0;
inline constexpr const char* kBlankToken = "<blank>";

// Bidirectional token <-> id map. Id 0 is always the blank.
class Vocabulary {
 public:
  Vocabulary() : Vocabulary(std::vector<std::string>{}) {}
  // `tokens` excludes the blank; ids 1..n are assigned in order.
  explicit Vocabulary(const std::vector<std::string>& tokens);

  std::size_t size() const { return tokens_.size(); }
  const std::string& token(TokenId id) const;
  TokenId id(const std::string& token) const;
  bool contains(const std::string& token) const {
    return index_.count(token) != 0;
  }
  const std::vector<std::string>& tokens() const { return tokens_; }

  LabelSeq encode(const std::vector<std::string>& tokens) const;
  std::vector<std::string> decode(std::span<const TokenId> ids) const;

  // One token per line, line 0 is "<blank>".
  void write(std::ostream& os) const;
  static Vocabulary read(std::istream& is);
  void save(const std::string& path) const;
  static Vocabulary load(const std::string& path);

  bool operator==(const Vocabulary& other) const {
    return tokens_ == other.tokens_;
  }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
};

// Merges adjacent duplicates, then drops blanks. Ids must be < vocab_size.
LabelSeq collapse(std::span<const TokenId> path, std::size_t vocab_size);

struct EditCounts {
  std::size_t sub = 0;
  std::size_t ins = 0;
  std::size_t del = 0;

  std::size_t total() const { return sub + ins + del; }
  EditCounts& operator+=(const EditCounts& o) {
    sub += o.sub;
    ins += o.ins;
    del += o.del;
    return *this;
  }
  bool operator==(const EditCounts&) const = default;
};

// Levenshtein alignment of `hyp` against `ref`. The backtrace prefers the
// diagonal (match/substitution), then insertion, then deletion, so counts are
// reproducible.
EditCounts edit_distance(std::span<const TokenId> ref,
                         std::span<const TokenId> hyp);

// Accumulates errors and reference length over a corpus.
class ErrorTally {
 public:
  void add(std::span<const TokenId> ref, std::span<const TokenId> hyp);
  const EditCounts& counts() const { return counts_; }
  std::size_t ref_tokens() const { return ref_tokens_; }
  std::size_t utterances() const { return utterances_; }
  // Sum of errors over sum of reference lengths; may exceed 1.
  double rate() const;

 private:
  EditCounts counts_;
  std::size_t ref_tokens_ = 0;
  std::size_t utterances_ = 0;
};

double error_rate(std::span<const std::pair<LabelSeq, LabelSeq>> pairs);

}  // namespace altcond
