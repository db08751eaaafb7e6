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

#include "altcond/labels.hpp"

#include <algorithm>
#include <fstream>
#include <istream>
#include <ostream>

#include "altcond/error.hpp"

namespace altcond {

Vocabulary::Vocabulary(const std::vector<std::string>& tokens)
    : tokens_{kBlankToken} {
  index_.emplace(kBlankToken, kBlankId);
  tokens_.reserve(tokens.size() + 1);
  for (const auto& tok : tokens) {
    if (tok.empty() || tok.find_first_of(" \t\r\n") != std::string::npos) {
      throw InvalidTokenError("vocabulary token must be non-empty and free of "
                              "whitespace: '" + tok + "'");
    }
    auto [it, inserted] =
        index_.emplace(tok, static_cast<TokenId>(tokens_.size()));
    if (!inserted) {
      throw InvalidTokenError("duplicate vocabulary token '" + tok + "'");
    }
    tokens_.push_back(tok);
  }
}

const std::string& Vocabulary::token(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw InvalidTokenError("token id " + std::to_string(id) +
                            " out of range for vocabulary of size " +
                            std::to_string(tokens_.size()));
  }
  return tokens_[static_cast<std::size_t>(id)];
}

TokenId Vocabulary::id(const std::string& token) const {
  auto it = index_.find(token);
  if (it == index_.end()) {
    throw InvalidTokenError("unknown token '" + token + "'");
  }
  return it->second;
}

LabelSeq Vocabulary::encode(const std::vector<std::string>& tokens) const {
  LabelSeq ids;
  ids.reserve(tokens.size());
  for (const auto& tok : tokens) {
    TokenId i = id(tok);
    if (i == kBlankId) {
      throw InvalidTokenError("blank is not allowed in a label sequence");
    }
    ids.push_back(i);
  }
  return ids;
}

std::vector<std::string> Vocabulary::decode(
    std::span<const TokenId> ids) const {
  std::vector<std::string> out;
  out.reserve(ids.size());
  for (TokenId i : ids) out.push_back(token(i));
  return out;
}

void Vocabulary::write(std::ostream& os) const {
  for (const auto& tok : tokens_) os << tok << '\n';
}

Vocabulary Vocabulary::read(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line != kBlankToken) {
    throw DataError("vocabulary must start with a '<blank>' line");
  }
  std::vector<std::string> tokens;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    tokens.push_back(line);
  }
  return Vocabulary(tokens);
}

void Vocabulary::save(const std::string& path) const {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write vocabulary file " + path);
  write(os);
}

Vocabulary Vocabulary::load(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot read vocabulary file " + path);
  return read(is);
}

LabelSeq collapse(std::span<const TokenId> path, std::size_t vocab_size) {
  LabelSeq out;
  TokenId prev = -1;
  for (TokenId id : path) {
    if (id < 0 || static_cast<std::size_t>(id) >= vocab_size) {
      throw InvalidTokenError("path token id " + std::to_string(id) +
                              " out of range for vocabulary of size " +
                              std::to_string(vocab_size));
    }
    if (id != prev && id != kBlankId) out.push_back(id);
    prev = id;
  }
  return out;
}

EditCounts edit_distance(std::span<const TokenId> ref,
                         std::span<const TokenId> hyp) {
  const std::size_t n = ref.size();
  const std::size_t m = hyp.size();
  // cost[i][j]: distance between ref[0..i) and hyp[0..j).
  std::vector<std::size_t> cost((n + 1) * (m + 1));
  auto at = [m](std::size_t i, std::size_t j) { return i * (m + 1) + j; };
  for (std::size_t i = 0; i <= n; ++i) cost[at(i, 0)] = i;
  for (std::size_t j = 0; j <= m; ++j) cost[at(0, j)] = j;
  for (std::size_t i = 1; i <= n; ++i) {
    for (std::size_t j = 1; j <= m; ++j) {
      std::size_t diag =
          cost[at(i - 1, j - 1)] + (ref[i - 1] == hyp[j - 1] ? 0 : 1);
      std::size_t ins = cost[at(i, j - 1)] + 1;
      std::size_t del = cost[at(i - 1, j)] + 1;
      cost[at(i, j)] = std::min({diag, ins, del});
    }
  }

  EditCounts counts;
  std::size_t i = n;
  std::size_t j = m;
  while (i > 0 || j > 0) {
    const std::size_t here = cost[at(i, j)];
    if (i > 0 && j > 0) {
      const bool same = ref[i - 1] == hyp[j - 1];
      if (cost[at(i - 1, j - 1)] + (same ? 0 : 1) == here) {
        if (!same) ++counts.sub;
        --i;
        --j;
        continue;
      }
    }
    if (j > 0 && cost[at(i, j - 1)] + 1 == here) {
      ++counts.ins;
      --j;
      continue;
    }
    ++counts.del;
    --i;
  }
  return counts;
}

void ErrorTally::add(std::span<const TokenId> ref,
                     std::span<const TokenId> hyp) {
  counts_ += edit_distance(ref, hyp);
  ref_tokens_ += ref.size();
  ++utterances_;
}

double ErrorTally::rate() const {
  if (ref_tokens_ == 0) {
    throw UndefinedRateError(
        "error rate undefined: all reference sequences are empty");
  }
  return static_cast<double>(counts_.total()) /
         static_cast<double>(ref_tokens_);
}

double error_rate(std::span<const std::pair<LabelSeq, LabelSeq>> pairs) {
  ErrorTally tally;
  for (const auto& [ref, hyp] : pairs) tally.add(ref, hyp);
  return tally.rate();
}

}  // namespace altcond
