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

// Flat key=value configuration with a fixed schema per command.

#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

namespace altcond::cli {

struct KeySpec {
  std::string key;
  std::string default_value;  // empty and required=true: must be supplied
  std::string help;
  bool required = false;
  bool boolean = false;  // may be given as a bare --flag
};

class RunConfig {
 public:
  explicit RunConfig(std::vector<KeySpec> schema);

  const std::vector<KeySpec>& schema() const { return schema_; }

  // Lines "key = value"; '#' starts a comment. Unknown keys are rejected.
  void merge_file(const std::string& path);
  void merge_text(std::istream& is, const std::string& origin);
  void set(const std::string& key, const std::string& value);
  // Throws ConfigError naming the first missing required key.
  void check_required() const;

  bool has(const std::string& key) const;
  const std::string& str(const std::string& key) const;
  long integer(const std::string& key) const;
  std::uint64_t u64(const std::string& key) const;
  double real(const std::string& key) const;
  bool flag(const std::string& key) const;

  // Resolved configuration in schema order, one "key=value" per line.
  std::string dump() const;

 private:
  const KeySpec& spec(const std::string& key) const;

  std::vector<KeySpec> schema_;
  std::map<std::string, std::string> values_;
};

}  // namespace altcond::cli
