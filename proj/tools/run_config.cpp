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

#include "run_config.hpp"

#include <fstream>
#include <istream>
#include <sstream>

#include "altcond/error.hpp"

namespace altcond::cli {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

RunConfig::RunConfig(std::vector<KeySpec> schema) : schema_(std::move(schema)) {
  for (const auto& k : schema_) {
    if (!k.default_value.empty()) values_[k.key] = k.default_value;
  }
}

const KeySpec& RunConfig::spec(const std::string& key) const {
  for (const auto& k : schema_) {
    if (k.key == key) return k;
  }
  throw ConfigError("unknown configuration key '" + key + "'");
}

void RunConfig::merge_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot read config file " + path);
  merge_text(is, path);
}

void RunConfig::merge_text(std::istream& is, const std::string& origin) {
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(origin + ":" + std::to_string(lineno) +
                        ": expected key=value");
    }
    set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
}

void RunConfig::set(const std::string& key, const std::string& value) {
  spec(key);
  values_[key] = value;
}

void RunConfig::check_required() const {
  for (const auto& k : schema_) {
    if (k.required && !has(k.key)) {
      throw ConfigError("missing required setting '" + k.key + "'");
    }
  }
}

bool RunConfig::has(const std::string& key) const {
  auto it = values_.find(key);
  return it != values_.end() && !it->second.empty();
}

const std::string& RunConfig::str(const std::string& key) const {
  spec(key);
  static const std::string kEmpty;
  auto it = values_.find(key);
  return it == values_.end() ? kEmpty : it->second;
}

long RunConfig::integer(const std::string& key) const {
  const std::string& v = str(key);
  std::size_t used = 0;
  long out = 0;
  try {
    out = std::stol(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != v.size()) {
    throw ConfigError("setting '" + key + "' must be an integer, got '" + v +
                      "'");
  }
  return out;
}

std::uint64_t RunConfig::u64(const std::string& key) const {
  const long v = integer(key);
  if (v < 0) throw ConfigError("setting '" + key + "' must be >= 0");
  return static_cast<std::uint64_t>(v);
}

double RunConfig::real(const std::string& key) const {
  const std::string& v = str(key);
  std::size_t used = 0;
  double out = 0.0;
  try {
    out = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != v.size()) {
    throw ConfigError("setting '" + key + "' must be a number, got '" + v +
                      "'");
  }
  return out;
}

bool RunConfig::flag(const std::string& key) const {
  const std::string& v = str(key);
  if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
  if (v == "0" || v == "false" || v == "no" || v == "off" || v.empty()) {
    return false;
  }
  throw ConfigError("setting '" + key + "' must be a boolean, got '" + v + "'");
}

std::string RunConfig::dump() const {
  std::ostringstream os;
  for (const auto& k : schema_) os << k.key << '=' << str(k.key) << '\n';
  return os.str();
}

}  // namespace altcond::cli
