#include "pa3/config.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

#include "pa3/errors.hpp"

namespace pa3::config {

namespace {

std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

bool is_bare_key(std::string_view key) {
  if (key.empty()) return false;
  for (char c : key) {
    if (!std::isalnum(static_cast<unsigned char>(c)) && c != '_' && c != '-') return false;
  }
  return true;
}

std::string error_at(std::size_t line, const std::string& msg) { return "config line " + std::to_string(line) + ": " + msg; }

std::size_t to_size(const std::string& key, const std::string& v) {
  if (v.empty() || !std::all_of(v.begin(), v.end(), [](char c) { return std::isdigit(static_cast<unsigned char>(c)); })) {
    throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
  }
  return static_cast<std::size_t>(std::stoull(v));
}

double to_double(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  double out = 0.0;
  try {
    out = std::stod(v, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos == 0 || pos != v.size()) throw ConfigError(key + ": expected a number, got '" + v + "'");
  return out;
}

}  // namespace

Table parse_toml(std::string_view text) {
  Table table;
  std::string section;
  std::size_t lineno = 0;
  std::istringstream in{std::string(text)};
  std::string raw;
  while (std::getline(in, raw)) {
    ++lineno;
    std::string line;
    bool quoted = false;
    for (char c : raw) {
      if (c == '"') quoted = !quoted;
      if (c == '#' && !quoted) break;
      line.push_back(c);
    }
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(error_at(lineno, "unterminated section header"));
      section = trim(std::string_view(line).substr(1, line.size() - 2));
      if (!is_bare_key(section)) throw ConfigError(error_at(lineno, "bad section name '" + section + "'"));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(error_at(lineno, "expected key = value"));
    const std::string key = trim(std::string_view(line).substr(0, eq));
    std::string value = trim(std::string_view(line).substr(eq + 1));
    if (!is_bare_key(key)) throw ConfigError(error_at(lineno, "bad key '" + key + "'"));
    if (value.empty()) throw ConfigError(error_at(lineno, "missing value for '" + key + "'"));
    if (value.front() == '"') {
      if (value.size() < 2 || value.back() != '"') throw ConfigError(error_at(lineno, "unterminated string"));
      value = value.substr(1, value.size() - 2);
      if (value.find('"') != std::string::npos) throw ConfigError(error_at(lineno, "embedded quote in string"));
    } else if (value.find_first_of(" \t\"'[]{}") != std::string::npos) {
      throw ConfigError(error_at(lineno, "unsupported value '" + value + "'"));
    }
    const std::string full = section.empty() ? key : section + "." + key;
    if (!table.emplace(full, value).second) throw ConfigError(error_at(lineno, "duplicate key '" + full + "'"));
  }
  return table;
}

void apply(RunConfig& c, const std::string& key, const std::string& value) {
  const auto dot = key.find('.');
  const std::string section = dot == std::string::npos ? "" : key.substr(0, dot);
  const std::string name = dot == std::string::npos ? key : key.substr(dot + 1);
  if (section == "model") {
    if (name == "vocab_size") throw ConfigError("model.vocab_size is derived from the corpus and cannot be set");
    // Re-parse through the model's own key table so the two never diverge.
    auto current = c.model.to_map();
    if (!current.count(name)) throw ConfigError("unknown key " + key);
    current[name] = value;
    const std::size_t vocab = c.model.vocab_size;
    c.model = seq2seq::ModelConfig::from_map(current);
    c.model.vocab_size = vocab;
  } else if (section == "train") {
    auto& t = c.train;
    if (name == "learning_rate") t.learning_rate = to_double(key, value);
    else if (name == "weight_decay") t.weight_decay = to_double(key, value);
    else if (name == "batch_size") t.batch_size = to_size(key, value);
    else if (name == "epochs") t.epochs = to_size(key, value);
    else if (name == "seed") t.seed = to_size(key, value);
    else if (name == "grad_clip") t.grad_clip = to_double(key, value);
    else if (name == "beta1") t.beta1 = to_double(key, value);
    else if (name == "beta2") t.beta2 = to_double(key, value);
    else if (name == "epsilon") t.epsilon = to_double(key, value);
    else throw ConfigError("unknown key " + key);
  } else if (section == "synth") {
    if (name == "seed") c.synth.seed = to_size(key, value);
    else if (name == "samples") c.synth.samples = to_size(key, value);
    else if (name == "speakers") c.synth.speakers = to_size(key, value);
    else throw ConfigError("unknown key " + key);
  } else if (section == "paths") {
    if (name == "train_corpus") c.paths.train_corpus = value;
    else if (name == "test_corpus") c.paths.test_corpus = value;
    else if (name == "checkpoint") c.paths.checkpoint = value;
    else if (name == "out") c.paths.out = value;
    else throw ConfigError("unknown key " + key);
  } else if (section == "vocab") {
    if (name == "min_freq") c.min_freq = to_size(key, value);
    else throw ConfigError("unknown key " + key);
  } else if (section == "decode") {
    if (name == "beam_width") c.beam_width = to_size(key, value);
    else throw ConfigError("unknown key " + key);
  } else {
    throw ConfigError("unknown key " + key);
  }
}

void RunConfig::validate() const {
  train.validate();
  if (min_freq == 0) throw ConfigError("vocab.min_freq must be >= 1");
  if (beam_width == 0) throw ConfigError("decode.beam_width must be >= 1");
  // Model fields are checked without the corpus-derived vocabulary size.
  seq2seq::ModelConfig probe = model;
  if (probe.vocab_size == 0) probe.vocab_size = 4;
  probe.validate();
}

RunConfig from_table(const Table& table) {
  RunConfig c;
  for (const auto& [key, value] : table) apply(c, key, value);
  return c;
}

RunConfig load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return from_table(parse_toml(ss.str()));
}

}  // namespace pa3::config
