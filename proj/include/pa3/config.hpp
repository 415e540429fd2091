#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>

#include "pa3/corpus.hpp"
#include "pa3/seq2seq.hpp"

namespace pa3::config {

/// Flat "section.key" -> value table. String values are unquoted.
using Table = std::map<std::string, std::string>;

/// Parses the TOML subset used by run configs: [section] headers, key = value
/// lines, '#' comments, double-quoted strings, numbers and booleans. Throws
/// ConfigError with the line number on anything else.
Table parse_toml(std::string_view text);

struct Paths {
  std::filesystem::path train_corpus;
  std::filesystem::path test_corpus;
  std::filesystem::path checkpoint;
  std::filesystem::path out;
};

struct RunConfig {
  seq2seq::ModelConfig model;
  seq2seq::TrainConfig train;
  corpus::SynthConfig synth;
  Paths paths;
  std::size_t min_freq = 1;
  std::size_t beam_width = 1;

  /// Throws ConfigError naming the field.
  void validate() const;
};

/// Sets one "section.key" field. Unknown keys are rejected.
void apply(RunConfig& config, const std::string& key, const std::string& value);
RunConfig from_table(const Table& table);
RunConfig load(const std::filesystem::path& path);

}  // namespace pa3::config
