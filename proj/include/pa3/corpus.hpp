#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "pa3/traits.hpp"

namespace pa3::corpus {

struct DialogueTurn {
  std::string speaker;
  std::string utterance;

  bool operator==(const DialogueTurn&) const = default;
};

struct DialogueSample {
  std::vector<DialogueTurn> turns;  // context, oldest first
  std::string target_speaker;
  std::string target_response;
  std::optional<Trait> hidden_trait;  // synthetic corpora only

  bool operator==(const DialogueSample&) const = default;
};

std::vector<std::string> tokenize(std::string_view text);
std::string detokenize(std::span<const std::string> tokens);

// ---------------------------------------------------------------------------
// JSONL ingestion
//
// One object per line:
//   {"turns":[{"speaker":str,"utterance":str},...],"target_speaker":str,
//    "target_response":str,"hidden_trait":str?}

enum class TraitMode { kKeep, kWithhold };

struct LoadIssue {
  std::size_t line = 0;  // 1-based
  std::string message;
};

struct LoadResult {
  std::vector<DialogueSample> samples;
  std::vector<LoadIssue> rejected;
  std::vector<std::string> warnings;
};

/// Parses one JSONL record. Throws DataError naming the offending field.
DialogueSample parse_sample(std::string_view json_line, TraitMode mode = TraitMode::kKeep);
std::string to_json_line(const DialogueSample& sample);

/// Malformed lines are collected in `rejected` (and echoed in `warnings`); the
/// load only fails (DataError) when more than 10% of non-blank lines fail.
LoadResult load_jsonl(const std::filesystem::path& path, TraitMode mode = TraitMode::kKeep);
void write_jsonl(const std::filesystem::path& path, std::span<const DialogueSample> samples);

/// Training-mode view: the same samples with hidden_trait cleared.
std::vector<DialogueSample> withhold_traits(std::span<const DialogueSample> samples);

// ---------------------------------------------------------------------------
// Vocabulary

inline std::string speaker_tag(std::string_view speaker) { return "<sp:" + std::string(speaker) + ">"; }

class Vocabulary {
 public:
  static constexpr std::size_t kPad = 0;
  static constexpr std::size_t kBos = 1;
  static constexpr std::size_t kEos = 2;
  static constexpr std::size_t kUnk = 3;

  Vocabulary();

  std::size_t size() const { return tokens_.size(); }
  /// UNK for unknown tokens.
  std::size_t id(std::string_view token) const;
  bool contains(std::string_view token) const;
  const std::string& token(std::size_t id) const;
  bool is_reserved(std::size_t id) const { return id < reserved_; }

  std::vector<std::size_t> encode(std::span<const std::string> tokens) const;
  std::vector<std::string> decode(std::span<const std::size_t> ids) const;

  void save(const std::filesystem::path& path) const;
  static Vocabulary load(const std::filesystem::path& path);

 private:
  friend Vocabulary build_vocab(std::span<const DialogueSample>, std::size_t, std::span<const std::string>);
  void push(const std::string& token);

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::size_t> index_;
  std::size_t reserved_ = 0;
};

/// Reserved ids first (PAD, BOS, EOS, UNK, then speaker tags in lexicographic
/// order), then whitespace tokens with count >= min_freq ordered by
/// (count desc, token asc). `extra_text` is counted like corpus text; it is
/// how template definitions reach the vocabulary.
Vocabulary build_vocab(std::span<const DialogueSample> samples, std::size_t min_freq,
                       std::span<const std::string> extra_text = {});

// ---------------------------------------------------------------------------
// Synthetic persona-conditioned corpus

struct SynthConfig {
  std::uint64_t seed = 13;
  std::size_t samples = 500;
  std::size_t speakers = 5;
};

/// Each speaker carries one hidden trait. A context holds a question plus one
/// marked turn from each of two speakers with different traits; the marked
/// turns contain words of their speaker's trait definition. The context is a
/// function of (question family, speaker pair) only, and the target speaker
/// is either of the two with equal probability, so identical contexts occur
/// with both responses. The response carries two trait-dependent words that
/// never appear in the context; a reader of the context alone can only guess
/// between the paired traits.
struct SynthCorpus {
  std::vector<DialogueSample> samples;
  std::map<std::string, Trait> speaker_traits;
};

/// Throws ConfigError when samples < 10 or speakers < 2.
SynthCorpus synth_corpus(const SynthConfig& config);

/// Words that carry trait information in synthetic responses.
std::span<const std::string_view> trait_lexicon(Trait trait);
/// Positions of `response_tokens` that belong to any trait lexicon.
std::vector<std::size_t> trait_token_positions(std::span<const std::string> response_tokens);

struct OracleReport {
  double blind_bigram_accuracy = 0.0;   // previous-gold-token majority vote
  double blind_context_accuracy = 0.0;  // knows the paired traits, picks the earlier marked speaker
  double trait_aware_accuracy = 0.0;    // knows the hidden trait
  double chi_square_pair = 0.0;         // first vs second marked speaker as target, df = 1
  double chi_square_traits = 0.0;       // target trait histogram vs uniform, df = 4
  std::size_t trait_tokens = 0;
};

/// Scripted reference predictors over a synthetic corpus. Needs hidden traits.
OracleReport run_scripted_oracles(std::span<const DialogueSample> samples);

}  // namespace pa3::corpus
