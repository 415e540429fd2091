#pragma once

#include <array>
#include <functional>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "pa3/corpus.hpp"

namespace pa3::metrics {

using Tokens = std::span<const std::string>;

/// ROUGE-N F1 on n-gram multisets, in percent. 0 when either side has no
/// n-grams of that order.
double rouge_n(Tokens candidate, Tokens reference, std::size_t n);

/// ROUGE-L F1 from the longest common subsequence, in percent.
double rouge_l(Tokens candidate, Tokens reference);

/// Smoothing floor for zero n-gram matches.
inline constexpr double kBleuEpsilon = 1e-9;

/// Sentence BLEU-1..max_n in percent.
///
/// Modified precision clips each n-gram count by its maximum count in any
/// reference. A zero match count is floored at kBleuEpsilon. When the
/// candidate has no n-grams of an order (it is shorter than n), that order
/// inherits the previous order's precision. Brevity penalty exp(1 - r/c) uses
/// the reference length closest to c (shorter on ties). Unused orders are 0.
std::array<double, 4> bleu(Tokens candidate, std::span<const std::vector<std::string>> references,
                           std::size_t max_n = 4);
std::array<double, 4> bleu(Tokens candidate, Tokens reference, std::size_t max_n = 4);

struct Scores {
  double rouge1 = 0.0;
  double rouge2 = 0.0;
  double rougeL = 0.0;
  std::array<double, 4> bleu{};

  static constexpr std::array<const char*, 7> kNames{"R1", "R2", "RL", "B1", "B2", "B3", "B4"};
  std::array<double, 7> as_array() const { return {rouge1, rouge2, rougeL, bleu[0], bleu[1], bleu[2], bleu[3]}; }
};

Scores score_pair(Tokens candidate, Tokens reference);

/// Compensated (Neumaier) mean; the result does not depend on summation order
/// beyond the last ulp.
double compensated_mean(std::span<const double> values);

struct StrategyRow {
  std::string name;
  Scores mean;
  std::vector<Scores> per_sample;
  std::map<std::string, double> per_speaker_rouge1;
  /// Fraction of trait-dependent gold positions reproduced exactly, if the
  /// corpus has any (synthetic corpora).
  double trait_token_accuracy = 0.0;
  std::size_t trait_tokens = 0;
};

struct EvalReport {
  std::vector<StrategyRow> rows;
  std::string baseline;  // row name deltas are measured against; may be empty

  const StrategyRow& row(const std::string& name) const;
  /// row(name).mean - row(baseline).mean for each metric.
  std::array<double, 7> deltas(const std::string& name) const;
};

/// Produces response tokens for one test sample.
using Decoder = std::function<std::vector<std::string>(const corpus::DialogueSample&)>;

struct NamedDecoder {
  std::string name;
  Decoder decode;
};

/// Decodes every sample with every decoder and aggregates. Throws
/// ContractError on an empty corpus. `baseline` names the delta reference.
EvalReport evaluate(std::span<const NamedDecoder> decoders, std::span<const corpus::DialogueSample> samples,
                    const std::string& baseline = "none");

/// Aligned text table; deltas versus the baseline row are shown in parentheses.
void write_table(std::ostream& out, const EvalReport& report);
/// One JSON object per strategy row.
void write_json_lines(std::ostream& out, const EvalReport& report);
/// "strategy<TAB>metric<TAB>value" triples, including per-speaker ROUGE-1.
void write_plot_data(std::ostream& out, const EvalReport& report);

}  // namespace pa3::metrics
