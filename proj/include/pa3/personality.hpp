#pragma once

#include <array>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pa3/corpus.hpp"
#include "pa3/fusion.hpp"
#include "pa3/seq2seq.hpp"
#include "pa3/traits.hpp"

namespace pa3::personality {

/// Five-way trait distribution, summing to 1.
struct TraitDistribution {
  std::array<double, kTraitCount> probs{};

  /// Lowest trait index wins ties.
  Trait argmax() const;
  static TraitDistribution from(const Tensor& probs);
};

struct Classification {
  Tensor logits;  // [1 x 5]
  Tensor probs;   // [1 x 5], differentiable
  TraitDistribution distribution() const { return TraitDistribution::from(probs); }
};

/// Phase 1 on an already encoded context. `traits` is model.trait_bank().
Classification classify_trait(const seq2seq::DialogueModel& model, const Tensor& encoded,
                              const seq2seq::DialogueModel::EncodedContext& context,
                              const corpus::DialogueSample& sample, const seq2seq::TraitBank& traits);
/// Convenience form that encodes the context and the persona texts itself.
TraitDistribution classify_trait(const seq2seq::DialogueModel& model, const corpus::DialogueSample& sample);

/// Hard mode: the pooled encoding of one definition, broadcast to n rows.
fusion::PersonaEncoding persona_encoding(const Tensor& traits, Trait trait, std::size_t n);
/// Soft mode: pooled encodings mixed by `probs` [1 x 5], broadcast to n rows.
/// With `straight_through` the forward pass uses the argmax one-hot while the
/// gradient follows the soft mixture.
fusion::PersonaEncoding persona_encoding(const Tensor& traits, const Tensor& probs, std::size_t n,
                                         bool straight_through = false);

/// Mean teacher-forced loss of a batch through classifier, persona mixture,
/// fusion and decoder. `frozen` replaces the classifier with a one-hot
/// distribution on that trait. Never reads hidden_trait.
Tensor pseudo_task_loss(const seq2seq::DialogueModel& model, std::span<const corpus::DialogueSample> batch,
                        std::optional<Trait> frozen = std::nullopt);
seq2seq::BatchLoss pseudo_task_batch_loss(const seq2seq::DialogueModel& model);

/// One joint update of generator and classifier. Returns the batch loss.
double pseudo_task_step(seq2seq::DialogueModel& model, seq2seq::AdamW& optimizer,
                        std::span<const corpus::DialogueSample> batch);

struct GenerateOptions {
  std::optional<Trait> forced_trait;
  std::size_t beam_width = 1;  // 1 selects greedy decoding
};

struct Generation {
  std::optional<Trait> trait;  // empty for strategy none
  std::vector<std::string> tokens;
  seq2seq::Hypothesis hypothesis;
};

/// Phase 1 (argmax trait, or the forced one) then Phase 2 (hard persona,
/// fusion, decode). `traits` may carry a precomputed trait_bank().
Generation two_phase_generate(const seq2seq::DialogueModel& model, const corpus::DialogueSample& sample,
                              const GenerateOptions& options = {}, const seq2seq::TraitBank* traits = nullptr);

/// Per-speaker trait assignment frequencies, with accuracy when labels exist.
struct IdentifyReport {
  std::map<std::string, std::array<std::size_t, kTraitCount>> counts;
  std::map<std::string, std::size_t> correct;  // labelled samples only
  std::map<std::string, std::size_t> labelled;
  std::size_t total_correct = 0;
  std::size_t total_labelled = 0;

  /// Percentage row for a speaker; sums to 100.
  std::array<double, kTraitCount> row_percent(const std::string& speaker) const;
  double sample_accuracy() const;
  /// Mean over labelled speakers of each speaker's sample accuracy.
  double speaker_accuracy() const;
};

IdentifyReport identify(const seq2seq::DialogueModel& model, std::span<const corpus::DialogueSample> samples);
void write_identify_table(std::ostream& out, const IdentifyReport& report);

}  // namespace pa3::personality
