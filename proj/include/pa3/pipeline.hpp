#pragma once

#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "pa3/corpus.hpp"
#include "pa3/metrics.hpp"
#include "pa3/seq2seq.hpp"

namespace pa3::pipeline {

/// The five definitions and the five bare trait words; added to every
/// vocabulary so any persona text mode can be encoded.
std::vector<std::string> persona_text_corpus();

/// build_vocab over the samples plus persona_text_corpus().
corpus::Vocabulary vocabulary_for(std::span<const corpus::DialogueSample> samples, std::size_t min_freq = 1);

/// Report label: the strategy name, or "ot" for pa3_full on bare trait words.
std::string strategy_label(const seq2seq::ModelConfig& config);

struct TrainResult {
  std::vector<double> epoch_losses;
  std::vector<seq2seq::StepRecord> steps;
};

/// Runs epochs [first_epoch, config.epochs). Epoch e shuffles with a generator
/// seeded from (config.seed, e), so a resumed run sees the same order. Uses
/// the pseudo-task loss when the model fuses personas. Each step is appended
/// to `log` as a JSON line when given.
TrainResult train_model(seq2seq::DialogueModel& model, std::span<const corpus::DialogueSample> samples,
                        const seq2seq::TrainConfig& config, std::size_t first_epoch = 0,
                        std::ostream* log = nullptr);

/// Two-phase decoding as a metrics::Decoder. Caches the persona bank.
metrics::Decoder make_decoder(const seq2seq::DialogueModel& model, std::size_t beam_width = 1);

}  // namespace pa3::pipeline
