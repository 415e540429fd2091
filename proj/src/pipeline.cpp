#include "pa3/pipeline.hpp"

#include <memory>
#include <ostream>

#include <json.hpp>
#include <spdlog/spdlog.h>

#include "pa3/personality.hpp"

namespace pa3::pipeline {

std::vector<std::string> persona_text_corpus() {
  std::vector<std::string> out;
  for (Trait t : kAllTraits) {
    out.emplace_back(trait_to_template(t).template_text);
    out.emplace_back(trait_word(t));
  }
  return out;
}

corpus::Vocabulary vocabulary_for(std::span<const corpus::DialogueSample> samples, std::size_t min_freq) {
  const auto extra = persona_text_corpus();
  return corpus::build_vocab(samples, min_freq, extra);
}

std::string strategy_label(const seq2seq::ModelConfig& config) {
  if (config.strategy == fusion::Strategy::kPa3Full && config.persona_text == seq2seq::PersonaText::kTraitWord) {
    return "ot";
  }
  return std::string(fusion::to_string(config.strategy));
}

TrainResult train_model(seq2seq::DialogueModel& model, std::span<const corpus::DialogueSample> samples,
                        const seq2seq::TrainConfig& config, std::size_t first_epoch, std::ostream* log) {
  config.validate();
  seq2seq::AdamW optimizer(config);
  const auto loss = model.uses_persona() ? personality::pseudo_task_batch_loss(model) : seq2seq::plain_batch_loss(model);
  TrainResult result;
  for (std::size_t epoch = first_epoch; epoch < config.epochs; ++epoch) {
    Rng order(config.seed * 0x100000001b3ULL + epoch);
    const std::size_t before = result.steps.size();
    const double value = seq2seq::train_epoch(model, samples, optimizer, config, order, loss, &result.steps);
    result.epoch_losses.push_back(value);
    spdlog::info("epoch {} loss {:.6f}", epoch, value);
    if (log) {
      for (std::size_t i = before; i < result.steps.size(); ++i) {
        const auto& s = result.steps[i];
        nlohmann::ordered_json line{{"epoch", epoch}, {"step", s.step}, {"loss", s.loss}, {"lr", s.learning_rate},
                                    {"wall_seconds", s.wall_seconds}};
        *log << line.dump() << '\n';
      }
    }
  }
  return result;
}

metrics::Decoder make_decoder(const seq2seq::DialogueModel& model, std::size_t beam_width) {
  auto bank = std::make_shared<seq2seq::TraitBank>();
  if (model.uses_persona()) {
    NoGradGuard guard;
    *bank = model.trait_bank();
  }
  return [&model, bank, beam_width](const corpus::DialogueSample& sample) {
    personality::GenerateOptions options;
    options.beam_width = beam_width;
    return personality::two_phase_generate(model, sample, options, model.uses_persona() ? bank.get() : nullptr).tokens;
  };
}

}  // namespace pa3::pipeline
