#include "pa3/personality.hpp"

#include <iomanip>
#include <ostream>

#include "pa3/errors.hpp"

namespace pa3::personality {

using seq2seq::DialogueModel;

Trait TraitDistribution::argmax() const {
  std::size_t best = 0;
  for (std::size_t i = 1; i < probs.size(); ++i) {
    if (probs[i] > probs[best]) best = i;
  }
  return kAllTraits[best];
}

TraitDistribution TraitDistribution::from(const Tensor& probs) {
  if (probs.numel() != kTraitCount) throw DimensionError("trait distribution needs 5 entries, got " + to_string(probs.shape()));
  TraitDistribution d;
  std::copy(probs.data().begin(), probs.data().end(), d.probs.begin());
  return d;
}

Classification classify_trait(const DialogueModel& model, const Tensor& encoded,
                              const DialogueModel::EncodedContext& context, const corpus::DialogueSample& sample,
                              const seq2seq::TraitBank& traits) {
  if (sample.turns.empty()) throw ContractError("classify_trait: empty context");
  Classification c;
  c.logits = model.trait_logits(encoded, context, sample, traits);
  c.probs = softmax_rows(c.logits);
  return c;
}

TraitDistribution classify_trait(const DialogueModel& model, const corpus::DialogueSample& sample) {
  if (sample.turns.empty()) throw ContractError("classify_trait: empty context");
  NoGradGuard guard;
  const auto ctx = model.serialize_context(sample);
  return classify_trait(model, model.encode(ctx.ids), ctx, sample, model.trait_bank()).distribution();
}

fusion::PersonaEncoding persona_encoding(const Tensor& traits, Trait trait, std::size_t n) {
  if (n == 0) throw ContractError("persona_encoding: target length must be >= 1");
  return fusion::PersonaEncoding::broadcast(slice(traits, 0, index_of(trait), 1), n);
}

fusion::PersonaEncoding persona_encoding(const Tensor& traits, const Tensor& probs, std::size_t n,
                                         bool straight_through) {
  if (n == 0) throw ContractError("persona_encoding: target length must be >= 1");
  if (probs.rank() != 2 || probs.dim(0) != 1 || probs.dim(1) != kTraitCount) {
    throw DimensionError("persona_encoding: probs must be [1 x 5], got " + to_string(probs.shape()));
  }
  Tensor weights = probs;
  if (straight_through) {
    std::vector<double> hot(kTraitCount, 0.0);
    hot[index_of(TraitDistribution::from(probs).argmax())] = 1.0;
    weights = Tensor::from({1, kTraitCount}, std::move(hot)) + (probs - probs.detach());
  }
  return fusion::PersonaEncoding::broadcast(matmul(weights, traits), n);
}

Tensor pseudo_task_loss(const DialogueModel& model, std::span<const corpus::DialogueSample> batch,
                        std::optional<Trait> frozen) {
  if (batch.empty()) throw ContractError("pseudo_task_loss: empty batch");
  if (!model.uses_persona()) return seq2seq::plain_batch_loss(model)(batch);
  const bool straight = model.config().trait_selection == seq2seq::TraitSelection::kStraightThrough;
  const seq2seq::TraitBank bank = model.trait_bank();
  const Tensor& traits = bank.pooled;
  Tensor total;
  for (const auto& sample : batch) {
    const auto ctx = model.serialize_context(sample);
    const Tensor encoded = model.encode(ctx.ids);
    fusion::PersonaEncoding persona;
    if (frozen) {
      std::vector<double> hot(kTraitCount, 0.0);
      hot[index_of(*frozen)] = 1.0;
      persona = persona_encoding(traits, Tensor::from({1, kTraitCount}, std::move(hot)), ctx.ids.size());
    } else {
      const auto cls = classify_trait(model, encoded, ctx, sample, bank);
      persona = persona_encoding(traits, cls.probs, ctx.ids.size(), straight);
    }
    const Tensor memory = model.encode_fused(ctx.ids, &persona);
    Tensor loss = seq2seq::teacher_forced_loss(model, memory, sample);
    total = total.defined() ? total + loss : loss;
  }
  return total * (1.0 / static_cast<double>(batch.size()));
}

seq2seq::BatchLoss pseudo_task_batch_loss(const DialogueModel& model) {
  return [&model](std::span<const corpus::DialogueSample> batch) { return pseudo_task_loss(model, batch); };
}

double pseudo_task_step(DialogueModel& model, seq2seq::AdamW& optimizer, std::span<const corpus::DialogueSample> batch) {
  model.parameters().zero_grad();
  model.set_training(true);
  const Tensor loss = pseudo_task_loss(model, batch);
  model.set_training(false);
  const double value = loss.item();
  if (!std::isfinite(value)) throw NumericError("non-finite pseudo-task loss");
  loss.backward();
  optimizer.step(model.parameters());
  return value;
}

Generation two_phase_generate(const DialogueModel& model, const corpus::DialogueSample& sample,
                              const GenerateOptions& options, const seq2seq::TraitBank* traits) {
  NoGradGuard guard;
  const auto ctx = model.serialize_context(sample);
  Generation out;
  Tensor memory;
  if (!model.uses_persona()) {
    memory = model.encode(ctx.ids);
  } else {
    const seq2seq::TraitBank local = traits ? seq2seq::TraitBank{} : model.trait_bank();
    const seq2seq::TraitBank& t = traits ? *traits : local;
    Trait trait;
    if (options.forced_trait) {
      trait = *options.forced_trait;
    } else {
      trait = classify_trait(model, model.encode(ctx.ids), ctx, sample, t).distribution().argmax();
    }
    out.trait = trait;
    const auto persona = persona_encoding(t.pooled, trait, ctx.ids.size());
    memory = model.encode_fused(ctx.ids, &persona);
  }
  out.hypothesis = options.beam_width <= 1 ? seq2seq::greedy_decode(model, memory)
                                           : seq2seq::beam_decode(model, memory, options.beam_width);
  out.tokens = model.vocab().decode(out.hypothesis.tokens);
  return out;
}

std::array<double, kTraitCount> IdentifyReport::row_percent(const std::string& speaker) const {
  std::array<double, kTraitCount> out{};
  const auto it = counts.find(speaker);
  if (it == counts.end()) return out;
  std::size_t total = 0;
  for (auto c : it->second) total += c;
  if (total == 0) return out;
  for (std::size_t i = 0; i < kTraitCount; ++i) out[i] = 100.0 * static_cast<double>(it->second[i]) / static_cast<double>(total);
  return out;
}

double IdentifyReport::sample_accuracy() const {
  return total_labelled ? static_cast<double>(total_correct) / static_cast<double>(total_labelled) : 0.0;
}

double IdentifyReport::speaker_accuracy() const {
  double sum = 0.0;
  std::size_t speakers = 0;
  for (const auto& [speaker, n] : labelled) {
    if (n == 0) continue;
    sum += static_cast<double>(correct.at(speaker)) / static_cast<double>(n);
    ++speakers;
  }
  return speakers ? sum / static_cast<double>(speakers) : 0.0;
}

IdentifyReport identify(const DialogueModel& model, std::span<const corpus::DialogueSample> samples) {
  if (!model.uses_persona()) throw ContractError("identify: strategy none has no trait classifier");
  NoGradGuard guard;
  const seq2seq::TraitBank traits = model.trait_bank();
  IdentifyReport report;
  for (const auto& sample : samples) {
    const auto ctx = model.serialize_context(sample);
    const Trait predicted = classify_trait(model, model.encode(ctx.ids), ctx, sample, traits).distribution().argmax();
    ++report.counts[sample.target_speaker][index_of(predicted)];
    if (sample.hidden_trait) {
      ++report.labelled[sample.target_speaker];
      ++report.total_labelled;
      const bool hit = predicted == *sample.hidden_trait;
      report.correct[sample.target_speaker] += hit ? 1 : 0;
      report.total_correct += hit ? 1 : 0;
    }
  }
  return report;
}

void write_identify_table(std::ostream& out, const IdentifyReport& report) {
  const auto flags = out.flags();
  out << std::left << std::setw(16) << "speaker";
  for (Trait t : kAllTraits) out << std::right << std::setw(8) << trait_tag(t);
  if (report.total_labelled) out << std::setw(10) << "acc%";
  out << '\n' << std::fixed << std::setprecision(1);
  for (const auto& [speaker, counts] : report.counts) {
    out << std::left << std::setw(16) << speaker;
    for (double p : report.row_percent(speaker)) out << std::right << std::setw(8) << p;
    if (report.total_labelled) {
      const auto n = report.labelled.count(speaker) ? report.labelled.at(speaker) : 0;
      const double acc = n ? 100.0 * static_cast<double>(report.correct.at(speaker)) / static_cast<double>(n) : 0.0;
      out << std::setw(10) << acc;
    }
    out << '\n';
  }
  if (report.total_labelled) {
    out << "sample accuracy " << 100.0 * report.sample_accuracy() << "%, speaker accuracy "
        << 100.0 * report.speaker_accuracy() << "%\n";
  }
  out.flags(flags);
}

}  // namespace pa3::personality
