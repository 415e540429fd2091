#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pa3/corpus.hpp"
#include "pa3/fusion.hpp"
#include "pa3/nn.hpp"
#include "pa3/traits.hpp"

namespace pa3::seq2seq {

enum class Injection { kFinal, kEveryLayer };
/// Which text the persona encoder reads: the full definition or the bare trait
/// word (the "only traits" ablation).
enum class PersonaText { kTemplate, kTraitWord };
/// How the classifier's distribution selects the persona during training.
enum class TraitSelection { kSoft, kStraightThrough };

struct ModelConfig {
  std::size_t vocab_size = 0;  // filled from the vocabulary
  std::size_t d_model = 128;
  std::size_t d_persona = 128;
  std::size_t heads = 4;
  std::size_t encoder_layers = 4;
  std::size_t decoder_layers = 4;
  std::size_t ffn_multiplier = 2;
  std::size_t axial_groups = 4;
  std::size_t max_len = 64;
  std::size_t max_response_len = 24;
  fusion::Strategy strategy = fusion::Strategy::kPa3Full;
  Injection injection = Injection::kFinal;
  PersonaText persona_text = PersonaText::kTemplate;
  TraitSelection trait_selection = TraitSelection::kSoft;
  double dropout = 0.0;

  /// Throws ConfigError naming the offending field.
  void validate() const;
  std::map<std::string, std::string> to_map() const;
  static ModelConfig from_map(const std::map<std::string, std::string>& values);
};

struct TrainConfig {
  double learning_rate = 5e-6;
  double weight_decay = 1e-4;
  std::size_t batch_size = 4;
  std::size_t epochs = 10;
  std::uint64_t seed = 13;
  double grad_clip = 1.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  void validate() const;
};

std::string_view to_string(Injection v);
std::string_view to_string(PersonaText v);
std::string_view to_string(TraitSelection v);

/// Encoded persona texts: per-trait token rows and their mean-pooled vectors.
struct TraitBank {
  std::vector<Tensor> tokens;  // per trait, [m_k x d_p]
  Tensor pooled;               // [5 x d_p], trait order
};

/// Encoder-decoder transformer with an optional persona fusion stage between
/// encoder and decoder, plus the trait-classifier head.
///
/// The context is serialized as BOS, then "<sp:NAME> tokens..." per turn,
/// then EOS. The target speaker is not part of the generator input; the
/// classifier receives it separately.
class DialogueModel {
 public:
  DialogueModel(ModelConfig config, corpus::Vocabulary vocab, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  const corpus::Vocabulary& vocab() const { return vocab_; }
  nn::ParameterStore& parameters() { return params_; }
  const nn::ParameterStore& parameters() const { return params_; }
  bool uses_persona() const { return config_.strategy != fusion::Strategy::kNone; }

  struct EncodedContext {
    std::vector<std::size_t> ids;
    /// Turn index (into the sample) owning each position; npos for BOS/EOS.
    std::vector<std::size_t> turn_of;
    bool truncated = false;
  };
  /// Left-truncates whole turns (oldest first) to max_len, logging a warning.
  EncodedContext serialize_context(const corpus::DialogueSample& sample) const;

  /// Contextual representations [n x d] for a token id sequence.
  Tensor encode(std::span<const std::size_t> ids) const;
  /// Encoder with persona fusion applied at the configured injection point.
  Tensor encode_fused(std::span<const std::size_t> ids, const fusion::PersonaEncoding* persona) const;

  /// Encodes all five persona texts with the shared encoder.
  TraitBank trait_bank() const;
  /// trait_bank().pooled.
  Tensor trait_encodings() const { return trait_bank().pooled; }
  /// Token ids of the persona text for one trait.
  std::vector<std::size_t> persona_text_ids(Trait trait) const;

  /// Teacher-forced next-token logits [m+1 x V] for decoder inputs BOS + prefix.
  Tensor decoder_logits(const Tensor& memory, std::span<const std::size_t> prefix) const;

  /// Classifier head, a soft token-matching score against each definition.
  /// With C the target speaker's encoded positions and G_k the encoded tokens
  /// of definition k, S_k = C W G_k^T / sqrt(d_p) and
  ///   logit_k = mean_i sum_j softmax_j(S_k)_ij (S_k)_ij + b_k,
  /// a smooth row-wise maximum. C falls back to the whole context when the
  /// target speaker has no turns.
  Tensor trait_logits(const Tensor& encoded, const EncodedContext& context, const corpus::DialogueSample& sample,
                      const TraitBank& traits) const;

  /// Test hook: zero the classifier head so the distribution is uniform.
  void zero_classifier_head();

  const fusion::FusionModule& fusion_module(std::size_t i = 0) const { return fusion_.at(i); }

  void set_training(bool training) { training_ = training; }
  bool training() const { return training_; }

 private:
  struct EncoderLayer {
    nn::LayerNorm norm1, norm2;
    nn::MultiHeadAttention attention;
    nn::FeedForward ffn;
  };
  struct DecoderLayer {
    nn::LayerNorm norm1, norm2, norm3;
    nn::MultiHeadAttention self_attention;
    nn::MultiHeadAttention cross_attention;
    nn::FeedForward ffn;
  };

  Tensor embed(std::span<const std::size_t> ids) const;
  Tensor maybe_dropout(const Tensor& x) const;
  Tensor run_encoder(std::span<const std::size_t> ids, const fusion::PersonaEncoding* persona) const;

  ModelConfig config_;
  corpus::Vocabulary vocab_;
  nn::ParameterStore params_;
  Tensor token_embedding_;  // [V x d], tied with the output projection
  std::vector<EncoderLayer> encoder_;
  nn::LayerNorm encoder_norm_;
  std::vector<DecoderLayer> decoder_;
  nn::LayerNorm decoder_norm_;
  std::vector<fusion::FusionModule> fusion_;
  std::optional<nn::Linear> persona_projection_;
  Tensor classifier_weight_;  // [d_p x d_p]
  Tensor classifier_bias_;    // [5]
  bool training_ = false;
  mutable Rng dropout_rng_;
};

/// Cross-entropy of the gold response under teacher forcing.
Tensor teacher_forced_loss(const DialogueModel& model, const Tensor& memory, const corpus::DialogueSample& sample);

/// AdamW: Adam moments with decoupled weight decay.
class AdamW {
 public:
  explicit AdamW(const TrainConfig& config) : config_(config) {}

  /// Clips the global gradient norm, applies one update, returns the pre-clip norm.
  double step(nn::ParameterStore& params);
  std::size_t steps() const { return steps_; }
  void set_learning_rate(double lr) { config_.learning_rate = lr; }

 private:
  TrainConfig config_;
  std::size_t steps_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

using BatchLoss = std::function<Tensor(std::span<const corpus::DialogueSample>)>;

/// Loss for the personality-blind generator.
BatchLoss plain_batch_loss(const DialogueModel& model);

struct StepRecord {
  std::size_t step = 0;
  double loss = 0.0;
  double learning_rate = 0.0;
  double wall_seconds = 0.0;
};

/// One shuffled pass with mean-per-batch losses. Throws NumericError naming
/// the batch when a loss or gradient is not finite. Returns the mean loss.
double train_epoch(DialogueModel& model, std::span<const corpus::DialogueSample> samples, AdamW& optimizer,
                   const TrainConfig& config, Rng& order_rng, const BatchLoss& batch_loss,
                   std::vector<StepRecord>* log = nullptr);

struct Hypothesis {
  std::vector<std::size_t> tokens;  // without BOS/EOS
  double log_prob = 0.0;
  bool finished = false;
  /// log_prob / (tokens + 1 for EOS when finished).
  double normalized_score() const;
};

/// Argmax per step (lowest id on ties) until EOS or max_response_len.
Hypothesis greedy_decode(const DialogueModel& model, const Tensor& memory);
/// Length-normalized beam search; candidates tie-break by (beam rank, token id).
/// Width 1 reproduces greedy_decode. Throws ConfigError for width 0.
Hypothesis beam_decode(const DialogueModel& model, const Tensor& memory, std::size_t width);

/// Log-probability of a given continuation (without EOS unless `finished`).
double sequence_log_prob(const DialogueModel& model, const Tensor& memory, std::span<const std::size_t> tokens,
                         bool finished);

// ---------------------------------------------------------------------------
// Checkpoints: a directory with manifest.txt, vocab.txt and one tensor file
// per parameter.

void save_checkpoint(const std::filesystem::path& dir, const DialogueModel& model,
                     const std::map<std::string, std::string>& extra = {});
DialogueModel load_checkpoint(const std::filesystem::path& dir,
                              std::map<std::string, std::string>* extra = nullptr);
/// SHA-256 over the manifest and every file it names, in manifest order.
std::string checkpoint_hash(const std::filesystem::path& dir);

}  // namespace pa3::seq2seq
