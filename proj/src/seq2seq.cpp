#include "pa3/seq2seq.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include <openssl/evp.h>
#include <spdlog/spdlog.h>

#include "pa3/errors.hpp"
#include "pa3/tensor_io.hpp"

namespace pa3::seq2seq {

namespace {

constexpr std::size_t kNoTurn = static_cast<std::size_t>(-1);

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::size_t parse_size(const std::string& key, const std::string& text) {
  std::size_t pos = 0;
  unsigned long long v = 0;
  try {
    if (text.empty() || text.front() == '-') throw std::invalid_argument(text);
    v = std::stoull(text, &pos);
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected a non-negative integer, got '" + text + "'");
  }
  if (pos != text.size()) throw ConfigError(key + ": expected a non-negative integer, got '" + text + "'");
  return static_cast<std::size_t>(v);
}

double parse_double(const std::string& key, const std::string& text) {
  std::size_t pos = 0;
  double v = 0;
  try {
    v = std::stod(text, &pos);
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected a number, got '" + text + "'");
  }
  if (pos != text.size()) throw ConfigError(key + ": expected a number, got '" + text + "'");
  return v;
}

std::vector<double> log_softmax_last_row(const Tensor& logits) {
  const std::size_t v = logits.dim(1);
  const auto all = logits.data();
  const double* row = all.data() + (logits.dim(0) - 1) * v;
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < v; ++i) mx = std::max(mx, row[i]);
  double z = 0.0;
  for (std::size_t i = 0; i < v; ++i) z += std::exp(row[i] - mx);
  const double lz = mx + std::log(z);
  std::vector<double> out(v);
  for (std::size_t i = 0; i < v; ++i) out[i] = row[i] - lz;
  return out;
}

/// PAD and BOS are never emitted.
bool emittable(std::size_t id) { return id != corpus::Vocabulary::kPad && id != corpus::Vocabulary::kBos; }

}  // namespace

std::string_view to_string(Injection v) { return v == Injection::kFinal ? "final" : "every_layer"; }
std::string_view to_string(PersonaText v) { return v == PersonaText::kTemplate ? "template" : "trait_word"; }
std::string_view to_string(TraitSelection v) { return v == TraitSelection::kSoft ? "soft" : "straight_through"; }

void ModelConfig::validate() const {
  auto require = [](bool ok, const std::string& msg) {
    if (!ok) throw ConfigError(msg);
  };
  require(vocab_size >= 4, "model.vocab_size must be >= 4");
  require(d_model > 0, "model.d_model must be positive");
  require(d_persona > 0, "model.d_persona must be positive");
  require(heads > 0 && d_model % heads == 0, "model.heads must divide model.d_model");
  require(axial_groups > 0 && d_model % axial_groups == 0, "model.axial_groups must divide model.d_model");
  require(encoder_layers > 0, "model.encoder_layers must be positive");
  require(decoder_layers > 0, "model.decoder_layers must be positive");
  require(ffn_multiplier > 0, "model.ffn_multiplier must be positive");
  require(max_len >= 2, "model.max_len must be >= 2");
  require(max_response_len > 0, "model.max_response_len must be positive");
  require(dropout >= 0.0 && dropout < 1.0, "model.dropout must be in [0, 1)");
}

std::map<std::string, std::string> ModelConfig::to_map() const {
  return {
      {"vocab_size", std::to_string(vocab_size)},
      {"d_model", std::to_string(d_model)},
      {"d_persona", std::to_string(d_persona)},
      {"heads", std::to_string(heads)},
      {"encoder_layers", std::to_string(encoder_layers)},
      {"decoder_layers", std::to_string(decoder_layers)},
      {"ffn_multiplier", std::to_string(ffn_multiplier)},
      {"axial_groups", std::to_string(axial_groups)},
      {"max_len", std::to_string(max_len)},
      {"max_response_len", std::to_string(max_response_len)},
      {"strategy", std::string(fusion::to_string(strategy))},
      {"injection", std::string(to_string(injection))},
      {"persona_text", std::string(to_string(persona_text))},
      {"trait_selection", std::string(to_string(trait_selection))},
      {"dropout", format_double(dropout)},
  };
}

ModelConfig ModelConfig::from_map(const std::map<std::string, std::string>& values) {
  ModelConfig c;
  for (const auto& [key, value] : values) {
    const std::string field = "model." + key;
    if (key == "vocab_size") c.vocab_size = parse_size(field, value);
    else if (key == "d_model") c.d_model = parse_size(field, value);
    else if (key == "d_persona") c.d_persona = parse_size(field, value);
    else if (key == "heads") c.heads = parse_size(field, value);
    else if (key == "encoder_layers") c.encoder_layers = parse_size(field, value);
    else if (key == "decoder_layers") c.decoder_layers = parse_size(field, value);
    else if (key == "ffn_multiplier") c.ffn_multiplier = parse_size(field, value);
    else if (key == "axial_groups") c.axial_groups = parse_size(field, value);
    else if (key == "max_len") c.max_len = parse_size(field, value);
    else if (key == "max_response_len") c.max_response_len = parse_size(field, value);
    else if (key == "strategy") c.strategy = fusion::parse_strategy(value);
    else if (key == "injection") {
      if (value == "final") c.injection = Injection::kFinal;
      else if (value == "every_layer") c.injection = Injection::kEveryLayer;
      else throw ConfigError(field + ": expected final or every_layer, got '" + value + "'");
    } else if (key == "persona_text") {
      if (value == "template") c.persona_text = PersonaText::kTemplate;
      else if (value == "trait_word") c.persona_text = PersonaText::kTraitWord;
      else throw ConfigError(field + ": expected template or trait_word, got '" + value + "'");
    } else if (key == "trait_selection") {
      if (value == "soft") c.trait_selection = TraitSelection::kSoft;
      else if (value == "straight_through") c.trait_selection = TraitSelection::kStraightThrough;
      else throw ConfigError(field + ": expected soft or straight_through, got '" + value + "'");
    } else if (key == "dropout") c.dropout = parse_double(field, value);
    else throw ConfigError("unknown key " + field);
  }
  return c;
}

void TrainConfig::validate() const {
  auto require = [](bool ok, const std::string& msg) {
    if (!ok) throw ConfigError(msg);
  };
  require(learning_rate >= 0.0 && std::isfinite(learning_rate), "train.learning_rate must be >= 0");
  require(weight_decay >= 0.0 && std::isfinite(weight_decay), "train.weight_decay must be >= 0");
  require(batch_size > 0, "train.batch_size must be positive");
  require(grad_clip > 0.0, "train.grad_clip must be positive");
  require(beta1 >= 0.0 && beta1 < 1.0, "train.beta1 must be in [0, 1)");
  require(beta2 >= 0.0 && beta2 < 1.0, "train.beta2 must be in [0, 1)");
  require(epsilon > 0.0, "train.epsilon must be positive");
}

DialogueModel::DialogueModel(ModelConfig config, corpus::Vocabulary vocab, std::uint64_t seed)
    : config_(config), vocab_(std::move(vocab)), dropout_rng_(seed ^ 0x9e3779b97f4a7c15ULL) {
  if (config_.vocab_size == 0) config_.vocab_size = vocab_.size();
  if (config_.vocab_size != vocab_.size()) {
    throw ConfigError("model.vocab_size " + std::to_string(config_.vocab_size) + " does not match vocabulary size " +
                      std::to_string(vocab_.size()));
  }
  config_.validate();
  Rng rng(seed);
  const std::size_t d = config_.d_model;
  const std::size_t dp = config_.d_persona;

  std::vector<double> table(config_.vocab_size * d);
  const double sd = 1.0 / std::sqrt(static_cast<double>(d));
  for (auto& x : table) x = sd * rng.normal();
  token_embedding_ = params_.add("embed.tokens", Tensor::from({config_.vocab_size, d}, std::move(table)));

  for (std::size_t i = 0; i < config_.encoder_layers; ++i) {
    const std::string p = "encoder." + std::to_string(i);
    EncoderLayer layer{nn::make_layer_norm(params_, p + ".norm1", d), nn::make_layer_norm(params_, p + ".norm2", d),
                       nn::make_attention(params_, p + ".attn", d, config_.heads, rng),
                       nn::make_feed_forward(params_, p + ".ffn", d, d * config_.ffn_multiplier, rng)};
    encoder_.push_back(std::move(layer));
  }
  encoder_norm_ = nn::make_layer_norm(params_, "encoder.norm", d);

  for (std::size_t i = 0; i < config_.decoder_layers; ++i) {
    const std::string p = "decoder." + std::to_string(i);
    DecoderLayer layer{nn::make_layer_norm(params_, p + ".norm1", d),
                       nn::make_layer_norm(params_, p + ".norm2", d),
                       nn::make_layer_norm(params_, p + ".norm3", d),
                       nn::make_attention(params_, p + ".self", d, config_.heads, rng),
                       nn::make_attention(params_, p + ".cross", d, config_.heads, rng),
                       nn::make_feed_forward(params_, p + ".ffn", d, d * config_.ffn_multiplier, rng)};
    decoder_.push_back(std::move(layer));
  }
  decoder_norm_ = nn::make_layer_norm(params_, "decoder.norm", d);

  if (uses_persona()) {
    if (config_.injection == Injection::kFinal) {
      fusion_.push_back(fusion::make_fusion_module(params_, config_.strategy, d, dp, config_.axial_groups, rng));
    } else {
      for (std::size_t i = 0; i < config_.encoder_layers; ++i) {
        fusion_.push_back(fusion::make_fusion_module(params_, config_.strategy, d, dp, config_.axial_groups, rng,
                                                     "layer" + std::to_string(i)));
      }
    }
    if (dp != d) persona_projection_ = nn::make_linear(params_, "persona.proj", d, dp, false, rng);
    std::vector<double> eye(dp * dp, 0.0);
    for (std::size_t i = 0; i < dp; ++i) eye[i * dp + i] = 1.0;
    classifier_weight_ = params_.add("classifier.weight", Tensor::from({dp, dp}, std::move(eye)));
    classifier_bias_ = params_.add("classifier.bias", Tensor::zeros({kTraitCount}));
  }
}

DialogueModel::EncodedContext DialogueModel::serialize_context(const corpus::DialogueSample& sample) const {
  if (sample.turns.empty()) throw ContractError("serialize_context: empty context");
  std::vector<std::vector<std::size_t>> pieces;
  for (const auto& turn : sample.turns) {
    std::vector<std::size_t> ids{vocab_.id(corpus::speaker_tag(turn.speaker))};
    const auto words = vocab_.encode(corpus::tokenize(turn.utterance));
    ids.insert(ids.end(), words.begin(), words.end());
    pieces.push_back(std::move(ids));
  }
  const std::size_t budget = config_.max_len - 2;
  std::size_t first = pieces.size() - 1;
  std::size_t used = pieces.back().size();
  while (first > 0 && used + pieces[first - 1].size() <= budget) used += pieces[--first].size();

  EncodedContext out;
  out.truncated = first > 0;
  out.ids.push_back(corpus::Vocabulary::kBos);
  out.turn_of.push_back(kNoTurn);
  for (std::size_t t = first; t < pieces.size(); ++t) {
    auto begin = pieces[t].begin();
    if (pieces[t].size() > budget) {
      begin += static_cast<std::ptrdiff_t>(pieces[t].size() - budget);
      out.truncated = true;
    }
    for (auto it = begin; it != pieces[t].end(); ++it) {
      out.ids.push_back(*it);
      out.turn_of.push_back(t);
    }
  }
  out.ids.push_back(corpus::Vocabulary::kEos);
  out.turn_of.push_back(kNoTurn);
  if (out.truncated) {
    spdlog::warn("context of {} turns exceeds max_len {}; dropped {} oldest turn(s)", sample.turns.size(),
                 config_.max_len, first);
  }
  return out;
}

Tensor DialogueModel::maybe_dropout(const Tensor& x) const {
  if (!training_ || config_.dropout <= 0.0) return x;
  const double keep = 1.0 - config_.dropout;
  std::vector<double> mask(x.numel());
  for (auto& m : mask) m = dropout_rng_.uniform() < keep ? 1.0 / keep : 0.0;
  return x * Tensor::from(x.shape(), std::move(mask));
}

Tensor DialogueModel::embed(std::span<const std::size_t> ids) const {
  const std::size_t d = config_.d_model;
  Tensor x = embedding(token_embedding_, ids) * std::sqrt(static_cast<double>(d));
  return maybe_dropout(x + nn::sinusoidal_positions(ids.size(), d));
}

Tensor DialogueModel::run_encoder(std::span<const std::size_t> ids, const fusion::PersonaEncoding* persona) const {
  if (ids.empty()) throw ContractError("encode: empty token sequence");
  if (ids.size() > config_.max_len) {
    throw ContractError("encode: " + std::to_string(ids.size()) + " tokens exceed max_len " +
                        std::to_string(config_.max_len));
  }
  Tensor x = embed(ids);
  const bool every = persona && config_.injection == Injection::kEveryLayer;
  for (std::size_t i = 0; i < encoder_.size(); ++i) {
    const auto& layer = encoder_[i];
    const Tensor h = layer.norm1(x);
    x = x + maybe_dropout(layer.attention(h, h));
    x = x + maybe_dropout(layer.ffn(layer.norm2(x)));
    if (every) x = fusion::fuse_with_strategy(x, *persona, fusion_[i]);
  }
  x = encoder_norm_(x);
  if (persona && config_.injection == Injection::kFinal) x = fusion::fuse_with_strategy(x, *persona, fusion_[0]);
  return x;
}

Tensor DialogueModel::encode(std::span<const std::size_t> ids) const { return run_encoder(ids, nullptr); }

Tensor DialogueModel::encode_fused(std::span<const std::size_t> ids, const fusion::PersonaEncoding* persona) const {
  if (!uses_persona() || persona == nullptr) return run_encoder(ids, nullptr);
  return run_encoder(ids, persona);
}

std::vector<std::size_t> DialogueModel::persona_text_ids(Trait trait) const {
  const std::string text = config_.persona_text == PersonaText::kTemplate ? std::string(trait_to_template(trait).template_text)
                                                                          : std::string(trait_word(trait));
  std::vector<std::size_t> ids{corpus::Vocabulary::kBos};
  const auto words = vocab_.encode(corpus::tokenize(text));
  ids.insert(ids.end(), words.begin(), words.end());
  ids.push_back(corpus::Vocabulary::kEos);
  return ids;
}

TraitBank DialogueModel::trait_bank() const {
  TraitBank bank;
  std::vector<Tensor> pooled;
  for (Trait t : kAllTraits) {
    const auto ids = persona_text_ids(t);
    Tensor rows = encode(ids);
    if (persona_projection_) rows = (*persona_projection_)(rows);
    pooled.push_back(mean_rows(rows));
    bank.tokens.push_back(rows);
  }
  bank.pooled = concat(pooled, 0);
  return bank;
}

Tensor DialogueModel::decoder_logits(const Tensor& memory, std::span<const std::size_t> prefix) const {
  std::vector<std::size_t> ids{corpus::Vocabulary::kBos};
  ids.insert(ids.end(), prefix.begin(), prefix.end());
  Tensor x = embed(ids);
  const auto mask = nn::Mask::causal(ids.size());
  for (const auto& layer : decoder_) {
    const Tensor h = layer.norm1(x);
    x = x + maybe_dropout(layer.self_attention(h, h, mask));
    x = x + maybe_dropout(layer.cross_attention(layer.norm2(x), memory));
    x = x + maybe_dropout(layer.ffn(layer.norm3(x)));
  }
  return matmul(decoder_norm_(x), transpose(token_embedding_));
}

Tensor DialogueModel::trait_logits(const Tensor& encoded, const EncodedContext& context,
                                   const corpus::DialogueSample& sample, const TraitBank& traits) const {
  if (!uses_persona()) throw ContractError("trait_logits: strategy none has no classifier");
  if (context.ids.empty() || encoded.dim(0) != context.ids.size()) {
    throw ContractError("trait_logits: encoded context does not match its serialization");
  }
  std::vector<std::size_t> positions;
  for (std::size_t i = 0; i < context.turn_of.size(); ++i) {
    const std::size_t t = context.turn_of[i];
    if (t != kNoTurn && sample.turns[t].speaker == sample.target_speaker) positions.push_back(i);
  }
  if (positions.empty()) {
    positions.resize(context.ids.size());
    std::iota(positions.begin(), positions.end(), std::size_t{0});
  }
  Tensor rows = embedding(encoded, positions);
  if (persona_projection_) rows = (*persona_projection_)(rows);
  const Tensor queries = matmul(rows, classifier_weight_);
  const double scale = 1.0 / std::sqrt(static_cast<double>(config_.d_persona));
  std::vector<Tensor> scores;
  for (const auto& g : traits.tokens) {
    const Tensor sim = matmul(queries, transpose(g)) * scale;
    scores.push_back(reshape(mean(sum_cols(softmax_rows(sim) * sim)), {1, 1}));
  }
  return concat(scores, 1) + classifier_bias_;
}

void DialogueModel::zero_classifier_head() {
  if (!uses_persona()) return;
  for (auto& x : classifier_weight_.mutable_data()) x = 0.0;
  for (auto& x : classifier_bias_.mutable_data()) x = 0.0;
}

Tensor teacher_forced_loss(const DialogueModel& model, const Tensor& memory, const corpus::DialogueSample& sample) {
  auto ids = model.vocab().encode(corpus::tokenize(sample.target_response));
  if (ids.size() > model.config().max_response_len) ids.resize(model.config().max_response_len);
  std::vector<std::size_t> targets = ids;
  targets.push_back(corpus::Vocabulary::kEos);
  return cross_entropy(model.decoder_logits(memory, ids), targets, corpus::Vocabulary::kPad);
}

BatchLoss plain_batch_loss(const DialogueModel& model) {
  return [&model](std::span<const corpus::DialogueSample> batch) {
    Tensor total;
    for (const auto& sample : batch) {
      const auto ctx = model.serialize_context(sample);
      Tensor loss = teacher_forced_loss(model, model.encode(ctx.ids), sample);
      total = total.defined() ? total + loss : loss;
    }
    return total * (1.0 / static_cast<double>(batch.size()));
  };
}

double AdamW::step(nn::ParameterStore& params) {
  const auto& entries = params.entries();
  if (m_.empty()) {
    for (const auto& [name, t] : entries) {
      m_.emplace_back(t.numel(), 0.0);
      v_.emplace_back(t.numel(), 0.0);
    }
  }
  if (m_.size() != entries.size()) throw ContractError("AdamW: parameter set changed between steps");

  double sq = 0.0;
  for (const auto& [name, t] : entries) {
    if (!t.has_grad()) continue;
    for (double g : t.grad()) sq += g * g;
  }
  const double norm = std::sqrt(sq);
  if (!std::isfinite(norm)) throw NumericError("non-finite gradient norm");
  const double clip = norm > config_.grad_clip ? config_.grad_clip / norm : 1.0;

  ++steps_;
  const double lr = config_.learning_rate;
  const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(steps_));
  for (std::size_t p = 0; p < entries.size(); ++p) {
    Tensor t = entries[p].second;
    if (!t.has_grad()) continue;
    const auto g = t.grad();
    auto w = t.mutable_data();
    auto& m = m_[p];
    auto& v = v_[p];
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = g[i] * clip;
      m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * gi;
      v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * gi * gi;
      const double update = (m[i] / c1) / (std::sqrt(v[i] / c2) + config_.epsilon) + config_.weight_decay * w[i];
      w[i] -= lr * update;
    }
  }
  return norm;
}

double train_epoch(DialogueModel& model, std::span<const corpus::DialogueSample> samples, AdamW& optimizer,
                   const TrainConfig& config, Rng& order_rng, const BatchLoss& batch_loss,
                   std::vector<StepRecord>* log) {
  if (samples.empty()) throw ContractError("train_epoch: empty corpus");
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  order_rng.shuffle(std::span<std::size_t>(order));

  const auto start = std::chrono::steady_clock::now();
  model.set_training(true);
  double total = 0.0;
  std::size_t batches = 0;
  std::vector<corpus::DialogueSample> batch;
  for (std::size_t begin = 0; begin < order.size(); begin += config.batch_size) {
    const std::size_t end = std::min(order.size(), begin + config.batch_size);
    batch.clear();
    for (std::size_t i = begin; i < end; ++i) batch.push_back(samples[order[i]]);
    const std::size_t batch_id = begin / config.batch_size;
    auto describe = [&] {
      std::ostringstream os;
      os << "batch " << batch_id << " (samples";
      for (std::size_t i = begin; i < end; ++i) os << ' ' << order[i];
      os << ')';
      return os.str();
    };

    model.parameters().zero_grad();
    const Tensor loss = batch_loss(batch);
    const double value = loss.item();
    if (!std::isfinite(value)) {
      model.set_training(false);
      throw NumericError("non-finite loss " + format_double(value) + " at " + describe());
    }
    loss.backward();
    try {
      optimizer.step(model.parameters());
    } catch (const NumericError& e) {
      model.set_training(false);
      throw NumericError(std::string(e.what()) + " at " + describe());
    }
    total += value;
    ++batches;
    if (log) {
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      log->push_back({optimizer.steps(), value, config.learning_rate, secs});
    }
  }
  model.set_training(false);
  return total / static_cast<double>(batches);
}

double Hypothesis::normalized_score() const {
  const double len = static_cast<double>(tokens.size() + (finished ? 1 : 0));
  return log_prob / std::max(1.0, len);
}

Hypothesis greedy_decode(const DialogueModel& model, const Tensor& memory) {
  NoGradGuard guard;
  Hypothesis h;
  while (h.tokens.size() < model.config().max_response_len) {
    const auto lp = log_softmax_last_row(model.decoder_logits(memory, h.tokens));
    std::size_t best = corpus::Vocabulary::kEos;
    for (std::size_t id = 0; id < lp.size(); ++id) {
      if (emittable(id) && lp[id] > lp[best]) best = id;
    }
    h.log_prob += lp[best];
    if (best == corpus::Vocabulary::kEos) {
      h.finished = true;
      break;
    }
    h.tokens.push_back(best);
  }
  return h;
}

Hypothesis beam_decode(const DialogueModel& model, const Tensor& memory, std::size_t width) {
  if (width == 0) throw ConfigError("beam width must be >= 1");
  NoGradGuard guard;
  std::vector<Hypothesis> beams{Hypothesis{}};
  std::vector<Hypothesis> done;
  for (std::size_t step = 0; step < model.config().max_response_len && !beams.empty(); ++step) {
    std::vector<Hypothesis> candidates;
    for (const auto& beam : beams) {
      const auto lp = log_softmax_last_row(model.decoder_logits(memory, beam.tokens));
      std::vector<std::size_t> ids;
      for (std::size_t id = 0; id < lp.size(); ++id) {
        if (emittable(id)) ids.push_back(id);
      }
      std::stable_sort(ids.begin(), ids.end(), [&](std::size_t a, std::size_t b) { return lp[a] > lp[b]; });
      for (std::size_t k = 0; k < std::min(width, ids.size()); ++k) {
        Hypothesis next = beam;
        next.log_prob += lp[ids[k]];
        if (ids[k] == corpus::Vocabulary::kEos) next.finished = true;
        else next.tokens.push_back(ids[k]);
        candidates.push_back(std::move(next));
      }
    }
    std::stable_sort(candidates.begin(), candidates.end(),
                     [](const Hypothesis& a, const Hypothesis& b) { return a.log_prob > b.log_prob; });
    beams.clear();
    for (auto& c : candidates) {
      if (c.finished) done.push_back(std::move(c));
      else beams.push_back(std::move(c));
      if (beams.size() >= width) break;
    }
    if (done.size() >= width) break;
  }
  for (auto& b : beams) done.push_back(std::move(b));
  std::size_t best = 0;
  for (std::size_t i = 1; i < done.size(); ++i) {
    if (done[i].normalized_score() > done[best].normalized_score()) best = i;
  }
  return done[best];
}

double sequence_log_prob(const DialogueModel& model, const Tensor& memory, std::span<const std::size_t> tokens,
                         bool finished) {
  NoGradGuard guard;
  const Tensor logits = model.decoder_logits(memory, tokens);
  const std::size_t v = logits.dim(1);
  const auto data = logits.data();
  double total = 0.0;
  const std::size_t steps = tokens.size() + (finished ? 1 : 0);
  for (std::size_t r = 0; r < steps; ++r) {
    const double* row = data.data() + r * v;
    double mx = row[0];
    for (std::size_t i = 1; i < v; ++i) mx = std::max(mx, row[i]);
    double z = 0.0;
    for (std::size_t i = 0; i < v; ++i) z += std::exp(row[i] - mx);
    const std::size_t target = r < tokens.size() ? tokens[r] : corpus::Vocabulary::kEos;
    total += row[target] - mx - std::log(z);
  }
  return total;
}

// ---------------------------------------------------------------------------

namespace {

constexpr const char* kManifestHeader = "pa3-checkpoint 1";

std::string file_for(const std::string& name) { return "param." + name + ".pa3t"; }

}  // namespace

void save_checkpoint(const std::filesystem::path& dir, const DialogueModel& model,
                     const std::map<std::string, std::string>& extra) {
  std::filesystem::create_directories(dir);
  std::ofstream manifest(dir / "manifest.txt", std::ios::binary);
  if (!manifest) throw DataError("cannot write checkpoint manifest in " + dir.string());
  manifest << kManifestHeader << '\n';
  for (const auto& [k, v] : model.config().to_map()) manifest << "config " << k << ' ' << v << '\n';
  for (const auto& [k, v] : extra) manifest << "extra " << k << ' ' << v << '\n';
  model.vocab().save(dir / "vocab.txt");
  manifest << "vocab vocab.txt\n";
  for (const auto& [name, tensor] : model.parameters().entries()) {
    save_tensor(dir / file_for(name), tensor);
    manifest << "param " << name << ' ' << file_for(name) << '\n';
  }
  if (!manifest) throw DataError("failed writing checkpoint manifest in " + dir.string());
}

namespace {

struct Manifest {
  std::map<std::string, std::string> config;
  std::map<std::string, std::string> extra;
  std::string vocab;
  std::vector<std::pair<std::string, std::string>> params;
};

Manifest read_manifest(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.txt", std::ios::binary);
  if (!in) throw DataError("missing checkpoint manifest: " + (dir / "manifest.txt").string());
  std::string line;
  if (!std::getline(in, line) || line != kManifestHeader) throw DataError("not a checkpoint manifest: " + dir.string());
  Manifest m;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream is(line);
    std::string kind, key, value;
    is >> kind >> key;
    std::getline(is >> std::ws, value);
    if (kind == "config") m.config[key] = value;
    else if (kind == "extra") m.extra[key] = value;
    else if (kind == "vocab") m.vocab = key;
    else if (kind == "param") m.params.emplace_back(key, value);
    else throw DataError("manifest line " + std::to_string(lineno) + ": unknown record '" + kind + "'");
  }
  if (m.vocab.empty()) throw DataError("manifest has no vocab record");
  return m;
}

}  // namespace

DialogueModel load_checkpoint(const std::filesystem::path& dir, std::map<std::string, std::string>* extra) {
  const Manifest m = read_manifest(dir);
  DialogueModel model(ModelConfig::from_map(m.config), corpus::Vocabulary::load(dir / m.vocab), 0);
  const auto& entries = model.parameters().entries();
  if (entries.size() != m.params.size()) {
    throw DataError("checkpoint has " + std::to_string(m.params.size()) + " parameters, model expects " +
                    std::to_string(entries.size()));
  }
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto& [name, file] = m.params[i];
    if (name != entries[i].first) throw DataError("checkpoint parameter " + name + " where " + entries[i].first + " expected");
    const Tensor loaded = load_tensor(dir / file);
    Tensor target = entries[i].second;
    if (loaded.shape() != target.shape()) {
      throw DataError("checkpoint parameter " + name + " has shape " + pa3::to_string(loaded.shape()) + ", expected " +
                      pa3::to_string(target.shape()));
    }
    std::copy(loaded.data().begin(), loaded.data().end(), target.mutable_data().begin());
  }
  if (extra) *extra = m.extra;
  return model;
}

std::string checkpoint_hash(const std::filesystem::path& dir) {
  const Manifest m = read_manifest(dir);
  std::vector<std::filesystem::path> files{dir / "manifest.txt", dir / m.vocab};
  for (const auto& [name, file] : m.params) files.push_back(dir / file);

  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
  std::vector<char> buf(1 << 16);
  for (const auto& path : files) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
      EVP_MD_CTX_free(ctx);
      throw DataError("checkpoint file missing: " + path.string());
    }
    while (in.read(buf.data(), static_cast<std::streamsize>(buf.size())) || in.gcount() > 0) {
      EVP_DigestUpdate(ctx, buf.data(), static_cast<std::size_t>(in.gcount()));
    }
  }
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx, digest, &len);
  EVP_MD_CTX_free(ctx);
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(hex[digest[i] >> 4]);
    out.push_back(hex[digest[i] & 15]);
  }
  return out;
}

}  // namespace pa3::seq2seq
