#include "pa3/corpus.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "pa3/errors.hpp"
#include "pa3/rng.hpp"

namespace pa3::corpus {

using nlohmann::ordered_json;

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    const std::size_t start = i;
    while (i < text.size() && !std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    if (i > start) out.emplace_back(text.substr(start, i - start));
  }
  return out;
}

std::string detokenize(std::span<const std::string> tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out.push_back(' ');
    out += tokens[i];
  }
  return out;
}

// ---------------------------------------------------------------------------
// JSONL

namespace {

const ordered_json& require_field(const ordered_json& obj, const char* field) {
  auto it = obj.find(field);
  if (it == obj.end()) throw DataError(std::string("missing field '") + field + "'");
  return *it;
}

std::string require_string(const ordered_json& obj, const char* field) {
  const auto& v = require_field(obj, field);
  if (!v.is_string()) throw DataError(std::string("field '") + field + "' must be a string");
  return v.get<std::string>();
}

}  // namespace

DialogueSample parse_sample(std::string_view json_line, TraitMode mode) {
  ordered_json obj;
  try {
    obj = ordered_json::parse(json_line);
  } catch (const ordered_json::parse_error& e) {
    throw DataError(std::string("invalid JSON: ") + e.what());
  }
  if (!obj.is_object()) throw DataError("record is not a JSON object");
  DialogueSample sample;
  const auto& turns = require_field(obj, "turns");
  if (!turns.is_array() || turns.empty()) throw DataError("field 'turns' must be a non-empty array");
  for (const auto& t : turns) {
    if (!t.is_object()) throw DataError("turn is not an object");
    DialogueTurn turn{require_string(t, "speaker"), require_string(t, "utterance")};
    if (turn.speaker.empty()) throw DataError("turn has an empty speaker");
    // Empty utterances are only accepted when the turn carries "empty_ok": true.
    const bool empty_ok = t.contains("empty_ok") && t["empty_ok"].is_boolean() && t["empty_ok"].get<bool>();
    if (turn.utterance.empty() && !empty_ok) throw DataError("turn of '" + turn.speaker + "' has an empty utterance");
    sample.turns.push_back(std::move(turn));
  }
  sample.target_speaker = require_string(obj, "target_speaker");
  if (sample.target_speaker.empty()) throw DataError("field 'target_speaker' is empty");
  sample.target_response = require_string(obj, "target_response");
  if (auto it = obj.find("hidden_trait"); it != obj.end() && !it->is_null()) {
    if (!it->is_string()) throw DataError("field 'hidden_trait' must be a string");
    const auto trait = parse_trait(it->get<std::string>());
    if (!trait) throw DataError("unknown hidden_trait '" + it->get<std::string>() + "'");
    if (mode == TraitMode::kKeep) sample.hidden_trait = trait;
  }
  return sample;
}

std::string to_json_line(const DialogueSample& sample) {
  ordered_json obj;
  obj["turns"] = ordered_json::array();
  for (const auto& t : sample.turns) {
    ordered_json turn;
    turn["speaker"] = t.speaker;
    turn["utterance"] = t.utterance;
    if (t.utterance.empty()) turn["empty_ok"] = true;
    obj["turns"].push_back(std::move(turn));
  }
  obj["target_speaker"] = sample.target_speaker;
  obj["target_response"] = sample.target_response;
  if (sample.hidden_trait) obj["hidden_trait"] = std::string(trait_tag(*sample.hidden_trait));
  return obj.dump();
}

LoadResult load_jsonl(const std::filesystem::path& path, TraitMode mode) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  LoadResult result;
  std::string line;
  std::size_t line_no = 0, records = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    ++records;
    try {
      result.samples.push_back(parse_sample(line, mode));
    } catch (const DataError& e) {
      result.rejected.push_back({line_no, e.what()});
      result.warnings.push_back(path.string() + ":" + std::to_string(line_no) + ": rejected: " + e.what());
    }
  }
  if (records == 0) result.warnings.push_back(path.string() + ": no records");
  if (records > 0 && result.rejected.size() * 10 > records) {
    std::ostringstream msg;
    msg << path.string() << ": " << result.rejected.size() << " of " << records << " lines rejected";
    for (const auto& issue : result.rejected) msg << "\n  line " << issue.line << ": " << issue.message;
    throw DataError(msg.str());
  }
  return result;
}

void write_jsonl(const std::filesystem::path& path, std::span<const DialogueSample> samples) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  for (const auto& s : samples) out << to_json_line(s) << '\n';
  if (!out) throw DataError("write failed for " + path.string());
}

std::vector<DialogueSample> withhold_traits(std::span<const DialogueSample> samples) {
  std::vector<DialogueSample> out(samples.begin(), samples.end());
  for (auto& s : out) s.hidden_trait.reset();
  return out;
}

// ---------------------------------------------------------------------------
// Vocabulary

Vocabulary::Vocabulary() {
  for (const char* t : {"<pad>", "<bos>", "<eos>", "<unk>"}) push(t);
  reserved_ = tokens_.size();
}

void Vocabulary::push(const std::string& token) {
  index_.emplace(token, tokens_.size());
  tokens_.push_back(token);
}

std::size_t Vocabulary::id(std::string_view token) const {
  auto it = index_.find(std::string(token));
  return it == index_.end() ? kUnk : it->second;
}

bool Vocabulary::contains(std::string_view token) const { return index_.count(std::string(token)) > 0; }

const std::string& Vocabulary::token(std::size_t id) const {
  if (id >= tokens_.size()) throw DataError("token id " + std::to_string(id) + " outside vocabulary");
  return tokens_[id];
}

std::vector<std::size_t> Vocabulary::encode(std::span<const std::string> tokens) const {
  std::vector<std::size_t> ids;
  ids.reserve(tokens.size());
  for (const auto& t : tokens) ids.push_back(id(t));
  return ids;
}

std::vector<std::string> Vocabulary::decode(std::span<const std::size_t> ids) const {
  std::vector<std::string> out;
  out.reserve(ids.size());
  for (auto i : ids) out.push_back(token(i));
  return out;
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << "reserved " << reserved_ << '\n';
  for (const auto& t : tokens_) out << t << '\n';
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::string header;
  std::size_t reserved = 0;
  if (!(in >> header >> reserved) || header != "reserved") throw DataError("bad vocabulary header in " + path.string());
  in.ignore(1);
  Vocabulary vocab;
  vocab.tokens_.clear();
  vocab.index_.clear();
  std::string line;
  while (std::getline(in, line)) vocab.push(line);
  if (vocab.tokens_.size() < 4 || vocab.tokens_[0] != "<pad>" || reserved > vocab.tokens_.size()) {
    throw DataError("vocabulary file " + path.string() + " is malformed");
  }
  vocab.reserved_ = reserved;
  return vocab;
}

Vocabulary build_vocab(std::span<const DialogueSample> samples, std::size_t min_freq,
                       std::span<const std::string> extra_text) {
  std::set<std::string> speakers;
  std::unordered_map<std::string, std::size_t> counts;
  auto count_text = [&](std::string_view text) {
    for (auto& tok : tokenize(text)) ++counts[tok];
  };
  for (const auto& s : samples) {
    for (const auto& t : s.turns) {
      speakers.insert(t.speaker);
      count_text(t.utterance);
    }
    speakers.insert(s.target_speaker);
    count_text(s.target_response);
  }
  for (const auto& text : extra_text) count_text(text);

  Vocabulary vocab;
  for (const auto& sp : speakers) vocab.push(speaker_tag(sp));
  vocab.reserved_ = vocab.tokens_.size();

  std::vector<std::pair<std::string, std::size_t>> ordered(counts.begin(), counts.end());
  std::sort(ordered.begin(), ordered.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  });
  for (const auto& [tok, c] : ordered) {
    if (c >= std::max<std::size_t>(min_freq, 1) && !vocab.contains(tok)) vocab.push(tok);
  }
  return vocab;
}

// ---------------------------------------------------------------------------
// Synthetic corpus

namespace {

using Lexicon = std::array<std::string_view, 4>;

// Every word appears verbatim (unpunctuated) in its trait's template.
constexpr std::array<Lexicon, kTraitCount> kLexicons{{
    {"embrace", "curious", "creative", "unconventional"},
    {"strong", "work", "ethic", "commitment"},
    {"thrive", "social", "energized", "enjoy"},
    {"prioritize", "harmonious", "maintain", "help"},
    {"emotional", "tendency", "negative", "greater"},
}};

struct Family {
  std::string_view question;
  std::string_view opener;
  std::string_view middle;
  std::string_view closer;
};

constexpr std::array<Family, 6> kFamilies{{
    {"kal ki party mein aa rahe ho ?", "party", "mein", "yaar"},
    {"exam ki tayyari kaisi hai ?", "exam", "ke", "bas"},
    {"aaj dinner pe kya plan hai ?", "dinner", "pe", "haan"},
    {"weekend trip pe chalein kya ?", "trip", "par", "chalo"},
    {"naya job kaisa lag raha hai ?", "job", "mein", "accha"},
    {"movie dekhne chaloge ?", "movie", "ke", "theek"},
}};

constexpr std::array<std::string_view, 5> kFillers{"yaar", "arre", "accha", "suno", "dekho"};
constexpr std::array<std::string_view, 5> kNames{"maya", "indravardhan", "sahil", "monisha", "rosesh"};

std::string speaker_name(std::size_t i) {
  return i < kNames.size() ? std::string(kNames[i]) : "speaker" + std::to_string(i + 1);
}

// Marker words are the two lexicon entries the response for this family does
// not use, so the response words never appear in the context.
std::string marked_utterance(Trait trait, std::size_t family, std::size_t speaker) {
  const auto& lex = kLexicons[index_of(trait)];
  std::string out(kFillers[speaker % kFillers.size()]);
  out += " main ";
  out += lex[(family + 2) % lex.size()];
  out += ' ';
  out += lex[(family + 3) % lex.size()];
  return out;
}

std::string response_for(Trait trait, std::size_t family) {
  const auto& lex = kLexicons[index_of(trait)];
  const auto& f = kFamilies[family];
  std::string out(f.opener);
  (((out += ' ') += lex[family % lex.size()]) += ' ') += f.middle;
  (((out += ' ') += lex[(family + 1) % lex.size()]) += ' ') += f.closer;
  return out;
}

std::optional<Trait> lexicon_trait(std::string_view word) {
  for (std::size_t t = 0; t < kTraitCount; ++t) {
    for (auto w : kLexicons[t]) {
      if (w == word) return static_cast<Trait>(t);
    }
  }
  return std::nullopt;
}

// Trait signalled by a marked turn, if the turn carries markers.
std::optional<Trait> turn_trait(const DialogueTurn& turn) {
  for (const auto& tok : tokenize(turn.utterance)) {
    if (auto t = lexicon_trait(tok)) return t;
  }
  return std::nullopt;
}

}  // namespace

std::span<const std::string_view> trait_lexicon(Trait trait) { return kLexicons.at(index_of(trait)); }

std::vector<std::size_t> trait_token_positions(std::span<const std::string> response_tokens) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < response_tokens.size(); ++i) {
    if (lexicon_trait(response_tokens[i])) out.push_back(i);
  }
  return out;
}

SynthCorpus synth_corpus(const SynthConfig& config) {
  if (config.samples < 10) throw ConfigError("synth_corpus: need at least 10 samples, got " + std::to_string(config.samples));
  if (config.speakers < 2) throw ConfigError("synth_corpus: need at least 2 speakers, got " + std::to_string(config.speakers));
  Rng rng(config.seed);
  SynthCorpus corpus;

  std::array<Trait, kTraitCount> order = kAllTraits;
  rng.shuffle(std::span<Trait>(order));
  std::vector<std::string> names;
  std::vector<Trait> traits;
  for (std::size_t i = 0; i < config.speakers; ++i) {
    names.push_back(speaker_name(i));
    traits.push_back(order[i % kTraitCount]);
    corpus.speaker_traits[names.back()] = traits.back();
  }

  corpus.samples.reserve(config.samples);
  for (std::size_t k = 0; k < config.samples; ++k) {
    const std::size_t family = rng.below(kFamilies.size());
    const std::size_t a = rng.below(names.size());
    std::size_t b;
    do {
      b = rng.below(names.size());
    } while (b == a || traits[b] == traits[a]);
    std::size_t asker = 0;
    while (names.size() > 2 && (asker == a || asker == b)) ++asker;

    DialogueSample sample;
    sample.turns.push_back({names[asker], std::string(kFamilies[family].question)});
    sample.turns.push_back({names[a], marked_utterance(traits[a], family, a)});
    sample.turns.push_back({names[b], marked_utterance(traits[b], family, b)});
    const std::size_t target = rng.below(2) == 0 ? a : b;
    sample.target_speaker = names[target];
    sample.target_response = response_for(traits[target], family);
    sample.hidden_trait = traits[target];
    corpus.samples.push_back(std::move(sample));
  }
  return corpus;
}

OracleReport run_scripted_oracles(std::span<const DialogueSample> samples) {
  OracleReport report;
  // Bigram table over gold responses: previous token -> next token counts.
  std::map<std::string, std::map<std::string, std::size_t>> bigrams;
  for (const auto& s : samples) {
    const auto toks = tokenize(s.target_response);
    for (std::size_t i = 0; i < toks.size(); ++i) ++bigrams[i ? toks[i - 1] : "<bos>"][toks[i]];
  }
  auto bigram_guess = [&](const std::string& prev) {
    const auto& next = bigrams[prev];
    std::string best;
    std::size_t best_count = 0;
    for (const auto& [tok, c] : next) {
      if (c > best_count) best = tok, best_count = c;
    }
    return best;
  };

  std::size_t bigram_hits = 0, context_hits = 0, aware_hits = 0, first_target = 0, with_pair = 0;
  std::array<std::size_t, kTraitCount> histogram{};
  for (const auto& s : samples) {
    if (!s.hidden_trait) throw ContractError("run_scripted_oracles needs hidden traits");
    ++histogram[index_of(*s.hidden_trait)];
    const auto toks = tokenize(s.target_response);

    std::vector<std::pair<std::string, Trait>> marked;
    for (const auto& t : s.turns) {
      if (auto tr = turn_trait(t)) marked.emplace_back(t.speaker, *tr);
    }
    if (marked.size() >= 2) {
      ++with_pair;
      if (marked.front().first == s.target_speaker) ++first_target;
    }

    std::size_t family = 0;
    for (std::size_t f = 0; f < kFamilies.size(); ++f) {
      if (!toks.empty() && toks.front() == kFamilies[f].opener) family = f;
    }
    const auto aware = tokenize(response_for(*s.hidden_trait, family));
    const auto guessed = marked.empty() ? std::vector<std::string>{}
                                        : tokenize(response_for(marked.front().second, family));
    for (auto pos : trait_token_positions(toks)) {
      ++report.trait_tokens;
      if (bigram_guess(pos ? toks[pos - 1] : "<bos>") == toks[pos]) ++bigram_hits;
      if (pos < guessed.size() && guessed[pos] == toks[pos]) ++context_hits;
      if (pos < aware.size() && aware[pos] == toks[pos]) ++aware_hits;
    }
  }
  const double n_tok = static_cast<double>(std::max<std::size_t>(report.trait_tokens, 1));
  report.blind_bigram_accuracy = static_cast<double>(bigram_hits) / n_tok;
  report.blind_context_accuracy = static_cast<double>(context_hits) / n_tok;
  report.trait_aware_accuracy = static_cast<double>(aware_hits) / n_tok;
  if (with_pair) {
    const double expected = static_cast<double>(with_pair) / 2.0;
    const double d1 = static_cast<double>(first_target) - expected;
    report.chi_square_pair = 2.0 * d1 * d1 / expected;
  }
  const double expected = static_cast<double>(samples.size()) / static_cast<double>(kTraitCount);
  for (auto c : histogram) report.chi_square_traits += (static_cast<double>(c) - expected) * (static_cast<double>(c) - expected) / expected;
  return report;
}

}  // namespace pa3::corpus
