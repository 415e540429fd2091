#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "pa3/errors.hpp"
#include "pa3/corpus.hpp"

using namespace pa3;
using namespace pa3::corpus;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("pa3_corpus_" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()) +
                                        "_" + ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream(p, std::ios::binary) << text;
}

std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

const char* kGood = R"({"turns":[{"speaker":"a","utterance":"hi there"}],"target_speaker":"b","target_response":"hello"})";

DialogueSample sample_with(std::string text) {
  return {{{"x", text}}, "y", "ok", std::nullopt};
}

}  // namespace

TEST(Tokenize, WhitespaceOnly) {
  EXPECT_EQ(tokenize("  a  b\tc\n"), (std::vector<std::string>{"a", "b", "c"}));
  EXPECT_TRUE(tokenize("   ").empty());
  const std::vector<std::string> toks{"kya", "haal", "hai", "?"};
  EXPECT_EQ(detokenize(toks), "kya haal hai ?");
}

TEST(Loader, EmptyFileGivesEmptyListAndWarning) {
  TempDir dir;
  write_text(dir.path / "empty.jsonl", "");
  const auto r = load_jsonl(dir.path / "empty.jsonl");
  EXPECT_TRUE(r.samples.empty());
  EXPECT_EQ(r.warnings.size(), 1u);
}

TEST(Loader, MissingTargetSpeakerRejectsOnlyThatLine) {
  TempDir dir;
  std::string text;
  for (int i = 0; i < 10; ++i) text += std::string(kGood) + "\n";
  text += R"({"turns":[{"speaker":"a","utterance":"hi"}],"target_response":"x"})" "\n";
  write_text(dir.path / "c.jsonl", text);
  const auto r = load_jsonl(dir.path / "c.jsonl");
  EXPECT_EQ(r.samples.size(), 10u);
  ASSERT_EQ(r.rejected.size(), 1u);
  EXPECT_EQ(r.rejected[0].line, 11u);
  EXPECT_NE(r.rejected[0].message.find("target_speaker"), std::string::npos);
  EXPECT_EQ(r.warnings.size(), 1u);
}

TEST(Loader, TooManyRejectionsIsFatal) {
  TempDir dir;
  write_text(dir.path / "bad.jsonl", std::string(kGood) + "\nnot json\n" + kGood + "\n");
  EXPECT_THROW(load_jsonl(dir.path / "bad.jsonl"), DataError);
  EXPECT_THROW(load_jsonl(dir.path / "missing.jsonl"), DataError);
}

TEST(Loader, FieldValidation) {
  EXPECT_THROW(parse_sample(R"({"turns":[],"target_speaker":"b","target_response":"x"})"), DataError);
  EXPECT_THROW(parse_sample(R"({"turns":[{"speaker":"","utterance":"u"}],"target_speaker":"b","target_response":"x"})"),
               DataError);
  EXPECT_THROW(parse_sample(R"({"turns":[{"speaker":"a","utterance":""}],"target_speaker":"b","target_response":"x"})"),
               DataError);
  const auto ok = parse_sample(
      R"({"turns":[{"speaker":"a","utterance":"","empty_ok":true}],"target_speaker":"b","target_response":"x"})");
  EXPECT_TRUE(ok.turns[0].utterance.empty());
  EXPECT_THROW(parse_sample(R"({"turns":[{"speaker":"a","utterance":"u"}],"target_speaker":"b","target_response":"x",)"
                            R"("hidden_trait":"XYZ"})"),
               DataError);
}

TEST(Loader, WithholdModeDropsTraits) {
  const std::string line =
      R"({"turns":[{"speaker":"a","utterance":"u"}],"target_speaker":"b","target_response":"x","hidden_trait":"NEU"})";
  EXPECT_EQ(parse_sample(line).hidden_trait, Trait::kNeuroticism);
  EXPECT_FALSE(parse_sample(line, TraitMode::kWithhold).hidden_trait.has_value());
  const auto corpus = synth_corpus({13, 20, 5});
  for (const auto& s : withhold_traits(corpus.samples)) EXPECT_FALSE(s.hidden_trait);
}

TEST(Loader, RoundTripIsByteExact) {
  TempDir dir;
  auto corpus = synth_corpus({5, 50, 4}).samples;
  corpus[0].turns.push_back({"zed", ""});
  corpus[1].target_response = "quote \" and \\ back";
  write_jsonl(dir.path / "a.jsonl", corpus);
  const auto r = load_jsonl(dir.path / "a.jsonl");
  EXPECT_TRUE(r.warnings.empty());
  EXPECT_EQ(r.samples, corpus);
  write_jsonl(dir.path / "b.jsonl", r.samples);
  EXPECT_EQ(read_text(dir.path / "a.jsonl"), read_text(dir.path / "b.jsonl"));
}

TEST(Vocab, MinFreq) {
  const std::vector<DialogueSample> s{sample_with("a a b")};
  const auto v1 = build_vocab(s, 1);
  EXPECT_TRUE(v1.contains("a"));
  EXPECT_TRUE(v1.contains("b"));
  const auto v2 = build_vocab(s, 2);
  EXPECT_TRUE(v2.contains("a"));
  EXPECT_EQ(v2.id("b"), Vocabulary::kUnk);
}

TEST(Vocab, ReservedLayoutAndOrdering) {
  const std::vector<DialogueSample> s{{{{"zoe", "c b b a a a"}, {"adam", "b"}}, "mo", "c", std::nullopt}};
  const auto v = build_vocab(s, 1);
  EXPECT_EQ(v.token(0), "<pad>");
  EXPECT_EQ(v.token(1), "<bos>");
  EXPECT_EQ(v.token(2), "<eos>");
  EXPECT_EQ(v.token(3), "<unk>");
  EXPECT_EQ(v.token(4), "<sp:adam>");
  EXPECT_EQ(v.token(5), "<sp:mo>");
  EXPECT_EQ(v.token(6), "<sp:zoe>");
  EXPECT_TRUE(v.is_reserved(6));
  // a and b both occur three times: lexicographic tie-break; then c twice
  EXPECT_EQ(v.token(7), "a");
  EXPECT_EQ(v.token(8), "b");
  EXPECT_EQ(v.token(9), "c");
}

TEST(Vocab, DeterministicAndRoundTrips) {
  TempDir dir;
  const auto corpus = synth_corpus({13, 100, 5}).samples;
  const auto a = build_vocab(corpus, 1), b = build_vocab(corpus, 1);
  ASSERT_EQ(a.size(), b.size());
  std::vector<std::size_t> ids;
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a.token(i), b.token(i));
    ids.push_back(i);
  }
  const auto tokens = a.decode(ids);
  EXPECT_EQ(a.encode(tokens), ids);
  a.save(dir.path / "v.txt");
  const auto c = Vocabulary::load(dir.path / "v.txt");
  EXPECT_EQ(c.size(), a.size());
  EXPECT_EQ(c.decode(ids), tokens);
  EXPECT_THROW(a.token(a.size()), DataError);
}

TEST(Synth, SameSeedSameCorpus) {
  const auto a = synth_corpus({13, 200, 5}), b = synth_corpus({13, 200, 5});
  EXPECT_EQ(a.samples, b.samples);
  EXPECT_EQ(a.speaker_traits, b.speaker_traits);
  const auto c = synth_corpus({14, 200, 5});
  EXPECT_NE(a.samples, c.samples);
}

TEST(Synth, RejectsBadSizes) {
  EXPECT_THROW(synth_corpus({13, 9, 5}), ConfigError);
  EXPECT_THROW(synth_corpus({13, 100, 1}), ConfigError);
  EXPECT_NO_THROW(synth_corpus({13, 10, 2}));
}

TEST(Synth, SpeakersKeepOneTrait) {
  const auto c = synth_corpus({13, 300, 5});
  std::set<Trait> distinct;
  for (const auto& [name, t] : c.speaker_traits) distinct.insert(t);
  EXPECT_EQ(distinct.size(), 5u);
  for (const auto& s : c.samples) {
    ASSERT_TRUE(s.hidden_trait);
    EXPECT_EQ(*s.hidden_trait, c.speaker_traits.at(s.target_speaker));
    EXPECT_GE(s.turns.size(), 1u);
    EXPECT_FALSE(s.target_response.empty());
  }
}

TEST(Synth, SharedContextsDifferInResponse) {
  const auto c = synth_corpus({13, 500, 5});
  std::map<std::string, std::set<std::string>> responses;
  for (const auto& s : c.samples) {
    std::string key;
    for (const auto& t : s.turns) key += t.speaker + ":" + t.utterance + "|";
    responses[key].insert(s.target_response);
  }
  std::size_t ambiguous = 0;
  for (const auto& [turns, r] : responses) ambiguous += r.size() > 1 ? 1 : 0;
  EXPECT_GT(ambiguous, responses.size() / 2);
}

TEST(Synth, ResponseWordsAbsentFromContext) {
  for (const auto& s : synth_corpus({13, 300, 5}).samples) {
    const auto resp = tokenize(s.target_response);
    for (auto pos : trait_token_positions(resp)) {
      for (const auto& t : s.turns) {
        for (const auto& tok : tokenize(t.utterance)) EXPECT_NE(tok, resp[pos]);
      }
    }
  }
}

TEST(Synth, OraclesAndChiSquare) {
  const auto c = synth_corpus({13, 1000, 5});
  const auto r = run_scripted_oracles(c.samples);
  EXPECT_EQ(r.trait_tokens, 2000u);
  EXPECT_LE(r.blind_bigram_accuracy, 0.55);
  EXPECT_LE(r.blind_context_accuracy, 0.60);
  EXPECT_EQ(r.trait_aware_accuracy, 1.0);
  // df=1 and df=4 critical values at p = 0.001
  EXPECT_LT(r.chi_square_pair, 10.83);
  EXPECT_LT(r.chi_square_traits, 18.47);
  EXPECT_THROW(run_scripted_oracles(withhold_traits(c.samples)), ContractError);
}
