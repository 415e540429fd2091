#include <gtest/gtest.h>

#include <openssl/evp.h>

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "pa3/errors.hpp"
#include "../support/fixtures.hpp"
#include "pa3/personality.hpp"
#include "pa3/traits.hpp"

using namespace pa3;
using namespace pa3::personality;
using pa3::testing::synth_samples;
using pa3::testing::tiny_config;
using pa3::testing::tiny_model;

namespace {

std::string sha256_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  const std::string data = ss.str();
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr);
  std::ostringstream hex;
  for (unsigned int i = 0; i < len; ++i) hex << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(digest[i]);
  return hex.str();
}

std::vector<double> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

}  // namespace

TEST(Templates, ExactStrings) {
  EXPECT_EQ(trait_to_template(Trait::kOpenness).template_text,
            "The speaker has high openness trait. They embrace new ideas, are curious about the world, and are often "
            "drawn to creative and unconventional pursuits.");
  EXPECT_EQ(trait_to_template(Trait::kNeuroticism).template_text,
            "The speaker has high neuroticism trait. They have a greater tendency for emotional instability, anxiety, "
            "and a propensity to experience negative emotions such as fear, sadness, and anger.");
  std::set<std::string> distinct;
  for (Trait t : kAllTraits) {
    EXPECT_EQ(trait_to_template(t).trait, t);
    distinct.insert(trait_to_template(t).template_text);
  }
  EXPECT_EQ(distinct.size(), kTraitCount);
}

TEST(Templates, RegistryAssetIsPinned) {
  const std::filesystem::path asset = std::filesystem::path(PA3_ASSET_DIR) / "persona_templates.txt";
  EXPECT_EQ(sha256_file(asset), "4b9eebc50933401cb3ed33481312106f7234e9aab5b4d0b6f0e5cf3410406778");
  EXPECT_NO_THROW(verify_template_registry(asset));
  pa3::testing::ScratchDir dir("registry");
  std::ifstream in(asset);
  std::stringstream ss;
  ss << in.rdbuf();
  std::string text = ss.str();
  text[text.find("curious")] = 'C';
  std::ofstream(dir.path / "bad.txt") << text;
  EXPECT_THROW(verify_template_registry(dir.path / "bad.txt"), DataError);
}

TEST(Traits, TagsAndWords) {
  EXPECT_EQ(parse_trait("OPN"), Trait::kOpenness);
  EXPECT_EQ(parse_trait("neuroticism"), Trait::kNeuroticism);
  EXPECT_FALSE(parse_trait("MBTI"));
  for (Trait t : kAllTraits) EXPECT_EQ(parse_trait(trait_tag(t)), t);
}

TEST(Classifier, ZeroedHeadIsUniform) {
  const auto samples = synth_samples(20);
  auto m = tiny_model(samples);
  m.zero_classifier_head();
  const auto d = classify_trait(m, samples[0]);
  for (double p : d.probs) EXPECT_NEAR(p, 0.2, 1e-12);
}

TEST(Classifier, DistributionSumsToOne) {
  const auto samples = synth_samples(100, 99);
  const auto m = tiny_model(samples);
  for (const auto& s : samples) {
    const auto d = classify_trait(m, s);
    double total = 0.0;
    for (double p : d.probs) {
      EXPECT_GE(p, 0.0);
      total += p;
    }
    EXPECT_NEAR(total, 1.0, 1e-9);
  }
}

TEST(Classifier, EmptyContextIsContractError) {
  const auto samples = synth_samples(20);
  const auto m = tiny_model(samples);
  corpus::DialogueSample empty{{}, "maya", "x", std::nullopt};
  EXPECT_THROW(classify_trait(m, empty), ContractError);
}

TEST(Classifier, ArgmaxInvariantUnderPositiveScaling) {
  Rng rng(3);
  for (int i = 0; i < 100; ++i) {
    std::vector<double> logits(5);
    for (auto& x : logits) x = rng.uniform(-3, 3);
    const Tensor l = Tensor::from({1, 5}, logits);
    const Trait base = TraitDistribution::from(softmax_rows(l)).argmax();
    for (double c : {0.01, 0.5, 3.0, 100.0}) EXPECT_EQ(TraitDistribution::from(softmax_rows(l * c)).argmax(), base);
  }
  TraitDistribution tie;
  tie.probs = {0.3, 0.3, 0.2, 0.1, 0.1};
  EXPECT_EQ(tie.argmax(), Trait::kOpenness);
}

TEST(Persona, SoftOneHotEqualsHard) {
  const auto samples = synth_samples(20);
  const auto m = tiny_model(samples);
  const Tensor bank = m.trait_encodings();
  for (Trait t : kAllTraits) {
    std::vector<double> hot(5, 0.0);
    hot[index_of(t)] = 1.0;
    const auto soft = values(persona_encoding(bank, Tensor::from({1, 5}, hot), 4).rows);
    const auto hard = values(persona_encoding(bank, t, 4).rows);
    for (std::size_t i = 0; i < soft.size(); ++i) EXPECT_NEAR(soft[i], hard[i], 1e-9);
  }
}

TEST(Persona, UniformIsMeanOfPooledVectors) {
  const auto samples = synth_samples(20);
  const auto m = tiny_model(samples);
  const Tensor bank = m.trait_encodings();
  const auto p = persona_encoding(bank, Tensor::full({1, 5}, 0.2), 3);
  EXPECT_EQ(p.length(), 3u);
  const auto mean = values(mean_rows(bank));
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t j = 0; j < 16; ++j) EXPECT_NEAR(p.rows.at({r, j}), mean[j], 1e-12);
}

TEST(Persona, BroadcastRowsIdenticalAndNonEmpty) {
  const auto samples = synth_samples(20);
  const auto m = tiny_model(samples);
  const Tensor bank = m.trait_encodings();
  const auto p = persona_encoding(bank, Trait::kAgreeableness, 6);
  for (std::size_t r = 1; r < 6; ++r)
    for (std::size_t j = 0; j < 16; ++j) EXPECT_EQ(p.rows.at({r, j}), p.rows.at({0, j}));
  EXPECT_THROW(persona_encoding(bank, Trait::kAgreeableness, 0), ContractError);
  EXPECT_THROW(persona_encoding(bank, Tensor::full({1, 5}, 0.2), 0), ContractError);
}

TEST(Persona, StraightThroughForwardIsOneHot) {
  const auto samples = synth_samples(20);
  const auto m = tiny_model(samples);
  const Tensor bank = m.trait_encodings();
  const Tensor probs = Tensor::from({1, 5}, {0.1, 0.5, 0.2, 0.1, 0.1});
  const auto st = values(persona_encoding(bank, probs, 2, true).rows);
  const auto hard = values(persona_encoding(bank, Trait::kConscientiousness, 2).rows);
  for (std::size_t i = 0; i < st.size(); ++i) EXPECT_NEAR(st[i], hard[i], 1e-12);
}

TEST(PseudoTask, FrozenOneHotMatchesSupervisedLoss) {
  const auto samples = synth_samples(10);
  const auto m = tiny_model(samples);
  const double frozen = pseudo_task_loss(m, samples, Trait::kOpenness).item();
  const Tensor bank = m.trait_encodings();
  double supervised = 0.0;
  for (const auto& s : samples) {
    const auto ctx = m.serialize_context(s);
    const auto persona = persona_encoding(bank, Trait::kOpenness, ctx.ids.size());
    supervised += seq2seq::teacher_forced_loss(m, m.encode_fused(ctx.ids, &persona), s).item();
  }
  EXPECT_NEAR(frozen, supervised / static_cast<double>(samples.size()), 1e-12);
}

TEST(PseudoTask, NeverReadsHiddenTraits) {
  const auto samples = synth_samples(10);
  const auto m = tiny_model(samples);
  const auto blind = corpus::withhold_traits(samples);
  EXPECT_EQ(pseudo_task_loss(m, samples).item(), pseudo_task_loss(m, blind).item());
}

TEST(PseudoTask, LossHalvesOverTwoHundredSteps) {
  const auto samples = synth_samples(50);
  auto m = tiny_model(samples);
  seq2seq::AdamW opt(pa3::testing::fast_train(1));
  const double initial = pseudo_task_loss(m, samples).item();
  Rng rng(13);
  std::vector<std::size_t> order(samples.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::size_t cursor = samples.size();
  for (int step = 0; step < 200; ++step) {
    if (cursor + 4 > samples.size()) {
      rng.shuffle(std::span<std::size_t>(order));
      cursor = 0;
    }
    std::vector<corpus::DialogueSample> batch;
    for (int k = 0; k < 4; ++k) batch.push_back(samples[order[cursor++]]);
    const double loss = pseudo_task_step(m, opt, batch);
    EXPECT_TRUE(std::isfinite(loss));
  }
  const double final_loss = pseudo_task_loss(m, samples).item();
  EXPECT_LT(final_loss, 0.5 * initial) << initial << " -> " << final_loss;
}

TEST(PseudoTask, ClassifierReceivesGradient) {
  const auto samples = synth_samples(10);
  auto cfg = tiny_config();
  cfg.trait_selection = seq2seq::TraitSelection::kSoft;
  auto m = tiny_model(samples, cfg);
  const std::span<const corpus::DialogueSample> batch(samples.data(), 2);
  m.parameters().zero_grad();
  pseudo_task_loss(m, batch).backward();
  Tensor bias = m.parameters().get("classifier.bias");
  Tensor weight = m.parameters().get("classifier.weight");
  double wnorm = 0.0;
  for (double g : weight.grad()) wnorm += g * g;
  EXPECT_GT(wnorm, 0.0);
  // finite-difference probe on one logit offset
  const double analytic = bias.grad()[1];
  const double h = 1e-6;
  NoGradGuard guard;
  bias.mutable_data()[1] += h;
  const double up = pseudo_task_loss(m, batch).item();
  bias.mutable_data()[1] -= 2 * h;
  const double down = pseudo_task_loss(m, batch).item();
  bias.mutable_data()[1] += h;
  const double numeric = (up - down) / (2 * h);
  EXPECT_NE(analytic, 0.0);
  EXPECT_NEAR(analytic, numeric, 1e-6 + 1e-4 * std::abs(numeric));
}

TEST(Generate, ForcedTraitBypassesClassifier) {
  const auto samples = synth_samples(20);
  const auto m = tiny_model(samples);
  GenerateOptions o;
  o.forced_trait = Trait::kOpenness;
  EXPECT_EQ(two_phase_generate(m, samples[0], o).trait, Trait::kOpenness);
  const auto free = two_phase_generate(m, samples[0]);
  ASSERT_TRUE(free.trait);
  EXPECT_EQ(*free.trait, classify_trait(m, samples[0]).argmax());
}

TEST(Generate, NoneIgnoresTraitChoice) {
  const auto samples = synth_samples(20);
  auto m = tiny_model(samples, tiny_config(fusion::Strategy::kNone));
  pipeline::train_model(m, samples, pa3::testing::fast_train(1));
  for (const auto& s : samples) {
    const auto base = two_phase_generate(m, s);
    EXPECT_FALSE(base.trait);
    for (Trait t : kAllTraits) {
      GenerateOptions o;
      o.forced_trait = t;
      EXPECT_EQ(two_phase_generate(m, s, o).tokens, base.tokens);
    }
  }
}

TEST(Generate, Deterministic) {
  const auto samples = synth_samples(20);
  const auto a = tiny_model(samples), b = tiny_model(samples);
  for (const auto& s : samples) EXPECT_EQ(two_phase_generate(a, s).tokens, two_phase_generate(b, s).tokens);
}

TEST(Identify, RowsSumToHundred) {
  const auto samples = synth_samples(60);
  const auto m = tiny_model(samples);
  const auto report = identify(m, samples);
  EXPECT_EQ(report.total_labelled, 60u);
  for (const auto& [speaker, counts] : report.counts) {
    double total = 0.0;
    for (double p : report.row_percent(speaker)) total += p;
    EXPECT_NEAR(total, 100.0, 0.1);
  }
  std::ostringstream out;
  write_identify_table(out, report);
  EXPECT_NE(out.str().find("speaker accuracy"), std::string::npos);
  EXPECT_GE(report.speaker_accuracy(), 0.0);
  EXPECT_LE(report.speaker_accuracy(), 1.0);
}

TEST(Identify, ZeroedHeadSpreadsProbabilityEvenly) {
  const auto samples = synth_samples(30);
  auto m = tiny_model(samples);
  m.zero_classifier_head();
  for (const auto& s : samples) {
    for (double p : classify_trait(m, s).probs) EXPECT_NEAR(p, 0.2, 1e-12);
  }
  EXPECT_TRUE(identify(m, corpus::withhold_traits(samples)).labelled.empty());
}
