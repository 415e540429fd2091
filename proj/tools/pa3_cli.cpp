// pa3: synth, train, identify, evaluate and generate from the command line.

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "pa3/config.hpp"
#include "pa3/corpus.hpp"
#include "pa3/errors.hpp"
#include "pa3/metrics.hpp"
#include "pa3/personality.hpp"
#include "pa3/pipeline.hpp"
#include "pa3/seq2seq.hpp"

namespace {

using namespace pa3;

enum ExitCode { kOk = 0, kFailure = 1, kConfig = 2, kData = 3, kNumeric = 4 };

void setup_logging() {
  auto logger = spdlog::stderr_color_mt("pa3");
  spdlog::set_default_logger(logger);
  spdlog::set_pattern("[%l] %v");
  const char* env = std::getenv("PA3_LOG");
  const std::string level = env ? env : "info";
  if (level == "error") spdlog::set_level(spdlog::level::err);
  else if (level == "debug") spdlog::set_level(spdlog::level::debug);
  else if (level == "info") spdlog::set_level(spdlog::level::info);
  else {
    spdlog::set_level(spdlog::level::info);
    spdlog::warn("PA3_LOG='{}' not one of error, info, debug; using info", level);
  }
}

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string strategy;
  std::vector<std::string> checkpoints;
  std::string out;
  bool withhold = false;
  std::vector<std::string> overrides;
};

config::RunConfig resolve(const Common& c) {
  config::RunConfig run = c.config.empty() ? config::RunConfig{} : config::load(c.config);
  for (const auto& kv : c.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects section.key=value, got '" + kv + "'");
    config::apply(run, kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (c.seed) {
    run.train.seed = *c.seed;
    run.synth.seed = *c.seed;
  }
  if (!c.strategy.empty()) {
    if (c.strategy == "ot") {
      run.model.strategy = fusion::Strategy::kPa3Full;
      run.model.persona_text = seq2seq::PersonaText::kTraitWord;
    } else {
      run.model.strategy = fusion::parse_strategy(c.strategy);
    }
  }
  if (!c.out.empty()) run.paths.out = c.out;
  run.validate();
  return run;
}

std::vector<corpus::DialogueSample> load_corpus(const std::filesystem::path& path, bool withhold) {
  if (path.empty()) throw ConfigError("no corpus path given (--corpus or paths.*_corpus)");
  auto result = corpus::load_jsonl(path, withhold ? corpus::TraitMode::kWithhold : corpus::TraitMode::kKeep);
  for (const auto& w : result.warnings) spdlog::warn("{}: {}", path.string(), w);
  if (result.samples.empty()) throw DataError(path.string() + ": no usable samples");
  return std::move(result.samples);
}

int cmd_synth(const Common& common, std::size_t samples, std::size_t speakers, std::size_t test_samples,
              const std::string& test_out) {
  auto run = resolve(common);
  if (samples) run.synth.samples = samples;
  if (speakers) run.synth.speakers = speakers;
  if (run.paths.out.empty()) throw ConfigError("synth needs --out");
  if (test_samples >= run.synth.samples) throw ConfigError("--test-samples must be smaller than --samples");
  if (test_samples && test_out.empty()) throw ConfigError("--test-samples needs --test-out");

  const auto synth = corpus::synth_corpus(run.synth);
  const std::size_t n_train = synth.samples.size() - test_samples;
  const std::span<const corpus::DialogueSample> all(synth.samples);
  corpus::write_jsonl(run.paths.out, all.first(n_train));
  if (test_samples) corpus::write_jsonl(test_out, all.subspan(n_train));

  const auto oracle = corpus::run_scripted_oracles(all);
  std::cout << "wrote " << n_train << " samples to " << run.paths.out.string() << '\n';
  if (test_samples) std::cout << "wrote " << test_samples << " samples to " << test_out << '\n';
  std::cout << "speaker traits:";
  for (const auto& [speaker, trait] : synth.speaker_traits) std::cout << ' ' << speaker << '=' << trait_tag(trait);
  std::cout << '\n'
            << "chi2 first-vs-second target (df=1): " << oracle.chi_square_pair << '\n'
            << "chi2 target trait vs uniform (df=4): " << oracle.chi_square_traits << '\n'
            << "trait-token oracles: blind bigram " << 100.0 * oracle.blind_bigram_accuracy << "%, blind context "
            << 100.0 * oracle.blind_context_accuracy << "%, trait-aware " << 100.0 * oracle.trait_aware_accuracy
            << "% over " << oracle.trait_tokens << " tokens\n";
  return kOk;
}

int cmd_train(const Common& common, const std::string& corpus_path, const std::string& resume) {
  auto run = resolve(common);
  if (!corpus_path.empty()) run.paths.train_corpus = corpus_path;
  if (run.paths.out.empty()) run.paths.out = run.paths.checkpoint;
  if (run.paths.out.empty()) throw ConfigError("train needs --out (checkpoint directory)");
  // Training never sees trait labels, with or without --withhold-traits.
  const auto samples = load_corpus(run.paths.train_corpus, true);

  std::size_t first_epoch = 0;
  std::optional<seq2seq::DialogueModel> model;
  if (!resume.empty()) {
    std::map<std::string, std::string> extra;
    model.emplace(seq2seq::load_checkpoint(resume, &extra));
    first_epoch = extra.count("epochs_done") ? std::stoul(extra.at("epochs_done")) : 0;
    spdlog::info("resuming {} at epoch {}", resume, first_epoch);
  } else {
    run.model.vocab_size = 0;
    model.emplace(run.model, pipeline::vocabulary_for(samples, run.min_freq), run.train.seed);
  }
  spdlog::info("strategy {} with {} parameters over {} samples", pipeline::strategy_label(model->config()),
               model->parameters().scalar_count(), samples.size());

  std::filesystem::create_directories(run.paths.out);
  std::ofstream log(run.paths.out / "train_log.jsonl", first_epoch ? std::ios::app : std::ios::trunc);
  const auto result = pipeline::train_model(*model, samples, run.train, first_epoch, &log);

  std::ostringstream lr;
  lr << run.train.learning_rate;
  seq2seq::save_checkpoint(run.paths.out, *model,
                           {{"epochs_done", std::to_string(run.train.epochs)},
                            {"seed", std::to_string(run.train.seed)},
                            {"learning_rate", lr.str()}});
  if (!result.epoch_losses.empty()) std::cout << "final epoch loss " << result.epoch_losses.back() << '\n';
  std::cout << "checkpoint " << run.paths.out.string() << " sha256 " << seq2seq::checkpoint_hash(run.paths.out) << '\n';
  return kOk;
}

seq2seq::DialogueModel open_checkpoint(const std::string& path) {
  if (path.empty()) throw ConfigError("--checkpoint is required");
  if (!std::filesystem::exists(std::filesystem::path(path) / "manifest.txt")) {
    throw DataError("checkpoint not found: " + path);
  }
  return seq2seq::load_checkpoint(path);
}

int cmd_identify(const Common& common, const std::string& corpus_path) {
  auto run = resolve(common);
  if (common.checkpoints.size() != 1) throw ConfigError("identify takes exactly one --checkpoint");
  const auto model = open_checkpoint(common.checkpoints.front());
  const auto samples = load_corpus(corpus_path.empty() ? run.paths.test_corpus : std::filesystem::path(corpus_path), common.withhold);
  const auto report = personality::identify(model, samples);
  personality::write_identify_table(std::cout, report);
  if (!run.paths.out.empty()) {
    std::ofstream out(run.paths.out);
    personality::write_identify_table(out, report);
  }
  return kOk;
}

int cmd_evaluate(const Common& common, const std::string& corpus_path, const std::string& plot_path) {
  auto run = resolve(common);
  if (common.checkpoints.empty()) throw ConfigError("evaluate needs at least one --checkpoint");
  const auto samples = load_corpus(corpus_path.empty() ? run.paths.test_corpus : std::filesystem::path(corpus_path), common.withhold);
  std::vector<seq2seq::DialogueModel> models;
  models.reserve(common.checkpoints.size());
  for (const auto& ckpt : common.checkpoints) models.push_back(open_checkpoint(ckpt));
  std::vector<metrics::NamedDecoder> decoders;
  for (const auto& m : models) {
    std::string name = pipeline::strategy_label(m.config());
    for (const auto& d : decoders) {
      if (d.name == name) throw ConfigError("two checkpoints share strategy " + name);
    }
    decoders.push_back({name, pipeline::make_decoder(m, run.beam_width)});
  }
  const auto report = metrics::evaluate(decoders, samples, "none");
  metrics::write_table(std::cout, report);
  if (!run.paths.out.empty()) {
    std::ofstream table(run.paths.out.string() + ".txt");
    metrics::write_table(table, report);
    std::ofstream json(run.paths.out.string() + ".jsonl");
    metrics::write_json_lines(json, report);
  }
  if (!plot_path.empty()) {
    std::ofstream plot(plot_path);
    if (!plot) throw DataError("cannot write " + plot_path);
    metrics::write_plot_data(plot, report);
  }
  return kOk;
}

int cmd_generate(const Common& common, const std::string& prompts, const std::string& force_trait) {
  auto run = resolve(common);
  if (common.checkpoints.size() != 1) throw ConfigError("generate takes exactly one --checkpoint");
  const auto model = open_checkpoint(common.checkpoints.front());
  personality::GenerateOptions options;
  options.beam_width = run.beam_width;
  if (!force_trait.empty()) {
    const auto t = parse_trait(force_trait);
    if (!t) throw ConfigError("--force-trait: unknown trait '" + force_trait + "'");
    if (model.uses_persona()) options.forced_trait = *t;
    else spdlog::warn("--force-trait ignored: strategy none does not use a persona");
  }

  std::ifstream file;
  if (!prompts.empty() && prompts != "-") {
    file.open(prompts);
    if (!file) throw DataError("cannot read prompts " + prompts);
  }
  std::istream& in = file.is_open() ? static_cast<std::istream&>(file) : std::cin;
  const seq2seq::TraitBank bank = model.uses_persona() ? model.trait_bank() : seq2seq::TraitBank{};
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    corpus::DialogueSample sample;
    try {
      nlohmann::json obj = nlohmann::json::parse(line);
      // Prompts need no gold response.
      if (!obj.contains("target_response")) obj["target_response"] = "-";
      sample = corpus::parse_sample(obj.dump(), corpus::TraitMode::kWithhold);
    } catch (const nlohmann::json::exception& e) {
      throw DataError("prompt line " + std::to_string(lineno) + ": " + e.what());
    } catch (const DataError& e) {
      throw DataError("prompt line " + std::to_string(lineno) + ": " + e.what());
    }
    const auto gen = personality::two_phase_generate(model, sample, options, model.uses_persona() ? &bank : nullptr);
    nlohmann::ordered_json out;
    out["trait"] = gen.trait ? nlohmann::json(std::string(trait_tag(*gen.trait))) : nlohmann::json(nullptr);
    out["response"] = corpus::detokenize(gen.tokens);
    std::cout << out.dump() << '\n';
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  setup_logging();
  CLI::App app{"Personality-aware dialogue generation toolkit"};
  app.require_subcommand(1);

  Common common;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", common.config, "TOML-style run config");
    sub->add_option("--seed", common.seed, "Seed for all randomness");
    sub->add_option("--strategy", common.strategy, "none, sc, dpa, pa3_no_axial, pa3_full or ot");
    sub->add_option("--checkpoint", common.checkpoints, "Checkpoint directory (repeatable for evaluate)");
    sub->add_option("--out", common.out, "Output path");
    sub->add_flag("--withhold-traits", common.withhold, "Strip hidden_trait when loading corpora");
    sub->add_option("--set", common.overrides, "Config override section.key=value (repeatable)");
  };

  std::size_t samples = 0, speakers = 0, test_samples = 0;
  std::string test_out, corpus_path, resume, plot_path, prompts, force_trait;

  auto* synth = app.add_subcommand("synth", "Write a synthetic persona corpus");
  add_common(synth);
  synth->add_option("--samples", samples, "Number of samples (>= 10)");
  synth->add_option("--speakers", speakers, "Number of speakers (>= 2)");
  synth->add_option("--test-samples", test_samples, "Hold out the last N samples");
  synth->add_option("--test-out", test_out, "Held-out split path");

  auto* train = app.add_subcommand("train", "Train a model and write a checkpoint");
  add_common(train);
  train->add_option("--corpus", corpus_path, "Training JSONL");
  train->add_option("--resume", resume, "Continue from this checkpoint");

  auto* identify = app.add_subcommand("identify", "Per-speaker trait assignment report");
  add_common(identify);
  identify->add_option("--corpus", corpus_path, "JSONL corpus");

  auto* evaluate = app.add_subcommand("evaluate", "ROUGE/BLEU comparison across checkpoints");
  add_common(evaluate);
  evaluate->add_option("--corpus", corpus_path, "Test JSONL");
  evaluate->add_option("--emit-plot-data", plot_path, "Write strategy/metric/value triples");

  auto* generate = app.add_subcommand("generate", "Predict trait and response per prompt");
  add_common(generate);
  generate->add_option("--prompts", prompts, "JSONL prompts (default: standard input)");
  generate->add_option("--force-trait", force_trait, "Skip the classifier and use this trait");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  try {
    if (*synth) return cmd_synth(common, samples, speakers, test_samples, test_out);
    if (*train) return cmd_train(common, corpus_path, resume);
    if (*identify) return cmd_identify(common, corpus_path);
    if (*evaluate) return cmd_evaluate(common, corpus_path, plot_path);
    if (*generate) return cmd_generate(common, prompts, force_trait);
  } catch (const ConfigError& e) {
    spdlog::error("config: {}", e.what());
    return kConfig;
  } catch (const DataError& e) {
    spdlog::error("data: {}", e.what());
    return kData;
  } catch (const NumericError& e) {
    spdlog::error("numeric: {}", e.what());
    return kNumeric;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return kFailure;
  }
  return kFailure;
}
