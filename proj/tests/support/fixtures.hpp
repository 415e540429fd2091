#pragma once

#include <filesystem>
#include <string>

#include "pa3/corpus.hpp"
#include "pa3/pipeline.hpp"
#include "pa3/seq2seq.hpp"

namespace pa3::testing {

inline seq2seq::ModelConfig tiny_config(fusion::Strategy strategy = fusion::Strategy::kPa3Full) {
  seq2seq::ModelConfig c;
  c.d_model = 16;
  c.d_persona = 16;
  c.heads = 2;
  c.encoder_layers = 1;
  c.decoder_layers = 1;
  c.axial_groups = 2;
  c.max_len = 48;
  c.max_response_len = 12;
  c.strategy = strategy;
  c.trait_selection = seq2seq::TraitSelection::kStraightThrough;
  return c;
}

inline seq2seq::TrainConfig fast_train(std::size_t epochs) {
  seq2seq::TrainConfig t;
  t.learning_rate = 1e-3;
  t.epochs = epochs;
  return t;
}

inline std::vector<corpus::DialogueSample> synth_samples(std::size_t n, std::uint64_t seed = 13) {
  return corpus::synth_corpus({seed, n, 5}).samples;
}

inline seq2seq::DialogueModel tiny_model(const std::vector<corpus::DialogueSample>& samples,
                                         seq2seq::ModelConfig config = tiny_config(), std::uint64_t seed = 13) {
  return seq2seq::DialogueModel(config, pipeline::vocabulary_for(samples), seed);
}

struct ScratchDir {
  std::filesystem::path path;
  explicit ScratchDir(const std::string& name) {
    path = std::filesystem::temp_directory_path() / ("pa3_test_" + name);
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
  }
  ~ScratchDir() { std::filesystem::remove_all(path); }
};

}  // namespace pa3::testing
