#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "pa3/rng.hpp"
#include "pa3/tensor.hpp"

namespace pa3::nn {

/// Ordered, named collection of trainable leaves. Order is insertion order and
/// defines checkpoint and optimizer layout.
class ParameterStore {
 public:
  Tensor add(const std::string& name, Tensor value);
  const Tensor& get(const std::string& name) const;
  bool contains(const std::string& name) const;

  std::size_t size() const { return entries_.size(); }
  std::size_t scalar_count() const;
  const std::vector<std::pair<std::string, Tensor>>& entries() const { return entries_; }

  void zero_grad();
  /// Copies values (not handles) from `other`; names and shapes must match.
  void copy_values_from(const ParameterStore& other);

 private:
  std::vector<std::pair<std::string, Tensor>> entries_;
};

/// Uniform(-b, b) with b = sqrt(6 / (fan_in + fan_out)).
Tensor xavier_uniform(std::size_t fan_in, std::size_t fan_out, Rng& rng);

struct Linear {
  Tensor weight;  // [d_in x d_out]
  Tensor bias;    // [d_out], undefined when disabled

  std::size_t in_features() const { return weight.dim(0); }
  std::size_t out_features() const { return weight.dim(1); }
  Tensor operator()(const Tensor& x) const;
};

Linear make_linear(ParameterStore& store, const std::string& name, std::size_t d_in, std::size_t d_out,
                   bool with_bias, Rng& rng);

struct LayerNorm {
  Tensor gain;
  Tensor bias;
  Tensor operator()(const Tensor& x) const { return layer_norm(x, gain, bias); }
};

LayerNorm make_layer_norm(ParameterStore& store, const std::string& name, std::size_t d);

/// Boolean attention mask; true marks a blocked (query, key) pair.
struct Mask {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::uint8_t> blocked;

  static Mask causal(std::size_t n);
  /// Additive penalty: -1e9 where blocked, 0 elsewhere.
  Tensor penalty() const;
};

inline constexpr double kMaskPenalty = -1e9;

struct AttentionState {
  Tensor query;
  Tensor key;
  Tensor value;
  std::optional<Mask> mask;
};

/// Q = H W_Q, K = H W_K, V = H W_V.
AttentionState project_qkv(const Tensor& hidden, const Linear& w_q, const Linear& w_k, const Linear& w_v);

/// softmax(Q K^T / sqrt(d) + mask) V. Accepts [n,d] or batched [b,n,d]
/// states; a 2-D mask broadcasts over the batch.
Tensor scaled_dot_attention(const AttentionState& state);

/// Splits the state's d columns into `heads` slices, attends per slice,
/// concatenates, then applies `output`.
Tensor multi_head(const AttentionState& state, std::size_t heads, const Linear& output);

struct MultiHeadAttention {
  Linear query;
  Linear key;
  Linear value;
  Linear output;
  std::size_t heads = 1;

  Tensor operator()(const Tensor& queries_from, const Tensor& keys_from,
                    const std::optional<Mask>& mask = std::nullopt) const;
};

MultiHeadAttention make_attention(ParameterStore& store, const std::string& name, std::size_t d,
                                  std::size_t heads, Rng& rng);

struct FeedForward {
  Linear hidden;
  Linear output;
  Tensor operator()(const Tensor& x) const { return output(relu(hidden(x))); }
};

FeedForward make_feed_forward(ParameterStore& store, const std::string& name, std::size_t d,
                              std::size_t d_hidden, Rng& rng);

/// Fixed sinusoidal position table for positions [offset, offset + n).
Tensor sinusoidal_positions(std::size_t n, std::size_t d, std::size_t offset = 0);

}  // namespace pa3::nn
