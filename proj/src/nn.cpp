#include "pa3/nn.hpp"

#include <algorithm>
#include <cmath>

namespace pa3::nn {

Tensor ParameterStore::add(const std::string& name, Tensor value) {
  if (contains(name)) throw ContractError("duplicate parameter name " + name);
  value.set_requires_grad(true);
  entries_.emplace_back(name, value);
  return value;
}

const Tensor& ParameterStore::get(const std::string& name) const {
  for (const auto& [n, t] : entries_) {
    if (n == name) return t;
  }
  throw ContractError("unknown parameter " + name);
}

bool ParameterStore::contains(const std::string& name) const {
  return std::any_of(entries_.begin(), entries_.end(), [&](const auto& e) { return e.first == name; });
}

std::size_t ParameterStore::scalar_count() const {
  std::size_t total = 0;
  for (const auto& e : entries_) total += e.second.numel();
  return total;
}

void ParameterStore::zero_grad() {
  for (auto& e : entries_) e.second.zero_grad();
}

void ParameterStore::copy_values_from(const ParameterStore& other) {
  if (other.size() != size()) throw ContractError("parameter sets differ in size");
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    auto& [name, dst] = entries_[i];
    const auto& [other_name, src] = other.entries_[i];
    if (name != other_name || dst.shape() != src.shape()) {
      throw ContractError("parameter mismatch at " + name + " vs " + other_name);
    }
    std::copy(src.data().begin(), src.data().end(), dst.mutable_data().begin());
  }
}

Tensor xavier_uniform(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::vector<double> data(fan_in * fan_out);
  for (auto& v : data) v = rng.uniform(-bound, bound);
  return Tensor::from({fan_in, fan_out}, std::move(data));
}

Tensor Linear::operator()(const Tensor& x) const {
  Tensor y = matmul(x, weight);
  return bias.defined() ? y + bias : y;
}

Linear make_linear(ParameterStore& store, const std::string& name, std::size_t d_in, std::size_t d_out,
                   bool with_bias, Rng& rng) {
  Linear layer;
  layer.weight = store.add(name + ".weight", xavier_uniform(d_in, d_out, rng));
  if (with_bias) layer.bias = store.add(name + ".bias", Tensor::zeros({d_out}));
  return layer;
}

LayerNorm make_layer_norm(ParameterStore& store, const std::string& name, std::size_t d) {
  return {store.add(name + ".gain", Tensor::ones({d})), store.add(name + ".bias", Tensor::zeros({d}))};
}

Mask Mask::causal(std::size_t n) {
  Mask m{n, n, std::vector<std::uint8_t>(n * n, 0)};
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) m.blocked[i * n + j] = 1;
  }
  return m;
}

Tensor Mask::penalty() const {
  std::vector<double> values(rows * cols);
  for (std::size_t i = 0; i < values.size(); ++i) values[i] = blocked[i] ? kMaskPenalty : 0.0;
  return Tensor::from({rows, cols}, std::move(values));
}

AttentionState project_qkv(const Tensor& hidden, const Linear& w_q, const Linear& w_k, const Linear& w_v) {
  const std::size_t d = hidden.dim(hidden.rank() - 1);
  for (const Linear* w : {&w_q, &w_k, &w_v}) {
    if (w->in_features() != d) {
      throw DimensionError("project_qkv: hidden " + to_string(hidden.shape()) + " vs weight " +
                           to_string(w->weight.shape()));
    }
  }
  return {w_q(hidden), w_k(hidden), w_v(hidden), std::nullopt};
}

Tensor scaled_dot_attention(const AttentionState& state) {
  const auto& q = state.query.shape();
  const auto& k = state.key.shape();
  const auto& v = state.value.shape();
  const std::size_t r = q.size();
  if ((r != 2 && r != 3) || k.size() != r || v.size() != r || q[r - 1] != k[r - 1] || k[r - 2] != v[r - 2] ||
      (r == 3 && (q[0] != k[0] || k[0] != v[0]))) {
    throw DimensionError("scaled_dot_attention: Q " + to_string(q) + ", K " + to_string(k) + ", V " + to_string(v));
  }
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(q[r - 1]));
  Tensor scores = matmul(state.query, transpose(state.key)) * inv_sqrt_d;
  if (state.mask) {
    if (state.mask->rows != q[r - 2] || state.mask->cols != k[r - 2]) {
      throw DimensionError("scaled_dot_attention: mask does not match scores " + to_string(scores.shape()));
    }
    scores = scores + state.mask->penalty();
  }
  return matmul(softmax_rows(scores), state.value);
}

namespace {

// [n, d] -> [heads, n, d / heads]
Tensor split_heads(const Tensor& x, std::size_t heads) {
  const std::size_t n = x.dim(0), d = x.dim(1);
  return permute(reshape(x, {n, heads, d / heads}), {1, 0, 2});
}

Tensor merge_heads(const Tensor& x) {
  const std::size_t heads = x.dim(0), n = x.dim(1), dh = x.dim(2);
  return reshape(permute(x, {1, 0, 2}), {n, heads * dh});
}

}  // namespace

Tensor multi_head(const AttentionState& state, std::size_t heads, const Linear& output) {
  if (state.query.rank() != 2) throw DimensionError("multi_head: expected 2-D state, got " + to_string(state.query.shape()));
  const std::size_t d = state.query.dim(1);
  if (heads == 0 || d % heads != 0 || state.value.dim(1) % std::max<std::size_t>(heads, 1) != 0) {
    throw ConfigError("multi_head: d=" + std::to_string(d) + " is not divisible by heads=" + std::to_string(heads));
  }
  if (heads == 1) return output(scaled_dot_attention(state));
  AttentionState split{split_heads(state.query, heads), split_heads(state.key, heads),
                       split_heads(state.value, heads), state.mask};
  return output(merge_heads(scaled_dot_attention(split)));
}

Tensor MultiHeadAttention::operator()(const Tensor& queries_from, const Tensor& keys_from,
                                      const std::optional<Mask>& mask) const {
  AttentionState state{query(queries_from), key(keys_from), value(keys_from), mask};
  return multi_head(state, heads, output);
}

MultiHeadAttention make_attention(ParameterStore& store, const std::string& name, std::size_t d,
                                  std::size_t heads, Rng& rng) {
  if (heads == 0 || d % heads != 0) {
    throw ConfigError(name + ": d=" + std::to_string(d) + " is not divisible by heads=" + std::to_string(heads));
  }
  MultiHeadAttention attn;
  attn.query = make_linear(store, name + ".q", d, d, true, rng);
  attn.key = make_linear(store, name + ".k", d, d, true, rng);
  attn.value = make_linear(store, name + ".v", d, d, true, rng);
  attn.output = make_linear(store, name + ".o", d, d, true, rng);
  attn.heads = heads;
  return attn;
}

FeedForward make_feed_forward(ParameterStore& store, const std::string& name, std::size_t d,
                              std::size_t d_hidden, Rng& rng) {
  return {make_linear(store, name + ".in", d, d_hidden, true, rng),
          make_linear(store, name + ".out", d_hidden, d, true, rng)};
}

Tensor sinusoidal_positions(std::size_t n, std::size_t d, std::size_t offset) {
  std::vector<double> table(n * d);
  for (std::size_t pos = 0; pos < n; ++pos) {
    for (std::size_t i = 0; i < d; ++i) {
      const double rate = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / static_cast<double>(d));
      const double angle = static_cast<double>(pos + offset) * rate;
      table[pos * d + i] = (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
    }
  }
  return Tensor::from({n, d}, std::move(table));
}

}  // namespace pa3::nn
