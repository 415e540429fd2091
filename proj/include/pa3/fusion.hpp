#pragma once

#include <optional>
#include <string>
#include <string_view>

#include "pa3/nn.hpp"

namespace pa3::fusion {

/// How persona information is merged into the encoder output. kNone is the
/// personality-blind control and allocates no fusion parameters.
enum class Strategy { kNone, kSimpleConcat, kDotProduct, kPa3NoAxial, kPa3Full };

std::string_view to_string(Strategy strategy);
/// Accepts "none", "sc", "dpa", "pa3_no_axial", "pa3_full" (case-insensitive,
/// '-' or '_'). Throws ConfigError otherwise.
Strategy parse_strategy(std::string_view text);

/// Learned matrices of the gated key/value fusion.
///
///   lambda_k = sigmoid(K W_k1 + (P U_k) W_k2)
///   lambda_v = sigmoid(V W_v1 + (P U_v) W_v2)
///   K_hat = (1 - lambda_k) * K + lambda_k * (P U_k)
///   V_hat = (1 - lambda_v) * V + lambda_v * (P U_v)
struct FusionParameters {
  Tensor persona_key;         // U_k  [d_p x d]
  Tensor persona_value;       // U_v  [d_p x d]
  Tensor key_gate_self;       // W_k1 [d x 1]
  Tensor key_gate_persona;    // W_k2 [d x 1]
  Tensor value_gate_self;     // W_v1 [d x 1]
  Tensor value_gate_persona;  // W_v2 [d x 1]

  std::size_t persona_dim() const { return persona_key.dim(0); }
  std::size_t model_dim() const { return persona_key.dim(1); }
  /// Throws DimensionError unless every matrix has its documented shape.
  void validate() const;
};

/// U_k, U_v Xavier-uniform; gate matrices zero so every gate starts at 0.5.
FusionParameters make_fusion_parameters(nn::ParameterStore& store, const std::string& prefix,
                                        std::size_t persona_dim, std::size_t model_dim, Rng& rng);

/// Per-position persona representation P, [n x d_p].
struct PersonaEncoding {
  Tensor rows;

  std::size_t length() const { return rows.dim(0); }
  /// Broadcasts a pooled [1 x d_p] vector to n identical rows.
  static PersonaEncoding broadcast(const Tensor& pooled, std::size_t n);
};

struct GateValues {
  Tensor key;    // lambda_k [n x 1]
  Tensor value;  // lambda_v [n x 1]
};

struct FusedKeyValue {
  Tensor key;    // K_hat [n x d]
  Tensor value;  // V_hat [n x d]
  GateValues gates;
};

GateValues compute_gates(const Tensor& key, const Tensor& value, const PersonaEncoding& persona,
                         const FusionParameters& params);

FusedKeyValue fuse_key_value(const Tensor& key, const Tensor& value, const PersonaEncoding& persona,
                             const FusionParameters& params);

/// Same blend with caller-supplied gates (used to pin lambda at 0 or 1).
FusedKeyValue fuse_key_value(const Tensor& key, const Tensor& value, const PersonaEncoding& persona,
                             const FusionParameters& params, const GateValues& gates);

/// The two non-batch axes of an [n x g x c] grid.
enum class Axis { kSequence, kGroup };

/// Throws ConfigError for anything other than "sequence" or "group".
Axis parse_axis(std::string_view text);

/// Attention along one axis of [n x g x c] query/key/value grids: the other
/// axis is moved to the batch position, standard attention runs per slice,
/// and the transpose is undone.
Tensor axial_attention(const Tensor& query, const Tensor& key, const Tensor& value, Axis axis);

/// Self-attention form: query = key = value = grid.
inline Tensor axial_attention(const Tensor& grid, Axis axis) { return axial_attention(grid, grid, grid, axis); }

/// Gated persona fusion followed by two axial attention layers, wrapped in a
/// residual connection and layer norm.
struct Pa3Block {
  nn::Linear query;         // W_Q
  nn::Linear key;           // W_K
  nn::Linear value;         // W_V
  nn::Linear group_query;   // second axial layer
  nn::Linear group_key;
  nn::Linear group_value;
  nn::LayerNorm norm;
  FusionParameters fusion;
  std::size_t groups = 1;

  /// Output H_hat = LayerNorm(H + mix(H, P)).
  Tensor operator()(const Tensor& hidden, const PersonaEncoding& persona) const;
  /// The attention stack without residual or norm.
  Tensor mix(const Tensor& hidden, const PersonaEncoding& persona) const;
  /// Axial layer 1 over the sequence axis with (Q, K, V), then axial layer 2
  /// as self-attention over the group axis. Inputs are [n x d].
  Tensor axial_stack(const Tensor& query_rows, const Tensor& key_rows, const Tensor& value_rows) const;
};

Pa3Block make_pa3_block(nn::ParameterStore& store, const std::string& prefix, std::size_t model_dim,
                        std::size_t persona_dim, std::size_t groups, Rng& rng);

/// Parameters for every fusion strategy. Members not used by the configured
/// strategy stay empty and are never registered. A non-empty `scope` is
/// inserted after the "pa3." / "fusion." name prefix.
struct FusionModule {
  Strategy strategy = Strategy::kNone;
  std::optional<Pa3Block> pa3;            // kPa3Full, kPa3NoAxial
  std::optional<nn::Linear> concat;       // kSimpleConcat: [(d + d_p) x d]
  std::optional<nn::Linear> cross_query;  // kDotProduct
  std::optional<nn::Linear> cross_key;
  std::optional<nn::Linear> cross_value;
  std::optional<nn::LayerNorm> cross_norm;
};

FusionModule make_fusion_module(nn::ParameterStore& store, Strategy strategy, std::size_t model_dim,
                                std::size_t persona_dim, std::size_t groups, Rng& rng,
                                const std::string& scope = "");

/// Standard cross-attention with H as query and the persona rows as key and
/// value (the attention term of the dot-product strategy).
Tensor persona_cross_attention(const Tensor& hidden, const PersonaEncoding& persona, const FusionModule& module);

/// Dispatches on module.strategy. kNone returns `hidden` untouched.
Tensor fuse_with_strategy(const Tensor& hidden, const PersonaEncoding& persona, const FusionModule& module);

}  // namespace pa3::fusion
