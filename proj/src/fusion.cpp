#include "pa3/fusion.hpp"

#include <algorithm>
#include <cctype>

namespace pa3::fusion {

namespace {

std::string normalized(std::string_view text) {
  std::string out;
  for (char ch : text) out.push_back(ch == '-' ? '_' : static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
  return out;
}

void check_rows(const Tensor& key, const Tensor& value, const PersonaEncoding& persona,
                const FusionParameters& params, const char* op) {
  params.validate();
  const std::size_t d = params.model_dim();
  if (key.rank() != 2 || value.rank() != 2 || key.shape() != value.shape() || key.dim(1) != d) {
    throw DimensionError(std::string(op) + ": K " + pa3::to_string(key.shape()) + " and V " + pa3::to_string(value.shape()) +
                         " must both be [n x " + std::to_string(d) + "]");
  }
  const Tensor& p = persona.rows;
  if (p.rank() != 2 || p.dim(0) != key.dim(0) || p.dim(1) != params.persona_dim()) {
    throw DimensionError(std::string(op) + ": persona " + pa3::to_string(p.shape()) + " must be [" +
                         std::to_string(key.dim(0)) + " x " + std::to_string(params.persona_dim()) + "]");
  }
}

Tensor to_grid(const Tensor& rows, std::size_t groups) {
  const std::size_t n = rows.dim(0), d = rows.dim(1);
  if (groups == 0 || d % groups != 0) {
    throw ConfigError("axial groups g=" + std::to_string(groups) + " do not divide d=" + std::to_string(d));
  }
  return reshape(rows, {n, groups, d / groups});
}

Tensor from_grid(const Tensor& grid) { return reshape(grid, {grid.dim(0), grid.dim(1) * grid.dim(2)}); }

}  // namespace

std::string_view to_string(Strategy strategy) {
  switch (strategy) {
    case Strategy::kNone: return "none";
    case Strategy::kSimpleConcat: return "sc";
    case Strategy::kDotProduct: return "dpa";
    case Strategy::kPa3NoAxial: return "pa3_no_axial";
    case Strategy::kPa3Full: return "pa3_full";
  }
  return "unknown";
}

Strategy parse_strategy(std::string_view text) {
  const std::string key = normalized(text);
  if (key == "none") return Strategy::kNone;
  if (key == "sc" || key == "simple_concat") return Strategy::kSimpleConcat;
  if (key == "dpa" || key == "dot_product") return Strategy::kDotProduct;
  if (key == "pa3_no_axial") return Strategy::kPa3NoAxial;
  if (key == "pa3_full" || key == "pa3") return Strategy::kPa3Full;
  throw ConfigError("unknown fusion strategy '" + std::string(text) + "'");
}

void FusionParameters::validate() const {
  const Tensor* all[] = {&persona_key, &persona_value, &key_gate_self, &key_gate_persona, &value_gate_self,
                         &value_gate_persona};
  for (const Tensor* t : all) {
    if (!t->defined()) throw DimensionError("fusion parameters are incomplete");
  }
  if (persona_key.rank() != 2) throw DimensionError("U_k must be 2-D, got " + pa3::to_string(persona_key.shape()));
  const Shape projection{persona_key.dim(0), persona_key.dim(1)};
  const Shape gate{persona_key.dim(1), 1};
  if (persona_value.shape() != projection) {
    throw DimensionError("U_v " + pa3::to_string(persona_value.shape()) + " must match U_k " + pa3::to_string(projection));
  }
  for (const Tensor* t : {&key_gate_self, &key_gate_persona, &value_gate_self, &value_gate_persona}) {
    if (t->shape() != gate) {
      throw DimensionError("gate matrix " + pa3::to_string(t->shape()) + " must be " + pa3::to_string(gate));
    }
  }
}

FusionParameters make_fusion_parameters(nn::ParameterStore& store, const std::string& prefix,
                                        std::size_t persona_dim, std::size_t model_dim, Rng& rng) {
  FusionParameters p;
  p.persona_key = store.add(prefix + ".U_k", nn::xavier_uniform(persona_dim, model_dim, rng));
  p.persona_value = store.add(prefix + ".U_v", nn::xavier_uniform(persona_dim, model_dim, rng));
  p.key_gate_self = store.add(prefix + ".W_k1", Tensor::zeros({model_dim, 1}));
  p.key_gate_persona = store.add(prefix + ".W_k2", Tensor::zeros({model_dim, 1}));
  p.value_gate_self = store.add(prefix + ".W_v1", Tensor::zeros({model_dim, 1}));
  p.value_gate_persona = store.add(prefix + ".W_v2", Tensor::zeros({model_dim, 1}));
  return p;
}

PersonaEncoding PersonaEncoding::broadcast(const Tensor& pooled, std::size_t n) {
  if (n == 0) throw ContractError("persona encoding needs n >= 1");
  return {repeat_rows(pooled, n)};
}

GateValues compute_gates(const Tensor& key, const Tensor& value, const PersonaEncoding& persona,
                         const FusionParameters& params) {
  check_rows(key, value, persona, params, "compute_gates");
  const Tensor persona_k = matmul(persona.rows, params.persona_key);
  const Tensor persona_v = matmul(persona.rows, params.persona_value);
  return {sigmoid(matmul(key, params.key_gate_self) + matmul(persona_k, params.key_gate_persona)),
          sigmoid(matmul(value, params.value_gate_self) + matmul(persona_v, params.value_gate_persona))};
}

FusedKeyValue fuse_key_value(const Tensor& key, const Tensor& value, const PersonaEncoding& persona,
                             const FusionParameters& params) {
  return fuse_key_value(key, value, persona, params, compute_gates(key, value, persona, params));
}

FusedKeyValue fuse_key_value(const Tensor& key, const Tensor& value, const PersonaEncoding& persona,
                             const FusionParameters& params, const GateValues& gates) {
  check_rows(key, value, persona, params, "fuse_key_value");
  const Shape gate_shape{key.dim(0), 1};
  if (gates.key.shape() != gate_shape || gates.value.shape() != gate_shape) {
    throw DimensionError("fuse_key_value: gates must be " + pa3::to_string(gate_shape));
  }
  const Tensor persona_k = matmul(persona.rows, params.persona_key);
  const Tensor persona_v = matmul(persona.rows, params.persona_value);
  // lambda is [n x 1] and broadcasts across the d columns.
  Tensor key_hat = (1.0 - gates.key) * key + gates.key * persona_k;
  Tensor value_hat = (1.0 - gates.value) * value + gates.value * persona_v;
  return {std::move(key_hat), std::move(value_hat), gates};
}

Axis parse_axis(std::string_view text) {
  const std::string key = normalized(text);
  if (key == "sequence" || key == "seq") return Axis::kSequence;
  if (key == "group") return Axis::kGroup;
  throw ConfigError("invalid axial axis '" + std::string(text) + "' (expected sequence or group)");
}

Tensor axial_attention(const Tensor& query, const Tensor& key, const Tensor& value, Axis axis) {
  for (const Tensor* t : {&query, &key, &value}) {
    if (t->rank() != 3) throw DimensionError("axial_attention: expected [n x g x c], got " + pa3::to_string(t->shape()));
  }
  if (query.shape() != key.shape() || key.shape() != value.shape()) {
    throw DimensionError("axial_attention: Q " + pa3::to_string(query.shape()) + ", K " + pa3::to_string(key.shape()) +
                         ", V " + pa3::to_string(value.shape()) + " differ");
  }
  switch (axis) {
    case Axis::kGroup:
      // [n, g, c]: positions already sit on the batch axis.
      return nn::scaled_dot_attention({query, key, value, std::nullopt});
    case Axis::kSequence: {
      const std::vector<std::size_t> swap{1, 0, 2};
      Tensor out = nn::scaled_dot_attention({permute(query, swap), permute(key, swap), permute(value, swap), std::nullopt});
      return permute(out, swap);
    }
  }
  throw ConfigError("invalid axial axis");
}

Tensor Pa3Block::axial_stack(const Tensor& query_rows, const Tensor& key_rows, const Tensor& value_rows) const {
  const Tensor first = from_grid(axial_attention(to_grid(query_rows, groups), to_grid(key_rows, groups),
                                                 to_grid(value_rows, groups), Axis::kSequence));
  return from_grid(axial_attention(to_grid(group_query(first), groups), to_grid(group_key(first), groups),
                                   to_grid(group_value(first), groups), Axis::kGroup));
}

Tensor Pa3Block::mix(const Tensor& hidden, const PersonaEncoding& persona) const {
  const auto state = nn::project_qkv(hidden, query, key, value);
  const auto fused = fuse_key_value(state.key, state.value, persona, fusion);
  return axial_stack(state.query, fused.key, fused.value);
}

Tensor Pa3Block::operator()(const Tensor& hidden, const PersonaEncoding& persona) const {
  return norm(hidden + mix(hidden, persona));
}

Pa3Block make_pa3_block(nn::ParameterStore& store, const std::string& prefix, std::size_t model_dim,
                        std::size_t persona_dim, std::size_t groups, Rng& rng) {
  if (groups == 0 || model_dim % groups != 0) {
    throw ConfigError("axial groups g=" + std::to_string(groups) + " do not divide d=" + std::to_string(model_dim));
  }
  Pa3Block block;
  block.query = nn::make_linear(store, prefix + ".W_Q", model_dim, model_dim, false, rng);
  block.key = nn::make_linear(store, prefix + ".W_K", model_dim, model_dim, false, rng);
  block.value = nn::make_linear(store, prefix + ".W_V", model_dim, model_dim, false, rng);
  block.fusion = make_fusion_parameters(store, prefix, persona_dim, model_dim, rng);
  block.group_query = nn::make_linear(store, prefix + ".axial2.q", model_dim, model_dim, false, rng);
  block.group_key = nn::make_linear(store, prefix + ".axial2.k", model_dim, model_dim, false, rng);
  block.group_value = nn::make_linear(store, prefix + ".axial2.v", model_dim, model_dim, false, rng);
  block.norm = nn::make_layer_norm(store, prefix + ".norm", model_dim);
  block.groups = groups;
  return block;
}

FusionModule make_fusion_module(nn::ParameterStore& store, Strategy strategy, std::size_t model_dim,
                                std::size_t persona_dim, std::size_t groups, Rng& rng, const std::string& scope) {
  const std::string pa3 = scope.empty() ? "pa3" : "pa3." + scope;
  const std::string fus = scope.empty() ? "fusion" : "fusion." + scope;
  FusionModule module;
  module.strategy = strategy;
  switch (strategy) {
    case Strategy::kNone:
      break;
    case Strategy::kSimpleConcat:
      module.concat = nn::make_linear(store, fus + ".sc", model_dim + persona_dim, model_dim, true, rng);
      break;
    case Strategy::kDotProduct:
      module.cross_query = nn::make_linear(store, fus + ".dpa.q", model_dim, model_dim, false, rng);
      module.cross_key = nn::make_linear(store, fus + ".dpa.k", persona_dim, model_dim, false, rng);
      module.cross_value = nn::make_linear(store, fus + ".dpa.v", persona_dim, model_dim, false, rng);
      module.cross_norm = nn::make_layer_norm(store, fus + ".dpa.norm", model_dim);
      break;
    case Strategy::kPa3NoAxial: {
      Pa3Block block;
      block.query = nn::make_linear(store, pa3 + ".W_Q", model_dim, model_dim, false, rng);
      block.key = nn::make_linear(store, pa3 + ".W_K", model_dim, model_dim, false, rng);
      block.value = nn::make_linear(store, pa3 + ".W_V", model_dim, model_dim, false, rng);
      block.fusion = make_fusion_parameters(store, pa3, persona_dim, model_dim, rng);
      block.norm = nn::make_layer_norm(store, pa3 + ".norm", model_dim);
      block.groups = 1;
      module.pa3 = std::move(block);
      break;
    }
    case Strategy::kPa3Full:
      module.pa3 = make_pa3_block(store, pa3, model_dim, persona_dim, groups, rng);
      break;
  }
  return module;
}

Tensor persona_cross_attention(const Tensor& hidden, const PersonaEncoding& persona, const FusionModule& module) {
  if (!module.cross_query) throw ContractError("persona_cross_attention: module has no dot-product parameters");
  const Tensor& p = persona.rows;
  if (p.rank() != 2 || p.dim(1) != module.cross_key->in_features()) {
    throw DimensionError("persona_cross_attention: persona " + pa3::to_string(p.shape()) + " vs key weight " +
                         pa3::to_string(module.cross_key->weight.shape()));
  }
  return nn::scaled_dot_attention({(*module.cross_query)(hidden), (*module.cross_key)(p), (*module.cross_value)(p),
                                   std::nullopt});
}

Tensor fuse_with_strategy(const Tensor& hidden, const PersonaEncoding& persona, const FusionModule& module) {
  switch (module.strategy) {
    case Strategy::kNone:
      return hidden;
    case Strategy::kSimpleConcat: {
      if (persona.rows.rank() != 2 || persona.rows.dim(0) != hidden.dim(0)) {
        throw DimensionError("simple concat: persona " + pa3::to_string(persona.rows.shape()) + " vs hidden " +
                             pa3::to_string(hidden.shape()));
      }
      return (*module.concat)(concat({hidden, repeat_rows(mean_rows(persona.rows), hidden.dim(0))}, 1));
    }
    case Strategy::kDotProduct:
      return (*module.cross_norm)(hidden + persona_cross_attention(hidden, persona, module));
    case Strategy::kPa3NoAxial: {
      const Pa3Block& block = *module.pa3;
      const auto state = nn::project_qkv(hidden, block.query, block.key, block.value);
      const auto fused = fuse_key_value(state.key, state.value, persona, block.fusion);
      return block.norm(hidden + nn::scaled_dot_attention({state.query, fused.key, fused.value, std::nullopt}));
    }
    case Strategy::kPa3Full:
      return (*module.pa3)(hidden, persona);
  }
  throw ConfigError("unknown fusion strategy");
}

}  // namespace pa3::fusion
