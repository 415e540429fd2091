#pragma once

#include <cmath>
#include <vector>

#include "pa3/fusion.hpp"

// Scalar loops over plain arrays; shares nothing with the tensor kernels
// except reading parameter values.
namespace pa3::testing {

using Mat = std::vector<std::vector<double>>;

inline Mat to_mat(const Tensor& t) {
  Mat m(t.dim(0), std::vector<double>(t.dim(1)));
  for (std::size_t i = 0; i < t.dim(0); ++i)
    for (std::size_t j = 0; j < t.dim(1); ++j) m[i][j] = t.data()[i * t.dim(1) + j];
  return m;
}

inline Mat times(const Mat& a, const Tensor& w) {
  const Mat b = to_mat(w);
  Mat out(a.size(), std::vector<double>(b[0].size(), 0.0));
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t k = 0; k < b.size(); ++k)
      for (std::size_t j = 0; j < b[0].size(); ++j) out[i][j] += a[i][k] * b[k][j];
  return out;
}

inline Mat apply_linear(const Mat& a, const nn::Linear& l) {
  Mat out = times(a, l.weight);
  if (l.bias.defined())
    for (auto& row : out)
      for (std::size_t j = 0; j < row.size(); ++j) row[j] += l.bias.data()[j];
  return out;
}

inline double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline std::vector<double> softmax(std::vector<double> s) {
  double hi = s[0];
  for (double v : s) hi = std::max(hi, v);
  double z = 0.0;
  for (double& v : s) z += (v = std::exp(v - hi));
  for (double& v : s) v /= z;
  return s;
}

// Reference for Pa3Block::operator(): projections, gated key/value blend,
// attention over positions inside each group, attention over groups inside
// each position, residual and layer norm.
inline Mat pa3_block_oracle(const fusion::Pa3Block& b, const Tensor& hidden, const Tensor& persona) {
  const Mat h = to_mat(hidden), p = to_mat(persona);
  const std::size_t n = h.size(), d = h[0].size(), g = b.groups, c = d / g;
  const Mat q = apply_linear(h, b.query), k = apply_linear(h, b.key), v = apply_linear(h, b.value);
  const Mat pk = times(p, b.fusion.persona_key), pv = times(p, b.fusion.persona_value);
  const Mat wk1 = to_mat(b.fusion.key_gate_self), wk2 = to_mat(b.fusion.key_gate_persona);
  const Mat wv1 = to_mat(b.fusion.value_gate_self), wv2 = to_mat(b.fusion.value_gate_persona);

  Mat kh(n, std::vector<double>(d)), vh(n, std::vector<double>(d));
  for (std::size_t i = 0; i < n; ++i) {
    double zk = 0.0, zv = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      zk += k[i][j] * wk1[j][0] + pk[i][j] * wk2[j][0];
      zv += v[i][j] * wv1[j][0] + pv[i][j] * wv2[j][0];
    }
    const double lk = logistic(zk), lv = logistic(zv);
    for (std::size_t j = 0; j < d; ++j) {
      kh[i][j] = (1.0 - lk) * k[i][j] + lk * pk[i][j];
      vh[i][j] = (1.0 - lv) * v[i][j] + lv * pv[i][j];
    }
  }

  const double scale = 1.0 / std::sqrt(static_cast<double>(c));
  Mat first(n, std::vector<double>(d, 0.0));
  for (std::size_t grp = 0; grp < g; ++grp) {
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<double> s(n, 0.0);
      for (std::size_t t = 0; t < n; ++t)
        for (std::size_t x = 0; x < c; ++x) s[t] += q[i][grp * c + x] * kh[t][grp * c + x] * scale;
      const auto w = softmax(s);
      for (std::size_t t = 0; t < n; ++t)
        for (std::size_t x = 0; x < c; ++x) first[i][grp * c + x] += w[t] * vh[t][grp * c + x];
    }
  }

  const Mat q2 = apply_linear(first, b.group_query), k2 = apply_linear(first, b.group_key),
            v2 = apply_linear(first, b.group_value);
  Mat out(n, std::vector<double>(d, 0.0));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t a = 0; a < g; ++a) {
      std::vector<double> s(g, 0.0);
      for (std::size_t other = 0; other < g; ++other)
        for (std::size_t x = 0; x < c; ++x) s[other] += q2[i][a * c + x] * k2[i][other * c + x] * scale;
      const auto w = softmax(s);
      for (std::size_t other = 0; other < g; ++other)
        for (std::size_t x = 0; x < c; ++x) out[i][a * c + x] += w[other] * v2[i][other * c + x];
    }
  }

  const auto& gain = b.norm.gain.data();
  const auto& bias = b.norm.bias.data();
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> y(d);
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += (y[j] = h[i][j] + out[i][j]);
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (double e : y) var += (e - mu) * (e - mu);
    var /= static_cast<double>(d);
    for (std::size_t j = 0; j < d; ++j) out[i][j] = (y[j] - mu) / std::sqrt(var + 1e-5) * gain[j] + bias[j];
  }
  return out;
}

// Attention along one axis of [n x g x c] grids by explicit slicing.
inline std::vector<double> looped_axial(const Tensor& q, const Tensor& k, const Tensor& v, fusion::Axis axis) {
  const std::size_t n = q.dim(0), g = q.dim(1), c = q.dim(2);
  auto at = [&](const Tensor& t, std::size_t i, std::size_t j, std::size_t x) { return t.data()[(i * g + j) * c + x]; };
  std::vector<double> out(n * g * c, 0.0);
  const double scale = 1.0 / std::sqrt(static_cast<double>(c));
  const bool seq = axis == fusion::Axis::kSequence;
  const std::size_t slices = seq ? g : n, len = seq ? n : g;
  for (std::size_t s = 0; s < slices; ++s) {
    for (std::size_t i = 0; i < len; ++i) {
      std::vector<double> sc(len, 0.0);
      for (std::size_t t = 0; t < len; ++t)
        for (std::size_t x = 0; x < c; ++x)
          sc[t] += (seq ? at(q, i, s, x) * at(k, t, s, x) : at(q, s, i, x) * at(k, s, t, x)) * scale;
      const auto w = softmax(sc);
      for (std::size_t t = 0; t < len; ++t)
        for (std::size_t x = 0; x < c; ++x) {
          const std::size_t o = seq ? (i * g + s) * c + x : (s * g + i) * c + x;
          out[o] += w[t] * (seq ? at(v, t, s, x) : at(v, s, t, x));
        }
    }
  }
  return out;
}

}  // namespace pa3::testing
