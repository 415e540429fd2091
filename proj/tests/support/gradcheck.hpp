#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "pa3/rng.hpp"
#include "pa3/tensor.hpp"

namespace pa3::testing {

using Builder = std::function<Tensor(const std::vector<Tensor>&)>;

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
};

inline Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Tensor::from(std::move(shape), std::move(v), true);
}

// |a - n| / max(|a|, |n|, 1e-3). The floor keeps coordinates whose true
// derivative is ~0 from turning round-off into huge relative errors.
inline double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-3});
}

// Reduces a non-scalar output with fixed random weights so every output
// coordinate contributes a distinct term.
inline Tensor reduce_output(const Tensor& out, std::uint64_t seed) {
  if (out.numel() == 1 && out.rank() == 0) return out;
  Rng rng(seed ^ 0x5bd1e995ull);
  std::vector<double> w(out.numel());
  for (auto& x : w) x = rng.uniform(-1.0, 1.0);
  return sum(out * Tensor::from(out.shape(), std::move(w)));
}

// Central differences, h = 1e-6, against one backward pass.
inline GradCheckResult gradcheck(const Builder& f, std::vector<Tensor> inputs, std::uint64_t seed = 1,
                                 double h = 1e-6) {
  for (auto& x : inputs) {
    x.set_requires_grad(true);
    x.zero_grad();
  }
  const Tensor loss = reduce_output(f(inputs), seed);
  loss.backward();
  std::vector<std::vector<double>> analytic;
  for (const auto& x : inputs) {
    analytic.emplace_back(x.has_grad() ? std::vector<double>(x.grad().begin(), x.grad().end())
                                       : std::vector<double>(x.numel(), 0.0));
  }
  GradCheckResult r;
  NoGradGuard guard;
  auto value = [&] { return reduce_output(f(inputs), seed).item(); };
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    auto data = inputs[k].mutable_data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double orig = data[i];
      data[i] = orig + h;
      const double up = value();
      data[i] = orig - h;
      const double down = value();
      data[i] = orig;
      const double numeric = (up - down) / (2.0 * h);
      r.max_rel_error = std::max(r.max_rel_error, relative_error(analytic[k][i], numeric));
      ++r.checked;
    }
  }
  return r;
}

}  // namespace pa3::testing
