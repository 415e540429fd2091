#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <string>
#include <vector>

// Brute-force reference implementations: quadratic n-gram matching and
// subset enumeration for the LCS. Only for short sequences.
namespace pa3::testing::naive {

using Seq = std::vector<std::string>;

inline std::vector<Seq> grams(const Seq& s, std::size_t n) {
  std::vector<Seq> out;
  for (std::size_t i = 0; i + n <= s.size(); ++i) out.emplace_back(s.begin() + i, s.begin() + i + n);
  return out;
}

// Each candidate gram claims one unused equal reference gram.
inline std::size_t matched(const std::vector<Seq>& cand, const std::vector<Seq>& ref) {
  std::vector<bool> used(ref.size(), false);
  std::size_t hits = 0;
  for (const auto& g : cand) {
    for (std::size_t j = 0; j < ref.size(); ++j) {
      if (!used[j] && ref[j] == g) {
        used[j] = true;
        ++hits;
        break;
      }
    }
  }
  return hits;
}

inline double f1_percent(double overlap, double c, double r) {
  if (overlap == 0 || c == 0 || r == 0) return 0.0;
  const double p = overlap / c, q = overlap / r;
  return 100.0 * 2 * p * q / (p + q);
}

inline double rouge_n(const Seq& cand, const Seq& ref, std::size_t n) {
  const auto cg = grams(cand, n), rg = grams(ref, n);
  return f1_percent(static_cast<double>(matched(cg, rg)), static_cast<double>(cg.size()), static_cast<double>(rg.size()));
}

inline bool is_subsequence(const Seq& small, const Seq& big) {
  std::size_t j = 0;
  for (const auto& t : big) {
    if (j < small.size() && small[j] == t) ++j;
  }
  return j == small.size();
}

// Longest subsequence of the candidate (any of 2^m masks) found in the reference.
inline std::size_t lcs(const Seq& cand, const Seq& ref) {
  std::size_t best = 0;
  for (std::size_t mask = 0; mask < (std::size_t{1} << cand.size()); ++mask) {
    Seq pick;
    for (std::size_t i = 0; i < cand.size(); ++i) {
      if (mask >> i & 1) pick.push_back(cand[i]);
    }
    if (pick.size() > best && is_subsequence(pick, ref)) best = pick.size();
  }
  return best;
}

inline double rouge_l(const Seq& cand, const Seq& ref) {
  return f1_percent(static_cast<double>(lcs(cand, ref)), static_cast<double>(cand.size()), static_cast<double>(ref.size()));
}

// Single reference; zero matches count as 1e-9; an order with no candidate
// grams reuses the previous precision.
inline std::array<double, 4> bleu(const Seq& cand, const Seq& ref) {
  std::array<double, 4> out{};
  if (cand.empty()) return out;
  const double c = static_cast<double>(cand.size()), r = static_cast<double>(ref.size());
  const double bp = c >= r ? 1.0 : std::exp(1.0 - r / c);
  double prev = 1.0, logs = 0.0;
  for (std::size_t n = 1; n <= 4; ++n) {
    const auto cg = grams(cand, n);
    double p = prev;
    if (!cg.empty()) {
      const std::size_t m = matched(cg, grams(ref, n));
      p = m == 0 ? 1e-9 : static_cast<double>(m) / static_cast<double>(cg.size());
    }
    prev = p;
    logs += std::log(p);
    out[n - 1] = 100.0 * bp * std::exp(logs / static_cast<double>(n));
  }
  return out;
}

}  // namespace pa3::testing::naive
