#include "pa3/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <unordered_map>

#include <json.hpp>

#include "pa3/errors.hpp"

namespace pa3::metrics {

namespace {

using Counts = std::unordered_map<std::string, std::size_t>;

Counts ngram_counts(Tokens tokens, std::size_t n) {
  Counts counts;
  if (n == 0 || tokens.size() < n) return counts;
  for (std::size_t i = 0; i + n <= tokens.size(); ++i) {
    std::string key;
    for (std::size_t j = 0; j < n; ++j) {
      if (j) key.push_back('\x1f');
      key += tokens[i + j];
    }
    ++counts[key];
  }
  return counts;
}

double f1(double overlap, double candidate_total, double reference_total) {
  if (overlap <= 0.0 || candidate_total <= 0.0 || reference_total <= 0.0) return 0.0;
  const double p = overlap / candidate_total;
  const double r = overlap / reference_total;
  return 100.0 * 2.0 * p * r / (p + r);
}

}  // namespace

double rouge_n(Tokens candidate, Tokens reference, std::size_t n) {
  if (n == 0) throw ContractError("rouge_n: n must be >= 1");
  const Counts cand = ngram_counts(candidate, n);
  const Counts ref = ngram_counts(reference, n);
  std::size_t overlap = 0;
  for (const auto& [gram, c] : cand) {
    if (auto it = ref.find(gram); it != ref.end()) overlap += std::min(c, it->second);
  }
  const double cand_total = candidate.size() >= n ? static_cast<double>(candidate.size() - n + 1) : 0.0;
  const double ref_total = reference.size() >= n ? static_cast<double>(reference.size() - n + 1) : 0.0;
  return f1(static_cast<double>(overlap), cand_total, ref_total);
}

double rouge_l(Tokens candidate, Tokens reference) {
  const std::size_t m = candidate.size(), n = reference.size();
  if (m == 0 || n == 0) return 0.0;
  std::vector<std::size_t> prev(n + 1, 0), cur(n + 1, 0);
  for (std::size_t i = 1; i <= m; ++i) {
    for (std::size_t j = 1; j <= n; ++j) {
      cur[j] = candidate[i - 1] == reference[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return f1(static_cast<double>(prev[n]), static_cast<double>(m), static_cast<double>(n));
}

std::array<double, 4> bleu(Tokens candidate, std::span<const std::vector<std::string>> references,
                           std::size_t max_n) {
  if (max_n == 0 || max_n > 4) throw ContractError("bleu: max_n must be in 1..4");
  if (references.empty()) throw ContractError("bleu: no references");
  std::array<double, 4> out{};
  const std::size_t c = candidate.size();
  if (c == 0) return out;

  std::size_t r = references.front().size();
  for (const auto& ref : references) {
    const auto diff = [c](std::size_t len) { return len > c ? len - c : c - len; };
    if (diff(ref.size()) < diff(r) || (diff(ref.size()) == diff(r) && ref.size() < r)) r = ref.size();
  }
  const double brevity = c >= r ? 1.0 : std::exp(1.0 - static_cast<double>(r) / static_cast<double>(c));

  double log_sum = 0.0;
  double previous = 1.0;
  for (std::size_t n = 1; n <= max_n; ++n) {
    double precision;
    if (c < n) {
      precision = previous;
    } else {
      const Counts cand = ngram_counts(candidate, n);
      Counts max_ref;
      for (const auto& ref : references) {
        for (const auto& [gram, k] : ngram_counts(ref, n)) max_ref[gram] = std::max(max_ref[gram], k);
      }
      std::size_t clipped = 0;
      for (const auto& [gram, k] : cand) {
        if (auto it = max_ref.find(gram); it != max_ref.end()) clipped += std::min(k, it->second);
      }
      precision = clipped == 0 ? kBleuEpsilon : static_cast<double>(clipped) / static_cast<double>(c - n + 1);
    }
    previous = precision;
    log_sum += std::log(precision);
    out[n - 1] = 100.0 * brevity * std::exp(log_sum / static_cast<double>(n));
  }
  return out;
}

std::array<double, 4> bleu(Tokens candidate, Tokens reference, std::size_t max_n) {
  const std::vector<std::vector<std::string>> refs{std::vector<std::string>(reference.begin(), reference.end())};
  return bleu(candidate, refs, max_n);
}

Scores score_pair(Tokens candidate, Tokens reference) {
  return {rouge_n(candidate, reference, 1), rouge_n(candidate, reference, 2), rouge_l(candidate, reference),
          bleu(candidate, reference)};
}

double compensated_mean(std::span<const double> values) {
  if (values.empty()) return 0.0;
  double total = 0.0, carry = 0.0;
  for (double v : values) {
    const double t = total + v;
    carry += std::abs(total) >= std::abs(v) ? (total - t) + v : (v - t) + total;
    total = t;
  }
  return (total + carry) / static_cast<double>(values.size());
}

const StrategyRow& EvalReport::row(const std::string& name) const {
  for (const auto& r : rows) {
    if (r.name == name) return r;
  }
  throw ContractError("report has no row '" + name + "'");
}

std::array<double, 7> EvalReport::deltas(const std::string& name) const {
  const auto a = row(name).mean.as_array();
  const auto b = row(baseline).mean.as_array();
  std::array<double, 7> out{};
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  return out;
}

EvalReport evaluate(std::span<const NamedDecoder> decoders, std::span<const corpus::DialogueSample> samples,
                    const std::string& baseline) {
  if (samples.empty()) throw ContractError("evaluate: empty test corpus");
  if (decoders.empty()) throw ContractError("evaluate: no strategies to evaluate");
  EvalReport report;
  for (const auto& d : decoders) {
    if (d.name == baseline) report.baseline = baseline;
  }
  for (const auto& decoder : decoders) {
    StrategyRow row;
    row.name = decoder.name;
    std::map<std::string, std::vector<double>> speaker_r1;
    std::size_t trait_hits = 0;
    for (const auto& sample : samples) {
      const auto reference = corpus::tokenize(sample.target_response);
      const auto candidate = decoder.decode(sample);
      row.per_sample.push_back(score_pair(candidate, reference));
      speaker_r1[sample.target_speaker].push_back(row.per_sample.back().rouge1);
      for (auto pos : corpus::trait_token_positions(reference)) {
        ++row.trait_tokens;
        if (pos < candidate.size() && candidate[pos] == reference[pos]) ++trait_hits;
      }
    }
    std::array<std::vector<double>, 7> columns;
    for (const auto& s : row.per_sample) {
      const auto values = s.as_array();
      for (std::size_t i = 0; i < values.size(); ++i) columns[i].push_back(values[i]);
    }
    row.mean = {compensated_mean(columns[0]), compensated_mean(columns[1]), compensated_mean(columns[2]),
                {compensated_mean(columns[3]), compensated_mean(columns[4]), compensated_mean(columns[5]),
                 compensated_mean(columns[6])}};
    for (const auto& [speaker, values] : speaker_r1) row.per_speaker_rouge1[speaker] = compensated_mean(values);
    row.trait_token_accuracy =
        row.trait_tokens ? static_cast<double>(trait_hits) / static_cast<double>(row.trait_tokens) : 0.0;
    report.rows.push_back(std::move(row));
  }
  return report;
}

void write_table(std::ostream& out, const EvalReport& report) {
  const auto flags = out.flags();
  out << std::left << std::setw(16) << "strategy";
  for (const char* name : Scores::kNames) out << std::right << std::setw(18) << name;
  out << std::setw(10) << "trait%" << '\n';
  out << std::fixed << std::setprecision(2);
  for (const auto& row : report.rows) {
    out << std::left << std::setw(16) << row.name;
    const auto values = row.mean.as_array();
    const bool with_delta = !report.baseline.empty() && row.name != report.baseline;
    const auto deltas = with_delta ? report.deltas(row.name) : std::array<double, 7>{};
    for (std::size_t i = 0; i < values.size(); ++i) {
      std::ostringstream cell;
      cell << std::fixed << std::setprecision(2) << values[i];
      if (with_delta) cell << " (" << (deltas[i] >= 0 ? "+" : "") << deltas[i] << ")";
      out << std::right << std::setw(18) << cell.str();
    }
    out << std::setw(10) << 100.0 * row.trait_token_accuracy << '\n';
  }
  out.flags(flags);
}

void write_json_lines(std::ostream& out, const EvalReport& report) {
  for (const auto& row : report.rows) {
    nlohmann::ordered_json obj;
    obj["strategy"] = row.name;
    const auto values = row.mean.as_array();
    for (std::size_t i = 0; i < values.size(); ++i) obj[Scores::kNames[i]] = values[i];
    if (!report.baseline.empty()) {
      const auto deltas = report.deltas(row.name);
      for (std::size_t i = 0; i < deltas.size(); ++i) obj["delta"][Scores::kNames[i]] = deltas[i];
    }
    obj["trait_token_accuracy"] = row.trait_token_accuracy;
    obj["per_speaker_R1"] = row.per_speaker_rouge1;
    obj["samples"] = row.per_sample.size();
    out << obj.dump() << '\n';
  }
}

void write_plot_data(std::ostream& out, const EvalReport& report) {
  const auto flags = out.flags();
  out << std::setprecision(17);
  for (const auto& row : report.rows) {
    const auto values = row.mean.as_array();
    for (std::size_t i = 0; i < values.size(); ++i) out << row.name << '\t' << Scores::kNames[i] << '\t' << values[i] << '\n';
    for (const auto& [speaker, r1] : row.per_speaker_rouge1) out << row.name << "\tR1:" << speaker << '\t' << r1 << '\n';
  }
  out.flags(flags);
}

}  // namespace pa3::metrics
