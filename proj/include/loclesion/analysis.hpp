#pragma once

// Paired significance tests over per-model accuracy deltas.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <set>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include "loclesion/common.hpp"
#include "loclesion/harness.hpp"

namespace loclesion::analysis {

inline constexpr double kSentinel = 1e30;

enum class Stars : std::uint8_t { NotSignificant, One, Two };

constexpr std::string_view to_string(Stars s) {
  switch (s) {
    case Stars::NotSignificant: return "ns";
    case Stars::One: return "*";
    case Stars::Two: return "**";
  }
  return "ns";
}

inline Stars parse_stars(std::string_view s) {
  if (s == "ns") return Stars::NotSignificant;
  if (s == "*") return Stars::One;
  if (s == "**") return Stars::Two;
  fail(ErrorCode::SchemaError, "unknown significance marker '" + std::string(s) + "'");
}

/// p < 0.01 -> **, p < 0.05 -> *, otherwise ns.
constexpr Stars stars(double p) {
  if (p < 0.01) return Stars::Two;
  if (p < 0.05) return Stars::One;
  return Stars::NotSignificant;
}

namespace detail {

// Continued fraction for the regularized incomplete beta (modified Lentz).
inline double beta_continued_fraction(double a, double b, double x) {
  constexpr int kMaxIter = 500;
  constexpr double kEps = 1e-16;
  constexpr double kTiny = 1e-300;
  const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::fabs(d) < kTiny) d = kTiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIter; ++m) {
    const double m2 = 2.0 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::fabs(del - 1.0) < kEps) break;
  }
  return h;
}

}  // namespace detail

/// Regularized incomplete beta I_x(a, b) for a, b > 0 and x in [0, 1].
inline double incomplete_beta(double a, double b, double x) {
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  const double log_front =
      std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) + b * std::log1p(-x);
  const double front = std::exp(log_front);
  if (x < (a + 1.0) / (a + b + 2.0)) return front * detail::beta_continued_fraction(a, b, x) / a;
  return 1.0 - front * detail::beta_continued_fraction(b, a, 1.0 - x) / b;
}

/// Two-sided p-value of Student's t with `df` degrees of freedom.
inline double t_two_sided_p(double t, double df) {
  if (!std::isfinite(t)) return 0.0;
  return incomplete_beta(df / 2.0, 0.5, df / (df + t * t));
}

struct PairedT {
  double t = 0.0;
  double p = 1.0;
  int df = 0;
};

/// Two-sided paired-sample t on d = a - b. Zero-variance differences give
/// t = 0, p = 1 for a zero mean and t = +/-kSentinel, p = 0 otherwise.
inline PairedT paired_t(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size())
    fail(ErrorCode::LengthMismatch, "paired samples of length " + std::to_string(a.size()) + " and " +
                                        std::to_string(b.size()));
  if (a.size() < 2) fail(ErrorCode::TooFewPairs, "a paired t-test needs at least 2 pairs");
  const std::size_t n = a.size();
  std::vector<double> d(n);
  for (std::size_t i = 0; i < n; ++i) d[i] = a[i] - b[i];
  double mean = 0.0;
  for (double v : d) mean += v;
  mean /= static_cast<double>(n);
  double ss = 0.0;
  for (double v : d) ss += (v - mean) * (v - mean);
  const double var = ss / static_cast<double>(n - 1);
  PairedT r;
  r.df = static_cast<int>(n - 1);
  if (var == 0.0) {
    if (mean == 0.0) return r;
    r.t = mean > 0.0 ? kSentinel : -kSentinel;
    r.p = 0.0;
    return r;
  }
  r.t = mean / std::sqrt(var / static_cast<double>(n));
  r.p = t_two_sided_p(r.t, r.df);
  return r;
}

struct ModelDelta {
  std::string model_id;
  double delta = 0.0;
  std::uint32_t repeats = 1;

  friend bool operator==(const ModelDelta&, const ModelDelta&) = default;
};

struct PairedComparison {
  std::string label;
  std::vector<ModelDelta> a;
  std::vector<ModelDelta> b;
  double t = 0.0;
  double p = 1.0;
  int df = 0;
  Stars stars = Stars::NotSignificant;

  friend bool operator==(const PairedComparison&, const PairedComparison&) = default;
};

/// Per-model deltas for one (benchmark, localizer, condition).
struct DeltaSeries {
  std::string benchmark_id;
  Localizer localizer = Localizer::None;
  Selection condition = Selection::Top;
  Percent k_percent;
  std::vector<ModelDelta> deltas;

  friend bool operator==(const DeltaSeries&, const DeltaSeries&) = default;
};

struct ExperimentSummary {
  std::vector<DeltaSeries> series;
  std::vector<PairedComparison> comparisons;
  std::vector<std::string> notes;

  const DeltaSeries* find(std::string_view benchmark, Localizer loc, Selection cond) const {
    for (const auto& s : series)
      if (s.benchmark_id == benchmark && s.localizer == loc && s.condition == cond) return &s;
    return nullptr;
  }

  friend bool operator==(const ExperimentSummary&, const ExperimentSummary&) = default;
};

/// Mean delta over the random-mask repeats of one model.
inline harness::DeltaRecord aggregate_random(std::span<const harness::DeltaRecord> records) {
  if (records.empty()) fail(ErrorCode::MixedKeys, "no repeats to aggregate");
  const auto& first = records.front();
  double sum = 0.0;
  std::uint32_t repeats = 0;
  for (const auto& r : records) {
    if (r.model_id != first.model_id || r.benchmark_id != first.benchmark_id || r.k_percent != first.k_percent ||
        r.condition != first.condition || r.localizer != first.localizer)
      fail(ErrorCode::MixedKeys, "records disagree on model, benchmark, condition, localizer or k");
    sum += r.delta * r.repeats;
    repeats += r.repeats;
  }
  harness::DeltaRecord out = first;
  out.delta = sum / static_cast<double>(repeats);
  out.repeats = repeats;
  out.seed.reset();
  if (records.size() == 1) out.seed = first.seed;
  return out;
}

/// Paired t over two series aligned on identical model sequences.
inline PairedComparison compare(std::string label, std::vector<ModelDelta> a, std::vector<ModelDelta> b) {
  if (a.size() != b.size()) fail(ErrorCode::AlignmentError, label + ": series cover different model counts");
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i].model_id != b[i].model_id)
      fail(ErrorCode::AlignmentError, label + ": model '" + a[i].model_id + "' paired with '" + b[i].model_id + "'");
  std::vector<double> da, db;
  for (const auto& m : a) da.push_back(m.delta);
  for (const auto& m : b) db.push_back(m.delta);
  const PairedT r = paired_t(da, db);
  PairedComparison c;
  c.label = std::move(label);
  c.a = std::move(a);
  c.b = std::move(b);
  c.t = r.t;
  c.p = r.p;
  c.df = r.df;
  c.stars = stars(r.p);
  return c;
}

inline std::string cross_task_label(std::string_view benchmark) {
  return "MD-top vs ToM-top on " + std::string(benchmark);
}

/// Top-unit lesion deltas from the MD localizer against those from the ToM
/// localizer on the same ToM benchmark.
inline PairedComparison cross_task_compare(const std::vector<ModelDelta>& tom_deltas,
                                           const std::vector<ModelDelta>& md_deltas, std::string_view benchmark) {
  return compare(cross_task_label(benchmark), md_deltas, tom_deltas);
}

inline std::string comparison_label(Selection other, std::string_view benchmark, Localizer loc) {
  return "top vs " + std::string(to_string(other)) + " on " + std::string(benchmark) + " (" +
         std::string(to_string(loc)) + " localizer)";
}

/// Groups delta records into series (random repeats averaged per model),
/// then runs Top-vs-Random and Top-vs-Bottom per (benchmark, localizer), plus
/// the MD-vs-ToM cross-task test on every benchmark in `tom_benchmarks` where
/// both localizers ran. Comparisons with fewer than two models are skipped
/// and noted.
inline ExperimentSummary summarize(std::span<const harness::DeltaRecord> records,
                                   const std::set<std::string>& tom_benchmarks) {
  using Key = std::tuple<std::string, Localizer, Selection>;
  std::map<Key, std::map<std::string, std::vector<harness::DeltaRecord>>> grouped;
  for (const auto& r : records) grouped[{r.benchmark_id, r.localizer, r.condition}][r.model_id].push_back(r);

  ExperimentSummary summary;
  for (auto& [key, per_model] : grouped) {
    DeltaSeries s;
    std::tie(s.benchmark_id, s.localizer, s.condition) = key;
    s.k_percent = per_model.begin()->second.front().k_percent;
    for (auto& [model, recs] : per_model) {
      const harness::DeltaRecord agg = aggregate_random(recs);
      if (agg.k_percent != s.k_percent) fail(ErrorCode::MixedKeys, "series mixes k_percent values");
      s.deltas.push_back({model, agg.delta, agg.repeats});
    }
    summary.series.push_back(std::move(s));
  }

  auto try_compare = [&](std::string label, const DeltaSeries* a, const DeltaSeries* b) {
    if (!a || !b) return;
    if (a->deltas.size() < 2) {
      summary.notes.push_back(label + ": skipped, fewer than 2 models");
      return;
    }
    summary.comparisons.push_back(compare(std::move(label), a->deltas, b->deltas));
  };

  std::set<std::pair<std::string, Localizer>> groups;
  for (const auto& s : summary.series) groups.insert({s.benchmark_id, s.localizer});
  for (const auto& [bench, loc] : groups) {
    const DeltaSeries* top = summary.find(bench, loc, Selection::Top);
    try_compare(comparison_label(Selection::Random, bench, loc), top, summary.find(bench, loc, Selection::Random));
    try_compare(comparison_label(Selection::Bottom, bench, loc), top, summary.find(bench, loc, Selection::Bottom));
  }
  for (const auto& bench : tom_benchmarks) {
    const DeltaSeries* md = summary.find(bench, Localizer::MD, Selection::Top);
    const DeltaSeries* tom = summary.find(bench, Localizer::ToM, Selection::Top);
    if (!md || !tom) continue;
    if (md->deltas.size() < 2) {
      summary.notes.push_back(cross_task_label(bench) + ": skipped, fewer than 2 models");
      continue;
    }
    summary.comparisons.push_back(cross_task_compare(tom->deltas, md->deltas, bench));
  }
  return summary;
}

}  // namespace loclesion::analysis
