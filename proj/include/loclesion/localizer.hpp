#pragma once

// Contrast localizer: mean-pooled traces -> per-unit Welch t-map -> Top /
// Bottom / Random unit masks.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "loclesion/common.hpp"
#include "loclesion/rng.hpp"
#include "loclesion/runtime.hpp"
#include "loclesion/stimuli.hpp"
#include "loclesion/unit_mask.hpp"

namespace loclesion::localizer {

/// Signed stand-in for an infinite t statistic (zero variance in both
/// conditions, different means). Ranks above/below every finite t.
inline constexpr double kSentinel = 1e30;

struct TraceRecord {
  std::string stimulus_id;
  std::vector<float> values;  // M x H, block-major

  friend bool operator==(const TraceRecord&, const TraceRecord&) = default;
};

struct ActivationTrace {
  std::string model_id;
  std::uint32_t blocks = 0;
  std::uint32_t hidden = 0;
  StimulusCondition condition = StimulusCondition::Positive;
  std::vector<TraceRecord> records;

  void validate() const {
    auto bad = [](const std::string& what) { fail(ErrorCode::InvariantViolation, "trace: " + what); };
    const std::size_t units = static_cast<std::size_t>(blocks) * hidden;
    std::set<std::string> ids;
    for (const auto& r : records) {
      if (r.values.size() != units) bad("record '" + r.stimulus_id + "' has wrong size");
      for (float v : r.values)
        if (!std::isfinite(v)) bad("record '" + r.stimulus_id + "' holds a non-finite value");
      if (!ids.insert(r.stimulus_id).second) bad("duplicate stimulus id '" + r.stimulus_id + "'");
    }
  }

  friend bool operator==(const ActivationTrace&, const ActivationTrace&) = default;
};

struct TMap {
  std::string model_id;
  std::uint32_t blocks = 0;
  std::uint32_t hidden = 0;
  std::vector<double> t;  // M x H, block-major
  std::uint32_t n_pos = 0;
  std::uint32_t n_neg = 0;
  Localizer localizer = Localizer::None;

  double at(std::size_t block, std::size_t unit) const { return t[block * hidden + unit]; }

  void validate() const {
    if (t.size() != static_cast<std::size_t>(blocks) * hidden)
      fail(ErrorCode::InvariantViolation, "tmap: value count does not match dimensions");
    for (double v : t)
      if (!std::isfinite(v)) fail(ErrorCode::InvariantViolation, "tmap: non-finite entry");
  }

  friend bool operator==(const TMap&, const TMap&) = default;
};

/// Token-averaged block outputs. Sums run in double, in token order.
inline std::vector<float> mean_pool(const runtime::BlockActivations& acts) {
  if (acts.length == 0) fail(ErrorCode::EmptySequence, "cannot pool an empty token sequence");
  std::vector<float> out(acts.blocks * acts.hidden);
  std::vector<double> acc(acts.hidden);
  for (std::size_t b = 0; b < acts.blocks; ++b) {
    std::fill(acc.begin(), acc.end(), 0.0);
    for (std::size_t t = 0; t < acts.length; ++t) {
      auto row = acts.row(b, t);
      for (std::size_t j = 0; j < acts.hidden; ++j) acc[j] += row[j];
    }
    for (std::size_t j = 0; j < acts.hidden; ++j)
      out[b * acts.hidden + j] = static_cast<float>(acc[j] / static_cast<double>(acts.length));
  }
  return out;
}

/// Welch's t statistic with unbiased variances. Both-zero variances give 0
/// for equal means and +/-kSentinel otherwise.
inline double welch_t(std::span<const double> pos, std::span<const double> neg) {
  if (pos.size() < 2 || neg.size() < 2)
    fail(ErrorCode::InsufficientSamples, "Welch's t needs at least 2 samples per condition");
  auto moments = [](std::span<const double> x) {
    double mean = 0.0;
    for (double v : x) mean += v;
    mean /= static_cast<double>(x.size());
    double ss = 0.0;
    for (double v : x) ss += (v - mean) * (v - mean);
    return std::pair{mean, ss / static_cast<double>(x.size() - 1)};
  };
  const auto [mp, vp] = moments(pos);
  const auto [mn, vn] = moments(neg);
  const double diff = mp - mn;
  const double se2 = vp / static_cast<double>(pos.size()) + vn / static_cast<double>(neg.size());
  if (se2 == 0.0) {
    if (diff == 0.0) return 0.0;
    return diff > 0.0 ? kSentinel : -kSentinel;
  }
  return diff / std::sqrt(se2);
}

inline TMap build_tmap(const ActivationTrace& pos, const ActivationTrace& neg, Localizer localizer = Localizer::None) {
  if (pos.condition != StimulusCondition::Positive || neg.condition != StimulusCondition::Negative)
    fail(ErrorCode::ConditionMismatch, "build_tmap expects a positive trace and a negative trace");
  if (pos.model_id != neg.model_id || pos.blocks != neg.blocks || pos.hidden != neg.hidden)
    fail(ErrorCode::DimMismatch, "traces disagree on model or dimensions (" + std::to_string(pos.blocks) + "x" +
                                     std::to_string(pos.hidden) + " vs " + std::to_string(neg.blocks) + "x" +
                                     std::to_string(neg.hidden) + ")");
  pos.validate();
  neg.validate();
  TMap map;
  map.model_id = pos.model_id;
  map.blocks = pos.blocks;
  map.hidden = pos.hidden;
  map.n_pos = static_cast<std::uint32_t>(pos.records.size());
  map.n_neg = static_cast<std::uint32_t>(neg.records.size());
  map.localizer = localizer;
  const std::size_t units = static_cast<std::size_t>(pos.blocks) * pos.hidden;
  map.t.resize(units);
  std::vector<double> a(pos.records.size()), b(neg.records.size());
  for (std::size_t u = 0; u < units; ++u) {
    for (std::size_t k = 0; k < a.size(); ++k) a[k] = pos.records[k].values[u];
    for (std::size_t k = 0; k < b.size(); ++k) b[k] = neg.records[k].values[u];
    map.t[u] = welch_t(a, b);
  }
  return map;
}

namespace detail {

inline UnitMask make_mask(const std::string& model_id, std::uint32_t blocks, std::uint32_t hidden,
                          std::span<const std::uint32_t> flat, Selection condition, Percent k,
                          Localizer localizer) {
  UnitMask mask;
  mask.model_id = model_id;
  mask.blocks = blocks;
  mask.hidden = hidden;
  mask.condition = condition;
  mask.k_percent = k;
  mask.localizer = localizer;
  mask.selected.reserve(flat.size());
  for (std::uint32_t f : flat) mask.selected.push_back({f / hidden, f % hidden});
  std::sort(mask.selected.begin(), mask.selected.end());
  return mask;
}

inline std::size_t checked_count(Percent k, std::size_t units) {
  if (!k.valid()) fail(ErrorCode::EmptySelection, "k_percent must be in (0, 100]");
  const std::size_t n = k.count_of(units);
  if (n == 0)
    fail(ErrorCode::EmptySelection, std::to_string(k.value()) + "% of " + std::to_string(units) +
                                        " units rounds to zero");
  return n;
}

}  // namespace detail

/// Global Top/Bottom k% over the flattened t-map; ties break by ascending
/// (block, unit).
inline UnitMask select_units(const TMap& tmap, Selection condition, Percent k) {
  if (condition == Selection::Random)
    fail(ErrorCode::SchemaError, "use select_random for the random condition");
  const std::size_t units = tmap.t.size();
  const std::size_t n = detail::checked_count(k, units);
  std::vector<std::uint32_t> order(units);
  std::iota(order.begin(), order.end(), 0u);
  const bool top = condition == Selection::Top;
  auto before = [&](std::uint32_t a, std::uint32_t b) {
    if (tmap.t[a] != tmap.t[b]) return top ? tmap.t[a] > tmap.t[b] : tmap.t[a] < tmap.t[b];
    return a < b;
  };
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n), order.end(), before);
  return detail::make_mask(tmap.model_id, tmap.blocks, tmap.hidden, std::span(order).first(n), condition, k,
                           tmap.localizer);
}

/// Uniform sample without replacement over all M x H units (partial
/// Fisher-Yates driven by splitmix64-v1(seed)).
inline UnitMask select_random(std::uint32_t blocks, std::uint32_t hidden, Percent k, std::uint64_t seed,
                              const std::string& model_id = "") {
  const std::size_t units = static_cast<std::size_t>(blocks) * hidden;
  if (units == 0) fail(ErrorCode::DimMismatch, "random selection over an empty model");
  const std::size_t n = detail::checked_count(k, units);
  std::vector<std::uint32_t> pool(units);
  std::iota(pool.begin(), pool.end(), 0u);
  SplitMix64 rng(seed);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.below(units - i));
    std::swap(pool[i], pool[j]);
  }
  UnitMask mask = detail::make_mask(model_id, blocks, hidden, std::span(pool).first(n), Selection::Random, k,
                                    Localizer::None);
  mask.seed = seed;
  return mask;
}

/// Runs each stimulus of one condition through the model and records its
/// token-averaged block outputs.
template <class ModelT>
ActivationTrace collect_trace(const ModelT& model, std::span<const stimuli::Stimulus> items,
                              StimulusCondition condition, const PromptTemplate& tmpl) {
  ActivationTrace trace;
  trace.model_id = model.id();
  trace.blocks = model.blocks();
  trace.hidden = model.hidden();
  trace.condition = condition;
  const auto plan = runtime::LesionPlan::none();
  for (const auto& s : items) {
    const auto tokens = model.tokenize(stimuli::render_prompt(s, tmpl));
    auto result = model.forward_collect(tokens, plan);
    trace.records.push_back({s.id, mean_pool(result.activations)});
  }
  return trace;
}

}  // namespace loclesion::localizer
