#pragma once

// Versioned persistence for pipeline artifacts.
//
// Bulk float data is binary and little-endian:
//   trace  "LOCT"  (layout fixed for interop with external trace writers)
//   t-map  "LOTM"
// Small structured artifacts are JSON objects carrying "kind", "version",
// "created" and "tool_version": mask, eval, summary. Canonical bytes of a JSON
// artifact are its serialization without "created". FORMATS.md has the
// byte-level layouts.

#include <chrono>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <string_view>

#include "json.hpp"
#include "loclesion/analysis.hpp"
#include "loclesion/binary.hpp"
#include "loclesion/fsutil.hpp"
#include "loclesion/harness.hpp"
#include "loclesion/localizer.hpp"
#include "loclesion/unit_mask.hpp"

namespace loclesion::io {

enum class Kind : std::uint8_t { Trace, TMap, Mask, Eval, Summary };

constexpr std::string_view to_string(Kind k) {
  switch (k) {
    case Kind::Trace: return "trace";
    case Kind::TMap: return "tmap";
    case Kind::Mask: return "mask";
    case Kind::Eval: return "eval";
    case Kind::Summary: return "summary";
  }
  return "trace";
}

inline constexpr std::string_view kTraceMagic = "LOCT";
inline constexpr std::string_view kTMapMagic = "LOTM";
inline constexpr std::uint32_t kTraceVersion = 1;
inline constexpr std::uint32_t kTMapVersion = 1;
inline constexpr std::uint32_t kJsonVersion = 1;

struct ArtifactHeader {
  std::string magic;  // 4-byte magic for binary kinds, "JSON" otherwise
  std::uint32_t version = 0;
  Kind kind = Kind::Trace;
  std::string model_id;
  std::string created;       // empty for binary kinds
  std::string tool_version;  // empty for binary kinds
};

inline std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// ---------------------------------------------------------------------------
// binary

inline std::string encode(const localizer::ActivationTrace& trace) {
  trace.validate();
  binary::Writer w;
  w.bytes(kTraceMagic);
  w.u32(kTraceVersion);
  w.str(trace.model_id);
  w.u32(trace.blocks);
  w.u32(trace.hidden);
  w.u8(static_cast<std::uint8_t>(trace.condition));
  w.u32(static_cast<std::uint32_t>(trace.records.size()));
  for (const auto& r : trace.records) {
    w.str(r.stimulus_id);
    w.f32s(r.values);
  }
  return std::move(w).data();
}

inline std::string encode(const localizer::TMap& map) {
  map.validate();
  binary::Writer w;
  w.bytes(kTMapMagic);
  w.u32(kTMapVersion);
  w.str(map.model_id);
  w.u32(map.blocks);
  w.u32(map.hidden);
  w.u8(static_cast<std::uint8_t>(map.localizer));
  w.u32(map.n_pos);
  w.u32(map.n_neg);
  for (double v : map.t) w.f64(v);
  return std::move(w).data();
}

namespace detail {

inline void expect_magic(binary::Reader& r, std::string_view magic, std::string_view what) {
  if (r.remaining() < 4 || r.bytes(4) != magic)
    fail(ErrorCode::BadMagic, "not a " + std::string(what) + " file (expected magic " + std::string(magic) + ")");
}

inline void expect_version(std::uint32_t got, std::uint32_t supported, std::string_view what) {
  if (got == 0 || got > supported)
    fail(ErrorCode::UnsupportedVersion, std::string(what) + " version " + std::to_string(got) +
                                            " (supported: " + std::to_string(supported) + ")");
}

inline void expect_end(const binary::Reader& r, std::string_view what) {
  if (!r.done())
    fail(ErrorCode::InvariantViolation, std::to_string(r.remaining()) + " trailing bytes after " + std::string(what));
}

}  // namespace detail

inline localizer::ActivationTrace decode_trace(std::string_view bytes) {
  binary::Reader r(bytes);
  detail::expect_magic(r, kTraceMagic, "trace");
  detail::expect_version(r.u32(), kTraceVersion, "trace");
  localizer::ActivationTrace trace;
  trace.model_id = r.str();
  trace.blocks = r.u32();
  trace.hidden = r.u32();
  const std::uint8_t cond = r.u8();
  if (cond > 1) fail(ErrorCode::InvariantViolation, "trace condition byte " + std::to_string(cond));
  trace.condition = static_cast<StimulusCondition>(cond);
  const std::uint32_t count = r.u32();
  const std::uint64_t units = static_cast<std::uint64_t>(trace.blocks) * trace.hidden;
  // each record holds at least a 4-byte id length and its floats
  r.need_items(count, 4 + 4 * units);
  trace.records.reserve(count);
  for (std::uint32_t n = 0; n < count; ++n) {
    localizer::TraceRecord rec;
    rec.stimulus_id = r.str();
    r.need_items(units, 4);
    rec.values.resize(units);
    for (float& v : rec.values) v = r.f32();
    trace.records.push_back(std::move(rec));
  }
  detail::expect_end(r, "trace");
  trace.validate();
  return trace;
}

inline localizer::TMap decode_tmap(std::string_view bytes) {
  binary::Reader r(bytes);
  detail::expect_magic(r, kTMapMagic, "t-map");
  detail::expect_version(r.u32(), kTMapVersion, "t-map");
  localizer::TMap map;
  map.model_id = r.str();
  map.blocks = r.u32();
  map.hidden = r.u32();
  const std::uint8_t loc = r.u8();
  if (loc > 2) fail(ErrorCode::InvariantViolation, "t-map localizer byte " + std::to_string(loc));
  map.localizer = static_cast<Localizer>(loc);
  map.n_pos = r.u32();
  map.n_neg = r.u32();
  const std::uint64_t units = static_cast<std::uint64_t>(map.blocks) * map.hidden;
  r.need_items(units, 8);
  map.t.resize(units);
  for (double& v : map.t) v = r.f64();
  detail::expect_end(r, "t-map");
  map.validate();
  return map;
}

// ---------------------------------------------------------------------------
// JSON

namespace detail {

using nlohmann::json;

inline json header(Kind kind) {
  json j;
  j["kind"] = std::string(to_string(kind));
  j["version"] = kJsonVersion;
  j["created"] = utc_timestamp();
  j["tool_version"] = std::string(kToolVersion);
  return j;
}

inline json parse_object(std::string_view bytes, Kind kind) {
  json j = json::parse(bytes, nullptr, false);
  if (j.is_discarded() || !j.is_object())
    fail(ErrorCode::SchemaError, std::string(to_string(kind)) + ": not a JSON object");
  if (auto it = j.find("kind"); it != j.end()) {
    if (!it->is_string() || it->get<std::string>() != to_string(kind))
      fail(ErrorCode::BadMagic, "expected a " + std::string(to_string(kind)) + " artifact");
  }
  if (auto it = j.find("version"); it != j.end()) {
    if (!it->is_number_unsigned()) fail(ErrorCode::SchemaError, "'version' must be a positive integer");
    expect_version(it->get<std::uint32_t>(), kJsonVersion, to_string(kind));
  }
  return j;
}

inline const json& field(const json& j, const char* name) {
  auto it = j.find(name);
  if (it == j.end()) fail(ErrorCode::SchemaError, std::string("missing field '") + name + "'");
  return *it;
}

inline std::string get_string(const json& j, const char* name) {
  const json& v = field(j, name);
  if (!v.is_string()) fail(ErrorCode::SchemaError, std::string("'") + name + "' must be a string");
  return v.get<std::string>();
}

inline std::uint64_t get_uint(const json& j, const char* name) {
  const json& v = field(j, name);
  if (!v.is_number_unsigned()) fail(ErrorCode::SchemaError, std::string("'") + name + "' must be a non-negative integer");
  return v.get<std::uint64_t>();
}

inline std::uint32_t get_u32(const json& j, const char* name) {
  const std::uint64_t v = get_uint(j, name);
  if (v > 0xFFFFFFFFull) fail(ErrorCode::InvariantViolation, std::string("'") + name + "' out of range");
  return static_cast<std::uint32_t>(v);
}

inline double get_number(const json& j, const char* name) {
  const json& v = field(j, name);
  if (!v.is_number()) fail(ErrorCode::SchemaError, std::string("'") + name + "' must be a number");
  return v.get<double>();
}

inline bool get_bool(const json& j, const char* name) {
  const json& v = field(j, name);
  if (!v.is_boolean()) fail(ErrorCode::SchemaError, std::string("'") + name + "' must be a boolean");
  return v.get<bool>();
}

inline Percent get_percent(const json& j, const char* name) {
  const Percent k = Percent::from_double(get_number(j, name));
  if (!k.valid()) fail(ErrorCode::InvariantViolation, "k_percent must be in (0, 100]");
  return k;
}

inline std::optional<std::uint64_t> get_seed(const json& j) {
  auto it = j.find("seed");
  if (it == j.end() || it->is_null()) return std::nullopt;
  if (!it->is_number_unsigned()) fail(ErrorCode::SchemaError, "'seed' must be a non-negative integer");
  return it->get<std::uint64_t>();
}

/// Wraps a JSON decoder so that every failure surfaces as a library Error.
template <class F>
auto guarded(F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const Error&) {
    throw;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::SchemaError, e.what());
  }
}

inline json to_json(const harness::MaskProvenance& m) {
  json j;
  j["condition"] = std::string(to_string(m.condition));
  j["k_percent"] = m.k_percent.value();
  j["localizer"] = std::string(to_string(m.localizer));
  if (m.seed) j["seed"] = *m.seed;
  j["units"] = m.units;
  return j;
}

inline harness::MaskProvenance provenance_from_json(const json& j) {
  if (!j.is_object()) fail(ErrorCode::SchemaError, "'mask' must be an object or null");
  harness::MaskProvenance m;
  m.condition = parse_selection(get_string(j, "condition"));
  m.k_percent = get_percent(j, "k_percent");
  m.localizer = parse_localizer(get_string(j, "localizer"));
  m.seed = get_seed(j);
  m.units = get_uint(j, "units");
  return m;
}

inline json to_json(const std::vector<analysis::ModelDelta>& v) {
  json arr = json::array();
  for (const auto& d : v) arr.push_back({{"model_id", d.model_id}, {"delta", d.delta}, {"repeats", d.repeats}});
  return arr;
}

inline std::vector<analysis::ModelDelta> deltas_from_json(const json& arr) {
  if (!arr.is_array()) fail(ErrorCode::SchemaError, "delta list must be an array");
  std::vector<analysis::ModelDelta> out;
  for (const auto& d : arr) {
    if (!d.is_object()) fail(ErrorCode::SchemaError, "delta entries must be objects");
    analysis::ModelDelta m;
    m.model_id = get_string(d, "model_id");
    m.delta = get_number(d, "delta");
    m.repeats = get_u32(d, "repeats");
    if (!std::isfinite(m.delta) || m.delta < -1.0 || m.delta > 1.0)
      fail(ErrorCode::InvariantViolation, "delta outside [-1, 1]");
    out.push_back(std::move(m));
  }
  return out;
}

}  // namespace detail

inline nlohmann::json to_json(const UnitMask& mask) {
  mask.validate();
  auto j = detail::header(Kind::Mask);
  j["model_id"] = mask.model_id;
  j["M"] = mask.blocks;
  j["H"] = mask.hidden;
  j["condition"] = std::string(to_string(mask.condition));
  j["k_percent"] = mask.k_percent.value();
  j["localizer"] = std::string(to_string(mask.localizer));
  if (mask.seed) j["seed"] = *mask.seed;
  auto sel = nlohmann::json::array();
  for (const Unit& u : mask.selected) sel.push_back({u.block, u.index});
  j["selected"] = std::move(sel);
  return j;
}

inline nlohmann::json to_json(const harness::EvalResult& r) {
  auto j = detail::header(Kind::Eval);
  j["model_id"] = r.model_id;
  j["benchmark_id"] = r.benchmark_id;
  j["mask"] = r.mask ? detail::to_json(*r.mask) : nlohmann::json(nullptr);
  j["template_hash"] = r.template_hash;
  j["correct"] = r.correct;
  j["total"] = r.total;
  j["accuracy"] = r.accuracy();
  auto items = nlohmann::json::array();
  for (const auto& o : r.items) {
    nlohmann::json it;
    it["id"] = o.item_id;
    it["letter"] = o.letter ? nlohmann::json(std::string(1, *o.letter)) : nlohmann::json(nullptr);
    it["raw_token"] = o.raw_token;
    it["correct"] = o.correct;
    if (o.error) it["error"] = *o.error;
    items.push_back(std::move(it));
  }
  j["items"] = std::move(items);
  return j;
}

inline nlohmann::json to_json(const analysis::ExperimentSummary& s) {
  auto j = detail::header(Kind::Summary);
  auto series = nlohmann::json::array();
  for (const auto& d : s.series) {
    series.push_back({{"benchmark_id", d.benchmark_id},
                      {"localizer", std::string(to_string(d.localizer))},
                      {"condition", std::string(to_string(d.condition))},
                      {"k_percent", d.k_percent.value()},
                      {"deltas", detail::to_json(d.deltas)}});
  }
  j["series"] = std::move(series);
  auto comps = nlohmann::json::array();
  for (const auto& c : s.comparisons) {
    comps.push_back({{"label", c.label},
                     {"a", detail::to_json(c.a)},
                     {"b", detail::to_json(c.b)},
                     {"t", c.t},
                     {"p", c.p},
                     {"df", c.df},
                     {"stars", std::string(to_string(c.stars))}});
  }
  j["comparisons"] = std::move(comps);
  j["notes"] = s.notes;
  return j;
}

inline std::string encode(const UnitMask& mask) { return to_json(mask).dump(1) + "\n"; }
inline std::string encode(const harness::EvalResult& r) { return to_json(r).dump(2) + "\n"; }
inline std::string encode(const analysis::ExperimentSummary& s) { return to_json(s).dump(2) + "\n"; }

inline UnitMask decode_mask(std::string_view bytes) {
  return detail::guarded([&] {
    const auto j = detail::parse_object(bytes, Kind::Mask);
    UnitMask m;
    m.model_id = detail::get_string(j, "model_id");
    m.blocks = detail::get_u32(j, "M");
    m.hidden = detail::get_u32(j, "H");
    m.condition = parse_selection(detail::get_string(j, "condition"));
    m.k_percent = detail::get_percent(j, "k_percent");
    m.localizer = parse_localizer(detail::get_string(j, "localizer"));
    m.seed = detail::get_seed(j);
    const auto& sel = detail::field(j, "selected");
    if (!sel.is_array()) fail(ErrorCode::SchemaError, "'selected' must be an array");
    for (const auto& pair : sel) {
      if (!pair.is_array() || pair.size() != 2 || !pair[0].is_number_integer() || !pair[1].is_number_integer())
        fail(ErrorCode::SchemaError, "'selected' entries must be [block, unit] integer pairs");
      const auto i = pair[0].get<std::int64_t>(), u = pair[1].get<std::int64_t>();
      if (i < 0 || u < 0 || i >= m.blocks || u >= m.hidden)
        fail(ErrorCode::InvariantViolation,
             "mask: unit (" + std::to_string(i) + ", " + std::to_string(u) + ") out of range");
      m.selected.push_back({static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(u)});
    }
    m.validate();
    return m;
  });
}

inline harness::EvalResult decode_eval(std::string_view bytes) {
  return detail::guarded([&] {
    const auto j = detail::parse_object(bytes, Kind::Eval);
    harness::EvalResult r;
    r.model_id = detail::get_string(j, "model_id");
    r.benchmark_id = detail::get_string(j, "benchmark_id");
    if (auto it = j.find("mask"); it != j.end() && !it->is_null()) r.mask = detail::provenance_from_json(*it);
    r.template_hash = detail::get_string(j, "template_hash");
    const auto& items = detail::field(j, "items");
    if (!items.is_array()) fail(ErrorCode::SchemaError, "'items' must be an array");
    std::set<std::string> ids;
    for (const auto& it : items) {
      if (!it.is_object()) fail(ErrorCode::SchemaError, "item entries must be objects");
      harness::ItemOutcome o;
      o.item_id = detail::get_string(it, "id");
      if (!ids.insert(o.item_id).second) fail(ErrorCode::InvariantViolation, "duplicate item id '" + o.item_id + "'");
      const auto& letter = detail::field(it, "letter");
      if (!letter.is_null()) {
        if (!letter.is_string() || letter.get<std::string>().size() != 1)
          fail(ErrorCode::SchemaError, "'letter' must be a single character or null");
        const char c = letter.get<std::string>()[0];
        if (c < 'A' || c > 'F') fail(ErrorCode::InvariantViolation, "letter outside A-F");
        o.letter = c;
      }
      o.raw_token = detail::get_string(it, "raw_token");
      o.correct = detail::get_bool(it, "correct");
      if (o.correct && !o.letter) fail(ErrorCode::InvariantViolation, "item marked correct without a letter");
      if (auto e = it.find("error"); e != it.end() && !e->is_null()) {
        if (!e->is_string()) fail(ErrorCode::SchemaError, "'error' must be a string");
        o.error = e->get<std::string>();
      }
      r.items.push_back(std::move(o));
    }
    r.total = detail::get_uint(j, "total");
    r.correct = detail::get_uint(j, "correct");
    const auto counted = static_cast<std::size_t>(
        std::count_if(r.items.begin(), r.items.end(), [](const auto& o) { return o.correct; }));
    if (r.total != r.items.size() || r.correct != counted)
      fail(ErrorCode::InvariantViolation, "correct/total disagree with the item list");
    if (std::fabs(detail::get_number(j, "accuracy") - r.accuracy()) > 1e-12)
      fail(ErrorCode::InvariantViolation, "accuracy disagrees with correct/total");
    return r;
  });
}

inline analysis::ExperimentSummary decode_summary(std::string_view bytes) {
  return detail::guarded([&] {
    const auto j = detail::parse_object(bytes, Kind::Summary);
    analysis::ExperimentSummary s;
    const auto& series = detail::field(j, "series");
    if (!series.is_array()) fail(ErrorCode::SchemaError, "'series' must be an array");
    for (const auto& d : series) {
      analysis::DeltaSeries ds;
      ds.benchmark_id = detail::get_string(d, "benchmark_id");
      ds.localizer = parse_localizer(detail::get_string(d, "localizer"));
      ds.condition = parse_selection(detail::get_string(d, "condition"));
      ds.k_percent = detail::get_percent(d, "k_percent");
      ds.deltas = detail::deltas_from_json(detail::field(d, "deltas"));
      s.series.push_back(std::move(ds));
    }
    const auto& comps = detail::field(j, "comparisons");
    if (!comps.is_array()) fail(ErrorCode::SchemaError, "'comparisons' must be an array");
    for (const auto& c : comps) {
      analysis::PairedComparison pc;
      pc.label = detail::get_string(c, "label");
      pc.a = detail::deltas_from_json(detail::field(c, "a"));
      pc.b = detail::deltas_from_json(detail::field(c, "b"));
      pc.t = detail::get_number(c, "t");
      pc.p = detail::get_number(c, "p");
      const auto& df = detail::field(c, "df");
      if (!df.is_number_integer()) fail(ErrorCode::SchemaError, "'df' must be an integer");
      pc.df = df.get<int>();
      pc.stars = analysis::parse_stars(detail::get_string(c, "stars"));
      if (pc.a.size() != pc.b.size() || pc.df != static_cast<int>(pc.a.size()) - 1)
        fail(ErrorCode::InvariantViolation, "comparison '" + pc.label + "' is not aligned");
      if (!(pc.p >= 0.0 && pc.p <= 1.0) || pc.stars != analysis::stars(pc.p))
        fail(ErrorCode::InvariantViolation, "comparison '" + pc.label + "' has inconsistent p/stars");
      s.comparisons.push_back(std::move(pc));
    }
    if (auto it = j.find("notes"); it != j.end()) {
      if (!it->is_array()) fail(ErrorCode::SchemaError, "'notes' must be an array");
      for (const auto& n : *it) {
        if (!n.is_string()) fail(ErrorCode::SchemaError, "notes must be strings");
        s.notes.push_back(n.get<std::string>());
      }
    }
    return s;
  });
}

/// Serialization without the "created" timestamp; equal for equal artifacts.
inline std::string canonical_bytes(std::string_view encoded) {
  if (encoded.size() >= 4 && (encoded.substr(0, 4) == kTraceMagic || encoded.substr(0, 4) == kTMapMagic))
    return std::string(encoded);
  auto j = nlohmann::json::parse(encoded, nullptr, false);
  if (j.is_discarded() || !j.is_object()) fail(ErrorCode::SchemaError, "not a JSON artifact");
  j.erase("created");
  return j.dump(1);
}

/// Identifies an artifact from its leading bytes.
inline ArtifactHeader peek_header(std::string_view bytes) {
  ArtifactHeader h;
  if (bytes.size() >= 4 && (bytes.substr(0, 4) == kTraceMagic || bytes.substr(0, 4) == kTMapMagic)) {
    binary::Reader r(bytes);
    h.magic = std::string(r.bytes(4));
    h.kind = h.magic == kTraceMagic ? Kind::Trace : Kind::TMap;
    h.version = r.u32();
    h.model_id = r.str();
    return h;
  }
  return detail::guarded([&] {
    auto j = nlohmann::json::parse(bytes, nullptr, false);
    if (j.is_discarded() || !j.is_object()) fail(ErrorCode::BadMagic, "unrecognized artifact");
    h.magic = "JSON";
    const std::string kind = detail::get_string(j, "kind");
    if (kind == "mask") h.kind = Kind::Mask;
    else if (kind == "eval") h.kind = Kind::Eval;
    else if (kind == "summary") h.kind = Kind::Summary;
    else fail(ErrorCode::BadMagic, "unknown artifact kind '" + kind + "'");
    h.version = static_cast<std::uint32_t>(detail::get_uint(j, "version"));
    if (j.contains("model_id") && j["model_id"].is_string()) h.model_id = j["model_id"].get<std::string>();
    if (j.contains("created") && j["created"].is_string()) h.created = j["created"].get<std::string>();
    if (j.contains("tool_version") && j["tool_version"].is_string()) h.tool_version = j["tool_version"].get<std::string>();
    return h;
  });
}

// ---------------------------------------------------------------------------
// files

template <class T>
void save(const T& artifact, const std::filesystem::path& path) {
  write_file_atomic(path, encode(artifact));
}

inline localizer::ActivationTrace load_trace(const std::filesystem::path& p) { return decode_trace(read_file(p)); }
inline localizer::TMap load_tmap(const std::filesystem::path& p) { return decode_tmap(read_file(p)); }
inline UnitMask load_mask(const std::filesystem::path& p) { return decode_mask(read_file(p)); }
inline harness::EvalResult load_eval(const std::filesystem::path& p) { return decode_eval(read_file(p)); }
inline analysis::ExperimentSummary load_summary(const std::filesystem::path& p) {
  return decode_summary(read_file(p));
}

}  // namespace loclesion::io
