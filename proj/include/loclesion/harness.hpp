#pragma once

// Multiple-choice benchmark harness: letter-labelled prompts, one generated
// token per item, accuracy and lesion deltas.

#include <algorithm>
#include <concepts>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "loclesion/common.hpp"
#include "loclesion/fsutil.hpp"
#include "loclesion/hash.hpp"
#include "loclesion/parallel.hpp"
#include "loclesion/runtime.hpp"
#include "loclesion/unit_mask.hpp"

namespace loclesion::harness {

inline constexpr std::size_t kMaxOptions = 6;
inline constexpr std::size_t kMinOptions = 2;

struct McqItem {
  std::string id;
  std::string context;
  std::string question;
  std::vector<std::string> options;
  std::size_t gold_index = 0;
  std::optional<std::string> image_path;
  std::map<std::string, std::string> tags;

  char gold_letter() const { return static_cast<char>('A' + gold_index); }

  friend bool operator==(const McqItem&, const McqItem&) = default;
};

/// Item counts of the published benchmark subsets; a loaded file whose
/// benchmark id matches one of these is checked against it.
struct KnownBenchmark {
  std::string_view id;
  std::size_t items;
};
inline constexpr KnownBenchmark kKnownBenchmarks[] = {
    {"tomi", 231}, {"opentom", 686}, {"fantom", 642}, {"math", 4914}, {"mathvista", 540}, {"mmstar", 1500},
};

inline std::optional<std::size_t> expected_item_count(std::string_view benchmark_id) {
  for (const auto& k : kKnownBenchmarks)
    if (k.id == benchmark_id) return k.items;
  return std::nullopt;
}

inline McqItem parse_item(const nlohmann::json& j, const std::string& where) {
  auto schema = [&](const std::string& what) { fail(ErrorCode::SchemaError, where + ": " + what); };
  if (!j.is_object()) schema("not a JSON object");
  auto str = [&](const char* name, bool required) -> std::string {
    auto it = j.find(name);
    if (it == j.end()) {
      if (required) schema(std::string("missing field '") + name + "'");
      return {};
    }
    if (!it->is_string()) schema(std::string("field '") + name + "' must be a string");
    return it->get<std::string>();
  };
  McqItem item;
  item.id = str("id", true);
  item.context = str("context", false);
  item.question = str("question", true);
  auto opts = j.find("options");
  if (opts == j.end() || !opts->is_array()) schema("'options' must be an array of strings");
  for (const auto& o : *opts) {
    if (!o.is_string()) schema("'options' must be an array of strings");
    item.options.push_back(o.get<std::string>());
  }
  if (item.options.size() > kMaxOptions)
    fail(ErrorCode::TooManyOptions, where + ": " + std::to_string(item.options.size()) + " options (max 6)");
  if (item.options.size() < kMinOptions) schema("at least 2 options are required");
  auto gold = j.find("gold_index");
  if (gold == j.end() || !gold->is_number_integer()) schema("'gold_index' must be an integer");
  const auto g = gold->get<std::int64_t>();
  if (g < 0 || static_cast<std::size_t>(g) >= item.options.size())
    fail(ErrorCode::GoldOutOfRange, where + ": gold_index " + std::to_string(g) + " with " +
                                        std::to_string(item.options.size()) + " options");
  item.gold_index = static_cast<std::size_t>(g);
  if (auto img = j.find("image_path"); img != j.end() && !img->is_null()) {
    if (!img->is_string()) schema("'image_path' must be a string");
    item.image_path = img->get<std::string>();
  }
  if (auto tags = j.find("tags"); tags != j.end() && !tags->is_null()) {
    if (!tags->is_object()) schema("'tags' must be an object");
    for (const auto& [k, v] : tags->items()) item.tags[k] = v.is_string() ? v.get<std::string>() : v.dump();
  }
  return item;
}

inline nlohmann::json to_json(const McqItem& item) {
  nlohmann::json j;
  j["id"] = item.id;
  j["context"] = item.context;
  j["question"] = item.question;
  j["options"] = item.options;
  j["gold_index"] = item.gold_index;
  if (item.image_path) j["image_path"] = *item.image_path;
  j["tags"] = item.tags;
  return j;
}

inline std::vector<McqItem> parse_benchmark(std::string_view bytes, const std::string& source) {
  std::vector<McqItem> items;
  std::set<std::string> ids;
  std::istringstream in{std::string(bytes)};
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = source + ":" + std::to_string(lineno);
    nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded()) fail(ErrorCode::SchemaError, where + ": invalid JSON");
    McqItem item = parse_item(j, where);
    if (!ids.insert(item.id).second) fail(ErrorCode::SchemaError, where + ": duplicate item id '" + item.id + "'");
    items.push_back(std::move(item));
  }
  return items;
}

/// Items in file order. A count that disagrees with a known benchmark of the
/// same id is reported as a warning.
inline std::vector<McqItem> load_benchmark(const std::filesystem::path& path, std::string_view benchmark_id = {},
                                           std::vector<std::string>* warnings = nullptr) {
  if (!std::filesystem::exists(path)) fail(ErrorCode::MissingFile, "no such benchmark file: " + path.string());
  auto items = parse_benchmark(read_file(path), path.string());
  if (auto expected = expected_item_count(benchmark_id); expected && *expected != items.size()) {
    std::string msg = path.string() + ": '" + std::string(benchmark_id) + "' normally has " +
                      std::to_string(*expected) + " items, file has " + std::to_string(items.size());
    if (warnings) warnings->push_back(std::move(msg));
    else std::cerr << "warning: " << msg << '\n';
  }
  return items;
}

inline PromptTemplate default_mcq_template() { return PromptTemplate("{body}Answer:"); }

/// context, question, then "A) ...", "B) ..." one per line; the template adds
/// the answer cue.
inline std::string format_prompt(const McqItem& item, const PromptTemplate& tmpl) {
  if (item.options.size() > kMaxOptions) fail(ErrorCode::TooManyOptions, "item '" + item.id + "'");
  std::string body;
  if (!item.context.empty()) {
    body += item.context;
    body += '\n';
  }
  body += item.question;
  body += '\n';
  for (std::size_t k = 0; k < item.options.size(); ++k) {
    body += static_cast<char>('A' + k);
    body += ") ";
    body += item.options[k];
    body += '\n';
  }
  return tmpl.render(body);
}

/// Identifies the mask an evaluation ran under.
struct MaskProvenance {
  Selection condition = Selection::Top;
  Percent k_percent;
  Localizer localizer = Localizer::None;
  std::optional<std::uint64_t> seed;
  std::size_t units = 0;

  static MaskProvenance of(const UnitMask& m) {
    return {m.condition, m.k_percent, m.localizer, m.seed, m.selected.size()};
  }

  friend bool operator==(const MaskProvenance&, const MaskProvenance&) = default;
};

struct ItemOutcome {
  std::string item_id;
  std::optional<char> letter;  // nullopt: the generation matched no option letter
  std::string raw_token;
  bool correct = false;
  std::optional<std::string> error;

  friend bool operator==(const ItemOutcome&, const ItemOutcome&) = default;
};

struct EvalResult {
  std::string model_id;
  std::string benchmark_id;
  std::optional<MaskProvenance> mask;
  std::string template_hash;
  std::vector<ItemOutcome> items;
  std::size_t correct = 0;
  std::size_t total = 0;

  double accuracy() const { return total == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(total); }

  friend bool operator==(const EvalResult&, const EvalResult&) = default;
};

/// Anything that can tokenize a prompt and greedily emit one token under a
/// lesion plan.
template <class M>
concept McqModel = requires(const M& m, std::string_view text, std::span<const TokenId> tokens,
                            const runtime::LesionPlan& plan, TokenId id) {
  { m.id() } -> std::convertible_to<std::string>;
  { m.tokenize(text) } -> std::convertible_to<std::vector<TokenId>>;
  { m.generate_one(tokens, plan) } -> std::convertible_to<TokenId>;
  { m.token_text(id) } -> std::convertible_to<std::string>;
};

/// The option letter a generated token names, if any. Surrounding whitespace
/// is ignored so both "A" and " A" match.
inline std::optional<char> match_letter(std::string_view token, std::size_t option_count) {
  const auto b = token.find_first_not_of(" \t\n\r");
  if (b == std::string_view::npos) return std::nullopt;
  const auto e = token.find_last_not_of(" \t\n\r");
  const auto core = token.substr(b, e - b + 1);
  if (core.size() != 1) return std::nullopt;
  const char c = core[0];
  if (c < 'A' || c >= static_cast<char>('A' + option_count)) return std::nullopt;
  return c;
}

struct EvalOptions {
  std::string benchmark_id;
  PromptTemplate prompt_template = default_mcq_template();
  std::optional<MaskProvenance> mask;
  unsigned threads = 0;  // 0: worker_count()
};

/// One generated token per item. Items whose prompt exceeds the model context
/// are logged as errors and scored incorrect.
template <McqModel M>
EvalResult evaluate(const M& model, std::span<const McqItem> items, const runtime::LesionPlan& plan,
                    const EvalOptions& options = {}) {
  if (items.empty()) fail(ErrorCode::EmptyBenchmark, "benchmark '" + options.benchmark_id + "' has no items");
  EvalResult result;
  result.model_id = model.id();
  result.benchmark_id = options.benchmark_id;
  result.mask = options.mask;
  result.template_hash = sha256_hex(options.prompt_template.text());
  result.items.resize(items.size());
  parallel_for(items.size(), options.threads ? options.threads : worker_count(), [&](std::size_t i) {
    const McqItem& item = items[i];
    ItemOutcome& out = result.items[i];
    out.item_id = item.id;
    try {
      const auto tokens = model.tokenize(format_prompt(item, options.prompt_template));
      const TokenId tok = model.generate_one(tokens, plan);
      out.raw_token = model.token_text(tok);
      out.letter = match_letter(out.raw_token, item.options.size());
      out.correct = out.letter && *out.letter == item.gold_letter();
    } catch (const Error& e) {
      if (e.code() != ErrorCode::SequenceTooLong) throw;
      out.error = e.what();
      out.correct = false;
    }
  });
  result.total = items.size();
  result.correct = static_cast<std::size_t>(
      std::count_if(result.items.begin(), result.items.end(), [](const ItemOutcome& o) { return o.correct; }));
  return result;
}

struct DeltaRecord {
  std::string model_id;
  std::string benchmark_id;
  Selection condition = Selection::Top;
  Localizer localizer = Localizer::None;
  Percent k_percent;
  double delta = 0.0;
  std::uint32_t repeats = 1;
  std::optional<std::uint64_t> seed;

  friend bool operator==(const DeltaRecord&, const DeltaRecord&) = default;
};

/// lesioned accuracy - baseline accuracy. Condition, k and localizer come
/// from the lesioned run's mask provenance.
inline DeltaRecord score_delta(const EvalResult& lesioned, const EvalResult& baseline) {
  if (lesioned.model_id != baseline.model_id || lesioned.benchmark_id != baseline.benchmark_id)
    fail(ErrorCode::MismatchedRuns, "runs differ in model or benchmark");
  auto ids = [](const EvalResult& r) {
    std::vector<std::string> v;
    for (const auto& o : r.items) v.push_back(o.item_id);
    std::sort(v.begin(), v.end());
    return v;
  };
  if (ids(lesioned) != ids(baseline)) fail(ErrorCode::MismatchedRuns, "runs cover different item sets");
  DeltaRecord d;
  d.model_id = lesioned.model_id;
  d.benchmark_id = lesioned.benchmark_id;
  if (lesioned.mask) {
    d.condition = lesioned.mask->condition;
    d.k_percent = lesioned.mask->k_percent;
    d.localizer = lesioned.mask->localizer;
    d.seed = lesioned.mask->seed;
  }
  d.delta = lesioned.accuracy() - baseline.accuracy();
  return d;
}

}  // namespace loclesion::harness
