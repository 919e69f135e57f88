#pragma once

// Contrastive stimulus sets: the seeded hard/easy arithmetic generator, the
// story-file loader, and prompt rendering.

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "loclesion/common.hpp"
#include "loclesion/fsutil.hpp"
#include "loclesion/rng.hpp"

namespace loclesion::stimuli {

struct Stimulus {
  std::string id;
  StimulusCondition condition = StimulusCondition::Positive;
  std::string text;
  /// Fields other than id/condition/text, kept in file order.
  nlohmann::ordered_json extra = nlohmann::ordered_json::object();

  friend bool operator==(const Stimulus&, const Stimulus&) = default;
};

struct StimulusSet {
  Localizer localizer = Localizer::None;
  std::vector<Stimulus> positives;
  std::vector<Stimulus> negatives;
  std::string provenance;

  friend bool operator==(const StimulusSet&, const StimulusSet&) = default;
};

enum class Operator : std::uint8_t { Add, Sub };
enum class Difficulty : std::uint8_t { Hard, Easy };

struct ArithmeticProblem {
  int lhs = 0;
  int rhs = 0;
  Operator op = Operator::Add;
  Difficulty difficulty = Difficulty::Hard;

  friend bool operator==(const ArithmeticProblem&, const ArithmeticProblem&) = default;
};

inline constexpr int kHardMin = 100;
inline constexpr int kHardMax = 200;
inline constexpr int kEasyMin = 1;
inline constexpr int kEasyMax = 20;
inline constexpr std::size_t kMinPerCondition = 2;
inline constexpr std::size_t kStoriesPerCondition = 10;

inline PromptTemplate default_md_template() {
  return PromptTemplate("Solve the following problem.\n{body}");
}

inline PromptTemplate default_tom_template() {
  return PromptTemplate("Read the following story.\n{body}");
}

/// "What is {lhs} plus {rhs}?" / "What is {lhs} minus {rhs}?"
inline std::string verbalize(const ArithmeticProblem& p) {
  std::ostringstream os;
  os << "What is " << p.lhs << (p.op == Operator::Add ? " plus " : " minus ") << p.rhs << "?";
  return os.str();
}

inline ArithmeticProblem draw_problem(SplitMix64& rng, Difficulty difficulty) {
  const int lo = difficulty == Difficulty::Hard ? kHardMin : kEasyMin;
  const int hi = difficulty == Difficulty::Hard ? kHardMax : kEasyMax;
  const auto span = static_cast<std::uint64_t>(hi - lo + 1);
  ArithmeticProblem p;
  p.difficulty = difficulty;
  p.lhs = lo + static_cast<int>(rng.below(span));
  p.rhs = lo + static_cast<int>(rng.below(span));
  p.op = rng.below(2) == 0 ? Operator::Add : Operator::Sub;
  return p;
}

/// Hard problems come from the first split of the seed, easy problems from
/// the second; within a problem the draw order is lhs, rhs, operator.
inline std::pair<std::vector<ArithmeticProblem>, std::vector<ArithmeticProblem>>
gen_md_problems(std::uint64_t seed, std::size_t count_per_condition) {
  SplitMix64 root(seed);
  SplitMix64 hard_rng = root.split();
  SplitMix64 easy_rng = root.split();
  std::vector<ArithmeticProblem> hard, easy;
  hard.reserve(count_per_condition);
  easy.reserve(count_per_condition);
  for (std::size_t i = 0; i < count_per_condition; ++i) hard.push_back(draw_problem(hard_rng, Difficulty::Hard));
  for (std::size_t i = 0; i < count_per_condition; ++i) easy.push_back(draw_problem(easy_rng, Difficulty::Easy));
  return {std::move(hard), std::move(easy)};
}

inline std::string md_stimulus_id(StimulusCondition c, std::size_t index) {
  std::ostringstream os;
  os << "md-" << (c == StimulusCondition::Positive ? "hard" : "easy") << "-";
  os.width(4);
  os.fill('0');
  os << index;
  return os.str();
}

inline StimulusSet gen_md_stimuli(std::uint64_t seed, std::size_t count_per_condition) {
  if (count_per_condition < kMinPerCondition)
    fail(ErrorCode::EmptyCondition, "count_per_condition must be at least 2");
  auto [hard, easy] = gen_md_problems(seed, count_per_condition);
  StimulusSet set;
  set.localizer = Localizer::MD;
  set.provenance = std::string(SplitMix64::kName) + " seed=" + std::to_string(seed);
  auto extra = [](const ArithmeticProblem& p) {
    nlohmann::ordered_json j;
    j["lhs"] = p.lhs;
    j["rhs"] = p.rhs;
    j["op"] = p.op == Operator::Add ? "plus" : "minus";
    return j;
  };
  for (std::size_t i = 0; i < hard.size(); ++i)
    set.positives.push_back({md_stimulus_id(StimulusCondition::Positive, i), StimulusCondition::Positive,
                             verbalize(hard[i]), extra(hard[i])});
  for (std::size_t i = 0; i < easy.size(); ++i)
    set.negatives.push_back({md_stimulus_id(StimulusCondition::Negative, i), StimulusCondition::Negative,
                             verbalize(easy[i]), extra(easy[i])});
  return set;
}

inline std::string render_prompt(const Stimulus& stimulus, const PromptTemplate& tmpl) {
  return tmpl.render(stimulus.text);
}

// ---------------------------------------------------------------------------
// JSONL

inline nlohmann::ordered_json to_json(const Stimulus& s) {
  nlohmann::ordered_json j;
  j["id"] = s.id;
  j["condition"] = std::string(to_string(s.condition));
  j["text"] = s.text;
  for (const auto& [key, value] : s.extra.items()) j[key] = value;
  return j;
}

inline std::string to_jsonl(const std::vector<Stimulus>& stimuli) {
  std::string out;
  for (const auto& s : stimuli) {
    out += to_json(s).dump();
    out += '\n';
  }
  return out;
}

inline void write_stimuli(const std::vector<Stimulus>& stimuli, const std::filesystem::path& path) {
  write_file_atomic(path, to_jsonl(stimuli));
}

/// Writes positives then negatives into one file.
inline void write_stimulus_set(const StimulusSet& set, const std::filesystem::path& path) {
  std::vector<Stimulus> all = set.positives;
  all.insert(all.end(), set.negatives.begin(), set.negatives.end());
  write_stimuli(all, path);
}

inline std::vector<Stimulus> parse_stimuli_jsonl(std::string_view bytes, const std::string& source) {
  std::vector<Stimulus> out;
  std::istringstream in{std::string(bytes)};
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    const std::string where = source + ":" + std::to_string(lineno);
    nlohmann::ordered_json j = nlohmann::ordered_json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object()) fail(ErrorCode::SchemaError, where + ": not a JSON object");
    auto field = [&](const char* name) -> std::string {
      auto it = j.find(name);
      if (it == j.end()) fail(ErrorCode::SchemaError, where + ": missing field '" + name + "'");
      if (!it->is_string()) fail(ErrorCode::SchemaError, where + ": field '" + name + "' must be a string");
      return it->get<std::string>();
    };
    Stimulus s;
    s.id = field("id");
    const std::string cond = field("condition");
    if (cond == "positive") s.condition = StimulusCondition::Positive;
    else if (cond == "negative") s.condition = StimulusCondition::Negative;
    else fail(ErrorCode::SchemaError, where + ": condition must be 'positive' or 'negative'");
    s.text = field("text");
    if (s.text.empty()) fail(ErrorCode::SchemaError, where + ": empty text");
    for (const auto& [key, value] : j.items())
      if (key != "id" && key != "condition" && key != "text") s.extra[key] = value;
    out.push_back(std::move(s));
  }
  return out;
}

/// Loads one or more stimulus JSONL files (in the given order) into a set.
/// File order is preserved within each condition.
inline StimulusSet load_stimuli(const std::vector<std::filesystem::path>& paths, Localizer localizer) {
  StimulusSet set;
  set.localizer = localizer;
  std::set<std::string> ids;
  for (const auto& path : paths) {
    if (!std::filesystem::exists(path)) fail(ErrorCode::MissingFile, "no such stimulus file: " + path.string());
    for (auto& s : parse_stimuli_jsonl(read_file(path), path.string())) {
      if (!ids.insert(s.id).second) fail(ErrorCode::SchemaError, path.string() + ": duplicate id '" + s.id + "'");
      (s.condition == StimulusCondition::Positive ? set.positives : set.negatives).push_back(std::move(s));
    }
    if (!set.provenance.empty()) set.provenance += ";";
    set.provenance += "file:" + path.filename().string();
  }
  if (set.positives.size() < kMinPerCondition || set.negatives.size() < kMinPerCondition)
    fail(ErrorCode::EmptyCondition, "need at least 2 stimuli per condition, got " +
                                        std::to_string(set.positives.size()) + " positive / " +
                                        std::to_string(set.negatives.size()) + " negative");
  return set;
}

/// Story-contrast stimuli. Counts other than 10/10 are accepted with a warning;
/// warnings go to `warnings` when given, otherwise to stderr.
inline StimulusSet load_tom_stimuli(const std::filesystem::path& path,
                                    std::vector<std::string>* warnings = nullptr) {
  StimulusSet set = load_stimuli({path}, Localizer::ToM);
  if (set.positives.size() != kStoriesPerCondition || set.negatives.size() != kStoriesPerCondition) {
    std::string msg = path.string() + ": expected 10 false-belief and 10 false-photograph stories, got " +
                      std::to_string(set.positives.size()) + "/" + std::to_string(set.negatives.size());
    if (warnings) warnings->push_back(std::move(msg));
    else std::cerr << "warning: " << msg << '\n';
  }
  return set;
}

}  // namespace loclesion::stimuli
