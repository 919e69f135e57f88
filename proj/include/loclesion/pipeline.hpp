#pragma once

// Config-driven orchestration: localize -> select -> lesion -> evaluate ->
// compare, with per-evaluation checkpoints and a hashed output manifest.

#include <algorithm>
#include <filesystem>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "loclesion/analysis.hpp"
#include "loclesion/artifacts.hpp"
#include "loclesion/harness.hpp"
#include "loclesion/hash.hpp"
#include "loclesion/localizer.hpp"
#include "loclesion/report.hpp"
#include "loclesion/runtime.hpp"
#include "loclesion/stimuli.hpp"

namespace loclesion::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

struct ModelSpec {
  std::string name;
  std::optional<runtime::ModelConfig> config;  // toy model built from a seed
  std::optional<fs::path> weights;             // or a weights file
};

struct BenchmarkSpec {
  std::string id;
  fs::path path;
  Localizer domain = Localizer::None;
};

struct StimulusSource {
  std::optional<fs::path> file;
  std::uint64_t seed = 7;
  std::size_t count = 100;
};

struct ExperimentConfig {
  std::vector<ModelSpec> models;
  std::vector<Localizer> localizers{Localizer::ToM, Localizer::MD};
  std::map<Localizer, StimulusSource> stimuli;
  Percent k_percent = Percent::from_micros(Percent::kScale);  // 1%
  std::uint32_t random_repeats = 15;
  std::uint64_t random_seed_base = 1000;
  std::vector<BenchmarkSpec> benchmarks;
  std::map<Localizer, std::string> stimulus_templates;
  std::string mcq_template = std::string(harness::default_mcq_template().text());
  fs::path output_dir = "loclesion-out";

  PromptTemplate stimulus_template(Localizer loc) const {
    if (auto it = stimulus_templates.find(loc); it != stimulus_templates.end()) return PromptTemplate(it->second);
    return loc == Localizer::MD ? stimuli::default_md_template() : stimuli::default_tom_template();
  }

  void validate() const {
    auto usage = [](const std::string& m) { fail(ErrorCode::UsageError, "config: " + m); };
    if (!k_percent.valid()) usage("k_percent must be in (0, 100]");
    if (random_repeats < 1) usage("random_repeats must be at least 1");
    if (models.empty()) usage("at least one model is required");
    std::set<std::string> names, ids;
    for (const auto& m : models) {
      if (m.name.empty() || m.name.find_first_not_of("ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789._-") !=
                                std::string::npos)
        usage("model name '" + m.name + "' must be non-empty and use only [A-Za-z0-9._-]");
      if (!names.insert(m.name).second) usage("duplicate model name '" + m.name + "'");
      if (m.config.has_value() == m.weights.has_value()) usage("model '" + m.name + "' needs exactly one of config/weights");
    }
    for (const auto& b : benchmarks) {
      if (b.id.empty() || b.id.find_first_of("/\\") != std::string::npos) usage("invalid benchmark id '" + b.id + "'");
      if (!ids.insert(b.id).second) usage("duplicate benchmark id '" + b.id + "'");
    }
    if (benchmarks.empty()) usage("at least one benchmark is required");
    if (localizers.empty()) usage("at least one localizer is required");
    for (Localizer l : localizers) {
      if (l == Localizer::None) usage("localizer 'none' cannot be run");
      if (l == Localizer::ToM && (!stimuli.contains(l) || !stimuli.at(l).file))
        usage("the tom localizer needs a story file (stimuli.tom.file)");
    }
    (void)PromptTemplate(mcq_template);
    for (Localizer l : localizers) (void)stimulus_template(l);
  }
};

// ---------------------------------------------------------------------------
// config parsing

inline runtime::ModelConfig parse_model_config(const json& j, const fs::path& base) {
  runtime::ModelConfig c;
  auto u32 = [&](const char* k, std::uint32_t& dst) {
    if (auto it = j.find(k); it != j.end()) {
      if (!it->is_number_unsigned()) fail(ErrorCode::UsageError, std::string("model config: '") + k + "' must be a positive integer");
      dst = it->get<std::uint32_t>();
    }
  };
  if (auto it = j.find("name"); it != j.end() && it->is_string()) c.name = it->get<std::string>();
  u32("n_blocks", c.n_blocks);
  u32("hidden", c.hidden);
  u32("n_heads", c.n_heads);
  u32("max_seq", c.max_seq);
  if (auto it = j.find("init_seed"); it != j.end()) {
    if (!it->is_number_unsigned()) fail(ErrorCode::UsageError, "model config: 'init_seed' must be a non-negative integer");
    c.init_seed = it->get<std::uint64_t>();
  }
  if (auto it = j.find("letter_logit_bias"); it != j.end()) {
    if (!it->is_number()) fail(ErrorCode::UsageError, "model config: 'letter_logit_bias' must be a number");
    c.letter_logit_bias = it->get<float>();
  }
  if (auto it = j.find("vocab"); it != j.end()) {
    if (!it->is_string()) fail(ErrorCode::UsageError, "model config: 'vocab' must be a path");
    c.vocab = runtime::decode_vocab(read_file(base / it->get<std::string>()));
  }
  c.validate();
  return c;
}

inline ModelSpec parse_model_spec(const json& j, const fs::path& base) {
  if (!j.is_object()) fail(ErrorCode::UsageError, "config: model entries must be objects");
  ModelSpec m;
  if (auto it = j.find("name"); it != j.end() && it->is_string()) m.name = it->get<std::string>();
  if (auto it = j.find("weights"); it != j.end()) {
    if (!it->is_string()) fail(ErrorCode::UsageError, "config: 'weights' must be a path");
    m.weights = base / it->get<std::string>();
    if (m.name.empty()) m.name = m.weights->stem().string();
  } else {
    m.config = parse_model_config(j, base);
    if (m.name.empty()) m.name = m.config->name;
    m.config->name = m.name;
  }
  return m;
}

inline runtime::Model build_model(const ModelSpec& spec) {
  if (spec.weights) {
    runtime::Model m = runtime::load_weights(*spec.weights);
    if (!spec.name.empty() && spec.name != m.id()) {
      auto c = m.config();
      c.name = spec.name;
      return runtime::Model::from_weights(std::move(c), m.weights());
    }
    return m;
  }
  return runtime::new_model(*spec.config);
}

namespace detail {

template <class F>
auto usage_guarded(F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::UsageError, std::string("config: ") + e.what());
  }
}

inline Localizer parse_run_localizer(const json& v) {
  if (!v.is_string()) fail(ErrorCode::UsageError, "config: localizers must be strings");
  const auto s = v.get<std::string>();
  if (s == "tom") return Localizer::ToM;
  if (s == "md") return Localizer::MD;
  fail(ErrorCode::UsageError, "config: unknown localizer '" + s + "'");
}

}  // namespace detail

/// Relative paths inside the document resolve against `base` (the config
/// file's directory), except output_dir, which resolves against the working
/// directory.
inline ExperimentConfig parse_config(const json& j, const fs::path& base) {
  return detail::usage_guarded([&] {
    if (!j.is_object()) fail(ErrorCode::UsageError, "config must be a JSON object");
    ExperimentConfig c;
    const auto& models = j.at("models");
    if (!models.is_array()) fail(ErrorCode::UsageError, "config: 'models' must be an array");
    for (const auto& m : models) c.models.push_back(parse_model_spec(m, base));
    if (auto it = j.find("localizers"); it != j.end()) {
      c.localizers.clear();
      for (const auto& l : *it) c.localizers.push_back(detail::parse_run_localizer(l));
    }
    if (auto it = j.find("stimuli"); it != j.end()) {
      for (const auto& [key, v] : it->items()) {
        const Localizer loc = detail::parse_run_localizer(json(key));
        StimulusSource src;
        if (v.contains("file")) src.file = base / v.at("file").get<std::string>();
        if (v.contains("seed")) src.seed = v.at("seed").get<std::uint64_t>();
        if (v.contains("count")) src.count = v.at("count").get<std::size_t>();
        c.stimuli[loc] = src;
      }
    }
    if (auto it = j.find("k_percent"); it != j.end()) c.k_percent = Percent::from_double(it->get<double>());
    if (auto it = j.find("random_repeats"); it != j.end()) c.random_repeats = it->get<std::uint32_t>();
    if (auto it = j.find("random_seed_base"); it != j.end()) c.random_seed_base = it->get<std::uint64_t>();
    for (const auto& b : j.at("benchmarks")) {
      BenchmarkSpec spec;
      spec.id = b.at("id").get<std::string>();
      spec.path = base / b.at("path").get<std::string>();
      if (b.contains("domain")) spec.domain = detail::parse_run_localizer(b.at("domain"));
      c.benchmarks.push_back(std::move(spec));
    }
    if (auto it = j.find("templates"); it != j.end()) {
      for (const auto& [key, v] : it->items()) {
        if (key == "mcq") c.mcq_template = v.get<std::string>();
        else c.stimulus_templates[detail::parse_run_localizer(json(key))] = v.get<std::string>();
      }
    }
    if (auto it = j.find("output_dir"); it != j.end()) c.output_dir = it->get<std::string>();
    c.validate();
    return c;
  });
}

inline ExperimentConfig load_config(const fs::path& path) {
  if (!fs::exists(path)) fail(ErrorCode::MissingFile, "no such config file: " + path.string());
  json j = json::parse(read_file(path), nullptr, false);
  if (j.is_discarded()) fail(ErrorCode::UsageError, path.string() + ": invalid JSON");
  return parse_config(j, path.parent_path());
}

// ---------------------------------------------------------------------------
// planning

struct EvalJob {
  std::string model;
  Localizer localizer = Localizer::None;
  std::string benchmark;
  std::optional<Selection> condition;  // nullopt: unlesioned baseline
  std::uint32_t repeat = 0;

  fs::path relative_path() const {
    std::string file = !condition ? "baseline" : std::string(to_string(*condition));
    if (condition == Selection::Random) {
      char buf[16];
      std::snprintf(buf, sizeof buf, "_r%02u", repeat);
      file += buf;
    }
    return fs::path(model) / "evals" / std::string(to_string(localizer)) / benchmark / (file + ".json");
  }
};

/// Per model x localizer x benchmark: baseline, Top, Bottom, then every
/// Random repeat.
inline std::vector<EvalJob> plan_evals(const ExperimentConfig& c) {
  std::vector<EvalJob> jobs;
  for (const auto& m : c.models)
    for (Localizer loc : c.localizers)
      for (const auto& b : c.benchmarks) {
        jobs.push_back({m.name, loc, b.id, std::nullopt, 0});
        jobs.push_back({m.name, loc, b.id, Selection::Top, 0});
        jobs.push_back({m.name, loc, b.id, Selection::Bottom, 0});
        for (std::uint32_t r = 0; r < c.random_repeats; ++r) jobs.push_back({m.name, loc, b.id, Selection::Random, r});
      }
  return jobs;
}

inline std::vector<std::string> describe_plan(const ExperimentConfig& c) {
  std::vector<std::string> lines;
  for (const auto& m : c.models) {
    for (Localizer loc : c.localizers) {
      lines.push_back("localize " + std::string(to_string(loc)) + " on " + m.name + " -> Top/Bottom " +
                      analysis::detail::shortest(c.k_percent.value()) + "% masks");
    }
    lines.push_back("sample " + std::to_string(c.random_repeats) + " random masks for " + m.name + " (seeds " +
                    std::to_string(c.random_seed_base) + ".." +
                    std::to_string(c.random_seed_base + c.random_repeats - 1) + ")");
  }
  for (const auto& job : plan_evals(c)) lines.push_back("evaluate " + job.relative_path().string());
  lines.push_back("summarize and write report.json, report.csv, report.svg, manifest.json");
  return lines;
}

// ---------------------------------------------------------------------------
// manifest and checkpoints

inline constexpr std::string_view kManifestName = "manifest.json";
inline constexpr std::string_view kCheckpointName = "checkpoint.json";

/// Every regular file under `dir` except the manifest itself, with SHA-256.
inline json build_manifest(const fs::path& dir) {
  std::vector<std::pair<std::string, fs::path>> files;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    const auto rel = fs::relative(e.path(), dir).generic_string();
    if (rel == kManifestName) continue;
    files.emplace_back(rel, e.path());
  }
  std::sort(files.begin(), files.end());
  json list = json::array();
  for (const auto& [rel, path] : files) {
    const std::string bytes = read_file(path);
    list.push_back({{"path", rel}, {"sha256", sha256_hex(bytes)}, {"bytes", bytes.size()}});
  }
  return {{"version", 1}, {"files", std::move(list)}};
}

class Checkpoint {
 public:
  explicit Checkpoint(fs::path dir) : dir_(std::move(dir)) {}

  void load() {
    const auto path = dir_ / kCheckpointName;
    if (!fs::exists(path)) return;
    json j = json::parse(read_file(path), nullptr, false);
    if (j.is_discarded() || !j.contains("completed") || !j["completed"].is_object()) return;
    for (const auto& [rel, hash] : j["completed"].items())
      if (hash.is_string()) done_[rel] = hash.get<std::string>();
  }

  void clear() {
    done_.clear();
    std::error_code ec;
    fs::remove(dir_ / kCheckpointName, ec);
  }

  /// The stored result for `rel`, if it was checkpointed and is unchanged.
  std::optional<harness::EvalResult> reuse(const fs::path& rel) const {
    auto it = done_.find(rel.generic_string());
    if (it == done_.end() || !fs::exists(dir_ / rel)) return std::nullopt;
    const std::string bytes = read_file(dir_ / rel);
    if (sha256_hex(bytes) != it->second) return std::nullopt;
    return io::decode_eval(bytes);
  }

  void record(const fs::path& rel, std::string_view bytes) {
    done_[rel.generic_string()] = sha256_hex(bytes);
    json completed = json::object();
    for (const auto& [k, v] : done_) completed[k] = v;
    write_file_atomic(dir_ / kCheckpointName, json{{"version", 1}, {"completed", completed}}.dump(1) + "\n");
  }

 private:
  fs::path dir_;
  std::map<std::string, std::string> done_;
};

// ---------------------------------------------------------------------------
// run

struct RunOptions {
  bool dry_run = false;
  bool resume = false;
  std::optional<std::size_t> stop_after;  // stop after computing this many evaluations
  unsigned threads = 0;
  std::ostream* log = nullptr;
};

struct RunOutcome {
  bool completed = false;
  std::vector<std::string> plan;
  std::vector<EvalJob> evaluations;  // every evaluation in the finished run
  std::size_t computed = 0;
  std::size_t reused = 0;
  analysis::ExperimentSummary summary;
};

inline stimuli::StimulusSet stimulus_set_for(const ExperimentConfig& c, Localizer loc, const fs::path& out,
                                             std::vector<std::string>* warnings) {
  const StimulusSource src = c.stimuli.contains(loc) ? c.stimuli.at(loc) : StimulusSource{};
  if (loc == Localizer::ToM) return stimuli::load_tom_stimuli(*src.file, warnings);
  if (src.file) return stimuli::load_stimuli({*src.file}, Localizer::MD);
  auto set = stimuli::gen_md_stimuli(src.seed, src.count);
  stimuli::write_stimuli(set.positives, out / "stimuli" / "md_positive.jsonl");
  stimuli::write_stimuli(set.negatives, out / "stimuli" / "md_negative.jsonl");
  return set;
}

struct LocalizerMasks {
  UnitMask top;
  UnitMask bottom;
};

/// Traces, t-map and Top/Bottom masks for one model and localizer, persisted
/// under <out>/<model>/<localizer>/.
inline LocalizerMasks localize(const runtime::Model& model, const stimuli::StimulusSet& set, Localizer loc,
                               const PromptTemplate& tmpl, Percent k, const fs::path& dir) {
  const auto pos = localizer::collect_trace(model, std::span(set.positives), StimulusCondition::Positive, tmpl);
  const auto neg = localizer::collect_trace(model, std::span(set.negatives), StimulusCondition::Negative, tmpl);
  const auto tmap = localizer::build_tmap(pos, neg, loc);
  LocalizerMasks masks{localizer::select_units(tmap, Selection::Top, k),
                       localizer::select_units(tmap, Selection::Bottom, k)};
  io::save(pos, dir / "trace_positive.loct");
  io::save(neg, dir / "trace_negative.loct");
  io::save(tmap, dir / "tmap.lotm");
  io::save(masks.top, dir / "mask_top.json");
  io::save(masks.bottom, dir / "mask_bottom.json");
  return masks;
}

inline RunOutcome run(const ExperimentConfig& c, const RunOptions& opt = {}) {
  c.validate();
  RunOutcome outcome;
  outcome.plan = describe_plan(c);
  auto log = [&](const std::string& line) {
    if (opt.log) *opt.log << line << '\n';
  };
  if (opt.dry_run) {
    for (const auto& line : outcome.plan) log(line);
    return outcome;
  }

  const fs::path out = c.output_dir;
  fs::create_directories(out);
  Checkpoint checkpoint(out);
  if (opt.resume) checkpoint.load();
  else checkpoint.clear();

  std::map<std::string, std::vector<harness::McqItem>> items;
  std::vector<std::string> warnings;
  for (const auto& b : c.benchmarks) items[b.id] = harness::load_benchmark(b.path, b.id, &warnings);
  std::map<Localizer, stimuli::StimulusSet> sets;
  for (Localizer loc : c.localizers) sets[loc] = stimulus_set_for(c, loc, out, &warnings);
  for (const auto& w : warnings) log("warning: " + w);

  const PromptTemplate mcq(c.mcq_template);
  std::vector<harness::DeltaRecord> records;
  const auto jobs = plan_evals(c);

  for (const auto& spec : c.models) {
    const runtime::Model model = build_model(spec);
    log("model " + model.id() + ": " + std::to_string(model.blocks()) + " blocks x " +
        std::to_string(model.hidden()) + " units");
    std::map<Localizer, LocalizerMasks> masks;
    for (Localizer loc : c.localizers) {
      masks.emplace(loc, localize(model, sets.at(loc), loc, c.stimulus_template(loc), c.k_percent,
                                  out / spec.name / std::string(to_string(loc))));
      log("  localized " + std::string(to_string(loc)));
    }
    std::vector<UnitMask> random;
    for (std::uint32_t r = 0; r < c.random_repeats; ++r) {
      random.push_back(localizer::select_random(model.blocks(), model.hidden(), c.k_percent,
                                                c.random_seed_base + r, model.id()));
      char name[32];
      std::snprintf(name, sizeof name, "mask_r%02u.json", r);
      io::save(random.back(), out / spec.name / "random" / name);
    }

    std::map<std::pair<Localizer, std::string>, harness::EvalResult> baselines;
    for (const auto& job : jobs) {
      if (job.model != spec.name) continue;
      const fs::path rel = job.relative_path();
      const UnitMask* mask = nullptr;
      if (job.condition == Selection::Top) mask = &masks.at(job.localizer).top;
      else if (job.condition == Selection::Bottom) mask = &masks.at(job.localizer).bottom;
      else if (job.condition == Selection::Random) mask = &random.at(job.repeat);

      std::optional<harness::EvalResult> result;
      if (opt.resume) result = checkpoint.reuse(rel);
      if (result) {
        ++outcome.reused;
      } else {
        if (opt.stop_after && outcome.computed >= *opt.stop_after) {
          log("stopped after " + std::to_string(outcome.computed) + " evaluations; rerun with --resume");
          return outcome;
        }
        harness::EvalOptions eo;
        eo.benchmark_id = job.benchmark;
        eo.prompt_template = mcq;
        eo.threads = opt.threads;
        if (mask) eo.mask = harness::MaskProvenance::of(*mask);
        const auto plan = mask ? runtime::LesionPlan::from_mask(*mask) : runtime::LesionPlan::none();
        result = harness::evaluate(model, std::span(items.at(job.benchmark)), plan, eo);
        const std::string bytes = io::encode(*result);
        write_file_atomic(out / rel, bytes);
        checkpoint.record(rel, bytes);
        ++outcome.computed;
      }
      outcome.evaluations.push_back(job);
      const auto key = std::pair{job.localizer, job.benchmark};
      if (!job.condition) {
        baselines.emplace(key, std::move(*result));
        continue;
      }
      harness::DeltaRecord d = harness::score_delta(*result, baselines.at(key));
      d.localizer = job.localizer;
      records.push_back(std::move(d));
    }
    log("  evaluated " + spec.name);
  }

  std::set<std::string> tom_benchmarks;
  for (const auto& b : c.benchmarks)
    if (b.domain == Localizer::ToM) tom_benchmarks.insert(b.id);
  outcome.summary = analysis::summarize(records, tom_benchmarks);
  const analysis::ReportFormat formats[] = {analysis::ReportFormat::Json, analysis::ReportFormat::Csv,
                                            analysis::ReportFormat::Svg};
  analysis::emit_report(outcome.summary, formats, out);
  write_file_atomic(out / kManifestName, build_manifest(out).dump(1) + "\n");
  outcome.completed = true;
  log("wrote " + (out / "report.json").string());
  return outcome;
}

// ---------------------------------------------------------------------------
// analysis over saved evaluation results (core or external)

/// Pairs each lesioned result with its model/benchmark baseline. Random-mask
/// results (localizer "none") serve as the control for every localizer that
/// has Top or Bottom results on the same model and benchmark; duplicate
/// random seeds and identical duplicate baselines are collapsed.
inline analysis::ExperimentSummary analyze_results(const std::vector<harness::EvalResult>& results,
                                                   const std::set<std::string>& tom_benchmarks) {
  using Key = std::pair<std::string, std::string>;  // model, benchmark
  std::map<Key, const harness::EvalResult*> baselines;
  for (const auto& r : results) {
    if (r.mask) continue;
    auto [it, inserted] = baselines.emplace(Key{r.model_id, r.benchmark_id}, &r);
    if (!inserted && it->second->correct != r.correct)
      fail(ErrorCode::MismatchedRuns, "conflicting baselines for " + r.model_id + " on " + r.benchmark_id);
  }
  std::map<Key, std::set<Localizer>> localizers;
  for (const auto& r : results)
    if (r.mask && r.mask->localizer != Localizer::None)
      localizers[{r.model_id, r.benchmark_id}].insert(r.mask->localizer);

  std::vector<harness::DeltaRecord> records;
  std::set<std::tuple<std::string, std::string, Selection, Localizer, std::optional<std::uint64_t>>> seen;
  for (const auto& r : results) {
    if (!r.mask) continue;
    const Key key{r.model_id, r.benchmark_id};
    auto base = baselines.find(key);
    if (base == baselines.end())
      fail(ErrorCode::MismatchedRuns, "no baseline for " + r.model_id + " on " + r.benchmark_id);
    const harness::DeltaRecord d = harness::score_delta(r, *base->second);
    std::vector<Localizer> targets{r.mask->localizer};
    if (r.mask->localizer == Localizer::None && localizers.contains(key))
      targets.assign(localizers[key].begin(), localizers[key].end());
    for (Localizer loc : targets) {
      if (!seen.insert({r.model_id, r.benchmark_id, r.mask->condition, loc,
                        r.mask->condition == Selection::Random ? r.mask->seed : std::nullopt})
               .second)
        continue;
      harness::DeltaRecord copy = d;
      copy.localizer = loc;
      records.push_back(std::move(copy));
    }
  }
  return analysis::summarize(records, tom_benchmarks);
}

/// Every evaluation-result JSON under the given files/directories, sorted by path.
inline std::vector<harness::EvalResult> collect_results(const std::vector<fs::path>& inputs) {
  std::vector<fs::path> files;
  for (const auto& in : inputs) {
    if (!fs::exists(in)) fail(ErrorCode::MissingFile, "no such file or directory: " + in.string());
    if (fs::is_directory(in)) {
      for (const auto& e : fs::recursive_directory_iterator(in))
        if (e.is_regular_file() && e.path().extension() == ".json") files.push_back(e.path());
    } else {
      files.push_back(in);
    }
  }
  std::sort(files.begin(), files.end());
  std::vector<harness::EvalResult> out;
  for (const auto& f : files) {
    const std::string bytes = read_file(f);
    io::ArtifactHeader h;
    try {
      h = io::peek_header(bytes);
    } catch (const Error&) {
      continue;
    }
    if (h.kind == io::Kind::Eval) out.push_back(io::decode_eval(bytes));
  }
  return out;
}

}  // namespace loclesion::pipeline
