// loclesion: command-line front end for the localize / lesion / evaluate
// pipeline. Exit codes: 0 success, 2 usage error, 3 data error, 4 internal error.

#include <filesystem>
#include <iostream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "formats_text.hpp"
#include "loclesion/loclesion.hpp"

namespace fs = std::filesystem;
using namespace loclesion;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitData = 3;
constexpr int kExitInternal = 4;

int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::UsageError: return kExitUsage;
    case ErrorCode::IoError: return kExitInternal;
    default: return kExitData;
  }
}

struct ModelArgs {
  std::string config;
  std::string weights;

  void add_to(CLI::App* cmd) {
    cmd->add_option("--model-config", config, "JSON model description (toy config or {\"weights\": path})");
    cmd->add_option("--weights", weights, "LLMW weights file (vocabulary read from <stem>.vocab.json)");
  }

  runtime::Model build() const {
    if (config.empty() == weights.empty())
      fail(ErrorCode::UsageError, "give exactly one of --model-config or --weights");
    if (!weights.empty()) return runtime::load_weights(weights);
    if (!fs::exists(config)) fail(ErrorCode::MissingFile, "no such model config: " + config);
    auto j = nlohmann::json::parse(read_file(config), nullptr, false);
    if (j.is_discarded()) fail(ErrorCode::UsageError, config + ": invalid JSON");
    return pipeline::build_model(pipeline::parse_model_spec(j, fs::path(config).parent_path()));
  }
};

std::optional<PromptTemplate> template_from(const std::string& text, const std::string& file) {
  if (!file.empty()) return PromptTemplate(read_file(file));
  if (!text.empty()) return PromptTemplate(text);
  return std::nullopt;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Localize task-selective units in transformer language models, lesion them, and measure the effect"};
  app.require_subcommand(1);
  std::function<void()> action;

  // gen-stimuli
  auto* gen = app.add_subcommand("gen-stimuli", "Generate the hard/easy arithmetic contrast set");
  std::string gen_localizer;
  std::uint64_t gen_seed = 7;
  std::size_t gen_count = 100;
  std::string gen_out = ".";
  gen->add_option("--localizer", gen_localizer, "md (tom stories are loaded, not generated)")->required();
  gen->add_option("--seed", gen_seed, "generator seed");
  gen->add_option("--count", gen_count, "stimuli per condition");
  gen->add_option("--out-dir", gen_out, "output directory");
  gen->callback([&] {
    action = [&] {
      if (gen_localizer == "tom")
        fail(ErrorCode::UsageError,
             "ToM stories cannot be generated; supply a story JSONL file (see data/tom_synthetic.jsonl) to "
             "'localize --stimuli'");
      if (gen_localizer != "md") fail(ErrorCode::UsageError, "unknown localizer '" + gen_localizer + "'");
      const auto set = stimuli::gen_md_stimuli(gen_seed, gen_count);
      stimuli::write_stimuli(set.positives, fs::path(gen_out) / "md_positive.jsonl");
      stimuli::write_stimuli(set.negatives, fs::path(gen_out) / "md_negative.jsonl");
      std::cout << "wrote " << set.positives.size() << " + " << set.negatives.size() << " stimuli to " << gen_out
                << "\n";
    };
  });

  // localize
  auto* loc = app.add_subcommand("localize", "Extract traces and build the t-map");
  ModelArgs loc_model;
  loc_model.add_to(loc);
  std::string loc_localizer;
  std::vector<std::string> loc_stimuli, loc_from_traces;
  std::string loc_template, loc_template_file, loc_out = ".";
  loc->add_option("--localizer", loc_localizer, "tom or md")->required();
  loc->add_option("--stimuli", loc_stimuli, "stimulus JSONL file(s)");
  loc->add_option("--template", loc_template, "prompt template containing {body}");
  loc->add_option("--template-file", loc_template_file, "file holding the prompt template");
  loc->add_option("--from-traces", loc_from_traces, "positive and negative trace files; skips the model")
      ->expected(2);
  loc->add_option("--out-dir", loc_out, "output directory");
  loc->callback([&] {
    action = [&] {
      const Localizer l = parse_localizer(loc_localizer);
      const fs::path out = loc_out;
      if (!loc_from_traces.empty()) {
        const auto tmap = localizer::build_tmap(io::load_trace(loc_from_traces[0]), io::load_trace(loc_from_traces[1]), l);
        io::save(tmap, out / "tmap.lotm");
        std::cout << "wrote " << (out / "tmap.lotm").string() << " (" << tmap.blocks << "x" << tmap.hidden << ")\n";
        return;
      }
      if (loc_stimuli.empty()) fail(ErrorCode::UsageError, "--stimuli is required unless --from-traces is given");
      std::vector<fs::path> paths(loc_stimuli.begin(), loc_stimuli.end());
      for (const auto& p : paths)
        if (!fs::exists(p)) fail(ErrorCode::MissingFile, "no such stimulus file: " + p.string());
      const auto set = l == Localizer::ToM && paths.size() == 1 ? stimuli::load_tom_stimuli(paths[0])
                                                                 : stimuli::load_stimuli(paths, l);
      const auto model = loc_model.build();
      const PromptTemplate tmpl = template_from(loc_template, loc_template_file)
                                      .value_or(l == Localizer::MD ? stimuli::default_md_template()
                                                                   : stimuli::default_tom_template());
      const auto pos = localizer::collect_trace(model, std::span(set.positives), StimulusCondition::Positive, tmpl);
      const auto neg = localizer::collect_trace(model, std::span(set.negatives), StimulusCondition::Negative, tmpl);
      const auto tmap = localizer::build_tmap(pos, neg, l);
      io::save(pos, out / "trace_positive.loct");
      io::save(neg, out / "trace_negative.loct");
      io::save(tmap, out / "tmap.lotm");
      std::cout << "wrote traces and t-map (" << tmap.blocks << "x" << tmap.hidden << ") to " << out.string() << "\n";
    };
  });

  // select
  auto* sel = app.add_subcommand("select", "Select Top/Bottom/Random unit masks");
  std::string sel_tmap, sel_condition, sel_out = "mask.json", sel_model_id;
  double sel_k = 1.0;
  std::optional<std::uint64_t> sel_seed;
  std::uint32_t sel_blocks = 0, sel_hidden = 0;
  sel->add_option("--tmap", sel_tmap, "t-map file");
  sel->add_option("--condition", sel_condition, "top, bottom or random")->required();
  sel->add_option("--k", sel_k, "percentage of units to select");
  sel->add_option("--seed", sel_seed, "seed for the random condition");
  sel->add_option("--blocks", sel_blocks, "block count for random masks without --tmap");
  sel->add_option("--hidden", sel_hidden, "hidden size for random masks without --tmap");
  sel->add_option("--model-id", sel_model_id, "model id for random masks without --tmap");
  sel->add_option("--out", sel_out, "mask JSON path");
  sel->callback([&] {
    action = [&] {
      const Selection cond = parse_selection(sel_condition);
      const Percent k = Percent::from_double(sel_k);
      UnitMask mask;
      if (cond == Selection::Random) {
        if (!sel_seed) fail(ErrorCode::UsageError, "--seed is required for the random condition");
        if (!sel_tmap.empty()) {
          const auto tmap = io::load_tmap(sel_tmap);
          mask = localizer::select_random(tmap.blocks, tmap.hidden, k, *sel_seed, tmap.model_id);
        } else {
          if (sel_blocks == 0 || sel_hidden == 0) fail(ErrorCode::UsageError, "give --tmap or --blocks/--hidden");
          mask = localizer::select_random(sel_blocks, sel_hidden, k, *sel_seed, sel_model_id);
        }
      } else {
        if (sel_tmap.empty()) fail(ErrorCode::UsageError, "--tmap is required for top/bottom");
        mask = localizer::select_units(io::load_tmap(sel_tmap), cond, k);
      }
      io::save(mask, sel_out);
      std::cout << "selected " << mask.selected.size() << " units -> " << sel_out << "\n";
    };
  });

  // evaluate
  auto* ev = app.add_subcommand("evaluate", "Evaluate a (lesioned) model on a benchmark");
  ModelArgs ev_model;
  ev_model.add_to(ev);
  std::string ev_bench, ev_bench_id, ev_mask, ev_template, ev_template_file, ev_out = "result.json";
  ev->add_option("--benchmark", ev_bench, "benchmark JSONL")->required();
  ev->add_option("--benchmark-id", ev_bench_id, "benchmark id (default: file stem)");
  ev->add_option("--mask", ev_mask, "mask JSON to lesion with");
  ev->add_option("--template", ev_template, "prompt template containing {body}");
  ev->add_option("--template-file", ev_template_file, "file holding the prompt template");
  ev->add_option("--out", ev_out, "result JSON path");
  ev->callback([&] {
    action = [&] {
      const std::string id = ev_bench_id.empty() ? fs::path(ev_bench).stem().string() : ev_bench_id;
      const auto items = harness::load_benchmark(ev_bench, id);
      const auto model = ev_model.build();
      harness::EvalOptions opts;
      opts.benchmark_id = id;
      if (auto t = template_from(ev_template, ev_template_file)) opts.prompt_template = *t;
      auto plan = runtime::LesionPlan::none();
      if (!ev_mask.empty()) {
        const auto mask = io::load_mask(ev_mask);
        opts.mask = harness::MaskProvenance::of(mask);
        plan = runtime::LesionPlan::from_mask(mask);
      }
      const auto result = harness::evaluate(model, std::span(items), plan, opts);
      io::save(result, ev_out);
      std::cout << id << ": " << result.correct << "/" << result.total << " correct (accuracy "
                << result.accuracy() << ")\n";
    };
  });

  // analyze
  auto* an = app.add_subcommand("analyze", "Compute deltas and paired tests from evaluation results");
  std::vector<std::string> an_results, an_tom, an_formats{"json", "csv", "svg"};
  std::string an_out = ".";
  an->add_option("--results", an_results, "result files or directories")->required();
  an->add_option("--tom-benchmark", an_tom, "benchmark ids that get the cross-task comparison");
  an->add_option("--format", an_formats, "json, csv and/or svg")->delimiter(',');
  an->add_option("--out-dir", an_out, "output directory");
  an->callback([&] {
    action = [&] {
      const auto results = pipeline::collect_results({an_results.begin(), an_results.end()});
      if (results.empty()) fail(ErrorCode::SchemaError, "no evaluation results found");
      const auto summary = pipeline::analyze_results(results, {an_tom.begin(), an_tom.end()});
      std::vector<analysis::ReportFormat> formats;
      for (const auto& f : an_formats) formats.push_back(analysis::parse_report_format(f));
      for (const auto& p : analysis::emit_report(summary, formats, an_out)) std::cout << "wrote " << p.string() << "\n";
    };
  });

  // run
  auto* rn = app.add_subcommand("run", "Run the full experiment from a config file");
  std::string rn_config = std::string(LOCLESION_DATA_DIR) + "/default_config.json", rn_output;
  bool rn_dry = false, rn_resume = false;
  std::optional<double> rn_k;
  std::optional<std::uint32_t> rn_repeats;
  std::optional<std::uint64_t> rn_seed_base;
  std::optional<std::size_t> rn_stop_after;
  rn->add_option("--config", rn_config, "experiment config JSON");
  rn->add_option("--output", rn_output, "output directory (overrides output_dir)");
  rn->add_option("--k", rn_k, "percentage of units to lesion (overrides k_percent)");
  rn->add_option("--repeats", rn_repeats, "random-mask repeats (overrides random_repeats)");
  rn->add_option("--seed-base", rn_seed_base, "first random-mask seed (overrides random_seed_base)");
  rn->add_flag("--dry-run", rn_dry, "print the plan and write nothing");
  rn->add_flag("--resume", rn_resume, "reuse checkpointed evaluations in the output directory");
  rn->add_option("--stop-after", rn_stop_after, "stop after computing this many evaluations")->group("");
  rn->callback([&] {
    action = [&] {
      auto cfg = pipeline::load_config(rn_config);
      if (!rn_output.empty()) cfg.output_dir = rn_output;
      if (rn_k) cfg.k_percent = Percent::from_double(*rn_k);
      if (rn_repeats) cfg.random_repeats = *rn_repeats;
      if (rn_seed_base) cfg.random_seed_base = *rn_seed_base;
      cfg.validate();
      pipeline::RunOptions opts;
      opts.dry_run = rn_dry;
      opts.resume = rn_resume;
      opts.stop_after = rn_stop_after;
      opts.log = &std::cout;
      const auto outcome = pipeline::run(cfg, opts);
      if (!rn_dry && outcome.completed)
        std::cout << outcome.computed << " evaluations computed, " << outcome.reused << " reused\n";
    };
  });

  // formats
  auto* fm = app.add_subcommand("formats", "Print the file format reference");
  fm->callback([&] { action = [] { std::cout << loclesion_cli::kFormatsText; }; });

  // init-model
  auto* im = app.add_subcommand("init-model", "Write a toy model's weights file and vocabulary");
  std::string im_config, im_out;
  im->add_option("--model-config", im_config, "toy model config JSON")->required();
  im->add_option("--out", im_out, "weights path (.llmw)")->required();
  im->callback([&] {
    action = [&] {
      ModelArgs args{im_config, ""};
      const auto model = args.build();
      runtime::save_weights(model, im_out);
      std::cout << "wrote " << im_out << " and " << runtime::vocab_path_for(im_out).string() << "\n";
    };
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitUsage;
  }
  try {
    if (action) action();
    return kExitOk;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return kExitInternal;
  }
}
