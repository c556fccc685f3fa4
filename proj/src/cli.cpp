#include "skillmoo/cli.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "skillmoo/analysis.hpp"
#include "skillmoo/error.hpp"
#include "skillmoo/llm_client.hpp"
#include "skillmoo/run_store.hpp"
#include "skillmoo/search.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace skillmoo {

// ---- table output -------------------------------------------------------------

namespace {

std::string csv_cell(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

// Display width, counting UTF-8 code points.
std::size_t display_width(const std::string& s) {
  std::size_t n = 0;
  for (unsigned char c : s) {
    if ((c & 0xC0) != 0x80) ++n;
  }
  return n;
}

}  // namespace

void Table::print(std::ostream& out, OutputFormat format) const {
  switch (format) {
    case OutputFormat::Csv: {
      for (std::size_t c = 0; c < headers.size(); ++c) out << (c ? "," : "") << csv_cell(headers[c]);
      out << "\n";
      for (const auto& row : rows) {
        for (std::size_t c = 0; c < row.size(); ++c) out << (c ? "," : "") << csv_cell(row[c]);
        out << "\n";
      }
      return;
    }
    case OutputFormat::Json: {
      json arr = json::array();
      for (const auto& row : rows) {
        json obj = json::object();
        for (std::size_t c = 0; c < headers.size() && c < row.size(); ++c) obj[headers[c]] = row[c];
        arr.push_back(obj);
      }
      out << arr.dump(2) << "\n";
      return;
    }
    case OutputFormat::Text: {
      std::vector<std::size_t> width(headers.size(), 0);
      for (std::size_t c = 0; c < headers.size(); ++c) width[c] = display_width(headers[c]);
      for (const auto& row : rows) {
        for (std::size_t c = 0; c < row.size() && c < width.size(); ++c) width[c] = std::max(width[c], display_width(row[c]));
      }
      auto line = [&](const std::vector<std::string>& cells) {
        for (std::size_t c = 0; c < cells.size(); ++c) {
          out << cells[c];
          if (c + 1 < cells.size()) out << std::string(width[c] - display_width(cells[c]) + 2, ' ');
        }
        out << "\n";
      };
      line(headers);
      std::size_t total = 0;
      for (auto w : width) total += w + 2;
      out << std::string(total > 2 ? total - 2 : 0, '-') << "\n";
      for (const auto& row : rows) line(row);
      return;
    }
  }
}

namespace {

std::string num(double v, int decimals) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
  return buf;
}

OutputFormat parse_format(const std::string& s) {
  if (s == "csv") return OutputFormat::Csv;
  if (s == "json") return OutputFormat::Json;
  return OutputFormat::Text;
}

int exit_code_for(const Error& e) {
  switch (e.kind()) {
    case ErrorKind::Config:
    case ErrorKind::InvalidTask:
    case ErrorKind::MalformedManifest:
    case ErrorKind::MissingSkillFile:
    case ErrorKind::DuplicateSkillId:
    case ErrorKind::InvalidArgument:
    case ErrorKind::MissingBaseline:
      return kExitConfig;
    default:
      return kExitRuntime;
  }
}

// ---- optimize -----------------------------------------------------------------

struct OptimizeFlags {
  std::string task;
  std::string bundle;
  std::string out;
  int generations = 5;
  int population = 1;
  std::uint64_t seed = 0;
  std::string evaluator = "sim";
  std::string proposer = "rule";
  double guard_threshold = 0.05;
  double timeout_s = 900.0;
  std::string parent_policy = "best";
  std::size_t archive_cap = 0;
  int jobs = 1;
  std::string label = "skillmoo";
  bool canonical_timestamps = false;
  std::string model;
  std::string base_url;
  double price_in = 0.0;
  double price_out = 0.0;
  int max_retries = 2;
  std::string prompt_template;
  std::string optimizer_skill;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error(ErrorKind::Config, "cannot read " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int cmd_optimize(const OptimizeFlags& f, bool timeout_given, std::ostream& out) {
  auto task = load_task(f.task);
  if (timeout_given) task.timeout_s = f.timeout_s;
  task.validate();
  auto seed_bundle = load_bundle(f.bundle);

  SearchConfig config;
  config.generations = f.generations;
  config.population = f.population;
  config.guard_drop_threshold = f.guard_threshold;
  config.seed = f.seed;
  config.parent_policy = f.parent_policy == "chain" ? ParentPolicy::Chain : ParentPolicy::Best;
  if (f.archive_cap > 0) config.archive_cap = f.archive_cap;
  config.jobs = f.jobs;
  config.validate();

  ModelConfig model;
  model.base_url = f.base_url;
  model.model_name = f.model;
  model.price_per_1k_input = f.price_in;
  model.price_per_1k_output = f.price_out;
  model.request_timeout_s = task.timeout_s;
  model.max_retries = f.max_retries;
  model.max_in_flight = std::max(1, f.jobs);
  const bool needs_model = f.evaluator == "llm" || f.proposer == "llm";
  if (needs_model) {
    model.apply_environment();
    model.validate();
  }

  std::unique_ptr<Evaluator> evaluator;
  if (f.evaluator == "sim") {
    if (!task.sim) throw Error(ErrorKind::Config, "task has no \"sim\" landscape for --evaluator sim");
    evaluator = std::make_unique<SimEvaluator>();
  } else if (f.evaluator == "verifier") {
    if (!task.verifier) throw Error(ErrorKind::Config, "task has no \"verifier\" block for --evaluator verifier");
    evaluator = std::make_unique<VerifierEvaluator>();
  } else {
    if (!task.verifier) throw Error(ErrorKind::Config, "--evaluator llm needs a \"verifier\" block to judge solutions");
    evaluator = std::make_unique<LlmSolverEvaluator>(std::make_shared<ChatClient>(model));
  }

  std::unique_ptr<Proposer> proposer;
  if (f.proposer == "llm") {
    auto templ = f.prompt_template.empty() ? default_prompt_template() : slurp(f.prompt_template);
    proposer = std::make_unique<LlmProposer>(std::make_shared<ChatClient>(model), std::move(templ));
  } else {
    proposer = std::make_unique<RuleProposer>();
  }

  RunOptions options;
  options.canonical_timestamps = f.canonical_timestamps;
  if (!f.optimizer_skill.empty()) options.optimizer_skill.text = slurp(f.optimizer_skill);

  RunWriter writer(f.out);
  json run{{"label", f.label},
           {"task_path", f.task},
           {"bundle_path", f.bundle},
           {"task", task},
           {"config", config},
           {"evaluator", f.evaluator},
           {"proposer", f.proposer},
           {"seeds", {{"master", config.seed}, {"derivation", "splitmix64(master ^ fnv1a(stream)) + counter"}}},
           {"versions", {{"skillmoo", kVersion}, {"run_format", 1}}}};
  if (needs_model) {
    run["model"] = {{"base_url", model.base_url},
                    {"model", model.model_name},
                    {"price_per_1k_input", model.price_per_1k_input},
                    {"price_per_1k_output", model.price_per_1k_output},
                    {"request_timeout_s", model.request_timeout_s}};
  }
  writer.write_run_json(run);

  auto record = run_search(task, seed_bundle, config, *evaluator, *proposer, &writer, options);
  writer.write_front(record);

  const auto& final = record.final_candidate();
  out << "final " << final.id << "  pass_rate " << num(final.result.pass_rate, 4) << " (" << final.result.tests_passed
      << "/" << final.result.tests_total << ")  cost_usd " << num(final.result.cost_usd, 4) << "  runtime_s "
      << num(final.result.runtime_s, 1) << "\n";
  out << "bundle " << (fs::path(f.out) / "candidates" / final.id / "bundle").string() << "\n";
  return kExitOk;
}

// ---- report -------------------------------------------------------------------

int cmd_report(const std::string& dir, OutputFormat format, std::ostream& out) {
  auto run = load_run(dir);
  const auto& fr = run.front;
  if (format == OutputFormat::Json) {
    out << json{{"label", run.label()}, {"final", fr["final"]}, {"front", fr["front"]}, {"trajectory", fr["trajectory"]},
                {"overhead", fr["overhead"]}}
                .dump(2)
        << "\n";
    return kExitOk;
  }

  auto member_row = [](const json& m) {
    return std::vector<std::string>{m["id"].get<std::string>(), std::to_string(m["generation"].get<int>()),
                                    std::to_string(m["skills"].get<int>()), num(m["pass_rate"].get<double>(), 4),
                                    num(m["cost_usd"].get<double>(), 4), num(m["runtime_s"].get<double>(), 1)};
  };
  Table final_table{{"final", "generation", "skills", "pass_rate", "cost_usd", "runtime_s"}, {member_row(fr["final"])}};
  Table front_table{{"front", "generation", "skills", "pass_rate", "cost_usd", "runtime_s"}, {}};
  for (const auto& m : fr["front"]) front_table.rows.push_back(member_row(m));
  Table traj{{"generation", "hypervolume", "best_pass_rate", "best_cost_usd", "front_size", "accepted", "rejected"}, {}};
  for (const auto& t : fr["trajectory"]) {
    traj.rows.push_back({std::to_string(t["generation"].get<int>()), num(t["hypervolume"].get<double>(), 4),
                         num(t["best_pass_rate"].get<double>(), 4), num(t["best_cost_usd"].get<double>(), 4),
                         std::to_string(t["front_size"].get<int>()), std::to_string(t["accepted"].get<int>()),
                         std::to_string(t["rejected"].get<int>())});
  }
  if (format == OutputFormat::Text) out << "run " << dir << " (" << run.label() << ")\n\n";
  final_table.print(out, format);
  if (format == OutputFormat::Text) out << "\n";
  front_table.print(out, format);
  if (format == OutputFormat::Text) out << "\n";
  traj.print(out, format);
  if (format == OutputFormat::Text) {
    out << "\noptimization overhead: cost_usd " << num(run.opt_cost_usd(), 4) << ", runtime_s " << num(run.opt_runtime_s(), 2)
        << "\n";
  }
  return kExitOk;
}

// ---- stats --------------------------------------------------------------------

std::vector<fs::path> expand_all(const std::vector<std::string>& patterns) {
  std::vector<fs::path> dirs;
  for (const auto& p : patterns) {
    for (auto& d : expand_glob(p)) {
      if (fs::is_regular_file(d / "front.json")) dirs.push_back(std::move(d));
    }
  }
  return dirs;
}

int cmd_stats(const std::vector<std::string>& patterns, const std::string& metric, const ScottKnottConfig& sk,
              OutputFormat format, std::ostream& out, std::ostream& err) {
  auto dirs = expand_all(patterns);
  if (dirs.empty()) throw Error(ErrorKind::Config, "no run directories match");

  std::vector<RunSet> sets;
  std::map<std::string, std::vector<double>> skills;
  for (const auto& d : dirs) {
    auto run = load_run(d);
    auto label = run.label();
    auto it = std::find_if(sets.begin(), sets.end(), [&](const RunSet& s) { return s.label == label; });
    if (it == sets.end()) {
      sets.push_back(RunSet{label, {}, {}, {}});
      it = sets.end() - 1;
    }
    auto r = run.final_result();
    it->pass_rate.push_back(r.pass_rate);
    it->cost_usd.push_back(r.cost_usd);
    it->runtime_s.push_back(r.runtime_s);
    skills[label].push_back(run.front.at("final").at("skills").get<double>());
  }

  std::vector<std::pair<std::string, std::vector<double>>> groups;
  bool rankable = true;
  for (const auto& s : sets) {
    const auto& v = metric == "cost_usd" ? s.cost_usd : metric == "runtime_s" ? s.runtime_s : s.pass_rate;
    // Lower cost and runtime are better; rank on the negated values.
    std::vector<double> oriented = v;
    if (metric != "pass_rate") {
      for (auto& x : oriented) x = -x;
    }
    groups.emplace_back(s.label, oriented);
    rankable = rankable && v.size() >= 2;
  }
  std::optional<RankAssignment> ranks;
  if (rankable) {
    ranks = scott_knott_esd(groups, sk);
  } else {
    err << "note: ranks need at least 2 runs per method\n";
  }

  Table t{{"method", "runs", "skills", "pass_rate", "cost_usd", "runtime_s", "rank_" + metric}, {}};
  for (const auto& s : sets) {
    t.rows.push_back({s.label, std::to_string(s.pass_rate.size()), num(summarize(skills[s.label]).mean, 1),
                      format_mean_sd(summarize(s.pass_rate), 2), format_mean_sd(summarize(s.cost_usd), 2),
                      format_mean_sd(summarize(s.runtime_s), 1), ranks ? std::to_string(ranks->rank_of(s.label)) : "-"});
  }
  t.print(out, format);
  return kExitOk;
}

// ---- hv -----------------------------------------------------------------------

struct FrontSource {
  std::vector<FrontMember> members;
  std::optional<double> opt_cost;
  std::optional<double> opt_runtime;
};

FrontSource read_front_source(const std::string& path) {
  fs::path p(path);
  fs::path file = fs::is_directory(p) ? p / "front.json" : p;
  std::ifstream in(file);
  if (!in) throw Error(ErrorKind::Config, "cannot read " + file.string());
  json fr = json::parse(in);
  LoadedRun tmp;
  tmp.front = fr;
  FrontSource src;
  src.members = tmp.front_members();
  if (fr.contains("overhead")) {
    src.opt_cost = fr["overhead"].value("cost_usd", 0.0);
    src.opt_runtime = fr["overhead"].value("runtime_s", 0.0);
  }
  return src;
}

int cmd_hv(const std::string& source, const std::string& baseline, double ceiling_flag, OutputFormat format,
           std::ostream& out) {
  auto run = read_front_source(source);
  std::optional<FrontSource> base;
  if (!baseline.empty()) base = read_front_source(baseline);

  double ceiling = ceiling_flag;
  if (ceiling <= 0) {
    for (const auto& m : run.members) ceiling = std::max(ceiling, m.result.cost_usd);
    if (base) {
      for (const auto& m : base->members) ceiling = std::max(ceiling, m.result.cost_usd);
    }
    ceiling = ceiling > 0 ? kCostReferenceMargin * ceiling : 1.0;
  }
  auto hv_of = [&](const FrontSource& s) {
    std::vector<HvPoint> pts;
    for (const auto& m : s.members) pts.push_back({m.result.pass_rate, m.result.cost_usd});
    return hypervolume_2d(pts, ceiling).value;
  };
  const double hv_new = hv_of(run);

  Table t{{"hv", "cost_ceiling"}, {{num(hv_new, 4), num(ceiling, 4)}}};
  if (base) {
    const double hv_base = hv_of(*base);
    t.headers = {"opt_cost_usd", "opt_runtime_s", "hv_baseline", "hv", "delta_hv_pct", "cost_per_delta_hv_pct", "cost_ceiling"};
    std::string delta = "inf";
    std::string per = "n/a";
    if (hv_base > 0) {
      auto rep = efficiency_report(run.opt_cost.value_or(0.0), run.opt_runtime.value_or(0.0), hv_base, hv_new);
      delta = num(rep.delta_hv_pct, 1);
      if (rep.cost_per_hv_pct) per = num(*rep.cost_per_hv_pct, 4);
    }
    t.rows = {{num(run.opt_cost.value_or(0.0), 4), num(run.opt_runtime.value_or(0.0), 2), num(hv_base, 4), num(hv_new, 4),
               delta, per, num(ceiling, 4)}};
  }
  t.print(out, format);
  return kExitOk;
}

// ---- patterns -----------------------------------------------------------------

int cmd_patterns(const std::vector<std::string>& patterns, const std::string& baseline_run, OutputFormat format,
                 std::ostream& out) {
  auto dirs = expand_all(patterns);
  if (dirs.empty()) throw Error(ErrorKind::Config, "no run directories match");
  std::optional<EvaluationResult> baseline;
  if (!baseline_run.empty()) baseline = load_run(baseline_run).seed_result();

  std::vector<EditRecord> edits;
  for (const auto& d : dirs) {
    auto run = load_run(d);
    auto records = edit_records_from_events(run.events);
    if (!baseline) {
      auto own = run.seed_result();
      for (auto& r : records) r.baseline = own;
    }
    edits.insert(edits.end(), records.begin(), records.end());
  }
  auto rows = pattern_table(edits, baseline ? &*baseline : nullptr);
  Table t{{"operation", "edits", "pass_up", "cost_down", "time_down"}, {}};
  for (const auto& r : rows) {
    auto frac = [&](int k) { return std::to_string(k) + "/" + std::to_string(r.edits); };
    t.rows.push_back({r.description, std::to_string(r.edits), frac(r.pass_improved), frac(r.cost_reduced), frac(r.time_reduced)});
  }
  t.print(out, format);
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Multi-objective optimizer for agent skill bundles", "skillmoo"};
  app.set_config("--config", "", "key=value overlay file (flags take precedence)");
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);

  OptimizeFlags of;
  auto* optimize = app.add_subcommand("optimize", "Run the solver-optimizer search loop");
  optimize->add_option("--task", of.task, "Task JSON file")->required();
  optimize->add_option("--bundle", of.bundle, "Seed bundle directory")->required();
  optimize->add_option("--out", of.out, "Run directory to create")->required();
  optimize->add_option("--generations", of.generations, "Generations including the seed evaluation")->capture_default_str();
  optimize->add_option("--population", of.population, "Children per generation")->capture_default_str();
  optimize->add_option("--seed", of.seed, "Master seed")->capture_default_str();
  optimize->add_option("--evaluator", of.evaluator)->check(CLI::IsMember({"sim", "verifier", "llm"}))->capture_default_str();
  optimize->add_option("--proposer", of.proposer)->check(CLI::IsMember({"rule", "llm"}))->capture_default_str();
  optimize->add_option("--guard-threshold", of.guard_threshold, "Max allowed pass-rate drop")->capture_default_str();
  auto* timeout_opt = optimize->add_option("--timeout-s", of.timeout_s, "Per-agent timeout (overrides the task)")
                          ->capture_default_str();
  optimize->add_option("--parent-policy", of.parent_policy)->check(CLI::IsMember({"best", "chain"}))->capture_default_str();
  optimize->add_option("--archive-cap", of.archive_cap, "Trim accepted pool with NSGA-II (0 = unbounded)")->capture_default_str();
  optimize->add_option("--jobs", of.jobs, "Concurrent evaluations per generation")->capture_default_str();
  optimize->add_option("--label", of.label, "Method label for stats")->capture_default_str();
  optimize->add_flag("--canonical-timestamps", of.canonical_timestamps, "Write fixed timestamps to events.jsonl");
  optimize->add_option("--model", of.model, "Chat model name");
  optimize->add_option("--base-url", of.base_url, "Endpoint base URL (default $SKILLMOO_BASE_URL)");
  optimize->add_option("--price-in", of.price_in, "USD per 1k prompt tokens");
  optimize->add_option("--price-out", of.price_out, "USD per 1k completion tokens");
  optimize->add_option("--max-retries", of.max_retries)->capture_default_str();
  optimize->add_option("--prompt-template", of.prompt_template, "Proposer prompt template file");
  optimize->add_option("--optimizer-skill", of.optimizer_skill, "Initial optimizer skill text file");

  std::string report_dir;
  std::string format = "text";
  auto* report = app.add_subcommand("report", "Show a run's front, final candidate and trajectory");
  report->add_option("run_dir", report_dir)->required();
  report->add_option("--format", format)->check(CLI::IsMember({"text", "csv", "json"}));

  std::vector<std::string> stat_runs;
  std::string metric = "pass_rate";
  ScottKnottConfig sk;
  auto* stats = app.add_subcommand("stats", "Mean±SD and Scott-Knott ESD ranks across runs");
  stats->add_option("runs", stat_runs, "Run directories or glob patterns")->required();
  stats->add_option("--metric", metric)->check(CLI::IsMember({"pass_rate", "cost_usd", "runtime_s"}))->capture_default_str();
  stats->add_option("--alpha", sk.alpha)->capture_default_str();
  stats->add_option("--effect-threshold", sk.negligible_effect)->capture_default_str();
  stats->add_flag("--log1p", sk.log1p_transform, "Transform observations with log1p before ranking");
  stats->add_option("--format", format)->check(CLI::IsMember({"text", "csv", "json"}));

  std::string hv_source;
  std::string hv_baseline;
  double ceiling = 0.0;
  auto* hv = app.add_subcommand("hv", "Hypervolume of a run front, with uplift over a baseline");
  hv->add_option("source", hv_source, "Run directory or front.json")->required();
  hv->add_option("--baseline", hv_baseline, "Baseline run directory or front.json");
  hv->add_option("--cost-ceiling", ceiling, "Cost reference (default: 1.1 x max cost over both fronts)");
  hv->add_option("--format", format)->check(CLI::IsMember({"text", "csv", "json"}));

  std::vector<std::string> pattern_runs;
  std::string baseline_run;
  auto* patterns = app.add_subcommand("patterns", "Group logged edits by description and count improvements");
  patterns->add_option("runs", pattern_runs, "Run directories or glob patterns")->required();
  patterns->add_option("--baseline", baseline_run, "Run whose seed evaluation is the baseline (default: each run's own seed)");
  patterns->add_option("--format", format)->check(CLI::IsMember({"text", "csv", "json"}));

  std::vector<const char*> argv{"skillmoo"};
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e, out, err);
    if (code == 0) return kExitOk;
    auto parsed = app.get_subcommands();
    err << (parsed.empty() ? app.help() : parsed.front()->help());
    return kExitConfig;
  }

  try {
    if (*optimize) return cmd_optimize(of, timeout_opt->count() > 0, out);
    if (*report) return cmd_report(report_dir, parse_format(format), out);
    if (*stats) return cmd_stats(stat_runs, metric, sk, parse_format(format), out, err);
    if (*hv) return cmd_hv(hv_source, hv_baseline, ceiling, parse_format(format), out);
    if (*patterns) return cmd_patterns(pattern_runs, baseline_run, parse_format(format), out);
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return exit_code_for(e);
  } catch (const nlohmann::json::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitConfig;
}

}  // namespace skillmoo
