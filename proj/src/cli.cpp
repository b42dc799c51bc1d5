#include "c4/cli.hpp"

#include "c4/diagnostics.hpp"
#include "c4/report.hpp"
#include "c4/run_config.hpp"
#include "c4/verify.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>

namespace c4 {

namespace fs = std::filesystem;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw UsageError("cannot write '" + path.string() + "'");
  out << text;
}

int gen_data(const std::string& config, const std::vector<std::string>& sets, const std::string& out_path,
             std::ostream& out) {
  const RunConfig cfg = load_run_config(config, sets);
  OfflineDataset ds = generate(cfg.env, cfg.data.trajectories, cfg.data.seed);
  if (cfg.data.subsample > 0) {
    if (static_cast<std::size_t>(cfg.data.subsample) > ds.size())
      throw UsageError("data.subsample exceeds the generated transition count");
    ds = subsample(ds, static_cast<std::size_t>(cfg.data.subsample), cfg.data.seed);
  }
  if (const auto parent = fs::path(out_path).parent_path(); !parent.empty()) fs::create_directories(parent);
  save(ds, out_path);
  const auto& h = ds.header();
  out << "wrote " << out_path << ": env=" << h.env << " ds=" << h.ds << " da=" << h.da << " modes=" << h.modes
      << " seed=" << h.seed << " transitions=" << ds.size() << "\n";
  return kExitOk;
}

int train_cmd(const std::string& config, const std::vector<std::string>& sets, bool baseline, std::ostream& out) {
  RunConfig cfg = load_run_config(config, sets);
  if (baseline) cfg.train.baseline_mode = true;
  if (cfg.dataset.empty()) throw UsageError("config has no dataset path");
  if (!fs::exists(cfg.dataset)) throw UsageError("dataset '" + cfg.dataset + "' does not exist");
  const OfflineDataset ds = load(cfg.dataset);
  if (ds.header().ds != cfg.env.ds || ds.header().da != cfg.env.da)
    throw UsageError("dataset dimensions do not match the env section");

  const fs::path dir(cfg.output_dir);
  fs::create_directories(dir);
  const std::string suffix = cfg.train.baseline_mode ? "_baseline" : "";
  write_file(dir / ("config" + suffix + ".json"), to_json(cfg));

  TrainHooks hooks;
  const fs::path mix_dir = dir / "mixtures";
  int refresh_index = 0;
  if (!cfg.train.baseline_mode) {
    fs::create_directories(mix_dir);
    hooks.on_refresh = [&](const TrainerState& st) {
      char name[32];
      std::snprintf(name, sizeof name, "refresh_%04d.json", refresh_index++);
      nlohmann::json doc = nlohmann::json::parse(to_json(st.mixture));
      doc["step"] = st.step;
      write_file(mix_dir / name, doc.dump() + "\n");
    };
  }
  std::ofstream abc_log;
  if (cfg.diagnostics.abc_every > 0) {
    abc_log.open(dir / ("diagnostics" + suffix + ".jsonl"), std::ios::binary);
    hooks.on_step = [&](const StepView& v) {
      if (v.step % cfg.diagnostics.abc_every != 0) return;
      const TransitionBatch& b = v.batch;
      PerturbSpec spec = default_perturb_spec(b, cfg.diagnostics.abc_directions);
      Rng rng(cfg.train.seed * 1000003 + static_cast<std::uint64_t>(v.step));
      const auto draws = draw_perturbations(b.size(), b.x.rows(), spec, rng);
      const auto abc = estimate_abc(v.state.online, v.state.target, b, spec, cfg.train.gamma, draws);
      const double direct = direct_var_delta(v.state.online, v.state.target, b, spec, cfg.train.gamma, draws);
      abc_log << nlohmann::json{{"step", v.step}, {"cluster", v.cluster}, {"A", abc.a},        {"B", abc.b},
                                {"C", abc.c},     {"composed", abc.composed}, {"direct", direct}}
                     .dump()
              << "\n";
    };
  }

  const TrainResult res = train(ds, cfg.train, &cfg.env, hooks);
  write_file(dir / ("metrics" + suffix + ".csv"), metrics_csv(res.metrics));
  write_file(dir / ("critic" + suffix + ".json"), to_json(res.critic) + "\n");

  nlohmann::json summary = {{"mode", cfg.train.baseline_mode ? "baseline" : "c4"},
                            {"steps", cfg.train.steps},
                            {"refreshes", res.refreshes},
                            {"zero_mass_redraws", res.zero_mass_redraws}};
  if (!res.metrics.empty()) {
    summary["final_td_loss"] = res.metrics.back().td_loss;
    if (!std::isnan(res.metrics.back().eval_return)) summary["final_eval_return"] = res.metrics.back().eval_return;
  }
  if (cfg.diagnostics.dataset_trace)
    summary["dataset_tr_n"] =
        dataset_normalized_trace(res.critic, res.target, to_matrices(ds), cfg.train.feature_mode);
  write_file(dir / ("summary" + suffix + ".json"), summary.dump(2) + "\n");
  out << "trained " << summary["mode"].get<std::string>() << " for " << cfg.train.steps << " steps; artifacts in "
      << dir.string() << "\n";
  return kExitOk;
}

int verify_cmd(const std::string& suite, std::uint64_t seed, const std::string& out_path, std::ostream& out) {
  if (!is_suite(suite)) throw UsageError("unknown suite '" + suite + "'");
  const auto reports = run_suite(suite, seed);
  const std::string text = report_json(reports);
  if (out_path.empty()) out << text;
  else write_file(out_path, text);
  bool ok = true;
  for (const auto& r : reports) ok = ok && r.passed();
  return ok ? kExitOk : kExitVerifyFailed;
}

int report_cmd(const std::vector<std::string>& csvs, const std::string& out_dir, std::ostream& out) {
  std::vector<MetricsRun> runs;
  for (const auto& p : csvs) runs.push_back(read_metrics_csv(p));
  assign_labels(runs);
  write_report(runs, out_dir);
  out << "report for " << runs.size() << " run(s) written to " << out_dir << "\n";
  return kExitOk;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"c4: clustered offline TD training with cross-covariance control"};
  app.require_subcommand(1);

  std::string config, out_path, suite, out_dir;
  std::vector<std::string> sets, csvs;
  bool baseline = false;
  std::uint64_t seed = 0;

  auto* gen = app.add_subcommand("gen-data", "generate a synthetic offline dataset");
  gen->add_option("--config", config, "run config JSON")->required();
  gen->add_option("--out", out_path, "output JSONL path")->required();
  gen->add_option("--set", sets, "override a config key (dotted.key=value)");

  auto* tr = app.add_subcommand("train", "train a critic and write metrics");
  tr->add_option("--config", config, "run config JSON")->required();
  tr->add_flag("--baseline", baseline, "plain TD on uniform batches with the same seed");
  tr->add_option("--set", sets, "override a config key (dotted.key=value)");

  auto* ver = app.add_subcommand("verify", "run invariant suites");
  ver->add_option("--suite", suite, "covariance | gmm | theorem1 | policy | all")->required();
  ver->add_option("--seed", seed, "random seed for the checks");
  ver->add_option("--out", out_path, "write the JSON report here instead of stdout");

  auto* rep = app.add_subcommand("report", "plot and summarize metric CSVs");
  rep->add_option("csv", csvs, "metric CSV files")->required();
  rep->add_option("--out", out_dir, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kExitUsage;
  }

  try {
    if (*gen) return gen_data(config, sets, out_path, out);
    if (*tr) return train_cmd(config, sets, baseline, out);
    if (*ver) return verify_cmd(suite, seed, out_path, out);
    return report_cmd(csvs, out_dir, out);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
  } catch (const CsvError& e) {
    err << "error: " << e.what() << "\n";
  } catch (const DatasetParseError& e) {
    err << "error: dataset " << e.what() << "\n";
  } catch (const DatasetFormatError& e) {
    err << "error: dataset " << e.what() << "\n";
  } catch (const InputError& e) {
    err << "error: " << e.what() << "\n";
  }
  return kExitUsage;
}

}  // namespace c4
