// gfra: command-line driver for simulation, recovery, training and sweeps.
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "gfra/config_io.hpp"
#include "gfra/experiment.hpp"
#include "gfra/rng.hpp"

namespace fs = std::filesystem;
using namespace gfra;

namespace {

struct Common {
  std::string preset = "desk";
  std::string config;
  std::vector<std::string> sets;
  std::uint64_t seed = 0;
  bool seed_given = false;
  std::string out;
  int trials = 0;
  std::string values;
  std::string solvers;
  std::string axis;
  int threads = -1;
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--preset", c.preset, "named configuration")->capture_default_str();
  app->add_option("--config", c.config, "key = value config file applied over the preset");
  app->add_option("--set", c.sets, "override one field, key=value (repeatable)");
  app->add_option_function<std::uint64_t>(
      "--seed", [&c](const std::uint64_t& s) { c.seed = s, c.seed_given = true; }, "master seed");
  app->add_option("--out", c.out, "output directory");
  app->add_option("--trials", c.trials, "trials per sweep point");
  app->add_option("--values", c.values, "sweep values, comma separated");
  app->add_option("--solvers", c.solvers, "amp,amp_bp,lamp,lamp_bp");
  app->add_option("--axis", c.axis, "n_active, seq_len, snr_db or guard");
  app->add_option("--threads", c.threads, "worker threads (0 = all cores)");
}

ExperimentSpec build_spec(const Common& c, const std::string& default_out) {
  ExperimentSpec spec = preset(c.preset);
  spec.output_dir = default_out;
  if (!c.config.empty()) apply_config(spec, KeyValueConfig::load(c.config));
  KeyValueConfig kv;
  for (const auto& s : c.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + s + "'");
    kv.set(s.substr(0, eq), s.substr(eq + 1));
  }
  if (!c.values.empty()) kv.set("sweep_values", c.values);
  if (!c.solvers.empty()) kv.set("solvers", c.solvers);
  if (!c.axis.empty()) kv.set("sweep_axis", c.axis);
  apply_config(spec, kv);
  if (c.seed_given) spec.seed = c.seed;
  if (!c.out.empty()) spec.output_dir = c.out;
  if (c.trials > 0) spec.n_trials = c.trials;
  if (c.threads >= 0) spec.threads = c.threads;
  spec.validate();
  return spec;
}

void log_line(const std::string& s) { std::cerr << s << '\n'; }

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream os(p, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write '" + p.string() + "'");
  os << text;
}

void print_cells(const std::vector<CellSummary>& cells) {
  std::printf("%-8s %10s %6s %6s %8s %8s %8s %10s\n", "solver", "value", "done", "fail", "f1", "mu_data", "mu_p",
              "nmse_db");
  for (const auto& c : cells) {
    std::printf("%-8s %10g %6d %6d %8.4f %8.4f %8.4f %10.2f\n", to_string(c.solver).c_str(), c.value, c.completed,
                c.failed, c.mean_f1, c.mean_mu_data, c.mean_mu_p, c.mean_nmse_db);
  }
}

int cmd_generate(const Common& c, int trial) {
  const ExperimentSpec spec = build_spec(c, "out/generate");
  const Scenario sc = make_scenario(spec.at(spec.values.front()), spec.seed);
  const auto real = draw_realization(sc.sys, sc.pool, trial_realization_seed(spec.seed, trial));
  const auto obs = synthesize_observation(real, sc.dict, sc.sys.snr_db, trial_noise_seed(spec.seed, trial));
  const fs::path dir(spec.output_dir);
  fs::create_directories(dir);
  std::map<std::string, std::string> meta{{"layout", "symbol-major"},
                                          {"rng", std::string(kRngAlgorithm)},
                                          {"master_seed", std::to_string(spec.seed)},
                                          {"realization_seed", std::to_string(real.seed)},
                                          {"noise_seed", std::to_string(obs.noise_seed)},
                                          {"noise_var", format_double(obs.noise_var)},
                                          {"dict_hash", std::to_string(sc.dict.content_hash())}};
  write_matrix((dir / "y.gfm").string(), {"y", obs.y, meta});
  write_matrix((dir / "x_true.gfm").string(), {"x_true", real.x_true, meta});
  write_matrix((dir / "dictionary.gfm").string(), {"dictionary", sc.dict.matrix(), meta});
  std::ostringstream os;
  os << "# gfra-users v1\nid,sequence,delay,data_len,row,channel_re,channel_im,data_index\n";
  for (const auto& u : real.users) {
    std::string idx;
    for (int d : u.data_index) idx += (idx.empty() ? "" : ";") + std::to_string(d);
    os << u.id << ',' << u.sequence << ',' << u.delay << ',' << u.data_len << ',' << real.row_of(u) << ','
       << format_double(u.channel(0).real()) << ',' << format_double(u.channel(0).imag()) << ',' << idx << '\n';
  }
  write_text(dir / "users.csv", os.str());
  // Results do not depend on where they are written or on the thread count.
  ExperimentSpec portable = spec;
  portable.output_dir.clear();
  portable.threads = 0;
  write_text(dir / "config.txt", to_config(portable).serialize());
  if (obs.zero_signal) std::cerr << "warning: zero-signal realization, noise disabled\n";
  std::printf("wrote realization (%zu active users) to %s\n", real.users.size(), dir.string().c_str());
  return 0;
}

int cmd_solve(const Common& c, int trial) {
  const ExperimentSpec spec = build_spec(c, "out/solve");
  const SingleResult r = run_single(spec, {}, trial);
  const fs::path dir(spec.output_dir);
  fs::create_directories(dir);
  TrialRecord t;
  t.solver = spec.solvers.front();
  t.value = spec.values.front();
  t.trial = trial;
  t.realization_seed = r.realization.seed;
  t.noise_seed = r.observation.noise_seed;
  t.observation_hash = r.observation_hash;
  t.ok = true;
  t.metrics = r.metrics;
  for (int n : r.recovery.stage_iterations) t.iterations += n;
  write_trials_csv((dir / "trials.csv").string(), {t}, config_hash(spec));
  std::ostringstream os;
  os << "# gfra-residuals v1\niteration,residual_norm\n";
  for (std::size_t i = 0; i < r.recovery.residual_norms.size(); ++i) {
    os << i << ',' << format_double(r.recovery.residual_norms[i]) << '\n';
  }
  write_text(dir / "residuals.csv", os.str());
  write_matrix((dir / "x_hat.gfm").string(), {"x_hat", r.recovery.x_hat, {{"layout", "symbol-major"}}});
  if (r.metrics.empty_active_set) std::cerr << "warning: empty active set, mu_data = 1 by convention\n";
  if (r.recovery.residual_nonmonotone) std::cerr << "note: residual norm was not monotone\n";
  std::printf("solver %s  f1 %.4f  mu_p %.4f  mu_r %.4f  nmse_db %.2f  mu_data %.4f\n",
              to_string(t.solver).c_str(), r.metrics.f1, r.metrics.mu_p, r.metrics.mu_r, r.metrics.nmse_db,
              r.metrics.mu_data);
  return 0;
}

int cmd_alpha(const Common& c) {
  AlphaSensitivityConfig cfg;
  if (c.seed_given) cfg.seed = c.seed;
  if (c.trials > 0) cfg.trials = c.trials;
  if (!c.values.empty()) cfg.alphas = KeyValueConfig::parse("a = " + c.values).get_doubles("a");
  const auto pts = alpha_sensitivity(cfg);
  const fs::path dir(c.out.empty() ? "out/alpha" : c.out);
  fs::create_directories(dir);
  std::ostringstream os;
  os << "# gfra-alpha v1\nalpha,mean_nmse_db\n";
  for (const auto& p : pts) {
    os << format_double(p.alpha) << ',' << format_double(p.mean_nmse_db) << '\n';
    std::printf("alpha %-6g nmse_db %8.2f\n", p.alpha, p.mean_nmse_db);
  }
  write_text(dir / "alpha.csv", os.str());
  return 0;
}

int cmd_sweep(const Common& c) {
  if (c.preset == "alpha-sensitivity") return cmd_alpha(c);
  const ExperimentSpec spec = build_spec(c, "out/" + c.preset);
  const SweepResult r = run_sweep(spec, log_line);
  print_cells(r.cells);
  std::printf("wrote %s and %s\n", r.csv_path.c_str(), r.json_path.c_str());
  if (r.failed > 0) {
    std::cerr << r.failed << " trial(s) failed\n";
    return 1;
  }
  return 0;
}

int cmd_train(const Common& c, const std::string& variant) {
  const ExperimentSpec spec = build_spec(c, "out/train");
  const TrainingRun run = run_training(spec, parse_variant(variant), log_line);
  std::printf("wrote %s and %s\n", run.params_path.c_str(), run.curve_path.c_str());
  if (run.result.diverged) {
    std::cerr << "training diverged: " << run.result.message << '\n';
    return 1;
  }
  return 0;
}

int cmd_theory(const Common& c, UniquenessTrialConfig cfg) {
  if (c.seed_given) cfg.seed = c.seed;
  if (c.trials > 0) cfg.trials = c.trials;
  const UniquenessReport r = run_theory_check(cfg);
  const fs::path dir(c.out.empty() ? "out/theory" : c.out);
  fs::create_directories(dir);
  write_text(dir / "theory.json", theory_json(r));
  std::ostringstream os;
  os << "# gfra-theory v1\nm_dim,n_dim,l_dim,r_known,bound,trials,unique,planted_found,redraws,unique_fraction\n"
     << cfg.m_dim << ',' << cfg.n_dim << ',' << cfg.l_dim << ',' << cfg.r_known << ',' << r.bound << ',' << r.trials
     << ',' << r.unique << ',' << r.planted_found << ',' << r.redraws << ',' << format_double(r.unique_fraction)
     << '\n';
  write_text(dir / "theory.csv", os.str());
  std::printf("bound r = %d  unique fraction %.4f over %d trials (%d redraws)\n", r.bound, r.unique_fraction, r.trials,
              r.redraws);
  return r.trials == cfg.trials ? 0 : 1;
}

int cmd_report(const std::string& in, const std::string& out) {
  std::uint64_t h = 0;
  const auto trials = read_trials_csv(in, &h);
  const auto cells = summarize(trials);
  int failed = 0;
  for (const auto& t : trials) failed += t.ok ? 0 : 1;
  print_cells(cells);
  const fs::path target = out.empty() ? fs::path(in).parent_path() / "report.json" : fs::path(out) / "report.json";
  if (!target.parent_path().empty()) fs::create_directories(target.parent_path());
  write_text(target, summary_json(nullptr, cells, h, failed));
  std::printf("wrote %s\n", target.string().c_str());
  return failed == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Grant-free random access simulation and sparse recovery"};
  app.require_subcommand(1);
  std::string presets;
  for (const auto& n : preset_names()) presets += " " + n;
  app.footer("presets:" + presets);

  Common gen_c, solve_c, sweep_c, train_c, theory_c;
  int gen_trial = 0, solve_trial = 0;
  auto* gen = app.add_subcommand("generate", "draw one realization and write y, x_true and the dictionary");
  add_common(gen, gen_c);
  gen->add_option("--trial", gen_trial, "trial index");

  auto* sol = app.add_subcommand("solve", "generate, solve, detect and score one trial");
  add_common(sol, solve_c);
  sol->add_option("--trial", solve_trial, "trial index");

  auto* swp = app.add_subcommand("sweep", "Monte-Carlo sweep over one axis");
  add_common(swp, sweep_c);

  std::string variant = "bp";
  auto* trn = app.add_subcommand("train", "train LAMP parameters");
  add_common(trn, train_c);
  trn->add_option("--variant", variant, "mmv or bp")->capture_default_str();

  UniquenessTrialConfig ucfg;
  auto* thr = app.add_subcommand("theory-check", "brute-force check of the uniqueness bound");
  add_common(thr, theory_c);
  thr->add_option("--m", ucfg.m_dim, "measurements")->capture_default_str();
  thr->add_option("--n", ucfg.n_dim, "atoms")->capture_default_str();
  thr->add_option("--l", ucfg.l_dim, "rank of Y")->capture_default_str();
  thr->add_option("--r-known", ucfg.r_known, "known support size")->capture_default_str();

  std::string report_in, report_out;
  auto* rep = app.add_subcommand("report", "aggregate a trials CSV");
  rep->add_option("--in", report_in, "trials.csv")->required();
  rep->add_option("--out", report_out, "output directory (default: next to input)");

  CLI11_PARSE(app, argc, argv);
  try {
    if (gen->parsed()) return cmd_generate(gen_c, gen_trial);
    if (sol->parsed()) return cmd_solve(solve_c, solve_trial);
    if (swp->parsed()) return cmd_sweep(sweep_c);
    if (trn->parsed()) return cmd_train(train_c, variant);
    if (thr->parsed()) return cmd_theory(theory_c, ucfg);
    if (rep->parsed()) return cmd_report(report_in, report_out);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
