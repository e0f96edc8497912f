// Acceptance checks. Prints one PASS/FAIL line per criterion; exit status is
// nonzero if any criterion fails. Optional arguments select criteria by number.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <set>
#include <sstream>
#include <string>

#include "gfra/experiment.hpp"
#include "gfra/rng.hpp"

using namespace gfra;
namespace fs = std::filesystem;

namespace {

// Tolerances and thresholds.
constexpr double kThresholdTol = 1e-12;
constexpr int kThresholdRows = 2000;
constexpr double kEquivalenceTol = 1e-9;
constexpr int kEquivalenceInstances = 10;
constexpr int kNoiselessTrials = 100;
constexpr double kNoiselessNmseDb = -40.0;
constexpr double kNoiselessPassFraction = 0.95;
constexpr int kTheoryTrials = 100;
constexpr int kPairedTrials = 200;
constexpr double kCiZ = 1.959963984540054;
constexpr int kCiPointsRequired = 2;
constexpr int kGradientPoints = 20;
constexpr double kGradientRelTol = 1e-4;
constexpr int kTrendTrials = 100;
constexpr double kSignTestAlpha = 0.05;
constexpr double kAlphaSpreadDb = 2.0;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

CMatrix random_matrix(Rng& rng, Eigen::Index r, Eigen::Index c, double scale = 1.0) {
  CMatrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = scale * rng.complex_normal();
  return m;
}

struct Paired {
  double mean = 0.0;
  double se = 0.0;
};

Paired paired(const std::vector<double>& a, const std::vector<double>& b) {
  std::vector<double> d(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) d[i] = a[i] - b[i];
  Paired p;
  const double n = static_cast<double>(d.size());
  p.mean = std::accumulate(d.begin(), d.end(), 0.0) / n;
  double ss = 0.0;
  for (double x : d) ss += (x - p.mean) * (x - p.mean);
  p.se = std::sqrt(ss / (n - 1.0) / n);
  return p;
}

// 1. Row soft-threshold properties on random rows.
Outcome threshold_suite() {
  Rng rng(101);
  double worst = 0.0;
  bool expansive = false;
  for (int k = 0; k < kThresholdRows; ++k) {
    const int w = rng.uniform_int(1, 8);
    const CMatrix r = random_matrix(rng, 1, w, std::exp(2.0 * rng.normal()));
    const CMatrix q = random_matrix(rng, 1, w, std::exp(2.0 * rng.normal()));
    const double lambda = std::abs(rng.normal()) * r.norm() * 1.5;
    const CMatrix t = row_soft_threshold(r, lambda);
    const double want = std::max(r.norm() - lambda, 0.0);
    worst = std::max(worst, std::abs(t.norm() - want) / std::max(1.0, r.norm()));
    if (want > 0.0) {
      // Direction: t = (want / ||r||) r.
      worst = std::max(worst, (t - (want / r.norm()) * r).norm() / std::max(1.0, r.norm()));
    }
    const CMatrix tq = row_soft_threshold(q, lambda);
    if ((t - tq).norm() > (r - q).norm() * (1.0 + kThresholdTol) + kThresholdTol) expansive = true;
    const CMatrix masked = prior_aided_threshold(r, lambda, RowMask{1});
    worst = std::max(worst, (masked - r).cwiseAbs().maxCoeff());
    const CMatrix unmasked = prior_aided_threshold(r, lambda, RowMask{0});
    worst = std::max(worst, (unmasked - t).cwiseAbs().maxCoeff());
  }
  return {worst <= kThresholdTol && !expansive,
          std::to_string(kThresholdRows) + " rows, max deviation " + fmt("%.2e", worst) +
              (expansive ? ", expansive pair found" : "")};
}

// 2. AMP-initialized LAMP reproduces AMP on desk instances.
Outcome amp_lamp_equivalence() {
  const ExperimentSpec spec = preset("desk");
  AmpConfig amp = spec.amp;
  amp.stop_tol = 0.0;
  std::vector<Scenario> scs;
  std::vector<LampParams> mmv, bp;
  for (double v : spec.values) {
    scs.push_back(make_scenario(spec.at(v), spec.seed));
    const Scenario& sc = scs.back();
    mmv.push_back(init_from_amp(sc.dict, amp, LampVariant::kMmv, sc.sys.n_antennas, sc.sys.n_slots(), amp.n_iters));
    bp.push_back(init_from_amp(sc.dict, amp, LampVariant::kBp, sc.sys.n_antennas, sc.sys.n_slots(), amp.n_iters,
                               spec.lamp_shared_weight));
  }
  double worst = 0.0;
  bool support_match = true;
  int instance = 0;
  for (; instance < kEquivalenceInstances; ++instance) {
    const std::size_t k = static_cast<std::size_t>(instance) % scs.size();
    const Scenario& sc = scs[k];
    const int slots = sc.sys.n_slots();
    const auto real = draw_realization(sc.sys, sc.pool, trial_realization_seed(77, instance));
    const CMatrix y = synthesize_observation(real, sc.dict, sc.sys.snr_db, trial_noise_seed(77, instance)).y;
    worst = std::max(
        worst, (lamp_mmv_forward(y, sc.dict, mmv[k]).x_hat - amp_mmv(y, sc.dict, amp).x_hat).cwiseAbs().maxCoeff());
    const auto a = lamp_bp_forward(y, sc.dict, bp[k], sc.sys.n_antennas, slots);
    const auto b = amp_bp(y, sc.dict, amp, sc.sys.n_antennas, slots);
    worst = std::max(worst, (a.x_hat - b.x_hat).cwiseAbs().maxCoeff());
    support_match = support_match && a.support_history == b.support_history;
  }
  return {worst <= kEquivalenceTol && support_match && instance == kEquivalenceInstances,
          std::to_string(instance) + " instances, max |LAMP - AMP| " + fmt("%.2e", worst) +
              (support_match ? "" : ", support history differs")};
}

// 3. Noiseless exact recovery with AMP-BP.
Outcome noiseless_recovery() {
  ExperimentSpec spec = preset("tiny-noiseless");
  spec.n_trials = kNoiselessTrials;
  spec.output_dir.clear();
  const SweepResult r = run_sweep(spec);
  int good = 0;
  for (const auto& t : r.trials) good += t.ok && t.metrics.f1 == 1.0 && t.metrics.nmse_db <= kNoiselessNmseDb;
  return {good >= kNoiselessPassFraction * kNoiselessTrials,
          std::to_string(good) + "/" + std::to_string(kNoiselessTrials) + " trials with F1 = 1 and NMSE <= " +
              fmt("%.0f", kNoiselessNmseDb) + " dB"};
}

// 4. Brute-force uniqueness at the bound.
Outcome theory() {
  bool ok = true;
  std::string detail;
  const int expected[] = {3, 4, 4};
  for (int rs = 0; rs <= 2; ++rs) {
    UniquenessTrialConfig c;
    c.r_known = rs;
    c.trials = kTheoryTrials;
    const auto rep = verify_uniqueness_bound(c);
    ok = ok && rep.bound == expected[rs] && rep.unique_fraction == 1.0 && rep.trials == kTheoryTrials;
    detail += (detail.empty() ? "" : "; ") + std::string("r_s=") + std::to_string(rs) + " r=" +
              std::to_string(rep.bound) + " unique " + fmt("%.3f", rep.unique_fraction);
  }
  return {ok, detail};
}

// 5. AMP-BP against AMP-MMV with common random numbers.
Outcome bp_vs_mmv() {
  ExperimentSpec spec = preset("desk");
  spec.n_trials = kPairedTrials;
  spec.solvers = {Solver::kAmp, Solver::kAmpBp};
  spec.output_dir.clear();
  const SweepResult r = run_sweep(spec);
  bool mean_ok = r.failed == 0;
  int ci_points = 0;
  std::string detail;
  for (double v : spec.values) {
    const Paired p = paired(r.metric(Solver::kAmpBp, v, &MetricsReport::mu_data),
                            r.metric(Solver::kAmp, v, &MetricsReport::mu_data));
    mean_ok = mean_ok && p.mean >= 0.0;
    if (p.mean - kCiZ * p.se >= 0.0) ++ci_points;
    detail += (detail.empty() ? "" : "; ") + std::string("N_a=") + fmt("%.0f", v) + " d=" + fmt("%+.4f", p.mean) +
              " CI95 [" + fmt("%+.4f", p.mean - kCiZ * p.se) + ", " + fmt("%+.4f", p.mean + kCiZ * p.se) + "]";
  }
  return {mean_ok && ci_points >= kCiPointsRequired, detail};
}

// 6. Trained LAMP-BP against AMP-BP.
Outcome lamp_vs_amp() {
  ExperimentSpec spec = preset("desk-lamp");
  spec.n_trials = kPairedTrials;
  spec.output_dir.clear();
  const auto t0 = std::chrono::steady_clock::now();
  const SweepResult r = run_sweep(spec, [](const std::string& s) { std::fprintf(stderr, "  [6] %s\n", s.c_str()); });
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  bool ok = r.failed == 0;
  std::string detail;
  for (double v : spec.values) {
    const Paired f = paired(r.metric(Solver::kLampBp, v, &MetricsReport::f1),
                            r.metric(Solver::kAmpBp, v, &MetricsReport::f1));
    const Paired m = paired(r.metric(Solver::kLampBp, v, &MetricsReport::mu_data),
                            r.metric(Solver::kAmpBp, v, &MetricsReport::mu_data));
    ok = ok && f.mean >= 0.0 && m.mean >= 0.0;
    detail += (detail.empty() ? "" : "; ") + std::string("N_a=") + fmt("%.0f", v) + " dF1=" + fmt("%+.4f", f.mean) +
              " dmu=" + fmt("%+.4f", m.mean);
  }
  return {ok, detail + "; " + fmt("%.0f", secs) + " s"};
}

// 7. Analytic training gradient against central differences.
Outcome gradient_check() {
  SystemConfig c;
  c.n_users = 100;
  c.n_sequences = 8;
  c.seq_len = 16;
  c.guard = 2;
  c.max_delay = 2;
  c.n_active = 3;
  c.snr_db = 25.0;
  const ExpandedDictionary dict = expand_dictionary(build_spreading_pool(c, 5), c.guard);
  const Dataset d = generate_dataset(c, dict, 6, 8);
  std::vector<std::size_t> batch(d.size());
  std::iota(batch.begin(), batch.end(), 0);
  Rng rng(23);
  int accepted = 0, skipped = 0;
  double worst = 0.0;
  while (accepted < kGradientPoints && skipped < kGradientPoints) {
    const bool bp = accepted % 4 != 0;
    LampParams p = init_from_amp(dict, AmpConfig{}, bp ? LampVariant::kBp : LampVariant::kMmv, 1, c.n_slots(), 5,
                                 false);
    for (auto& w : p.weights) w += random_matrix(rng, w.rows(), w.cols(), 0.02);
    for (auto& a : p.alphas) {
      for (double& v : a) v *= std::exp(0.2 * (2.0 * rng.uniform01() - 1.0));
    }
    const int sub = bp ? rng.uniform_int(0, c.n_slots() - 1) : 0;
    const LossGradient g = subnetwork_loss(d, batch, dict, p, sub, true);
    const CMatrix dw = random_matrix(rng, g.weight.rows(), g.weight.cols());
    RVector da(g.log_alpha.size());
    for (Eigen::Index i = 0; i < da.size(); ++i) da(i) = rng.normal();
    const double analytic = (g.weight.conjugate().cwiseProduct(dw)).sum().real() + g.log_alpha.dot(da);
    auto loss_at = [&](double h) {
      LampParams q = p;
      q.weight(sub) += h * dw;
      auto& a = q.alphas[static_cast<std::size_t>(sub)];
      for (std::size_t i = 0; i < a.size(); ++i) a[i] *= std::exp(h * da(static_cast<Eigen::Index>(i)));
      return subnetwork_loss(d, batch, dict, q, sub, false).loss;
    };
    const double h = 1e-6;
    const double fd1 = (loss_at(h) - loss_at(-h)) / (2 * h);
    const double fd2 = (loss_at(h / 2) - loss_at(-h / 2)) / h;
    const double scale = std::max({std::abs(analytic), std::abs(fd1), 1e-12});
    // Difference quotients that disagree between step sizes straddle a kink.
    if (std::abs(fd1 - fd2) / scale > 1e-5) {
      ++skipped;
      continue;
    }
    worst = std::max(worst, std::abs(analytic - fd1) / scale);
    ++accepted;
  }
  return {accepted == kGradientPoints && worst <= kGradientRelTol,
          std::to_string(accepted) + " points (" + std::to_string(skipped) + " near kinks skipped), max rel error " +
              fmt("%.2e", worst)};
}

// Aggregate mu_data per (solver, value).
double cell_mu(const SweepResult& r, Solver s, double v) { return r.cell(s, v).mean_mu_data; }

SweepResult trend_sweep(ExperimentSpec spec) {
  spec.n_trials = kTrendTrials;
  spec.solvers = {Solver::kAmp, Solver::kAmpBp};
  spec.output_dir.clear();
  return run_sweep(spec);
}

// 8. Monotone trends, sign tests over adjacent sweep points pooled across
// both AMP solvers.
Outcome trends() {
  std::string detail;
  bool ok = true;
  auto adjacent = [&](const char* label, const ExperimentSpec& spec, int direction) {
    const SweepResult r = trend_sweep(spec);
    int wins = 0, n = 0;
    for (Solver s : {Solver::kAmp, Solver::kAmpBp}) {
      for (std::size_t i = 0; i + 1 < spec.values.size(); ++i) {
        const double d = cell_mu(r, s, spec.values[i + 1]) - cell_mu(r, s, spec.values[i]);
        wins += direction * d > 0.0;
        ++n;
      }
    }
    const double p = sign_test_p(wins, n);
    ok = ok && r.failed == 0 && p < kSignTestAlpha;
    detail += (detail.empty() ? "" : "; ") + std::string(label) + " " + std::to_string(wins) + "/" +
              std::to_string(n) + " p=" + fmt("%.4f", p);
  };
  adjacent("N_a", preset("load-sweep"), -1);
  adjacent("L_s", preset("seq-len-sweep"), +1);

  int wins = 0, n = 0;
  for (int load : {12, 16, 20, 24}) {
    ExperimentSpec spec = preset("guard-sweep");
    spec.sys.n_active = load;
    const SweepResult r = trend_sweep(spec);
    ok = ok && r.failed == 0;
    for (Solver s : {Solver::kAmp, Solver::kAmpBp}) {
      wins += cell_mu(r, s, 5) < cell_mu(r, s, 3);
      ++n;
    }
  }
  const double p = sign_test_p(wins, n);
  ok = ok && p < kSignTestAlpha;
  detail += "; T_g 5<3 " + std::to_string(wins) + "/" + std::to_string(n) + " p=" + fmt("%.4f", p);
  return {ok, detail};
}

// 9. Step-size sensitivity of AMP-MMV.
Outcome alpha_spread() {
  const auto pts = alpha_sensitivity(AlphaSensitivityConfig{});
  double lo = pts.front().mean_nmse_db, hi = lo;
  std::string detail;
  for (const auto& p : pts) {
    lo = std::min(lo, p.mean_nmse_db);
    hi = std::max(hi, p.mean_nmse_db);
    detail += fmt("alpha %.1f: ", p.alpha) + fmt("%.2f dB; ", p.mean_nmse_db);
  }
  return {hi - lo >= kAlphaSpreadDb, detail + "spread " + fmt("%.2f dB", hi - lo)};
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

// 10. Every CLI command run twice with the same seed writes identical bytes.
Outcome cli_determinism() {
  const fs::path root = fs::temp_directory_path() / "gfra_acceptance_cli";
  fs::remove_all(root);
  const std::string cli = GFRA_CLI;
  const std::vector<std::pair<std::string, std::string>> cmds = {
      {"generate", "generate --preset desk --seed 3"},
      {"solve", "solve --preset desk --seed 3 --trial 2"},
      {"sweep", "sweep --preset tiny-noiseless --seed 3 --trials 20 --solvers amp,amp_bp"},
      {"alpha", "sweep --preset alpha-sensitivity --seed 3 --trials 2"},
      {"train", "train --preset tiny-noiseless --seed 3 --variant bp --set n_train=400 --set batch_size=50 "
                "--set max_steps_per_stage=20"},
      {"theory", "theory-check --seed 3 --trials 10"},
  };
  int compared = 0;
  std::string bad;
  auto run = [&](const std::string& args, const fs::path& out) {
    const std::string cmd = cli + " " + args + " --out " + out.string() + " > /dev/null 2>&1";
    return std::system(cmd.c_str()) == 0;
  };
  auto compare_dirs = [&](const std::string& label, const fs::path& a, const fs::path& b) {
    std::set<std::string> names;
    for (const auto& e : fs::directory_iterator(a)) names.insert(e.path().filename().string());
    for (const auto& e : fs::directory_iterator(b)) names.insert(e.path().filename().string());
    for (const auto& n : names) {
      if (n == "theory.json") continue;  // records wall time
      ++compared;
      if (!fs::exists(a / n) || !fs::exists(b / n) || slurp(a / n) != slurp(b / n)) bad += " " + label + "/" + n;
    }
  };
  for (const auto& [label, args] : cmds) {
    const fs::path a = root / (label + "_a"), b = root / (label + "_b");
    if (!run(args, a) || !run(args, b)) {
      bad += " " + label + "(exit)";
      continue;
    }
    compare_dirs(label, a, b);
  }
  for (const char* tag : {"a", "b"}) {
    const fs::path out = root / (std::string("report_") + tag);
    const std::string cmd = cli + " report --in " + (root / "sweep_a" / "trials.csv").string() + " --out " +
                            out.string() + " > /dev/null 2>&1";
    if (std::system(cmd.c_str()) != 0) bad += " report(exit)";
  }
  compare_dirs("report", root / "report_a", root / "report_b");
  return {bad.empty() && compared > 0,
          std::to_string(compared) + " files compared" + (bad.empty() ? "" : ", differing:" + bad)};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"threshold operator properties", threshold_suite},
      {"AMP-initialized LAMP equals AMP", amp_lamp_equivalence},
      {"noiseless exact recovery", noiseless_recovery},
      {"uniqueness bound", theory},
      {"AMP-BP >= AMP-MMV", bp_vs_mmv},
      {"trained LAMP-BP >= AMP-BP", lamp_vs_amp},
      {"gradient check", gradient_check},
      {"trends", trends},
      {"step-size sensitivity", alpha_spread},
      {"CLI determinism", cli_determinism},
  };
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!selected.empty() && selected.count(id) == 0) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    failed += o.pass ? 0 : 1;
    std::printf("%s %2d %s: %s\n", o.pass ? "PASS" : "FAIL", id, criteria[i].first.c_str(), o.detail.c_str());
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
