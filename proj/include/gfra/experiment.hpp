#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "gfra/config_io.hpp"
#include "gfra/detection.hpp"
#include "gfra/learned_recovery.hpp"
#include "gfra/sparse_recovery.hpp"
#include "gfra/system_model.hpp"
#include "gfra/theory_checks.hpp"

namespace gfra {

enum class SweepAxis { kNActive, kSeqLen, kSnrDb, kGuard };
enum class Solver { kAmp, kAmpBp, kLamp, kLampBp };

std::string to_string(SweepAxis a);
std::string to_string(Solver s);
SweepAxis parse_axis(const std::string& s);
Solver parse_solver(const std::string& s);

struct ExperimentSpec {
  std::string name = "custom";
  SystemConfig sys;
  AmpConfig amp;
  DetectionConfig det;
  TrainConfig train;

  int lamp_layers = 10;
  bool lamp_shared_weight = false;
  // Load used for LAMP training data; 0 trains at every sweep point's load.
  int lamp_train_active = 0;
  // When > 0, each training pair draws its load from [min, lamp_train_active].
  int lamp_train_active_min = 0;
  std::string lamp_mmv_params;  // pre-trained parameter files, optional
  std::string lamp_bp_params;

  SweepAxis axis = SweepAxis::kNActive;
  std::vector<double> values{24};
  int n_trials = 100;
  std::vector<Solver> solvers{Solver::kAmp, Solver::kAmpBp};
  std::uint64_t seed = 1;
  std::string output_dir = "out";
  int threads = 0;  // 0: hardware concurrency

  void validate() const;
  // System config at one sweep value.
  SystemConfig at(double value) const;
  bool uses_lamp() const;
};

std::vector<std::string> preset_names();
ExperimentSpec preset(const std::string& name);

// Keys are the field names of the config structs; unknown keys are errors.
void apply_config(ExperimentSpec& spec, const KeyValueConfig& kv);
KeyValueConfig to_config(const ExperimentSpec& spec);
// Hash of every field that can change results (not output_dir, threads).
std::uint64_t config_hash(const ExperimentSpec& spec);

// Scenario shared by every trial at one system config.
struct Scenario {
  SystemConfig sys;
  SpreadingPool pool;
  ExpandedDictionary dict;
};
Scenario make_scenario(const SystemConfig& sys, std::uint64_t master_seed);

// Realization and noise seeds depend only on (master seed, trial), so all
// solvers and sweep points see common random numbers.
std::uint64_t trial_realization_seed(std::uint64_t master, int trial);
std::uint64_t trial_noise_seed(std::uint64_t master, int trial);

struct SolverSet {
  std::optional<LampParams> lamp_mmv;
  std::optional<LampParams> lamp_bp;
};

RecoveryResult solve(Solver s, const CMatrix& y, const Scenario& sc, const AmpConfig& amp, const SolverSet& lamp);

struct SingleResult {
  TransmissionRealization realization;
  Observation observation;
  RecoveryResult recovery;
  ReceiverOutput receiver;
  MetricsReport metrics;
  std::uint64_t observation_hash = 0;
};

// Trial `trial` of the first sweep value with the first solver.
SingleResult run_single(const ExperimentSpec& spec, const SolverSet& lamp = {}, int trial = 0);

struct TrialRecord {
  Solver solver = Solver::kAmp;
  double value = 0.0;
  int trial = 0;
  std::uint64_t realization_seed = 0;
  std::uint64_t noise_seed = 0;
  std::uint64_t observation_hash = 0;
  bool ok = false;
  std::string error;
  MetricsReport metrics;
  int iterations = 0;
};

struct CellSummary {
  Solver solver = Solver::kAmp;
  double value = 0.0;
  int completed = 0;
  int failed = 0;
  double mean_f1 = 0, se_f1 = 0;
  double mean_nmse_db = 0, se_nmse_db = 0;
  double mean_mu_data = 0, se_mu_data = 0;
  double mean_mu_p = 0, se_mu_p = 0;
  double mean_mu_r = 0, se_mu_r = 0;
};

struct SweepResult {
  std::vector<TrialRecord> trials;  // ordered by value, solver, trial
  std::vector<CellSummary> cells;   // ordered by value, solver
  std::string csv_path;
  std::string json_path;
  int failed = 0;

  const CellSummary& cell(Solver s, double value) const;
  // Per-trial values of one metric for one cell, in trial order; failed
  // trials are skipped.
  std::vector<double> metric(Solver s, double value, double MetricsReport::*field) const;
};

using ProgressFn = std::function<void(const std::string&)>;

// Obtain LAMP parameters for a scenario: load the configured files or train
// on a freshly generated dataset.
SolverSet prepare_lamp(const ExperimentSpec& spec, const Scenario& sc, const ProgressFn& log = {});

// Writes trials.csv and summary.json into spec.output_dir when it is nonempty.
SweepResult run_sweep(const ExperimentSpec& spec, const ProgressFn& log = {});

std::vector<CellSummary> summarize(const std::vector<TrialRecord>& trials);
void write_trials_csv(const std::string& path, const std::vector<TrialRecord>& trials, std::uint64_t cfg_hash);
std::vector<TrialRecord> read_trials_csv(const std::string& path, std::uint64_t* cfg_hash = nullptr);
std::string summary_json(const ExperimentSpec* spec, const std::vector<CellSummary>& cells, std::uint64_t cfg_hash,
                         int failed);

struct TrainingRun {
  TrainResult result;
  std::string params_path;
  std::string curve_path;
};

// Trains `variant` at the first sweep value (load lamp_train_active when set).
TrainingRun run_training(const ExperimentSpec& spec, LampVariant variant, const ProgressFn& log = {});
void write_curve_csv(const std::string& path, const std::vector<CurvePoint>& curve);

UniquenessReport run_theory_check(const UniquenessTrialConfig& cfg);
std::string theory_json(const UniquenessReport& r);

// AMP-MMV on an i.i.d. Gaussian sensing matrix with a row-sparse signal.
struct AlphaSensitivityConfig {
  int m_dim = 200;
  int n_dim = 500;
  int columns = 4;
  int nonzero_rows = 40;
  double snr_db = 10.0;
  int n_iters = 50;
  int trials = 20;
  std::vector<double> alphas{0.5, 1.0, 1.5, 2.0};
  std::uint64_t seed = 1;
};

struct AlphaSensitivityPoint {
  double alpha = 0.0;
  double mean_nmse_db = 0.0;
};

std::vector<AlphaSensitivityPoint> alpha_sensitivity(const AlphaSensitivityConfig& cfg);

// One-sided sign test: P(X >= successes) for X ~ Binomial(n, 1/2).
double sign_test_p(int successes, int n);

}  // namespace gfra
