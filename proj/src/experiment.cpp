#include "gfra/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <thread>

#include <json.hpp>

#include "gfra/rng.hpp"

namespace gfra {

namespace {

using json = nlohmann::ordered_json;

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto b = item.find_first_not_of(" \t");
    const auto e = item.find_last_not_of(" \t");
    if (b != std::string::npos) out.push_back(item.substr(b, e - b + 1));
  }
  return out;
}

std::string join_doubles(const std::vector<double>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ",";
    out += format_double(v[i]);
  }
  return out;
}

std::string hex64(std::uint64_t v) {
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::uint64_t parse_hex64(const std::string& s) { return std::stoull(s, nullptr, 16); }

std::string sanitize(std::string s) {
  for (char& c : s) {
    if (c == ',' || c == '\n' || c == '\r') c = ';';
  }
  return s;
}

int solver_count(const std::vector<Solver>& s, Solver x) {
  return static_cast<int>(std::count(s.begin(), s.end(), x));
}

std::pair<double, double> mean_se(const std::vector<double>& v) {
  if (v.empty()) return {0.0, 0.0};
  const double n = static_cast<double>(v.size());
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / n;
  if (v.size() < 2) return {mean, 0.0};
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return {mean, std::sqrt(ss / (n - 1.0) / n)};
}

int resolve_threads(int requested) {
  if (requested > 0) return requested;
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

// Runs body(i) for i in [0, n) on a small pool; results must be written to
// per-index slots so completion order cannot matter.
template <class Body>
void parallel_for(std::size_t n, int threads, Body body) {
  const int k = std::max(1, std::min(threads, static_cast<int>(n)));
  if (k == 1) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  for (int w = 0; w < k; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) body(i);
    });
  }
  for (auto& t : pool) t.join();
}

TrainResult train_variant(const ExperimentSpec& spec, const Scenario& sc, LampVariant variant, const ProgressFn& log) {
  SystemConfig data_cfg = sc.sys;
  if (spec.lamp_train_active > 0) data_cfg.n_active = spec.lamp_train_active;
  const auto tag = static_cast<std::uint64_t>(variant);
  const int min_active = spec.lamp_train_active_min > 0 ? spec.lamp_train_active_min : -1;
  Dataset data =
      generate_dataset(data_cfg, sc.dict, spec.train.n_train, derive_seed(spec.seed, Stream::kDataset, tag), min_active);
  const LampParams init = init_from_amp(sc.dict, spec.amp, variant, sc.sys.n_antennas, sc.sys.n_slots(),
                                        spec.lamp_layers, spec.lamp_shared_weight);
  TrainLogger tlog;
  if (log) {
    tlog = [&](const CurvePoint& p) {
      std::ostringstream os;
      os << to_string(variant) << " subnet " << p.subnetwork << " step " << p.step << " lr " << p.lr << " train "
         << p.train_loss << " val " << p.val_loss;
      log(os.str());
    };
  }
  TrainResult r = train_lamp(data, sc.dict, init, spec.train, variant, tlog);
  if (r.diverged && log) log("training diverged: " + r.message);
  return r;
}

json cell_json(const CellSummary& c) {
  json j;
  j["solver"] = to_string(c.solver);
  j["value"] = c.value;
  j["completed"] = c.completed;
  j["failed"] = c.failed;
  j["f1"] = {{"mean", c.mean_f1}, {"se", c.se_f1}};
  j["nmse_db"] = {{"mean", c.mean_nmse_db}, {"se", c.se_nmse_db}};
  j["mu_data"] = {{"mean", c.mean_mu_data}, {"se", c.se_mu_data}};
  j["mu_p"] = {{"mean", c.mean_mu_p}, {"se", c.se_mu_p}};
  j["mu_r"] = {{"mean", c.mean_mu_r}, {"se", c.se_mu_r}};
  return j;
}

}  // namespace

std::string to_string(SweepAxis a) {
  switch (a) {
    case SweepAxis::kNActive: return "n_active";
    case SweepAxis::kSeqLen: return "seq_len";
    case SweepAxis::kSnrDb: return "snr_db";
    case SweepAxis::kGuard: return "guard";
  }
  return "?";
}

std::string to_string(Solver s) {
  switch (s) {
    case Solver::kAmp: return "amp";
    case Solver::kAmpBp: return "amp_bp";
    case Solver::kLamp: return "lamp";
    case Solver::kLampBp: return "lamp_bp";
  }
  return "?";
}

SweepAxis parse_axis(const std::string& s) {
  for (auto a : {SweepAxis::kNActive, SweepAxis::kSeqLen, SweepAxis::kSnrDb, SweepAxis::kGuard}) {
    if (to_string(a) == s) return a;
  }
  throw ConfigError("sweep_axis: unknown axis '" + s + "' (n_active, seq_len, snr_db, guard)");
}

Solver parse_solver(const std::string& s) {
  for (auto v : {Solver::kAmp, Solver::kAmpBp, Solver::kLamp, Solver::kLampBp}) {
    if (to_string(v) == s) return v;
  }
  throw ConfigError("solvers: unknown solver '" + s + "' (amp, amp_bp, lamp, lamp_bp)");
}

SystemConfig ExperimentSpec::at(double value) const {
  SystemConfig c = sys;
  switch (axis) {
    case SweepAxis::kNActive: c.n_active = static_cast<int>(std::lround(value)); break;
    case SweepAxis::kSeqLen: c.seq_len = static_cast<int>(std::lround(value)); break;
    case SweepAxis::kSnrDb: c.snr_db = value; break;
    case SweepAxis::kGuard:
      c.guard = static_cast<int>(std::lround(value));
      c.max_delay = c.guard;
      break;
  }
  return c;
}

bool ExperimentSpec::uses_lamp() const {
  return solver_count(solvers, Solver::kLamp) + solver_count(solvers, Solver::kLampBp) > 0;
}

void ExperimentSpec::validate() const {
  if (values.empty()) throw ConfigError("sweep_values: must be nonempty");
  const bool up = values.size() < 2 || values[1] > values[0];
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (up ? !(values[i] > values[i - 1]) : !(values[i] < values[i - 1])) {
      throw ConfigError("sweep_values: must be strictly monotone");
    }
  }
  if (axis != SweepAxis::kSnrDb) {
    for (double v : values) {
      if (v != std::round(v)) throw ConfigError("sweep_values: " + to_string(axis) + " takes integer values");
    }
  }
  if (n_trials < 1) throw ConfigError("n_trials: must be >= 1");
  if (solvers.empty()) throw ConfigError("solvers: must be nonempty");
  for (Solver s : solvers) {
    if (solver_count(solvers, s) > 1) throw ConfigError("solvers: duplicate '" + to_string(s) + "'");
  }
  if (threads < 0) throw ConfigError("threads: must be >= 0");
  for (double v : values) at(v).validate();
  amp.validate();
  det.validate();
  if (uses_lamp()) {
    if (lamp_layers < 1) throw ConfigError("lamp_layers: must be >= 1");
    if (lamp_train_active < 0) throw ConfigError("lamp_train_active: must be >= 0");
    if (lamp_train_active_min < 0) throw ConfigError("lamp_train_active_min: must be >= 0");
    train.validate();
  }
}

std::vector<std::string> preset_names() {
  return {"tiny-noiseless", "tiny-empty", "desk", "desk-lamp", "alpha-sensitivity", "load-sweep",
          "seq-len-sweep", "snr-sweep", "guard-sweep"};
}

ExperimentSpec preset(const std::string& name) {
  ExperimentSpec s;
  s.name = name;
  // Full-size pool (70 x 100) with trial counts cut down.
  s.sys.seq_len = 70;
  s.sys.n_sequences = 100;
  s.sys.guard = 3;
  s.sys.max_delay = 3;
  s.sys.n_pilot = 1;
  s.sys.max_data = 3;
  s.sys.n_antennas = 1;
  s.sys.snr_db = 30.0;
  s.n_trials = 100;
  if (name == "tiny-noiseless" || name == "tiny-empty") {
    s.sys.seq_len = 16;
    s.sys.n_sequences = 8;
    s.sys.guard = 2;
    s.sys.max_delay = 2;
    s.sys.snr_db = std::numeric_limits<double>::infinity();
    s.sys.n_active = name == "tiny-empty" ? 0 : 3;
    s.values = {static_cast<double>(s.sys.n_active)};
    s.solvers = {Solver::kAmpBp};
  } else if (name == "desk" || name == "desk-lamp") {
    s.sys.seq_len = 32;
    s.sys.n_sequences = 40;
    s.values = {8, 12, 16};
    s.n_trials = 200;
    if (name == "desk-lamp") {
      s.solvers = {Solver::kAmpBp, Solver::kLampBp};
      s.lamp_train_active = 16;
      s.lamp_train_active_min = 8;
      s.lamp_layers = 20;
      s.train.n_train = 50000;
      s.train.max_steps_per_stage = 250;
    }
  } else if (name == "alpha-sensitivity") {
    // Handled by alpha_sensitivity; only the seed is taken from here.
    s.values = {0.5, 1.0, 1.5, 2.0};
    s.axis = SweepAxis::kSnrDb;
  } else if (name == "load-sweep") {
    s.values = {8, 12, 16, 20, 24};
  } else if (name == "seq-len-sweep") {
    s.axis = SweepAxis::kSeqLen;
    s.values = {40, 50, 60, 70};
    s.sys.n_active = 24;
  } else if (name == "snr-sweep") {
    s.axis = SweepAxis::kSnrDb;
    s.values = {10, 15, 20, 25, 30};
    s.sys.n_active = 24;
  } else if (name == "guard-sweep") {
    s.axis = SweepAxis::kGuard;
    s.values = {3, 5};
    s.sys.n_active = 24;
  } else {
    std::string known;
    for (const auto& n : preset_names()) known += (known.empty() ? "" : ", ") + n;
    throw ConfigError("unknown preset '" + name + "' (" + known + ")");
  }
  if (s.axis == SweepAxis::kNActive) s.sys.n_active = static_cast<int>(s.values.front());
  return s;
}

void apply_config(ExperimentSpec& s, const KeyValueConfig& kv) {
  for (const auto& [key, raw] : kv.values()) {
    const std::string& k = key;
    if (k.rfind("path_loss.", 0) == 0) {
      s.sys.path_loss[std::stoi(k.substr(10))] = kv.get_double(k);
    } else if (k.rfind("stage_alpha.", 0) == 0) {
      const auto slot = static_cast<std::size_t>(std::stoi(k.substr(12)));
      if (s.amp.stage_alpha.size() <= slot) s.amp.stage_alpha.resize(slot + 1);
      s.amp.stage_alpha[slot] = kv.get_doubles(k);
    } else if (k == "name") s.name = raw;
    else if (k == "n_users") s.sys.n_users = kv.get_int(k);
    else if (k == "n_sequences") s.sys.n_sequences = kv.get_int(k);
    else if (k == "seq_len") s.sys.seq_len = kv.get_int(k);
    else if (k == "guard") s.sys.guard = kv.get_int(k);
    else if (k == "max_delay") s.sys.max_delay = kv.get_int(k);
    else if (k == "n_pilot") s.sys.n_pilot = kv.get_int(k);
    else if (k == "max_data") s.sys.max_data = kv.get_int(k);
    else if (k == "n_antennas") s.sys.n_antennas = kv.get_int(k);
    else if (k == "n_active") s.sys.n_active = kv.get_int(k);
    else if (k == "snr_db") s.sys.snr_db = kv.get_double(k);
    else if (k == "path_loss_default") s.sys.path_loss_default = kv.get_double(k);
    else if (k == "modulation_order") s.sys.modulation_order = kv.get_int(k);
    else if (k == "n_iters") s.amp.n_iters = kv.get_int(k);
    else if (k == "alpha") s.amp.alpha = kv.get_doubles(k);
    else if (k == "delta") s.amp.unroll.delta = kv.get_double(k);
    else if (k == "delta_scale") s.amp.unroll.delta_scale = kv.get_double(k);
    else if (k == "stop_tol") s.amp.stop_tol = kv.get_double(k);
    else if (k == "l0_mode") {
      if (raw == "entries") s.amp.unroll.l0_mode = L0Mode::kEntries;
      else if (raw == "rows") s.amp.unroll.l0_mode = L0Mode::kRows;
      else throw ConfigError("l0_mode: expected entries or rows, got '" + raw + "'");
    } else if (k == "first_stage_onsager") s.amp.unroll.first_stage_onsager = kv.get_bool(k);
    else if (k == "threshold_mode") {
      if (raw == "noise_scaled") s.det.mode = ThresholdMode::kNoiseScaled;
      else if (raw == "absolute") s.det.mode = ThresholdMode::kAbsolute;
      else throw ConfigError("threshold_mode: expected noise_scaled or absolute, got '" + raw + "'");
    } else if (k == "tau") s.det.tau = kv.get_double(k);
    else if (k == "rel_floor") s.det.rel_floor = kv.get_double(k);
    else if (k == "n_train") s.train.n_train = kv.get_u64(k);
    else if (k == "batch_size") s.train.batch_size = kv.get_int(k);
    else if (k == "lr_initial") s.train.lr_initial = kv.get_double(k);
    else if (k == "lr_decay_factor") s.train.lr_decay_factor = kv.get_double(k);
    else if (k == "lr_floor") s.train.lr_floor = kv.get_double(k);
    else if (k == "max_steps_per_stage") s.train.max_steps_per_stage = kv.get_int(k);
    else if (k == "train_seed") s.train.seed = kv.get_u64(k);
    else if (k == "validation_fraction") s.train.validation_fraction = kv.get_double(k);
    else if (k == "eval_every") s.train.eval_every = kv.get_int(k);
    else if (k == "plateau_window") s.train.plateau_window = kv.get_int(k);
    else if (k == "plateau_rel_improvement") s.train.plateau_rel_improvement = kv.get_double(k);
    else if (k == "chunk_size") s.train.chunk_size = kv.get_int(k);
    else if (k == "lamp_layers") s.lamp_layers = kv.get_int(k);
    else if (k == "lamp_shared_weight") s.lamp_shared_weight = kv.get_bool(k);
    else if (k == "lamp_train_active") s.lamp_train_active = kv.get_int(k);
    else if (k == "lamp_train_active_min") s.lamp_train_active_min = kv.get_int(k);
    else if (k == "lamp_mmv_params") s.lamp_mmv_params = raw;
    else if (k == "lamp_bp_params") s.lamp_bp_params = raw;
    else if (k == "sweep_axis") s.axis = parse_axis(raw);
    else if (k == "sweep_values") s.values = kv.get_doubles(k);
    else if (k == "n_trials") s.n_trials = kv.get_int(k);
    else if (k == "solvers") {
      s.solvers.clear();
      for (const auto& v : split_list(raw)) s.solvers.push_back(parse_solver(v));
    } else if (k == "seed") s.seed = kv.get_u64(k);
    else if (k == "output_dir") s.output_dir = raw;
    else if (k == "threads") s.threads = kv.get_int(k);
    else throw ConfigError("unknown config key '" + k + "'");
  }
}

KeyValueConfig to_config(const ExperimentSpec& s) {
  KeyValueConfig kv;
  auto put = [&](const std::string& k, const std::string& v) { kv.set(k, v); };
  auto num = [](auto v) { return std::to_string(v); };
  put("name", s.name);
  put("n_users", num(s.sys.n_users));
  put("n_sequences", num(s.sys.n_sequences));
  put("seq_len", num(s.sys.seq_len));
  put("guard", num(s.sys.guard));
  put("max_delay", num(s.sys.max_delay));
  put("n_pilot", num(s.sys.n_pilot));
  put("max_data", num(s.sys.max_data));
  put("n_antennas", num(s.sys.n_antennas));
  put("n_active", num(s.sys.n_active));
  put("snr_db", format_double(s.sys.snr_db));
  put("path_loss_default", format_double(s.sys.path_loss_default));
  put("modulation_order", num(s.sys.modulation_order));
  for (const auto& [u, l] : s.sys.path_loss) put("path_loss." + std::to_string(u), format_double(l));
  put("n_iters", num(s.amp.n_iters));
  put("alpha", join_doubles(s.amp.alpha));
  for (std::size_t i = 0; i < s.amp.stage_alpha.size(); ++i) {
    if (!s.amp.stage_alpha[i].empty()) put("stage_alpha." + std::to_string(i), join_doubles(s.amp.stage_alpha[i]));
  }
  put("delta", format_double(s.amp.unroll.delta));
  put("delta_scale", format_double(s.amp.unroll.delta_scale));
  put("stop_tol", format_double(s.amp.stop_tol));
  put("l0_mode", s.amp.unroll.l0_mode == L0Mode::kEntries ? "entries" : "rows");
  put("first_stage_onsager", s.amp.unroll.first_stage_onsager ? "true" : "false");
  put("threshold_mode", s.det.mode == ThresholdMode::kNoiseScaled ? "noise_scaled" : "absolute");
  put("tau", format_double(s.det.tau));
  put("rel_floor", format_double(s.det.rel_floor));
  put("n_train", num(s.train.n_train));
  put("batch_size", num(s.train.batch_size));
  put("lr_initial", format_double(s.train.lr_initial));
  put("lr_decay_factor", format_double(s.train.lr_decay_factor));
  put("lr_floor", format_double(s.train.lr_floor));
  put("max_steps_per_stage", num(s.train.max_steps_per_stage));
  put("train_seed", num(s.train.seed));
  put("validation_fraction", format_double(s.train.validation_fraction));
  put("eval_every", num(s.train.eval_every));
  put("plateau_window", num(s.train.plateau_window));
  put("plateau_rel_improvement", format_double(s.train.plateau_rel_improvement));
  put("chunk_size", num(s.train.chunk_size));
  put("lamp_layers", num(s.lamp_layers));
  put("lamp_shared_weight", s.lamp_shared_weight ? "true" : "false");
  put("lamp_train_active", num(s.lamp_train_active));
  put("lamp_train_active_min", num(s.lamp_train_active_min));
  put("lamp_mmv_params", s.lamp_mmv_params);
  put("lamp_bp_params", s.lamp_bp_params);
  put("sweep_axis", to_string(s.axis));
  put("sweep_values", join_doubles(s.values));
  put("n_trials", num(s.n_trials));
  std::string solvers;
  for (Solver v : s.solvers) solvers += (solvers.empty() ? "" : ",") + to_string(v);
  put("solvers", solvers);
  put("seed", num(s.seed));
  put("output_dir", s.output_dir);
  put("threads", num(s.threads));
  return kv;
}

std::uint64_t config_hash(const ExperimentSpec& spec) {
  ExperimentSpec s = spec;
  s.output_dir.clear();
  s.threads = 0;
  const std::string text = to_config(s).serialize();
  return fnv1a64(text.data(), text.size());
}

Scenario make_scenario(const SystemConfig& sys, std::uint64_t master_seed) {
  sys.validate();
  SpreadingPool pool = build_spreading_pool(sys, derive_seed(master_seed, Stream::kPool));
  ExpandedDictionary dict = expand_dictionary(pool, sys.guard);
  return Scenario{sys, std::move(pool), std::move(dict)};
}

std::uint64_t trial_realization_seed(std::uint64_t master, int trial) {
  return derive_seed(master, Stream::kRealization, static_cast<std::uint64_t>(trial));
}

std::uint64_t trial_noise_seed(std::uint64_t master, int trial) {
  return derive_seed(master, Stream::kNoise, static_cast<std::uint64_t>(trial));
}

RecoveryResult solve(Solver s, const CMatrix& y, const Scenario& sc, const AmpConfig& amp, const SolverSet& lamp) {
  switch (s) {
    case Solver::kAmp: return amp_mmv(y, sc.dict, amp);
    case Solver::kAmpBp: return amp_bp(y, sc.dict, amp, sc.sys.n_antennas, sc.sys.n_slots());
    case Solver::kLamp:
      if (!lamp.lamp_mmv) throw ConfigError("lamp: no trained parameters available");
      return lamp_mmv_forward(y, sc.dict, *lamp.lamp_mmv);
    case Solver::kLampBp:
      if (!lamp.lamp_bp) throw ConfigError("lamp_bp: no trained parameters available");
      return lamp_bp_forward(y, sc.dict, *lamp.lamp_bp, sc.sys.n_antennas, sc.sys.n_slots());
  }
  throw ConfigError("unknown solver");
}

SolverSet prepare_lamp(const ExperimentSpec& spec, const Scenario& sc, const ProgressFn& log) {
  SolverSet out;
  if (solver_count(spec.solvers, Solver::kLamp) > 0) {
    out.lamp_mmv = spec.lamp_mmv_params.empty() ? train_variant(spec, sc, LampVariant::kMmv, log).params
                                                : load_params(spec.lamp_mmv_params, &sc.dict);
  }
  if (solver_count(spec.solvers, Solver::kLampBp) > 0) {
    out.lamp_bp = spec.lamp_bp_params.empty() ? train_variant(spec, sc, LampVariant::kBp, log).params
                                              : load_params(spec.lamp_bp_params, &sc.dict);
  }
  return out;
}

SingleResult run_single(const ExperimentSpec& spec, const SolverSet& lamp, int trial) {
  spec.validate();
  const Scenario sc = make_scenario(spec.at(spec.values.front()), spec.seed);
  const Solver solver = spec.solvers.front();
  SolverSet params = lamp;
  const bool need = (solver == Solver::kLamp && !params.lamp_mmv) || (solver == Solver::kLampBp && !params.lamp_bp);
  if (need) {
    ExperimentSpec one = spec;
    one.solvers = {solver};
    params = prepare_lamp(one, sc);
  }
  SingleResult r;
  r.realization = draw_realization(sc.sys, sc.pool, trial_realization_seed(spec.seed, trial));
  r.observation = synthesize_observation(r.realization, sc.dict, sc.sys.snr_db, trial_noise_seed(spec.seed, trial));
  r.observation_hash = hash_matrix(r.observation.y);
  r.recovery = solve(solver, r.observation.y, sc, spec.amp, params);
  r.receiver = run_receiver(r.recovery.x_hat, sc.sys, spec.det, r.observation.noise_var);
  r.metrics = evaluate(r.realization, r.receiver);
  return r;
}

const CellSummary& SweepResult::cell(Solver s, double value) const {
  for (const auto& c : cells) {
    if (c.solver == s && c.value == value) return c;
  }
  throw std::out_of_range("no sweep cell for " + to_string(s) + " at " + format_double(value));
}

std::vector<double> SweepResult::metric(Solver s, double value, double MetricsReport::*field) const {
  std::vector<double> out;
  for (const auto& t : trials) {
    if (t.solver == s && t.value == value && t.ok) out.push_back(t.metrics.*field);
  }
  return out;
}

std::vector<CellSummary> summarize(const std::vector<TrialRecord>& trials) {
  std::vector<CellSummary> cells;
  std::vector<std::pair<Solver, double>> keys;
  for (const auto& t : trials) {
    const std::pair<Solver, double> k{t.solver, t.value};
    if (std::find(keys.begin(), keys.end(), k) == keys.end()) keys.push_back(k);
  }
  for (const auto& [solver, value] : keys) {
    CellSummary c;
    c.solver = solver;
    c.value = value;
    std::vector<double> f1, nm, mu, mp, mr;
    for (const auto& t : trials) {
      if (t.solver != solver || t.value != value) continue;
      if (!t.ok) {
        ++c.failed;
        continue;
      }
      ++c.completed;
      f1.push_back(t.metrics.f1);
      nm.push_back(t.metrics.nmse_db);
      mu.push_back(t.metrics.mu_data);
      mp.push_back(t.metrics.mu_p);
      mr.push_back(t.metrics.mu_r);
    }
    std::tie(c.mean_f1, c.se_f1) = mean_se(f1);
    std::tie(c.mean_nmse_db, c.se_nmse_db) = mean_se(nm);
    std::tie(c.mean_mu_data, c.se_mu_data) = mean_se(mu);
    std::tie(c.mean_mu_p, c.se_mu_p) = mean_se(mp);
    std::tie(c.mean_mu_r, c.se_mu_r) = mean_se(mr);
    cells.push_back(c);
  }
  return cells;
}

static constexpr const char* kTrialsHeader =
    "solver,value,trial,realization_seed,noise_seed,observation_hash,status,f1,mu_p,mu_r,nmse_db,mu_data,n_active,"
    "collisions,misdetections,false_alarms,row_misses,row_false_alarms,users_recovered,iterations,error";

void write_trials_csv(const std::string& path, const std::vector<TrialRecord>& trials, std::uint64_t cfg_hash) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write trials CSV '" + path + "'");
  os << "# gfra-trials v1 config_hash=" << hex64(cfg_hash) << '\n' << kTrialsHeader << '\n';
  for (const auto& t : trials) {
    const auto& m = t.metrics;
    os << to_string(t.solver) << ',' << format_double(t.value) << ',' << t.trial << ',' << t.realization_seed << ','
       << t.noise_seed << ',' << hex64(t.observation_hash) << ',' << (t.ok ? "ok" : "failed") << ','
       << format_double(m.f1) << ',' << format_double(m.mu_p) << ',' << format_double(m.mu_r) << ','
       << format_double(m.nmse_db) << ',' << format_double(m.mu_data) << ',' << m.n_active << ',' << m.collisions
       << ',' << m.misdetections << ',' << m.false_alarms << ',' << m.row_misses << ',' << m.row_false_alarms << ','
       << m.users_recovered << ',' << t.iterations << ',' << sanitize(t.error) << '\n';
  }
  if (!os) throw std::runtime_error("write failed for '" + path + "'");
}

std::vector<TrialRecord> read_trials_csv(const std::string& path, std::uint64_t* cfg_hash) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot read trials CSV '" + path + "'");
  std::string line;
  std::getline(is, line);
  const std::string magic = "# gfra-trials v1";
  if (line.rfind(magic, 0) != 0) throw ConfigError(path + ": not a gfra-trials v1 file");
  if (cfg_hash != nullptr) {
    const auto p = line.find("config_hash=");
    *cfg_hash = p == std::string::npos ? 0 : parse_hex64(line.substr(p + 12));
  }
  std::getline(is, line);
  if (line != kTrialsHeader) throw ConfigError(path + ": unexpected column header");
  std::vector<TrialRecord> out;
  int lineno = 2;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (line.back() == ',') f.emplace_back();
    if (f.size() != 21) throw ConfigError(path + ":" + std::to_string(lineno) + ": expected 21 fields");
    TrialRecord t;
    t.solver = parse_solver(f[0]);
    t.value = std::stod(f[1]);
    t.trial = std::stoi(f[2]);
    t.realization_seed = std::stoull(f[3]);
    t.noise_seed = std::stoull(f[4]);
    t.observation_hash = parse_hex64(f[5]);
    t.ok = f[6] == "ok";
    auto& m = t.metrics;
    m.f1 = std::stod(f[7]);
    m.mu_p = std::stod(f[8]);
    m.mu_r = std::stod(f[9]);
    m.nmse_db = std::stod(f[10]);
    m.mu_data = std::stod(f[11]);
    m.n_active = std::stoi(f[12]);
    m.collisions = std::stoi(f[13]);
    m.misdetections = std::stoi(f[14]);
    m.false_alarms = std::stoi(f[15]);
    m.row_misses = std::stoi(f[16]);
    m.row_false_alarms = std::stoi(f[17]);
    m.users_recovered = std::stoi(f[18]);
    t.iterations = std::stoi(f[19]);
    t.error = f[20];
    out.push_back(std::move(t));
  }
  return out;
}

std::string summary_json(const ExperimentSpec* spec, const std::vector<CellSummary>& cells, std::uint64_t cfg_hash,
                         int failed) {
  json j;
  j["format"] = "gfra-summary v1";
  j["config_hash"] = hex64(cfg_hash);
  if (spec != nullptr) {
    json cfg;
    const KeyValueConfig kv = to_config(*spec);
    for (const auto& [k, v] : kv.values()) {
      if (k != "output_dir" && k != "threads") cfg[k] = v;
    }
    j["config"] = cfg;
    j["rng"] = std::string(kRngAlgorithm);
  }
  j["failed_trials"] = failed;
  json arr = json::array();
  for (const auto& c : cells) arr.push_back(cell_json(c));
  j["cells"] = arr;
  return j.dump(2) + "\n";
}

SweepResult run_sweep(const ExperimentSpec& spec, const ProgressFn& log) {
  spec.validate();
  const std::size_t nv = spec.values.size();
  const std::size_t ns = spec.solvers.size();
  const auto nt = static_cast<std::size_t>(spec.n_trials);

  // Scenarios and LAMP parameters are shared by every point with the same
  // dictionary (and, for training, the same load).
  std::vector<Scenario> scenarios;
  std::vector<SolverSet> lamps;
  std::map<std::pair<std::uint64_t, int>, std::size_t> trained;
  for (double v : spec.values) {
    scenarios.push_back(make_scenario(spec.at(v), spec.seed));
    const Scenario& sc = scenarios.back();
    if (!spec.uses_lamp()) {
      lamps.emplace_back();
      continue;
    }
    const int load = spec.lamp_train_active > 0 ? spec.lamp_train_active : sc.sys.n_active;
    const auto key = std::make_pair(sc.dict.content_hash(), load);
    auto it = trained.find(key);
    if (it != trained.end()) {
      lamps.push_back(lamps[it->second]);
    } else {
      if (log) log("preparing LAMP parameters for " + to_string(spec.axis) + " = " + format_double(v));
      lamps.push_back(prepare_lamp(spec, sc, log));
      trained[key] = lamps.size() - 1;
    }
  }

  std::vector<TrialRecord> records(nv * ns * nt);
  std::atomic<std::size_t> done{0};
  std::mutex log_mu;
  parallel_for(nv * nt, resolve_threads(spec.threads), [&](std::size_t job) {
    const std::size_t vi = job / nt;
    const int trial = static_cast<int>(job % nt);
    const Scenario& sc = scenarios[vi];
    const std::uint64_t rs = trial_realization_seed(spec.seed, trial);
    const std::uint64_t nsd = trial_noise_seed(spec.seed, trial);
    std::optional<TransmissionRealization> real;
    std::optional<Observation> obs;
    std::string setup_error;
    try {
      real = draw_realization(sc.sys, sc.pool, rs);
      obs = synthesize_observation(*real, sc.dict, sc.sys.snr_db, nsd);
    } catch (const std::exception& e) {
      setup_error = e.what();
    }
    for (std::size_t si = 0; si < ns; ++si) {
      TrialRecord& t = records[(vi * ns + si) * nt + static_cast<std::size_t>(trial)];
      t.solver = spec.solvers[si];
      t.value = spec.values[vi];
      t.trial = trial;
      t.realization_seed = rs;
      t.noise_seed = nsd;
      if (!obs) {
        t.error = setup_error;
        continue;
      }
      t.observation_hash = hash_matrix(obs->y);
      try {
        const RecoveryResult rec = solve(t.solver, obs->y, sc, spec.amp, lamps[vi]);
        const ReceiverOutput out = run_receiver(rec.x_hat, sc.sys, spec.det, obs->noise_var);
        t.metrics = evaluate(*real, out);
        t.iterations = std::accumulate(rec.stage_iterations.begin(), rec.stage_iterations.end(), 0);
        t.ok = true;
      } catch (const std::exception& e) {
        t.error = e.what();
      }
    }
    const std::size_t d = ++done;
    if (log && (d % 100 == 0 || d == nv * nt)) {
      std::lock_guard<std::mutex> lock(log_mu);
      log("trials " + std::to_string(d) + "/" + std::to_string(nv * nt));
    }
  });

  SweepResult r;
  r.trials = std::move(records);
  r.cells = summarize(r.trials);
  for (const auto& t : r.trials) r.failed += t.ok ? 0 : 1;
  if (!spec.output_dir.empty()) {
    std::filesystem::create_directories(spec.output_dir);
    const std::uint64_t h = config_hash(spec);
    r.csv_path = (std::filesystem::path(spec.output_dir) / "trials.csv").string();
    r.json_path = (std::filesystem::path(spec.output_dir) / "summary.json").string();
    write_trials_csv(r.csv_path, r.trials, h);
    std::ofstream js(r.json_path, std::ios::binary);
    js << summary_json(&spec, r.cells, h, r.failed);
  }
  return r;
}

void write_curve_csv(const std::string& path, const std::vector<CurvePoint>& curve) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write curve CSV '" + path + "'");
  os << "# gfra-curve v1\nsubnetwork,step,lr,train_loss,val_loss\n";
  for (const auto& p : curve) {
    os << p.subnetwork << ',' << p.step << ',' << format_double(p.lr) << ',' << format_double(p.train_loss) << ','
       << format_double(p.val_loss) << '\n';
  }
}

TrainingRun run_training(const ExperimentSpec& spec, LampVariant variant, const ProgressFn& log) {
  ExperimentSpec s = spec;
  s.solvers = {variant == LampVariant::kMmv ? Solver::kLamp : Solver::kLampBp};
  s.validate();
  const Scenario sc = make_scenario(s.at(s.values.front()), s.seed);
  TrainingRun run;
  run.result = train_variant(s, sc, variant, log);
  if (!s.output_dir.empty()) {
    std::filesystem::create_directories(s.output_dir);
    const std::filesystem::path dir(s.output_dir);
    run.params_path = (dir / ("lamp_" + to_string(variant) + ".params")).string();
    run.curve_path = (dir / ("curve_" + to_string(variant) + ".csv")).string();
    save_params(run.result.params, run.params_path);
    write_curve_csv(run.curve_path, run.result.curve);
  }
  return run;
}

UniquenessReport run_theory_check(const UniquenessTrialConfig& cfg) { return verify_uniqueness_bound(cfg); }

std::string theory_json(const UniquenessReport& r) {
  json j;
  j["format"] = "gfra-theory v1";
  j["config"] = {{"m_dim", r.config.m_dim}, {"n_dim", r.config.n_dim},     {"l_dim", r.config.l_dim},
                 {"r_known", r.config.r_known}, {"trials", r.config.trials}, {"seed", r.config.seed}};
  j["bound"] = r.bound;
  j["trials"] = r.trials;
  j["unique"] = r.unique;
  j["planted_found"] = r.planted_found;
  j["unique_fraction"] = r.unique_fraction;
  j["redraws"] = r.redraws;
  j["wall_seconds"] = r.wall_seconds;
  return j.dump(2) + "\n";
}

std::vector<AlphaSensitivityPoint> alpha_sensitivity(const AlphaSensitivityConfig& cfg) {
  if (cfg.m_dim < 1 || cfg.n_dim < cfg.m_dim || cfg.columns < 1 || cfg.trials < 1) {
    throw ConfigError("alpha_sensitivity: need 1 <= m_dim <= n_dim, columns >= 1, trials >= 1");
  }
  if (cfg.nonzero_rows < 0 || cfg.nonzero_rows > cfg.n_dim) throw ConfigError("alpha_sensitivity: bad nonzero_rows");
  SystemConfig pool_cfg;
  pool_cfg.seq_len = cfg.m_dim;
  pool_cfg.n_sequences = cfg.n_dim;
  pool_cfg.guard = 0;
  pool_cfg.max_delay = 0;
  pool_cfg.n_active = 0;
  const ExpandedDictionary dict = expand_dictionary(build_spreading_pool(pool_cfg, derive_seed(cfg.seed, Stream::kPool)), 0);

  std::vector<CMatrix> xs, ys;
  for (int t = 0; t < cfg.trials; ++t) {
    Rng rng(derive_seed(cfg.seed, Stream::kTrial, static_cast<std::uint64_t>(t)));
    std::vector<int> rows(static_cast<std::size_t>(cfg.n_dim));
    std::iota(rows.begin(), rows.end(), 0);
    std::shuffle(rows.begin(), rows.end(), rng.engine());
    CMatrix x = CMatrix::Zero(cfg.n_dim, cfg.columns);
    for (int k = 0; k < cfg.nonzero_rows; ++k) {
      for (int c = 0; c < cfg.columns; ++c) x(rows[static_cast<std::size_t>(k)], c) = rng.complex_normal();
    }
    CMatrix y = dict.matrix() * x;
    const double sig = y.squaredNorm() / static_cast<double>(y.size());
    const double sigma = std::sqrt(sig / std::pow(10.0, cfg.snr_db / 10.0));
    for (Eigen::Index i = 0; i < y.size(); ++i) y.data()[i] += sigma * rng.complex_normal();
    xs.push_back(std::move(x));
    ys.push_back(std::move(y));
  }
  std::vector<AlphaSensitivityPoint> out;
  for (double a : cfg.alphas) {
    AmpConfig amp;
    amp.n_iters = cfg.n_iters;
    amp.alpha = {a};
    double acc = 0.0;
    for (int t = 0; t < cfg.trials; ++t) {
      const auto ti = static_cast<std::size_t>(t);
      try {
        acc += nmse_db(amp_mmv(ys[ti], dict, amp).x_hat, xs[ti]);
      } catch (const NumericalError&) {
        acc += kNmseCeilDb;  // diverged to non-finite values
      }
    }
    out.push_back({a, acc / cfg.trials});
  }
  return out;
}

double sign_test_p(int successes, int n) {
  if (n <= 0) return 1.0;
  double p = 0.0;
  for (int i = std::max(successes, 0); i <= n; ++i) {
    p += std::exp(std::lgamma(n + 1.0) - std::lgamma(i + 1.0) - std::lgamma(n - i + 1.0) - n * std::log(2.0));
  }
  return std::min(p, 1.0);
}

}  // namespace gfra
