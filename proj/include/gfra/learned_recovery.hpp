#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "gfra/sparse_recovery.hpp"
#include "gfra/system_model.hpp"

namespace gfra {

enum class LampVariant { kMmv, kBp };

std::string to_string(LampVariant v);
LampVariant parse_variant(const std::string& s);

// Learned parameters of LAMP-MMV (one subnetwork) or LAMP-BP (one subnetwork
// per slot). Subnetworks are indexed by the first slot they cover, so index
// L-1 is the sparsest (first-run) subnetwork.
struct LampParams {
  LampVariant variant = LampVariant::kMmv;
  int n_antennas = 1;
  int n_slots = 1;
  int n_layers = 10;
  bool shared_weight = true;
  std::vector<CMatrix> weights;             // 1 if shared, else one per subnetwork
  std::vector<std::vector<double>> alphas;  // [subnetwork][layer]
  UnrollOptions unroll;
  std::uint64_t dict_hash = 0;

  int n_subnetworks() const { return static_cast<int>(alphas.size()); }
  const CMatrix& weight(int subnetwork) const;
  CMatrix& weight(int subnetwork);
  void validate_for(const ExpandedDictionary& dict) const;
};

bool operator==(const LampParams& a, const LampParams& b);

// B = D^H and alpha from the AMP schedule, so the untrained network computes
// exactly n_layers AMP iterations.
LampParams init_from_amp(const ExpandedDictionary& dict, const AmpConfig& amp, LampVariant variant, int n_antennas,
                         int n_slots, int n_layers, bool shared_weight = true);

RecoveryResult lamp_mmv_forward(const CMatrix& y, const ExpandedDictionary& dict, const LampParams& params);
RecoveryResult lamp_bp_forward(const CMatrix& y, const ExpandedDictionary& dict, const LampParams& params,
                               int n_antennas, int n_slots);

// Training pairs share one dictionary. x_true is kept as its nonzero rows.
struct SparseRows {
  IndexSet rows;
  CMatrix values;  // |rows| x columns
  Eigen::Index n_rows = 0;

  CMatrix dense() const;
  static SparseRows from_dense(const CMatrix& x);
};

struct Dataset {
  SystemConfig config;
  std::vector<CMatrix> y;
  std::vector<SparseRows> x;
  std::vector<double> noise_var;
  std::uint64_t seed = 0;
  std::uint64_t dict_hash = 0;

  std::size_t size() const { return y.size(); }
};

// With min_active in [0, cfg.n_active), each pair draws its load uniformly
// from [min_active, cfg.n_active]; otherwise every pair uses cfg.n_active.
Dataset generate_dataset(const SystemConfig& cfg, const ExpandedDictionary& dict, std::size_t count,
                         std::uint64_t seed, int min_active = -1);

struct TrainConfig {
  std::size_t n_train = 50000;
  int batch_size = 1000;
  double lr_initial = 0.1;
  double lr_decay_factor = 0.1;
  double lr_floor = 1e-4;
  // Step cap per learning-rate level.
  int max_steps_per_stage = 300000;
  std::uint64_t seed = 1;
  double validation_fraction = 0.05;
  int eval_every = 10;
  int plateau_window = 5;
  double plateau_rel_improvement = 1e-4;
  // Samples per forward/backward chunk; bounds trace memory.
  int chunk_size = 250;

  void validate() const;
};

struct CurvePoint {
  int subnetwork = 0;
  int step = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double val_loss = 0.0;
};

struct TrainResult {
  LampParams params;
  std::vector<CurvePoint> curve;
  std::vector<LampParams> stage_snapshots;  // params after each trained subnetwork
  bool diverged = false;
  std::string message;
};

using TrainLogger = std::function<void(const CurvePoint&)>;

TrainResult train_lamp(const Dataset& data, const ExpandedDictionary& dict, const LampParams& init,
                       const TrainConfig& tcfg, LampVariant variant, const TrainLogger& log = {});

// Batch loss sum_q ||X^_q - X_q||^2 / sum_q ||X_q||^2 over the columns a
// subnetwork outputs, and its gradient. Exposed for gradient checks.
struct LossGradient {
  double loss = 0.0;
  CMatrix weight;
  RVector log_alpha;
};

LossGradient subnetwork_loss(const Dataset& data, const std::vector<std::size_t>& batch, const ExpandedDictionary& dict,
                             const LampParams& params, int subnetwork, bool want_weight);

void save_params(const LampParams& params, const std::string& path);
LampParams load_params(const std::string& path, const ExpandedDictionary* expected = nullptr);

}  // namespace gfra
