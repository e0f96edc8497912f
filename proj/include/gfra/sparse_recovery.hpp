#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "gfra/system_model.hpp"
#include "gfra/types.hpp"

namespace gfra {

// How the Onsager coefficient counts the support of the current estimate.
enum class L0Mode {
  kEntries,  // nonzero entries / (M~ * width)
  kRows,     // nonzero rows / M~
};

// Row mask over dictionary atoms; 1 keeps the row out of the threshold.
using RowMask = std::vector<std::uint8_t>;

// Knobs shared by the model-driven solvers and their unfolded networks.
struct UnrollOptions {
  // Support threshold for the backward sweep. Negative selects the
  // noise-scaled default delta_scale * median_row_norm(pseudo) / sqrt(width).
  double delta = -1.0;
  double delta_scale = 3.0;
  L0Mode l0_mode = L0Mode::kEntries;
  // Onsager term in the first (last-slot) stage of the backward sweep.
  bool first_stage_onsager = true;
};

struct AmpConfig {
  int n_iters = 50;
  // Per-iteration alpha; a single value is used for every iteration.
  std::vector<double> alpha{2.5};
  // Optional per-stage schedules for amp_bp, indexed by the stage's first
  // slot (0..L-1). Empty entries fall back to `alpha`.
  std::vector<std::vector<double>> stage_alpha;
  double stop_tol = 1e-8;
  UnrollOptions unroll;

  void validate() const;
  double alpha_at(int first_slot, int iter) const;
  std::vector<double> schedule(int first_slot) const;
};

struct RecoveryResult {
  CMatrix x_hat;
  std::vector<double> residual_norms;      // every iteration, all stages in run order
  std::vector<int> stage_iterations;       // iterations run per stage, in run order
  std::vector<IndexSet> support_history;   // support prior handed to stages L-2..0
  bool residual_nonmonotone = false;
};

CMatrix row_soft_threshold(const CMatrix& x, double lambda);
CMatrix prior_aided_threshold(const CMatrix& x, double lambda, const RowMask& support_mask);

IndexSet extract_support(const CMatrix& x_hat_block, double delta);

// Minimum-norm least squares of dict(:, support) * W = y_block, scattered
// into a zero matrix with dict.n_atoms() rows.
CMatrix ls_reinitialize(const ExpandedDictionary& dict, const IndexSet& support, const CMatrix& y_block);

RecoveryResult amp_mmv(const CMatrix& y, const ExpandedDictionary& dict, const AmpConfig& cfg);
RecoveryResult amp_bp(const CMatrix& y, const ExpandedDictionary& dict, const AmpConfig& cfg, int n_antennas,
                      int n_slots);

double median_row_norm(const CMatrix& x);
double support_threshold(const UnrollOptions& opt, const CMatrix& pseudo_block);

namespace core {

// One stage of the unrolled iteration on `n_samples` problems stacked
// column-wise, `width` columns each:
//   V^t   = Y - D X^t + b^t V^{t-1}
//   Z^t   = X^t + W V^t
//   X^t+1 = eta(Z^t; alpha^t ||V^t|| / sqrt(M~ width); mask)
// W is D^H for AMP and the learned matrix for LAMP.
struct StageProblem {
  const CMatrix* dict = nullptr;
  const CMatrix* weight = nullptr;
  int width = 1;
  int n_samples = 1;
  std::span<const double> alphas;
  bool onsager = true;
  L0Mode l0_mode = L0Mode::kEntries;
  double stop_tol = 0.0;                      // honoured only for n_samples == 1
  const std::vector<RowMask>* masks = nullptr;  // one per sample, or null
};

struct StageTrace {
  std::vector<CMatrix> v;
  std::vector<CMatrix> z;
  std::vector<RVector> lambda;
  std::vector<RVector> v_norm;
  std::vector<RVector> onsager_b;
};

struct StageResult {
  CMatrix x;
  CMatrix pseudo;  // Z of the last layer run
  std::vector<double> residual_norms;
  int layers_run = 0;
};

StageResult run_stage(const StageProblem& p, const CMatrix& y, CMatrix x0, StageTrace* trace = nullptr);

struct StageGradients {
  CMatrix weight;  // d loss / d conj-cotangent of W (re + i im)
  RVector alpha;   // d loss / d alpha^t
};

// Reverse pass through run_stage given the cotangent of its output.
StageGradients backprop_stage(const StageProblem& p, const StageTrace& trace, const CMatrix& grad_x,
                              bool want_weight);

// Backward sweep over slots L-1..0 shared by amp_bp and the LAMP-BP forward.
// `weight_of(first_slot)` and `alphas_of(first_slot)` supply per-stage
// parameters.
template <class WeightFn, class AlphaFn>
RecoveryResult backward_sweep(const CMatrix& y, const ExpandedDictionary& dict, int n_antennas, int n_slots,
                              const UnrollOptions& opt, double stop_tol, WeightFn weight_of, AlphaFn alphas_of);

void threshold_rows_inplace(Eigen::Ref<CMatrix> block, double lambda, const RowMask* mask);

}  // namespace core
}  // namespace gfra

#include "gfra/detail/backward_sweep.ipp"
