#pragma once

#include <string>
#include <vector>

#include "gfra/constellation.hpp"
#include "gfra/system_model.hpp"
#include "gfra/types.hpp"

namespace gfra {

enum class ThresholdMode { kNoiseScaled, kAbsolute };

struct DetectionConfig {
  ThresholdMode mode = ThresholdMode::kNoiseScaled;
  // Multiplier c in tau = c * sqrt(noise_var * R * L_p), or tau itself.
  double tau = 4.0;
  // Noise-scaled thresholds never drop below rel_floor times the largest
  // row norm, so noiseless estimates are not flooded by round-off rows.
  double rel_floor = 1e-6;

  void validate() const;
  // Threshold on the norm of a row's pilot block (R*L_p entries); scale is
  // the largest such norm in the estimate.
  double row_threshold(double noise_var, int n_antennas, int n_pilot, double scale = 0.0) const;
};

inline constexpr int kNoSymbol = -1;

struct RowDetection {
  IndexSet rows;       // detected dictionary rows (sequence, delay)
  IndexSet sequences;  // their projection onto the sequence index
};

struct ChannelEstimate {
  int row = 0;
  CVector channel;  // length R
};

struct DataDecision {
  int row = 0;
  std::vector<int> symbols;  // constellation index or kNoSymbol, length L_d
  bool undecodable = false;  // zero-norm channel estimate
  // Equalized symbols sit far from the constellation, as superposed users do.
  bool collision_suspect = false;
};

struct ReceiverOutput {
  IndexSet detected_rows;
  IndexSet detected_pilots;
  std::vector<ChannelEstimate> channels;  // aligned with detected_rows
  std::vector<DataDecision> data;         // aligned with detected_rows
  CMatrix u_hat;                          // pilot block estimate, zero outside detected rows
};

struct MetricsReport {
  double f1 = 0.0;
  double mu_p = 0.0;  // |M ∩ M^| / |M|
  double mu_r = 0.0;  // |M ∩ M^| / |M^|
  double nmse_db = 0.0;
  double mu_data = 0.0;
  int n_active = 0;
  int collisions = 0;        // users sharing their (sequence, delay) with another user
  int misdetections = 0;     // selected sequences not detected
  int false_alarms = 0;      // detected sequences nobody selected
  int row_misses = 0;
  int row_false_alarms = 0;
  int users_recovered = 0;
  bool empty_active_set = false;
};

inline constexpr double kNmseFloorDb = -120.0;
inline constexpr double kNmseCeilDb = 120.0;

RowDetection detect_rows(const CMatrix& x_hat, const DetectionConfig& cfg, double noise_var, int n_antennas,
                         int n_pilot, int guard);

std::vector<ChannelEstimate> estimate_channels(const CMatrix& x_hat, const IndexSet& rows, const CVector& pilot_symbols,
                                               int n_antennas);

// Maximum-ratio combining per data slot, then nearest-point decision; a slot
// is empty when both the equalized magnitude is under d_min/2 and the slot
// energy is under slot_threshold.
std::vector<DataDecision> recover_data(const CMatrix& x_hat, const std::vector<ChannelEstimate>& channels, int n_antennas,
                                       int n_pilot, int max_data, const QamConstellation& qam, double slot_threshold);

ReceiverOutput run_receiver(const CMatrix& x_hat, const SystemConfig& sys, const DetectionConfig& det, double noise_var);

MetricsReport evaluate(const TransmissionRealization& real, const ReceiverOutput& out);

// Precision/recall pair exactly as the metric defines it, with F1.
struct SetScores {
  double mu_p = 0.0;
  double mu_r = 0.0;
  double f1 = 0.0;
};
SetScores score_sets(const IndexSet& truth, const IndexSet& detected);

double nmse_db(const CMatrix& estimate, const CMatrix& truth);

}  // namespace gfra
