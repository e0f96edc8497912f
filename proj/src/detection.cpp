#include "gfra/detection.hpp"

#include <algorithm>
#include <cmath>
#include <iterator>

namespace gfra {

void DetectionConfig::validate() const {
  if (!(tau > 0.0) || !std::isfinite(tau)) throw ConfigError("tau: must be positive");
  if (!(rel_floor >= 0.0 && rel_floor < 1.0)) throw ConfigError("rel_floor: must be in [0, 1)");
}

double DetectionConfig::row_threshold(double noise_var, int n_antennas, int n_pilot, double scale) const {
  if (mode == ThresholdMode::kAbsolute) return tau;
  return std::max(tau * std::sqrt(noise_var * n_antennas * n_pilot), rel_floor * scale);
}

RowDetection detect_rows(const CMatrix& x_hat, const DetectionConfig& cfg, double noise_var, int n_antennas,
                         int n_pilot, int guard) {
  cfg.validate();
  if (!x_hat.allFinite()) throw NumericalError("detect_rows: estimate contains non-finite values");
  const Eigen::Index pilot_cols = static_cast<Eigen::Index>(n_antennas) * n_pilot;
  if (x_hat.cols() < pilot_cols) throw DimensionError("detect_rows: estimate has fewer columns than the pilot block");
  const double scale = x_hat.rows() > 0 ? x_hat.leftCols(pilot_cols).rowwise().norm().maxCoeff() : 0.0;
  const double tau = cfg.row_threshold(noise_var, n_antennas, n_pilot, scale);
  RowDetection d;
  for (Eigen::Index j = 0; j < x_hat.rows(); ++j) {
    if (x_hat.block(j, 0, 1, pilot_cols).norm() > tau) {
      d.rows.push_back(static_cast<int>(j));
      const int seq = static_cast<int>(j) / (guard + 1);
      if (d.sequences.empty() || d.sequences.back() != seq) d.sequences.push_back(seq);
    }
  }
  return d;
}

std::vector<ChannelEstimate> estimate_channels(const CMatrix& x_hat, const IndexSet& rows, const CVector& pilot_symbols,
                                               int n_antennas) {
  const double p_energy = pilot_symbols.squaredNorm();
  if (p_energy == 0.0) throw ConfigError("estimate_channels: pilot symbols must be nonzero");
  std::vector<ChannelEstimate> out;
  out.reserve(rows.size());
  for (int row : rows) {
    ChannelEstimate e;
    e.row = row;
    e.channel = CVector::Zero(n_antennas);
    // Least squares per antenna: h = p^H u / ||p||^2.
    for (Eigen::Index l = 0; l < pilot_symbols.size(); ++l) {
      for (int a = 0; a < n_antennas; ++a) e.channel(a) += std::conj(pilot_symbols(l)) * x_hat(row, l * n_antennas + a);
    }
    e.channel /= p_energy;
    out.push_back(std::move(e));
  }
  return out;
}

std::vector<DataDecision> recover_data(const CMatrix& x_hat, const std::vector<ChannelEstimate>& channels, int n_antennas,
                                       int n_pilot, int max_data, const QamConstellation& qam, double slot_threshold) {
  std::vector<DataDecision> out;
  out.reserve(channels.size());
  const double half_dmin = qam.min_distance() / 2.0;
  for (const auto& ch : channels) {
    DataDecision dec;
    dec.row = ch.row;
    dec.symbols.assign(static_cast<std::size_t>(max_data), kNoSymbol);
    const double h2 = ch.channel.squaredNorm();
    if (h2 == 0.0) {
      dec.undecodable = true;
      out.push_back(std::move(dec));
      continue;
    }
    double off_grid = 0.0;
    int decided = 0;
    for (int s = 0; s < max_data; ++s) {
      const Eigen::Index c0 = static_cast<Eigen::Index>(n_pilot + s) * n_antennas;
      const auto slot = x_hat.block(ch.row, c0, 1, n_antennas);
      const Complex combined = (slot * ch.channel.conjugate())(0, 0) / h2;
      if (std::abs(combined) < half_dmin && slot.norm() <= slot_threshold) continue;
      const int idx = qam.nearest(combined);
      dec.symbols[static_cast<std::size_t>(s)] = idx;
      off_grid += std::norm(combined - qam.point(idx));
      ++decided;
    }
    // Mean squared distance to the decided points beyond (d_min/4)^2.
    if (decided > 0 && off_grid / decided > 0.0625 * qam.min_distance() * qam.min_distance()) dec.collision_suspect = true;
    out.push_back(std::move(dec));
  }
  return out;
}

ReceiverOutput run_receiver(const CMatrix& x_hat, const SystemConfig& sys, const DetectionConfig& det, double noise_var) {
  ReceiverOutput out;
  const RowDetection d = detect_rows(x_hat, det, noise_var, sys.n_antennas, sys.n_pilot, sys.guard);
  out.detected_rows = d.rows;
  out.detected_pilots = d.sequences;
  const CVector pilots = CVector::Constant(sys.n_pilot, Complex(1.0, 0.0));
  out.channels = estimate_channels(x_hat, d.rows, pilots, sys.n_antennas);
  const QamConstellation qam(sys.modulation_order);
  const double scale = x_hat.rows() > 0 ? x_hat.rowwise().norm().maxCoeff() : 0.0;
  const double slot_tau =
      det.row_threshold(noise_var, sys.n_antennas, sys.n_pilot, scale) / std::sqrt(static_cast<double>(sys.n_pilot));
  out.data = recover_data(x_hat, out.channels, sys.n_antennas, sys.n_pilot, sys.max_data, qam, slot_tau);
  const Eigen::Index pilot_cols = static_cast<Eigen::Index>(sys.n_antennas) * sys.n_pilot;
  out.u_hat = CMatrix::Zero(x_hat.rows(), pilot_cols);
  for (int row : d.rows) out.u_hat.row(row) = x_hat.block(row, 0, 1, pilot_cols);
  return out;
}

SetScores score_sets(const IndexSet& truth, const IndexSet& detected) {
  IndexSet common;
  std::set_intersection(truth.begin(), truth.end(), detected.begin(), detected.end(), std::back_inserter(common));
  const double inter = static_cast<double>(common.size());
  SetScores s;
  // Empty sets: nothing to miss / nothing falsely claimed.
  s.mu_p = truth.empty() ? (detected.empty() ? 1.0 : 0.0) : inter / static_cast<double>(truth.size());
  s.mu_r = detected.empty() ? (truth.empty() ? 1.0 : 0.0) : inter / static_cast<double>(detected.size());
  s.f1 = s.mu_p + s.mu_r > 0.0 ? 2.0 * s.mu_p * s.mu_r / (s.mu_p + s.mu_r) : 0.0;
  return s;
}

double nmse_db(const CMatrix& estimate, const CMatrix& truth) {
  const double err = (estimate - truth).squaredNorm();
  const double ref = truth.squaredNorm();
  if (err == 0.0) return kNmseFloorDb;
  if (ref == 0.0) return kNmseCeilDb;
  return std::clamp(10.0 * std::log10(err / ref), kNmseFloorDb, kNmseCeilDb);
}

MetricsReport evaluate(const TransmissionRealization& real, const ReceiverOutput& out) {
  const SystemConfig& cfg = real.config;
  const SupportTruth truth = ground_truth_support(real);
  MetricsReport m;
  m.n_active = static_cast<int>(real.users.size());

  const SetScores s = score_sets(truth.sequences, out.detected_pilots);
  m.mu_p = s.mu_p;
  m.mu_r = s.mu_r;
  m.f1 = s.f1;

  IndexSet tmp;
  std::set_difference(truth.sequences.begin(), truth.sequences.end(), out.detected_pilots.begin(),
                      out.detected_pilots.end(), std::back_inserter(tmp));
  m.misdetections = static_cast<int>(tmp.size());
  tmp.clear();
  std::set_difference(out.detected_pilots.begin(), out.detected_pilots.end(), truth.sequences.begin(),
                      truth.sequences.end(), std::back_inserter(tmp));
  m.false_alarms = static_cast<int>(tmp.size());
  tmp.clear();
  std::set_difference(truth.rows.begin(), truth.rows.end(), out.detected_rows.begin(), out.detected_rows.end(),
                      std::back_inserter(tmp));
  m.row_misses = static_cast<int>(tmp.size());
  tmp.clear();
  std::set_difference(out.detected_rows.begin(), out.detected_rows.end(), truth.rows.begin(), truth.rows.end(),
                      std::back_inserter(tmp));
  m.row_false_alarms = static_cast<int>(tmp.size());

  const Eigen::Index pilot_cols = static_cast<Eigen::Index>(cfg.n_antennas) * cfg.n_pilot;
  const CMatrix u = real.x_true.leftCols(pilot_cols);
  if (out.u_hat.rows() == u.rows() && out.u_hat.cols() == u.cols()) {
    m.nmse_db = nmse_db(out.u_hat, u);
  } else {
    throw DimensionError("evaluate: receiver pilot block has the wrong shape");
  }

  std::vector<int> row_users;
  for (const auto& u_k : real.users) row_users.push_back(real.row_of(u_k));
  for (const auto& u_k : real.users) {
    const int row = real.row_of(u_k);
    if (std::count(row_users.begin(), row_users.end(), row) > 1) ++m.collisions;
    auto it = std::lower_bound(out.detected_rows.begin(), out.detected_rows.end(), row);
    if (it == out.detected_rows.end() || *it != row) continue;
    const DataDecision& dec = out.data[static_cast<std::size_t>(it - out.detected_rows.begin())];
    if (dec.undecodable) continue;
    bool ok = true;
    for (int s_idx = 0; s_idx < cfg.max_data && ok; ++s_idx) {
      const int want = s_idx < u_k.data_len ? u_k.data_index[static_cast<std::size_t>(s_idx)] : kNoSymbol;
      ok = dec.symbols[static_cast<std::size_t>(s_idx)] == want;
    }
    if (ok) ++m.users_recovered;
  }
  if (m.n_active == 0) {
    m.empty_active_set = true;
    m.mu_data = 1.0;
  } else {
    m.mu_data = static_cast<double>(m.users_recovered) / m.n_active;
  }
  return m;
}

}  // namespace gfra
