#include "gfra/system_model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "gfra/rng.hpp"

namespace gfra {

namespace {

void require(bool ok, const std::string& field, const std::string& what) {
  if (!ok) throw ConfigError(field + ": " + what);
}

}  // namespace

void SystemConfig::validate() const {
  require(n_users >= 1, "n_users", "must be >= 1");
  require(n_sequences >= 1, "n_sequences", "must be >= 1");
  require(seq_len >= 1, "seq_len", "must be >= 1");
  require(guard >= 0, "guard", "must be >= 0");
  require(max_delay >= 0, "max_delay", "must be >= 0");
  require(max_delay <= guard, "max_delay", "must not exceed guard");
  require(n_pilot >= 1, "n_pilot", "must be >= 1");
  require(max_data >= 1, "max_data", "must be >= 1");
  require(n_antennas >= 1, "n_antennas", "must be >= 1");
  require(n_active >= 0, "n_active", "must be >= 0");
  require(n_active <= n_users, "n_active", "must not exceed n_users");
  require(!std::isnan(snr_db), "snr_db", "must be a number");
  require(path_loss_default > 0.0 && std::isfinite(path_loss_default), "path_loss_default", "must be positive");
  require(modulation_order >= 4 && is_perfect_square(modulation_order), "modulation_order",
          "must be a perfect square >= 4");
  for (const auto& [user, loss] : path_loss) {
    require(user >= 0 && user < n_users, "path_loss", "user id out of range");
    require(loss > 0.0 && std::isfinite(loss), "path_loss", "must be positive");
  }
}

double SystemConfig::user_path_loss(int user) const {
  auto it = path_loss.find(user);
  return it == path_loss.end() ? path_loss_default : it->second;
}

SpreadingPool::SpreadingPool(CMatrix columns) : columns_(std::move(columns)) {}

ExpandedDictionary::ExpandedDictionary(CMatrix columns, int n_sequences, int guard)
    : columns_(std::move(columns)), n_sequences_(n_sequences), guard_(guard), hash_(hash_matrix(columns_)) {}

SpreadingPool build_spreading_pool(const SystemConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  CMatrix s(cfg.seq_len, cfg.n_sequences);
  for (Eigen::Index c = 0; c < s.cols(); ++c) {
    for (Eigen::Index r = 0; r < s.rows(); ++r) s(r, c) = rng.complex_normal();
    const double n = s.col(c).norm();
    // A zero column has probability zero; redraw its first entry if it happens.
    if (n == 0.0) {
      s(0, c) = 1.0;
    } else {
      s.col(c) /= n;
    }
  }
  return SpreadingPool(std::move(s));
}

ExpandedDictionary expand_dictionary(const SpreadingPool& pool, int guard) {
  if (guard < 0) throw ConfigError("guard: must be >= 0");
  const int ls = pool.seq_len();
  const int m = pool.n_sequences();
  CMatrix d = CMatrix::Zero(ls + guard, static_cast<Eigen::Index>(m) * (guard + 1));
  for (int seq = 0; seq < m; ++seq) {
    for (int t = 0; t <= guard; ++t) {
      d.block(t, seq * (guard + 1) + t, ls, 1) = pool.matrix().col(seq);
    }
  }
  return ExpandedDictionary(std::move(d), m, guard);
}

CMatrix assemble_x(const SystemConfig& cfg, const std::vector<ActiveUser>& users, const CVector& pilot_symbols) {
  const int r_ant = cfg.n_antennas;
  CMatrix x = CMatrix::Zero(cfg.n_atoms(), cfg.n_columns());
  for (const auto& u : users) {
    const int row = u.sequence * (cfg.guard + 1) + u.delay;
    for (int slot = 0; slot < cfg.n_slots(); ++slot) {
      const Complex sym = slot < cfg.n_pilot ? pilot_symbols(slot) : u.data_symbols(slot - cfg.n_pilot);
      if (sym == Complex(0.0)) continue;
      for (int a = 0; a < r_ant; ++a) x(row, slot * r_ant + a) += u.channel(a) * sym;
    }
  }
  return x;
}

TransmissionRealization draw_realization(const SystemConfig& cfg, const SpreadingPool& pool, std::uint64_t seed) {
  if (pool.n_sequences() != cfg.n_sequences || pool.seq_len() != cfg.seq_len) {
    throw DimensionError("draw_realization: pool shape does not match config");
  }
  return draw_realization(cfg, seed);
}

TransmissionRealization draw_realization(const SystemConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  const QamConstellation qam(cfg.modulation_order);

  TransmissionRealization real;
  real.config = cfg;
  real.seed = seed;
  real.pilot_symbols = CVector::Constant(cfg.n_pilot, Complex(1.0, 0.0));

  // Partial Fisher-Yates: first n_active entries form a uniform subset.
  std::vector<int> ids(static_cast<std::size_t>(cfg.n_users));
  std::iota(ids.begin(), ids.end(), 0);
  for (int k = 0; k < cfg.n_active; ++k) {
    const int j = rng.uniform_int(k, cfg.n_users - 1);
    std::swap(ids[static_cast<std::size_t>(k)], ids[static_cast<std::size_t>(j)]);
  }
  ids.resize(static_cast<std::size_t>(cfg.n_active));
  std::sort(ids.begin(), ids.end());

  for (int id : ids) {
    ActiveUser u;
    u.id = id;
    u.sequence = rng.uniform_int(0, cfg.n_sequences - 1);
    u.delay = rng.uniform_int(0, cfg.max_delay);
    u.channel.resize(cfg.n_antennas);
    const double loss = cfg.user_path_loss(id);
    for (int a = 0; a < cfg.n_antennas; ++a) u.channel(a) = loss * rng.complex_normal();
    u.data_len = rng.uniform_int(1, cfg.max_data);
    u.data_symbols = CVector::Zero(cfg.max_data);
    for (int s = 0; s < u.data_len; ++s) {
      // First symbol carries the user id (mod constellation size).
      const int idx = s == 0 ? id % qam.order() : rng.uniform_int(0, qam.order() - 1);
      u.data_index.push_back(idx);
      u.data_symbols(s) = qam.point(idx);
    }
    real.users.push_back(std::move(u));
  }
  real.x_true = assemble_x(cfg, real.users, real.pilot_symbols);
  return real;
}

Observation synthesize_observation(const TransmissionRealization& real, const ExpandedDictionary& dict, double snr_db,
                                   std::uint64_t seed) {
  if (dict.n_atoms() != real.x_true.rows()) {
    throw DimensionError("synthesize_observation: dictionary has " + std::to_string(dict.n_atoms()) +
                         " atoms, x_true has " + std::to_string(real.x_true.rows()) + " rows");
  }
  Observation obs;
  obs.noise_seed = seed;
  obs.y = dict.matrix() * real.x_true;
  const double n_samples = static_cast<double>(obs.y.size());
  obs.signal_power = n_samples > 0 ? obs.y.squaredNorm() / n_samples : 0.0;
  if (obs.signal_power == 0.0) {
    obs.zero_signal = true;
    obs.noise_var = 0.0;
    return obs;
  }
  if (std::isinf(snr_db) && snr_db > 0) {
    obs.noise_var = 0.0;
    return obs;
  }
  obs.noise_var = obs.signal_power / std::pow(10.0, snr_db / 10.0);
  Rng rng(seed);
  const double sd = std::sqrt(obs.noise_var);
  for (Eigen::Index c = 0; c < obs.y.cols(); ++c) {
    for (Eigen::Index r = 0; r < obs.y.rows(); ++r) obs.y(r, c) += sd * rng.complex_normal();
  }
  return obs;
}

SupportTruth ground_truth_support(const TransmissionRealization& real) {
  SupportTruth truth;
  for (const auto& u : real.users) {
    truth.rows.push_back(real.row_of(u));
    truth.sequences.push_back(u.sequence);
  }
  for (auto* v : {&truth.rows, &truth.sequences}) {
    std::sort(v->begin(), v->end());
    v->erase(std::unique(v->begin(), v->end()), v->end());
  }
  return truth;
}

}  // namespace gfra
