#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <utility>
#include <vector>

#include "gfra/constellation.hpp"
#include "gfra/types.hpp"

namespace gfra {

// Scenario scalars. Users, sequences, delays and slots are 0-based inside the
// library; file formats and the CLI use the same 0-based ids.
struct SystemConfig {
  int n_users = 1000;         // N
  int n_sequences = 100;      // M
  int seq_len = 70;           // L_s
  int guard = 3;              // T_g, symbols
  int max_delay = 3;          // T_max <= T_g
  int n_pilot = 1;            // L_p
  int max_data = 3;           // L_d
  int n_antennas = 1;         // R
  int n_active = 24;          // N_a
  double snr_db = 30.0;       // +inf means noiseless
  double path_loss_default = 1.0;
  int modulation_order = 16;
  std::map<int, double> path_loss;  // per-user override of path_loss_default

  void validate() const;

  int n_slots() const { return n_pilot + max_data; }              // L
  int n_rows() const { return seq_len + guard; }                  // M~
  int n_atoms() const { return n_sequences * (guard + 1); }       // N~
  int n_columns() const { return n_antennas * n_slots(); }        // R*L
  double user_path_loss(int user) const;
};

class SpreadingPool {
 public:
  explicit SpreadingPool(CMatrix columns);
  const CMatrix& matrix() const { return columns_; }
  int seq_len() const { return static_cast<int>(columns_.rows()); }
  int n_sequences() const { return static_cast<int>(columns_.cols()); }

 private:
  CMatrix columns_;
};

// Delay-expanded dictionary: column m*(guard+1)+t holds sequence m delayed by
// t symbols and zero-padded to seq_len+guard.
class ExpandedDictionary {
 public:
  ExpandedDictionary(CMatrix columns, int n_sequences, int guard);

  const CMatrix& matrix() const { return columns_; }
  int n_rows() const { return static_cast<int>(columns_.rows()); }
  int n_atoms() const { return static_cast<int>(columns_.cols()); }
  int n_sequences() const { return n_sequences_; }
  int guard() const { return guard_; }

  int column_index(int sequence, int delay) const { return sequence * (guard_ + 1) + delay; }
  std::pair<int, int> sequence_delay(int column) const { return {column / (guard_ + 1), column % (guard_ + 1)}; }
  std::uint64_t content_hash() const { return hash_; }

 private:
  CMatrix columns_;
  int n_sequences_;
  int guard_;
  std::uint64_t hash_;
};

struct ActiveUser {
  int id = 0;
  int sequence = 0;
  int delay = 0;
  CVector channel;              // length R
  int data_len = 0;             // in 1..L_d
  std::vector<int> data_index;  // constellation indices, length data_len
  CVector data_symbols;         // length L_d, zero beyond data_len
};

struct TransmissionRealization {
  SystemConfig config;
  std::vector<ActiveUser> users;  // sorted by id
  CVector pilot_symbols;          // length L_p, shared by all users
  // Ñ x R·L, symbol-major: column slot*R + antenna. Slots [0, L_p) are pilot.
  CMatrix x_true;
  std::uint64_t seed = 0;

  int row_of(const ActiveUser& u) const { return u.sequence * (config.guard + 1) + u.delay; }
};

struct Observation {
  CMatrix y;
  double noise_var = 0.0;
  double signal_power = 0.0;
  bool zero_signal = false;  // degenerate realization, noise disabled
  std::uint64_t noise_seed = 0;
};

struct SupportTruth {
  IndexSet rows;       // occupied dictionary rows of x_true
  IndexSet sequences;  // distinct selected sequences
};

SpreadingPool build_spreading_pool(const SystemConfig& cfg, std::uint64_t seed);
ExpandedDictionary expand_dictionary(const SpreadingPool& pool, int guard);
TransmissionRealization draw_realization(const SystemConfig& cfg, const SpreadingPool& pool, std::uint64_t seed);
// Same draw without the pool shape check.
TransmissionRealization draw_realization(const SystemConfig& cfg, std::uint64_t seed);
Observation synthesize_observation(const TransmissionRealization& real, const ExpandedDictionary& dict, double snr_db,
                                   std::uint64_t seed);
SupportTruth ground_truth_support(const TransmissionRealization& real);

// Rebuilds x_true from the user list; draw_realization uses the same routine.
CMatrix assemble_x(const SystemConfig& cfg, const std::vector<ActiveUser>& users, const CVector& pilot_symbols);

// Symbol-major column range of slots [first_slot, n_slots).
inline Eigen::Index slot_column(int slot, int n_antennas) { return static_cast<Eigen::Index>(slot) * n_antennas; }

}  // namespace gfra
