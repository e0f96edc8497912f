#include "gfra/learned_recovery.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include "gfra/rng.hpp"

namespace gfra {

std::string to_string(LampVariant v) { return v == LampVariant::kMmv ? "mmv" : "bp"; }

LampVariant parse_variant(const std::string& s) {
  if (s == "mmv" || s == "lamp" || s == "lamp_mmv") return LampVariant::kMmv;
  if (s == "bp" || s == "lamp_bp") return LampVariant::kBp;
  throw ConfigError("variant: expected mmv or bp, got '" + s + "'");
}

const CMatrix& LampParams::weight(int subnetwork) const {
  return shared_weight ? weights.at(0) : weights.at(static_cast<std::size_t>(subnetwork));
}

CMatrix& LampParams::weight(int subnetwork) {
  return shared_weight ? weights.at(0) : weights.at(static_cast<std::size_t>(subnetwork));
}

void LampParams::validate_for(const ExpandedDictionary& dict) const {
  const int expected_subnets = variant == LampVariant::kMmv ? 1 : n_slots;
  if (n_subnetworks() != expected_subnets) {
    throw DimensionError("LAMP params: expected " + std::to_string(expected_subnets) + " subnetworks, have " +
                         std::to_string(n_subnetworks()));
  }
  const std::size_t n_weights = shared_weight ? 1 : static_cast<std::size_t>(expected_subnets);
  if (weights.size() != n_weights) throw DimensionError("LAMP params: wrong number of weight matrices");
  for (const auto& w : weights) {
    if (w.rows() != dict.n_atoms() || w.cols() != dict.n_rows()) {
      throw DimensionError("LAMP params: weight is " + std::to_string(w.rows()) + "x" + std::to_string(w.cols()) +
                           ", dictionary transpose is " + std::to_string(dict.n_atoms()) + "x" +
                           std::to_string(dict.n_rows()));
    }
  }
  for (const auto& a : alphas) {
    if (static_cast<int>(a.size()) != n_layers) throw DimensionError("LAMP params: alpha count != n_layers");
    for (double v : a) {
      if (!(v > 0.0) || !std::isfinite(v)) throw ConfigError("LAMP params: alphas must be positive");
    }
  }
}

bool operator==(const LampParams& a, const LampParams& b) {
  if (a.variant != b.variant || a.n_antennas != b.n_antennas || a.n_slots != b.n_slots || a.n_layers != b.n_layers ||
      a.shared_weight != b.shared_weight || a.dict_hash != b.dict_hash || a.alphas != b.alphas ||
      a.weights.size() != b.weights.size() || a.unroll.delta != b.unroll.delta ||
      a.unroll.delta_scale != b.unroll.delta_scale || a.unroll.l0_mode != b.unroll.l0_mode ||
      a.unroll.first_stage_onsager != b.unroll.first_stage_onsager) {
    return false;
  }
  for (std::size_t k = 0; k < a.weights.size(); ++k) {
    const auto& wa = a.weights[k];
    const auto& wb = b.weights[k];
    if (wa.rows() != wb.rows() || wa.cols() != wb.cols()) return false;
    if (std::memcmp(wa.data(), wb.data(), sizeof(Complex) * static_cast<std::size_t>(wa.size())) != 0) return false;
  }
  return true;
}

LampParams init_from_amp(const ExpandedDictionary& dict, const AmpConfig& amp, LampVariant variant, int n_antennas,
                         int n_slots, int n_layers, bool shared_weight) {
  amp.validate();
  if (n_layers < 1) throw ConfigError("n_layers: must be >= 1");
  if (n_antennas < 1 || n_slots < 1) throw ConfigError("n_antennas and n_slots must be >= 1");
  LampParams p;
  p.variant = variant;
  p.n_antennas = n_antennas;
  p.n_slots = n_slots;
  p.n_layers = n_layers;
  p.unroll = amp.unroll;
  p.dict_hash = dict.content_hash();
  const int subnets = variant == LampVariant::kMmv ? 1 : n_slots;
  p.shared_weight = variant == LampVariant::kMmv ? true : shared_weight;
  const CMatrix w = dict.matrix().adjoint();
  p.weights.assign(p.shared_weight ? 1 : static_cast<std::size_t>(subnets), w);
  for (int s = 0; s < subnets; ++s) {
    std::vector<double> a(static_cast<std::size_t>(n_layers));
    for (int t = 0; t < n_layers; ++t) a[static_cast<std::size_t>(t)] = amp.alpha_at(variant == LampVariant::kMmv ? 0 : s, t);
    p.alphas.push_back(std::move(a));
  }
  return p;
}

RecoveryResult lamp_mmv_forward(const CMatrix& y, const ExpandedDictionary& dict, const LampParams& params) {
  params.validate_for(dict);
  if (params.variant != LampVariant::kMmv) throw ConfigError("lamp_mmv_forward: params are for LAMP-BP");
  if (y.rows() != dict.n_rows()) throw DimensionError("lamp_mmv_forward: observation row count mismatch");
  core::StageProblem p;
  p.dict = &dict.matrix();
  p.weight = &params.weight(0);
  p.width = static_cast<int>(y.cols());
  p.alphas = params.alphas[0];
  p.l0_mode = params.unroll.l0_mode;
  core::StageResult out = core::run_stage(p, y, CMatrix::Zero(dict.n_atoms(), y.cols()));
  RecoveryResult r;
  r.x_hat = std::move(out.x);
  r.residual_norms = std::move(out.residual_norms);
  r.stage_iterations.push_back(out.layers_run);
  return r;
}

RecoveryResult lamp_bp_forward(const CMatrix& y, const ExpandedDictionary& dict, const LampParams& params,
                               int n_antennas, int n_slots) {
  params.validate_for(dict);
  if (params.variant != LampVariant::kBp) throw ConfigError("lamp_bp_forward: params are for LAMP-MMV");
  if (params.n_slots != n_slots || params.n_antennas != n_antennas) {
    throw DimensionError("lamp_bp_forward: params were built for R=" + std::to_string(params.n_antennas) +
                         ", L=" + std::to_string(params.n_slots));
  }
  return core::backward_sweep(
      y, dict, n_antennas, n_slots, params.unroll, 0.0,
      [&](int first) -> const CMatrix& { return params.weight(first); },
      [&](int first) -> const std::vector<double>& { return params.alphas[static_cast<std::size_t>(first)]; });
}

CMatrix SparseRows::dense() const {
  CMatrix x = CMatrix::Zero(n_rows, values.cols());
  for (std::size_t k = 0; k < rows.size(); ++k) x.row(rows[k]) = values.row(static_cast<Eigen::Index>(k));
  return x;
}

SparseRows SparseRows::from_dense(const CMatrix& x) {
  SparseRows s;
  s.n_rows = x.rows();
  for (Eigen::Index j = 0; j < x.rows(); ++j) {
    if (x.row(j).squaredNorm() > 0.0) s.rows.push_back(static_cast<int>(j));
  }
  s.values.resize(static_cast<Eigen::Index>(s.rows.size()), x.cols());
  for (std::size_t k = 0; k < s.rows.size(); ++k) s.values.row(static_cast<Eigen::Index>(k)) = x.row(s.rows[k]);
  return s;
}

Dataset generate_dataset(const SystemConfig& cfg, const ExpandedDictionary& dict, std::size_t count,
                         std::uint64_t seed, int min_active) {
  cfg.validate();
  if (count < 1) throw ConfigError("dataset count must be >= 1");
  if (dict.n_rows() != cfg.n_rows() || dict.n_atoms() != cfg.n_atoms()) {
    throw DimensionError("generate_dataset: dictionary does not match config");
  }
  Dataset d;
  d.config = cfg;
  d.seed = seed;
  d.dict_hash = dict.content_hash();
  d.y.reserve(count);
  d.x.reserve(count);
  d.noise_var.reserve(count);
  const bool mixed = min_active >= 0 && min_active < cfg.n_active;
  Rng load_rng(derive_seed(seed, Stream::kDataset, ~std::uint64_t{0}));
  SystemConfig pair_cfg = cfg;
  for (std::size_t q = 0; q < count; ++q) {
    if (mixed) pair_cfg.n_active = load_rng.uniform_int(min_active, cfg.n_active);
    const auto real = draw_realization(pair_cfg, derive_seed(seed, Stream::kDataset, 2 * q));
    auto obs = synthesize_observation(real, dict, cfg.snr_db, derive_seed(seed, Stream::kDataset, 2 * q + 1));
    d.y.push_back(std::move(obs.y));
    d.x.push_back(SparseRows::from_dense(real.x_true));
    d.noise_var.push_back(obs.noise_var);
  }
  return d;
}

void TrainConfig::validate() const {
  if (batch_size < 1) throw ConfigError("batch_size: must be >= 1");
  if (!(lr_floor > 0.0) || lr_floor > lr_initial) throw ConfigError("lr_floor: must satisfy 0 < lr_floor <= lr_initial");
  if (!(lr_decay_factor > 0.0 && lr_decay_factor < 1.0)) throw ConfigError("lr_decay_factor: must be in (0, 1)");
  if (max_steps_per_stage < 0) throw ConfigError("max_steps_per_stage: must be >= 0");
  if (!(validation_fraction > 0.0 && validation_fraction < 1.0)) throw ConfigError("validation_fraction: must be in (0, 1)");
  if (eval_every < 1 || plateau_window < 1 || chunk_size < 1) throw ConfigError("eval_every, plateau_window, chunk_size must be >= 1");
}

namespace {

// Input of one subnetwork for every sample: LS initialization restricted to
// the prior support, plus the support itself (the row mask).
struct StageInputs {
  std::vector<SparseRows> x0;
  std::vector<IndexSet> support;
  bool has_prior = false;
};

int stage_width(const LampParams& p, int first) {
  return p.variant == LampVariant::kMmv ? p.n_antennas * p.n_slots : p.n_antennas * (p.n_slots - first);
}

int first_subnetwork(const LampParams& p) { return p.variant == LampVariant::kMmv ? 0 : p.n_slots - 1; }

core::StageProblem make_problem(const ExpandedDictionary& dict, const LampParams& params, int first, int n_samples,
                                const std::vector<RowMask>* masks) {
  core::StageProblem p;
  p.dict = &dict.matrix();
  p.weight = &params.weight(first);
  p.width = stage_width(params, first);
  p.n_samples = n_samples;
  p.alphas = params.alphas[static_cast<std::size_t>(first)];
  p.onsager = params.variant == LampVariant::kMmv || first < params.n_slots - 1 || params.unroll.first_stage_onsager;
  p.l0_mode = params.unroll.l0_mode;
  p.masks = masks;
  return p;
}

struct Chunk {
  CMatrix y;
  CMatrix x0;
  CMatrix target;
  std::vector<RowMask> masks;
};

Chunk build_chunk(const Dataset& data, const std::vector<std::size_t>& idx, std::size_t begin, std::size_t end,
                  const ExpandedDictionary& dict, const LampParams& params, int first, const StageInputs& in) {
  const int w = stage_width(params, first);
  const Eigen::Index n = static_cast<Eigen::Index>(end - begin);
  Chunk c;
  c.y.resize(dict.n_rows(), n * w);
  c.x0 = CMatrix::Zero(dict.n_atoms(), n * w);
  c.target = CMatrix::Zero(dict.n_atoms(), n * w);
  if (in.has_prior) c.masks.resize(static_cast<std::size_t>(n));
  for (Eigen::Index k = 0; k < n; ++k) {
    const std::size_t q = idx[begin + static_cast<std::size_t>(k)];
    c.y.middleCols(k * w, w) = data.y[q].rightCols(w);
    const SparseRows& xs = data.x[q];
    for (std::size_t r = 0; r < xs.rows.size(); ++r) {
      c.target.block(xs.rows[r], k * w, 1, w) = xs.values.block(static_cast<Eigen::Index>(r), xs.values.cols() - w, 1, w);
    }
    if (in.has_prior) {
      const SparseRows& x0 = in.x0[q];
      for (std::size_t r = 0; r < x0.rows.size(); ++r) {
        c.x0.block(x0.rows[r], k * w, 1, w) = x0.values.row(static_cast<Eigen::Index>(r));
      }
      RowMask mask(static_cast<std::size_t>(dict.n_atoms()), 0);
      for (int j : in.support[q]) mask[static_cast<std::size_t>(j)] = 1;
      c.masks[static_cast<std::size_t>(k)] = std::move(mask);
    }
  }
  return c;
}

double target_energy(const Dataset& data, const std::vector<std::size_t>& idx, int width) {
  double e = 0.0;
  for (std::size_t q : idx) e += data.x[q].values.rightCols(width).squaredNorm();
  return e;
}

// Loss (and optionally gradient) over `idx`, processed in chunks.
LossGradient loss_and_gradient(const Dataset& data, const std::vector<std::size_t>& idx, const ExpandedDictionary& dict,
                               const LampParams& params, int first, const StageInputs& in, bool want_grad,
                               bool want_weight, int chunk_size) {
  const int w = stage_width(params, first);
  double denom = target_energy(data, idx, w);
  if (denom <= 0.0) denom = 1.0;
  LossGradient out;
  RVector g_alpha = RVector::Zero(params.n_layers);
  if (want_grad && want_weight) out.weight = CMatrix::Zero(dict.n_atoms(), dict.n_rows());
  double err = 0.0;
  for (std::size_t b = 0; b < idx.size(); b += static_cast<std::size_t>(chunk_size)) {
    const std::size_t e = std::min(idx.size(), b + static_cast<std::size_t>(chunk_size));
    Chunk c = build_chunk(data, idx, b, e, dict, params, first, in);
    const auto p = make_problem(dict, params, first, static_cast<int>(e - b), in.has_prior ? &c.masks : nullptr);
    core::StageTrace trace;
    core::StageResult r = core::run_stage(p, c.y, std::move(c.x0), want_grad ? &trace : nullptr);
    const CMatrix diff = r.x - c.target;
    err += diff.squaredNorm();
    if (want_grad) {
      const core::StageGradients g = core::backprop_stage(p, trace, (2.0 / denom) * diff, want_weight);
      g_alpha += g.alpha;
      if (want_weight) out.weight += g.weight;
    }
  }
  out.loss = err / denom;
  if (want_grad) {
    const auto& a = params.alphas[static_cast<std::size_t>(first)];
    out.log_alpha.resize(params.n_layers);
    for (int t = 0; t < params.n_layers; ++t) out.log_alpha(t) = g_alpha(t) * a[static_cast<std::size_t>(t)];
  }
  return out;
}

// Runs subnetwork `first` on every sample in `idx` and derives the inputs of
// subnetwork first-1, mirroring core::backward_sweep.
void advance_inputs(const Dataset& data, const std::vector<std::size_t>& idx, const ExpandedDictionary& dict,
                    const LampParams& params, int first, StageInputs& in) {
  const int w = stage_width(params, first);
  const int w_next = w + params.n_antennas;
  StageInputs next;
  next.has_prior = true;
  next.x0.resize(data.size());
  next.support.resize(data.size());
  for (std::size_t q : idx) {
    const std::vector<std::size_t> one{q};
    Chunk c = build_chunk(data, one, 0, 1, dict, params, first, in);
    const auto p = make_problem(dict, params, first, 1, in.has_prior ? &c.masks : nullptr);
    core::StageResult r = core::run_stage(p, c.y, std::move(c.x0));
    const double delta = support_threshold(params.unroll, r.pseudo);
    IndexSet support = extract_support(r.x, delta);
    const CMatrix x0 = ls_reinitialize(dict, support, data.y[q].rightCols(w_next));
    next.x0[q] = SparseRows::from_dense(x0);
    // Rows in the support with an exactly-zero LS fit still belong to the mask.
    next.support[q] = std::move(support);
  }
  in = std::move(next);
}

StageInputs inputs_for(const Dataset& data, const std::vector<std::size_t>& idx, const ExpandedDictionary& dict,
                       const LampParams& params, int subnetwork) {
  StageInputs in;
  in.x0.resize(data.size());
  in.support.resize(data.size());
  for (int first = first_subnetwork(params); first > subnetwork; --first) advance_inputs(data, idx, dict, params, first, in);
  return in;
}

}  // namespace

LossGradient subnetwork_loss(const Dataset& data, const std::vector<std::size_t>& batch, const ExpandedDictionary& dict,
                             const LampParams& params, int subnetwork, bool want_weight) {
  params.validate_for(dict);
  const StageInputs in = inputs_for(data, batch, dict, params, subnetwork);
  return loss_and_gradient(data, batch, dict, params, subnetwork, in, true, want_weight, 250);
}

TrainResult train_lamp(const Dataset& data, const ExpandedDictionary& dict, const LampParams& init,
                       const TrainConfig& tcfg, LampVariant variant, const TrainLogger& log) {
  tcfg.validate();
  init.validate_for(dict);
  if (init.variant != variant) throw ConfigError("train_lamp: init params are for variant " + to_string(init.variant));
  if (data.dict_hash != dict.content_hash()) throw ConfigError("train_lamp: dataset was generated for another dictionary");

  TrainResult result;
  result.params = init;
  if (tcfg.max_steps_per_stage == 0 || data.size() == 0) return result;

  // Shuffled split into training and validation indices.
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(tcfg.seed, Stream::kTraining));
  std::shuffle(order.begin(), order.end(), rng.engine());
  std::size_t n_val = static_cast<std::size_t>(std::llround(tcfg.validation_fraction * static_cast<double>(data.size())));
  n_val = std::clamp<std::size_t>(n_val, 1, std::max<std::size_t>(1, data.size() - 1));
  if (data.size() == 1) n_val = 0;
  std::vector<std::size_t> val(order.end() - static_cast<std::ptrdiff_t>(n_val), order.end());
  std::vector<std::size_t> train(order.begin(), order.end() - static_cast<std::ptrdiff_t>(n_val));
  if (val.empty()) val = train;
  std::vector<std::size_t> all(data.size());
  std::iota(all.begin(), all.end(), 0);

  LampParams& params = result.params;
  StageInputs in;
  in.x0.resize(data.size());
  in.support.resize(data.size());

  int global_step = 0;
  const int top = first_subnetwork(params);
  for (int first = top; first >= 0; --first) {
    // A shared weight is learned with the first subnetwork and frozen after,
    // so earlier subnetworks keep their outputs.
    const bool train_weight = !params.shared_weight || first == top;
    auto val_loss = [&]() {
      return loss_and_gradient(data, val, dict, params, first, in, false, false, tcfg.chunk_size).loss;
    };

    double best = val_loss();
    LampParams best_params = params;
    CurvePoint start{first, global_step, tcfg.lr_initial, best, best};
    result.curve.push_back(start);
    if (log) log(start);

    std::size_t cursor = train.size();
    double lr = tcfg.lr_initial;
    while (lr >= tcfg.lr_floor * (1.0 - 1e-9)) {
      int steps = 0;
      int stale = 0;
      double train_acc = 0.0;
      int train_n = 0;
      while (steps < tcfg.max_steps_per_stage) {
        if (cursor + static_cast<std::size_t>(tcfg.batch_size) > train.size()) {
          std::shuffle(train.begin(), train.end(), rng.engine());
          cursor = 0;
        }
        const std::size_t take = std::min(train.size(), static_cast<std::size_t>(tcfg.batch_size));
        std::vector<std::size_t> batch(train.begin() + static_cast<std::ptrdiff_t>(cursor),
                                       train.begin() + static_cast<std::ptrdiff_t>(cursor + take));
        cursor += take;

        LossGradient lg;
        bool finite = true;
        try {
          lg = loss_and_gradient(data, batch, dict, params, first, in, true, train_weight, tcfg.chunk_size);
          finite = std::isfinite(lg.loss) && lg.log_alpha.allFinite() && (!train_weight || lg.weight.allFinite());
        } catch (const NumericalError&) {
          finite = false;
        }
        if (!finite) {
          params = best_params;
          result.diverged = true;
          result.message = "non-finite loss in subnetwork " + std::to_string(first) + " at step " +
                           std::to_string(global_step) + "; returning last finite checkpoint";
          result.stage_snapshots.push_back(params);
          return result;
        }
        train_acc += lg.loss;
        ++train_n;

        if (train_weight) params.weight(first) -= lr * lg.weight;
        auto& a = params.alphas[static_cast<std::size_t>(first)];
        for (int t = 0; t < params.n_layers; ++t) {
          a[static_cast<std::size_t>(t)] = std::exp(std::log(a[static_cast<std::size_t>(t)]) - lr * lg.log_alpha(t));
        }
        ++steps;
        ++global_step;

        if (steps % tcfg.eval_every == 0) {
          double v = std::numeric_limits<double>::infinity();
          try {
            v = val_loss();
          } catch (const NumericalError&) {
          }
          CurvePoint pt{first, global_step, lr, train_acc / train_n, v};
          train_acc = 0.0;
          train_n = 0;
          result.curve.push_back(pt);
          if (log) log(pt);
          if (!std::isfinite(v)) {
            params = best_params;
            result.diverged = true;
            result.message = "non-finite validation loss in subnetwork " + std::to_string(first);
            result.stage_snapshots.push_back(params);
            return result;
          }
          if (v < best * (1.0 - tcfg.plateau_rel_improvement)) {
            best = v;
            best_params = params;
            stale = 0;
          } else if (++stale >= tcfg.plateau_window) {
            break;
          }
        }
      }
      // Keep the best checkpoint seen at this learning rate.
      if (steps % tcfg.eval_every != 0) {
        const double v = val_loss();
        if (v < best) {
          best = v;
          best_params = params;
        }
      }
      params = best_params;
      lr *= tcfg.lr_decay_factor;
    }
    result.stage_snapshots.push_back(params);
    if (first > 0) advance_inputs(data, all, dict, params, first, in);
  }
  return result;
}

namespace {

constexpr const char* kMagic = "GFRA-LAMP";
constexpr int kFormatVersion = 1;

}  // namespace

void save_params(const LampParams& params, const std::string& path) {
  if (path.empty()) throw std::runtime_error("save_params: empty path");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("save_params: cannot open '" + path + "' for writing");
  const CMatrix& w0 = params.weights.at(0);
  os << kMagic << ' ' << kFormatVersion << '\n';
  os << "variant " << to_string(params.variant) << '\n';
  os << "n_antennas " << params.n_antennas << '\n';
  os << "n_slots " << params.n_slots << '\n';
  os << "n_layers " << params.n_layers << '\n';
  os << "n_subnetworks " << params.n_subnetworks() << '\n';
  os << "shared_weight " << (params.shared_weight ? 1 : 0) << '\n';
  os << "n_weights " << params.weights.size() << '\n';
  os << "weight_shape " << w0.rows() << ' ' << w0.cols() << '\n';
  char hash[32];
  std::snprintf(hash, sizeof(hash), "%016llx", static_cast<unsigned long long>(params.dict_hash));
  os << "dict_hash " << hash << '\n';
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", params.unroll.delta);
  os << "delta " << buf << '\n';
  std::snprintf(buf, sizeof(buf), "%.17g", params.unroll.delta_scale);
  os << "delta_scale " << buf << '\n';
  os << "l0_mode " << (params.unroll.l0_mode == L0Mode::kEntries ? "entries" : "rows") << '\n';
  os << "first_stage_onsager " << (params.unroll.first_stage_onsager ? 1 : 0) << '\n';
  os << "layout row-major complex128 weights then float64 alphas[subnetwork][layer]\n";
  os << "end\n";
  for (const auto& w : params.weights) {
    for (Eigen::Index r = 0; r < w.rows(); ++r) {
      for (Eigen::Index c = 0; c < w.cols(); ++c) {
        const double v[2] = {w(r, c).real(), w(r, c).imag()};
        os.write(reinterpret_cast<const char*>(v), sizeof(v));
      }
    }
  }
  for (const auto& a : params.alphas) os.write(reinterpret_cast<const char*>(a.data()), static_cast<std::streamsize>(sizeof(double) * a.size()));
  if (!os) throw std::runtime_error("save_params: write failed for '" + path + "'");
}

LampParams load_params(const std::string& path, const ExpandedDictionary* expected) {
  if (path.empty()) throw std::runtime_error("load_params: empty path");
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("load_params: cannot open '" + path + "'");
  std::string magic;
  int version = 0;
  is >> magic >> version;
  if (magic != kMagic || version != kFormatVersion) throw std::runtime_error("load_params: '" + path + "' is not a LAMP parameter file");
  LampParams p;
  int n_subnets = 0;
  std::size_t n_weights = 0;
  Eigen::Index rows = 0, cols = 0;
  std::string line;
  std::getline(is, line);
  while (std::getline(is, line)) {
    if (line == "end") break;
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (key == "variant") {
      std::string v;
      ls >> v;
      p.variant = parse_variant(v);
    } else if (key == "n_antennas") {
      ls >> p.n_antennas;
    } else if (key == "n_slots") {
      ls >> p.n_slots;
    } else if (key == "n_layers") {
      ls >> p.n_layers;
    } else if (key == "n_subnetworks") {
      ls >> n_subnets;
    } else if (key == "shared_weight") {
      int v = 0;
      ls >> v;
      p.shared_weight = v != 0;
    } else if (key == "n_weights") {
      ls >> n_weights;
    } else if (key == "weight_shape") {
      ls >> rows >> cols;
    } else if (key == "dict_hash") {
      std::string h;
      ls >> h;
      p.dict_hash = std::stoull(h, nullptr, 16);
    } else if (key == "delta") {
      std::string v;
      ls >> v;
      p.unroll.delta = std::stod(v);
    } else if (key == "delta_scale") {
      std::string v;
      ls >> v;
      p.unroll.delta_scale = std::stod(v);
    } else if (key == "l0_mode") {
      std::string v;
      ls >> v;
      p.unroll.l0_mode = v == "rows" ? L0Mode::kRows : L0Mode::kEntries;
    } else if (key == "first_stage_onsager") {
      int v = 1;
      ls >> v;
      p.unroll.first_stage_onsager = v != 0;
    }
  }
  if (line != "end" || n_subnets < 1 || n_weights < 1 || rows < 1 || cols < 1 || p.n_layers < 1) {
    throw std::runtime_error("load_params: malformed header in '" + path + "'");
  }
  p.weights.assign(n_weights, CMatrix(rows, cols));
  for (auto& w : p.weights) {
    for (Eigen::Index r = 0; r < rows; ++r) {
      for (Eigen::Index c = 0; c < cols; ++c) {
        double v[2];
        is.read(reinterpret_cast<char*>(v), sizeof(v));
        w(r, c) = Complex(v[0], v[1]);
      }
    }
  }
  p.alphas.assign(static_cast<std::size_t>(n_subnets), std::vector<double>(static_cast<std::size_t>(p.n_layers)));
  for (auto& a : p.alphas) is.read(reinterpret_cast<char*>(a.data()), static_cast<std::streamsize>(sizeof(double) * a.size()));
  if (!is) throw std::runtime_error("load_params: truncated payload in '" + path + "'");
  if (expected != nullptr && expected->content_hash() != p.dict_hash) {
    char a[32], b[32];
    std::snprintf(a, sizeof(a), "%016llx", static_cast<unsigned long long>(p.dict_hash));
    std::snprintf(b, sizeof(b), "%016llx", static_cast<unsigned long long>(expected->content_hash()));
    throw ConfigError(std::string("load_params: dictionary hash mismatch (file ") + a + ", dictionary " + b + ")");
  }
  if (expected != nullptr) p.validate_for(*expected);
  return p;
}

}  // namespace gfra
