#include "gfra/sparse_recovery.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace gfra {

void AmpConfig::validate() const {
  if (n_iters < 1) throw ConfigError("n_iters: must be >= 1");
  if (alpha.empty()) throw ConfigError("alpha: at least one value required");
  auto check = [](const std::vector<double>& a, const std::string& field) {
    for (double v : a) {
      if (!(v > 0.0) || !std::isfinite(v)) throw ConfigError(field + ": values must be positive");
    }
  };
  check(alpha, "alpha");
  for (const auto& s : stage_alpha) check(s, "stage_alpha");
  if (unroll.delta_scale < 0.0) throw ConfigError("delta_scale: must be >= 0");
  if (stop_tol < 0.0) throw ConfigError("stop_tol: must be >= 0");
}

double AmpConfig::alpha_at(int first_slot, int iter) const {
  const std::vector<double>* sched = &alpha;
  if (first_slot >= 0 && static_cast<std::size_t>(first_slot) < stage_alpha.size() &&
      !stage_alpha[static_cast<std::size_t>(first_slot)].empty()) {
    sched = &stage_alpha[static_cast<std::size_t>(first_slot)];
  }
  const std::size_t k = std::min(static_cast<std::size_t>(iter), sched->size() - 1);
  return (*sched)[k];
}

std::vector<double> AmpConfig::schedule(int first_slot) const {
  std::vector<double> out(static_cast<std::size_t>(n_iters));
  for (int t = 0; t < n_iters; ++t) out[static_cast<std::size_t>(t)] = alpha_at(first_slot, t);
  return out;
}

namespace core {

void threshold_rows_inplace(Eigen::Ref<CMatrix> block, double lambda, const RowMask* mask) {
  for (Eigen::Index j = 0; j < block.rows(); ++j) {
    if (mask != nullptr && (*mask)[static_cast<std::size_t>(j)] != 0) continue;
    const double n = block.row(j).norm();
    if (n > lambda) {
      block.row(j) *= 1.0 - lambda / n;
    } else {
      // Includes n == 0: the formula's limit is the zero row.
      block.row(j).setZero();
    }
  }
}

namespace {

double count_support(const Eigen::Ref<const CMatrix>& x, L0Mode mode) {
  Eigen::Index n = 0;
  if (mode == L0Mode::kEntries) {
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
      for (Eigen::Index r = 0; r < x.rows(); ++r) n += x(r, c) != Complex(0.0) ? 1 : 0;
    }
  } else {
    for (Eigen::Index r = 0; r < x.rows(); ++r) n += x.row(r).squaredNorm() > 0.0 ? 1 : 0;
  }
  return static_cast<double>(n);
}

void check_problem(const StageProblem& p, const CMatrix& y, const CMatrix& x0) {
  const auto& d = *p.dict;
  const auto& w = *p.weight;
  if (w.rows() != d.cols() || w.cols() != d.rows()) throw DimensionError("weight matrix shape does not match dict^H");
  const Eigen::Index cols = static_cast<Eigen::Index>(p.width) * p.n_samples;
  if (y.rows() != d.rows() || y.cols() != cols) {
    std::ostringstream os;
    os << "observation is " << y.rows() << "x" << y.cols() << ", expected " << d.rows() << "x" << cols;
    throw DimensionError(os.str());
  }
  if (x0.rows() != d.cols() || x0.cols() != cols) throw DimensionError("initial estimate has wrong shape");
  if (p.alphas.empty()) throw ConfigError("alpha schedule is empty");
  if (p.masks != nullptr && p.masks->size() != static_cast<std::size_t>(p.n_samples)) {
    throw DimensionError("one support mask per sample required");
  }
}

}  // namespace

StageResult run_stage(const StageProblem& p, const CMatrix& y, CMatrix x0, StageTrace* trace) {
  check_problem(p, y, x0);
  const CMatrix& d = *p.dict;
  const CMatrix& w = *p.weight;
  const int n_layers = static_cast<int>(p.alphas.size());
  const double m_rows = static_cast<double>(d.rows());
  const double norm_b = p.l0_mode == L0Mode::kEntries ? m_rows * p.width : m_rows;
  const double norm_lambda = std::sqrt(m_rows * p.width);
  const Eigen::Index width = p.width;

  StageResult res;
  CMatrix x = std::move(x0);
  CMatrix v_prev = CMatrix::Zero(y.rows(), y.cols());
  CMatrix v(y.rows(), y.cols());
  CMatrix z(x.rows(), x.cols());
  RVector b(p.n_samples), lambda(p.n_samples), v_norm(p.n_samples);
  if (trace != nullptr) {
    *trace = StageTrace{};
    trace->v.reserve(static_cast<std::size_t>(n_layers));
    trace->z.reserve(static_cast<std::size_t>(n_layers));
  }

  for (int t = 0; t < n_layers; ++t) {
    v.noalias() = y - d * x;
    for (int k = 0; k < p.n_samples; ++k) {
      auto xs = x.middleCols(k * width, width);
      auto vs = v.middleCols(k * width, width);
      b(k) = p.onsager ? count_support(xs, p.l0_mode) / norm_b : 0.0;
      if (b(k) != 0.0) vs += b(k) * v_prev.middleCols(k * width, width);
      v_norm(k) = vs.norm();
      lambda(k) = p.alphas[static_cast<std::size_t>(t)] * v_norm(k) / norm_lambda;
    }
    z = x;
    z.noalias() += w * v;

    CMatrix x_next = z;
    for (int k = 0; k < p.n_samples; ++k) {
      const RowMask* mask = p.masks != nullptr ? &(*p.masks)[static_cast<std::size_t>(k)] : nullptr;
      threshold_rows_inplace(x_next.middleCols(k * width, width), lambda(k), mask);
    }
    if (!x_next.allFinite()) {
      std::ostringstream os;
      os << "non-finite estimate at iteration " << t << " (residual norm " << v.norm() << ")";
      throw NumericalError(os.str());
    }
    res.residual_norms.push_back(v.norm());
    if (trace != nullptr) {
      trace->v.push_back(v);
      trace->z.push_back(z);
      trace->lambda.push_back(lambda);
      trace->v_norm.push_back(v_norm);
      trace->onsager_b.push_back(b);
    }

    const bool check_stop = p.stop_tol > 0.0 && p.n_samples == 1;
    double rel_change = 0.0;
    if (check_stop) {
      const double nx = x_next.norm();
      const double dx = (x_next - x).norm();
      rel_change = nx > 0.0 ? dx / nx : dx;
    }
    x = std::move(x_next);
    std::swap(v_prev, v);
    res.layers_run = t + 1;
    if (check_stop && rel_change < p.stop_tol) break;
  }
  res.x = std::move(x);
  res.pseudo = std::move(z);
  return res;
}

StageGradients backprop_stage(const StageProblem& p, const StageTrace& trace, const CMatrix& grad_x,
                              bool want_weight) {
  const CMatrix& d = *p.dict;
  const CMatrix& w = *p.weight;
  const int n_layers = static_cast<int>(trace.z.size());
  const double norm_lambda = std::sqrt(static_cast<double>(d.rows()) * p.width);
  const Eigen::Index width = p.width;

  StageGradients g;
  g.alpha = RVector::Zero(static_cast<Eigen::Index>(p.alphas.size()));
  if (want_weight) g.weight = CMatrix::Zero(w.rows(), w.cols());

  CMatrix g_x = grad_x;
  CMatrix g_v_carry = CMatrix::Zero(d.rows(), grad_x.cols());
  CMatrix g_z(grad_x.rows(), grad_x.cols());
  CMatrix g_v(d.rows(), grad_x.cols());
  RVector g_lambda(p.n_samples);

  for (int t = n_layers - 1; t >= 0; --t) {
    const CMatrix& z = trace.z[static_cast<std::size_t>(t)];
    const CMatrix& v = trace.v[static_cast<std::size_t>(t)];
    const RVector& lambda = trace.lambda[static_cast<std::size_t>(t)];
    const RVector& v_norm = trace.v_norm[static_cast<std::size_t>(t)];
    const RVector& b = trace.onsager_b[static_cast<std::size_t>(t)];
    const double alpha = p.alphas[static_cast<std::size_t>(t)];

    // Threshold: out = z (1 - lambda/n) when n > lambda.
    //   dz contribution: c G + (lambda/n^3) Re<G, z> z, dlambda: -Re<G, z>/n.
    g_lambda.setZero();
    for (int k = 0; k < p.n_samples; ++k) {
      const RowMask* mask = p.masks != nullptr ? &(*p.masks)[static_cast<std::size_t>(k)] : nullptr;
      const Eigen::Index c0 = k * width;
      for (Eigen::Index j = 0; j < z.rows(); ++j) {
        auto gz = g_z.block(j, c0, 1, width);
        const auto gx = g_x.block(j, c0, 1, width);
        if (mask != nullptr && (*mask)[static_cast<std::size_t>(j)] != 0) {
          gz = gx;
          continue;
        }
        const auto zr = z.block(j, c0, 1, width);
        const double n = zr.norm();
        const double lam = lambda(k);
        if (n > lam) {
          const double re_gz = (gx.conjugate().cwiseProduct(zr)).sum().real();
          gz = (1.0 - lam / n) * gx + (lam * re_gz / (n * n * n)) * zr;
          g_lambda(k) -= re_gz / n;
        } else {
          gz.setZero();
        }
      }
    }

    // lambda = alpha * ||V|| / sqrt(M~ width)
    g_v = g_v_carry;
    for (int k = 0; k < p.n_samples; ++k) {
      g.alpha(t) += g_lambda(k) * v_norm(k) / norm_lambda;
      if (v_norm(k) > 0.0) {
        g_v.middleCols(k * width, width) += (g_lambda(k) * alpha / (norm_lambda * v_norm(k))) * v.middleCols(k * width, width);
      }
    }

    // Z = X + W V
    g_v.noalias() += w.adjoint() * g_z;
    if (want_weight) g.weight.noalias() += g_z * v.adjoint();

    // V = Y - D X + b V_prev
    g_x = g_z;
    g_x.noalias() -= d.adjoint() * g_v;
    for (int k = 0; k < p.n_samples; ++k) {
      g_v_carry.middleCols(k * width, width) = b(k) * g_v.middleCols(k * width, width);
    }
  }
  return g;
}

}  // namespace core

CMatrix row_soft_threshold(const CMatrix& x, double lambda) {
  if (lambda < 0.0) throw ConfigError("row_soft_threshold: lambda must be >= 0");
  CMatrix out = x;
  core::threshold_rows_inplace(out, lambda, nullptr);
  return out;
}

CMatrix prior_aided_threshold(const CMatrix& x, double lambda, const RowMask& support_mask) {
  if (lambda < 0.0) throw ConfigError("prior_aided_threshold: lambda must be >= 0");
  if (support_mask.size() != static_cast<std::size_t>(x.rows())) {
    throw DimensionError("prior_aided_threshold: mask length " + std::to_string(support_mask.size()) +
                         " != row count " + std::to_string(x.rows()));
  }
  CMatrix out = x;
  core::threshold_rows_inplace(out, lambda, &support_mask);
  return out;
}

IndexSet extract_support(const CMatrix& x_hat_block, double delta) {
  if (delta < 0.0) throw ConfigError("extract_support: delta must be >= 0");
  IndexSet s;
  for (Eigen::Index j = 0; j < x_hat_block.rows(); ++j) {
    if (x_hat_block.row(j).norm() > delta) s.push_back(static_cast<int>(j));
  }
  return s;
}

CMatrix ls_reinitialize(const ExpandedDictionary& dict, const IndexSet& support, const CMatrix& y_block) {
  if (y_block.rows() != dict.n_rows()) throw DimensionError("ls_reinitialize: y_block row count mismatch");
  if (static_cast<int>(support.size()) > dict.n_rows()) {
    throw DimensionError("support exceeds measurement dimension (" + std::to_string(support.size()) + " > " +
                         std::to_string(dict.n_rows()) + ")");
  }
  CMatrix out = CMatrix::Zero(dict.n_atoms(), y_block.cols());
  if (support.empty()) return out;
  CMatrix sub(dict.n_rows(), static_cast<Eigen::Index>(support.size()));
  for (std::size_t k = 0; k < support.size(); ++k) {
    const int j = support[k];
    if (j < 0 || j >= dict.n_atoms()) throw DimensionError("ls_reinitialize: support index out of range");
    sub.col(static_cast<Eigen::Index>(k)) = dict.matrix().col(j);
  }
  const CMatrix coef = sub.completeOrthogonalDecomposition().solve(y_block);
  for (std::size_t k = 0; k < support.size(); ++k) out.row(support[k]) = coef.row(static_cast<Eigen::Index>(k));
  return out;
}

double median_row_norm(const CMatrix& x) {
  if (x.rows() == 0) return 0.0;
  std::vector<double> n(static_cast<std::size_t>(x.rows()));
  for (Eigen::Index j = 0; j < x.rows(); ++j) n[static_cast<std::size_t>(j)] = x.row(j).norm();
  const std::size_t mid = n.size() / 2;
  std::nth_element(n.begin(), n.begin() + static_cast<std::ptrdiff_t>(mid), n.end());
  if (n.size() % 2 == 1) return n[mid];
  const double hi = n[mid];
  const double lo = *std::max_element(n.begin(), n.begin() + static_cast<std::ptrdiff_t>(mid));
  return 0.5 * (lo + hi);
}

double support_threshold(const UnrollOptions& opt, const CMatrix& pseudo_block) {
  if (opt.delta >= 0.0) return opt.delta;
  if (pseudo_block.cols() == 0) return 0.0;
  return opt.delta_scale * median_row_norm(pseudo_block) / std::sqrt(static_cast<double>(pseudo_block.cols()));
}

RecoveryResult amp_mmv(const CMatrix& y, const ExpandedDictionary& dict, const AmpConfig& cfg) {
  cfg.validate();
  if (y.rows() != dict.n_rows()) {
    throw DimensionError("amp_mmv: y has " + std::to_string(y.rows()) + " rows, dictionary has " +
                         std::to_string(dict.n_rows()));
  }
  if (!y.allFinite()) throw NumericalError("amp_mmv: observation contains non-finite values");
  const CMatrix weight = dict.matrix().adjoint();
  const std::vector<double> alphas = cfg.schedule(0);
  core::StageProblem p;
  p.dict = &dict.matrix();
  p.weight = &weight;
  p.width = static_cast<int>(y.cols());
  p.n_samples = 1;
  p.alphas = alphas;
  p.l0_mode = cfg.unroll.l0_mode;
  p.stop_tol = cfg.stop_tol;
  core::StageResult out = core::run_stage(p, y, CMatrix::Zero(dict.n_atoms(), y.cols()));

  RecoveryResult r;
  r.x_hat = std::move(out.x);
  r.residual_norms = std::move(out.residual_norms);
  r.stage_iterations.push_back(out.layers_run);
  for (std::size_t k = 1; k < r.residual_norms.size(); ++k) {
    if (r.residual_norms[k] > r.residual_norms[k - 1]) r.residual_nonmonotone = true;
  }
  return r;
}

RecoveryResult amp_bp(const CMatrix& y, const ExpandedDictionary& dict, const AmpConfig& cfg, int n_antennas,
                      int n_slots) {
  cfg.validate();
  if (!y.allFinite()) throw NumericalError("amp_bp: observation contains non-finite values");
  const CMatrix weight = dict.matrix().adjoint();
  return core::backward_sweep(
      y, dict, n_antennas, n_slots, cfg.unroll, cfg.stop_tol, [&](int) -> const CMatrix& { return weight; },
      [&](int first) { return cfg.schedule(first); });
}

}  // namespace gfra
