#include "gfra/theory_checks.hpp"

#include <algorithm>
#include <chrono>
#include <numeric>
#include <set>

#include "gfra/rng.hpp"

namespace gfra {

int uniqueness_bound(int m_dim, int l_dim, int r_known) {
  const int s = m_dim + l_dim + r_known;
  return (s + 1) / 2 - 1;
}

int UniquenessTrialConfig::sparsity_bound() const { return uniqueness_bound(m_dim, l_dim, r_known); }

std::uint64_t count_supports(int n_atoms, int max_sparsity, int n_known) {
  const int free_atoms = n_atoms - n_known;
  std::uint64_t total = 0;
  for (int extra = 0; extra <= max_sparsity - n_known && extra <= free_atoms; ++extra) {
    // C(free_atoms, extra) computed incrementally; exact for the sizes guarded here.
    std::uint64_t c = 1;
    for (int k = 1; k <= extra; ++k) c = c * static_cast<std::uint64_t>(free_atoms - extra + k) / static_cast<std::uint64_t>(k);
    total += c;
  }
  return total;
}

void UniquenessTrialConfig::validate() const {
  if (m_dim < 1 || n_dim <= m_dim) throw ConfigError("uniqueness check: need 1 <= m_dim < n_dim");
  if (l_dim < 1 || l_dim > m_dim) throw ConfigError("uniqueness check: need 1 <= l_dim <= m_dim");
  if (trials < 1) throw ConfigError("uniqueness check: trials must be >= 1");
  const int r = sparsity_bound();
  if (r_known < 0 || r_known > r) throw ConfigError("uniqueness check: r_known must be in [0, bound]");
  if (r < l_dim) throw ConfigError("uniqueness check: bound " + std::to_string(r) + " is below l_dim, rank(Y) = l_dim impossible");
  if (r > n_dim) throw ConfigError("uniqueness check: bound exceeds n_dim");
  const std::uint64_t n = count_supports(n_dim, r, r_known);
  if (n > max_supports) {
    throw ConfigError("uniqueness check: enumeration needs " + std::to_string(n) + " supports, guard is " +
                      std::to_string(max_supports));
  }
}

std::vector<IndexSet> brute_force_mmv(const CMatrix& y, const CMatrix& dict, int max_sparsity, const IndexSet& known,
                                      std::uint64_t max_supports) {
  if (y.rows() != dict.rows()) throw DimensionError("brute_force_mmv: y and dict row counts differ");
  const int n = static_cast<int>(dict.cols());
  const int n_known = static_cast<int>(known.size());
  if (n_known > max_sparsity) return {};
  const std::uint64_t needed = count_supports(n, max_sparsity, n_known);
  if (needed > max_supports) {
    throw ConfigError("brute_force_mmv: enumeration needs " + std::to_string(needed) + " supports, guard is " +
                      std::to_string(max_supports));
  }
  std::vector<int> free_atoms;
  for (int j = 0; j < n; ++j) {
    if (!std::binary_search(known.begin(), known.end(), j)) free_atoms.push_back(j);
  }
  const double y_norm = y.norm();
  std::set<IndexSet> found;

  auto test = [&](const IndexSet& support) {
    if (support.empty()) {
      if (y_norm == 0.0) found.insert(IndexSet{});
      return;
    }
    CMatrix sub(dict.rows(), static_cast<Eigen::Index>(support.size()));
    for (std::size_t k = 0; k < support.size(); ++k) sub.col(static_cast<Eigen::Index>(k)) = dict.col(support[k]);
    const CMatrix coef = sub.completeOrthogonalDecomposition().solve(y);
    const double resid = (y - sub * coef).norm();
    if (resid > 1e-9 * y_norm) return;
    IndexSet canonical;
    for (std::size_t k = 0; k < support.size(); ++k) {
      if (coef.row(static_cast<Eigen::Index>(k)).norm() >= 1e-10) canonical.push_back(support[k]);
    }
    found.insert(std::move(canonical));
  };

  // Enumerate subsets of free_atoms of size 0..max_sparsity-n_known.
  const int max_extra = std::min<int>(max_sparsity - n_known, static_cast<int>(free_atoms.size()));
  for (int extra = 0; extra <= max_extra; ++extra) {
    std::vector<int> pick(static_cast<std::size_t>(extra));
    std::iota(pick.begin(), pick.end(), 0);
    while (true) {
      IndexSet support = known;
      for (int p : pick) support.push_back(free_atoms[static_cast<std::size_t>(p)]);
      std::sort(support.begin(), support.end());
      test(support);
      int i = extra - 1;
      while (i >= 0 && pick[static_cast<std::size_t>(i)] == static_cast<int>(free_atoms.size()) - extra + i) --i;
      if (i < 0) break;
      ++pick[static_cast<std::size_t>(i)];
      for (int k = i + 1; k < extra; ++k) pick[static_cast<std::size_t>(k)] = pick[static_cast<std::size_t>(k - 1)] + 1;
    }
  }
  return {found.begin(), found.end()};
}

namespace {

CMatrix gaussian(Rng& rng, Eigen::Index rows, Eigen::Index cols) {
  CMatrix m(rows, cols);
  for (Eigen::Index c = 0; c < cols; ++c) {
    for (Eigen::Index r = 0; r < rows; ++r) m(r, c) = rng.complex_normal();
  }
  return m;
}

IndexSet random_support(Rng& rng, int n, int size) {
  std::vector<int> ids(static_cast<std::size_t>(n));
  std::iota(ids.begin(), ids.end(), 0);
  std::shuffle(ids.begin(), ids.end(), rng.engine());
  ids.resize(static_cast<std::size_t>(size));
  return ids;
}

}  // namespace

UniquenessReport verify_uniqueness_bound(const UniquenessTrialConfig& cfg) {
  cfg.validate();
  const auto t0 = std::chrono::steady_clock::now();
  UniquenessReport rep;
  rep.config = cfg;
  rep.bound = cfg.sparsity_bound();
  const int r = rep.bound;
  for (int trial = 0; trial < cfg.trials; ++trial) {
    Rng rng(derive_seed(cfg.seed, Stream::kTheory, static_cast<std::uint64_t>(trial)));
    const CMatrix dict = gaussian(rng, cfg.m_dim, cfg.n_dim);
    const IndexSet planted_order = random_support(rng, cfg.n_dim, r);
    IndexSet known(planted_order.begin(), planted_order.begin() + cfg.r_known);
    std::sort(known.begin(), known.end());
    IndexSet planted = planted_order;
    std::sort(planted.begin(), planted.end());

    CMatrix block;
    while (true) {
      block = gaussian(rng, r, cfg.l_dim);
      const RVector sv = Eigen::JacobiSVD<CMatrix>(block).singularValues();
      if (sv.size() >= cfg.l_dim && sv(cfg.l_dim - 1) > 1e-8 * sv(0)) break;
      ++rep.redraws;
    }
    CMatrix x = CMatrix::Zero(cfg.n_dim, cfg.l_dim);
    for (int k = 0; k < r; ++k) x.row(planted[static_cast<std::size_t>(k)]) = block.row(k);
    const CMatrix y = dict * x;

    const auto supports = brute_force_mmv(y, dict, r, known, cfg.max_supports);
    if (std::find(supports.begin(), supports.end(), planted) != supports.end()) ++rep.planted_found;
    if (supports.size() == 1 && supports.front() == planted) ++rep.unique;
    ++rep.trials;
  }
  rep.unique_fraction = static_cast<double>(rep.unique) / rep.trials;
  rep.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rep;
}

NonUniquenessWitness construct_nonuniqueness_witness(int m_dim, int n_dim, std::uint64_t seed) {
  const int r = uniqueness_bound(m_dim, 1, 0) + 1;
  if (2 * r > n_dim) throw ConfigError("witness: need n_dim >= 2 * (bound + 1)");
  if (2 * r <= m_dim) throw ConfigError("witness: two disjoint supports fit in m_dim, no null space");
  Rng rng(derive_seed(seed, Stream::kTheory, 1u << 20));
  NonUniquenessWitness w;
  w.dict = gaussian(rng, m_dim, n_dim);
  for (int k = 0; k < r; ++k) {
    w.first.push_back(k);
    w.second.push_back(r + k);
  }
  CMatrix joint(m_dim, 2 * r);
  for (int k = 0; k < 2 * r; ++k) joint.col(k) = w.dict.col(k);
  // Null vector of [D_1 D_2]: y = D_1 c_1 = -D_2 c_2.
  Eigen::FullPivLU<CMatrix> lu(joint);
  const CMatrix ker = lu.kernel();
  CVector c = ker.col(0);
  if (ker.cols() > 1) c += ker.col(1) * Complex(0.5, -0.25);
  w.y = joint.leftCols(r) * c.head(r);
  w.consistent = brute_force_mmv(w.y, w.dict, r, {});
  return w;
}

RandomSearchReport search_nonuniqueness(int m_dim, int n_dim, int trials, std::uint64_t seed) {
  const int r = uniqueness_bound(m_dim, 1, 0) + 1;
  RandomSearchReport rep;
  for (int trial = 0; trial < trials; ++trial) {
    Rng rng(derive_seed(seed, Stream::kTheory, static_cast<std::uint64_t>(trial) + (1u << 24)));
    const CMatrix dict = gaussian(rng, m_dim, n_dim);
    IndexSet planted = random_support(rng, n_dim, r);
    std::sort(planted.begin(), planted.end());
    CMatrix x = CMatrix::Zero(n_dim, 1);
    for (int j : planted) x(j, 0) = rng.complex_normal();
    const auto supports = brute_force_mmv(dict * x, dict, r, {});
    if (supports.size() > 1) ++rep.nonunique;
    ++rep.trials;
  }
  return rep;
}

}  // namespace gfra
