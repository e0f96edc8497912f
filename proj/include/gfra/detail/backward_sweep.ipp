#pragma once

#include <string>

namespace gfra::core {

template <class WeightFn, class AlphaFn>
RecoveryResult backward_sweep(const CMatrix& y, const ExpandedDictionary& dict, int n_antennas, int n_slots,
                              const UnrollOptions& opt, double stop_tol, WeightFn weight_of, AlphaFn alphas_of) {
  if (n_antennas < 1 || n_slots < 1) throw DimensionError("backward_sweep: n_antennas and n_slots must be >= 1");
  if (y.rows() != dict.n_rows()) {
    throw DimensionError("backward_sweep: y has " + std::to_string(y.rows()) + " rows, dictionary has " +
                         std::to_string(dict.n_rows()));
  }
  if (y.cols() != static_cast<Eigen::Index>(n_antennas) * n_slots) {
    throw DimensionError("backward_sweep: y has " + std::to_string(y.cols()) + " columns, expected R*L = " +
                         std::to_string(n_antennas * n_slots));
  }

  RecoveryResult result;
  CMatrix prev_x;
  CMatrix prev_pseudo;
  for (int first = n_slots - 1; first >= 0; --first) {
    const Eigen::Index col0 = static_cast<Eigen::Index>(first) * n_antennas;
    const int width = static_cast<int>(y.cols() - col0);
    const CMatrix y_block = y.rightCols(width);

    CMatrix x0 = CMatrix::Zero(dict.n_atoms(), width);
    std::vector<RowMask> masks;
    if (first < n_slots - 1) {
      const double delta = support_threshold(opt, prev_pseudo);
      IndexSet support = extract_support(prev_x, delta);
      x0 = ls_reinitialize(dict, support, y_block);
      RowMask mask(static_cast<std::size_t>(dict.n_atoms()), 0);
      for (int j : support) mask[static_cast<std::size_t>(j)] = 1;
      masks.push_back(std::move(mask));
      result.support_history.push_back(std::move(support));
    }

    const CMatrix& weight = weight_of(first);
    const auto alphas = alphas_of(first);
    StageProblem p;
    p.dict = &dict.matrix();
    p.weight = &weight;
    p.width = width;
    p.n_samples = 1;
    p.alphas = std::span<const double>(alphas.data(), alphas.size());
    p.onsager = first < n_slots - 1 || opt.first_stage_onsager;
    p.l0_mode = opt.l0_mode;
    p.stop_tol = stop_tol;
    p.masks = masks.empty() ? nullptr : &masks;

    StageResult out = run_stage(p, y_block, std::move(x0));
    for (std::size_t k = 1; k < out.residual_norms.size(); ++k) {
      if (out.residual_norms[k] > out.residual_norms[k - 1]) result.residual_nonmonotone = true;
    }
    result.residual_norms.insert(result.residual_norms.end(), out.residual_norms.begin(), out.residual_norms.end());
    result.stage_iterations.push_back(out.layers_run);
    prev_x = std::move(out.x);
    prev_pseudo = std::move(out.pseudo);
  }
  result.x_hat = std::move(prev_x);
  return result;
}

}  // namespace gfra::core
