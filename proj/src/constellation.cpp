#include "gfra/constellation.hpp"

#include <algorithm>
#include <cmath>

namespace gfra {

bool is_perfect_square(int n) {
  if (n < 0) return false;
  const int r = static_cast<int>(std::lround(std::sqrt(static_cast<double>(n))));
  return r * r == n;
}

QamConstellation::QamConstellation(int order) {
  if (order < 4 || !is_perfect_square(order)) {
    throw ConfigError("modulation_order must be a perfect square >= 4, got " + std::to_string(order));
  }
  side_ = static_cast<int>(std::lround(std::sqrt(static_cast<double>(order))));
  // Average power of the unnormalized grid {±1, ±3, ...}^2 is 2(side^2-1)/3.
  const double scale = 1.0 / std::sqrt(2.0 * (side_ * side_ - 1) / 3.0);
  levels_.resize(static_cast<std::size_t>(side_));
  for (int k = 0; k < side_; ++k) levels_[static_cast<std::size_t>(k)] = (2 * k - side_ + 1) * scale;
  min_distance_ = 2.0 * scale;

  // Axis bits b map to level position gray^-1(b), so neighbouring levels
  // differ in one bit.
  gray_of_level_.resize(static_cast<std::size_t>(side_));
  for (int k = 0; k < side_; ++k) gray_of_level_[static_cast<std::size_t>(k)] = k ^ (k >> 1);
  std::vector<int> level_of_gray(static_cast<std::size_t>(side_));
  for (int k = 0; k < side_; ++k) level_of_gray[static_cast<std::size_t>(gray_of_level_[static_cast<std::size_t>(k)])] = k;

  points_.resize(static_cast<std::size_t>(order));
  for (int idx = 0; idx < order; ++idx) {
    const int i_bits = idx / side_;
    const int q_bits = idx % side_;
    points_[static_cast<std::size_t>(idx)] = {levels_[static_cast<std::size_t>(level_of_gray[static_cast<std::size_t>(i_bits)])],
                                              levels_[static_cast<std::size_t>(level_of_gray[static_cast<std::size_t>(q_bits)])]};
  }
}

int QamConstellation::nearest(Complex z) const {
  auto axis = [&](double v) {
    const double scale = min_distance_ / 2.0;
    int k = static_cast<int>(std::lround((v / scale + side_ - 1) / 2.0));
    return std::clamp(k, 0, side_ - 1);
  };
  const int i_bits = gray_of_level_[static_cast<std::size_t>(axis(z.real()))];
  const int q_bits = gray_of_level_[static_cast<std::size_t>(axis(z.imag()))];
  return i_bits * side_ + q_bits;
}

}  // namespace gfra
