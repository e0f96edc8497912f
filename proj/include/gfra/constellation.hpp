#pragma once

#include <vector>

#include "gfra/types.hpp"

namespace gfra {

// Gray-mapped square QAM normalized to unit average power.
class QamConstellation {
 public:
  // order must be a perfect square >= 4.
  explicit QamConstellation(int order);

  int order() const { return static_cast<int>(points_.size()); }
  const std::vector<Complex>& points() const { return points_; }
  Complex point(int index) const { return points_.at(static_cast<std::size_t>(index)); }
  double min_distance() const { return min_distance_; }

  // Index of the nearest point.
  int nearest(Complex z) const;

 private:
  std::vector<Complex> points_;
  std::vector<double> levels_;  // per-axis amplitude levels, sorted
  std::vector<int> gray_of_level_;
  int side_ = 0;
  double min_distance_ = 0.0;
};

bool is_perfect_square(int n);

}  // namespace gfra
