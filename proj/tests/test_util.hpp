#pragma once

#include <Eigen/Geometry>
#include <random>

#include "facegan/tensor.hpp"

namespace facegan::testing {

template <typename T = double>
Tensor<T> random_tensor(Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(lo, hi);
  Tensor<T> t(std::move(shape));
  for (auto& v : t.data()) v = static_cast<T>(dist(rng));
  return t;
}

/// Rotation by a uniformly random axis and an angle in [0, max_angle].
inline Eigen::Matrix3d random_rotation(std::mt19937_64& rng, double max_angle) {
  std::normal_distribution<double> n(0.0, 1.0);
  std::uniform_real_distribution<double> u(0.0, max_angle);
  Eigen::Vector3d axis(n(rng), n(rng), n(rng));
  return Eigen::AngleAxisd(u(rng), axis.normalized()).toRotationMatrix();
}

inline Eigen::Vector3d random_vector(std::mt19937_64& rng, double radius) {
  std::uniform_real_distribution<double> u(-radius, radius);
  return {u(rng), u(rng), u(rng)};
}

}  // namespace facegan::testing
