#pragma once

#include <array>
#include <cmath>

#include "triage/models.hpp"
#include "triage/rng.hpp"

namespace triage::testing {

// Three isotropic Gaussian blobs in the plane, labels assigned round-robin.
inline ml::Dataset gaussian_blobs(std::uint64_t seed, std::size_t n, double spread = 1.5) {
  static constexpr std::array<std::array<double, 2>, 3> centers = {{{0.0, 0.0}, {3.0, 0.0}, {1.5, 2.6}}};
  Rng rng(seed);
  ml::Dataset data;
  data.dimension = 2;
  data.num_classes = 3;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t label = i % 3;
    const double x = centers[label][0] + spread * rng.normal();
    const double y = centers[label][1] + spread * rng.normal();
    data.add(ml::FeatureRow::from_dense(std::array<double, 2>{x, y}), static_cast<int>(label));
  }
  return data;
}

}  // namespace triage::testing
