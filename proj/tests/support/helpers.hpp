#pragma once

#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "topicrag/autodiff.hpp"
#include "topicrag/rng.hpp"
#include "topicrag/tensor.hpp"

namespace topicrag::testing {

inline Tensor random_tensor(Rng& rng, std::vector<std::size_t> shape, double scale = 1.0) {
  Tensor t(std::move(shape));
  for (auto& v : t.values()) v = scale * rng.uniform(-1.0, 1.0);
  return t;
}

// Entries with magnitude in [margin, 1], random sign; keeps piecewise ops off their kinks.
inline Tensor away_from_zero(Rng& rng, std::vector<std::size_t> shape, double margin = 0.1) {
  Tensor t(std::move(shape));
  for (auto& v : t.values()) {
    const double mag = rng.uniform(margin, 1.0);
    v = rng.uniform() < 0.5 ? -mag : mag;
  }
  return t;
}

// Random linear functional of a tensor, so every output element carries gradient.
inline Var weighted_sum(Tape& tape, const Var& v, const Tensor& weights) {
  return sum(mul(v, tape.constant(weights)));
}

inline std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("topicrag_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

// Smallest gap between the largest and second-largest entry of each column.
inline double column_max_gap(const Tensor& t) {
  const std::size_t n = t.rows(), d = t.cols();
  if (n < 2) return INFINITY;
  double gap = INFINITY;
  for (std::size_t j = 0; j < d; ++j) {
    double a = -INFINITY, b = -INFINITY;
    for (std::size_t i = 0; i < n; ++i) {
      const double v = t[i * d + j];
      if (v > a) {
        b = a;
        a = v;
      } else if (v > b) {
        b = v;
      }
    }
    gap = std::min(gap, a - b);
  }
  return gap;
}

inline double min_abs(const Tensor& t) {
  double m = INFINITY;
  for (double v : t.values()) m = std::min(m, std::abs(v));
  return m;
}

}  // namespace topicrag::testing
