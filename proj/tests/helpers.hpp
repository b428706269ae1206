#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "mrtensor/mrtensor.hpp"

namespace mrtensor::fixtures {

inline CpBtdModel random_model(std::mt19937_64& rng, const std::vector<std::size_t>& sizes,
                               const std::vector<std::size_t>& ranks, std::size_t replicates,
                               double score_scale = 5.0) {
  CpBtdModel m(sizes, ranks, replicates);
  std::uniform_real_distribution<double> u(0.05, 1.0);
  for (auto& f : m.factors)
    for (Eigen::Index r = 0; r < f.cols(); ++r) {
      for (Eigen::Index i = 0; i < f.rows(); ++i) f(i, r) = u(rng);
      f.col(r) /= f.col(r).sum();
    }
  for (std::size_t h = 0; h < m.terms(); ++h) {
    auto w = m.weights.segment(static_cast<Eigen::Index>(m.term_begin(h)), static_cast<Eigen::Index>(m.ranks[h]));
    for (Eigen::Index k = 0; k < w.size(); ++k) w(k) = u(rng);
    w /= w.sum();
  }
  for (Eigen::Index n = 0; n < m.scores.cols(); ++n)
    for (Eigen::Index h = 0; h < m.scores.rows(); ++h) m.scores(h, n) = score_scale * u(rng);
  return m;
}

inline SparseCountTensor random_tensor(std::mt19937_64& rng, const std::vector<std::size_t>& shape,
                                       double density, Count max_count = 5) {
  std::bernoulli_distribution keep(density);
  std::uniform_int_distribution<Count> value(1, max_count);
  std::vector<Index> coords, idx(shape.size(), 0);
  std::vector<Count> counts;
  std::uint64_t cells = 1;
  for (auto d : shape) cells *= d;
  for (std::uint64_t c = 0; c < cells; ++c) {
    if (keep(rng)) {
      coords.insert(coords.end(), idx.begin(), idx.end());
      counts.push_back(value(rng));
    }
    for (std::size_t k = 0; k < idx.size(); ++k) {
      if (++idx[k] < shape[k]) break;
      idx[k] = 0;
    }
  }
  if (counts.empty()) {
    coords.assign(shape.size(), 0);
    counts.push_back(1);
  }
  return SparseCountTensor::from_coordinates(shape, coords, counts);
}

// sum(lambda) - sum x log(lambda) over the dense reconstruction.
inline double dense_objective(const CpBtdModel& model, const SparseCountTensor& t) {
  const auto dense = dense_reconstruct(model);
  double f = 0.0;
  for (double v : dense.values) f += v;
  for (std::size_t j = 0; j < t.nnz(); ++j) f -= static_cast<double>(t.count(j)) * std::log(dense.at(t.index(j)));
  return f;
}

}  // namespace mrtensor::fixtures
