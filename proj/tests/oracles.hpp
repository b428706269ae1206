#pragma once

// Brute-force minimizers used as oracles for the regression solvers.

#include <Eigen/Dense>

#include <algorithm>
#include <functional>
#include <limits>
#include <random>
#include <vector>

#include "mrtensor/solver.hpp"

namespace mrtensor::fixtures {

// Random identity-link Poisson regression with a column-stochastic full
// design of `rows` x `k`; only rows with positive counts are kept.
inline PoissonSubproblem random_regression(std::mt19937_64& rng, std::size_t rows, std::size_t k) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::uniform_int_distribution<int> count(0, 9);
  for (;;) {
    Eigen::MatrixXd full(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(k));
    for (Eigen::Index i = 0; i < full.size(); ++i) full(i) = u(rng) < 0.2 ? 0.0 : u(rng);
    bool ok = true;
    for (Eigen::Index c = 0; c < full.cols(); ++c) {
      const double s = full.col(c).sum();
      if (s <= 0.0) ok = false;
      else full.col(c) /= s;
    }
    std::vector<Eigen::Index> keep;
    std::vector<double> x;
    for (Eigen::Index r = 0; r < full.rows(); ++r) {
      const int c = count(rng);
      if (c > 0 && full.row(r).maxCoeff() > 0.0) {
        keep.push_back(r);
        x.push_back(c);
      }
    }
    if (!ok || keep.empty()) continue;
    PoissonSubproblem sp;
    sp.design.resize(static_cast<Eigen::Index>(keep.size()), static_cast<Eigen::Index>(k));
    sp.counts.resize(static_cast<Eigen::Index>(keep.size()));
    for (std::size_t i = 0; i < keep.size(); ++i) {
      sp.design.row(static_cast<Eigen::Index>(i)) = full.row(keep[i]);
      sp.counts(static_cast<Eigen::Index>(i)) = x[i];
    }
    return sp;
  }
}

// Minimizes f over a box by repeated grid refinement around the incumbent.
inline double zoom_grid_minimum(const std::function<double(const Eigen::VectorXd&)>& f, Eigen::VectorXd lo,
                                Eigen::VectorXd hi, int points, int levels) {
  const auto d = lo.size();
  Eigen::VectorXd best_x = (lo + hi) / 2;
  double best = std::numeric_limits<double>::infinity();
  std::vector<int> idx(static_cast<std::size_t>(d));
  for (int level = 0; level < levels; ++level) {
    std::fill(idx.begin(), idx.end(), 0);
    Eigen::VectorXd x(d);
    for (;;) {
      for (Eigen::Index k = 0; k < d; ++k)
        x(k) = lo(k) + (hi(k) - lo(k)) * idx[static_cast<std::size_t>(k)] / (points - 1);
      const double v = f(x);
      if (v < best) {
        best = v;
        best_x = x;
      }
      std::size_t k = 0;
      while (k < idx.size() && ++idx[k] == points) idx[k++] = 0;
      if (k == idx.size()) break;
    }
    const Eigen::VectorXd width = (hi - lo) * (2.0 / (points - 1));
    Eigen::VectorXd nlo = (best_x - width).cwiseMax(lo), nhi = (best_x + width).cwiseMin(hi);
    lo = nlo;
    hi = nhi;
  }
  return best;
}

// Unpenalized optimum with a stochastic design satisfies sum b = sum x, so the
// search runs over the scaled simplex.
inline double simplex_grid_minimum(const PoissonSubproblem& sp) {
  const auto k = sp.design.cols();
  const double total = sp.counts.sum();
  if (k == 1) {
    Eigen::VectorXd b(1);
    b(0) = total;
    return regression_objective(sp, b);
  }
  auto f = [&](const Eigen::VectorXd& w) {
    double rest = 1.0 - w.sum();
    if (rest < 0.0) return std::numeric_limits<double>::infinity();
    Eigen::VectorXd b(k);
    b.head(k - 1) = w * total;
    b(k - 1) = rest * total;
    return regression_objective(sp, b);
  };
  return zoom_grid_minimum(f, Eigen::VectorXd::Zero(k - 1), Eigen::VectorXd::Ones(k - 1), k == 2 ? 201 : 61, 12);
}

}  // namespace mrtensor::fixtures
