#pragma once

// Fitting the Poisson CP block-term model.
//
// fit_block_gs alternates identity-link Poisson regressions: first for the
// score matrix (one column per replicate), then for each factor mode (one
// row per mode value). Each regression is solved by the majorize-minimize
// fixed point b_k <- b_k sum_j x_j a_jk / (a_j . b). Log-sum group penalties
// on term usage and on component mass turn the update into a reweighted one
// that drives redundant terms and components to zero.
//
// fit_em is the expectation-maximization alternative: it materializes the
// nonzero-by-component responsibilities and updates every parameter in
// closed form.

#include <Eigen/Dense>

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <cstdint>
#include <exception>
#include <limits>
#include <optional>
#include <ostream>
#include <random>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include "mrtensor/design.hpp"
#include "mrtensor/error.hpp"
#include "mrtensor/model.hpp"
#include "mrtensor/parallel.hpp"
#include "mrtensor/sparse_tensor.hpp"

namespace mrtensor {

enum class BetaRule {
  scaled,   // beta = value * J, J the number of positive observations
  absolute  // beta = value
};

struct SolverConfig {
  std::size_t terms = 500;
  std::size_t rank = 5;
  BetaRule beta_rule = BetaRule::scaled;
  double beta = 0.001;
  double epsilon = 1e-8;
  std::size_t max_outer = 100;
  std::size_t max_inner = 250;
  double inner_tol = 1e-6;
  double outer_tol = 1e-8;
  std::uint64_t seed = 0;
  // Independent random starts; the fit with the lowest penalized objective
  // is kept. Ignored when an explicit start model is given.
  std::size_t restarts = 1;
  // After each block Gauss-Seidel run, try merging, splitting and dropping
  // terms, keeping a change only when the refitted objective is lower.
  // Candidates grow quadratically with the active terms; meant for small H.
  bool structure_moves = false;
  // Cap on nonzeros x components for the EM responsibilities.
  std::uint64_t em_max_responsibilities = 50'000'000;

  void validate() const {
    if (terms < 1) throw ValidationError("H must be at least 1");
    if (rank < 1) throw ValidationError("R_h must be at least 1");
    if (!(beta >= 0.0) || !std::isfinite(beta)) throw ValidationError("beta must be finite and >= 0");
    if (!(epsilon > 0.0)) throw ValidationError("epsilon must be positive");
    if (!(inner_tol > 0.0) || !(outer_tol > 0.0)) throw ValidationError("tolerances must be positive");
    if (restarts < 1) throw ValidationError("restarts must be at least 1");
  }

  // Seed of random start k; start 0 uses `seed` itself.
  std::uint64_t start_seed(std::size_t k) const {
    return seed + static_cast<std::uint64_t>(k) * 0x9E3779B97F4A7C15ull;
  }

  // Every grouped subproblem spans all positive observations, so J is the
  // tensor's nonzero count for both the score and the loading blocks.
  double beta_for(const SparseCountTensor& t) const {
    return beta_rule == BetaRule::scaled ? beta * static_cast<double>(t.nnz()) : beta;
  }
};

struct FitReport {
  std::vector<double> objective;       // penalized objective; entry 0 is the initialization
  std::vector<double> data_objective;  // unpenalized KL part
  std::vector<std::size_t> inner_iterations;
  std::vector<std::size_t> effective_terms;
  std::vector<std::size_t> effective_ranks;  // per term, at termination
  std::size_t outer_iterations = 0;
  std::size_t restart = 0;  // index of the kept random start
  std::size_t moves = 0;    // accepted structure moves; the trace covers the last refit
  bool converged = false;
  double beta = 0.0;
  double seconds = 0.0;
};

// A fit stopped on a non-finite objective; carries the state reached.
class FitAborted : public SolverError {
 public:
  FitAborted(const std::string& what, CpBtdModel model, FitReport report)
      : SolverError(what), model_(std::move(model)), report_(std::move(report)) {}
  const CpBtdModel& model() const { return model_; }
  const FitReport& report() const { return report_; }

 private:
  CpBtdModel model_;
  FitReport report_;
};

// --- identity-link Poisson regression -------------------------------------------------

// One regression: positive counts x and the matching rows of the design.
struct PoissonSubproblem {
  RowMatrix design;  // J x K
  Eigen::VectorXd counts;
};

template <class P>
concept RowSumPenalty = requires(const P& g, std::span<const double> sums, std::span<double> out) {
  { g.value(sums) } -> std::convertible_to<double>;
  g.slope(sums, out);
};

struct NoPenalty {
  double value(std::span<const double>) const { return 0.0; }
  void slope(std::span<const double>, std::span<double> out) const { std::ranges::fill(out, 0.0); }
};

// beta sum_k log(s_k + eps) on the row sums s_k of the coefficient matrix.
struct LogSumPenalty {
  double beta = 0.0;
  double epsilon = 1e-8;

  double value(std::span<const double> sums) const {
    double v = 0.0;
    for (double s : sums) v += std::log(s + epsilon);
    return beta * v;
  }
  void slope(std::span<const double> sums, std::span<double> out) const {
    for (std::size_t k = 0; k < sums.size(); ++k) out[k] = beta / (sums[k] + epsilon);
  }
};

struct InnerResult {
  Eigen::MatrixXd coefficients;  // K x (number of subproblems)
  std::size_t iterations = 0;
};

namespace detail {

inline void check_subproblem(const PoissonSubproblem& sp, std::size_t K) {
  if (sp.design.cols() != static_cast<Eigen::Index>(K))
    throw DimensionError("design has " + std::to_string(sp.design.cols()) + " columns, expected " +
                         std::to_string(K));
  if (sp.design.rows() != sp.counts.size()) throw DimensionError("design rows do not match counts");
  if (!sp.design.allFinite() || !sp.counts.allFinite())
    throw ValidationError("non-finite regression input");
  if ((sp.design.array() < 0.0).any()) throw ValidationError("negative design entry");
  for (Eigen::Index j = 0; j < sp.counts.size(); ++j) {
    if (!(sp.counts(j) > 0.0)) throw ValidationError("regression counts must be positive");
    if (!(sp.design.row(j).maxCoeff() > 0.0))
      throw SolverError("infeasible regression: design row " + std::to_string(j + 1) +
                        " is zero but its count is positive");
  }
}

// f(b) = sum_k mass_k b_k - sum_j x_j log(a_j . b)
inline double regression_objective(const PoissonSubproblem& sp, const Eigen::VectorXd& mass,
                                   const Eigen::Ref<const Eigen::VectorXd>& b) {
  double f = mass.dot(b);
  for (Eigen::Index j = 0; j < sp.counts.size(); ++j) {
    const double lin = sp.design.row(j).dot(b);
    if (!(lin > 0.0)) return std::numeric_limits<double>::infinity();
    f -= sp.counts(j) * std::log(lin);
  }
  return f;
}

// One MM step for a single column; returns the relative sup-norm change.
inline double mm_column_step(const PoissonSubproblem& sp, const Eigen::VectorXd& mass,
                             std::span<const double> slope, const Eigen::Ref<const Eigen::VectorXd>& b_old,
                             Eigen::Ref<Eigen::VectorXd> b_new) {
  const Eigen::Index K = b_old.size();
  Eigen::VectorXd ratio = sp.design * b_old;
  for (Eigen::Index j = 0; j < ratio.size(); ++j) {
    if (!(ratio(j) > 0.0))
      throw SolverError("regression reached zero intensity at a positive count (row " +
                        std::to_string(j + 1) + ")");
    ratio(j) = sp.counts(j) / ratio(j);
  }
  const Eigen::VectorXd acc = sp.design.transpose() * ratio;
  double scale = 0.0, change = 0.0;
  for (Eigen::Index k = 0; k < K; ++k) {
    const double denom = mass(k) + slope[static_cast<std::size_t>(k)];
    const double v = denom > 0.0 ? b_old(k) * acc(k) / denom : 0.0;
    b_new(k) = v;
    scale = std::max(scale, std::abs(b_old(k)));
    change = std::max(change, std::abs(v - b_old(k)));
  }
  return scale > 0.0 ? change / scale : 0.0;
}

// Copies of the subproblems restricted to the design columns in `keep`.
inline std::vector<PoissonSubproblem> restrict_columns(std::span<const PoissonSubproblem> problems,
                                                       const std::vector<Eigen::Index>& keep) {
  std::vector<PoissonSubproblem> out(problems.size());
  for (std::size_t n = 0; n < problems.size(); ++n) {
    out[n].counts = problems[n].counts;
    out[n].design = problems[n].design(Eigen::all, keep);
  }
  return out;
}

}  // namespace detail

// Objective of a grouped regression: sum_n f_n(b_n) + penalty(row sums of B).
template <RowSumPenalty Penalty>
double group_objective(std::span<const PoissonSubproblem> problems, const Eigen::VectorXd& mass,
                       const Eigen::MatrixXd& B, const Penalty& penalty) {
  double f = 0.0;
  for (std::size_t n = 0; n < problems.size(); ++n)
    f += detail::regression_objective(problems[n], mass, B.col(static_cast<Eigen::Index>(n)));
  const Eigen::VectorXd sums = B.rowwise().sum();
  return f + penalty.value(std::span<const double>(sums.data(), static_cast<std::size_t>(sums.size())));
}

// Grouped MM: column n of B solves problems[n]; rows of B are coupled by a
// concave penalty of their sums, majorized by its tangent at the previous
// sweep. `mass` holds the full (all-cell) column sums of the design, which
// is 1 for stochastic designs and 0 for columns that no longer contribute.
template <RowSumPenalty Penalty>
InnerResult mm_poisson_regression_group(std::span<const PoissonSubproblem> problems,
                                        const Eigen::VectorXd& mass, Eigen::MatrixXd B0,
                                        const Penalty& penalty, double tol, std::size_t max_iter) {
  const auto K = static_cast<std::size_t>(B0.rows());
  if (B0.cols() != static_cast<Eigen::Index>(problems.size()))
    throw DimensionError("one coefficient column per subproblem required");
  if (mass.size() != B0.rows()) throw DimensionError("column mass has wrong length");
  if (!B0.allFinite() || (B0.array() < 0.0).any())
    throw ValidationError("initial coefficients must be finite and nonnegative");
  if (!mass.allFinite() || (mass.array() < 0.0).any()) throw ValidationError("invalid column mass");
  for (const auto& sp : problems) detail::check_subproblem(sp, K);

  // Multiplicative updates keep zero rows at zero, so the sweeps only touch
  // rows with a positive entry.
  std::vector<Eigen::Index> live;
  for (Eigen::Index k = 0; k < B0.rows(); ++k)
    if ((B0.row(k).array() > 0.0).any()) live.push_back(k);
  const bool compact = live.size() < K;
  std::vector<PoissonSubproblem> restricted;
  if (compact) restricted = detail::restrict_columns(problems, live);
  const std::span<const PoissonSubproblem> active =
      compact ? std::span<const PoissonSubproblem>(restricted) : problems;
  const Eigen::VectorXd active_mass = compact ? Eigen::VectorXd(mass(live)) : mass;

  InnerResult result{std::move(B0), 0};
  Eigen::MatrixXd current = compact ? Eigen::MatrixXd(result.coefficients(live, Eigen::all)) : result.coefficients;
  Eigen::MatrixXd next(current.rows(), current.cols());
  std::vector<double> sums(K, 0.0), slope(K), active_slope(live.size()), change(problems.size());
  std::size_t work = 0;
  for (const auto& sp : active) work += static_cast<std::size_t>(sp.design.size());
  const std::size_t grain = work > 200'000 ? 1 : problems.size() + 1;

  for (std::size_t it = 0; it < max_iter; ++it) {
    for (std::size_t a = 0; a < live.size(); ++a)
      sums[static_cast<std::size_t>(live[a])] = current.row(static_cast<Eigen::Index>(a)).sum();
    penalty.slope(sums, slope);
    for (std::size_t a = 0; a < live.size(); ++a) active_slope[a] = slope[static_cast<std::size_t>(live[a])];
    parallel_for(
        problems.size(),
        [&](std::size_t n) {
          const auto c = static_cast<Eigen::Index>(n);
          change[n] = detail::mm_column_step(active[n], active_mass, active_slope, current.col(c), next.col(c));
        },
        grain);
    current.swap(next);
    ++result.iterations;
    if (*std::max_element(change.begin(), change.end()) < tol) break;
  }
  if (compact)
    result.coefficients(live, Eigen::all) = current;
  else
    result.coefficients = std::move(current);
  return result;
}

// Single regression with a stochastic full design (every column mass 1).
// b0 must be strictly positive.
inline InnerResult mm_poisson_regression(const PoissonSubproblem& problem, const Eigen::VectorXd& b0,
                                         double tol, std::size_t max_iter,
                                         std::optional<Eigen::VectorXd> mass = std::nullopt) {
  if (!b0.allFinite() || !(b0.array() > 0.0).all())
    throw ValidationError("initial coefficients must be strictly positive");
  const Eigen::VectorXd m = mass ? *mass : Eigen::VectorXd::Ones(b0.size());
  return mm_poisson_regression_group(std::span<const PoissonSubproblem>(&problem, 1), m, b0, NoPenalty{},
                                     tol, max_iter);
}

inline double regression_objective(const PoissonSubproblem& problem, const Eigen::VectorXd& b,
                                   std::optional<Eigen::VectorXd> mass = std::nullopt) {
  const Eigen::VectorXd m = mass ? *mass : Eigen::VectorXd::Ones(b.size());
  return detail::regression_objective(problem, m, b);
}

// --- block penalties ----------------------------------------------------------------

// Score block: row sums are term usages s_h. The total shrinkage penalty
// depends on s_h through log(s_h + eps) and through the component masses
// log(omega_r s_h + eps).
struct ScoreBlockPenalty {
  double beta = 0.0;
  double epsilon = 1e-8;
  const CpBtdModel* model = nullptr;

  double value(std::span<const double> usage) const {
    if (beta == 0.0) return 0.0;
    double v = 0.0;
    std::size_t r = 0;
    for (std::size_t h = 0; h < usage.size(); ++h) {
      v += std::log(usage[h] + epsilon);
      for (std::size_t k = 0; k < model->ranks[h]; ++k, ++r)
        v += std::log(model->weights(static_cast<Eigen::Index>(r)) * usage[h] + epsilon);
    }
    return beta * v;
  }
  void slope(std::span<const double> usage, std::span<double> out) const {
    std::size_t r = 0;
    for (std::size_t h = 0; h < usage.size(); ++h) {
      double g = 1.0 / (usage[h] + epsilon);
      for (std::size_t k = 0; k < model->ranks[h]; ++k, ++r) {
        const double w = model->weights(static_cast<Eigen::Index>(r));
        g += w / (w * usage[h] + epsilon);
      }
      out[h] = beta * g;
    }
  }
};

// Loading block: row sums are component masses tau_r; term usage is the sum
// of its components' masses.
struct LoadingBlockPenalty {
  double beta = 0.0;
  double epsilon = 1e-8;
  const std::vector<std::size_t>* ranks = nullptr;

  double value(std::span<const double> tau) const {
    if (beta == 0.0) return 0.0;
    double v = 0.0;
    std::size_t r = 0;
    for (std::size_t rank : *ranks) {
      double usage = 0.0;
      for (std::size_t k = 0; k < rank; ++k, ++r) {
        v += std::log(tau[r] + epsilon);
        usage += tau[r];
      }
      v += std::log(usage + epsilon);
    }
    return beta * v;
  }
  void slope(std::span<const double> tau, std::span<double> out) const {
    std::size_t r = 0;
    for (std::size_t rank : *ranks) {
      double usage = 0.0;
      for (std::size_t k = 0; k < rank; ++k) usage += tau[r + k];
      for (std::size_t k = 0; k < rank; ++k, ++r) out[r] = beta / (tau[r] + epsilon) + beta / (usage + epsilon);
    }
  }
};

// --- fitting --------------------------------------------------------------------------

// Everything a block update needs besides the model.
struct FitProblem {
  const SparseCountTensor& tensor;
  SliceIndex slices;
  SolverConfig config;
  double beta;

  FitProblem(const SparseCountTensor& t, const SolverConfig& cfg)
      : tensor(t), slices(t), config(cfg), beta(cfg.beta_for(t)) {
    config.validate();
  }
};

inline constexpr double kDeadMass = 1e-300;

inline double penalized_objective(const CpBtdModel& model, const FitProblem& problem) {
  return penalized_objective(model, problem.tensor, problem.beta, problem.config.epsilon);
}

namespace detail {

inline Eigen::VectorXd counts_of(const SparseCountTensor& t, const std::vector<std::size_t>& rows) {
  Eigen::VectorXd x(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t j = 0; j < rows.size(); ++j) x(static_cast<Eigen::Index>(j)) = static_cast<double>(t.count(rows[j]));
  return x;
}

inline double column_product(const CpBtdModel& model, std::size_t r, std::optional<std::size_t> skip) {
  double prod = 1.0;
  for (std::size_t p = 0; p < model.modes(); ++p)
    if (!skip || p != *skip) prod *= model.factors[p].col(static_cast<Eigen::Index>(r)).sum();
  return prod;
}

}  // namespace detail

// Re-solves Upsilon given the motifs; returns the inner iteration count.
inline std::size_t update_scores(CpBtdModel& model, const FitProblem& problem) {
  const auto& t = problem.tensor;
  check_compatible(model, t);
  const std::size_t N = model.replicates(), H = model.terms();
  std::vector<PoissonSubproblem> problems(N);
  parallel_for(N, [&](std::size_t n) {
    auto d = design_for_replicate(t, problem.slices, n, model);
    problems[n].counts = detail::counts_of(t, d.row_map);
    problems[n].design = std::move(d.values);
  });
  Eigen::VectorXd mass = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(H));
  const auto owner = model.component_terms();
  for (std::size_t r = 0; r < owner.size(); ++r)
    mass(static_cast<Eigen::Index>(owner[r])) +=
        model.weights(static_cast<Eigen::Index>(r)) * detail::column_product(model, r, std::nullopt);

  const ScoreBlockPenalty penalty{problem.beta, problem.config.epsilon, &model};
  auto result = mm_poisson_regression_group(std::span<const PoissonSubproblem>(problems), mass, model.scores,
                                            penalty, problem.config.inner_tol, problem.config.max_inner);
  model.scores = std::move(result.coefficients);
  return result.iterations;
}

// Re-solves the loadings of factor mode p (0-based), then rescales: columns
// of Phi^(p) back to the simplex, omega to within-term proportions of the
// column masses and Upsilon so that every intensity is unchanged by the
// rescale. Components whose mass falls below 1e-300 are frozen at a uniform
// column with zero weight.
inline std::size_t update_mode(CpBtdModel& model, const FitProblem& problem, std::size_t p) {
  const auto& t = problem.tensor;
  check_compatible(model, t);
  if (p >= model.modes()) throw DimensionError("mode out of range");
  const std::size_t R = model.components(), N = model.replicates(), I = model.mode_sizes[p];
  if (I == 1) {
    // a singleton mode carries no information; its loadings stay at one
    model.factors[p].setOnes();
    return 0;
  }
  const auto owner = model.component_terms();

  Eigen::VectorXd usage = model.scores.rowwise().sum();
  Eigen::VectorXd tau(static_cast<Eigen::Index>(R));
  Eigen::MatrixXd psi = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(N), static_cast<Eigen::Index>(R));
  Eigen::VectorXd mass(static_cast<Eigen::Index>(R));
  for (std::size_t r = 0; r < R; ++r) {
    const auto rc = static_cast<Eigen::Index>(r);
    const auto h = static_cast<Eigen::Index>(owner[r]);
    tau(rc) = model.weights(rc) * usage(h);
    if (tau(rc) > 0.0) psi.col(rc) = model.scores.row(h).transpose() / usage(h);
    mass(rc) = psi.col(rc).sum() * detail::column_product(model, r, p);
  }

  std::vector<PoissonSubproblem> problems(I);
  parallel_for(I, [&](std::size_t m) {
    auto d = design_for_mode_slice(t, problem.slices, p, m, model, psi);
    problems[m].counts = detail::counts_of(t, d.row_map);
    problems[m].design = std::move(d.values);
  });

  // A^(p) transposed: R x I, column m holds row m of Phi^(p) diag(tau)
  Eigen::MatrixXd a0 = (model.factors[p] * tau.asDiagonal()).transpose();
  const LoadingBlockPenalty penalty{problem.beta, problem.config.epsilon, &model.ranks};
  auto result = mm_poisson_regression_group(std::span<const PoissonSubproblem>(problems), mass, std::move(a0),
                                            penalty, problem.config.inner_tol, problem.config.max_inner);
  const Eigen::MatrixXd& a = result.coefficients;

  Eigen::VectorXd rho = a.rowwise().sum();
  for (std::size_t r = 0; r < R; ++r) {
    const auto rc = static_cast<Eigen::Index>(r);
    if (rho(rc) > kDeadMass) {
      model.factors[p].col(rc) = a.row(rc).transpose() / rho(rc);
    } else {
      model.factors[p].col(rc).setConstant(1.0 / static_cast<double>(I));
      rho(rc) = 0.0;
    }
  }
  for (std::size_t h = 0; h < model.terms(); ++h) {
    const auto begin = static_cast<Eigen::Index>(model.term_begin(h));
    const auto len = static_cast<Eigen::Index>(model.ranks[h]);
    const double sigma = rho.segment(begin, len).sum();
    const auto hr = static_cast<Eigen::Index>(h);
    if (sigma > 0.0) {
      model.weights.segment(begin, len) = rho.segment(begin, len) / sigma;
      model.scores.row(hr) *= sigma / usage(hr);
    } else {
      model.weights.segment(begin, len).setZero();
      model.scores.row(hr).setZero();
    }
  }
  return result.iterations;
}

// Positive random start: factor columns are normalized uniforms, weights
// uniform within each term, scores total/(H N) with +-10% noise.
inline CpBtdModel initialize(const SolverConfig& config, const std::vector<std::size_t>& tensor_shape,
                             double total_count) {
  config.validate();
  if (tensor_shape.size() < 2) throw DimensionError("tensor needs a factor mode and a replicate mode");
  std::vector<std::size_t> sizes(tensor_shape.begin(), tensor_shape.end() - 1);
  CpBtdModel model(sizes, std::vector<std::size_t>(config.terms, config.rank), tensor_shape.back());
  std::mt19937_64 rng(config.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (auto& f : model.factors) {
    for (Eigen::Index r = 0; r < f.cols(); ++r) {
      for (Eigen::Index i = 0; i < f.rows(); ++i) f(i, r) = 1.0 - unit(rng);  // (0, 1]
      f.col(r) /= f.col(r).sum();
    }
  }
  for (std::size_t h = 0; h < model.terms(); ++h)
    model.weights.segment(static_cast<Eigen::Index>(model.term_begin(h)), static_cast<Eigen::Index>(config.rank))
        .setConstant(1.0 / static_cast<double>(config.rank));
  const double base = std::max(total_count, 1.0) /
                      static_cast<double>(model.terms() * std::max<std::size_t>(1, model.replicates()));
  std::uniform_real_distribution<double> jitter(-0.1, 0.1);
  for (Eigen::Index n = 0; n < model.scores.cols(); ++n)
    for (Eigen::Index h = 0; h < model.scores.rows(); ++h) model.scores(h, n) = base * (1.0 + jitter(rng));
  return model;
}

inline CpBtdModel initialize(const SolverConfig& config, const SparseCountTensor& t) {
  return initialize(config, t.shape(), static_cast<double>(t.total_count()));
}

namespace detail {

inline void record(FitReport& report, const CpBtdModel& model, double penalized, double data,
                   std::size_t inner) {
  report.objective.push_back(penalized);
  report.data_objective.push_back(data);
  report.inner_iterations.push_back(inner);
  report.effective_terms.push_back(effective_terms(model));
}

inline void finish(FitReport& report, const CpBtdModel& model,
                   std::chrono::steady_clock::time_point start) {
  report.effective_ranks.clear();
  for (std::size_t h = 0; h < model.terms(); ++h) report.effective_ranks.push_back(effective_rank(model, h));
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

inline bool converged(double previous, double current, double tol) {
  const double scale = std::max(std::abs(previous), std::numeric_limits<double>::min());
  return std::abs(previous - current) <= tol * scale;
}

}  // namespace detail

struct FitResult {
  CpBtdModel model;
  FitReport report;
};

namespace detail {

// Runs `once(config, start)` from each random start and keeps the lowest
// final penalized objective. Aborted starts are skipped; if every start
// aborts, the first abort is rethrown.
template <class Once>
FitResult best_of_starts(const SparseCountTensor& t, const SolverConfig& config,
                         std::optional<CpBtdModel> start, Once&& once) {
  config.validate();
  if (start || config.restarts == 1) return once(t, config, std::move(start));
  std::optional<FitResult> best;
  std::exception_ptr first_error;
  for (std::size_t k = 0; k < config.restarts; ++k) {
    SolverConfig run = config;
    run.seed = config.start_seed(k);
    try {
      auto fit = once(t, run, std::nullopt);
      fit.report.restart = k;
      if (!best || fit.report.objective.back() < best->report.objective.back()) best = std::move(fit);
    } catch (const FitAborted&) {
      if (!first_error) first_error = std::current_exception();
    }
  }
  if (!best) std::rethrow_exception(first_error);
  return std::move(*best);
}

// Block nonlinear Gauss-Seidel: scores, then modes 1..P, until the relative
// change of the penalized objective drops below outer_tol.
inline FitResult fit_block_gs_once(const SparseCountTensor& t, const SolverConfig& config,
                                   std::optional<CpBtdModel> start) {
  const auto clock_start = std::chrono::steady_clock::now();
  if (t.empty()) throw ValidationError("cannot fit an empty tensor");
  FitProblem problem(t, config);
  FitResult out{start ? std::move(*start) : initialize(config, t), {}};
  auto& model = out.model;
  auto& report = out.report;
  check_compatible(model, t);
  model.validate();
  report.beta = problem.beta;

  double data = objective(model, t);
  double current = data + shrinkage_penalty(model, problem.beta, config.epsilon);
  detail::record(report, model, current, data, 0);
  for (std::size_t outer = 1; outer <= config.max_outer; ++outer) {
    std::size_t inner = 0;
    try {
      inner += update_scores(model, problem);
      for (std::size_t p = 0; p < model.modes(); ++p) inner += update_mode(model, problem, p);
    } catch (const SolverError& e) {
      detail::finish(report, model, clock_start);
      throw FitAborted(std::string("outer iteration ") + std::to_string(outer) + ": " + e.what(), model,
                       report);
    }
    data = objective(model, t);
    const double next = data + shrinkage_penalty(model, problem.beta, config.epsilon);
    detail::record(report, model, next, data, inner);
    report.outer_iterations = outer;
    if (!std::isfinite(next)) {
      detail::finish(report, model, clock_start);
      std::string where;
      if (auto j = first_zero_intensity_entry(model, t)) where = " (zero intensity at nonzero entry " + std::to_string(*j + 1) + ")";
      throw FitAborted("non-finite objective at outer iteration " + std::to_string(outer) + where, model,
                       report);
    }
    const bool done = detail::converged(current, next, config.outer_tol);
    current = next;
    if (done) {
      report.converged = true;
      break;
    }
  }
  detail::finish(report, model, clock_start);
  return out;
}

}  // namespace detail

// --- term structure moves -------------------------------------------------------------

// Components of term h with weight above the activity threshold.
inline std::vector<std::size_t> live_components(const CpBtdModel& model, std::size_t h) {
  std::vector<std::size_t> out;
  for (std::size_t k = 0; k < model.ranks[h]; ++k) {
    const std::size_t r = model.term_begin(h) + k;
    if (model.weights(static_cast<Eigen::Index>(r)) > kActivityThreshold) out.push_back(r);
  }
  return out;
}

namespace detail {

// Writes the components `src` of `from` into the slots of term h, with
// omega_r = tau_r / usage; unused slots become uniform with zero weight.
inline void place_components(CpBtdModel& to, const CpBtdModel& from, std::size_t h,
                             const std::vector<std::size_t>& src, const std::vector<double>& tau) {
  if (src.size() > to.ranks[h]) throw DimensionError("term has too few component slots");
  double usage = 0.0;
  for (double v : tau) usage += v;
  const std::size_t begin = to.term_begin(h);
  for (std::size_t k = 0; k < to.ranks[h]; ++k) {
    const auto r = static_cast<Eigen::Index>(begin + k);
    for (std::size_t p = 0; p < to.modes(); ++p) {
      if (k < src.size())
        to.factors[p].col(r) = from.factors[p].col(static_cast<Eigen::Index>(src[k]));
      else
        to.factors[p].col(r).setConstant(1.0 / static_cast<double>(to.mode_sizes[p]));
    }
    to.weights(r) = k < src.size() && usage > 0.0 ? tau[k] / usage : 0.0;
  }
}

inline std::vector<double> component_masses(const CpBtdModel& model, const std::vector<std::size_t>& comps,
                                            double usage) {
  std::vector<double> tau;
  for (auto r : comps) tau.push_back(model.weights(static_cast<Eigen::Index>(r)) * usage);
  return tau;
}

}  // namespace detail

// Term g folded into term h: h takes the live components of both and the
// summed scores; g is emptied. Needs enough component slots in h.
inline CpBtdModel merge_terms(const CpBtdModel& model, std::size_t h, std::size_t g) {
  if (h == g || h >= model.terms() || g >= model.terms()) throw DimensionError("invalid term pair");
  auto src = live_components(model, h);
  auto tau = detail::component_masses(model, src, model.usage(h));
  const auto lg = live_components(model, g);
  const auto tg = detail::component_masses(model, lg, model.usage(g));
  src.insert(src.end(), lg.begin(), lg.end());
  tau.insert(tau.end(), tg.begin(), tg.end());
  CpBtdModel out = model;
  detail::place_components(out, model, h, src, tau);
  detail::place_components(out, model, g, {}, {});
  out.scores.row(static_cast<Eigen::Index>(h)) += out.scores.row(static_cast<Eigen::Index>(g));
  out.scores.row(static_cast<Eigen::Index>(g)).setZero();
  return out;
}

// The live components of h selected by `subset` (bit i: i-th live
// component) move to the unused term g. Scores are shared out in proportion
// to component mass, so every intensity is unchanged.
inline CpBtdModel split_term(const CpBtdModel& model, std::size_t h, std::size_t g, std::uint64_t subset) {
  if (h == g || h >= model.terms() || g >= model.terms()) throw DimensionError("invalid term pair");
  const auto live = live_components(model, h);
  const double usage = model.usage(h);
  std::vector<std::size_t> moved, kept;
  for (std::size_t i = 0; i < live.size(); ++i) ((subset >> i) & 1u ? moved : kept).push_back(live[i]);
  if (moved.empty() || kept.empty()) throw ValidationError("split must leave components on both sides");
  const auto tm = detail::component_masses(model, moved, usage);
  const auto tk = detail::component_masses(model, kept, usage);
  double share = 0.0;
  for (double v : tm) share += v;
  share /= usage;
  CpBtdModel out = model;
  detail::place_components(out, model, g, moved, tm);
  detail::place_components(out, model, h, kept, tk);
  out.scores.row(static_cast<Eigen::Index>(g)) = model.scores.row(static_cast<Eigen::Index>(h)) * share;
  out.scores.row(static_cast<Eigen::Index>(h)) *= 1.0 - share;
  return out;
}

inline CpBtdModel drop_term(const CpBtdModel& model, std::size_t h) {
  if (h >= model.terms()) throw DimensionError("term does not exist");
  CpBtdModel out = model;
  out.scores.row(static_cast<Eigen::Index>(h)).setZero();
  return out;
}

namespace detail {

// Candidate structures around a fitted model: merges of term pairs whose
// live components fit one term (most correlated scores first), drops of
// single terms (smallest usage first), then splits into the first unused
// term.
inline std::vector<CpBtdModel> structure_candidates(const CpBtdModel& m) {
  std::vector<std::size_t> active;
  std::optional<std::size_t> unused;
  for (std::size_t h = 0; h < m.terms(); ++h) {
    if (m.usage(h) > kActivityThreshold)
      active.push_back(h);
    else if (!unused)
      unused = h;
  }
  std::vector<CpBtdModel> out;
  std::vector<std::tuple<double, std::size_t, std::size_t>> pairs;
  for (std::size_t a = 0; a < active.size(); ++a)
    for (std::size_t b = a + 1; b < active.size(); ++b) {
      const auto h = active[a], g = active[b];
      if (live_components(m, h).size() + live_components(m, g).size() > m.ranks[h]) continue;
      const Eigen::VectorXd u = m.scores.row(static_cast<Eigen::Index>(h)).normalized();
      const Eigen::VectorXd v = m.scores.row(static_cast<Eigen::Index>(g)).normalized();
      pairs.emplace_back(-u.dot(v), h, g);
    }
  std::ranges::sort(pairs);
  for (const auto& [key, h, g] : pairs) out.push_back(merge_terms(m, h, g));
  auto by_usage = active;
  std::ranges::stable_sort(by_usage, [&](auto a, auto b) { return m.usage(a) < m.usage(b); });
  for (auto h : by_usage) out.push_back(drop_term(m, h));
  if (unused)
    for (auto h : active) {
      const std::size_t k = live_components(m, h).size();
      if (k < 2 || k > 16) continue;
      // subsets without the first component: each partition once
      for (std::uint64_t subset = 2; subset < (std::uint64_t{1} << k); subset += 2)
        if (static_cast<std::size_t>(std::popcount(subset)) <= m.ranks[*unused])
          out.push_back(split_term(m, h, *unused, subset));
    }
  return out;
}

// First-improvement local search over term structure. Each candidate is
// refitted by block Gauss-Seidel and accepted when its penalized objective
// beats the incumbent by more than outer_tol (relative).
inline FitResult structure_search(const SparseCountTensor& t, const SolverConfig& config, FitResult best) {
  std::size_t moves = 0;
  for (bool improved = true; improved;) {
    improved = false;
    const double incumbent = best.report.objective.back();
    for (auto& candidate : structure_candidates(best.model)) {
      try {
        auto fit = fit_block_gs_once(t, config, std::move(candidate));
        if (fit.report.objective.back() < incumbent - config.outer_tol * std::abs(incumbent)) {
          best = std::move(fit);
          improved = true;
          ++moves;
          break;
        }
      } catch (const FitAborted&) {
        // the candidate left a positive count without intensity
      }
    }
  }
  best.report.moves = moves;
  return best;
}

inline FitResult fit_block_gs_searched(const SparseCountTensor& t, const SolverConfig& config,
                                       std::optional<CpBtdModel> start) {
  const auto clock_start = std::chrono::steady_clock::now();
  auto fit = fit_block_gs_once(t, config, std::move(start));
  if (!config.structure_moves) return fit;
  fit = structure_search(t, config, std::move(fit));
  fit.report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - clock_start).count();
  return fit;
}

}  // namespace detail

inline FitResult fit_block_gs(const SparseCountTensor& t, const SolverConfig& config,
                              std::optional<CpBtdModel> start = std::nullopt) {
  return detail::best_of_starts(t, config, std::move(start), detail::fit_block_gs_searched);
}

// --- EM backend --------------------------------------------------------------------

// Expected latent counts z(j, r) of nonzero j allotted to component r.
struct EmState {
  Eigen::MatrixXd responsibilities;  // nnz x R
};

inline EmState em_e_step(const CpBtdModel& model, const SparseCountTensor& t) {
  check_compatible(model, t);
  const std::size_t R = model.components(), last = t.modes() - 1;
  const auto owner = model.component_terms();
  EmState state{Eigen::MatrixXd(static_cast<Eigen::Index>(t.nnz()), static_cast<Eigen::Index>(R))};
  Eigen::VectorXd part(static_cast<Eigen::Index>(R));
  for (std::size_t j = 0; j < t.nnz(); ++j) {
    const auto idx = t.index(j);
    const auto n = static_cast<Eigen::Index>(idx[last]);
    for (std::size_t r = 0; r < R; ++r) {
      const auto rc = static_cast<Eigen::Index>(r);
      double v = model.scores(static_cast<Eigen::Index>(owner[r]), n) * model.weights(rc);
      for (std::size_t p = 0; p < model.modes() && v != 0.0; ++p)
        v *= model.factors[p](static_cast<Eigen::Index>(idx[p]), rc);
      part(rc) = v;
    }
    const double total = part.sum();
    if (!(total > 0.0))
      throw SolverError("zero intensity at nonzero entry " + std::to_string(j + 1));
    state.responsibilities.row(static_cast<Eigen::Index>(j)) = (static_cast<double>(t.count(j)) / total) * part;
  }
  return state;
}

// Closed-form maximization given the responsibilities. The score update is
// the ratio sum(z) / sum_{r in h} omega_r prod_p colsum(phi_p,r), which
// equals sum(z) whenever the factors are stochastic.
inline void em_m_step(CpBtdModel& model, const SparseCountTensor& t, const EmState& state) {
  const std::size_t R = model.components(), last = t.modes() - 1;
  const auto& z = state.responsibilities;
  const Eigen::VectorXd mass = z.colwise().sum().transpose();
  for (std::size_t p = 0; p < model.modes(); ++p) {
    Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(model.mode_sizes[p]),
                                                static_cast<Eigen::Index>(R));
    for (std::size_t j = 0; j < t.nnz(); ++j)
      acc.row(static_cast<Eigen::Index>(t.index(j, p))) += z.row(static_cast<Eigen::Index>(j));
    for (std::size_t r = 0; r < R; ++r) {
      const auto rc = static_cast<Eigen::Index>(r);
      if (mass(rc) > kDeadMass)
        model.factors[p].col(rc) = acc.col(rc) / mass(rc);
      else
        model.factors[p].col(rc).setConstant(1.0 / static_cast<double>(model.mode_sizes[p]));
    }
  }
  for (std::size_t h = 0; h < model.terms(); ++h) {
    const auto begin = static_cast<Eigen::Index>(model.term_begin(h));
    const auto len = static_cast<Eigen::Index>(model.ranks[h]);
    Eigen::VectorXd block = mass.segment(begin, len);
    for (Eigen::Index k = 0; k < len; ++k)
      if (!(block(k) > kDeadMass)) block(k) = 0.0;
    const double sigma = block.sum();
    model.weights.segment(begin, len) = sigma > 0.0 ? Eigen::VectorXd(block / sigma) : Eigen::VectorXd::Zero(len);
  }
  Eigen::MatrixXd usage = Eigen::MatrixXd::Zero(model.scores.rows(), model.scores.cols());
  const auto owner = model.component_terms();
  for (std::size_t j = 0; j < t.nnz(); ++j) {
    const auto n = static_cast<Eigen::Index>(t.index(j, last));
    for (std::size_t r = 0; r < R; ++r)
      usage(static_cast<Eigen::Index>(owner[r]), n) += z(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(r));
  }
  Eigen::VectorXd denom = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(model.terms()));
  for (std::size_t r = 0; r < R; ++r)
    denom(static_cast<Eigen::Index>(owner[r])) +=
        model.weights(static_cast<Eigen::Index>(r)) * detail::column_product(model, r, std::nullopt);
  for (std::size_t h = 0; h < model.terms(); ++h) {
    const auto hr = static_cast<Eigen::Index>(h);
    if (denom(hr) > 0.0)
      model.scores.row(hr) = usage.row(hr) / denom(hr);
    else
      model.scores.row(hr).setZero();
  }
}

namespace detail {

inline FitResult fit_em_once(const SparseCountTensor& t, const SolverConfig& config,
                             std::optional<CpBtdModel> start) {
  const auto clock_start = std::chrono::steady_clock::now();
  config.validate();
  if (t.empty()) throw ValidationError("cannot fit an empty tensor");
  FitResult out{start ? std::move(*start) : initialize(config, t), {}};
  auto& model = out.model;
  auto& report = out.report;
  check_compatible(model, t);
  model.validate();
  const std::uint64_t cells = static_cast<std::uint64_t>(t.nnz()) * model.components();
  if (cells > config.em_max_responsibilities)
    throw SolverError("EM needs " + std::to_string(cells) + " responsibilities, above the cap of " +
                      std::to_string(config.em_max_responsibilities) + "; use the block Gauss-Seidel backend");

  double current = objective(model, t);
  detail::record(report, model, current, current, 0);
  for (std::size_t outer = 1; outer <= config.max_outer; ++outer) {
    try {
      em_m_step(model, t, em_e_step(model, t));
    } catch (const SolverError& e) {
      detail::finish(report, model, clock_start);
      throw FitAborted(std::string("EM iteration ") + std::to_string(outer) + ": " + e.what(), model, report);
    }
    const double next = objective(model, t);
    detail::record(report, model, next, next, 1);
    report.outer_iterations = outer;
    if (!std::isfinite(next)) {
      detail::finish(report, model, clock_start);
      throw FitAborted("non-finite objective at EM iteration " + std::to_string(outer), model, report);
    }
    const bool done = detail::converged(current, next, config.outer_tol);
    current = next;
    if (done) {
      report.converged = true;
      break;
    }
  }
  detail::finish(report, model, clock_start);
  return out;
}

}  // namespace detail

// Unpenalized maximum likelihood by EM. The shrinkage settings of `config`
// do not apply to this backend.
inline FitResult fit_em(const SparseCountTensor& t, const SolverConfig& config,
                        std::optional<CpBtdModel> start = std::nullopt) {
  return detail::best_of_starts(t, config, std::move(start), detail::fit_em_once);
}

// `outer_iter,objective,inner_iters_total,effective_H`
inline void write_report_csv(std::ostream& out, const FitReport& report) {
  out << "outer_iter,objective,inner_iters_total,effective_H\n";
  for (std::size_t i = 0; i < report.objective.size(); ++i)
    out << i << ',' << format_real(report.objective[i]) << ',' << report.inner_iterations[i] << ','
        << report.effective_terms[i] << '\n';
}

}  // namespace mrtensor
