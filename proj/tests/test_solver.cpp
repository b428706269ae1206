#include <gtest/gtest.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <random>

#include "helpers.hpp"
#include "oracles.hpp"

using namespace mrtensor;
using mrtensor::fixtures::random_model;
using mrtensor::fixtures::random_tensor;

namespace {

TEST(MmRegression, MatchesGridOracle) {
  std::mt19937_64 rng(101);
  for (int trial = 0; trial < 40; ++trial) {
    const std::size_t k = 1 + static_cast<std::size_t>(trial % 3);
    const auto sp = fixtures::random_regression(rng, 2 + static_cast<std::size_t>(trial % 5), k);
    const Eigen::VectorXd b0 = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(k), 1.0);
    const auto res = mm_poisson_regression(sp, b0, 1e-13, 200000);
    const Eigen::VectorXd b = res.coefficients.col(0);
    EXPECT_NEAR(b.sum(), sp.counts.sum(), 1e-10 * sp.counts.sum());
    const double mm = regression_objective(sp, b);
    const double grid = fixtures::simplex_grid_minimum(sp);
    EXPECT_LE(mm, grid + 1e-6) << "trial " << trial;
    EXPECT_GE(mm, grid - 1e-6) << "trial " << trial;
  }
}

TEST(MmRegression, ConservesCountsAfterOneSweep) {
  std::mt19937_64 rng(102);
  const auto sp = fixtures::random_regression(rng, 6, 3);
  const auto res = mm_poisson_regression(sp, Eigen::Vector3d(0.3, 7.0, 2.0), 1e-12, 1);
  EXPECT_EQ(res.iterations, 1u);
  EXPECT_NEAR(res.coefficients.sum(), sp.counts.sum(), 1e-12 * sp.counts.sum());
}

TEST(MmRegression, ObjectiveNeverIncreases) {
  std::mt19937_64 rng(103);
  for (int trial = 0; trial < 20; ++trial) {
    const auto sp = fixtures::random_regression(rng, 6, 3);
    Eigen::VectorXd b = Eigen::Vector3d(1.0, 2.0, 3.0);
    double prev = regression_objective(sp, b);
    for (int it = 0; it < 50; ++it) {
      b = mm_poisson_regression(sp, b, 1e-300, 1).coefficients.col(0);
      const double next = regression_objective(sp, b);
      ASSERT_LE(next, prev + 1e-12 * std::abs(prev));
      prev = next;
    }
  }
}

TEST(MmRegression, RejectsInvalidInput) {
  PoissonSubproblem sp;
  sp.design = RowMatrix(2, 2);
  sp.design << 0.5, 0.0, 0.0, 0.0;
  sp.counts = Eigen::Vector2d(1.0, 2.0);
  EXPECT_THROW(mm_poisson_regression(sp, Eigen::Vector2d(1, 1), 1e-8, 10), SolverError);
  sp.design(1, 1) = 0.5;
  EXPECT_THROW(mm_poisson_regression(sp, Eigen::Vector2d(0, 1), 1e-8, 10), ValidationError);
  EXPECT_THROW(mm_poisson_regression(sp, Eigen::Vector3d(1, 1, 1), 1e-8, 10), DimensionError);
  sp.counts(0) = std::nan("");
  EXPECT_THROW(mm_poisson_regression(sp, Eigen::Vector2d(1, 1), 1e-8, 10), ValidationError);
}

TEST(GroupRegression, ZeroBetaEqualsColumnwise) {
  std::mt19937_64 rng(104);
  std::vector<PoissonSubproblem> problems = {fixtures::random_regression(rng, 5, 3),
                                             fixtures::random_regression(rng, 4, 3)};
  const Eigen::MatrixXd b0 = Eigen::MatrixXd::Ones(3, 2);
  const Eigen::VectorXd mass = Eigen::VectorXd::Ones(3);
  const auto group = mm_poisson_regression_group(std::span<const PoissonSubproblem>(problems), mass, b0,
                                                 LogSumPenalty{0.0, 1e-8}, 1e-300, 30);
  for (int n = 0; n < 2; ++n) {
    const auto single = mm_poisson_regression(problems[static_cast<std::size_t>(n)], b0.col(n), 1e-300, 30);
    EXPECT_LE((group.coefficients.col(n) - single.coefficients.col(0)).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(GroupRegression, PenalizedSweepsAreMonotone) {
  std::mt19937_64 rng(105);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<PoissonSubproblem> problems;
    for (int n = 0; n < 3; ++n) problems.push_back(fixtures::random_regression(rng, 6, 3));
    const Eigen::VectorXd mass = Eigen::VectorXd::Ones(3);
    const LogSumPenalty pen{2.0, 1e-6};
    Eigen::MatrixXd b = Eigen::MatrixXd::Ones(3, 3);
    double prev = group_objective(std::span<const PoissonSubproblem>(problems), mass, b, pen);
    for (int it = 0; it < 100; ++it) {
      b = mm_poisson_regression_group(std::span<const PoissonSubproblem>(problems), mass, b, pen, 1e-300, 1)
              .coefficients;
      const double next = group_objective(std::span<const PoissonSubproblem>(problems), mass, b, pen);
      ASSERT_LE(next, prev + 1e-10 * std::abs(prev));
      prev = next;
    }
  }
}

TEST(GroupRegression, TinyPenalizedInstanceMatchesGrid) {
  std::mt19937_64 rng(106);
  std::vector<PoissonSubproblem> problems;
  for (int n = 0; n < 2; ++n) {
    PoissonSubproblem sp;
    sp.design = RowMatrix(2, 2);
    sp.design << 0.9, 0.1, 0.1, 0.9;
    sp.counts = n == 0 ? Eigen::Vector2d(20.0, 3.0) : Eigen::Vector2d(4.0, 18.0);
    problems.push_back(sp);
  }
  const Eigen::VectorXd mass = Eigen::VectorXd::Ones(2);
  const LogSumPenalty pen{1.0, 1.0};
  const auto res = mm_poisson_regression_group(std::span<const PoissonSubproblem>(problems), mass,
                                               Eigen::MatrixXd::Constant(2, 2, 3.0), pen, 1e-14, 200000);
  const double mm = group_objective(std::span<const PoissonSubproblem>(problems), mass, res.coefficients, pen);
  auto f = [&](const Eigen::VectorXd& v) {
    const Eigen::MatrixXd b = Eigen::Map<const Eigen::MatrixXd>(v.data(), 2, 2);
    return group_objective(std::span<const PoissonSubproblem>(problems), mass, b, pen);
  };
  const double grid = fixtures::zoom_grid_minimum(f, Eigen::VectorXd::Zero(4), Eigen::VectorXd::Constant(4, 30.0), 21, 12);
  EXPECT_NEAR(mm, grid, 1e-4);
}

double penalized(const CpBtdModel& m, const FitProblem& p) { return penalized_objective(m, p); }

TEST(BlockUpdates, EachBlockDecreasesPenalizedObjective) {
  std::mt19937_64 rng(107);
  for (double beta : {0.0, 0.05}) {
    auto m = random_model(rng, {4, 3, 4}, {2, 2, 1}, 3);
    const auto t = random_tensor(rng, {4, 3, 4, 3}, 0.3);
    SolverConfig cfg;
    cfg.beta = beta;
    const FitProblem problem(t, cfg);
    double prev = penalized(m, problem);
    for (int sweep = 0; sweep < 3; ++sweep) {
      update_scores(m, problem);
      double next = penalized(m, problem);
      EXPECT_LE(next, prev + 1e-10 * std::abs(prev));
      prev = next;
      for (std::size_t p = 0; p < 3; ++p) {
        update_mode(m, problem, p);
        EXPECT_NO_THROW(m.validate());
        next = penalized(m, problem);
        EXPECT_LE(next, prev + 1e-10 * std::abs(prev)) << "beta " << beta << " mode " << p;
        prev = next;
      }
    }
  }
}

TEST(BlockUpdates, FrozenComponentStaysFrozen) {
  std::mt19937_64 rng(108);
  auto m = random_model(rng, {3, 3}, {2, 1}, 2);
  m.weights.segment(0, 2) << 1.0, 0.0;
  const auto t = random_tensor(rng, {3, 3, 2}, 0.6);
  const FitProblem problem(t, SolverConfig{});
  update_scores(m, problem);
  for (std::size_t p = 0; p < 2; ++p) update_mode(m, problem, p);
  EXPECT_EQ(m.weights(1), 0.0);
  EXPECT_TRUE((m.factors[0].col(1).array() == 1.0 / 3.0).all());
}

TEST(BlockUpdates, SingletonModeIsTrivial) {
  std::mt19937_64 rng(109);
  auto m = random_model(rng, {1, 3}, {2}, 2);
  const auto t = random_tensor(rng, {1, 3, 2}, 0.8);
  const FitProblem problem(t, SolverConfig{});
  const double before = objective(m, t);
  update_mode(m, problem, 0);
  EXPECT_TRUE((m.factors[0].array() == 1.0).all());
  EXPECT_EQ(objective(m, t), before);
}

TEST(MmRegression, HandExamples) {
  PoissonSubproblem one;
  one.design = RowMatrix(2, 1);
  one.design << 0.5, 0.5;
  one.counts = Eigen::Vector2d(2.0, 3.0);
  const auto r1 = mm_poisson_regression(one, Eigen::VectorXd::Constant(1, 0.7), 1e-12, 1);
  EXPECT_DOUBLE_EQ(r1.coefficients(0, 0), 5.0);
  PoissonSubproblem sep;
  sep.design = RowMatrix::Identity(2, 2);
  sep.counts = Eigen::Vector2d(4.0, 7.0);
  const auto r2 = mm_poisson_regression(sep, Eigen::Vector2d(1.0, 1.0), 1e-12, 10);
  EXPECT_DOUBLE_EQ(r2.coefficients(0, 0), 4.0);
  EXPECT_DOUBLE_EQ(r2.coefficients(1, 0), 7.0);
}

TEST(GroupRegression, PenaltyShrinksRowSums) {
  std::mt19937_64 rng(120);
  std::vector<PoissonSubproblem> problems;
  for (int n = 0; n < 4; ++n) problems.push_back(fixtures::random_regression(rng, 6, 3));
  const Eigen::VectorXd mass = Eigen::VectorXd::Ones(3);
  const Eigen::MatrixXd b0 = Eigen::MatrixXd::Ones(3, 4);
  const std::span<const PoissonSubproblem> ps(problems);
  const auto free = mm_poisson_regression_group(ps, mass, b0, LogSumPenalty{0.0, 1e-8}, 1e-10, 5000);
  const auto shrunk = mm_poisson_regression_group(ps, mass, b0, LogSumPenalty{3.0, 1e-8}, 1e-10, 5000);
  EXPECT_LE(shrunk.coefficients.sum(), free.coefficients.sum());
  // mass can move between rows, but the weakest row only loses
  Eigen::Index weakest = 0;
  free.coefficients.rowwise().sum().minCoeff(&weakest);
  EXPECT_LE(shrunk.coefficients.row(weakest).sum(), free.coefficients.row(weakest).sum());
}

TEST(BlockUpdates, EmptyReplicateScoresVanish) {
  std::mt19937_64 rng(121);
  auto m = random_model(rng, {3, 3}, {1, 2}, 3);
  auto full = random_tensor(rng, {3, 3, 3}, 0.7);
  std::vector<Index> coords;
  std::vector<Count> counts;
  for (std::size_t j = 0; j < full.nnz(); ++j)
    if (full.index(j, 2) != 1) {
      const auto idx = full.index(j);
      coords.insert(coords.end(), idx.begin(), idx.end());
      counts.push_back(full.count(j));
    }
  const auto t = SparseCountTensor::from_coordinates({3, 3, 3}, coords, counts);
  SolverConfig cfg;
  cfg.beta = 0.0;
  update_scores(m, FitProblem(t, cfg));
  EXPECT_TRUE((m.scores.col(1).array() == 0.0).all());
  EXPECT_TRUE((m.scores.col(0).array() > 0.0).all());
}

TEST(BlockUpdates, IdenticalReplicatesGetIdenticalScores) {
  std::mt19937_64 rng(122);
  auto m = random_model(rng, {3, 3}, {1, 2}, 2);
  m.scores.col(1) = m.scores.col(0);
  const auto half = random_tensor(rng, {3, 3, 1}, 0.7);
  std::vector<Index> coords;
  std::vector<Count> counts;
  for (Index n = 0; n < 2; ++n)
    for (std::size_t j = 0; j < half.nnz(); ++j) {
      coords.insert(coords.end(), {half.index(j, 0), half.index(j, 1), n});
      counts.push_back(half.count(j));
    }
  const auto t = SparseCountTensor::from_coordinates({3, 3, 2}, coords, counts);
  update_scores(m, FitProblem(t, SolverConfig{}));
  EXPECT_TRUE(m.scores.col(0) == m.scores.col(1));
}

TEST(Em, RankOneLandsOnEmpiricalMarginals) {
  std::mt19937_64 rng(123);
  const auto t = random_tensor(rng, {3, 4, 2}, 0.6);
  SolverConfig cfg;
  cfg.terms = 1;
  cfg.rank = 1;
  auto m = initialize(cfg, t);
  em_m_step(m, t, em_e_step(m, t));
  const double total = static_cast<double>(t.total_count());
  for (std::size_t p = 0; p < 2; ++p) {
    Eigen::VectorXd marginal = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(t.shape()[p]));
    for (std::size_t j = 0; j < t.nnz(); ++j) marginal(t.index(j, p)) += static_cast<double>(t.count(j));
    EXPECT_LE((m.factors[p].col(0) - marginal / total).cwiseAbs().maxCoeff(), 1e-12);
  }
  Eigen::VectorXd per_replicate = Eigen::VectorXd::Zero(2);
  for (std::size_t j = 0; j < t.nnz(); ++j) per_replicate(t.index(j, 2)) += static_cast<double>(t.count(j));
  EXPECT_LE((m.scores.row(0).transpose() - per_replicate).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(FitBlockGs, TraceIsMonotoneAndStartsAtInitialization) {
  std::mt19937_64 rng(110);
  const auto t = random_tensor(rng, {4, 4, 4, 4, 5}, 0.05, 3);
  SolverConfig cfg;
  cfg.terms = 4;
  cfg.rank = 2;
  cfg.max_outer = 15;
  const auto fit = fit_block_gs(t, cfg);
  const auto& obj = fit.report.objective;
  ASSERT_EQ(obj.size(), fit.report.outer_iterations + 1);
  EXPECT_NEAR(obj[0], penalized_objective(initialize(cfg, t), t, cfg.beta_for(t), cfg.epsilon), 1e-9 * std::abs(obj[0]));
  for (std::size_t i = 1; i < obj.size(); ++i) EXPECT_LE(obj[i], obj[i - 1] + 1e-10 * std::abs(obj[i - 1]));
  EXPECT_EQ(fit.report.effective_ranks.size(), 4u);
  EXPECT_NO_THROW(fit.model.validate());
}

TEST(FitBlockGs, ZeroOuterIterationsReturnsInitialization) {
  std::mt19937_64 rng(111);
  const auto t = random_tensor(rng, {4, 4, 3}, 0.3);
  SolverConfig cfg;
  cfg.terms = 3;
  cfg.rank = 2;
  cfg.max_outer = 0;
  const auto fit = fit_block_gs(t, cfg);
  EXPECT_EQ(fit.model, initialize(cfg, t));
  EXPECT_EQ(fit.report.objective.size(), 1u);
}

TEST(FitBlockGs, DeterministicGivenSeed) {
  std::mt19937_64 rng(112);
  const auto t = random_tensor(rng, {4, 4, 3}, 0.4);
  SolverConfig cfg;
  cfg.terms = 3;
  cfg.rank = 2;
  cfg.max_outer = 5;
  cfg.seed = 42;
  const auto a = fit_block_gs(t, cfg), b = fit_block_gs(t, cfg);
  EXPECT_EQ(a.model, b.model);
  EXPECT_EQ(a.report.objective, b.report.objective);
  cfg.seed = 43;
  EXPECT_FALSE(fit_block_gs(t, cfg).model == a.model);
}

TEST(FitBlockGs, RecoversPlantedRankOneMotif) {
  std::mt19937_64 rng(113);
  auto truth = random_model(rng, {4, 4}, {1}, 6, 1.0);
  truth.factors[0].col(0) << 0.7, 0.1, 0.1, 0.1;
  truth.factors[1].col(0) << 0.05, 0.05, 0.1, 0.8;
  Eigen::MatrixXd rates = Eigen::MatrixXd::Constant(1, 6, 400.0);
  truth.scores = rates;
  const auto t = simulate(truth, rates, 7);
  SolverConfig cfg;
  cfg.terms = 1;
  cfg.rank = 1;
  cfg.beta = 0.0;
  cfg.max_outer = 200;
  const auto fit = fit_block_gs(t, cfg);
  const double generating = objective(truth, t);
  EXPECT_LE(std::abs(fit.report.data_objective.back() - generating), 0.01 * std::abs(generating));
  EXPECT_LE(fit.report.data_objective.back(), generating);
}

TEST(FitBlockGs, RejectsEmptyTensor) {
  EXPECT_THROW(fit_block_gs(SparseCountTensor(std::vector<std::size_t>{2, 2}), SolverConfig{}), ValidationError);
  SolverConfig bad;
  bad.terms = 0;
  std::mt19937_64 rng(114);
  EXPECT_THROW(fit_block_gs(random_tensor(rng, {2, 2}, 0.5), bad), ValidationError);
}

TEST(FitBlockGs, RestartsKeepLowestObjective) {
  std::mt19937_64 rng(119);
  const auto t = random_tensor(rng, {4, 4, 4, 3}, 0.3);
  SolverConfig cfg;
  cfg.terms = 4;
  cfg.rank = 2;
  cfg.max_outer = 15;
  cfg.seed = 5;
  cfg.restarts = 4;
  const auto best = fit_block_gs(t, cfg);
  // oracle: each start run on its own
  std::vector<double> finals;
  for (std::size_t k = 0; k < cfg.restarts; ++k) {
    SolverConfig one = cfg;
    one.restarts = 1;
    one.seed = cfg.start_seed(k);
    finals.push_back(fit_block_gs(t, one).report.objective.back());
  }
  const auto low = std::min_element(finals.begin(), finals.end());
  EXPECT_EQ(best.report.objective.back(), *low);
  EXPECT_EQ(best.report.restart, static_cast<std::size_t>(low - finals.begin()));
  EXPECT_EQ(cfg.start_seed(0), cfg.seed);
}

TEST(FitBlockGs, ExplicitStartIgnoresRestarts) {
  std::mt19937_64 rng(120);
  const auto t = random_tensor(rng, {4, 4, 3}, 0.4);
  SolverConfig cfg;
  cfg.terms = 2;
  cfg.rank = 2;
  cfg.max_outer = 5;
  const auto start = initialize(cfg, t);
  cfg.restarts = 3;
  EXPECT_EQ(fit_block_gs(t, cfg, start).model, fit_block_gs(t, cfg, start).model);
  EXPECT_EQ(fit_block_gs(t, cfg, start).report.restart, 0u);
  cfg.restarts = 0;
  EXPECT_THROW(fit_block_gs(t, cfg), ValidationError);
}

double max_intensity_gap(const CpBtdModel& a, const CpBtdModel& b) {
  const auto x = dense_reconstruct(a), y = dense_reconstruct(b);
  double gap = 0.0;
  for (std::size_t c = 0; c < x.values.size(); ++c) gap = std::max(gap, std::abs(x.values[c] - y.values[c]));
  return gap;
}

TEST(StructureMoves, SplitKeepsEveryIntensity) {
  std::mt19937_64 rng(121);
  auto m = random_model(rng, {4, 4}, {3, 3}, 5, 10.0);
  m.scores.row(1).setZero();
  for (std::uint64_t subset : {2u, 4u, 6u}) {
    const auto s = split_term(m, 0, 1, subset);
    s.validate();
    EXPECT_LE(max_intensity_gap(m, s), 1e-12);
    EXPECT_EQ(live_components(s, 1).size(), static_cast<std::size_t>(std::popcount(subset)));
    EXPECT_NEAR(s.usage(0) + s.usage(1), m.usage(0), 1e-12);
  }
  EXPECT_THROW(split_term(m, 0, 1, 7u), ValidationError);
}

TEST(StructureMoves, MergeOfProportionalTermsKeepsIntensity) {
  std::mt19937_64 rng(122);
  auto m = random_model(rng, {4, 4}, {3, 1, 3}, 4, 10.0);
  m.weights(2) = 0.0;  // the first term keeps two live components
  m.weights.head(2) /= m.weights.head(2).sum();
  m.scores.row(1) = 0.4 * m.scores.row(0);
  const auto merged = merge_terms(m, 0, 1);
  merged.validate();
  EXPECT_LE(max_intensity_gap(m, merged), 1e-12);
  EXPECT_EQ(merged.usage(1), 0.0);
  EXPECT_EQ(live_components(merged, 0).size(), 3u);
  EXPECT_THROW(merge_terms(m, 0, 2), DimensionError);  // 2 + 3 components exceed the slots
}

TEST(StructureMoves, DropRemovesOneTerm) {
  std::mt19937_64 rng(123);
  const auto m = random_model(rng, {4, 4}, {2, 2}, 3);
  const auto d = drop_term(m, 1);
  EXPECT_EQ(d.usage(1), 0.0);
  EXPECT_EQ(d.scores.row(0), m.scores.row(0));
}

TEST(StructureMoves, SearchNeverRaisesTheObjective) {
  std::mt19937_64 rng(124);
  const auto truth = random_model(rng, {4, 4, 4, 4}, {1, 2}, 6, 150.0);
  const auto t = simulate(truth, truth.scores, 3);
  SolverConfig cfg;
  cfg.terms = 5;
  cfg.rank = 2;
  cfg.seed = 8;
  const auto plain = fit_block_gs(t, cfg);
  cfg.structure_moves = true;
  const auto searched = fit_block_gs(t, cfg);
  EXPECT_LE(searched.report.objective.back(), plain.report.objective.back());
  EXPECT_EQ(searched.report.moves == 0, searched.report.objective.back() == plain.report.objective.back());
  const auto& obj = searched.report.objective;
  for (std::size_t i = 1; i < obj.size(); ++i) EXPECT_LE(obj[i], obj[i - 1] + 1e-10 * std::abs(obj[i - 1]));
}

TEST(Em, ResponsibilitiesPartitionCounts) {
  std::mt19937_64 rng(115);
  const auto m = random_model(rng, {3, 4}, {2, 1}, 3);
  const auto t = random_tensor(rng, {3, 4, 3}, 0.5);
  const auto state = em_e_step(m, t);
  for (std::size_t j = 0; j < t.nnz(); ++j)
    EXPECT_NEAR(state.responsibilities.row(static_cast<Eigen::Index>(j)).sum(), static_cast<double>(t.count(j)), 1e-12);
}

TEST(Em, ScoreUpdateIsSumOfResponsibilities) {
  std::mt19937_64 rng(116);
  auto m = random_model(rng, {3, 4}, {2, 1}, 3);
  const auto t = random_tensor(rng, {3, 4, 3}, 0.5);
  const auto state = em_e_step(m, t);
  em_m_step(m, t, state);
  m.validate();
  for (std::size_t n = 0; n < 3; ++n) {
    double z0 = 0.0;
    for (std::size_t j = 0; j < t.nnz(); ++j)
      if (t.index(j, 2) == n) z0 += state.responsibilities(static_cast<Eigen::Index>(j), 0) + state.responsibilities(static_cast<Eigen::Index>(j), 1);
    EXPECT_NEAR(m.scores(0, static_cast<Eigen::Index>(n)), z0, 1e-10);
  }
}

TEST(Em, TraceIsMonotone) {
  std::mt19937_64 rng(117);
  const auto t = random_tensor(rng, {4, 4, 4, 3}, 0.2);
  SolverConfig cfg;
  cfg.terms = 2;
  cfg.rank = 2;
  cfg.max_outer = 60;
  const auto fit = fit_em(t, cfg);
  const auto& obj = fit.report.objective;
  for (std::size_t i = 1; i < obj.size(); ++i) EXPECT_LE(obj[i], obj[i - 1] + 1e-10 * std::abs(obj[i - 1]));
}

TEST(Em, MemoryGuard) {
  std::mt19937_64 rng(118);
  const auto t = random_tensor(rng, {4, 4, 3}, 0.5);
  SolverConfig cfg;
  cfg.terms = 2;
  cfg.rank = 2;
  cfg.em_max_responsibilities = 3;
  EXPECT_THROW(fit_em(t, cfg), SolverError);
}

TEST(Initialize, PositiveAndStochastic) {
  SolverConfig cfg;
  cfg.terms = 3;
  cfg.rank = 2;
  const auto m = initialize(cfg, {4, 4, 5}, 300.0);
  m.validate();
  EXPECT_TRUE((m.factors[0].array() > 0.0).all());
  EXPECT_TRUE((m.scores.array() > 0.0).all());
  EXPECT_NEAR(m.scores.sum(), 300.0, 30.0);
  EXPECT_DOUBLE_EQ(m.weights(0), 0.5);
}

TEST(ReportCsv, Columns) {
  FitReport r;
  r.objective = {10.0, 5.5};
  r.inner_iterations = {0, 12};
  r.effective_terms = {3, 2};
  std::ostringstream out;
  write_report_csv(out, r);
  EXPECT_EQ(out.str(), "outer_iter,objective,inner_iters_total,effective_H\n0,10,0,3\n1,5.5,12,2\n");
}

}  // namespace
