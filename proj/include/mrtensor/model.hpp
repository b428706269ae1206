#pragma once

// Poisson CP block-term model
//
//   lambda(i_1..i_P, n) = sum_h upsilon(h,n) sum_{r in h} omega(r) prod_p phi_p(i_p, r)
//
// Components r = 0..R-1 are laid out term after term; term h owns the
// contiguous range [term_begin(h), term_begin(h) + ranks[h]). Every active
// factor column and every active weight block is a probability vector.
// Components that have been shrunk away keep their slot with a uniform
// factor column and zero weight.

#include <Eigen/Dense>

#include <charconv>
#include <cmath>
#include <cstddef>
#include <istream>
#include <limits>
#include <numeric>
#include <optional>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "mrtensor/error.hpp"
#include "mrtensor/mrencode.hpp"
#include "mrtensor/sparse_tensor.hpp"

namespace mrtensor {

inline constexpr double kActivityThreshold = 1e-10;
inline constexpr double kNormalizationTolerance = 1e-8;

struct CpBtdModel {
  std::vector<std::size_t> mode_sizes;   // I_p, p = 1..P
  std::vector<std::size_t> ranks;        // R_h, h = 1..H
  std::vector<Eigen::MatrixXd> factors;  // Phi^(p): I_p x R
  Eigen::VectorXd weights;               // omega, stacked per term: R
  Eigen::MatrixXd scores;                // Upsilon: H x N

  CpBtdModel() = default;

  // Zero-initialized model of the given dimensions.
  CpBtdModel(std::vector<std::size_t> sizes, std::vector<std::size_t> term_ranks,
             std::size_t replicates)
      : mode_sizes(std::move(sizes)), ranks(std::move(term_ranks)) {
    if (mode_sizes.empty()) throw DimensionError("model needs at least one mode");
    if (ranks.empty()) throw DimensionError("model needs at least one term");
    for (auto i : mode_sizes)
      if (i == 0) throw DimensionError("mode sizes must be positive");
    for (auto r : ranks)
      if (r == 0) throw DimensionError("term ranks must be positive");
    const auto R = static_cast<Eigen::Index>(components());
    for (auto i : mode_sizes) factors.emplace_back(Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(i), R));
    weights = Eigen::VectorXd::Zero(R);
    scores = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(ranks.size()),
                                   static_cast<Eigen::Index>(replicates));
  }

  std::size_t modes() const { return mode_sizes.size(); }
  std::size_t terms() const { return ranks.size(); }
  std::size_t replicates() const { return static_cast<std::size_t>(scores.cols()); }
  std::size_t components() const { return std::accumulate(ranks.begin(), ranks.end(), std::size_t{0}); }

  std::size_t term_begin(std::size_t h) const {
    return std::accumulate(ranks.begin(), ranks.begin() + static_cast<std::ptrdiff_t>(h), std::size_t{0});
  }

  // Term owning each component.
  std::vector<std::size_t> component_terms() const {
    std::vector<std::size_t> out;
    out.reserve(components());
    for (std::size_t h = 0; h < ranks.size(); ++h) out.insert(out.end(), ranks[h], h);
    return out;
  }

  double weight_sum(std::size_t h) const {
    return weights.segment(static_cast<Eigen::Index>(term_begin(h)), static_cast<Eigen::Index>(ranks[h])).sum();
  }
  double usage(std::size_t h) const { return scores.row(static_cast<Eigen::Index>(h)).sum(); }
  bool has_motif(std::size_t h) const { return weight_sum(h) > 0.0; }
  bool term_active(std::size_t h) const { return has_motif(h) && usage(h) > 0.0; }

  // Block-diagonal R x H matrix with omega_h in column h.
  Eigen::MatrixXd omega_matrix() const {
    Eigen::MatrixXd omega = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(components()),
                                                  static_cast<Eigen::Index>(terms()));
    std::size_t r = 0;
    for (std::size_t h = 0; h < terms(); ++h)
      for (std::size_t k = 0; k < ranks[h]; ++k, ++r)
        omega(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(h)) = weights(static_cast<Eigen::Index>(r));
    return omega;
  }

  // Checks shapes, nonnegativity and the simplex constraints.
  void validate() const {
    const auto R = static_cast<Eigen::Index>(components());
    if (factors.size() != modes()) throw DimensionError("one factor matrix per mode required");
    for (std::size_t p = 0; p < modes(); ++p) {
      const auto& f = factors[p];
      if (f.rows() != static_cast<Eigen::Index>(mode_sizes[p]) || f.cols() != R)
        throw DimensionError("factor " + std::to_string(p + 1) + " has wrong shape");
      if ((f.array() < 0.0).any() || !f.allFinite())
        throw ValidationError("factor " + std::to_string(p + 1) + " has negative or non-finite entries");
    }
    if (weights.size() != R) throw DimensionError("weight vector has wrong length");
    if (scores.rows() != static_cast<Eigen::Index>(terms()))
      throw DimensionError("score matrix needs one row per term");
    if ((weights.array() < 0.0).any() || (scores.array() < 0.0).any() || !weights.allFinite() ||
        !scores.allFinite())
      throw ValidationError("weights and scores must be finite and nonnegative");
    for (std::size_t h = 0; h < terms(); ++h) {
      const double s = weight_sum(h);
      if (s != 0.0 && std::abs(s - 1.0) > kNormalizationTolerance)
        throw ValidationError("weights of term " + std::to_string(h + 1) + " sum to " + std::to_string(s));
    }
    for (Eigen::Index r = 0; r < R; ++r) {
      if (weights(r) == 0.0) continue;
      for (std::size_t p = 0; p < modes(); ++p) {
        const double s = factors[p].col(r).sum();
        if (std::abs(s - 1.0) > kNormalizationTolerance)
          throw ValidationError("factor " + std::to_string(p + 1) + " column " + std::to_string(r + 1) +
                                " sums to " + std::to_string(s));
      }
    }
  }

  friend bool operator==(const CpBtdModel& a, const CpBtdModel& b) {
    if (a.mode_sizes != b.mode_sizes || a.ranks != b.ranks || a.factors.size() != b.factors.size())
      return false;
    for (std::size_t p = 0; p < a.factors.size(); ++p)
      if (a.factors[p].rows() != b.factors[p].rows() || a.factors[p].cols() != b.factors[p].cols() ||
          a.factors[p] != b.factors[p])
        return false;
    return a.weights.size() == b.weights.size() && a.weights == b.weights &&
           a.scores.rows() == b.scores.rows() && a.scores.cols() == b.scores.cols() &&
           a.scores == b.scores;
  }
};

// Model dimensions matching a tensor: every mode but the last is a factor
// mode; the last mode indexes replicates.
inline void check_compatible(const CpBtdModel& model, const SparseCountTensor& t) {
  if (t.modes() != model.modes() + 1)
    throw DimensionError("tensor has " + std::to_string(t.modes()) + " modes, model expects " +
                         std::to_string(model.modes() + 1));
  for (std::size_t p = 0; p < model.modes(); ++p)
    if (t.shape()[p] != model.mode_sizes[p])
      throw DimensionError("mode " + std::to_string(p + 1) + " size differs between tensor and model");
  if (t.shape().back() != model.replicates())
    throw DimensionError("replicate count differs between tensor and model");
}

// lambda at factor-mode cell `cell` (0-based, P entries) of replicate n.
inline double intensity_at(const CpBtdModel& model, std::span<const Index> cell, std::size_t n) {
  if (cell.size() < model.modes()) throw DimensionError("cell index too short");
  double lambda = 0.0;
  std::size_t r = 0;
  for (std::size_t h = 0; h < model.terms(); ++h) {
    const double u = model.scores(static_cast<Eigen::Index>(h), static_cast<Eigen::Index>(n));
    double term = 0.0;
    for (std::size_t k = 0; k < model.ranks[h]; ++k, ++r) {
      const auto rc = static_cast<Eigen::Index>(r);
      double prod = model.weights(rc);
      for (std::size_t p = 0; p < model.modes() && prod != 0.0; ++p)
        prod *= model.factors[p](static_cast<Eigen::Index>(cell[p]), rc);
      term += prod;
    }
    lambda += u * term;
  }
  return lambda;
}

// Sum of lambda over every cell, from factor column sums (no dense pass).
inline double total_intensity(const CpBtdModel& model) {
  double total = 0.0;
  std::size_t r = 0;
  for (std::size_t h = 0; h < model.terms(); ++h) {
    double mass = 0.0;
    for (std::size_t k = 0; k < model.ranks[h]; ++k, ++r) {
      const auto rc = static_cast<Eigen::Index>(r);
      double prod = model.weights(rc);
      for (const auto& f : model.factors) prod *= f.col(rc).sum();
      mass += prod;
    }
    total += mass * model.usage(h);
  }
  return total;
}

// First nonzero entry of `t` whose intensity is zero, if any.
inline std::optional<std::size_t> first_zero_intensity_entry(const CpBtdModel& model,
                                                             const SparseCountTensor& t) {
  const std::size_t last = t.modes() - 1;
  for (std::size_t j = 0; j < t.nnz(); ++j)
    if (!(intensity_at(model, t.index(j), t.index(j, last)) > 0.0)) return j;
  return std::nullopt;
}

// Generalized KL objective sum(lambda) - sum_{x != 0} x log(lambda).
// +infinity when a nonzero cell has zero intensity.
inline double objective(const CpBtdModel& model, const SparseCountTensor& t) {
  check_compatible(model, t);
  const std::size_t last = t.modes() - 1;
  double data_term = 0.0;
  for (std::size_t j = 0; j < t.nnz(); ++j) {
    const double lambda = intensity_at(model, t.index(j), t.index(j, last));
    if (!(lambda > 0.0)) return std::numeric_limits<double>::infinity();
    data_term += static_cast<double>(t.count(j)) * std::log(lambda);
  }
  return total_intensity(model) - data_term;
}

// Log-sum group penalty carried by a fit:
//   beta * sum_h log(usage_h + eps) + beta * sum_r log(omega_r usage_h(r) + eps)
// The second sum is the column-mass penalty on the mode-wise loadings
// A^(p) = Phi^(p) diag(tau); every A^(p) has column masses tau_r = omega_r usage_h.
inline double shrinkage_penalty(const CpBtdModel& model, double beta, double epsilon) {
  if (beta == 0.0) return 0.0;
  double penalty = 0.0;
  std::size_t r = 0;
  for (std::size_t h = 0; h < model.terms(); ++h) {
    const double s = model.usage(h);
    penalty += std::log(s + epsilon);
    for (std::size_t k = 0; k < model.ranks[h]; ++k, ++r)
      penalty += std::log(model.weights(static_cast<Eigen::Index>(r)) * s + epsilon);
  }
  return beta * penalty;
}

inline double penalized_objective(const CpBtdModel& model, const SparseCountTensor& t, double beta,
                                  double epsilon) {
  return objective(model, t) + shrinkage_penalty(model, beta, epsilon);
}

// --- motifs -------------------------------------------------------------------

// D_h at scale s as a 4^s x 4^s origin-destination matrix; uses factor modes
// 1..2s (origin/destination codes of scales 1..s).
inline Eigen::MatrixXd motif_at_scale(const CpBtdModel& model, std::size_t h, std::size_t s) {
  if (h >= model.terms()) throw DimensionError("term " + std::to_string(h + 1) + " does not exist");
  if (!model.has_motif(h)) throw ValidationError("term " + std::to_string(h + 1) + " is inactive");
  if (s < 1 || 2 * s > model.modes()) throw DimensionError("scale out of range for this model");
  for (std::size_t p = 0; p < 2 * s; ++p)
    if (model.mode_sizes[p] != kPairLevels)
      throw DimensionError("motif rendering needs pair-code modes of size 4");
  const auto side = static_cast<Eigen::Index>(std::size_t{1} << (2 * s));
  Eigen::MatrixXd motif = Eigen::MatrixXd::Zero(side, side);
  const std::size_t begin = model.term_begin(h);
  for (std::size_t k = 0; k < model.ranks[h]; ++k) {
    const auto r = static_cast<Eigen::Index>(begin + k);
    const double w = model.weights(r);
    if (w == 0.0) continue;
    // origin and destination vectors over nodes at scale s: Kronecker
    // products of the per-scale factor columns, coarse scale outermost.
    Eigen::VectorXd origin = Eigen::VectorXd::Ones(1), dest = Eigen::VectorXd::Ones(1);
    for (std::size_t l = 0; l < s; ++l) {
      const Eigen::VectorXd fo = model.factors[2 * l].col(r);
      const Eigen::VectorXd fd = model.factors[2 * l + 1].col(r);
      Eigen::VectorXd no(origin.size() * 4), nd(dest.size() * 4);
      for (Eigen::Index a = 0; a < origin.size(); ++a) {
        no.segment(4 * a, 4) = origin(a) * fo;
        nd.segment(4 * a, 4) = dest(a) * fd;
      }
      origin.swap(no);
      dest.swap(nd);
    }
    // remaining modes are marginalized: their column sums
    double tail = 1.0;
    for (std::size_t p = 2 * s; p < model.modes(); ++p) tail *= model.factors[p].col(r).sum();
    motif.noalias() += (w * tail) * origin * dest.transpose();
  }
  return motif;
}

inline std::size_t effective_rank(const CpBtdModel& model, std::size_t h,
                                  double threshold = kActivityThreshold) {
  std::size_t count = 0;
  const std::size_t begin = model.term_begin(h);
  for (std::size_t k = 0; k < model.ranks[h]; ++k)
    if (model.weights(static_cast<Eigen::Index>(begin + k)) > threshold) ++count;
  return count;
}

inline std::size_t effective_terms(const CpBtdModel& model, double threshold = kActivityThreshold) {
  std::size_t count = 0;
  for (std::size_t h = 0; h < model.terms(); ++h)
    if (model.usage(h) > threshold) ++count;
  return count;
}

struct MotifView {
  std::size_t term = 0;
  std::vector<Eigen::MatrixXd> scales;  // scales[s-1] is 4^s x 4^s
  Eigen::VectorXd weights;
  std::size_t effective_rank = 0;
};

inline MotifView motif_view(const CpBtdModel& model, std::size_t h, std::size_t max_scale,
                            double threshold = kActivityThreshold) {
  MotifView view;
  view.term = h;
  for (std::size_t s = 1; s <= max_scale; ++s) view.scales.push_back(motif_at_scale(model, h, s));
  view.weights = model.weights.segment(static_cast<Eigen::Index>(model.term_begin(h)),
                                       static_cast<Eigen::Index>(model.ranks[h]));
  view.effective_rank = effective_rank(model, h, threshold);
  return view;
}

// Sums each 4x4 child block of a scale-s node matrix into its scale-(s-1) parent.
inline Eigen::MatrixXd aggregate_children(const Eigen::MatrixXd& fine) {
  const Eigen::Index side = fine.rows() / 4;
  Eigen::MatrixXd coarse(side, side);
  for (Eigen::Index a = 0; a < side; ++a)
    for (Eigen::Index b = 0; b < side; ++b) coarse(a, b) = fine.block(4 * a, 4 * b, 4, 4).sum();
  return coarse;
}

// --- scores -------------------------------------------------------------------

struct ScoreSummary {
  Eigen::MatrixXd theta;  // H x N, column-stochastic
  Eigen::VectorXd eta;    // N column sums of Upsilon
};

inline ScoreSummary normalize_scores(const CpBtdModel& model) {
  ScoreSummary out;
  out.eta = model.scores.colwise().sum().transpose();
  out.theta = model.scores;
  for (Eigen::Index n = 0; n < out.eta.size(); ++n) {
    if (!(out.eta(n) > 0.0))
      throw ValidationError("replicate " + std::to_string(n + 1) + " has zero total score");
    out.theta.col(n) /= out.eta(n);
  }
  return out;
}

// --- cpbtd v1 text format -------------------------------------------------------

inline std::string format_real(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

inline void write_cpbtd(std::ostream& out, const CpBtdModel& m) {
  auto write_list = [&](const char* label, const std::vector<std::size_t>& xs) {
    out << label;
    for (auto x : xs) out << ' ' << x;
    out << '\n';
  };
  auto write_matrix = [&](const Eigen::MatrixXd& a) {
    for (Eigen::Index c = 0; c < a.cols(); ++c) {
      for (Eigen::Index r = 0; r < a.rows(); ++r) out << (r ? " " : "") << format_real(a(r, c));
      out << '\n';
    }
  };
  out << "cpbtd v1\n";
  out << "P " << m.modes() << '\n';
  write_list("I", m.mode_sizes);
  out << "H " << m.terms() << '\n';
  write_list("R", m.ranks);
  out << "N " << m.replicates() << '\n';
  for (std::size_t p = 0; p < m.modes(); ++p) {
    out << "phi " << (p + 1) << ' ' << m.factors[p].rows() << ' ' << m.factors[p].cols() << '\n';
    write_matrix(m.factors[p]);
  }
  for (std::size_t h = 0; h < m.terms(); ++h) {
    out << "omega " << (h + 1) << ' ' << m.ranks[h] << '\n';
    write_matrix(m.weights.segment(static_cast<Eigen::Index>(m.term_begin(h)),
                                   static_cast<Eigen::Index>(m.ranks[h])));
  }
  out << "upsilon " << m.scores.rows() << ' ' << m.scores.cols() << '\n';
  write_matrix(m.scores);
  out << "end\n";
}

inline CpBtdModel read_cpbtd(std::istream& in) {
  std::size_t line_no = 0;
  std::string line;
  auto next_line = [&]() -> std::istringstream {
    while (std::getline(in, line)) {
      ++line_no;
      if (line.find_first_not_of(" \t\r") != std::string::npos) return std::istringstream(line);
    }
    throw ParseError(line_no + 1, "unexpected end of model file");
  };
  auto expect = [&](std::istringstream& ls, const std::string& label) {
    std::string tok;
    if (!(ls >> tok) || tok != label) throw ParseError(line_no, "expected '" + label + "'");
  };
  auto read_size = [&](std::istringstream& ls) {
    long long v = -1;
    if (!(ls >> v) || v < 0) throw ParseError(line_no, "expected a nonnegative integer");
    return static_cast<std::size_t>(v);
  };
  auto read_matrix = [&](Eigen::Index rows, Eigen::Index cols) {
    Eigen::MatrixXd a(rows, cols);
    for (Eigen::Index c = 0; c < cols; ++c) {
      auto ls = next_line();
      for (Eigen::Index r = 0; r < rows; ++r) {
        std::string tok;
        if (!(ls >> tok)) throw ParseError(line_no, "too few values in matrix column");
        double v = 0.0;
        const auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
        if (ec != std::errc{} || ptr != tok.data() + tok.size())
          throw ParseError(line_no, "malformed number '" + tok + "'");
        a(r, c) = v;
      }
      std::string extra;
      if (ls >> extra) throw ParseError(line_no, "too many values in matrix column");
    }
    return a;
  };

  {
    auto ls = next_line();
    expect(ls, "cpbtd");
    expect(ls, "v1");
  }
  std::size_t P = 0, H = 0, N = 0;
  std::vector<std::size_t> sizes, ranks;
  {
    auto ls = next_line();
    expect(ls, "P");
    P = read_size(ls);
  }
  {
    auto ls = next_line();
    expect(ls, "I");
    for (std::size_t p = 0; p < P; ++p) sizes.push_back(read_size(ls));
  }
  {
    auto ls = next_line();
    expect(ls, "H");
    H = read_size(ls);
  }
  {
    auto ls = next_line();
    expect(ls, "R");
    for (std::size_t h = 0; h < H; ++h) ranks.push_back(read_size(ls));
  }
  {
    auto ls = next_line();
    expect(ls, "N");
    N = read_size(ls);
  }
  CpBtdModel m(sizes, ranks, N);
  for (std::size_t p = 0; p < P; ++p) {
    auto ls = next_line();
    expect(ls, "phi");
    if (read_size(ls) != p + 1) throw ParseError(line_no, "factor sections out of order");
    const auto rows = read_size(ls), cols = read_size(ls);
    if (rows != sizes[p] || cols != m.components()) throw ParseError(line_no, "factor shape mismatch");
    m.factors[p] = read_matrix(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  }
  for (std::size_t h = 0; h < H; ++h) {
    auto ls = next_line();
    expect(ls, "omega");
    if (read_size(ls) != h + 1) throw ParseError(line_no, "weight sections out of order");
    if (read_size(ls) != ranks[h]) throw ParseError(line_no, "weight block length mismatch");
    m.weights.segment(static_cast<Eigen::Index>(m.term_begin(h)), static_cast<Eigen::Index>(ranks[h])) =
        read_matrix(static_cast<Eigen::Index>(ranks[h]), 1).col(0);
  }
  {
    auto ls = next_line();
    expect(ls, "upsilon");
    if (read_size(ls) != H || read_size(ls) != N) throw ParseError(line_no, "score shape mismatch");
    m.scores = read_matrix(static_cast<Eigen::Index>(H), static_cast<Eigen::Index>(N));
  }
  {
    auto ls = next_line();
    expect(ls, "end");
  }
  m.validate();
  return m;
}

}  // namespace mrtensor
