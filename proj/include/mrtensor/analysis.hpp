#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <iomanip>
#include <map>
#include <optional>
#include <ostream>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "mrtensor/design.hpp"
#include "mrtensor/error.hpp"
#include "mrtensor/ingest.hpp"
#include "mrtensor/model.hpp"
#include "mrtensor/mrencode.hpp"
#include "mrtensor/parallel.hpp"
#include "mrtensor/sparse_tensor.hpp"

namespace mrtensor {

// sum |u - v| / sum (u + v)
inline double bray_curtis(std::span<const double> u, std::span<const double> v) {
  if (u.size() != v.size()) throw DimensionError("Bray-Curtis needs vectors of equal length");
  double diff = 0.0, total = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    if (u[i] < 0.0 || v[i] < 0.0) throw ValidationError("Bray-Curtis needs nonnegative vectors");
    diff += std::abs(u[i] - v[i]);
    total += u[i] + v[i];
  }
  if (!(total > 0.0)) throw ValidationError("Bray-Curtis is undefined for two all-zero vectors");
  return diff / total;
}

inline double bray_curtis(const Eigen::VectorXd& u, const Eigen::VectorXd& v) {
  return bray_curtis(std::span<const double>(u.data(), static_cast<std::size_t>(u.size())),
                     std::span<const double>(v.data(), static_cast<std::size_t>(v.size())));
}

struct DissimilarityMatrix {
  std::vector<std::string> labels;
  Eigen::MatrixXd values;
  std::size_t scale = 1;
};

// Per-team adjacency at scale s, summed over the team's replicates, scaled
// by the team exposure factor, then compared pairwise.
inline DissimilarityMatrix dissimilarity_matrix(const EventTable& table, std::size_t s,
                                                std::optional<double> reference_minutes = std::nullopt) {
  if (table.events.empty()) throw ValidationError("no events");
  const auto tensor = build_tensor(table, s);
  const auto factors = team_exposure_factors(table, reference_minutes);
  DissimilarityMatrix out;
  out.scale = s;
  out.labels = table.teams();
  std::map<std::string, std::size_t> slot;
  for (std::size_t k = 0; k < out.labels.size(); ++k) slot[out.labels[k]] = k;

  const auto side = static_cast<Eigen::Index>(std::size_t{1} << (2 * s));
  std::vector<Eigen::VectorXd> vec(out.labels.size(), Eigen::VectorXd::Zero(side * side));
  for (std::size_t n = 0; n < table.replicates.size(); ++n) {
    const Eigen::MatrixXd adj = adjacency_at_scale(tensor, n, s);
    vec[slot.at(table.replicates[n].team)] += Eigen::Map<const Eigen::VectorXd>(adj.data(), adj.size());
  }
  for (std::size_t k = 0; k < out.labels.size(); ++k) {
    if (!(vec[k].sum() > 0.0)) throw ValidationError("team '" + out.labels[k] + "' has no passes");
    vec[k] *= factors.at(out.labels[k]);
  }

  const auto T = static_cast<Eigen::Index>(out.labels.size());
  out.values = Eigen::MatrixXd::Zero(T, T);
  parallel_for(out.labels.size(), [&](std::size_t a) {
    for (std::size_t b = a + 1; b < out.labels.size(); ++b) {
      const double d = bray_curtis(vec[a], vec[b]);
      out.values(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) = d;
      out.values(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(a)) = d;
    }
  });
  return out;
}

namespace detail {

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string q = "\"";
  for (char c : s) q += (c == '"') ? std::string("\"\"") : std::string(1, c);
  return q + '"';
}

}  // namespace detail

inline void write_dissimilarity_csv(std::ostream& out, const DissimilarityMatrix& d) {
  out << "team";
  for (const auto& l : d.labels) out << ',' << detail::csv_field(l);
  out << '\n';
  for (std::size_t a = 0; a < d.labels.size(); ++a) {
    out << detail::csv_field(d.labels[a]);
    for (std::size_t b = 0; b < d.labels.size(); ++b)
      out << ',' << format_real(d.values(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)));
    out << '\n';
  }
}

struct RankedTerm {
  std::size_t term = 0;  // 0-based
  double usage = 0.0;
};

// Active terms by descending score row sum; ties keep the lower index first.
inline std::vector<RankedTerm> rank_motifs(const CpBtdModel& model, double threshold = kActivityThreshold) {
  std::vector<RankedTerm> out;
  for (std::size_t h = 0; h < model.terms(); ++h)
    if (model.has_motif(h) && model.usage(h) > threshold) out.push_back({h, model.usage(h)});
  std::stable_sort(out.begin(), out.end(),
                   [](const RankedTerm& a, const RankedTerm& b) { return a.usage > b.usage; });
  return out;
}

// --- simulation ---------------------------------------------------------------------

enum class SamplingPath {
  superposition,  // J_hn ~ Poisson(rate), cells drawn from the motif
  direct          // every cell ~ Poisson(intensity); dense, small models only
};

// Draws a count tensor from `truth` with scores replaced by `rates` (H x N).
inline SparseCountTensor simulate(const CpBtdModel& truth, const Eigen::MatrixXd& rates, std::uint64_t seed,
                                  SamplingPath path = SamplingPath::superposition) {
  if (rates.rows() != static_cast<Eigen::Index>(truth.terms()))
    throw DimensionError("rates need one row per term");
  if (!rates.allFinite() || (rates.array() < 0.0).any())
    throw ValidationError("rates must be finite and nonnegative");
  CpBtdModel model = truth;
  model.scores = rates;
  model.validate();
  std::vector<std::size_t> shape = model.mode_sizes;
  shape.push_back(model.replicates());
  std::mt19937_64 rng(seed);
  std::vector<Index> coords;
  std::vector<Count> counts;

  if (path == SamplingPath::direct) {
    const auto dense = dense_reconstruct(model);
    std::vector<Index> idx(shape.size(), 0);
    for (double lambda : dense.values) {
      if (lambda > 0.0) {
        const Count c = std::poisson_distribution<Count>(lambda)(rng);
        if (c > 0) {
          coords.insert(coords.end(), idx.begin(), idx.end());
          counts.push_back(c);
        }
      }
      for (std::size_t k = 0; k < idx.size(); ++k) {
        if (++idx[k] < shape[k]) break;
        idx[k] = 0;
      }
    }
    return SparseCountTensor::from_coordinates(std::move(shape), coords, counts);
  }

  const std::size_t P = model.modes();
  std::vector<std::vector<std::discrete_distribution<Index>>> mode_draw(P);
  for (std::size_t p = 0; p < P; ++p)
    for (std::size_t r = 0; r < model.components(); ++r) {
      const auto& col = model.factors[p].col(static_cast<Eigen::Index>(r));
      if (col.sum() > 0.0)
        mode_draw[p].emplace_back(col.data(), col.data() + col.size());
      else
        mode_draw[p].emplace_back();
    }
  for (std::size_t h = 0; h < model.terms(); ++h) {
    if (!model.has_motif(h)) continue;
    const std::size_t begin = model.term_begin(h);
    const auto w = model.weights.segment(static_cast<Eigen::Index>(begin), static_cast<Eigen::Index>(model.ranks[h]));
    std::discrete_distribution<std::size_t> pick(w.data(), w.data() + w.size());
    for (std::size_t n = 0; n < model.replicates(); ++n) {
      const double rate = rates(static_cast<Eigen::Index>(h), static_cast<Eigen::Index>(n));
      if (!(rate > 0.0)) continue;
      const Count events = std::poisson_distribution<Count>(rate)(rng);
      for (Count e = 0; e < events; ++e) {
        const std::size_t r = begin + pick(rng);
        for (std::size_t p = 0; p < P; ++p) coords.push_back(mode_draw[p][r](rng));
        coords.push_back(static_cast<Index>(n));
        counts.push_back(1);
      }
    }
  }
  return SparseCountTensor::from_coordinates(std::move(shape), coords, counts);
}

// --- motif matching ----------------------------------------------------------------

struct MotifMatch {
  std::size_t truth = 0;   // position in the truth list
  std::size_t fitted = 0;  // position in the fitted list
  double similarity = 0.0;
};

inline double cosine_similarity(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  if (a.size() != b.size()) throw DimensionError("motifs differ in size");
  const double na = a.norm(), nb = b.norm();
  if (na == 0.0 || nb == 0.0) return 0.0;
  return (a.array() * b.array()).sum() / (na * nb);
}

// Greedy assignment: repeatedly pairs the most similar unmatched motifs on
// their finest common scale. Ties go to the lower truth, then fitted, index.
inline std::vector<MotifMatch> match_motifs(const std::vector<MotifView>& fitted,
                                            const std::vector<MotifView>& truth) {
  if (fitted.empty() || truth.empty()) throw ValidationError("motif lists must be nonempty");
  std::size_t scale = std::numeric_limits<std::size_t>::max();
  for (const auto& v : fitted) scale = std::min(scale, v.scales.size());
  for (const auto& v : truth) scale = std::min(scale, v.scales.size());
  if (scale == 0) throw ValidationError("motif views carry no scales");
  Eigen::MatrixXd sim(static_cast<Eigen::Index>(truth.size()), static_cast<Eigen::Index>(fitted.size()));
  for (std::size_t a = 0; a < truth.size(); ++a)
    for (std::size_t b = 0; b < fitted.size(); ++b)
      sim(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) =
          cosine_similarity(truth[a].scales[scale - 1], fitted[b].scales[scale - 1]);

  std::vector<MotifMatch> out;
  std::vector<bool> used_t(truth.size(), false), used_f(fitted.size(), false);
  const std::size_t pairs = std::min(truth.size(), fitted.size());
  while (out.size() < pairs) {
    MotifMatch best{0, 0, -std::numeric_limits<double>::infinity()};
    for (std::size_t a = 0; a < truth.size(); ++a) {
      if (used_t[a]) continue;
      for (std::size_t b = 0; b < fitted.size(); ++b) {
        if (used_f[b]) continue;
        const double s = sim(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b));
        if (s > best.similarity) best = {a, b, s};
      }
    }
    used_t[best.truth] = used_f[best.fitted] = true;
    out.push_back(best);
  }
  std::ranges::sort(out, {}, &MotifMatch::truth);
  return out;
}

// --- export -----------------------------------------------------------------------

inline void write_matrix_csv(std::ostream& out, const Eigen::MatrixXd& m) {
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) out << (j ? "," : "") << format_real(m(i, j));
    out << '\n';
  }
}

inline constexpr int kSvgWidth = 1150;
inline constexpr int kSvgHeight = 740;
inline constexpr std::size_t kDefaultTopEdges = 20;

// Arrow diagram of a 4^s x 4^s motif on the pitch: the k heaviest edges,
// from origin tile center to destination tile center, opacity weight/max.
// Origin-equals-destination edges are drawn as rings.
inline void write_motif_svg(std::ostream& out, const Eigen::MatrixXd& motif, std::size_t s,
                            std::size_t top_k = kDefaultTopEdges) {
  const auto side = static_cast<Eigen::Index>(std::size_t{1} << (2 * s));
  if (motif.rows() != side || motif.cols() != side) throw DimensionError("motif size does not match scale");
  struct Edge {
    Eigen::Index from, to;
    double weight;
  };
  std::vector<Edge> edges;
  for (Eigen::Index a = 0; a < side; ++a)
    for (Eigen::Index b = 0; b < side; ++b)
      if (motif(a, b) > 0.0) edges.push_back({a, b, motif(a, b)});
  std::stable_sort(edges.begin(), edges.end(), [](const Edge& x, const Edge& y) { return x.weight > y.weight; });
  if (edges.size() > top_k) edges.resize(top_k);
  const double top = edges.empty() ? 1.0 : edges.front().weight;

  constexpr double margin = 25.0;
  const double w = kSvgWidth - 2 * margin, h = kSvgHeight - 2 * margin;
  const double tiles = std::ldexp(1.0, static_cast<int>(s));
  auto center = [&](Eigen::Index node) {
    const auto [tx, ty] = node_tile(static_cast<std::size_t>(node), s);
    const double cx = (static_cast<double>(tx) + 0.5) / tiles, cy = (static_cast<double>(ty) + 0.5) / tiles;
    return std::pair{margin + cx * w, margin + (1.0 - cy) * h};
  };

  std::ostringstream os;
  os << std::fixed << std::setprecision(2);
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kSvgWidth << "\" height=\"" << kSvgHeight
     << "\" viewBox=\"0 0 " << kSvgWidth << ' ' << kSvgHeight << "\">\n";
  os << "<defs><marker id=\"head\" viewBox=\"0 0 10 10\" refX=\"9\" refY=\"5\" markerWidth=\"6\" "
        "markerHeight=\"6\" orient=\"auto-start-reverse\"><path d=\"M0,0 L10,5 L0,10 z\" fill=\"#b2182b\"/>"
        "</marker></defs>\n";
  os << "<rect x=\"" << margin << "\" y=\"" << margin << "\" width=\"" << w << "\" height=\"" << h
     << "\" fill=\"#3a7d44\" stroke=\"#ffffff\" stroke-width=\"2\"/>\n";
  for (int k = 1; k < static_cast<int>(tiles); ++k) {
    const double gx = margin + w * k / tiles, gy = margin + h * k / tiles;
    os << "<line class=\"grid\" x1=\"" << gx << "\" y1=\"" << margin << "\" x2=\"" << gx << "\" y2=\""
       << margin + h << "\" stroke=\"#ffffff\" stroke-opacity=\"0.35\"/>\n";
    os << "<line class=\"grid\" x1=\"" << margin << "\" y1=\"" << gy << "\" x2=\"" << margin + w << "\" y2=\""
       << gy << "\" stroke=\"#ffffff\" stroke-opacity=\"0.35\"/>\n";
  }
  const double ring = std::min(w, h) / tiles * 0.2;
  for (const auto& e : edges) {
    const auto [x1, y1] = center(e.from);
    const auto [x2, y2] = center(e.to);
    const double opacity = e.weight / top;
    if (e.from == e.to) {
      os << "<circle class=\"edge\" cx=\"" << x1 << "\" cy=\"" << y1 << "\" r=\"" << ring
         << "\" fill=\"none\" stroke=\"#b2182b\" stroke-width=\"4\" stroke-opacity=\"" << std::setprecision(4)
         << opacity << std::setprecision(2) << "\"/>\n";
    } else {
      os << "<line class=\"edge\" x1=\"" << x1 << "\" y1=\"" << y1 << "\" x2=\"" << x2 << "\" y2=\"" << y2
         << "\" stroke=\"#b2182b\" stroke-width=\"4\" stroke-opacity=\"" << std::setprecision(4) << opacity
         << std::setprecision(2) << "\" marker-end=\"url(#head)\"/>\n";
    }
  }
  os << "</svg>\n";
  out << os.str();
}

}  // namespace mrtensor
