#pragma once

// Row-gathered design submatrices for the solver subproblems. Only rows at
// nonzero cells are formed, so memory is O(rows x columns) and never grows
// with the number of dense cells.

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "mrtensor/error.hpp"
#include "mrtensor/model.hpp"
#include "mrtensor/sparse_tensor.hpp"

namespace mrtensor {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct DesignSubmatrix {
  RowMatrix values;                  // one row per selected nonzero
  std::vector<std::size_t> row_map;  // tensor entry id of each row

  std::size_t rows() const { return row_map.size(); }
};

// D^[n]: row j is (Phi^(1)[i_1j,:] * ... * Phi^(P)[i_Pj,:]) Omega over the
// nonzeros of replicate n.
inline DesignSubmatrix design_for_replicate(const SparseCountTensor& t, const SliceIndex& slices,
                                            std::size_t n, const CpBtdModel& model) {
  check_compatible(model, t);
  const std::size_t last = t.modes() - 1;
  if (n >= t.shape()[last]) throw DimensionError("replicate out of range");
  const auto entries = slices.slice(last, n);
  const std::size_t R = model.components();
  DesignSubmatrix d;
  d.row_map.assign(entries.begin(), entries.end());
  d.values = RowMatrix::Zero(static_cast<Eigen::Index>(entries.size()),
                             static_cast<Eigen::Index>(model.terms()));
  const auto owner = model.component_terms();
  for (std::size_t row = 0; row < entries.size(); ++row) {
    const auto idx = t.index(entries[row]);
    for (std::size_t r = 0; r < R; ++r) {
      const auto rc = static_cast<Eigen::Index>(r);
      double prod = model.weights(rc);
      for (std::size_t p = 0; p < model.modes() && prod != 0.0; ++p)
        prod *= model.factors[p](static_cast<Eigen::Index>(idx[p]), rc);
      d.values(static_cast<Eigen::Index>(row), static_cast<Eigen::Index>(owner[r])) += prod;
    }
  }
  return d;
}

inline DesignSubmatrix design_for_replicate(const SparseCountTensor& t, std::size_t n,
                                            const CpBtdModel& model) {
  return design_for_replicate(t, SliceIndex(t), n, model);
}

// B^(p)_m: over the nonzeros with i_p = m, row r-entry is
// prod_{q != p} Phi^(q)[i_q, r] * Psi[n, r]. `psi` is N x R.
inline DesignSubmatrix design_for_mode_slice(const SparseCountTensor& t, const SliceIndex& slices,
                                             std::size_t p, std::size_t m, const CpBtdModel& model,
                                             const Eigen::MatrixXd& psi) {
  check_compatible(model, t);
  if (p >= model.modes()) throw DimensionError("mode out of range");
  if (m >= model.mode_sizes[p]) throw DimensionError("mode value out of range");
  const std::size_t R = model.components();
  if (psi.rows() != static_cast<Eigen::Index>(model.replicates()) ||
      psi.cols() != static_cast<Eigen::Index>(R))
    throw DimensionError("psi must be N x R");
  const std::size_t last = t.modes() - 1;
  const auto entries = slices.slice(p, m);
  DesignSubmatrix d;
  d.row_map.assign(entries.begin(), entries.end());
  d.values.resize(static_cast<Eigen::Index>(entries.size()), static_cast<Eigen::Index>(R));
  for (std::size_t row = 0; row < entries.size(); ++row) {
    const auto idx = t.index(entries[row]);
    const auto n = static_cast<Eigen::Index>(idx[last]);
    for (std::size_t r = 0; r < R; ++r) {
      const auto rc = static_cast<Eigen::Index>(r);
      double prod = psi(n, rc);
      for (std::size_t q = 0; q < model.modes() && prod != 0.0; ++q)
        if (q != p) prod *= model.factors[q](static_cast<Eigen::Index>(idx[q]), rc);
      d.values(static_cast<Eigen::Index>(row), rc) = prod;
    }
  }
  return d;
}

inline DesignSubmatrix design_for_mode_slice(const SparseCountTensor& t, std::size_t p, std::size_t m,
                                             const CpBtdModel& model, const Eigen::MatrixXd& psi) {
  return design_for_mode_slice(t, SliceIndex(t), p, m, model, psi);
}

// Dense intensity tensor. Linear index: mode 1 fastest, replicate slowest.
struct DenseTensor {
  std::vector<std::size_t> shape;
  std::vector<double> values;

  std::size_t linear(std::span<const Index> idx) const {
    std::size_t pos = 0;
    for (std::size_t k = shape.size(); k-- > 0;) pos = pos * shape[k] + idx[k];
    return pos;
  }
  double at(std::span<const Index> idx) const { return values[linear(idx)]; }
};

inline constexpr std::uint64_t kDenseCellLimit = 1'000'000;

// Full Lambda; a test oracle, guarded to at most 10^6 cells.
inline DenseTensor dense_reconstruct(const CpBtdModel& model) {
  DenseTensor out;
  out.shape = model.mode_sizes;
  out.shape.push_back(model.replicates());
  std::uint64_t cells = 1;
  for (auto d : out.shape) {
    cells *= d;
    if (cells > kDenseCellLimit)
      throw DimensionError("dense reconstruction limited to " + std::to_string(kDenseCellLimit) + " cells");
  }
  out.values.assign(static_cast<std::size_t>(cells), 0.0);
  std::vector<Index> idx(out.shape.size(), 0);
  for (std::size_t pos = 0; pos < out.values.size(); ++pos) {
    out.values[pos] = intensity_at(model, idx, idx.back());
    for (std::size_t k = 0; k < idx.size(); ++k) {
      if (++idx[k] < out.shape[k]) break;
      idx[k] = 0;
    }
  }
  return out;
}

}  // namespace mrtensor
