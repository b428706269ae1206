#pragma once

// Coordinate-format count tensor. Entries are kept sorted lexicographically by
// index with no duplicates and strictly positive counts. Indices are 0-based
// in memory; the `mrtensor v1` text format is 1-based.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <istream>
#include <numeric>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "mrtensor/error.hpp"

namespace mrtensor {

using Index = std::uint32_t;
using Count = std::int64_t;

class SparseCountTensor {
 public:
  SparseCountTensor() = default;

  explicit SparseCountTensor(std::vector<std::size_t> shape) : shape_(std::move(shape)) {
    for (auto d : shape_)
      if (d == 0) throw DimensionError("tensor modes must have positive size");
  }

  // Builds the canonical form from unsorted coordinates (flat, row per entry).
  // Duplicate indices are merged by summing; zero counts are dropped.
  static SparseCountTensor from_coordinates(std::vector<std::size_t> shape,
                                            std::span<const Index> coords,
                                            std::span<const Count> counts) {
    SparseCountTensor t(std::move(shape));
    const std::size_t m = t.modes();
    if (m == 0) throw DimensionError("tensor needs at least one mode");
    if (coords.size() != counts.size() * m)
      throw DimensionError("coordinate list does not match count list");
    const std::size_t n = counts.size();
    for (std::size_t j = 0; j < n; ++j) {
      if (counts[j] < 0) throw ValidationError("negative count");
      for (std::size_t k = 0; k < m; ++k)
        if (coords[j * m + k] >= t.shape_[k])
          throw DimensionError("index " + std::to_string(coords[j * m + k]) +
                               " out of range for mode " + std::to_string(k + 1));
    }
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    auto key = [&](std::size_t j) { return coords.subspan(j * m, m); };
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      const auto ka = key(a);
      const auto kb = key(b);
      return std::lexicographical_compare(ka.begin(), ka.end(), kb.begin(), kb.end());
    });
    for (std::size_t pos = 0; pos < n;) {
      const auto k0 = key(order[pos]);
      Count total = 0;
      std::size_t end = pos;
      while (end < n && std::ranges::equal(key(order[end]), k0)) total += counts[order[end++]];
      if (total > 0) {
        t.coords_.insert(t.coords_.end(), k0.begin(), k0.end());
        t.counts_.push_back(total);
      }
      pos = end;
    }
    return t;
  }

  std::size_t modes() const { return shape_.size(); }
  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t nnz() const { return counts_.size(); }
  bool empty() const { return counts_.empty(); }

  std::span<const Index> index(std::size_t entry) const {
    return {coords_.data() + entry * modes(), modes()};
  }
  Index index(std::size_t entry, std::size_t mode) const { return coords_[entry * modes() + mode]; }
  Count count(std::size_t entry) const { return counts_[entry]; }
  std::span<const Count> counts() const { return counts_; }
  std::span<const Index> coordinates() const { return coords_; }

  Count total_count() const { return std::accumulate(counts_.begin(), counts_.end(), Count{0}); }

  // Number of cells, dense. Exact for anything this library can fit in memory.
  std::uint64_t cell_count() const {
    std::uint64_t c = 1;
    for (auto d : shape_) c *= d;
    return c;
  }

  // Percentage of zero cells.
  double sparsity_percent() const {
    const double cells = static_cast<double>(cell_count());
    return cells == 0.0 ? 0.0 : 100.0 * (1.0 - static_cast<double>(nnz()) / cells);
  }

  friend bool operator==(const SparseCountTensor&, const SparseCountTensor&) = default;

 private:
  std::vector<std::size_t> shape_;
  std::vector<Index> coords_;
  std::vector<Count> counts_;
};

// Entry lists per (mode, value): the rows each solver subproblem gathers.
// Built once per fit and shared read-only.
class SliceIndex {
 public:
  explicit SliceIndex(const SparseCountTensor& t) : offsets_(t.modes()), entries_(t.modes()) {
    for (std::size_t k = 0; k < t.modes(); ++k) {
      auto& off = offsets_[k];
      off.assign(t.shape()[k] + 1, 0);
      for (std::size_t j = 0; j < t.nnz(); ++j) ++off[t.index(j, k) + 1];
      std::partial_sum(off.begin(), off.end(), off.begin());
      auto cursor = off;
      auto& ent = entries_[k];
      ent.resize(t.nnz());
      for (std::size_t j = 0; j < t.nnz(); ++j) ent[cursor[t.index(j, k)]++] = j;
    }
  }

  // Entry ids (ascending) whose index along `mode` equals `value`.
  std::span<const std::size_t> slice(std::size_t mode, std::size_t value) const {
    const auto& off = offsets_.at(mode);
    if (value + 1 >= off.size()) throw DimensionError("slice value out of range");
    return {entries_[mode].data() + off[value], off[value + 1] - off[value]};
  }

 private:
  std::vector<std::vector<std::size_t>> offsets_;
  std::vector<std::vector<std::size_t>> entries_;
};

// --- mrtensor v1 text format -------------------------------------------------

inline void write_mrtensor(std::ostream& out, const SparseCountTensor& t) {
  out << "mrtensor v1 modes=" << t.modes() << " shape=";
  for (std::size_t k = 0; k < t.modes(); ++k) out << (k ? "," : "") << t.shape()[k];
  out << " nnz=" << t.nnz() << '\n';
  for (std::size_t j = 0; j < t.nnz(); ++j) {
    for (auto i : t.index(j)) out << (i + 1) << ' ';
    out << t.count(j) << '\n';
  }
}

inline SparseCountTensor read_mrtensor(std::istream& in) {
  std::string header;
  if (!std::getline(in, header)) throw ParseError(1, "empty tensor file");
  std::istringstream hs(header);
  std::string magic, version, modes_kv, shape_kv, nnz_kv;
  hs >> magic >> version >> modes_kv >> shape_kv >> nnz_kv;
  if (magic != "mrtensor" || version != "v1")
    throw ParseError(1, "expected 'mrtensor v1' header");
  auto value_of = [](const std::string& kv, const std::string& key) {
    if (kv.rfind(key + "=", 0) != 0) throw ParseError(1, "expected '" + key + "=' in header");
    return kv.substr(key.size() + 1);
  };
  std::size_t modes = 0, nnz = 0;
  try {
    modes = std::stoul(value_of(modes_kv, "modes"));
    nnz = std::stoul(value_of(nnz_kv, "nnz"));
  } catch (const std::logic_error&) {
    throw ParseError(1, "malformed header");
  }
  std::vector<std::size_t> shape;
  {
    std::istringstream ss(value_of(shape_kv, "shape"));
    std::string tok;
    while (std::getline(ss, tok, ',')) {
      try {
        shape.push_back(std::stoul(tok));
      } catch (const std::logic_error&) {
        throw ParseError(1, "malformed shape");
      }
    }
  }
  if (shape.size() != modes) throw ParseError(1, "shape does not list 'modes' sizes");

  std::vector<Index> coords;
  std::vector<Count> counts;
  coords.reserve(nnz * modes);
  counts.reserve(nnz);
  std::string line;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream ls(line);
    for (std::size_t k = 0; k < modes; ++k) {
      long long v = 0;
      if (!(ls >> v)) throw ParseError(line_no, "expected " + std::to_string(modes) + " indices");
      if (v < 1 || static_cast<std::size_t>(v) > shape[k])
        throw ParseError(line_no, "index out of range");
      coords.push_back(static_cast<Index>(v - 1));
    }
    Count c = 0;
    if (!(ls >> c) || c < 1) throw ParseError(line_no, "expected positive count");
    std::string rest;
    if (ls >> rest) throw ParseError(line_no, "trailing fields");
    counts.push_back(c);
  }
  if (counts.size() != nnz)
    throw ParseError(line_no, "header declares nnz=" + std::to_string(nnz) + " but file has " +
                                  std::to_string(counts.size()) + " entries");
  auto t = SparseCountTensor::from_coordinates(std::move(shape), coords, counts);
  if (t.nnz() != nnz) throw ParseError(line_no, "duplicate indices in tensor file");
  return t;
}

}  // namespace mrtensor
