#pragma once

// Dyadic partitioning of the unit square and the multiresolution adjacency
// tensor. Mode layout of a tensor built at S scales:
//   mode 2(s-1)   origin pair code at scale s      (size 4)
//   mode 2(s-1)+1 destination pair code at scale s (size 4)
//   mode 2S       replicate                        (size N)
// Scale 1 is the coarsest.

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <utility>
#include <vector>

#include "mrtensor/error.hpp"
#include "mrtensor/ingest.hpp"
#include "mrtensor/sparse_tensor.hpp"

namespace mrtensor {

inline constexpr std::size_t kPhysicalModes = 4;  // x_o, y_o, x_d, y_d
inline constexpr std::size_t kPairLevels = 4;     // values of a per-scale pair code
inline constexpr std::size_t kMaxScales = 15;

// S-bit code of a tile index; bits[0] is the coarsest scale.
struct BinaryCode {
  std::vector<std::uint8_t> bits;
  std::size_t scale_count() const { return bits.size(); }
  friend bool operator==(const BinaryCode&, const BinaryCode&) = default;
};

inline BinaryCode binary_code(std::size_t i, std::size_t scales) {
  if (scales == 0 || scales > kMaxScales) throw DimensionError("scale count out of range");
  if (i >= (std::size_t{1} << scales))
    throw DimensionError("tile index " + std::to_string(i) + " needs more than " +
                         std::to_string(scales) + " bits");
  BinaryCode code;
  code.bits.resize(scales);
  for (std::size_t s = 0; s < scales; ++s) code.bits[s] = (i >> (scales - 1 - s)) & 1u;
  return code;
}

inline std::size_t decode(const BinaryCode& code) {
  std::size_t i = 0;
  for (auto b : code.bits) i = (i << 1) | b;
  return i;
}

// K x S table of bits: row k is binary_code of physical index k.
struct IndexMatrix {
  std::size_t scales = 0;
  std::vector<std::uint8_t> bits;  // row-major, kPhysicalModes x scales

  std::uint8_t at(std::size_t k, std::size_t s) const { return bits[k * scales + s]; }
  // Column s: the bits of all four physical modes at scale s.
  std::array<std::uint8_t, kPhysicalModes> scale_bits(std::size_t s) const {
    return {at(0, s), at(1, s), at(2, s), at(3, s)};
  }
};

inline IndexMatrix encode_event(const std::array<std::size_t, kPhysicalModes>& tiles,
                                std::size_t scales) {
  IndexMatrix m;
  m.scales = scales;
  m.bits.reserve(kPhysicalModes * scales);
  for (auto i : tiles) {
    const auto code = binary_code(i, scales);
    m.bits.insert(m.bits.end(), code.bits.begin(), code.bits.end());
  }
  return m;
}

// Per-scale origin/destination pair codes, 1-based values in {1,2,3,4}, and
// a 1-based replicate.
struct MultiIndex {
  std::vector<std::pair<std::uint8_t, std::uint8_t>> pairs;
  std::size_t replicate = 1;
};

// Pair code from the bits of two physical modes, x contributing the low
// place: i = b~x + 2 (b~y - 1) with b~ = b + 1.
inline std::uint8_t pair_code(std::uint8_t bit_x, std::uint8_t bit_y) {
  return static_cast<std::uint8_t>((bit_x + 1) + 2 * bit_y);
}

inline MultiIndex fold_to_multiindex(const IndexMatrix& b, std::size_t replicate) {
  MultiIndex mi;
  mi.replicate = replicate;
  mi.pairs.reserve(b.scales);
  for (std::size_t s = 0; s < b.scales; ++s)
    mi.pairs.emplace_back(pair_code(b.at(0, s), b.at(1, s)), pair_code(b.at(2, s), b.at(3, s)));
  return mi;
}

// Tile along one axis of a standardized coordinate: floor(c 2^S).
inline std::size_t tile_index(double c, std::size_t scales) {
  const double cells = std::ldexp(1.0, static_cast<int>(scales));
  const auto t = static_cast<std::size_t>(std::floor(clamp_unit(c) * cells));
  return std::min(t, (std::size_t{1} << scales) - 1);
}

inline std::vector<std::size_t> multires_shape(std::size_t scales, std::size_t replicates) {
  std::vector<std::size_t> shape(2 * scales, kPairLevels);
  shape.push_back(replicates);
  return shape;
}

// Appends the 0-based tensor index of one event to `coords`.
inline void append_event_index(const PassEvent& e, std::size_t scales, std::vector<Index>& coords) {
  const std::array<std::size_t, kPhysicalModes> tiles = {
      tile_index(e.x_o, scales), tile_index(e.y_o, scales), tile_index(e.x_d, scales),
      tile_index(e.y_d, scales)};
  const auto mi = fold_to_multiindex(encode_event(tiles, scales), e.replicate + 1);
  for (const auto& [o, d] : mi.pairs) {
    coords.push_back(static_cast<Index>(o - 1));
    coords.push_back(static_cast<Index>(d - 1));
  }
  coords.push_back(static_cast<Index>(e.replicate));
}

inline SparseCountTensor build_tensor(const EventTable& table, std::size_t scales) {
  if (scales == 0 || scales > kMaxScales) throw DimensionError("scale count out of range");
  if (table.replicates.empty()) throw ValidationError("no replicates registered");
  std::vector<Index> coords;
  coords.reserve(table.events.size() * (2 * scales + 1));
  for (const auto& e : table.events) {
    if (e.replicate >= table.replicates.size())
      throw ValidationError("event refers to an unknown replicate");
    append_event_index(e, scales, coords);
  }
  std::vector<Count> counts(table.events.size(), 1);
  return SparseCountTensor::from_coordinates(multires_shape(scales, table.replicates.size()),
                                             coords, counts);
}

inline std::size_t scale_count(const SparseCountTensor& t) {
  if (t.modes() < 3 || t.modes() % 2 == 0)
    throw DimensionError("not a multiresolution tensor: expected 2S+1 modes");
  for (std::size_t k = 0; k + 1 < t.modes(); ++k)
    if (t.shape()[k] != kPairLevels)
      throw DimensionError("not a multiresolution tensor: pair modes must have size 4");
  return (t.modes() - 1) / 2;
}

// Sums out the modes of scales finer than `s`.
inline SparseCountTensor marginalize_to_scale(const SparseCountTensor& t, std::size_t s) {
  const std::size_t scales = scale_count(t);
  if (s < 1 || s > scales)
    throw DimensionError("target scale " + std::to_string(s) + " outside [1, " +
                         std::to_string(scales) + "]");
  if (s == scales) return t;
  const std::size_t keep = 2 * s;
  const std::size_t m = t.modes();
  std::vector<Index> coords;
  coords.reserve(t.nnz() * (keep + 1));
  for (std::size_t j = 0; j < t.nnz(); ++j) {
    const auto idx = t.index(j);
    coords.insert(coords.end(), idx.begin(), idx.begin() + keep);
    coords.push_back(idx[m - 1]);
  }
  std::vector<std::size_t> shape(t.shape().begin(), t.shape().begin() + keep);
  shape.push_back(t.shape().back());
  return SparseCountTensor::from_coordinates(std::move(shape), coords, t.counts());
}

// 0-based node index of a pair-code chain: v = 4 v_prev + code.
inline std::size_t node_index(std::span<const Index> codes) {
  std::size_t v = 0;
  for (auto c : codes) v = kPairLevels * v + c;
  return v;
}

// Tile (x, y) at scale s of a 0-based node index.
inline std::pair<std::size_t, std::size_t> node_tile(std::size_t v, std::size_t s) {
  std::size_t x = 0, y = 0;
  for (std::size_t level = 0; level < s; ++level) {
    const std::size_t code = (v >> (2 * (s - 1 - level))) & 3u;
    x = (x << 1) | (code & 1u);
    y = (y << 1) | (code >> 1);
  }
  return {x, y};
}

// 4^s x 4^s origin-destination counts of replicate n (0-based) at scale s.
inline Eigen::MatrixXd adjacency_at_scale(const SparseCountTensor& t, std::size_t n, std::size_t s) {
  const std::size_t scales = scale_count(t);
  if (s < 1 || s > scales) throw DimensionError("scale out of range");
  if (n >= t.shape().back()) throw DimensionError("replicate out of range");
  const std::size_t side = std::size_t{1} << (2 * s);
  Eigen::MatrixXd adj = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(side),
                                              static_cast<Eigen::Index>(side));
  const std::size_t m = t.modes();
  std::vector<Index> origin(s), dest(s);
  for (std::size_t j = 0; j < t.nnz(); ++j) {
    const auto idx = t.index(j);
    if (idx[m - 1] != n) continue;
    for (std::size_t l = 0; l < s; ++l) {
      origin[l] = idx[2 * l];
      dest[l] = idx[2 * l + 1];
    }
    adj(static_cast<Eigen::Index>(node_index(origin)), static_cast<Eigen::Index>(node_index(dest))) +=
        static_cast<double>(t.count(j));
  }
  return adj;
}

}  // namespace mrtensor
