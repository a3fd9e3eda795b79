#pragma once

#include <span>
#include <vector>

#include "geometry.hpp"
#include "repr.hpp"

namespace ecco {

struct PointSet {
  std::vector<Vec2> pts;

  int size() const { return static_cast<int>(pts.size()); }
};

// Per-particle feature vectors paired with positions. values is row-major
// n x spec.dim().
struct FeatureField {
  PointSet points;
  RepSpec spec;
  std::vector<double> values;

  int size() const { return points.size(); }
  std::span<const double> row(int i) const {
    int d = spec.dim();
    return {values.data() + static_cast<size_t>(i) * d, static_cast<size_t>(d)};
  }
  std::span<double> row(int i) {
    int d = spec.dim();
    return {values.data() + static_cast<size_t>(i) * d, static_cast<size_t>(d)};
  }
};

struct NeighborEntry {
  int src;
  Vec2 dx;   // x_src - x_query
  double r;  // |dx|
};

// Fixed-radius neighbor lists, CSR over queries; entries per query sorted by
// source index. Pairs at distance exactly R are included (closed ball).
struct NeighborList {
  std::vector<int> offsets;  // size n_queries + 1
  std::vector<NeighborEntry> entries;

  std::span<const NeighborEntry> of(int q) const {
    return {entries.data() + offsets[q],
            static_cast<size_t>(offsets[q + 1] - offsets[q])};
  }
};

// Exact fixed-radius search via uniform spatial hashing with cell size R.
// Self pairs (same position, sources == queries) are included.
NeighborList radius_neighbors(const PointSet& sources, const PointSet& queries,
                              double R);

// O(n^2) reference used by tests.
NeighborList radius_neighbors_brute(const PointSet& sources,
                                    const PointSet& queries, double R);

}  // namespace ecco
