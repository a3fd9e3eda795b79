#include "field.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <unordered_map>

namespace ecco {

namespace {

inline int64_t cell_key(int64_t cx, int64_t cy) {
  return (cx << 32) ^ (cy & 0xffffffffLL);
}

inline int64_t cell_of(double v, double inv_cell) {
  return static_cast<int64_t>(std::floor(v * inv_cell));
}

}  // namespace

NeighborList radius_neighbors(const PointSet& sources, const PointSet& queries,
                              double R) {
  if (!(R > 0.0)) throw std::invalid_argument("radius_neighbors: R must be > 0");
  const double inv_cell = 1.0 / R;
  const double r2max = R * R;

  std::unordered_map<int64_t, std::vector<int>> grid;
  grid.reserve(static_cast<size_t>(sources.size()) * 2 + 1);
  for (int j = 0; j < sources.size(); ++j) {
    const Vec2 p = sources.pts[j];
    grid[cell_key(cell_of(p.x, inv_cell), cell_of(p.y, inv_cell))].push_back(j);
  }

  NeighborList out;
  out.offsets.assign(static_cast<size_t>(queries.size()) + 1, 0);
  std::vector<std::vector<NeighborEntry>> per_query(
      static_cast<size_t>(queries.size()));
  for (int i = 0; i < queries.size(); ++i) {
    const Vec2 q = queries.pts[i];
    const int64_t cx = cell_of(q.x, inv_cell);
    const int64_t cy = cell_of(q.y, inv_cell);
    auto& list = per_query[i];
    for (int64_t dx = -1; dx <= 1; ++dx) {
      for (int64_t dy = -1; dy <= 1; ++dy) {
        auto it = grid.find(cell_key(cx + dx, cy + dy));
        if (it == grid.end()) continue;
        for (int j : it->second) {
          const Vec2 d = sources.pts[j] - q;
          const double r2 = norm_sq(d);
          if (r2 <= r2max) list.push_back({j, d, std::sqrt(r2)});
        }
      }
    }
    std::sort(list.begin(), list.end(),
              [](const NeighborEntry& a, const NeighborEntry& b) {
                return a.src < b.src;
              });
  }
  for (int i = 0; i < queries.size(); ++i)
    out.offsets[i + 1] =
        out.offsets[i] + static_cast<int>(per_query[i].size());
  out.entries.reserve(static_cast<size_t>(out.offsets.back()));
  for (auto& list : per_query)
    out.entries.insert(out.entries.end(), list.begin(), list.end());
  return out;
}

NeighborList radius_neighbors_brute(const PointSet& sources,
                                    const PointSet& queries, double R) {
  if (!(R > 0.0)) throw std::invalid_argument("radius_neighbors: R must be > 0");
  const double r2max = R * R;
  NeighborList out;
  out.offsets.assign(static_cast<size_t>(queries.size()) + 1, 0);
  for (int i = 0; i < queries.size(); ++i) {
    for (int j = 0; j < sources.size(); ++j) {
      const Vec2 d = sources.pts[j] - queries.pts[i];
      const double r2 = norm_sq(d);
      if (r2 <= r2max) out.entries.push_back({j, d, std::sqrt(r2)});
    }
    out.offsets[i + 1] = static_cast<int>(out.entries.size());
  }
  return out;
}

}  // namespace ecco
