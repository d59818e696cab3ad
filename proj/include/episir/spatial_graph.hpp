#pragma once

#include <algorithm>
#include <map>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "episir/csv.hpp"
#include "episir/errors.hpp"

namespace episir {

// Areal adjacency structure. Immutable after construction; shared by the
// ICAR prior (neighbor means, n_neighbors) and the lagged neighborhood
// count term.
struct AdjacencyGraph {
  std::vector<std::string> area_ids;           // external ids, fixed ordering
  std::vector<std::vector<int>> neighbor_lists;  // sorted, deduplicated

  int n_areas() const { return static_cast<int>(area_ids.size()); }

  int n_neighbors(int i) const {
    return static_cast<int>(neighbor_lists[static_cast<std::size_t>(i)].size());
  }

  const std::vector<int>& neighbors(int i) const {
    return neighbor_lists[static_cast<std::size_t>(i)];
  }

  int index_of(const std::string& id) const {
    for (int i = 0; i < n_areas(); ++i) {
      if (area_ids[static_cast<std::size_t>(i)] == id) return i;
    }
    throw UnknownAreaId("unknown area id: '" + id + "'");
  }

  // Number of connected components; the ICAR precision update loses one
  // degree of freedom per component.
  int component_count() const {
    const int m = n_areas();
    std::vector<int> label(static_cast<std::size_t>(m), -1);
    int components = 0;
    std::vector<int> stack;
    for (int s = 0; s < m; ++s) {
      if (label[static_cast<std::size_t>(s)] >= 0) continue;
      ++components;
      stack.push_back(s);
      label[static_cast<std::size_t>(s)] = components;
      while (!stack.empty()) {
        int i = stack.back();
        stack.pop_back();
        for (int k : neighbors(i)) {
          if (label[static_cast<std::size_t>(k)] < 0) {
            label[static_cast<std::size_t>(k)] = components;
            stack.push_back(k);
          }
        }
      }
    }
    return components;
  }
};

// Builds the graph from an undirected edge list. Neighbor lists come out
// sorted and deduplicated; symmetry holds by construction. Isolated areas
// are allowed here (the neighborhood lag sum is simply zero); models with a
// spatial smoothing term reject them at assembly because the conditional
// divides by n_neighbors.
inline AdjacencyGraph build_graph(
    const std::vector<std::pair<std::string, std::string>>& edges,
    const std::vector<std::string>& area_ids) {
  AdjacencyGraph g;
  g.area_ids = area_ids;
  std::map<std::string, int> index;
  for (int i = 0; i < g.n_areas(); ++i) {
    index.emplace(area_ids[static_cast<std::size_t>(i)], i);
  }
  if (index.size() != area_ids.size()) {
    throw DataError("duplicate area id in area_ids");
  }

  std::vector<std::set<int>> nb(area_ids.size());
  for (const auto& [a, b] : edges) {
    auto ia = index.find(a);
    auto ib = index.find(b);
    if (ia == index.end()) throw UnknownAreaId("edge references unknown area id: '" + a + "'");
    if (ib == index.end()) throw UnknownAreaId("edge references unknown area id: '" + b + "'");
    if (ia->second == ib->second) throw SelfLoop("self-loop on area id: '" + a + "'");
    nb[static_cast<std::size_t>(ia->second)].insert(ib->second);
    nb[static_cast<std::size_t>(ib->second)].insert(ia->second);
  }

  g.neighbor_lists.reserve(nb.size());
  for (std::size_t i = 0; i < nb.size(); ++i) {
    g.neighbor_lists.emplace_back(nb[i].begin(), nb[i].end());
  }
  return g;
}

// Sum of counts over the neighborhood of area i at the previous time step.
inline double neighbor_lag_sum(const AdjacencyGraph& graph,
                               std::span<const double> counts_prev, int i) {
  if (counts_prev.size() != static_cast<std::size_t>(graph.n_areas())) {
    throw LengthMismatch("counts_prev length does not match n_areas");
  }
  if (i < 0 || i >= graph.n_areas()) {
    throw IndexOutOfRange("area index out of range: " + std::to_string(i));
  }
  double total = 0.0;
  for (int k : graph.neighbors(i)) {
    total += counts_prev[static_cast<std::size_t>(k)];
  }
  return total;
}

// Adjacency CSV: header `fips_a,fips_b`, one undirected edge per row.
inline AdjacencyGraph read_adjacency_csv(const std::string& path,
                                         const std::vector<std::string>& area_ids) {
  csv::Table t = csv::read_file(path);
  int ca = t.column("fips_a");
  int cb = t.column("fips_b");
  std::vector<std::pair<std::string, std::string>> edges;
  edges.reserve(t.rows.size());
  for (const auto& row : t.rows) {
    edges.emplace_back(row[static_cast<std::size_t>(ca)],
                       row[static_cast<std::size_t>(cb)]);
  }
  return build_graph(edges, area_ids);
}

}  // namespace episir
