#pragma once

// Helpers shared by the test binaries. Graph construction and comparison here
// deliberately avoid the library's own traversal and encoding code.

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <vector>

#include "lanegraph/graph.hpp"
#include "lanegraph/random.hpp"

namespace testsupport {

using lanegraph::Edge;
using lanegraph::LaneGraph;
using lanegraph::Rng;
using lanegraph::Vec2;

inline LaneGraph make_graph(std::vector<Vec2> vertices, std::vector<Edge> edges) {
  LaneGraph g;
  g.vertices = std::move(vertices);
  g.edges = std::move(edges);
  return g;
}

inline Vec2 midpoint(Vec2 a, Vec2 b) { return {(a.x + b.x) / 2, (a.y + b.y) / 2}; }

/// Straight edge (mid at the chord midpoint).
inline Edge straight(const std::vector<Vec2>& v, std::size_t s, std::size_t t) {
  return Edge{s, t, midpoint(v[s], v[t])};
}

/// Random DAG: vertices placed uniformly in the default extent, edges only
/// from lower to higher index of a random permutation (so acyclic), no
/// duplicates, random mids. Vertex spacing is kept above `min_gap` so the
/// quantized graph keeps distinct vertices.
inline LaneGraph random_dag(Rng& rng, std::size_t max_vertices, std::size_t max_edges, double min_gap = 1.5) {
  LaneGraph g;
  const auto& ex = g.extent;
  const std::size_t n = rng.index(max_vertices + 1);
  while (g.vertices.size() < n) {
    const Vec2 p{rng.uniform(ex.x_min, ex.x_max), rng.uniform(ex.y_min, ex.y_max)};
    bool far = true;
    for (const Vec2& q : g.vertices) far = far && std::hypot(p.x - q.x, p.y - q.y) >= min_gap;
    if (far) g.vertices.push_back(p);
  }
  if (n < 2) return g;
  std::vector<std::size_t> rank(n);
  std::iota(rank.begin(), rank.end(), 0);
  rng.shuffle(rank);
  std::set<std::pair<std::size_t, std::size_t>> used;
  const std::size_t m = rng.index(max_edges + 1);
  for (std::size_t tries = 0; g.edges.size() < m && tries < 20 * (m + 1); ++tries) {
    std::size_t a = rng.index(n), b = rng.index(n);
    if (a == b) continue;
    if (rank[a] > rank[b]) std::swap(a, b);
    if (!used.insert({a, b}).second) continue;
    const Vec2 mid{rng.uniform(ex.x_min, ex.x_max), rng.uniform(ex.y_min, ex.y_max)};
    g.edges.push_back(Edge{a, b, mid});
  }
  return g;
}

/// Finds a vertex bijection f with |a.v - b.f(v)| <= tol per coordinate and
/// matching edge sets (mids within tol). Exhaustive with pruning; graphs here
/// have at most a dozen vertices and distinct positions, so candidate lists
/// are short.
inline std::optional<std::vector<std::size_t>> isomorphism(const LaneGraph& a, const LaneGraph& b, double tol) {
  const std::size_t n = a.vertices.size();
  if (n != b.vertices.size() || a.edges.size() != b.edges.size()) return std::nullopt;
  std::vector<std::vector<std::size_t>> cand(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (std::abs(a.vertices[i].x - b.vertices[j].x) <= tol && std::abs(a.vertices[i].y - b.vertices[j].y) <= tol) {
        cand[i].push_back(j);
      }
    }
    if (cand[i].empty()) return std::nullopt;
  }
  std::map<std::pair<std::size_t, std::size_t>, Vec2> b_edges;
  for (const Edge& e : b.edges) b_edges[{e.src, e.tgt}] = e.mid;

  std::vector<std::size_t> f(n);
  std::vector<bool> taken(n, false);
  std::optional<std::vector<std::size_t>> found;
  auto check_edges = [&]() {
    for (const Edge& e : a.edges) {
      const auto it = b_edges.find({f[e.src], f[e.tgt]});
      if (it == b_edges.end()) return false;
      if (std::abs(it->second.x - e.mid.x) > tol || std::abs(it->second.y - e.mid.y) > tol) return false;
    }
    return true;
  };
  auto rec = [&](auto&& self, std::size_t i) -> void {
    if (found) return;
    if (i == n) {
      if (check_edges()) found = f;
      return;
    }
    for (std::size_t j : cand[i]) {
      if (taken[j]) continue;
      taken[j] = true;
      f[i] = j;
      self(self, i + 1);
      taken[j] = false;
    }
  };
  rec(rec, 0);
  return found;
}

}  // namespace testsupport
