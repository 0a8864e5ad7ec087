#include "lanegraph/graph.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <queue>
#include <set>
#include <sstream>
#include <utility>

namespace lanegraph {

double distance(Vec2 a, Vec2 b) { return std::hypot(a.x - b.x, a.y - b.y); }

bool BevExtent::is_valid() const {
  return std::isfinite(x_min) && std::isfinite(x_max) && std::isfinite(y_min) && std::isfinite(y_max) &&
         std::isfinite(sample_interval) && x_min < x_max && y_min < y_max && sample_interval > 0.0;
}

std::vector<std::vector<std::size_t>> LaneGraph::out_edges() const {
  std::vector<std::vector<std::size_t>> out(vertices.size());
  for (std::size_t i = 0; i < edges.size(); ++i) {
    if (edges[i].src < vertices.size()) out[edges[i].src].push_back(i);
  }
  return out;
}

std::vector<std::size_t> LaneGraph::in_degrees() const {
  std::vector<std::size_t> deg(vertices.size(), 0);
  for (const auto& e : edges) {
    if (e.tgt < vertices.size()) ++deg[e.tgt];
  }
  return deg;
}

bool ValidationResult::has(ViolationKind kind) const {
  return std::any_of(violations.begin(), violations.end(), [&](const Violation& v) { return v.kind == kind; });
}

std::string to_string(ViolationKind kind) {
  switch (kind) {
    case ViolationKind::Cycle: return "cycle";
    case ViolationKind::IndexOutOfRange: return "index out of range";
    case ViolationKind::SelfLoop: return "self loop";
    case ViolationKind::OutOfExtent: return "out of extent";
    case ViolationKind::DuplicateEdge: return "duplicate edge";
    case ViolationKind::NonFinite: return "non-finite coordinate";
    case ViolationKind::BadExtent: return "bad extent";
  }
  return "unknown";
}

namespace {

bool finite(Vec2 p) { return std::isfinite(p.x) && std::isfinite(p.y); }

// Kahn's algorithm over edges with valid indices; returns a partial order
// when a cycle is present.
std::vector<std::size_t> kahn(const LaneGraph& g) {
  const std::size_t n = g.vertices.size();
  std::vector<std::vector<std::size_t>> children(n);
  std::vector<std::size_t> indeg(n, 0);
  for (const auto& e : g.edges) {
    if (e.src >= n || e.tgt >= n) continue;
    children[e.src].push_back(e.tgt);
    ++indeg[e.tgt];
  }
  std::priority_queue<std::size_t, std::vector<std::size_t>, std::greater<>> ready;
  for (std::size_t v = 0; v < n; ++v) {
    if (indeg[v] == 0) ready.push(v);
  }
  std::vector<std::size_t> order;
  order.reserve(n);
  while (!ready.empty()) {
    const std::size_t v = ready.top();
    ready.pop();
    order.push_back(v);
    for (std::size_t c : children[v]) {
      if (--indeg[c] == 0) ready.push(c);
    }
  }
  return order;
}

}  // namespace

ValidationResult validate(const LaneGraph& g) {
  ValidationResult result;
  auto add = [&](ViolationKind kind, const std::string& detail) {
    result.violations.push_back({kind, to_string(kind) + ": " + detail});
  };

  if (!g.extent.is_valid()) add(ViolationKind::BadExtent, "extent bounds or interval invalid");

  for (std::size_t i = 0; i < g.vertices.size(); ++i) {
    const Vec2 p = g.vertices[i];
    std::ostringstream where;
    where << "vertex " << i << " (" << p.x << ", " << p.y << ")";
    if (!finite(p)) {
      add(ViolationKind::NonFinite, where.str());
    } else if (!g.extent.contains(p)) {
      add(ViolationKind::OutOfExtent, where.str());
    }
  }

  std::set<std::pair<std::size_t, std::size_t>> seen;
  const std::size_t n = g.vertices.size();
  for (std::size_t i = 0; i < g.edges.size(); ++i) {
    const Edge& e = g.edges[i];
    const std::string where = "edge " + std::to_string(i) + " (" + std::to_string(e.src) + "->" + std::to_string(e.tgt) + ")";
    if (e.src >= n || e.tgt >= n) {
      add(ViolationKind::IndexOutOfRange, where);
      continue;
    }
    if (e.src == e.tgt) add(ViolationKind::SelfLoop, where);
    if (!finite(e.mid)) add(ViolationKind::NonFinite, where + " midpoint");
    if (!seen.insert({e.src, e.tgt}).second) add(ViolationKind::DuplicateEdge, where);
  }

  if (kahn(g).size() != n) add(ViolationKind::Cycle, "no topological order exists");
  return result;
}

std::vector<std::size_t> topological_order(const LaneGraph& g) {
  for (const auto& e : g.edges) {
    if (e.src >= g.vertices.size() || e.tgt >= g.vertices.size()) {
      throw std::invalid_argument("topological_order: edge index out of range");
    }
  }
  auto order = kahn(g);
  if (order.size() != g.vertices.size()) throw CycleError("lane graph contains a cycle");
  return order;
}

Vec2 bezier_point(Vec2 p0, Vec2 p1, Vec2 p2, double t) {
  if (!(t >= 0.0 && t <= 1.0)) throw std::invalid_argument("bezier_point: t outside [0, 1]");
  if (t == 0.0) return p0;
  if (t == 1.0) return p2;
  const double u = 1.0 - t;
  const double a = u * u;
  const double b = 2.0 * t * u;
  const double c = t * t;
  return {a * p0.x + b * p1.x + c * p2.x, a * p0.y + b * p1.y + c * p2.y};
}

namespace {

struct ArcTable {
  std::vector<double> t;
  std::vector<double> s;
};

void refine(Vec2 p0, Vec2 p1, Vec2 p2, double t0, Vec2 a, double t1, Vec2 b, double tolerance, int depth,
            ArcTable& table) {
  const double tm = 0.5 * (t0 + t1);
  const Vec2 m = bezier_point(p0, p1, p2, tm);
  const double chord = distance(a, b);
  const double halves = distance(a, m) + distance(m, b);
  // Tolerance is shared out by parameter span so the total error stays
  // below it; the Richardson term removes the leading chord error.
  if (depth >= 4 && (halves - chord < tolerance * (t1 - t0) || depth >= 40)) {
    table.t.push_back(t1);
    table.s.push_back(table.s.back() + halves + (halves - chord) / 3.0);
    return;
  }
  refine(p0, p1, p2, t0, a, tm, m, tolerance, depth + 1, table);
  refine(p0, p1, p2, tm, m, t1, b, tolerance, depth + 1, table);
}

ArcTable arc_table(Vec2 p0, Vec2 p1, Vec2 p2, double tolerance) {
  ArcTable table;
  table.t.push_back(0.0);
  table.s.push_back(0.0);
  refine(p0, p1, p2, 0.0, p0, 1.0, p2, tolerance, 0, table);
  return table;
}

double parameter_at(const ArcTable& table, double s) {
  const auto it = std::lower_bound(table.s.begin(), table.s.end(), s);
  if (it == table.s.begin()) return 0.0;
  if (it == table.s.end()) return 1.0;
  const std::size_t hi = static_cast<std::size_t>(it - table.s.begin());
  const std::size_t lo = hi - 1;
  const double span = table.s[hi] - table.s[lo];
  const double f = span > 0.0 ? (s - table.s[lo]) / span : 0.0;
  return std::clamp(table.t[lo] + f * (table.t[hi] - table.t[lo]), 0.0, 1.0);
}

}  // namespace

double bezier_length(Vec2 p0, Vec2 p1, Vec2 p2, double tolerance) {
  return arc_table(p0, p1, p2, tolerance).s.back();
}

std::vector<Vec2> sample_bezier(Vec2 p0, Vec2 p1, Vec2 p2, double interval) {
  if (!(interval > 0.0)) throw std::invalid_argument("sample_bezier: interval must be positive");
  const ArcTable table = arc_table(p0, p1, p2, 1e-6);
  const double length = table.s.back();
  auto segments = static_cast<std::size_t>(std::max(1.0, std::ceil(length / interval - 1e-9)));

  constexpr double kGapTolerance = 1e-9;
  for (;;) {
    std::vector<Vec2> points;
    points.reserve(segments + 1);
    points.push_back(p0);
    for (std::size_t k = 1; k < segments; ++k) {
      const double s = length * static_cast<double>(k) / static_cast<double>(segments);
      points.push_back(bezier_point(p0, p1, p2, parameter_at(table, s)));
    }
    points.push_back(p2);

    bool spaced = true;
    for (std::size_t k = 1; k < points.size() && spaced; ++k) {
      spaced = distance(points[k - 1], points[k]) <= interval + kGapTolerance;
    }
    if (spaced) return points;
    ++segments;
  }
}

std::vector<Vec2> sample_edge(const LaneGraph& g, const Edge& e) {
  return sample_bezier(g.vertices.at(e.src), e.mid, g.vertices.at(e.tgt), g.extent.sample_interval);
}

}  // namespace lanegraph
