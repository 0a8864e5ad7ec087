#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace lanegraph {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  friend bool operator==(const Vec2&, const Vec2&) = default;
};

inline Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.y + b.y}; }
inline Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }
inline Vec2 operator*(double s, Vec2 a) { return {s * a.x, s * a.y}; }
double distance(Vec2 a, Vec2 b);

/// Metric bird's-eye-view window that every graph lives in.
struct BevExtent {
  double x_min = -48.0;
  double x_max = 48.0;
  double y_min = -32.0;
  double y_max = 32.0;
  double sample_interval = 0.5;

  bool contains(Vec2 p) const {
    return p.x >= x_min && p.x <= x_max && p.y >= y_min && p.y <= y_max;
  }
  bool is_valid() const;

  friend bool operator==(const BevExtent&, const BevExtent&) = default;
};

/// Directed centerline from `src` to `tgt`; `mid` is the middle control
/// point of the quadratic Bezier.
struct Edge {
  std::size_t src = 0;
  std::size_t tgt = 0;
  Vec2 mid;

  friend bool operator==(const Edge&, const Edge&) = default;
};

struct LaneGraph {
  std::vector<Vec2> vertices;
  std::vector<Edge> edges;
  BevExtent extent;

  friend bool operator==(const LaneGraph&, const LaneGraph&) = default;

  /// Outgoing edge ids per vertex, in edge-list order.
  std::vector<std::vector<std::size_t>> out_edges() const;
  std::vector<std::size_t> in_degrees() const;
};

class CycleError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class ViolationKind { Cycle, IndexOutOfRange, SelfLoop, OutOfExtent, DuplicateEdge, NonFinite, BadExtent };

struct Violation {
  ViolationKind kind;
  std::string message;
};

struct ValidationResult {
  std::vector<Violation> violations;

  bool ok() const { return violations.empty(); }
  bool has(ViolationKind kind) const;
};

std::string to_string(ViolationKind kind);

ValidationResult validate(const LaneGraph& g);

/// Kahn's algorithm; ties resolved by smallest vertex index. Throws
/// CycleError when no order exists.
std::vector<std::size_t> topological_order(const LaneGraph& g);

/// Quadratic Bezier (1-t)^2 p0 + 2t(1-t) p1 + t^2 p2. Endpoints are exact.
Vec2 bezier_point(Vec2 p0, Vec2 p1, Vec2 p2, double t);

/// Arc length by adaptive chord refinement (bisect until the chord error
/// falls below `tolerance`).
double bezier_length(Vec2 p0, Vec2 p1, Vec2 p2, double tolerance = 1e-6);

/// Points on the curve at uniform arc-length spacing no larger than
/// `interval`, both endpoints included. Always at least two points.
std::vector<Vec2> sample_bezier(Vec2 p0, Vec2 p1, Vec2 p2, double interval);

std::vector<Vec2> sample_edge(const LaneGraph& g, const Edge& e);

}  // namespace lanegraph
