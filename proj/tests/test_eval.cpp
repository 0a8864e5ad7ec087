#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <limits>

#include "lanegraph/codec.hpp"
#include "lanegraph/datagen.hpp"
#include "lanegraph/eval.hpp"
#include "support.hpp"

using namespace lanegraph;
using testsupport::make_graph;
using testsupport::straight;

namespace {

// Point-to-polyline distance by numeric minimization per segment.
double oracle_point_line(Vec2 p, const std::vector<Vec2>& line) {
  double best = std::numeric_limits<double>::infinity();
  if (line.size() == 1) return std::hypot(p.x - line[0].x, p.y - line[0].y);
  for (std::size_t i = 0; i + 1 < line.size(); ++i) {
    // Ternary search on the convex distance along the segment.
    const Vec2 a = line[i], b = line[i + 1];
    double lo = 0, hi = 1;
    for (int it = 0; it < 200; ++it) {
      const double m1 = lo + (hi - lo) / 3, m2 = hi - (hi - lo) / 3;
      auto f = [&](double t) { return std::hypot(p.x - (a.x + t * (b.x - a.x)), p.y - (a.y + t * (b.y - a.y))); };
      if (f(m1) <= f(m2)) hi = m2;
      else lo = m1;
    }
    const double t = (lo + hi) / 2;
    best = std::min(best, std::hypot(p.x - (a.x + t * (b.x - a.x)), p.y - (a.y + t * (b.y - a.y))));
  }
  return best;
}

double oracle_distance(const std::vector<Vec2>& a, const std::vector<Vec2>& b) {
  double ab = 0, ba = 0;
  for (Vec2 p : a) ab += oracle_point_line(p, b);
  for (Vec2 p : b) ba += oracle_point_line(p, a);
  return 0.5 * (ab / static_cast<double>(a.size()) + ba / static_cast<double>(b.size()));
}

// Three-edge chain 0->1->2->3 along y = 0.
LaneGraph chain() {
  const std::vector<Vec2> v{{-30, 0}, {-10, 0}, {10, 0}, {30, 0}};
  return make_graph(v, {straight(v, 0, 1), straight(v, 1, 2), straight(v, 2, 3)});
}

bool all_perfect_or_vacuous(const EvalReport& r, const LaneGraph& g) {
  const bool m_ok = r.m_undefined ? g.edges.empty() : (r.m_precision == 1.0 && r.m_recall == 1.0 && r.m_f1 == 1.0);
  const bool c_ok = r.c_undefined ? edge_connections(g).empty()
                                  : (r.c_precision == 1.0 && r.c_recall == 1.0 && r.c_f1 == 1.0);
  return m_ok && c_ok && r.detect_ratio == 1.0;
}

}  // namespace

TEST_CASE("harmonic mean") {
  CHECK(harmonic_mean(0, 0) == 0.0);
  CHECK(harmonic_mean(1, 1) == 1.0);
  CHECK(harmonic_mean(0.5, 1.0) == doctest::Approx(2.0 / 3.0));
}

TEST_CASE("polyline distance: symmetry and agreement with an oracle") {
  Rng rng(1);
  for (int i = 0; i < 200; ++i) {
    std::vector<Vec2> a(2 + rng.index(6)), b(2 + rng.index(6));
    for (Vec2& p : a) p = {rng.uniform(-20, 20), rng.uniform(-20, 20)};
    for (Vec2& p : b) p = {rng.uniform(-20, 20), rng.uniform(-20, 20)};
    CHECK(std::abs(polyline_distance(a, b) - polyline_distance(b, a)) <= 1e-12);
    CHECK(polyline_distance(a, b) == doctest::Approx(oracle_distance(a, b)).epsilon(1e-6));
    CHECK(polyline_distance(a, a) == 0.0);
  }
}

TEST_CASE("matching: identity, tie-break, translation") {
  const LaneGraph g = chain();
  const MatchResult self = match_centerlines(g, g, 1.0);
  REQUIRE(self.edges.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(self.edges[i].gt == i);
    CHECK(self.edges[i].distance == 0.0);
    CHECK(self.edges[i].within);
  }

  // One prediction midway between two parallel GT lanes.
  const std::vector<Vec2> gv{{-10, 2}, {10, 2}, {-10, -2}, {10, -2}};
  const LaneGraph gt = make_graph(gv, {straight(gv, 2, 3), straight(gv, 0, 1)});
  const std::vector<Vec2> pv{{-10, 0}, {10, 0}};
  const LaneGraph pred = make_graph(pv, {straight(pv, 0, 1)});
  const MatchResult tie = match_centerlines(pred, gt, 1.0);
  CHECK(tie.edges[0].gt == 0);
  CHECK(tie.edges[0].distance == doctest::Approx(2.0));
  CHECK_FALSE(tie.edges[0].within);

  // Rigid shift by twice the threshold: every straight lane is 2 m off.
  LaneGraph shifted = g;
  for (Vec2& p : shifted.vertices) p.y += 2.0;
  for (Edge& e : shifted.edges) e.mid.y += 2.0;
  const MatchResult far = match_centerlines(shifted, g, 1.0);
  for (const EdgeMatch& m : far.edges) {
    CHECK(m.distance == doctest::Approx(2.0));
    CHECK_FALSE(m.within);
  }

  CHECK(match_centerlines(LaneGraph{}, g, 1.0).edges.empty());
  const MatchResult no_gt = match_centerlines(g, LaneGraph{}, 1.0);
  for (const EdgeMatch& m : no_gt.edges) CHECK_FALSE(m.gt.has_value());
}

TEST_CASE("matching agrees with exhaustive enumeration") {
  Rng rng(2);
  int compared = 0;
  while (compared < 200) {
    const LaneGraph pred = testsupport::random_dag(rng, 6, 5);
    const LaneGraph gt = testsupport::random_dag(rng, 6, 5);
    if (pred.edges.empty() || gt.edges.empty()) continue;
    const std::size_t np = pred.edges.size(), ng = gt.edges.size();
    std::vector<std::vector<Vec2>> ps, gs;
    for (const Edge& e : pred.edges) ps.push_back(sample_edge(pred, e));
    for (const Edge& e : gt.edges) gs.push_back(sample_edge(gt, e));
    std::vector<std::vector<double>> d(np, std::vector<double>(ng));
    for (std::size_t i = 0; i < np; ++i)
      for (std::size_t j = 0; j < ng; ++j) d[i][j] = polyline_distance(ps[i], gs[j]);

    // Enumerate every assignment pred -> gt; keep the lowest total, ties keep
    // the first visited, which is the componentwise lowest GT ids.
    std::vector<std::size_t> cur(np, 0), best;
    double best_total = std::numeric_limits<double>::infinity();
    for (;;) {
      double total = 0;
      for (std::size_t i = 0; i < np; ++i) total += d[i][cur[i]];
      if (total < best_total) {
        best_total = total;
        best = cur;
      }
      std::size_t k = 0;
      while (k < np && ++cur[k] == ng) cur[k++] = 0;
      if (k == np) break;
    }
    const MatchResult m = match_centerlines(pred, gt, 1.0);
    for (std::size_t i = 0; i < np; ++i) {
      CHECK(m.edges[i].gt == best[i]);
      CHECK(m.edges[i].within == (d[i][best[i]] <= 1.0));
    }
    ++compared;
  }
}

TEST_CASE("identity holds on generated and random graphs") {
  GenConfig cfg;
  Rng rng(3);
  const VocabSpec vocab;
  for (int i = 0; i < 300; ++i) {
    const LaneGraph g = i % 2 == 0 ? generate_graph(cfg, rng) : testsupport::random_dag(rng, 12, 14);
    const EvalReport r = evaluate(g, g);
    CHECK(all_perfect_or_vacuous(r, g));
    // Quantization error stays far below the 1 m threshold.
    const LaneGraph back = decode(encode(g, vocab, SerializationOrder::dfs()), vocab, g.extent).graph;
    CHECK(all_perfect_or_vacuous(evaluate(back, g), g));
  }
}

TEST_CASE("empty cases") {
  const LaneGraph g = chain();
  const EvalReport both = evaluate(LaneGraph{}, LaneGraph{});
  CHECK(both.detect_ratio == 1.0);
  CHECK(both.m_undefined);
  CHECK(both.c_undefined);
  const EvalReport none = evaluate(LaneGraph{}, g);
  CHECK(none.detect_ratio == 0.0);
  CHECK(none.m_precision == 0.0);
  CHECK(none.m_recall == 0.0);
  CHECK(none.m_undefined);
  CHECK_THROWS_AS(evaluate(g, g, 0.0), std::invalid_argument);
}

TEST_CASE("detection with one of four edges missing") {
  const std::vector<Vec2> v{{-30, 0}, {-10, 0}, {10, 0}, {30, 0}, {10, 10}};
  const LaneGraph gt = make_graph(v, {straight(v, 0, 1), straight(v, 1, 2), straight(v, 2, 3), straight(v, 1, 4)});
  LaneGraph pred = gt;
  pred.edges.pop_back();
  CHECK(evaluate(pred, gt).detect_ratio == doctest::Approx(0.75));
}

TEST_CASE("half-length prediction gives recall one half") {
  // GT lane of 20 m sampled every 0.5 m has 41 points; the prediction covers
  // x in [-10, 0], so 21 GT points lie within a 0.3 m threshold.
  const std::vector<Vec2> gv{{-10, 0}, {10, 0}};
  const LaneGraph gt = make_graph(gv, {straight(gv, 0, 1)});
  const std::vector<Vec2> pv{{-10, 0}, {0, 0}};
  const LaneGraph pred = make_graph(pv, {straight(pv, 0, 1)});
  const EvalReport r = evaluate(pred, gt, 0.3);
  CHECK(r.m_precision == 1.0);
  CHECK(r.m_recall == doctest::Approx(21.0 / 41.0));
  CHECK(std::abs(r.m_recall - 0.5) <= 1.0 / 41.0);
}

TEST_CASE("connectivity constructions") {
  const LaneGraph gt = chain();
  REQUIRE(edge_connections(gt).size() == 2);

  // Split the junction between edges 1 and 2 into two coincident vertices.
  LaneGraph cut = gt;
  cut.vertices.push_back(cut.vertices[2]);
  cut.edges[2].src = 4;
  const EvalReport r = evaluate(cut, gt);
  CHECK(r.c_precision == 1.0);
  CHECK(r.c_recall == doctest::Approx(1.0 / 2.0));

  // Extra edge leaving the chain's end and retracing edge 2 backwards: it
  // matches GT edge 2, so the new pair (2, 3) maps to (2, 2), not a GT pair.
  LaneGraph spur = gt;
  spur.vertices.push_back({10, 0});
  spur.edges.push_back(Edge{3, 4, Vec2{20, 0}});
  const EvalReport s = evaluate(spur, gt);
  REQUIRE(s.match.edges[3].within);
  CHECK(s.match.edges[3].gt == 2);
  CHECK(s.c_precision == doctest::Approx(2.0 / 3.0));
  CHECK(s.c_recall == 1.0);

  // No connections at all on either side: flagged and scored 0.
  const std::vector<Vec2> v{{-10, 0}, {10, 0}};
  const LaneGraph single = make_graph(v, {straight(v, 0, 1)});
  const EvalReport one = evaluate(single, single);
  CHECK(one.c_undefined);
  CHECK(one.c_f1 == 0.0);
  CHECK(one.m_f1 == 1.0);
}

TEST_CASE("threshold monotonicity and relabeling invariance") {
  GenConfig cfg;
  Rng rng(4);
  for (int i = 0; i < 60; ++i) {
    const LaneGraph gt = generate_graph(cfg, rng);
    LaneGraph pred = gt;
    for (Vec2& p : pred.vertices) p = {p.x + rng.uniform(-1.5, 1.5), p.y + rng.uniform(-1.5, 1.5)};
    for (Edge& e : pred.edges) e.mid = {e.mid.x + rng.uniform(-1.5, 1.5), e.mid.y + rng.uniform(-1.5, 1.5)};
    if (!pred.edges.empty() && rng.bernoulli(0.5)) pred.edges.pop_back();

    EvalReport last;
    last.m_precision = last.m_recall = last.detect_ratio = -1.0;
    for (double t : {0.25, 0.5, 1.0, 1.5, 2.0, 3.0, 5.0}) {
      const EvalReport r = evaluate(pred, gt, t);
      CHECK(r.m_precision >= last.m_precision);
      CHECK(r.m_recall >= last.m_recall);
      CHECK(r.detect_ratio >= last.detect_ratio);
      last = r;
    }

    LaneGraph perm = pred;
    std::vector<std::size_t> idx(perm.edges.size());
    std::iota(idx.begin(), idx.end(), 0);
    rng.shuffle(idx);
    for (std::size_t k = 0; k < idx.size(); ++k) perm.edges[k] = pred.edges[idx[k]];
    CHECK(format_scores(evaluate(perm, gt)) == format_scores(evaluate(pred, gt)));
  }
}

TEST_CASE("mean scores") {
  EvalReport a, b;
  a.m_precision = 1.0;
  b.m_precision = 0.5;
  a.c_f1 = 0.2;
  const MeanScores m = mean_scores({a, b});
  CHECK(m.count == 2);
  CHECK(m.m_precision == doctest::Approx(0.75));
  CHECK(m.c_f1 == doctest::Approx(0.1));
  CHECK(format_scores(m) == "0.7500 0.0000 0.0000 0.0000 0.0000 0.0000 0.1000");
}
