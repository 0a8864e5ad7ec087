#include "lanegraph/eval.hpp"

#include <algorithm>
#include <cstdio>
#include <limits>
#include <set>
#include <stdexcept>

namespace lanegraph {

double point_to_polyline(Vec2 p, const std::vector<Vec2>& line) {
  if (line.empty()) throw std::invalid_argument("point_to_polyline: empty polyline");
  if (line.size() == 1) return distance(p, line[0]);
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i + 1 < line.size(); ++i) {
    const Vec2 a = line[i], b = line[i + 1];
    const Vec2 ab = b - a;
    const double len2 = ab.x * ab.x + ab.y * ab.y;
    double t = 0.0;
    if (len2 > 0.0) t = std::clamp(((p.x - a.x) * ab.x + (p.y - a.y) * ab.y) / len2, 0.0, 1.0);
    best = std::min({best, distance(p, a + t * ab), distance(p, a), distance(p, b)});
  }
  return best;
}

namespace {

double directed_mean(const std::vector<Vec2>& from, const std::vector<Vec2>& to) {
  double sum = 0.0;
  for (Vec2 p : from) sum += point_to_polyline(p, to);
  return sum / static_cast<double>(from.size());
}

std::vector<std::vector<Vec2>> sample_all(const LaneGraph& g) {
  std::vector<std::vector<Vec2>> out;
  out.reserve(g.edges.size());
  for (const Edge& e : g.edges) out.push_back(sample_edge(g, e));
  return out;
}

std::size_t within_count(const std::vector<Vec2>& points, const std::vector<Vec2>& line, double threshold) {
  std::size_t n = 0;
  for (Vec2 p : points) n += point_to_polyline(p, line) <= threshold ? 1 : 0;
  return n;
}

}  // namespace

double polyline_distance(const std::vector<Vec2>& a, const std::vector<Vec2>& b) {
  return 0.5 * (directed_mean(a, b) + directed_mean(b, a));
}

MatchResult match_centerlines(const LaneGraph& pred, const LaneGraph& gt, double threshold) {
  MatchResult out;
  out.threshold = threshold;
  const auto ps = sample_all(pred);
  const auto gs = sample_all(gt);
  for (std::size_t i = 0; i < ps.size(); ++i) {
    EdgeMatch m;
    m.pred = i;
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < gs.size(); ++j) {
      const double d = polyline_distance(ps[i], gs[j]);
      if (d < best) {
        best = d;
        m.gt = j;
      }
    }
    m.distance = m.gt ? best : std::numeric_limits<double>::infinity();
    m.within = m.gt.has_value() && best <= threshold;
    out.edges.push_back(m);
  }
  return out;
}

double harmonic_mean(double p, double r) { return p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0; }

PrecisionRecall precision_recall(const LaneGraph& pred, const LaneGraph& gt, const MatchResult& match, double threshold) {
  const auto ps = sample_all(pred);
  const auto gs = sample_all(gt);
  std::size_t pred_hit = 0, pred_total = 0;
  // Every assigned pair counts here, whatever its distance; the threshold
  // only decides which sample points are hits. Recall: a GT sample counts
  // when any prediction assigned to that GT edge lies within threshold of it.
  std::vector<std::vector<std::size_t>> preds_of(gs.size());
  for (const EdgeMatch& m : match.edges) {
    if (!m.gt) continue;
    pred_total += ps[m.pred].size();
    pred_hit += within_count(ps[m.pred], gs[*m.gt], threshold);
    preds_of[*m.gt].push_back(m.pred);
  }
  std::size_t gt_hit = 0, gt_total = 0;
  for (std::size_t j = 0; j < gs.size(); ++j) {
    if (preds_of[j].empty()) continue;
    gt_total += gs[j].size();
    for (Vec2 p : gs[j]) {
      const bool near = std::any_of(preds_of[j].begin(), preds_of[j].end(),
                                    [&](std::size_t i) { return point_to_polyline(p, ps[i]) <= threshold; });
      gt_hit += near ? 1 : 0;
    }
  }
  PrecisionRecall out;
  if (pred_total == 0) {
    out.undefined = true;
    return out;
  }
  out.precision = static_cast<double>(pred_hit) / static_cast<double>(pred_total);
  out.recall = static_cast<double>(gt_hit) / static_cast<double>(gt_total);
  out.f1 = harmonic_mean(out.precision, out.recall);
  return out;
}

double detection_ratio(const LaneGraph& /*pred*/, const LaneGraph& gt, const MatchResult& match) {
  if (gt.edges.empty()) return 1.0;
  std::set<std::size_t> hit;
  for (const EdgeMatch& m : match.edges) {
    if (m.within) hit.insert(*m.gt);
  }
  return static_cast<double>(hit.size()) / static_cast<double>(gt.edges.size());
}

std::vector<std::pair<std::size_t, std::size_t>> edge_connections(const LaneGraph& g) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (std::size_t a = 0; a < g.edges.size(); ++a) {
    for (std::size_t b = 0; b < g.edges.size(); ++b) {
      if (a != b && g.edges[a].tgt == g.edges[b].src) out.emplace_back(a, b);
    }
  }
  return out;
}

PrecisionRecall connectivity(const LaneGraph& pred, const LaneGraph& gt, const MatchResult& match) {
  std::vector<std::optional<std::size_t>> image(pred.edges.size());
  std::vector<bool> gt_matched(gt.edges.size(), false);
  for (const EdgeMatch& m : match.edges) {
    if (!m.within) continue;
    image[m.pred] = m.gt;
    gt_matched[*m.gt] = true;
  }
  const auto gt_conn = edge_connections(gt);
  const std::set<std::pair<std::size_t, std::size_t>> gt_set(gt_conn.begin(), gt_conn.end());

  std::size_t tp = 0, pred_den = 0;
  std::set<std::pair<std::size_t, std::size_t>> gt_hit;
  for (const auto& [a, b] : edge_connections(pred)) {
    if (!image[a] || !image[b]) continue;
    ++pred_den;
    const std::pair<std::size_t, std::size_t> mapped{*image[a], *image[b]};
    if (gt_set.count(mapped) != 0) {
      ++tp;
      gt_hit.insert(mapped);
    }
  }
  std::size_t gt_den = 0;
  for (const auto& [a, b] : gt_conn) gt_den += gt_matched[a] && gt_matched[b] ? 1 : 0;

  PrecisionRecall out;
  out.undefined = pred_den == 0 || gt_den == 0;
  out.precision = pred_den == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(pred_den);
  out.recall = gt_den == 0 ? 0.0 : static_cast<double>(gt_hit.size()) / static_cast<double>(gt_den);
  out.f1 = harmonic_mean(out.precision, out.recall);
  return out;
}

EvalReport evaluate(const LaneGraph& pred, const LaneGraph& gt, double threshold) {
  if (!(threshold > 0.0)) throw std::invalid_argument("evaluate: threshold must be positive");
  EvalReport r;
  r.threshold = threshold;
  r.match = match_centerlines(pred, gt, threshold);
  const PrecisionRecall m = precision_recall(pred, gt, r.match, threshold);
  r.m_precision = m.precision;
  r.m_recall = m.recall;
  r.m_f1 = m.f1;
  r.m_undefined = m.undefined;
  r.detect_ratio = detection_ratio(pred, gt, r.match);
  const PrecisionRecall c = connectivity(pred, gt, r.match);
  r.c_precision = c.precision;
  r.c_recall = c.recall;
  r.c_f1 = c.f1;
  r.c_undefined = c.undefined;
  return r;
}

namespace {

std::string format7(double a, double b, double c, double d, double e, double f, double g) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%.4f %.4f %.4f %.4f %.4f %.4f %.4f", a, b, c, d, e, f, g);
  return buf;
}

}  // namespace

std::string format_scores(const EvalReport& r) {
  return format7(r.m_precision, r.m_recall, r.m_f1, r.detect_ratio, r.c_precision, r.c_recall, r.c_f1);
}

MeanScores mean_scores(const std::vector<EvalReport>& reports) {
  MeanScores m;
  m.count = reports.size();
  if (reports.empty()) return m;
  for (const EvalReport& r : reports) {
    m.m_precision += r.m_precision;
    m.m_recall += r.m_recall;
    m.m_f1 += r.m_f1;
    m.detect_ratio += r.detect_ratio;
    m.c_precision += r.c_precision;
    m.c_recall += r.c_recall;
    m.c_f1 += r.c_f1;
  }
  const auto n = static_cast<double>(reports.size());
  m.m_precision /= n;
  m.m_recall /= n;
  m.m_f1 /= n;
  m.detect_ratio /= n;
  m.c_precision /= n;
  m.c_recall /= n;
  m.c_f1 /= n;
  return m;
}

std::string format_scores(const MeanScores& m) {
  return format7(m.m_precision, m.m_recall, m.m_f1, m.detect_ratio, m.c_precision, m.c_recall, m.c_f1);
}

}  // namespace lanegraph
