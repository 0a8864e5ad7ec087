#pragma once

#include <optional>
#include <string>
#include <vector>

#include "lanegraph/graph.hpp"

namespace lanegraph {

/// Symmetric mean polyline distance: the mean nearest-point distance from
/// each curve's samples to the other polyline, averaged over both directions.
double polyline_distance(const std::vector<Vec2>& a, const std::vector<Vec2>& b);
double point_to_polyline(Vec2 p, const std::vector<Vec2>& line);

struct EdgeMatch {
  std::size_t pred = 0;
  /// Nearest GT edge; unset only when GT is empty.
  std::optional<std::size_t> gt;
  double distance = 0.0;
  bool within = false;
};

struct MatchResult {
  std::vector<EdgeMatch> edges;  // one per predicted edge
  double threshold = 1.0;
};

MatchResult match_centerlines(const LaneGraph& pred, const LaneGraph& gt, double threshold);

struct PrecisionRecall {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  /// Set when no matched pair (or no connection) existed to score.
  bool undefined = false;
};

double harmonic_mean(double p, double r);

PrecisionRecall precision_recall(const LaneGraph& pred, const LaneGraph& gt, const MatchResult& match, double threshold);
double detection_ratio(const LaneGraph& pred, const LaneGraph& gt, const MatchResult& match);
PrecisionRecall connectivity(const LaneGraph& pred, const LaneGraph& gt, const MatchResult& match);

/// Ordered (a, b) edge pairs with a.tgt == b.src.
std::vector<std::pair<std::size_t, std::size_t>> edge_connections(const LaneGraph& g);

struct EvalReport {
  double m_precision = 0.0, m_recall = 0.0, m_f1 = 0.0;
  double detect_ratio = 0.0;
  double c_precision = 0.0, c_recall = 0.0, c_f1 = 0.0;
  bool m_undefined = false;
  bool c_undefined = false;
  MatchResult match;
  double threshold = 1.0;
};

EvalReport evaluate(const LaneGraph& pred, const LaneGraph& gt, double threshold = 1.0);

/// "m_p m_r m_f detect c_p c_r c_f" with fixed precision.
std::string format_scores(const EvalReport& r);

struct MeanScores {
  double m_precision = 0.0, m_recall = 0.0, m_f1 = 0.0;
  double detect_ratio = 0.0;
  double c_precision = 0.0, c_recall = 0.0, c_f1 = 0.0;
  std::size_t count = 0;
};

MeanScores mean_scores(const std::vector<EvalReport>& reports);
std::string format_scores(const MeanScores& m);

}  // namespace lanegraph
