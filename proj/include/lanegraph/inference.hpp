#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "lanegraph/codec.hpp"
#include "lanegraph/model.hpp"

namespace lanegraph {

struct SamplerConfig {
  double alpha_c = 4.0;
  double nucleus_p = 0.95;
  double temperature = 1.0;
  /// Take the argmax instead of sampling.
  bool greedy = false;
  std::uint64_t seed = 0;
  /// Caps on the vertex / edge segments; 0 means the vocab layout length.
  std::size_t max_vertex_len = 0;
  std::size_t max_edge_len = 0;
  bool grammar_mask = true;

  void check() const;
};

/// The tokens kept by nucleus filtering, most probable first, with their
/// probabilities before renormalization.
struct NucleusSet {
  std::vector<Token> ids;
  std::vector<double> probs;
};

/// Softmax of logits/temperature, sorted by probability (ties: lower id
/// first), cut at the shortest prefix whose mass reaches p. Tokens with
/// -inf logits never enter the set.
NucleusSet nucleus_set(std::span<const double> logits, double p, double temperature);
Token nucleus_sample(std::span<const double> logits, double p, double temperature, Rng& rng);
/// Lowest id among the maximal logits.
Token argmax_token(std::span<const double> logits);

/// uncond + alpha * (cond - uncond), element-wise. alpha == 1 returns cond
/// exactly.
std::vector<double> cfg_logits(std::span<const double> cond, std::span<const double> uncond, double alpha);

enum class GuidanceMode {
  /// Conditioned and unconditioned streams combined with alpha_c.
  Guided,
  /// Edge segment from the conditioned stream alone.
  ConditionedOnly,
  /// Edge segment from the MASK-prefixed stream alone.
  UnconditionedOnly,
};

struct Generation {
  TokenSequence sequence;
  LaneGraph graph;
  DecodeDiagnostics diagnostics;
};

Generation generate(const Transformer<float>& model, const Raster& raster, const SamplerConfig& cfg,
                    const BevExtent& extent, GuidanceMode mode = GuidanceMode::Guided);

}  // namespace lanegraph
