#include "lanegraph/inference.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>

namespace lanegraph {

void SamplerConfig::check() const {
  if (!(nucleus_p > 0.0 && nucleus_p <= 1.0)) throw std::invalid_argument("sampler: nucleus_p must lie in (0, 1]");
  if (!(temperature > 0.0) || !std::isfinite(temperature)) throw std::invalid_argument("sampler: temperature must be > 0");
  if (!std::isfinite(alpha_c) || alpha_c < 0.0) throw std::invalid_argument("sampler: alpha_c must be finite and >= 0");
}

NucleusSet nucleus_set(std::span<const double> logits, double p, double temperature) {
  std::vector<double> probs(logits.size(), 0.0);
  double mx = -std::numeric_limits<double>::infinity();
  for (double l : logits) mx = std::max(mx, l);
  if (!std::isfinite(mx)) throw std::invalid_argument("nucleus: no finite logit");
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    probs[i] = std::isinf(logits[i]) && logits[i] < 0 ? 0.0 : std::exp((logits[i] - mx) / temperature);
    sum += probs[i];
  }
  std::vector<Token> order(logits.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](Token a, Token b) { return probs[static_cast<std::size_t>(a)] > probs[static_cast<std::size_t>(b)]; });

  NucleusSet set;
  double cumulative = 0.0;
  for (Token id : order) {
    const double pr = probs[static_cast<std::size_t>(id)] / sum;
    if (pr <= 0.0) break;
    set.ids.push_back(id);
    set.probs.push_back(pr);
    cumulative += pr;
    if (cumulative >= p) break;
  }
  return set;
}

Token nucleus_sample(std::span<const double> logits, double p, double temperature, Rng& rng) {
  const NucleusSet set = nucleus_set(logits, p, temperature);
  const double mass = std::accumulate(set.probs.begin(), set.probs.end(), 0.0);
  const double u = rng.uniform() * mass;
  double acc = 0.0;
  for (std::size_t i = 0; i < set.ids.size(); ++i) {
    acc += set.probs[i];
    if (u < acc) return set.ids[i];
  }
  return set.ids.back();
}

Token argmax_token(std::span<const double> logits) {
  return static_cast<Token>(std::max_element(logits.begin(), logits.end()) - logits.begin());
}

std::vector<double> cfg_logits(std::span<const double> cond, std::span<const double> uncond, double alpha) {
  if (cond.size() != uncond.size()) throw std::invalid_argument("cfg_logits: length mismatch");
  if (alpha == 1.0) return {cond.begin(), cond.end()};
  std::vector<double> out(cond.size());
  for (std::size_t i = 0; i < cond.size(); ++i) out[i] = uncond[i] + alpha * (cond[i] - uncond[i]);
  return out;
}

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

std::vector<double> to_double(const Eigen::Matrix<float, 1, Eigen::Dynamic>& row) {
  std::vector<double> out(static_cast<std::size_t>(row.size()));
  for (Eigen::Index i = 0; i < row.size(); ++i) out[static_cast<std::size_t>(i)] = row(i);
  return out;
}

void keep_range(std::vector<bool>& allowed, Token lo, std::size_t count) {
  for (std::size_t i = 0; i < count; ++i) allowed[static_cast<std::size_t>(lo) + i] = true;
}

void apply_mask(std::vector<double>& logits, const std::vector<bool>& allowed) {
  for (std::size_t i = 0; i < logits.size(); ++i) {
    if (!allowed[i]) logits[i] = kNegInf;
  }
}

bool reaches(const std::vector<std::vector<std::size_t>>& children, std::size_t from, std::size_t to) {
  std::vector<bool> seen(children.size(), false);
  std::vector<std::size_t> stack{from};
  while (!stack.empty()) {
    const std::size_t v = stack.back();
    stack.pop_back();
    if (v == to) return true;
    if (seen[v]) continue;
    seen[v] = true;
    for (std::size_t c : children[v]) stack.push_back(c);
  }
  return false;
}

}  // namespace

Generation generate(const Transformer<float>& model, const Raster& raster, const SamplerConfig& cfg,
                    const BevExtent& extent, GuidanceMode mode) {
  cfg.check();
  const VocabSpec& vocab = model.vocab();
  const std::size_t vsize = vocab.vocab_size();
  const std::size_t vertex_len = vocab.vertex_len;
  const std::size_t seq_len = vocab.sequence_len();
  const std::size_t vertex_cap = cfg.max_vertex_len == 0 ? vertex_len : std::min(cfg.max_vertex_len, vertex_len);
  const std::size_t edge_cap = cfg.max_edge_len == 0 ? vocab.edge_len : std::min(cfg.max_edge_len, vocab.edge_len);
  Rng rng(cfg.seed);

  auto pick = [&](std::vector<double>& logits) {
    return cfg.greedy ? argmax_token(logits) : nucleus_sample(logits, cfg.nucleus_p, cfg.temperature, rng);
  };

  const Matrix<float> context = model.embed_context(raster);
  DecodeState<float> cond = model.begin_decode(context);
  std::vector<Token> seq{tokens::kStart};
  std::vector<double> logits = to_double(model.decode_step(cond, tokens::kStart));

  // Vertex segment: single stream.
  std::size_t coords = 0;
  while (seq.size() < 1 + vertex_cap) {
    const std::size_t remaining = 1 + vertex_cap - seq.size();
    if (cfg.grammar_mask) {
      std::vector<bool> allowed(vsize, false);
      if (coords % 2 == 1) {
        keep_range(allowed, vocab.vertex_coord_base(), vocab.num_bins);
      } else {
        allowed[tokens::kEov] = true;
        if (coords / 2 < vocab.max_vertices && remaining >= 3) keep_range(allowed, vocab.vertex_coord_base(), vocab.num_bins);
      }
      apply_mask(logits, allowed);
    }
    const Token t = pick(logits);
    seq.push_back(t);
    if (t == tokens::kEov) break;
    if (vocab.classify(t) == TokenClass::VertexCoord) ++coords;
    logits = to_double(model.decode_step(cond, t));
  }
  // Pad the vertex segment; the last fed position yields the first edge logits.
  if (seq.back() == tokens::kEov || seq.size() < 1 + vertex_len) {
    if (seq.back() == tokens::kEov) logits = to_double(model.decode_step(cond, tokens::kEov));
    while (seq.size() < 1 + vertex_len) {
      seq.push_back(tokens::kNa);
      logits = to_double(model.decode_step(cond, tokens::kNa));
    }
  }
  const std::size_t num_vertices = coords / 2;

  // Edge segment: conditioned and MASK-prefixed streams share sampled history.
  const bool need_uncond = mode == GuidanceMode::UnconditionedOnly || (mode == GuidanceMode::Guided && cfg.alpha_c != 1.0);
  const bool need_cond = mode != GuidanceMode::UnconditionedOnly;
  DecodeState<float> uncond;
  std::vector<double> uncond_logits;
  if (need_uncond) {
    uncond = model.begin_decode(context);
    uncond_logits = to_double(model.decode_step(uncond, tokens::kStart));
    for (std::size_t i = 0; i < vertex_len; ++i) uncond_logits = to_double(model.decode_step(uncond, tokens::kMask));
  }

  std::size_t parent = 0;
  int triple_state = 0;
  std::size_t pending_child = 0;
  std::vector<std::vector<std::size_t>> children(num_vertices);
  std::set<std::pair<std::size_t, std::size_t>> present;
  const std::size_t edge_end = 1 + vertex_len + edge_cap;

  while (seq.size() < edge_end) {
    std::vector<double> combined;
    if (mode == GuidanceMode::ConditionedOnly) combined = logits;
    else if (mode == GuidanceMode::UnconditionedOnly) combined = uncond_logits;
    else combined = need_uncond ? cfg_logits(logits, uncond_logits, cfg.alpha_c) : logits;

    const std::size_t remaining = edge_end - seq.size();
    if (cfg.grammar_mask) {
      std::vector<bool> allowed(vsize, false);
      if (triple_state == 1 || triple_state == 2) {
        keep_range(allowed, vocab.mid_coord_base(), vocab.num_bins);
      } else if (parent >= num_vertices) {
        allowed[tokens::kEoe] = true;
      } else {
        const std::size_t reserve = (num_vertices - parent) + 1;
        if (remaining >= reserve) allowed[tokens::kSplit] = true;
        if (remaining >= reserve + 3) {
          for (std::size_t c = 0; c < num_vertices && c < vocab.max_vertices; ++c) {
            if (c == parent || present.count({parent, c}) != 0 || reaches(children, c, parent)) continue;
            allowed[static_cast<std::size_t>(vocab.index_base()) + c] = true;
          }
        }
        if (!allowed[tokens::kSplit]) allowed[tokens::kEoe] = true;
      }
      apply_mask(combined, allowed);
    }
    const Token t = pick(combined);
    seq.push_back(t);
    if (t == tokens::kEoe) break;

    const TokenClass c = vocab.classify(t);
    if (triple_state == 0) {
      if (c == TokenClass::Split) {
        ++parent;
      } else if (c == TokenClass::Index) {
        pending_child = static_cast<std::size_t>(t - vocab.index_base());
        triple_state = 1;
      }
    } else if (triple_state == 1) {
      triple_state = c == TokenClass::MidCoord ? 2 : 0;
    } else {
      if (c == TokenClass::MidCoord && parent < num_vertices && pending_child < num_vertices) {
        present.insert({parent, pending_child});
        children[parent].push_back(pending_child);
      }
      triple_state = 0;
    }

    if (seq.size() >= seq_len) break;
    if (need_cond) logits = to_double(model.decode_step(cond, t));
    if (need_uncond) uncond_logits = to_double(model.decode_step(uncond, t));
  }
  seq.resize(seq_len, tokens::kNa);

  Generation out;
  out.sequence = TokenSequence{std::move(seq), vocab.vertex_len, vocab.edge_len};
  DecodeResult decoded = decode(out.sequence, vocab, extent);
  out.graph = std::move(decoded.graph);
  out.diagnostics = decoded.diagnostics;
  return out;
}

}  // namespace lanegraph
