#include "lanegraph/codec.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <deque>
#include <set>
#include <sstream>

#include "lanegraph/graph_io.hpp"
#include "lanegraph/random.hpp"

namespace lanegraph {

TokenClass VocabSpec::classify(Token t) const {
  switch (t) {
    case tokens::kStart: return TokenClass::Start;
    case tokens::kEov: return TokenClass::Eov;
    case tokens::kEoe: return TokenClass::Eoe;
    case tokens::kSplit: return TokenClass::Split;
    case tokens::kNa: return TokenClass::Na;
    case tokens::kMask: return TokenClass::Mask;
    default: break;
  }
  if (t >= vertex_coord_base() && t < mid_coord_base()) return TokenClass::VertexCoord;
  if (t >= mid_coord_base() && t < index_base()) return TokenClass::MidCoord;
  if (t >= index_base() && t < static_cast<Token>(vocab_size())) return TokenClass::Index;
  return TokenClass::Invalid;
}

void VocabSpec::check() const {
  if (num_bins < 1) throw std::invalid_argument("vocab: num_bins must be >= 1");
  if (max_vertices < 1) throw std::invalid_argument("vocab: max_vertices must be >= 1");
  if (vertex_len < 1 || edge_len < 1) throw std::invalid_argument("vocab: segment lengths must be >= 1");
}

std::string to_string(OrderKind kind) {
  switch (kind) {
    case OrderKind::Dfs: return "dfs";
    case OrderKind::Bfs: return "bfs";
    case OrderKind::CoordXy: return "coord_xy";
    case OrderKind::Random: return "random";
  }
  return "unknown";
}

OrderKind parse_order_kind(const std::string& name) {
  std::string lower;
  for (char c : name) lower.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  if (lower == "dfs") return OrderKind::Dfs;
  if (lower == "bfs") return OrderKind::Bfs;
  if (lower == "coord_xy" || lower == "coordxy" || lower == "coord") return OrderKind::CoordXy;
  if (lower == "random") return OrderKind::Random;
  throw std::invalid_argument("unknown serialization order '" + name + "'");
}

std::size_t quantize(double value, double lo, double hi, std::size_t num_bins) {
  if (!std::isfinite(value)) throw std::invalid_argument("quantize: non-finite value");
  if (!(lo < hi) || num_bins < 1) throw std::invalid_argument("quantize: need lo < hi and num_bins >= 1");
  const double clamped = std::clamp(value, lo, hi);
  const double scaled = std::floor((clamped - lo) / (hi - lo) * static_cast<double>(num_bins));
  return static_cast<std::size_t>(std::clamp(scaled, 0.0, static_cast<double>(num_bins - 1)));
}

double dequantize(std::size_t bin, double lo, double hi, std::size_t num_bins) {
  if (bin >= num_bins) throw std::invalid_argument("dequantize: bin out of range");
  return lo + (static_cast<double>(bin) + 0.5) * (hi - lo) / static_cast<double>(num_bins);
}

namespace {

bool xy_less(Vec2 a, Vec2 b) { return a.x < b.x || (a.x == b.x && a.y < b.y); }

// Stable sort of ids by coordinates, falling back to the id for exact ties.
void sort_by_xy(std::vector<std::size_t>& ids, const LaneGraph& g) {
  std::stable_sort(ids.begin(), ids.end(), [&](std::size_t a, std::size_t b) {
    if (xy_less(g.vertices[a], g.vertices[b])) return true;
    if (xy_less(g.vertices[b], g.vertices[a])) return false;
    return a < b;
  });
}

std::vector<std::vector<std::size_t>> sorted_children(const LaneGraph& g) {
  std::vector<std::vector<std::size_t>> children(g.vertices.size());
  for (const Edge& e : g.edges) children[e.src].push_back(e.tgt);
  for (auto& c : children) {
    sort_by_xy(c, g);
    c.erase(std::unique(c.begin(), c.end()), c.end());
  }
  return children;
}

std::vector<std::size_t> sorted_roots(const LaneGraph& g) {
  const auto indeg = g.in_degrees();
  std::vector<std::size_t> roots;
  for (std::size_t v = 0; v < g.vertices.size(); ++v) {
    if (indeg[v] == 0) roots.push_back(v);
  }
  sort_by_xy(roots, g);
  return roots;
}

std::vector<std::size_t> dfs_order(const LaneGraph& g) {
  const auto children = sorted_children(g);
  std::vector<bool> visited(g.vertices.size(), false);
  std::vector<std::size_t> order;
  std::vector<std::size_t> stack;
  for (std::size_t root : sorted_roots(g)) {
    stack.push_back(root);
    while (!stack.empty()) {
      const std::size_t v = stack.back();
      stack.pop_back();
      if (visited[v]) continue;
      visited[v] = true;
      order.push_back(v);
      for (auto it = children[v].rbegin(); it != children[v].rend(); ++it) {
        if (!visited[*it]) stack.push_back(*it);
      }
    }
  }
  return order;
}

std::vector<std::size_t> bfs_order(const LaneGraph& g) {
  const auto children = sorted_children(g);
  std::vector<bool> visited(g.vertices.size(), false);
  std::vector<std::size_t> order;
  for (std::size_t root : sorted_roots(g)) {
    if (visited[root]) continue;
    std::deque<std::size_t> queue{root};
    visited[root] = true;
    while (!queue.empty()) {
      const std::size_t v = queue.front();
      queue.pop_front();
      order.push_back(v);
      for (std::size_t c : children[v]) {
        if (!visited[c]) {
          visited[c] = true;
          queue.push_back(c);
        }
      }
    }
  }
  return order;
}

}  // namespace

std::vector<std::size_t> order_vertices(const LaneGraph& g, const SerializationOrder& order) {
  if (order.seed.has_value() != (order.kind == OrderKind::Random)) {
    throw std::invalid_argument("serialization order: seed must be given exactly for random order");
  }
  // Raises CycleError on cyclic input, and rejects bad indices.
  topological_order(g);

  std::vector<std::size_t> ids(g.vertices.size());
  for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = i;
  switch (order.kind) {
    case OrderKind::Dfs: return dfs_order(g);
    case OrderKind::Bfs: return bfs_order(g);
    case OrderKind::CoordXy: sort_by_xy(ids, g); return ids;
    case OrderKind::Random: {
      Rng rng(*order.seed);
      rng.shuffle(ids);
      return ids;
    }
  }
  return ids;
}

TokenSequence encode(const LaneGraph& g, const VocabSpec& vocab, const SerializationOrder& order) {
  vocab.check();
  const std::size_t n = g.vertices.size();
  if (n > vocab.max_vertices) {
    throw CapacityError("encode: " + std::to_string(n) + " vertices exceed max_vertices " +
                        std::to_string(vocab.max_vertices));
  }
  if (2 * n + 1 > vocab.vertex_len) {
    throw CapacityError("encode: vertex segment needs " + std::to_string(2 * n + 1) + " tokens, have " +
                        std::to_string(vocab.vertex_len));
  }
  const std::size_t edge_tokens = 3 * g.edges.size() + n + 1;
  if (edge_tokens > vocab.edge_len) {
    throw CapacityError("encode: edge segment needs " + std::to_string(edge_tokens) + " tokens, have " +
                        std::to_string(vocab.edge_len));
  }

  const auto perm = order_vertices(g, order);
  std::vector<std::size_t> position(n);
  for (std::size_t k = 0; k < n; ++k) position[perm[k]] = k;

  const BevExtent& ext = g.extent;
  auto vx = [&](double x) { return vocab.vertex_coord_base() + static_cast<Token>(quantize(x, ext.x_min, ext.x_max, vocab.num_bins)); };
  auto vy = [&](double y) { return vocab.vertex_coord_base() + static_cast<Token>(quantize(y, ext.y_min, ext.y_max, vocab.num_bins)); };
  auto mx = [&](double x) { return vocab.mid_coord_base() + static_cast<Token>(quantize(x, ext.x_min, ext.x_max, vocab.num_bins)); };
  auto my = [&](double y) { return vocab.mid_coord_base() + static_cast<Token>(quantize(y, ext.y_min, ext.y_max, vocab.num_bins)); };

  TokenSequence seq;
  seq.vertex_len = vocab.vertex_len;
  seq.edge_len = vocab.edge_len;
  seq.tokens.reserve(vocab.sequence_len());
  seq.tokens.push_back(tokens::kStart);
  for (std::size_t v : perm) {
    seq.tokens.push_back(vx(g.vertices[v].x));
    seq.tokens.push_back(vy(g.vertices[v].y));
  }
  seq.tokens.push_back(tokens::kEov);
  seq.tokens.resize(vocab.edge_offset(), tokens::kNa);

  const auto out = g.out_edges();
  for (std::size_t v : perm) {
    std::vector<std::size_t> edges = out[v];
    std::stable_sort(edges.begin(), edges.end(),
                     [&](std::size_t a, std::size_t b) { return position[g.edges[a].tgt] < position[g.edges[b].tgt]; });
    for (std::size_t id : edges) {
      const Edge& e = g.edges[id];
      seq.tokens.push_back(vocab.index_base() + static_cast<Token>(position[e.tgt]));
      seq.tokens.push_back(mx(e.mid.x));
      seq.tokens.push_back(my(e.mid.y));
    }
    seq.tokens.push_back(tokens::kSplit);
  }
  seq.tokens.push_back(tokens::kEoe);
  seq.tokens.resize(vocab.sequence_len(), tokens::kNa);
  return seq;
}

std::size_t DecodeDiagnostics::total() const {
  return missing_start + missing_eov + missing_eoe + dangling_coordinate + range_violations + incomplete_triples +
         bad_index + extra_subsequences + self_loops + duplicate_edges + cycle_edges;
}

std::string DecodeDiagnostics::summary() const {
  std::ostringstream os;
  os << "missing_start=" << missing_start << " missing_eov=" << missing_eov << " missing_eoe=" << missing_eoe
     << " dangling_coordinate=" << dangling_coordinate << " range_violations=" << range_violations
     << " incomplete_triples=" << incomplete_triples << " bad_index=" << bad_index
     << " extra_subsequences=" << extra_subsequences << " self_loops=" << self_loops
     << " duplicate_edges=" << duplicate_edges << " cycle_edges=" << cycle_edges;
  return os.str();
}

namespace {

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

DecodeResult decode(const TokenSequence& seq, const VocabSpec& vocab, const BevExtent& extent) {
  DecodeResult result;
  DecodeDiagnostics& diag = result.diagnostics;
  LaneGraph& g = result.graph;
  g.extent = extent;

  const auto& toks = seq.tokens;
  if (toks.empty() || toks[0] != tokens::kStart) ++diag.missing_start;

  // Vertex stream: everything before the first EOV of the vertex segment.
  const std::size_t v_begin = std::min<std::size_t>(1, toks.size());
  const std::size_t v_end = std::min(toks.size(), 1 + seq.vertex_len);
  std::size_t v_stop = v_end;
  for (std::size_t i = v_begin; i < v_end; ++i) {
    if (toks[i] == tokens::kEov) {
      v_stop = i;
      break;
    }
  }
  if (v_stop == v_end) ++diag.missing_eov;

  std::vector<std::size_t> coords;
  for (std::size_t i = v_begin; i < v_stop; ++i) {
    const TokenClass c = vocab.classify(toks[i]);
    if (c == TokenClass::VertexCoord) {
      coords.push_back(static_cast<std::size_t>(toks[i] - vocab.vertex_coord_base()));
    } else if (c != TokenClass::Na) {
      ++diag.range_violations;
    }
  }
  if (coords.size() % 2 != 0) ++diag.dangling_coordinate;
  for (std::size_t i = 0; i + 1 < coords.size(); i += 2) {
    g.vertices.push_back({dequantize(coords[i], extent.x_min, extent.x_max, vocab.num_bins),
                          dequantize(coords[i + 1], extent.y_min, extent.y_max, vocab.num_bins)});
  }
  const std::size_t n = g.vertices.size();

  // Edge stream: from the fixed edge offset up to the first EOE.
  const std::size_t e_begin = std::min(toks.size(), 1 + seq.vertex_len);
  const std::size_t e_end = std::min(toks.size(), 1 + seq.vertex_len + seq.edge_len);
  std::size_t e_stop = e_end;
  for (std::size_t i = e_begin; i < e_end; ++i) {
    if (toks[i] == tokens::kEoe) {
      e_stop = i;
      break;
    }
  }
  if (e_stop == e_end) ++diag.missing_eoe;

  std::vector<std::vector<Token>> subsequences(1);
  for (std::size_t i = e_begin; i < e_stop; ++i) {
    if (toks[i] == tokens::kSplit) {
      subsequences.emplace_back();
    } else if (toks[i] != tokens::kNa) {
      subsequences.back().push_back(toks[i]);
    }
  }
  if (subsequences.back().empty()) subsequences.pop_back();

  std::vector<std::vector<std::size_t>> children(n);
  std::set<std::pair<std::size_t, std::size_t>> present;
  auto emit = [&](std::size_t parent, std::size_t child, std::size_t bx, std::size_t by) {
    if (child >= n) {
      ++diag.bad_index;
      return;
    }
    if (child == parent) {
      ++diag.self_loops;
      return;
    }
    if (present.count({parent, child}) != 0) {
      ++diag.duplicate_edges;
      return;
    }
    if (reaches(children, child, parent)) {
      ++diag.cycle_edges;
      return;
    }
    present.insert({parent, child});
    children[parent].push_back(child);
    g.edges.push_back({parent, child,
                       {dequantize(bx, extent.x_min, extent.x_max, vocab.num_bins),
                        dequantize(by, extent.y_min, extent.y_max, vocab.num_bins)}});
  };

  for (std::size_t parent = 0; parent < subsequences.size(); ++parent) {
    if (parent >= n) {
      ++diag.extra_subsequences;
      continue;
    }
    int state = 0;  // 0: expect index, 1: expect mid x, 2: expect mid y
    std::size_t child = 0;
    std::size_t bx = 0;
    for (Token t : subsequences[parent]) {
      const TokenClass c = vocab.classify(t);
      if (state == 0) {
        if (c == TokenClass::Index) {
          child = static_cast<std::size_t>(t - vocab.index_base());
          state = 1;
        } else {
          ++diag.range_violations;
        }
      } else if (c == TokenClass::MidCoord) {
        const auto bin = static_cast<std::size_t>(t - vocab.mid_coord_base());
        if (state == 1) {
          bx = bin;
          state = 2;
        } else {
          emit(parent, child, bx, bin);
          state = 0;
        }
      } else {
        // Wrong range inside a triple: abort it, resynchronising on an index.
        ++diag.range_violations;
        if (c == TokenClass::Index) {
          child = static_cast<std::size_t>(t - vocab.index_base());
          state = 1;
        } else {
          state = 0;
        }
      }
    }
    if (state != 0) ++diag.incomplete_triples;
  }
  return result;
}

std::string sequence_to_string(const TokenSequence& seq, const VocabSpec& vocab) {
  std::ostringstream os;
  os << "vocab num_bins=" << vocab.num_bins << " max_vertices=" << vocab.max_vertices
     << " vertex_len=" << seq.vertex_len << " edge_len=" << seq.edge_len << "\n";
  for (std::size_t i = 0; i < seq.tokens.size(); ++i) {
    if (i > 0) os << ' ';
    os << seq.tokens[i];
  }
  os << "\n";
  return os.str();
}

std::pair<TokenSequence, VocabSpec> sequence_from_string(const std::string& text) {
  std::istringstream in(text);
  std::string header;
  if (!std::getline(in, header)) throw FormatError("sequence: missing header line");
  std::istringstream hs(header);
  std::string word;
  hs >> word;
  if (word != "vocab") throw FormatError("sequence: header must start with 'vocab'");
  VocabSpec vocab;
  std::set<std::string> seen;
  while (hs >> word) {
    const auto eq = word.find('=');
    if (eq == std::string::npos) throw FormatError("sequence: bad header field '" + word + "'");
    const std::string key = word.substr(0, eq);
    std::size_t value = 0;
    try {
      value = std::stoul(word.substr(eq + 1));
    } catch (const std::exception&) {
      throw FormatError("sequence: bad value in header field '" + word + "'");
    }
    if (key == "num_bins") vocab.num_bins = value;
    else if (key == "max_vertices") vocab.max_vertices = value;
    else if (key == "vertex_len") vocab.vertex_len = value;
    else if (key == "edge_len") vocab.edge_len = value;
    else throw FormatError("sequence: unknown header field '" + key + "'");
    seen.insert(key);
  }
  if (seen.size() != 4) throw FormatError("sequence: header needs num_bins, max_vertices, vertex_len, edge_len");

  TokenSequence seq;
  seq.vertex_len = vocab.vertex_len;
  seq.edge_len = vocab.edge_len;
  long long id = 0;
  while (in >> id) {
    if (id < 0 || static_cast<std::size_t>(id) >= vocab.vocab_size()) {
      throw FormatError("sequence: token id " + std::to_string(id) + " outside vocabulary");
    }
    seq.tokens.push_back(static_cast<Token>(id));
  }
  if (!in.eof()) throw FormatError("sequence: non-integer token");
  return {std::move(seq), vocab};
}

void write_sequence(const std::filesystem::path& path, const TokenSequence& seq, const VocabSpec& vocab) {
  write_text_file(path, sequence_to_string(seq, vocab));
}

std::pair<TokenSequence, VocabSpec> read_sequence(const std::filesystem::path& path) {
  return sequence_from_string(read_text_file(path));
}

}  // namespace lanegraph
