#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "lanegraph/graph.hpp"

namespace lanegraph {

using Token = std::int32_t;

/// Structural token ids. They sit below every value range.
namespace tokens {
inline constexpr Token kStart = 0;
inline constexpr Token kEov = 1;
inline constexpr Token kEoe = 2;
inline constexpr Token kSplit = 3;
inline constexpr Token kNa = 4;
inline constexpr Token kMask = 5;
inline constexpr Token kNumSpecial = 6;
}  // namespace tokens

enum class TokenClass { Start, Eov, Eoe, Split, Na, Mask, VertexCoord, MidCoord, Index, Invalid };

/// Shared vocabulary plus the padded sequence layout.
///
/// Layout of ids: [specials | vertex coords (num_bins) | midpoint coords
/// (num_bins) | child indices (max_vertices)].
struct VocabSpec {
  std::size_t num_bins = 192;
  std::size_t max_vertices = 12;
  std::size_t vertex_len = 26;
  std::size_t edge_len = 56;

  Token vertex_coord_base() const { return tokens::kNumSpecial; }
  Token mid_coord_base() const { return vertex_coord_base() + static_cast<Token>(num_bins); }
  Token index_base() const { return mid_coord_base() + static_cast<Token>(num_bins); }
  std::size_t vocab_size() const { return static_cast<std::size_t>(index_base()) + max_vertices; }
  std::size_t sequence_len() const { return 1 + vertex_len + edge_len; }
  /// First position of the edge segment.
  std::size_t edge_offset() const { return 1 + vertex_len; }

  TokenClass classify(Token t) const;
  void check() const;

  friend bool operator==(const VocabSpec&, const VocabSpec&) = default;
};

struct TokenSequence {
  std::vector<Token> tokens;
  std::size_t vertex_len = 0;
  std::size_t edge_len = 0;

  friend bool operator==(const TokenSequence&, const TokenSequence&) = default;
};

enum class OrderKind { Dfs, Bfs, CoordXy, Random };

struct SerializationOrder {
  OrderKind kind = OrderKind::Dfs;
  std::optional<std::uint64_t> seed;

  static SerializationOrder dfs() { return {OrderKind::Dfs, std::nullopt}; }
  static SerializationOrder bfs() { return {OrderKind::Bfs, std::nullopt}; }
  static SerializationOrder coord_xy() { return {OrderKind::CoordXy, std::nullopt}; }
  static SerializationOrder random(std::uint64_t seed) { return {OrderKind::Random, seed}; }
};

std::string to_string(OrderKind kind);
/// Accepts dfs, bfs, coord_xy, random (case-insensitive).
OrderKind parse_order_kind(const std::string& name);

class CapacityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::size_t quantize(double value, double lo, double hi, std::size_t num_bins);
double dequantize(std::size_t bin, double lo, double hi, std::size_t num_bins);

/// Returns vertex ids in serialization order (position -> vertex id).
std::vector<std::size_t> order_vertices(const LaneGraph& g, const SerializationOrder& order);

TokenSequence encode(const LaneGraph& g, const VocabSpec& vocab, const SerializationOrder& order);

/// Counts of each best-effort recovery action taken by decode.
struct DecodeDiagnostics {
  std::size_t missing_start = 0;
  std::size_t missing_eov = 0;
  std::size_t missing_eoe = 0;
  std::size_t dangling_coordinate = 0;
  std::size_t range_violations = 0;
  std::size_t incomplete_triples = 0;
  std::size_t bad_index = 0;
  std::size_t extra_subsequences = 0;
  std::size_t self_loops = 0;
  std::size_t duplicate_edges = 0;
  std::size_t cycle_edges = 0;

  std::size_t total() const;
  std::string summary() const;

  friend bool operator==(const DecodeDiagnostics&, const DecodeDiagnostics&) = default;
};

struct DecodeResult {
  LaneGraph graph;
  DecodeDiagnostics diagnostics;
};

/// Best-effort inverse of encode. Never throws on malformed token content;
/// every repair is counted in the diagnostics.
DecodeResult decode(const TokenSequence& seq, const VocabSpec& vocab, const BevExtent& extent);

// Sequence files: first line
//   vocab num_bins=<n> max_vertices=<m> vertex_len=<a> edge_len=<b>
// second line: space-separated token ids.
std::string sequence_to_string(const TokenSequence& seq, const VocabSpec& vocab);
std::pair<TokenSequence, VocabSpec> sequence_from_string(const std::string& text);
void write_sequence(const std::filesystem::path& path, const TokenSequence& seq, const VocabSpec& vocab);
std::pair<TokenSequence, VocabSpec> read_sequence(const std::filesystem::path& path);

}  // namespace lanegraph
