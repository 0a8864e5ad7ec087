#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "lanegraph/codec.hpp"
#include "lanegraph/graph.hpp"
#include "lanegraph/random.hpp"

namespace lanegraph {

/// Single-channel image, row-major, row 0 at y_max.
struct Raster {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<float> pixels;

  Raster() = default;
  Raster(std::size_t h, std::size_t w) : height(h), width(w), pixels(h * w, 0.0f) {}

  float& at(std::size_t row, std::size_t col) { return pixels[row * width + col]; }
  float at(std::size_t row, std::size_t col) const { return pixels[row * width + col]; }

  friend bool operator==(const Raster&, const Raster&) = default;
};

struct GenConfig {
  std::uint64_t seed = 0;
  std::size_t num_scenes = 100;
  std::size_t min_vertices = 3;
  std::size_t max_vertices = 10;
  std::size_t max_edges = 14;
  double fork_prob = 0.25;
  double merge_prob = 0.2;
  double curvature_scale = 2.0;
  std::size_t raster_h = 64;
  std::size_t raster_w = 64;
  double noise_std = 0.05;
  /// Half-width of rasterized strokes, in pixels.
  double stroke_half_width = 0.75;
  bool augment_flip = true;
  bool augment_rotate = true;
  bool augment_scale = true;
  BevExtent extent;

  void check() const;
  std::map<std::string, std::string> to_map() const;
  static GenConfig from_map(const std::map<std::string, std::string>& kv);
};

struct SceneSample {
  std::string id;
  Raster raster;
  LaneGraph graph;
  TokenSequence sequence;
};

LaneGraph generate_graph(const GenConfig& cfg, Rng& rng);

Raster rasterize(const LaneGraph& g, const GenConfig& cfg, Rng& rng);

/// Flip across the x-axis, then rotate, then scale, about the extent center.
struct Similarity {
  bool flip = false;
  double angle = 0.0;  // radians
  double scale = 1.0;

  bool is_identity() const { return !flip && angle == 0.0 && scale == 1.0; }
  Vec2 apply(Vec2 p, Vec2 center) const;
  Vec2 invert(Vec2 p, Vec2 center) const;
};

/// Applies `t` to raster and graph and re-encodes. Returns the input
/// unchanged when the transformed graph cannot be kept valid.
SceneSample apply_similarity(const SceneSample& sample, const Similarity& t, const VocabSpec& vocab,
                             const SerializationOrder& order);

/// Draws a random similarity per the enabled flags (flip with p=0.5,
/// rotation within +-10 degrees, scale within [0.9, 1.1]) and applies it.
SceneSample augment(const SceneSample& sample, Rng& rng, const GenConfig& cfg, const VocabSpec& vocab,
                    const SerializationOrder& order);

/// Order used to encode scene `index`; random orders get a per-scene seed.
SerializationOrder scene_order(const SerializationOrder& base, std::size_t index);

/// Scene i is drawn from an independent stream seeded by (cfg.seed, i).
SceneSample generate_scene(const GenConfig& cfg, std::size_t index, const VocabSpec& vocab,
                           const SerializationOrder& order);
std::vector<SceneSample> generate_corpus(const GenConfig& cfg, const VocabSpec& vocab,
                                         const SerializationOrder& order);

std::string scene_id(std::size_t index);

// Raster files: magic "LGRS1", uint32 height, uint32 width (little endian),
// then height*width little-endian float32 values, row-major. The text form
// "H W" followed by row-major decimals is accepted on read.
void write_raster(const std::filesystem::path& path, const Raster& raster);
Raster read_raster(const std::filesystem::path& path);

/// Writes scenes/<id>.graph, scenes/<id>.raster and a manifest.
void write_corpus(const std::filesystem::path& dir, const std::vector<SceneSample>& scenes, const GenConfig& cfg);

struct Corpus {
  GenConfig config;
  std::vector<SceneSample> scenes;
};

/// Loads a corpus directory and encodes every graph with `vocab`/`order`.
Corpus read_corpus(const std::filesystem::path& dir, const VocabSpec& vocab, const SerializationOrder& order);
std::vector<std::string> read_manifest_ids(const std::filesystem::path& dir);

}  // namespace lanegraph
