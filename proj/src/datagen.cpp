#include "lanegraph/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <sstream>

#include "lanegraph/graph_io.hpp"

namespace lanegraph {

void GenConfig::check() const {
  auto unit = [](double p) { return p >= 0.0 && p <= 1.0; };
  if (!unit(fork_prob) || !unit(merge_prob)) throw std::invalid_argument("gen: probabilities must lie in [0, 1]");
  if (min_vertices < 2 || min_vertices > max_vertices) throw std::invalid_argument("gen: need 2 <= min_vertices <= max_vertices");
  if (raster_h == 0 || raster_w == 0) throw std::invalid_argument("gen: raster size must be positive");
  if (!(noise_std >= 0.0) || !(curvature_scale >= 0.0)) throw std::invalid_argument("gen: negative noise or curvature");
  if (!extent.is_valid()) throw std::invalid_argument("gen: invalid extent");
}

std::map<std::string, std::string> GenConfig::to_map() const {
  auto num = [](double v) {
    std::ostringstream os;
    os << std::setprecision(17) << v;
    return os.str();
  };
  return {{"seed", std::to_string(seed)},
          {"num_scenes", std::to_string(num_scenes)},
          {"min_vertices", std::to_string(min_vertices)},
          {"max_vertices", std::to_string(max_vertices)},
          {"max_edges", std::to_string(max_edges)},
          {"fork_prob", num(fork_prob)},
          {"merge_prob", num(merge_prob)},
          {"curvature_scale", num(curvature_scale)},
          {"raster_h", std::to_string(raster_h)},
          {"raster_w", std::to_string(raster_w)},
          {"noise_std", num(noise_std)},
          {"stroke_half_width", num(stroke_half_width)},
          {"augment_flip", augment_flip ? "1" : "0"},
          {"augment_rotate", augment_rotate ? "1" : "0"},
          {"augment_scale", augment_scale ? "1" : "0"},
          {"x_min", num(extent.x_min)},
          {"x_max", num(extent.x_max)},
          {"y_min", num(extent.y_min)},
          {"y_max", num(extent.y_max)},
          {"sample_interval", num(extent.sample_interval)}};
}

GenConfig GenConfig::from_map(const std::map<std::string, std::string>& kv) {
  GenConfig c;
  auto get = [&](const char* key, auto& field) {
    const auto it = kv.find(key);
    if (it == kv.end()) return;
    std::istringstream in(it->second);
    in >> field;
    if (in.fail()) throw FormatError(std::string("gen config: bad value for ") + key);
  };
  get("seed", c.seed);
  get("num_scenes", c.num_scenes);
  get("min_vertices", c.min_vertices);
  get("max_vertices", c.max_vertices);
  get("max_edges", c.max_edges);
  get("fork_prob", c.fork_prob);
  get("merge_prob", c.merge_prob);
  get("curvature_scale", c.curvature_scale);
  get("raster_h", c.raster_h);
  get("raster_w", c.raster_w);
  get("noise_std", c.noise_std);
  get("stroke_half_width", c.stroke_half_width);
  get("augment_flip", c.augment_flip);
  get("augment_rotate", c.augment_rotate);
  get("augment_scale", c.augment_scale);
  get("x_min", c.extent.x_min);
  get("x_max", c.extent.x_max);
  get("y_min", c.extent.y_min);
  get("y_max", c.extent.y_max);
  get("sample_interval", c.extent.sample_interval);
  return c;
}

namespace {

constexpr double kMinVertexGap = 2.0;
constexpr double kMargin = 3.0;

struct Builder {
  const GenConfig& cfg;
  Rng& rng;
  LaneGraph g;

  std::size_t add_vertex(Vec2 p) {
    g.vertices.push_back(p);
    return g.vertices.size() - 1;
  }

  bool clear_of_others(Vec2 p) const {
    return std::all_of(g.vertices.begin(), g.vertices.end(), [&](Vec2 q) { return distance(p, q) >= kMinVertexGap; });
  }

  void add_edge(std::size_t src, std::size_t tgt) {
    const Vec2 a = g.vertices[src];
    const Vec2 b = g.vertices[tgt];
    const Vec2 chord = b - a;
    const double len = std::hypot(chord.x, chord.y);
    Vec2 mid = 0.5 * (a + b);
    if (len > 0.0 && cfg.curvature_scale > 0.0) {
      const double offset = rng.uniform(-cfg.curvature_scale, cfg.curvature_scale);
      mid = mid + (offset / len) * Vec2{-chord.y, chord.x};
    }
    const BevExtent& ext = g.extent;
    mid.x = std::clamp(mid.x, ext.x_min, ext.x_max);
    mid.y = std::clamp(mid.y, ext.y_min, ext.y_max);
    g.edges.push_back({src, tgt, mid});
  }

  double clamp_y(double y) const { return std::clamp(y, g.extent.y_min + kMargin, g.extent.y_max - kMargin); }
};

struct Head {
  std::size_t vertex;
  bool open = true;
};

LaneGraph grow(const GenConfig& cfg, Rng& rng, std::size_t budget) {
  Builder b{cfg, rng, {}};
  b.g.extent = cfg.extent;
  const BevExtent& ext = cfg.extent;

  // Starting lanes at the left side, spread in y.
  const std::size_t lanes = 1 + rng.index(3);
  std::vector<Head> heads;
  for (std::size_t attempt = 0; heads.size() < lanes && attempt < 20; ++attempt) {
    const Vec2 p{ext.x_min + rng.uniform(0.0, 12.0), rng.uniform(ext.y_min + kMargin, ext.y_max - kMargin)};
    bool spaced = b.clear_of_others(p);
    for (const Head& h : heads) spaced = spaced && std::abs(b.g.vertices[h.vertex].y - p.y) >= 6.0;
    if (spaced && b.g.vertices.size() < budget) heads.push_back({b.add_vertex(p), true});
  }

  auto room = [&](std::size_t extra) { return b.g.vertices.size() + extra <= budget; };

  for (int step = 0; step < 16; ++step) {
    std::sort(heads.begin(), heads.end(),
              [&](const Head& l, const Head& r) { return b.g.vertices[l.vertex].y < b.g.vertices[r.vertex].y; });
    std::vector<Head> next;
    for (std::size_t i = 0; i < heads.size(); ++i) {
      if (!heads[i].open) continue;
      const Vec2 p = b.g.vertices[heads[i].vertex];
      if (p.x >= ext.x_max - 1e-9) continue;

      double nx = p.x + rng.uniform(12.0, 24.0);
      if (nx > ext.x_max - 4.0) nx = ext.x_max;

      // Merge with the neighbouring lane above when close enough.
      if (i + 1 < heads.size() && heads[i + 1].open && rng.bernoulli(cfg.merge_prob) && room(1)) {
        const Vec2 q = b.g.vertices[heads[i + 1].vertex];
        if (std::abs(q.y - p.y) < 14.0 && q.x < ext.x_max) {
          const Vec2 c{std::max(nx, std::min(ext.x_max, q.x + 8.0)), b.clamp_y(0.5 * (p.y + q.y))};
          if (b.clear_of_others(c)) {
            const std::size_t v = b.add_vertex(c);
            b.add_edge(heads[i].vertex, v);
            b.add_edge(heads[i + 1].vertex, v);
            heads[i + 1].open = false;
            next.push_back({v, true});
            continue;
          }
        }
      }

      if (rng.bernoulli(cfg.fork_prob) && room(2)) {
        const double spread = rng.uniform(3.0, 7.0);
        const Vec2 c1{nx, b.clamp_y(p.y - spread)};
        const Vec2 c2{nx + rng.uniform(-2.0, 2.0), b.clamp_y(p.y + spread)};
        const Vec2 c2c{std::min(c2.x, ext.x_max), c2.y};
        if (distance(c1, c2c) >= kMinVertexGap && b.clear_of_others(c1) && b.clear_of_others(c2c)) {
          const std::size_t v1 = b.add_vertex(c1);
          const std::size_t v2 = b.add_vertex(c2c);
          b.add_edge(heads[i].vertex, v1);
          b.add_edge(heads[i].vertex, v2);
          next.push_back({v1, true});
          next.push_back({v2, true});
          continue;
        }
      }

      if (!room(1)) continue;
      const Vec2 c{nx, b.clamp_y(p.y + rng.uniform(-4.0, 4.0))};
      if (!b.clear_of_others(c)) continue;
      const std::size_t v = b.add_vertex(c);
      b.add_edge(heads[i].vertex, v);
      next.push_back({v, true});
    }
    heads = std::move(next);
    if (heads.empty()) break;
  }
  return b.g;
}

bool acceptable(const LaneGraph& g, const GenConfig& cfg) {
  return g.vertices.size() >= cfg.min_vertices && g.vertices.size() <= cfg.max_vertices &&
         g.edges.size() <= cfg.max_edges && !g.edges.empty() && validate(g).ok();
}

}  // namespace

LaneGraph generate_graph(const GenConfig& cfg, Rng& rng) {
  cfg.check();
  LaneGraph best;
  best.extent = cfg.extent;
  for (int attempt = 0; attempt < 64; ++attempt) {
    const std::size_t budget = cfg.min_vertices + rng.index(cfg.max_vertices - cfg.min_vertices + 1);
    LaneGraph g = grow(cfg, rng, budget);
    if (acceptable(g, cfg)) return g;
    const bool fits = g.vertices.size() <= cfg.max_vertices && g.edges.size() <= cfg.max_edges;
    if (fits && validate(g).ok() && g.vertices.size() > best.vertices.size()) best = std::move(g);
  }
  return best;
}

namespace {

struct PixelFrame {
  double col_scale;  // pixels per meter along x
  double row_scale;  // pixels per meter along y
  BevExtent ext;

  // Continuous pixel coordinates; pixel (r, c) has its center at (c + 0.5, r + 0.5).
  Vec2 to_pixel(Vec2 p) const { return {(p.x - ext.x_min) * col_scale, (ext.y_max - p.y) * row_scale}; }
  Vec2 to_world(double col, double row) const { return {ext.x_min + col / col_scale, ext.y_max - row / row_scale}; }
};

PixelFrame frame_for(const BevExtent& ext, std::size_t h, std::size_t w) {
  return {static_cast<double>(w) / (ext.x_max - ext.x_min), static_cast<double>(h) / (ext.y_max - ext.y_min), ext};
}

double segment_distance(Vec2 p, Vec2 a, Vec2 b) {
  const Vec2 ab = b - a;
  const double len2 = ab.x * ab.x + ab.y * ab.y;
  double t = 0.0;
  if (len2 > 0.0) t = std::clamp(((p.x - a.x) * ab.x + (p.y - a.y) * ab.y) / len2, 0.0, 1.0);
  return distance(p, a + t * ab);
}

constexpr float kLaneIntensity = 0.6f;
constexpr float kVertexIntensity = 1.0f;

void stamp(Raster& r, const std::vector<Vec2>& pixel_poly, double half_width, float intensity) {
  double cmin = 1e300, cmax = -1e300, rmin = 1e300, rmax = -1e300;
  for (Vec2 p : pixel_poly) {
    cmin = std::min(cmin, p.x);
    cmax = std::max(cmax, p.x);
    rmin = std::min(rmin, p.y);
    rmax = std::max(rmax, p.y);
  }
  const double reach = half_width + 1.0;
  const auto c0 = static_cast<long>(std::max(0.0, std::floor(cmin - reach)));
  const auto c1 = static_cast<long>(std::min(static_cast<double>(r.width) - 1.0, std::ceil(cmax + reach)));
  const auto r0 = static_cast<long>(std::max(0.0, std::floor(rmin - reach)));
  const auto r1 = static_cast<long>(std::min(static_cast<double>(r.height) - 1.0, std::ceil(rmax + reach)));
  for (long row = r0; row <= r1; ++row) {
    for (long col = c0; col <= c1; ++col) {
      const Vec2 center{static_cast<double>(col) + 0.5, static_cast<double>(row) + 0.5};
      double d = 1e300;
      if (pixel_poly.size() == 1) {
        d = distance(center, pixel_poly[0]);
      } else {
        for (std::size_t k = 1; k < pixel_poly.size(); ++k) {
          d = std::min(d, segment_distance(center, pixel_poly[k - 1], pixel_poly[k]));
        }
      }
      // Anti-aliased coverage: full inside the stroke, linear over half a pixel each side.
      const double coverage = std::clamp(half_width + 0.5 - d, 0.0, 1.0);
      if (coverage <= 0.0) continue;
      float& px = r.at(static_cast<std::size_t>(row), static_cast<std::size_t>(col));
      px = std::max(px, static_cast<float>(coverage) * intensity);
    }
  }
}

}  // namespace

Raster rasterize(const LaneGraph& g, const GenConfig& cfg, Rng& rng) {
  Raster r(cfg.raster_h, cfg.raster_w);
  const PixelFrame frame = frame_for(g.extent, cfg.raster_h, cfg.raster_w);
  for (const Edge& e : g.edges) {
    std::vector<Vec2> poly;
    for (Vec2 p : sample_edge(g, e)) poly.push_back(frame.to_pixel(p));
    stamp(r, poly, cfg.stroke_half_width, kLaneIntensity);
  }
  for (Vec2 v : g.vertices) stamp(r, {frame.to_pixel(v)}, cfg.stroke_half_width, kVertexIntensity);
  if (cfg.noise_std > 0.0) {
    for (float& px : r.pixels) {
      px = static_cast<float>(std::clamp(static_cast<double>(px) + cfg.noise_std * rng.normal(), 0.0, 1.0));
    }
  }
  return r;
}

Vec2 Similarity::apply(Vec2 p, Vec2 center) const {
  Vec2 q = p - center;
  if (flip) q.y = -q.y;
  const double c = std::cos(angle), s = std::sin(angle);
  q = {c * q.x - s * q.y, s * q.x + c * q.y};
  return center + scale * q;
}

Vec2 Similarity::invert(Vec2 p, Vec2 center) const {
  Vec2 q = (1.0 / scale) * (p - center);
  const double c = std::cos(angle), s = std::sin(angle);
  q = {c * q.x + s * q.y, -s * q.x + c * q.y};
  if (flip) q.y = -q.y;
  return center + q;
}

namespace {

float bilinear(const Raster& r, double col, double row) {
  // (col, row) in continuous pixel coordinates; sample positions are pixel centers.
  const double x = col - 0.5;
  const double y = row - 0.5;
  const double fx = std::floor(x), fy = std::floor(y);
  const double ax = x - fx, ay = y - fy;
  auto get = [&](double rr, double cc) -> double {
    if (rr < 0 || cc < 0 || rr >= static_cast<double>(r.height) || cc >= static_cast<double>(r.width)) return 0.0;
    return r.at(static_cast<std::size_t>(rr), static_cast<std::size_t>(cc));
  };
  const double v = (1 - ax) * (1 - ay) * get(fy, fx) + ax * (1 - ay) * get(fy, fx + 1) + (1 - ax) * ay * get(fy + 1, fx) +
                   ax * ay * get(fy + 1, fx + 1);
  return static_cast<float>(v);
}

}  // namespace

SceneSample apply_similarity(const SceneSample& sample, const Similarity& t, const VocabSpec& vocab,
                             const SerializationOrder& order) {
  if (t.is_identity()) return sample;
  const BevExtent& ext = sample.graph.extent;
  const Vec2 center{0.5 * (ext.x_min + ext.x_max), 0.5 * (ext.y_min + ext.y_max)};

  SceneSample out = sample;
  auto clamp_to_extent = [&](Vec2 p) {
    return Vec2{std::clamp(p.x, ext.x_min, ext.x_max), std::clamp(p.y, ext.y_min, ext.y_max)};
  };
  for (Vec2& v : out.graph.vertices) v = clamp_to_extent(t.apply(v, center));
  for (Edge& e : out.graph.edges) e.mid = clamp_to_extent(t.apply(e.mid, center));

  // Clamping may collapse edges; keep the original when that happens.
  for (const Edge& e : out.graph.edges) {
    if (distance(out.graph.vertices[e.src], out.graph.vertices[e.tgt]) < kMinVertexGap) return sample;
  }
  if (!validate(out.graph).ok()) return sample;

  const Raster& src = sample.raster;
  const PixelFrame frame = frame_for(ext, src.height, src.width);
  for (std::size_t row = 0; row < src.height; ++row) {
    for (std::size_t col = 0; col < src.width; ++col) {
      const Vec2 world = frame.to_world(static_cast<double>(col) + 0.5, static_cast<double>(row) + 0.5);
      const Vec2 pix = frame.to_pixel(t.invert(world, center));
      out.raster.at(row, col) = std::clamp(bilinear(src, pix.x, pix.y), 0.0f, 1.0f);
    }
  }
  try {
    out.sequence = encode(out.graph, vocab, order);
  } catch (const CapacityError&) {
    return sample;
  }
  return out;
}

SceneSample augment(const SceneSample& sample, Rng& rng, const GenConfig& cfg, const VocabSpec& vocab,
                    const SerializationOrder& order) {
  Similarity t;
  if (cfg.augment_flip) t.flip = rng.bernoulli(0.5);
  if (cfg.augment_rotate) t.angle = rng.uniform(-10.0, 10.0) * std::numbers::pi / 180.0;
  if (cfg.augment_scale) t.scale = rng.uniform(0.9, 1.1);
  return apply_similarity(sample, t, vocab, order);
}

SerializationOrder scene_order(const SerializationOrder& base, std::size_t index) {
  if (base.kind != OrderKind::Random) return base;
  return SerializationOrder::random(mix_seed(base.seed.value_or(0), index));
}

std::string scene_id(std::size_t index) {
  std::ostringstream os;
  os << std::setw(6) << std::setfill('0') << index;
  return os.str();
}

SceneSample generate_scene(const GenConfig& cfg, std::size_t index, const VocabSpec& vocab,
                           const SerializationOrder& order) {
  Rng rng(mix_seed(cfg.seed, index));
  SceneSample s;
  s.id = scene_id(index);
  s.graph = generate_graph(cfg, rng);
  s.raster = rasterize(s.graph, cfg, rng);
  s.sequence = encode(s.graph, vocab, scene_order(order, index));
  return s;
}

std::vector<SceneSample> generate_corpus(const GenConfig& cfg, const VocabSpec& vocab,
                                         const SerializationOrder& order) {
  std::vector<SceneSample> scenes;
  scenes.reserve(cfg.num_scenes);
  for (std::size_t i = 0; i < cfg.num_scenes; ++i) scenes.push_back(generate_scene(cfg, i, vocab, order));
  return scenes;
}

namespace {

constexpr char kRasterMagic[5] = {'L', 'G', 'R', 'S', '1'};

void put_u32(std::ostream& out, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(const std::string& buf, std::size_t at) {
  if (at + 4 > buf.size()) throw FormatError("raster: truncated file");
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(buf[at + static_cast<std::size_t>(i)]);
  return v;
}

}  // namespace

void write_raster(const std::filesystem::path& path, const Raster& raster) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(kRasterMagic, sizeof kRasterMagic);
  put_u32(out, static_cast<std::uint32_t>(raster.height));
  put_u32(out, static_cast<std::uint32_t>(raster.width));
  for (float f : raster.pixels) {
    std::uint32_t bits = 0;
    std::memcpy(&bits, &f, sizeof bits);
    put_u32(out, bits);
  }
  if (!out) throw IoError("write failed for " + path.string());
}

Raster read_raster(const std::filesystem::path& path) {
  const std::string buf = read_text_file(path);
  if (buf.size() >= 5 && std::memcmp(buf.data(), kRasterMagic, 5) == 0) {
    if (buf.size() < 13) throw FormatError("raster: truncated header");
    const std::size_t h = get_u32(buf, 5), w = get_u32(buf, 9);
    if (buf.size() != 13 + 4 * h * w) throw FormatError("raster: size does not match header");
    Raster r(h, w);
    for (std::size_t i = 0; i < r.pixels.size(); ++i) {
      const std::uint32_t bits = get_u32(buf, 13 + 4 * i);
      std::memcpy(&r.pixels[i], &bits, sizeof bits);
    }
    return r;
  }
  std::istringstream in(buf);
  std::size_t h = 0, w = 0;
  if (!(in >> h >> w) || h == 0 || w == 0) throw FormatError("raster: expected 'H W' header or LGRS1 magic");
  if (h > buf.size() || w > buf.size() / h) throw FormatError("raster: fewer values than H*W");
  Raster r(h, w);
  for (float& px : r.pixels) {
    if (!(in >> px)) throw FormatError("raster: fewer values than H*W");
  }
  return r;
}

void write_corpus(const std::filesystem::path& dir, const std::vector<SceneSample>& scenes, const GenConfig& cfg) {
  std::ostringstream manifest;
  manifest << "lanegraph-corpus 1\n";
  for (const auto& [key, value] : cfg.to_map()) manifest << key << '=' << value << '\n';
  for (const SceneSample& s : scenes) {
    write_graph(dir / "scenes" / (s.id + ".graph"), s.graph);
    write_raster(dir / "scenes" / (s.id + ".raster"), s.raster);
    manifest << "scene " << s.id << '\n';
  }
  write_text_file(dir / "manifest", manifest.str());
}

namespace {

std::pair<GenConfig, std::vector<std::string>> parse_manifest(const std::filesystem::path& dir) {
  std::istringstream in(read_text_file(dir / "manifest"));
  std::string line;
  if (!std::getline(in, line) || line != "lanegraph-corpus 1") throw FormatError("manifest: bad header in " + dir.string());
  std::map<std::string, std::string> kv;
  std::vector<std::string> ids;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (line.rfind("scene ", 0) == 0) {
      ids.push_back(line.substr(6));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw FormatError("manifest: bad line '" + line + "'");
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return {GenConfig::from_map(kv), ids};
}

}  // namespace

std::vector<std::string> read_manifest_ids(const std::filesystem::path& dir) { return parse_manifest(dir).second; }

Corpus read_corpus(const std::filesystem::path& dir, const VocabSpec& vocab, const SerializationOrder& order) {
  auto [cfg, ids] = parse_manifest(dir);
  Corpus corpus{cfg, {}};
  for (std::size_t i = 0; i < ids.size(); ++i) {
    SceneSample s;
    s.id = ids[i];
    s.graph = read_graph(dir / "scenes" / (ids[i] + ".graph"));
    s.raster = read_raster(dir / "scenes" / (ids[i] + ".raster"));
    if (s.raster.height != cfg.raster_h || s.raster.width != cfg.raster_w) {
      throw FormatError("corpus: raster size of scene " + ids[i] + " does not match manifest");
    }
    s.sequence = encode(s.graph, vocab, scene_order(order, i));
    corpus.scenes.push_back(std::move(s));
  }
  return corpus;
}

}  // namespace lanegraph
