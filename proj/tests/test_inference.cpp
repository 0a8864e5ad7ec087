#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <limits>
#include <map>

#include "lanegraph/inference.hpp"

using namespace lanegraph;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

ModelConfig tiny_config() {
  ModelConfig c;
  c.num_layers = 1;
  c.embed_dim = 16;
  c.num_heads = 2;
  c.feedforward_dim = 16;
  c.patch_size = 8;
  c.raster_h = 16;
  c.raster_w = 16;
  return c;
}

Raster noise_raster(Rng& rng) {
  Raster r(16, 16);
  for (float& p : r.pixels) p = static_cast<float>(rng.uniform());
  return r;
}

// Softmax then sort, written independently of the library.
std::vector<std::pair<double, Token>> sorted_probs(const std::vector<double>& logits) {
  double mx = -kInf;
  for (double l : logits) mx = std::max(mx, l);
  std::vector<std::pair<double, Token>> out;
  double sum = 0;
  for (double l : logits) sum += l == -kInf ? 0.0 : std::exp(l - mx);
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out.push_back({logits[i] == -kInf ? 0.0 : std::exp(logits[i] - mx) / sum, static_cast<Token>(i)});
  }
  std::sort(out.begin(), out.end(), [](auto a, auto b) { return a.first != b.first ? a.first > b.first : a.second < b.second; });
  return out;
}

}  // namespace

TEST_CASE("nucleus set examples") {
  const std::vector<double> l{std::log(0.5), std::log(0.3), std::log(0.2)};
  CHECK(nucleus_set(l, 0.5, 1.0).ids == std::vector<Token>{0});
  CHECK(nucleus_set(l, 0.6, 1.0).ids == std::vector<Token>{0, 1});
  CHECK(nucleus_set(l, 1.0, 1.0).ids == std::vector<Token>{0, 1, 2});

  const std::vector<double> tie{0.0, 0.0, 0.0, 0.0};
  CHECK(nucleus_set(tie, 0.5, 1.0).ids == std::vector<Token>{0, 1});

  const std::vector<double> masked{-kInf, 1.0, -kInf};
  const auto s = nucleus_set(masked, 1.0, 1.0);
  CHECK(s.ids == std::vector<Token>{1});
  CHECK(s.probs[0] == doctest::Approx(1.0));
  CHECK_THROWS_AS(nucleus_set(std::vector<double>{-kInf, -kInf}, 0.9, 1.0), std::invalid_argument);

  CHECK(argmax_token(std::vector<double>{1.0, 3.0, 3.0, 2.0}) == 1);
}

TEST_CASE("nucleus set is the minimal prefix reaching p") {
  Rng rng(1);
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<double> l(3 + rng.index(20));
    for (double& x : l) x = rng.uniform() < 0.1 ? -kInf : 3.0 * rng.normal();
    if (std::all_of(l.begin(), l.end(), [](double x) { return x == -kInf; })) l[0] = 0.0;
    const double p = rng.uniform(0.05, 1.0);
    const double temp = rng.uniform(0.3, 2.0);
    std::vector<double> scaled = l;
    for (double& x : scaled) x /= temp;
    const auto ref = sorted_probs(scaled);
    const auto set = nucleus_set(l, p, temp);
    REQUIRE(!set.ids.empty());
    double mass = 0;
    for (std::size_t i = 0; i < set.ids.size(); ++i) {
      CHECK(set.ids[i] == ref[i].second);
      CHECK(set.probs[i] == doctest::Approx(ref[i].first));
      mass += ref[i].first;
    }
    const double without_last = mass - ref[set.ids.size() - 1].first;
    const bool exhausted = set.ids.size() == ref.size() || ref[set.ids.size()].first == 0.0;
    CHECK((mass >= p - 1e-12 || exhausted));
    CHECK(without_last < p);
  }
}

TEST_CASE("nucleus sampling with p = 1 follows the softmax") {
  const std::vector<double> l{0.0, std::log(2.0), std::log(3.0), std::log(4.0)};
  Rng rng(9);
  std::vector<int> counts(4, 0);
  const int n = 100000;
  for (int i = 0; i < n; ++i) ++counts[static_cast<std::size_t>(nucleus_sample(l, 1.0, 1.0, rng))];
  for (std::size_t k = 0; k < 4; ++k) {
    const double expected = (static_cast<double>(k) + 1.0) / 10.0;
    const double sd = std::sqrt(expected * (1 - expected) / n);
    CHECK(std::abs(counts[k] / static_cast<double>(n) - expected) < 5 * sd);
  }
}

TEST_CASE("guidance algebra") {
  Rng rng(2);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> c(10), u(10);
    for (auto& x : c) x = rng.normal();
    for (auto& x : u) x = rng.normal();
    CHECK(cfg_logits(c, u, 1.0) == c);
    CHECK(cfg_logits(c, u, 0.0) == u);
    const double a = rng.uniform(0.0, 8.0);
    const auto g = cfg_logits(c, u, a);
    for (std::size_t i = 0; i < c.size(); ++i) CHECK(g[i] == doctest::Approx(u[i] + a * (c[i] - u[i])));
    // Affine in alpha: the midpoint of two alphas is the average of the outputs.
    const auto g2 = cfg_logits(c, u, 2 * a);
    for (std::size_t i = 0; i < c.size(); ++i) CHECK((g2[i] + u[i]) / 2 == doctest::Approx(g[i]));
    // Equal streams are a fixed point.
    const auto same = cfg_logits(c, c, a);
    for (std::size_t i = 0; i < c.size(); ++i) CHECK(same[i] == doctest::Approx(c[i]));
  }
  CHECK_THROWS_AS(cfg_logits(std::vector<double>{1.0}, std::vector<double>{1.0, 2.0}, 2.0), std::invalid_argument);
}

TEST_CASE("sampler config checks") {
  SamplerConfig c;
  CHECK_NOTHROW(c.check());
  c.nucleus_p = 0.0;
  CHECK_THROWS_AS(c.check(), std::invalid_argument);
  c = {};
  c.temperature = 0.0;
  CHECK_THROWS_AS(c.check(), std::invalid_argument);
  c = {};
  c.alpha_c = -1.0;
  CHECK_THROWS_AS(c.check(), std::invalid_argument);
}

TEST_CASE("masked generation always decodes cleanly") {
  const VocabSpec vocab;
  const BevExtent extent;
  Rng rng(3);
  std::size_t with_edges = 0;
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    const Transformer<float> model(tiny_config(), vocab, seed);
    const Raster r = noise_raster(rng);
    SamplerConfig cfg;
    cfg.seed = seed;
    cfg.temperature = 3.0;
    cfg.nucleus_p = 1.0;
    cfg.alpha_c = static_cast<double>(seed % 5);
    if (seed % 3 == 0) {
      cfg.max_vertex_len = 1 + seed % 9;
      cfg.max_edge_len = 1 + seed % 11;
    }
    const Generation g = generate(model, r, cfg, extent);
    INFO("seed ", seed, " ", g.diagnostics.summary());
    CHECK(g.diagnostics.total() == 0);
    CHECK(validate(g.graph).ok());
    CHECK(g.sequence.tokens.size() == vocab.sequence_len());
    with_edges += g.graph.edges.empty() ? 0 : 1;
  }
  CHECK(with_edges > 0);
}

TEST_CASE("generation is deterministic and guidance modes agree at the endpoints") {
  const VocabSpec vocab;
  const BevExtent extent;
  const Transformer<float> model(tiny_config(), vocab, 11);
  Rng rng(4);
  const Raster r = noise_raster(rng);

  SamplerConfig greedy;
  greedy.greedy = true;
  CHECK(generate(model, r, greedy, extent).sequence == generate(model, r, greedy, extent).sequence);

  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    SamplerConfig cfg;
    cfg.seed = seed;
    cfg.temperature = 2.0;
    cfg.alpha_c = 1.0;
    CHECK(generate(model, r, cfg, extent).sequence == generate(model, r, cfg, extent, GuidanceMode::ConditionedOnly).sequence);
    cfg.alpha_c = 0.0;
    CHECK(generate(model, r, cfg, extent).sequence ==
          generate(model, r, cfg, extent, GuidanceMode::UnconditionedOnly).sequence);
    cfg.alpha_c = 3.0;
    CHECK(generate(model, r, cfg, extent).sequence == generate(model, r, cfg, extent).sequence);
  }
}

TEST_CASE("segment caps bound the generated lengths") {
  const VocabSpec vocab;
  const BevExtent extent;
  const Transformer<float> model(tiny_config(), vocab, 5);
  Rng rng(6);
  SamplerConfig cfg;
  cfg.temperature = 3.0;
  cfg.max_vertex_len = 5;
  cfg.max_edge_len = 4;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    cfg.seed = seed;
    const Generation g = generate(model, noise_raster(rng), cfg, extent);
    const auto& t = g.sequence.tokens;
    for (std::size_t i = 1 + cfg.max_vertex_len; i <= vocab.vertex_len; ++i) CHECK(t[i] == tokens::kNa);
    for (std::size_t i = vocab.edge_offset() + cfg.max_edge_len; i < t.size(); ++i) CHECK(t[i] == tokens::kNa);
    CHECK(g.graph.vertices.size() <= 2);
  }
}
