#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sstream>

#include "lanegraph/train.hpp"

using namespace lanegraph;

namespace {

ModelConfig small_model() {
  ModelConfig c;
  c.num_layers = 1;
  c.embed_dim = 32;
  c.num_heads = 4;
  c.feedforward_dim = 64;
  c.patch_size = 8;
  c.raster_h = 32;
  c.raster_w = 32;
  return c;
}

std::vector<SceneSample> small_corpus(std::size_t n, const VocabSpec& vocab) {
  GenConfig g;
  g.raster_h = 32;
  g.raster_w = 32;
  g.max_vertices = 5;
  g.max_edges = 6;
  g.num_scenes = n;
  return generate_corpus(g, vocab, SerializationOrder::dfs());
}

}  // namespace

TEST_CASE("learning-rate schedule") {
  TrainSchedule s;
  s.steps = 100;
  s.learning_rate = 1.0;
  s.warmup_steps = 10;
  s.final_lr_fraction = 0.1;
  CHECK(s.lr_at(0) == doctest::Approx(0.1));
  CHECK(s.lr_at(9) == doctest::Approx(1.0));
  CHECK(s.lr_at(10) == doctest::Approx(1.0));
  CHECK(s.lr_at(55) == doctest::Approx(0.55));
  CHECK(s.lr_at(100) == doctest::Approx(0.1));
  for (std::size_t i = 11; i < 100; ++i) CHECK(s.lr_at(i) <= s.lr_at(i - 1));
}

TEST_CASE("useful_length") {
  CHECK(useful_length(std::vector<Token>{0, 1, 4, 4}) == 1);
  CHECK(useful_length(std::vector<Token>{0, 4, 4, 2}) == 3);
  CHECK(useful_length(std::vector<Token>{0}) == 0);
}

TEST_CASE("training reduces the loss and is deterministic") {
  const VocabSpec vocab;
  const auto corpus = small_corpus(16, vocab);
  TrainSchedule s;
  s.steps = 200;
  s.batch_size = 4;
  s.learning_rate = 1e-3;
  s.seed = 3;
  std::ostringstream metrics;
  TrainHooks hooks;
  hooks.metrics = &metrics;
  const TrainResult a = train(corpus, small_model(), vocab, s, hooks);
  REQUIRE(a.losses.size() == 200);
  double head = 0, tail = 0;
  for (std::size_t i = 0; i < 10; ++i) head += a.losses[i];
  for (std::size_t i = 190; i < 200; ++i) tail += a.losses[i];
  CHECK(tail < 0.7 * head);

  const TrainResult b = train(corpus, small_model(), vocab, s);
  CHECK(a.losses == b.losses);

  std::size_t lines = 0;
  std::string line;
  std::istringstream in(metrics.str());
  while (std::getline(in, line)) ++lines;
  CHECK(lines == 200);
}

TEST_CASE("condition dropout masks the vertex segment at the configured rate") {
  const VocabSpec vocab;
  const auto corpus = small_corpus(8, vocab);
  ModelConfig m = small_model();
  m.condition_dropout = 0.3;
  TrainSchedule s;
  s.steps = 100;
  s.batch_size = 8;
  std::size_t masked = 0, total = 0;
  TrainHooks hooks;
  hooks.on_batch = [&](const std::vector<std::vector<Token>>& batch) {
    for (const auto& in : batch) {
      ++total;
      masked += in.size() > 1 && in[1] == tokens::kMask ? 1 : 0;
    }
  };
  train(corpus, m, vocab, s, hooks);
  const double rate = static_cast<double>(masked) / static_cast<double>(total);
  const double sd = std::sqrt(0.3 * 0.7 / static_cast<double>(total));
  CHECK(std::abs(rate - 0.3) < 4 * sd);
}

TEST_CASE("checkpoint hook and argument errors") {
  const VocabSpec vocab;
  const auto corpus = small_corpus(4, vocab);
  TrainSchedule s;
  s.steps = 7;
  s.batch_size = 2;
  s.checkpoint_every = 3;
  std::vector<std::uint64_t> steps;
  TrainHooks hooks;
  hooks.on_checkpoint = [&](const Checkpoint& c) { steps.push_back(c.step); };
  const TrainResult r = train(corpus, small_model(), vocab, s, hooks);
  CHECK(steps == std::vector<std::uint64_t>{3, 6});
  CHECK(r.checkpoint.step == 7);

  CHECK_THROWS_AS(train({}, small_model(), vocab, s), std::invalid_argument);
  VocabSpec other = vocab;
  other.edge_len = 10;
  CHECK_THROWS_AS(train(corpus, small_model(), other, s), std::invalid_argument);
}
