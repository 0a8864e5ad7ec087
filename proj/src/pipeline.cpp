#include "lanegraph/pipeline.hpp"

#include <chrono>
#include <cstdio>
#include <map>
#include <sstream>

#include "lanegraph/graph_io.hpp"

namespace lanegraph {

bool selftest(std::uint64_t seed, std::ostream& out, std::size_t num_scenes) {
  GenConfig gen;
  gen.seed = seed;
  gen.num_scenes = num_scenes;
  const VocabSpec vocab;
  const SerializationOrder order = SerializationOrder::dfs();
  const double threshold = 1.0;

  bool pass = true;
  std::size_t perfect = 0, vacuous_connectivity = 0;
  out << "selftest seed=" << seed << " scenes=" << num_scenes << " threshold=" << threshold << '\n';
  out << "scene vertices edges m_p m_r m_f detect c_p c_r c_f\n";
  for (std::size_t i = 0; i < num_scenes; ++i) {
    const SceneSample s = generate_scene(gen, i, vocab, order);
    const auto [seq, parsed_vocab] = sequence_from_string(sequence_to_string(s.sequence, vocab));
    const DecodeResult dec = decode(seq, parsed_vocab, gen.extent);
    const bool valid = validate(dec.graph).ok() && dec.diagnostics.total() == 0 && parsed_vocab == vocab &&
                       seq.tokens == s.sequence.tokens;
    const EvalReport r = evaluate(dec.graph, s.graph, threshold);
    const bool m_ok = !r.m_undefined && r.m_precision == 1.0 && r.m_recall == 1.0 && r.detect_ratio == 1.0;
    const bool c_ok = r.c_undefined ? edge_connections(s.graph).empty() : (r.c_precision == 1.0 && r.c_recall == 1.0);
    if (r.c_undefined) ++vacuous_connectivity;
    const bool ok = valid && m_ok && c_ok;
    perfect += ok ? 1 : 0;
    pass = pass && ok;
    out << s.id << ' ' << dec.graph.vertices.size() << ' ' << dec.graph.edges.size() << ' ' << format_scores(r)
        << (ok ? "" : " MISMATCH") << '\n';
  }
  out << "identity " << perfect << '/' << num_scenes << " scenes";
  if (vacuous_connectivity > 0) out << " (" << vacuous_connectivity << " without connections)";
  out << '\n' << "selftest: " << (pass ? "PASS" : "FAIL") << '\n';
  return pass;
}

Split make_split(const GenConfig& gen, std::size_t n_train, std::size_t n_test, const VocabSpec& vocab,
                 const SerializationOrder& order) {
  Split s;
  s.train.reserve(n_train);
  s.test.reserve(n_test);
  for (std::size_t i = 0; i < n_train; ++i) s.train.push_back(generate_scene(gen, i, vocab, order));
  for (std::size_t i = 0; i < n_test; ++i) s.test.push_back(generate_scene(gen, n_train + i, vocab, order));
  return s;
}

std::vector<EvalReport> evaluate_model(const Transformer<float>& model, const std::vector<SceneSample>& scenes,
                                       const SamplerConfig& sampler, double threshold, GuidanceMode mode) {
  std::vector<EvalReport> reports;
  reports.reserve(scenes.size());
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    SamplerConfig sc = sampler;
    sc.seed = mix_seed(sampler.seed, i);
    const Generation g = generate(model, scenes[i].raster, sc, scenes[i].graph.extent, mode);
    reports.push_back(evaluate(g.graph, scenes[i].graph, threshold));
  }
  return reports;
}

std::uint64_t fnv1a(const std::string& text) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

Checkpoint train_cached(const RunConfig& cfg, const std::vector<SceneSample>& corpus,
                        const std::optional<std::filesystem::path>& cache_dir, std::ostream* log,
                        double* train_seconds) {
  std::filesystem::path cached;
  if (cache_dir) {
    // Sampler and eval settings do not affect training.
    std::string key;
    for (const auto& [k, v] : cfg.to_map()) {
      if (k.rfind("sampler.", 0) != 0 && k.rfind("eval.", 0) != 0) key += k + "=" + v + "\n";
    }
    key += "corpus=" + std::to_string(corpus.size()) + "\n";
    char name[40];
    std::snprintf(name, sizeof name, "%016llx.ckpt", static_cast<unsigned long long>(fnv1a(key)));
    cached = *cache_dir / name;
    if (std::filesystem::exists(cached)) {
      if (log != nullptr) *log << "reusing " << cached.string() << '\n';
      if (train_seconds != nullptr) {
        std::filesystem::path timing = cached;
        timing.replace_extension(".seconds");
        *train_seconds = std::filesystem::exists(timing) ? std::stod(read_text_file(timing)) : -1.0;
      }
      return load_checkpoint(cached);
    }
  }
  const auto start = std::chrono::steady_clock::now();
  const bool augment = cfg.gen.augment_flip || cfg.gen.augment_rotate || cfg.gen.augment_scale;
  TrainHooks hooks;
  std::size_t every = std::max<std::size_t>(1, cfg.train.steps / 10);
  if (log != nullptr) {
    hooks.on_step = [&](std::size_t step, double loss) {
      if ((step + 1) % every == 0) *log << "  step " << step + 1 << " loss " << loss << '\n' << std::flush;
    };
  }
  TrainResult r = train(corpus, cfg.model, cfg.vocab, cfg.train, hooks,
                        augment ? std::optional<GenConfig>(cfg.gen) : std::nullopt, cfg.serialization_order());
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (train_seconds != nullptr) *train_seconds = seconds;
  if (cache_dir) {
    save_checkpoint(cached, r.checkpoint);
    std::filesystem::path timing = cached;
    timing.replace_extension(".seconds");
    write_text_file(timing, std::to_string(seconds) + "\n");
  }
  return r.checkpoint;
}

AblationAxis parse_ablation_axis(const std::string& name) {
  if (name == "order") return AblationAxis::Order;
  if (name == "layers") return AblationAxis::Layers;
  if (name == "alpha") return AblationAxis::Alpha;
  throw std::invalid_argument("unknown ablation axis '" + name + "' (expected order, layers or alpha)");
}

namespace {

MeanScores run_one(const RunConfig& cfg, const Split& split, const std::optional<std::filesystem::path>& cache,
                   std::ostream* log) {
  const Checkpoint ckpt = train_cached(cfg, split.train, cache, log);
  const Transformer<float> model(ckpt.config, ckpt.vocab, ckpt.params);
  return mean_scores(evaluate_model(model, split.test, cfg.sampler, cfg.threshold));
}

std::string label_of(double alpha) {
  std::ostringstream os;
  os << "alpha=" << alpha;
  return os.str();
}

}  // namespace

std::vector<AblationRow> run_ablation(const AblationPlan& plan, std::ostream* log) {
  std::vector<AblationRow> rows;
  std::map<std::string, Split> splits;
  auto split_for = [&](const RunConfig& cfg) -> const Split& {
    auto it = splits.find(cfg.order);
    if (it == splits.end()) {
      it = splits.emplace(cfg.order, make_split(cfg.gen, plan.train_scenes, plan.test_scenes, cfg.vocab,
                                                cfg.serialization_order())).first;
    }
    return it->second;
  };
  auto with_seed = [&](RunConfig cfg, std::uint64_t seed) {
    cfg.train.seed = seed;
    cfg.sampler.seed = seed;
    return cfg;
  };

  switch (plan.axis) {
    case AblationAxis::Order:
      for (const std::string& order : plan.orders) {
        AblationRow row{order, {}, {}};
        for (std::uint64_t seed : plan.seeds) {
          RunConfig cfg = with_seed(plan.base, seed);
          cfg.order = order;
          if (log != nullptr) *log << "order " << order << " seed " << seed << '\n';
          row.per_seed.push_back(run_one(cfg, split_for(cfg), plan.cache_dir, log));
        }
        rows.push_back(std::move(row));
      }
      break;
    case AblationAxis::Layers:
      for (std::size_t layers : plan.layers) {
        AblationRow row{"layers=" + std::to_string(layers), {}, {}};
        for (std::uint64_t seed : plan.seeds) {
          RunConfig cfg = with_seed(plan.base, seed);
          cfg.model.num_layers = layers;
          if (log != nullptr) *log << "layers " << layers << " seed " << seed << '\n';
          row.per_seed.push_back(run_one(cfg, split_for(cfg), plan.cache_dir, log));
        }
        rows.push_back(std::move(row));
      }
      break;
    case AblationAxis::Alpha: {
      for (double alpha : plan.alphas) rows.push_back(AblationRow{label_of(alpha), {}, {}});
      for (std::uint64_t seed : plan.seeds) {
        const RunConfig cfg = with_seed(plan.base, seed);
        const Split& split = split_for(cfg);
        if (log != nullptr) *log << "alpha sweep seed " << seed << '\n';
        const Checkpoint ckpt = train_cached(cfg, split.train, plan.cache_dir, log);
        const Transformer<float> model(ckpt.config, ckpt.vocab, ckpt.params);
        for (std::size_t a = 0; a < plan.alphas.size(); ++a) {
          SamplerConfig sc = cfg.sampler;
          sc.alpha_c = plan.alphas[a];
          rows[a].per_seed.push_back(mean_scores(evaluate_model(model, split.test, sc, cfg.threshold)));
        }
      }
      break;
    }
  }

  for (AblationRow& row : rows) {
    MeanScores& m = row.mean;
    for (const MeanScores& r : row.per_seed) {
      m.m_precision += r.m_precision;
      m.m_recall += r.m_recall;
      m.m_f1 += r.m_f1;
      m.detect_ratio += r.detect_ratio;
      m.c_precision += r.c_precision;
      m.c_recall += r.c_recall;
      m.c_f1 += r.c_f1;
      m.count += r.count;
    }
    const double n = row.per_seed.empty() ? 1.0 : static_cast<double>(row.per_seed.size());
    m.m_precision /= n;
    m.m_recall /= n;
    m.m_f1 /= n;
    m.detect_ratio /= n;
    m.c_precision /= n;
    m.c_recall /= n;
    m.c_f1 /= n;
  }
  return rows;
}

std::string format_ablation_table(const std::vector<AblationRow>& rows) {
  std::string out = "label m_p m_r m_f detect c_p c_r c_f\n";
  for (const AblationRow& r : rows) out += r.label + " " + format_scores(r.mean) + "\n";
  return out;
}

std::string format_ablation_data(const std::vector<AblationRow>& rows, const std::vector<std::uint64_t>& seeds) {
  std::string out = "label seed m_p m_r m_f detect c_p c_r c_f\n";
  for (const AblationRow& r : rows) {
    for (std::size_t i = 0; i < r.per_seed.size(); ++i) {
      out += r.label + " " + std::to_string(i < seeds.size() ? seeds[i] : i) + " " + format_scores(r.per_seed[i]) + "\n";
    }
  }
  return out;
}

}  // namespace lanegraph
