// lanegraph: corpus generation, codec round trips, training, inference,
// evaluation and ablation sweeps.
//
// Exit status: 0 success, 1 selftest failure, 2 usage error, 3 unreadable or
// unwritable file, 4 bad configuration, 5 malformed data.

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "lanegraph/graph_io.hpp"
#include "lanegraph/pipeline.hpp"
#include "lanegraph/svg.hpp"

namespace fs = std::filesystem;
using namespace lanegraph;

namespace {

constexpr int kExitSelftest = 1;
constexpr int kExitUsage = 2;
constexpr int kExitIo = 3;
constexpr int kExitConfig = 4;
constexpr int kExitData = 5;

struct Global {
  std::string config_path;
  std::string out_dir;
  std::optional<std::uint64_t> seed;
  bool quiet = false;
  std::vector<std::string> overrides;
};

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

RunConfig resolve(const Global& g, const std::vector<std::pair<std::string, std::string>>& flags) {
  RunConfig cfg;
  if (!g.config_path.empty()) cfg.apply(parse_key_values(read_text_file(g.config_path)));
  if (g.seed) cfg.set_seed(*g.seed);
  for (const auto& [k, v] : flags) cfg.set(k, v);
  for (const std::string& kv : g.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  cfg.check();
  return cfg;
}

void echo_config(const RunConfig& cfg, const fs::path& dir) {
  if (dir.empty()) return;
  write_text_file(dir / "resolved.cfg", cfg.dump());
}

template <typename T>
void push(std::vector<std::pair<std::string, std::string>>& flags, const std::string& key, const std::optional<T>& v) {
  if (!v) return;
  std::ostringstream os;
  os.precision(17);
  os << *v;
  flags.emplace_back(key, os.str());
}

std::ostream& info(const Global& g) {
  static std::ostream null(nullptr);
  return g.quiet ? null : std::cerr;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Lane-graph extraction as sequence prediction"};
  app.require_subcommand(1);
  app.fallthrough();
  Global g;
  app.add_option("--config", g.config_path, "key=value configuration file");
  app.add_option("--out-dir", g.out_dir, "directory receiving resolved.cfg and default outputs");
  app.add_option("--seed", g.seed, "seed for corpus, training and sampling");
  app.add_flag("--quiet", g.quiet, "suppress progress output");
  app.add_option("--set", g.overrides, "override any config key (key=value), repeatable");

  // gen
  auto* gen = app.add_subcommand("gen", "generate a synthetic scene corpus");
  std::optional<std::size_t> gen_num;
  std::size_t gen_start = 0;
  std::string gen_out;
  std::optional<std::string> gen_order;
  gen->add_option("--num-scenes", gen_num, "number of scenes");
  gen->add_option("--start-index", gen_start, "index of the first scene (held-out splits use an offset)");
  gen->add_option("--out", gen_out, "corpus directory")->required();
  gen->add_option("--order", gen_order, "serialization order: dfs, bfs, coord_xy, random");

  // encode
  auto* enc = app.add_subcommand("encode", "encode a graph file into a token sequence file");
  std::string enc_graph, enc_out;
  std::optional<std::string> enc_order;
  enc->add_option("--graph", enc_graph, "input graph (JSON)")->required();
  enc->add_option("--out", enc_out, "output sequence file")->required();
  enc->add_option("--order", enc_order, "serialization order");

  // decode
  auto* dec = app.add_subcommand("decode", "decode a token sequence file into a graph");
  std::string dec_seq, dec_out;
  dec->add_option("--seq", dec_seq, "input sequence file")->required();
  dec->add_option("--out", dec_out, "output graph (JSON)")->required();

  // train
  auto* trn = app.add_subcommand("train", "train a model on a corpus");
  std::string trn_corpus, trn_out, trn_metrics;
  std::optional<std::size_t> trn_steps, trn_layers, trn_batch, trn_every;
  std::optional<double> trn_lr;
  std::optional<std::string> trn_order;
  trn->add_option("--corpus", trn_corpus, "corpus directory")->required();
  trn->add_option("--out", trn_out, "checkpoint path")->required();
  trn->add_option("--metrics", trn_metrics, "metrics log (step loss lr per line)");
  trn->add_option("--steps", trn_steps, "optimizer steps");
  trn->add_option("--batch-size", trn_batch, "scenes per step");
  trn->add_option("--lr", trn_lr, "peak learning rate");
  trn->add_option("--layers", trn_layers, "decoder layers");
  trn->add_option("--order", trn_order, "serialization order");
  trn->add_option("--checkpoint-every", trn_every, "write intermediate checkpoints every N steps");

  // infer
  auto* inf = app.add_subcommand("infer", "generate lane graphs from rasters");
  std::string inf_ckpt, inf_raster, inf_scene, inf_corpus, inf_graph, inf_seq, inf_svg, inf_pred_dir;
  std::optional<double> inf_alpha, inf_p, inf_temp;
  std::optional<std::string> inf_mask;
  bool inf_greedy = false, inf_all = false;
  inf->add_option("--checkpoint", inf_ckpt, "checkpoint path")->required();
  inf->add_option("--raster", inf_raster, "raster file");
  inf->add_option("--scene-id", inf_scene, "scene id within --corpus");
  inf->add_option("--corpus", inf_corpus, "corpus directory");
  inf->add_flag("--all", inf_all, "run every scene of --corpus, writing <id>.graph into --pred-dir");
  inf->add_option("--pred-dir", inf_pred_dir, "output directory for --all");
  inf->add_option("--alpha-c", inf_alpha, "guidance scale");
  inf->add_option("--nucleus-p", inf_p, "nucleus mass");
  inf->add_option("--temperature", inf_temp, "softmax temperature");
  inf->add_option("--grammar-mask", inf_mask, "on|off");
  inf->add_flag("--greedy", inf_greedy, "argmax decoding");
  inf->add_option("--out-graph", inf_graph, "predicted graph (JSON)");
  inf->add_option("--out-seq", inf_seq, "predicted token sequence");
  inf->add_option("--render-svg", inf_svg, "SVG overlay of prediction and ground truth");

  // eval
  auto* evl = app.add_subcommand("eval", "score predicted graphs against ground truth");
  std::string evl_pred, evl_gt, evl_out;
  std::optional<double> evl_threshold;
  evl->add_option("--pred-dir", evl_pred, "directory of <id>.graph predictions")->required();
  evl->add_option("--gt-dir", evl_gt, "corpus directory (or directory of <id>.graph files)")->required();
  evl->add_option("--threshold", evl_threshold, "match threshold in meters");
  evl->add_option("--out", evl_out, "report path (stdout when omitted)");

  // ablate
  auto* abl = app.add_subcommand("ablate", "order / layer / guidance-scale sweeps");
  std::string abl_axis, abl_out, abl_cache;
  std::size_t abl_train = 2000, abl_test = 200;
  std::vector<std::uint64_t> abl_seeds{0, 1, 2};
  std::optional<std::size_t> abl_steps;
  abl->add_option("--axis", abl_axis, "order | layers | alpha")->required();
  abl->add_option("--out", abl_out, "output directory (table.txt, data.txt)")->required();
  abl->add_option("--train-scenes", abl_train, "training scenes");
  abl->add_option("--test-scenes", abl_test, "held-out scenes");
  abl->add_option("--seeds", abl_seeds, "training seeds");
  abl->add_option("--steps", abl_steps, "optimizer steps per run");
  abl->add_option("--cache-dir", abl_cache, "reuse checkpoints keyed by configuration");

  // selftest
  auto* slf = app.add_subcommand("selftest", "gen -> encode -> decode -> eval identity check");
  std::size_t slf_scenes = 24;
  slf->add_option("--scenes", slf_scenes, "number of scenes");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    std::vector<std::pair<std::string, std::string>> flags;

    if (gen->parsed()) {
      push(flags, "gen.num_scenes", gen_num);
      push(flags, "order", gen_order);
      const RunConfig cfg = resolve(g, flags);
      std::vector<SceneSample> scenes;
      for (std::size_t i = 0; i < cfg.gen.num_scenes; ++i) {
        scenes.push_back(generate_scene(cfg.gen, gen_start + i, cfg.vocab, cfg.serialization_order()));
        if (!validate(scenes.back().graph).ok()) throw FormatError("generated scene failed validation");
      }
      write_corpus(gen_out, scenes, cfg.gen);
      echo_config(cfg, g.out_dir.empty() ? fs::path(gen_out) : fs::path(g.out_dir));
      info(g) << "wrote " << scenes.size() << " scenes to " << gen_out << '\n';
      return 0;
    }

    if (enc->parsed()) {
      push(flags, "order", enc_order);
      const RunConfig cfg = resolve(g, flags);
      const LaneGraph graph = read_graph(enc_graph);
      write_sequence(enc_out, encode(graph, cfg.vocab, cfg.serialization_order()), cfg.vocab);
      echo_config(cfg, g.out_dir);
      return 0;
    }

    if (dec->parsed()) {
      const RunConfig cfg = resolve(g, flags);
      const auto [seq, vocab] = read_sequence(dec_seq);
      const DecodeResult r = decode(seq, vocab, cfg.gen.extent);
      write_graph(dec_out, r.graph);
      const ValidationResult v = validate(r.graph);
      info(g) << "decoded " << r.graph.vertices.size() << " vertices, " << r.graph.edges.size() << " edges; "
              << r.diagnostics.summary() << "; valid=" << (v.ok() ? "yes" : "no") << '\n';
      echo_config(cfg, g.out_dir);
      return v.ok() ? 0 : kExitData;
    }

    if (trn->parsed()) {
      push(flags, "train.steps", trn_steps);
      push(flags, "train.batch_size", trn_batch);
      push(flags, "train.learning_rate", trn_lr);
      push(flags, "model.num_layers", trn_layers);
      push(flags, "order", trn_order);
      push(flags, "train.checkpoint_every", trn_every);
      RunConfig cfg = resolve(g, flags);
      const Corpus corpus = read_corpus(trn_corpus, cfg.vocab, cfg.serialization_order());
      std::ofstream metrics;
      TrainHooks hooks;
      if (!trn_metrics.empty()) {
        metrics.open(trn_metrics);
        if (!metrics) throw IoError("cannot write " + trn_metrics);
        hooks.metrics = &metrics;
      }
      const std::size_t every = std::max<std::size_t>(1, cfg.train.steps / 20);
      hooks.on_step = [&](std::size_t step, double loss) {
        if ((step + 1) % every == 0) info(g) << "step " << step + 1 << " loss " << loss << '\n';
      };
      hooks.on_checkpoint = [&](const Checkpoint& c) {
        save_checkpoint(trn_out + ".step" + std::to_string(c.step), c);
      };
      const bool augment = cfg.gen.augment_flip || cfg.gen.augment_rotate || cfg.gen.augment_scale;
      const TrainResult r = train(corpus.scenes, cfg.model, cfg.vocab, cfg.train, hooks,
                                  augment ? std::optional<GenConfig>(cfg.gen) : std::nullopt, cfg.serialization_order());
      save_checkpoint(trn_out, r.checkpoint);
      echo_config(cfg, g.out_dir.empty() ? fs::path(trn_out).parent_path() : fs::path(g.out_dir));
      return 0;
    }

    if (inf->parsed()) {
      push(flags, "sampler.alpha_c", inf_alpha);
      push(flags, "sampler.nucleus_p", inf_p);
      push(flags, "sampler.temperature", inf_temp);
      push(flags, "sampler.grammar_mask", inf_mask);
      if (inf_greedy) flags.emplace_back("sampler.greedy", "1");
      const RunConfig cfg = resolve(g, flags);
      const Checkpoint ckpt = load_checkpoint(inf_ckpt);
      const Transformer<float> model(ckpt.config, ckpt.vocab, ckpt.params);

      if (inf_all) {
        if (inf_corpus.empty() || inf_pred_dir.empty()) throw UsageError("infer --all needs --corpus and --pred-dir");
        std::size_t i = 0;
        for (const std::string& id : read_manifest_ids(inf_corpus)) {
          SamplerConfig sc = cfg.sampler;
          sc.seed = mix_seed(cfg.sampler.seed, i++);
          const Raster raster = read_raster(fs::path(inf_corpus) / "scenes" / (id + ".raster"));
          const Generation out = generate(model, raster, sc, cfg.gen.extent);
          write_graph(fs::path(inf_pred_dir) / (id + ".graph"), out.graph);
          write_sequence(fs::path(inf_pred_dir) / (id + ".seq"), out.sequence, ckpt.vocab);
        }
        info(g) << "wrote " << i << " predictions to " << inf_pred_dir << '\n';
        echo_config(cfg, g.out_dir.empty() ? fs::path(inf_pred_dir) : fs::path(g.out_dir));
        return 0;
      }

      Raster raster;
      std::optional<LaneGraph> truth;
      if (!inf_raster.empty()) {
        raster = read_raster(inf_raster);
      } else if (!inf_scene.empty() && !inf_corpus.empty()) {
        raster = read_raster(fs::path(inf_corpus) / "scenes" / (inf_scene + ".raster"));
        truth = read_graph(fs::path(inf_corpus) / "scenes" / (inf_scene + ".graph"));
      } else {
        throw UsageError("infer needs --raster, or --scene-id with --corpus");
      }
      const Generation out = generate(model, raster, cfg.sampler, cfg.gen.extent);
      if (!inf_graph.empty()) write_graph(inf_graph, out.graph);
      if (!inf_seq.empty()) write_sequence(inf_seq, out.sequence, ckpt.vocab);
      if (!inf_svg.empty()) {
        write_text_file(inf_svg, render_overlay(&out.graph, truth ? &*truth : nullptr, cfg.gen.extent, &raster));
      }
      if (inf_graph.empty()) std::cout << graph_to_string(out.graph) << '\n';
      info(g) << "generated " << out.graph.vertices.size() << " vertices, " << out.graph.edges.size() << " edges; "
              << out.diagnostics.summary() << '\n';
      if (truth) info(g) << "scores " << format_scores(evaluate(out.graph, *truth, cfg.threshold)) << '\n';
      echo_config(cfg, g.out_dir);
      return 0;
    }

    if (evl->parsed()) {
      push(flags, "eval.threshold", evl_threshold);
      const RunConfig cfg = resolve(g, flags);
      const fs::path gt_root = fs::exists(fs::path(evl_gt) / "manifest") ? fs::path(evl_gt) / "scenes" : fs::path(evl_gt);
      std::vector<std::string> ids;
      if (fs::exists(fs::path(evl_gt) / "manifest")) {
        ids = read_manifest_ids(evl_gt);
      } else {
        for (const auto& entry : fs::directory_iterator(gt_root)) {
          if (entry.path().extension() == ".graph") ids.push_back(entry.path().stem().string());
        }
        std::sort(ids.begin(), ids.end());
      }
      std::ostringstream report;
      report << "scene m_p m_r m_f detect c_p c_r c_f\n";
      std::vector<EvalReport> all;
      for (const std::string& id : ids) {
        const LaneGraph truth = read_graph(gt_root / (id + ".graph"));
        const LaneGraph pred = read_graph(fs::path(evl_pred) / (id + ".graph"));
        all.push_back(evaluate(pred, truth, cfg.threshold));
        report << id << ' ' << format_scores(all.back()) << '\n';
      }
      report << "mean " << format_scores(mean_scores(all)) << '\n';
      if (evl_out.empty()) std::cout << report.str();
      else write_text_file(evl_out, report.str());
      echo_config(cfg, g.out_dir);
      return 0;
    }

    if (abl->parsed()) {
      push(flags, "train.steps", abl_steps);
      AblationPlan plan;
      plan.axis = parse_ablation_axis(abl_axis);
      plan.base = resolve(g, flags);
      plan.seeds = abl_seeds;
      plan.train_scenes = abl_train;
      plan.test_scenes = abl_test;
      if (!abl_cache.empty()) plan.cache_dir = abl_cache;
      const auto rows = run_ablation(plan, g.quiet ? nullptr : &std::cerr);
      write_text_file(fs::path(abl_out) / "table.txt", format_ablation_table(rows));
      write_text_file(fs::path(abl_out) / "data.txt", format_ablation_data(rows, plan.seeds));
      echo_config(plan.base, g.out_dir.empty() ? fs::path(abl_out) : fs::path(g.out_dir));
      std::cout << format_ablation_table(rows);
      return 0;
    }

    if (slf->parsed()) {
      const RunConfig cfg = resolve(g, flags);
      const bool ok = selftest(g.seed.value_or(0), std::cout, slf_scenes);
      echo_config(cfg, g.out_dir);
      return ok ? 0 : kExitSelftest;
    }
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << '\n';
    return kExitIo;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kExitData;
  }
  return kExitUsage;
}
