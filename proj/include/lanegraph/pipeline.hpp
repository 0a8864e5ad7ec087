#pragma once

#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "lanegraph/eval.hpp"
#include "lanegraph/inference.hpp"
#include "lanegraph/run_config.hpp"

namespace lanegraph {

/// gen -> encode -> sequence text -> decode -> validate -> evaluate against
/// the source graph, for `num_scenes` scenes. Prints one line per scene and
/// a final PASS/FAIL line; returns true on pass.
bool selftest(std::uint64_t seed, std::ostream& out, std::size_t num_scenes = 24);

struct Split {
  std::vector<SceneSample> train;
  std::vector<SceneSample> test;
};

/// Train scenes are indices [0, n_train), held-out scenes follow them.
Split make_split(const GenConfig& gen, std::size_t n_train, std::size_t n_test, const VocabSpec& vocab,
                 const SerializationOrder& order);

/// Scene i is sampled with seed mix_seed(sampler.seed, i).
std::vector<EvalReport> evaluate_model(const Transformer<float>& model, const std::vector<SceneSample>& scenes,
                                       const SamplerConfig& sampler, double threshold,
                                       GuidanceMode mode = GuidanceMode::Guided);

/// Trains with cfg (model seed from cfg.train.seed). When cache_dir is set,
/// the checkpoint is stored under a digest of the resolved config and the
/// corpus size, and reused on later calls with the same inputs.
/// `train_seconds` receives the wall time of the training run (-1 when a
/// cached checkpoint has no timing record).
Checkpoint train_cached(const RunConfig& cfg, const std::vector<SceneSample>& corpus,
                        const std::optional<std::filesystem::path>& cache_dir, std::ostream* log,
                        double* train_seconds = nullptr);

/// 64-bit FNV-1a.
std::uint64_t fnv1a(const std::string& text);

enum class AblationAxis { Order, Layers, Alpha };
AblationAxis parse_ablation_axis(const std::string& name);

struct AblationPlan {
  AblationAxis axis = AblationAxis::Order;
  RunConfig base;
  std::vector<std::uint64_t> seeds{0, 1, 2};
  std::size_t train_scenes = 2000;
  std::size_t test_scenes = 200;
  std::vector<std::string> orders{"dfs", "bfs", "coord_xy", "random"};
  std::vector<std::size_t> layers{3, 8};
  std::vector<double> alphas{1.0, 2.0, 4.0, 8.0};
  std::optional<std::filesystem::path> cache_dir;
};

struct AblationRow {
  std::string label;
  std::vector<MeanScores> per_seed;
  MeanScores mean;
};

std::vector<AblationRow> run_ablation(const AblationPlan& plan, std::ostream* log = nullptr);

/// Header "label m_p m_r m_f detect c_p c_r c_f", then one mean row per label.
std::string format_ablation_table(const std::vector<AblationRow>& rows);
/// One line per (label, seed) for plotting.
std::string format_ablation_data(const std::vector<AblationRow>& rows, const std::vector<std::uint64_t>& seeds);

}  // namespace lanegraph
