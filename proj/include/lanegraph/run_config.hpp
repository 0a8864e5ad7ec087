#pragma once

#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>

#include "lanegraph/codec.hpp"
#include "lanegraph/datagen.hpp"
#include "lanegraph/inference.hpp"
#include "lanegraph/model.hpp"
#include "lanegraph/train.hpp"

namespace lanegraph {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Every tunable of a run, flattened to dotted keys ("vocab.num_bins",
/// "gen.noise_std", "model.num_layers", "train.learning_rate",
/// "sampler.alpha_c", "eval.threshold", "order").
struct RunConfig {
  VocabSpec vocab;
  GenConfig gen;
  ModelConfig model;
  TrainSchedule train;
  SamplerConfig sampler;
  double threshold = 1.0;
  std::string order = "dfs";

  std::map<std::string, std::string> to_map() const;
  static RunConfig from_map(const std::map<std::string, std::string>& kv);

  /// Throws ConfigError for unknown keys or unparsable values.
  void set(const std::string& key, const std::string& value);
  void apply(const std::map<std::string, std::string>& kv);
  /// One seed for corpus, training and sampling.
  void set_seed(std::uint64_t seed);

  /// Cross-module consistency (raster sizes, vertex budgets, lengths).
  void check() const;
  SerializationOrder serialization_order() const;

  /// "key=value" lines in key order.
  std::string dump() const;
};

/// Parses "key = value" lines; blank lines and '#' comments are skipped.
std::map<std::string, std::string> parse_key_values(const std::string& text);
RunConfig load_run_config(const std::filesystem::path& path);

}  // namespace lanegraph
