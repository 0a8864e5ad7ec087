#pragma once

#include <functional>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <vector>

#include "lanegraph/datagen.hpp"
#include "lanegraph/model.hpp"

namespace lanegraph {

struct TrainSchedule {
  std::size_t steps = 20000;
  std::size_t batch_size = 8;
  double learning_rate = 1e-3;
  /// Linear warmup length; the cosine decay starts after it.
  std::size_t warmup_steps = 200;
  double final_lr_fraction = 0.0;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  /// Global gradient-norm clip; 0 disables.
  double grad_clip = 1.0;
  double terminator_weight = 0.5;
  std::uint64_t seed = 0;
  std::size_t checkpoint_every = 0;

  double lr_at(std::size_t step) const;
};

class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainHooks {
  /// One line per step: "step loss lr".
  std::ostream* metrics = nullptr;
  std::function<void(const Checkpoint&)> on_checkpoint;
  /// Called after every step with (step, loss).
  std::function<void(std::size_t, double)> on_step;
  /// Observes each batch's inputs before the update (tests use this).
  std::function<void(const std::vector<std::vector<Token>>&)> on_batch;
};

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<double> losses;
};

/// Random augmentation is applied per sample when `augmentation` is set and
/// any of its flags are on; the order re-encodes augmented graphs.
TrainResult train(const std::vector<SceneSample>& corpus, const ModelConfig& config, const VocabSpec& vocab,
                  const TrainSchedule& schedule, const TrainHooks& hooks = {},
                  const std::optional<GenConfig>& augmentation = std::nullopt,
                  const SerializationOrder& order = SerializationOrder::dfs());

/// Index one past the last target that is not NA (the useful length of a
/// teacher-forced pass).
std::size_t useful_length(std::span<const Token> sequence);

}  // namespace lanegraph
