#include "lanegraph/train.hpp"

#include <cmath>
#include <numbers>

namespace lanegraph {

double TrainSchedule::lr_at(std::size_t step) const {
  if (step < warmup_steps) return learning_rate * static_cast<double>(step + 1) / static_cast<double>(warmup_steps);
  const double span = static_cast<double>(std::max<std::size_t>(1, steps - warmup_steps));
  const double progress = std::min(1.0, static_cast<double>(step - warmup_steps) / span);
  const double cosine = 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
  return learning_rate * (final_lr_fraction + (1.0 - final_lr_fraction) * cosine);
}

std::size_t useful_length(std::span<const Token> sequence) {
  // Targets are sequence[1..]; inputs are sequence[..n-1].
  std::size_t last = 0;
  for (std::size_t i = 1; i < sequence.size(); ++i) {
    if (sequence[i] != tokens::kNa) last = i;
  }
  return last;
}

namespace {

bool decays(const std::string& name, const Matrix<float>& m) {
  if (m.rows() == 1) return false;  // biases and norm scales
  return name != "token_embed" && name != "pos_embed" && name != "context_pos";
}

}  // namespace

TrainResult train(const std::vector<SceneSample>& corpus, const ModelConfig& config, const VocabSpec& vocab,
                  const TrainSchedule& schedule, const TrainHooks& hooks, const std::optional<GenConfig>& augmentation,
                  const SerializationOrder& order) {
  if (corpus.empty()) throw std::invalid_argument("train: empty corpus");
  if (schedule.batch_size == 0) throw std::invalid_argument("train: batch_size must be positive");
  for (const SceneSample& s : corpus) {
    if (s.sequence.tokens.size() != vocab.sequence_len()) {
      throw std::invalid_argument("train: scene " + s.id + " was encoded with a different sequence layout");
    }
  }

  Transformer<float> model(config, vocab, mix_seed(schedule.seed, 1));
  Parameters<float> grads = model.params().zeros_like();
  Parameters<float> adam_m = grads;
  Parameters<float> adam_v = grads;
  const LossWeights weights(schedule.terminator_weight);
  const bool augment = augmentation.has_value() &&
                       (augmentation->augment_flip || augmentation->augment_rotate || augmentation->augment_scale);

  Rng data_rng(mix_seed(schedule.seed, 2));
  Rng dropout_rng(mix_seed(schedule.seed, 3));
  std::vector<std::size_t> epoch;
  std::size_t cursor = 0;

  TrainResult result;
  result.losses.reserve(schedule.steps);
  for (std::size_t step = 0; step < schedule.steps; ++step) {
    // Batch assembly: shuffled epochs over the corpus.
    std::vector<SceneSample> batch;
    std::vector<std::vector<Token>> inputs;
    for (std::size_t b = 0; b < schedule.batch_size; ++b) {
      if (cursor == epoch.size()) {
        epoch.resize(corpus.size());
        for (std::size_t i = 0; i < epoch.size(); ++i) epoch[i] = i;
        data_rng.shuffle(epoch);
        cursor = 0;
      }
      const std::size_t index = epoch[cursor++];
      SceneSample sample = corpus[index];
      if (augment) sample = lanegraph::augment(sample, data_rng, *augmentation, vocab, scene_order(order, index));
      const std::size_t len = useful_length(sample.sequence.tokens);
      std::vector<Token> in(sample.sequence.tokens.begin(), sample.sequence.tokens.begin() + static_cast<std::ptrdiff_t>(len));
      if (data_rng.bernoulli(config.condition_dropout)) in = mask_vertex_segment(in, vocab);
      inputs.push_back(std::move(in));
      batch.push_back(std::move(sample));
    }
    if (hooks.on_batch) hooks.on_batch(inputs);

    double weight_norm = 0.0;
    for (const SceneSample& s : batch) {
      for (std::size_t i = 1; i <= useful_length(s.sequence.tokens); ++i) weight_norm += weights.weight(s.sequence.tokens[i], vocab);
    }
    if (weight_norm == 0.0) throw std::invalid_argument("train: batch has no weighted targets");

    grads.set_zero();
    double loss = 0.0;
    for (std::size_t b = 0; b < batch.size(); ++b) {
      const auto& toks = batch[b].sequence.tokens;
      const std::span<const Token> targets(toks.data() + 1, inputs[b].size());
      loss += model.forward_backward(inputs[b], targets, batch[b].raster, weights, static_cast<float>(weight_norm), grads,
                                     &dropout_rng);
    }
    if (!std::isfinite(loss)) {
      throw DivergenceError("train: non-finite loss at step " + std::to_string(step));
    }

    double norm2 = 0.0;
    grads.for_each([&](const std::string&, const Matrix<float>& g) { norm2 += g.cast<double>().squaredNorm(); });
    const double norm = std::sqrt(norm2);
    if (!std::isfinite(norm)) throw DivergenceError("train: non-finite gradient at step " + std::to_string(step));
    const float clip = schedule.grad_clip > 0.0 && norm > schedule.grad_clip ? static_cast<float>(schedule.grad_clip / norm) : 1.0f;

    const double lr = schedule.lr_at(step);
    const auto t = static_cast<double>(step + 1);
    const float c1 = static_cast<float>(1.0 / (1.0 - std::pow(schedule.beta1, t)));
    const float c2 = static_cast<float>(1.0 / (1.0 - std::pow(schedule.beta2, t)));
    const auto b1 = static_cast<float>(schedule.beta1);
    const auto b2 = static_cast<float>(schedule.beta2);
    const auto eps = static_cast<float>(schedule.epsilon);
    const auto flr = static_cast<float>(lr);
    const auto wd = static_cast<float>(schedule.weight_decay);

    std::vector<Matrix<float>*> g_list, m_list, v_list;
    grads.for_each([&](const std::string&, Matrix<float>& m) { g_list.push_back(&m); });
    adam_m.for_each([&](const std::string&, Matrix<float>& m) { m_list.push_back(&m); });
    adam_v.for_each([&](const std::string&, Matrix<float>& m) { v_list.push_back(&m); });
    std::size_t k = 0;
    model.params().for_each([&](const std::string& name, Matrix<float>& w) {
      Matrix<float>& g = *g_list[k];
      Matrix<float>& m = *m_list[k];
      Matrix<float>& v = *v_list[k];
      ++k;
      g *= clip;
      m = b1 * m + (1.0f - b1) * g;
      v.array() = b2 * v.array() + (1.0f - b2) * g.array().square();
      if (decays(name, w)) w *= (1.0f - flr * wd);
      w.array() -= flr * (m.array() * c1) / ((v.array() * c2).sqrt() + eps);
    });

    result.losses.push_back(loss);
    if (hooks.metrics != nullptr) *hooks.metrics << step << ' ' << loss << ' ' << lr << '\n';
    if (hooks.on_step) hooks.on_step(step, loss);
    if (schedule.checkpoint_every > 0 && hooks.on_checkpoint && (step + 1) % schedule.checkpoint_every == 0 &&
        step + 1 < schedule.steps) {
      hooks.on_checkpoint(Checkpoint{config, vocab, step + 1, model.params(), true, adam_m, adam_v});
    }
  }

  result.checkpoint = Checkpoint{config, vocab, schedule.steps, model.params(), true, adam_m, adam_v};
  return result;
}

}  // namespace lanegraph
