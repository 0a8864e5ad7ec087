#pragma once

#include <Eigen/Core>
#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "lanegraph/codec.hpp"
#include "lanegraph/datagen.hpp"
#include "lanegraph/random.hpp"

namespace lanegraph {

template <typename T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct ModelConfig {
  std::size_t num_layers = 6;
  std::size_t embed_dim = 128;
  std::size_t num_heads = 8;
  std::size_t feedforward_dim = 512;
  std::size_t patch_size = 4;
  std::size_t raster_h = 64;
  std::size_t raster_w = 64;
  double dropout = 0.1;
  /// Probability of replacing the input vertex segment with MASK tokens
  /// during training, which trains the unconditioned guidance stream.
  double condition_dropout = 0.15;

  std::size_t num_patches() const { return (raster_h / patch_size) * (raster_w / patch_size); }
  void check() const;

  std::map<std::string, std::string> to_map() const;
  static ModelConfig from_map(const std::map<std::string, std::string>& kv);

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Per-class loss weights. Terminators are down-weighted and padding never
/// contributes.
class LossWeights {
 public:
  explicit LossWeights(double terminator_weight = 0.5);

  double weight(TokenClass c) const { return weights_[static_cast<std::size_t>(c)]; }
  double weight(Token t, const VocabSpec& vocab) const { return weight(vocab.classify(t)); }
  /// Throws std::invalid_argument for negative weights or a nonzero NA weight.
  void set(TokenClass c, double w);
  double terminator_weight() const { return weight(TokenClass::Eov); }

 private:
  std::array<double, 10> weights_{};
};

/// Named parameter tensors of the decoder. The same layout holds weights,
/// gradients and optimizer moments.
template <typename T>
struct Parameters {
  struct LayerNorm {
    Matrix<T> gamma, beta;  // 1 x d
  };
  struct Attention {
    Matrix<T> wq, wk, wv, wo;  // d x d
    Matrix<T> bq, bk, bv, bo;  // 1 x d
  };
  struct Block {
    LayerNorm ln_self, ln_cross, ln_ff;
    Attention self_attn, cross_attn;
    Matrix<T> w1, b1, w2, b2;
  };

  Matrix<T> token_embed;  // V x d
  Matrix<T> pos_embed;    // max_len x d
  Matrix<T> patch_w;      // patch^2 x d
  Matrix<T> patch_b;      // 1 x d
  Matrix<T> context_pos;  // num_patches x d
  LayerNorm ln_context;
  std::vector<Block> blocks;
  LayerNorm ln_final;
  Matrix<T> out_w;  // d x V
  Matrix<T> out_b;  // 1 x V

  /// Visits every tensor with its canonical name, in a fixed order.
  template <typename F>
  void for_each(F&& f);
  template <typename F>
  void for_each(F&& f) const;

  /// Same shapes, all zeros.
  Parameters zeros_like() const;
  void set_zero();
  std::size_t count() const;
};

/// Incremental decoding state (per-layer key/value caches).
template <typename T>
struct DecodeState {
  std::vector<Matrix<T>> self_k, self_v;    // grow by one row per step
  std::vector<Matrix<T>> cross_k, cross_v;  // fixed from the context
  std::size_t length = 0;
};

template <typename T>
class Transformer {
 public:
  Transformer(const ModelConfig& config, const VocabSpec& vocab, std::uint64_t seed);
  Transformer(const ModelConfig& config, const VocabSpec& vocab, Parameters<T> params);

  const ModelConfig& config() const { return config_; }
  const VocabSpec& vocab() const { return vocab_; }
  Parameters<T>& params() { return params_; }
  const Parameters<T>& params() const { return params_; }
  std::size_t max_len() const { return vocab_.sequence_len(); }

  /// Patch projection plus learned 2-D positional embedding; one row per
  /// patch, patches in row-major order.
  Matrix<T> embed_context(const Raster& raster) const;

  /// Logits (prefix length x vocab size) in inference mode. Position i only
  /// sees tokens 0..i.
  Matrix<T> forward(std::span<const Token> prefix, const Matrix<T>& context) const;

  /// Teacher-forced pass over one sample: accumulates gradients of
  ///   sum_i w(target_i) * -log p(target_i) / weight_norm
  /// into `grads` and returns that sample's contribution. Dropout is applied
  /// when `dropout_rng` is non-null.
  T forward_backward(std::span<const Token> inputs, std::span<const Token> targets, const Raster& raster,
                     const LossWeights& weights, T weight_norm, Parameters<T>& grads, Rng* dropout_rng) const;

  DecodeState<T> begin_decode(const Matrix<T>& context) const;
  /// Feeds one token at position state.length and returns its logits row.
  Eigen::Matrix<T, 1, Eigen::Dynamic> decode_step(DecodeState<T>& state, Token token) const;

 private:
  ModelConfig config_;
  VocabSpec vocab_;
  Parameters<T> params_;
};

/// Negative weighted mean log-likelihood of `targets` under `logits`
/// (row i scores targets[i]). NA targets are ignored; an all-NA target
/// returns 0 and sets `degenerate`.
template <typename T>
double weighted_nll(const Matrix<T>& logits, std::span<const Token> targets, const LossWeights& weights,
                    const VocabSpec& vocab, bool* degenerate = nullptr);

/// Copies the input with positions 1..vertex_len replaced by MASK.
std::vector<Token> mask_vertex_segment(std::span<const Token> tokens, const VocabSpec& vocab);

template <typename T>
Matrix<T> patchify(const Raster& raster, std::size_t patch);

// Checkpoint file: magic "LGCK1\n", a uint32 length followed by a text
// header (key=value lines: version, model config, vocab, step), a uint32
// tensor count, then per tensor: uint32 name length, name, uint32 rank,
// uint32 dims, little-endian float32 data.
struct Checkpoint {
  ModelConfig config;
  VocabSpec vocab;
  std::uint64_t step = 0;
  Parameters<float> params;
  bool has_optimizer = false;
  Parameters<float> adam_m;
  Parameters<float> adam_v;
};

inline constexpr const char* kCheckpointVersion = "lanegraph-checkpoint-1";

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

Parameters<float> make_parameter_shapes(const ModelConfig& config, const VocabSpec& vocab);

template <typename Dst, typename Src>
Parameters<Dst> cast_parameters(const Parameters<Src>& p);

// ---- template member definitions -------------------------------------------------

template <typename T>
template <typename F>
void Parameters<T>::for_each(F&& f) {
  auto ln = [&](const std::string& name, LayerNorm& n) {
    f(name + ".gamma", n.gamma);
    f(name + ".beta", n.beta);
  };
  auto attn = [&](const std::string& name, Attention& a) {
    f(name + ".wq", a.wq);
    f(name + ".bq", a.bq);
    f(name + ".wk", a.wk);
    f(name + ".bk", a.bk);
    f(name + ".wv", a.wv);
    f(name + ".bv", a.bv);
    f(name + ".wo", a.wo);
    f(name + ".bo", a.bo);
  };
  f(std::string("token_embed"), token_embed);
  f(std::string("pos_embed"), pos_embed);
  f(std::string("patch_w"), patch_w);
  f(std::string("patch_b"), patch_b);
  f(std::string("context_pos"), context_pos);
  ln("ln_context", ln_context);
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    const std::string p = "blocks." + std::to_string(i);
    Block& b = blocks[i];
    ln(p + ".ln_self", b.ln_self);
    attn(p + ".self_attn", b.self_attn);
    ln(p + ".ln_cross", b.ln_cross);
    attn(p + ".cross_attn", b.cross_attn);
    ln(p + ".ln_ff", b.ln_ff);
    f(p + ".ff.w1", b.w1);
    f(p + ".ff.b1", b.b1);
    f(p + ".ff.w2", b.w2);
    f(p + ".ff.b2", b.b2);
  }
  ln("ln_final", ln_final);
  f(std::string("out_w"), out_w);
  f(std::string("out_b"), out_b);
}

template <typename T>
template <typename F>
void Parameters<T>::for_each(F&& f) const {
  const_cast<Parameters<T>*>(this)->for_each([&](const std::string& name, Matrix<T>& m) {
    f(name, static_cast<const Matrix<T>&>(m));
  });
}

template <typename T>
Parameters<T> Parameters<T>::zeros_like() const {
  Parameters<T> z = *this;
  z.set_zero();
  return z;
}

template <typename T>
void Parameters<T>::set_zero() {
  for_each([](const std::string&, Matrix<T>& m) { m.setZero(); });
}

template <typename T>
std::size_t Parameters<T>::count() const {
  std::size_t n = 0;
  for_each([&](const std::string&, const Matrix<T>& m) { n += static_cast<std::size_t>(m.size()); });
  return n;
}

template <typename Dst, typename Src>
Parameters<Dst> cast_parameters(const Parameters<Src>& p) {
  Parameters<Dst> out;
  out.blocks.resize(p.blocks.size());
  std::vector<const Matrix<Src>*> src;
  p.for_each([&](const std::string&, const Matrix<Src>& m) { src.push_back(&m); });
  std::size_t i = 0;
  out.for_each([&](const std::string&, Matrix<Dst>& m) { m = src[i++]->template cast<Dst>(); });
  return out;
}

}  // namespace lanegraph
