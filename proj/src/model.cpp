#include "lanegraph/model.hpp"

#include <cmath>
#include <iomanip>
#include <iostream>
#include <limits>
#include <numbers>
#include <sstream>

#include "lanegraph/graph_io.hpp"

namespace lanegraph {

void ModelConfig::check() const {
  if (num_layers < 1) throw std::invalid_argument("model: num_layers must be >= 1");
  if (embed_dim == 0 || num_heads == 0 || embed_dim % num_heads != 0) {
    throw std::invalid_argument("model: embed_dim must be a positive multiple of num_heads");
  }
  if (feedforward_dim == 0) throw std::invalid_argument("model: feedforward_dim must be positive");
  if (patch_size == 0 || raster_h % patch_size != 0 || raster_w % patch_size != 0) {
    throw std::invalid_argument("model: raster size must be a multiple of patch_size");
  }
  if (!(dropout >= 0.0 && dropout < 1.0)) throw std::invalid_argument("model: dropout must lie in [0, 1)");
  if (!(condition_dropout >= 0.0 && condition_dropout <= 1.0)) {
    throw std::invalid_argument("model: condition_dropout must lie in [0, 1]");
  }
}

std::map<std::string, std::string> ModelConfig::to_map() const {
  auto num = [](double v) {
    std::ostringstream os;
    os << std::setprecision(17) << v;
    return os.str();
  };
  return {{"num_layers", std::to_string(num_layers)},
          {"embed_dim", std::to_string(embed_dim)},
          {"num_heads", std::to_string(num_heads)},
          {"feedforward_dim", std::to_string(feedforward_dim)},
          {"patch_size", std::to_string(patch_size)},
          {"raster_h", std::to_string(raster_h)},
          {"raster_w", std::to_string(raster_w)},
          {"dropout", num(dropout)},
          {"condition_dropout", num(condition_dropout)}};
}

ModelConfig ModelConfig::from_map(const std::map<std::string, std::string>& kv) {
  ModelConfig c;
  auto get = [&](const char* key, auto& field) {
    const auto it = kv.find(key);
    if (it == kv.end()) return;
    std::istringstream in(it->second);
    in >> field;
    if (in.fail()) throw FormatError(std::string("model config: bad value for ") + key);
  };
  get("num_layers", c.num_layers);
  get("embed_dim", c.embed_dim);
  get("num_heads", c.num_heads);
  get("feedforward_dim", c.feedforward_dim);
  get("patch_size", c.patch_size);
  get("raster_h", c.raster_h);
  get("raster_w", c.raster_w);
  get("dropout", c.dropout);
  get("condition_dropout", c.condition_dropout);
  return c;
}

LossWeights::LossWeights(double terminator_weight) {
  weights_.fill(1.0);
  set(TokenClass::Eov, terminator_weight);
  set(TokenClass::Split, terminator_weight);
  set(TokenClass::Eoe, terminator_weight);
  weights_[static_cast<std::size_t>(TokenClass::Na)] = 0.0;
}

void LossWeights::set(TokenClass c, double w) {
  if (!(w >= 0.0)) throw std::invalid_argument("loss weights must be non-negative");
  if (c == TokenClass::Na && w != 0.0) throw std::invalid_argument("NA tokens must carry weight 0");
  weights_[static_cast<std::size_t>(c)] = w;
}

std::vector<Token> mask_vertex_segment(std::span<const Token> tokens, const VocabSpec& vocab) {
  std::vector<Token> out(tokens.begin(), tokens.end());
  for (std::size_t i = 1; i < out.size() && i <= vocab.vertex_len; ++i) out[i] = tokens::kMask;
  return out;
}

template <typename T>
Matrix<T> patchify(const Raster& raster, std::size_t patch) {
  if (patch == 0 || raster.height % patch != 0 || raster.width % patch != 0) {
    throw std::invalid_argument("patchify: raster size must be a multiple of the patch size");
  }
  const std::size_t gh = raster.height / patch, gw = raster.width / patch;
  Matrix<T> out(static_cast<Eigen::Index>(gh * gw), static_cast<Eigen::Index>(patch * patch));
  for (std::size_t pr = 0; pr < gh; ++pr) {
    for (std::size_t pc = 0; pc < gw; ++pc) {
      const auto row = static_cast<Eigen::Index>(pr * gw + pc);
      for (std::size_t r = 0; r < patch; ++r) {
        for (std::size_t c = 0; c < patch; ++c) {
          out(row, static_cast<Eigen::Index>(r * patch + c)) = static_cast<T>(raster.at(pr * patch + r, pc * patch + c));
        }
      }
    }
  }
  return out;
}

template Matrix<float> patchify<float>(const Raster&, std::size_t);
template Matrix<double> patchify<double>(const Raster&, std::size_t);

namespace {

using Eigen::Index;

template <typename T>
using RowVec = Eigen::Matrix<T, 1, Eigen::Dynamic>;

template <typename T>
using ColVec = Eigen::Matrix<T, Eigen::Dynamic, 1>;

constexpr double kLnEps = 1e-5;

template <typename T>
Matrix<T> randn(Index rows, Index cols, double std, Rng& rng) {
  Matrix<T> m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(std * rng.normal());
  return m;
}

template <typename T>
typename Parameters<T>::LayerNorm make_ln(Index d) {
  return {Matrix<T>::Ones(1, d), Matrix<T>::Zero(1, d)};
}

// Fourier features of s in [0, 1] with frequencies pi * top^(k / (n - 1)).
template <typename T>
void fourier_row(Eigen::Ref<Matrix<T>> row, double s, double top, double scale) {
  const Index pairs = row.cols() / 2;
  for (Index k = 0; k < pairs; ++k) {
    const double w = std::numbers::pi * std::pow(top, pairs > 1 ? static_cast<double>(k) / static_cast<double>(pairs - 1) : 0.0);
    row(0, 2 * k) = static_cast<T>(scale * std::sin(w * s));
    row(0, 2 * k + 1) = static_cast<T>(scale * std::cos(w * s));
  }
}

// Coordinate bins and patch positions start on a shared Fourier basis: a
// bin's embedding and output row carry the features of its normalized value
// in both halves, and each patch carries (column, row) features in the
// (first, second) half.
template <typename T>
void seed_coordinate_geometry(Parameters<T>& p, const ModelConfig& cfg, const VocabSpec& vocab) {
  const Index d = static_cast<Index>(cfg.embed_dim);
  const Index half = d / 2;
  const auto bins = static_cast<double>(vocab.num_bins);
  const double small = 0.02 * std::sqrt(2.0);
  for (std::size_t b = 0; b < vocab.num_bins; ++b) {
    const double s = (static_cast<double>(b) + 0.5) / bins;
    for (Token base : {vocab.vertex_coord_base(), vocab.mid_coord_base()}) {
      const auto id = static_cast<Index>(base) + static_cast<Index>(b);
      Matrix<T> f(1, half);
      fourier_row<T>(f, s, bins, small);
      p.token_embed.block(id, 0, 1, half) = f;
      p.token_embed.block(id, half, 1, half) = f;
      p.out_w.block(0, id, half, 1) = f.transpose();
      p.out_w.block(half, id, half, 1) = f.transpose();
    }
  }
  const std::size_t gh = cfg.raster_h / cfg.patch_size, gw = cfg.raster_w / cfg.patch_size;
  for (std::size_t r = 0; r < gh; ++r) {
    for (std::size_t c = 0; c < gw; ++c) {
      const auto row = static_cast<Index>(r * gw + c);
      Matrix<T> fx(1, half), fy(1, half);
      fourier_row<T>(fx, (static_cast<double>(c) + 0.5) / static_cast<double>(gw), bins, 1.0);
      fourier_row<T>(fy, 1.0 - (static_cast<double>(r) + 0.5) / static_cast<double>(gh), bins, 1.0);
      p.context_pos.block(row, 0, 1, half) = fx;
      p.context_pos.block(row, half, 1, half) = fy;
    }
  }
}

template <typename T>
Parameters<T> init_parameters(const ModelConfig& cfg, const VocabSpec& vocab, Rng& rng) {
  const auto d = static_cast<Index>(cfg.embed_dim);
  const auto f = static_cast<Index>(cfg.feedforward_dim);
  const auto v = static_cast<Index>(vocab.vocab_size());
  const double std = 0.02;
  const double out_std = std / std::sqrt(2.0 * static_cast<double>(cfg.num_layers));

  Parameters<T> p;
  p.token_embed = randn<T>(v, d, std, rng);
  p.pos_embed = randn<T>(static_cast<Index>(vocab.sequence_len()), d, std, rng);
  const auto pp = static_cast<Index>(cfg.patch_size * cfg.patch_size);
  p.patch_w = randn<T>(pp, d, 1.0 / std::sqrt(static_cast<double>(pp)), rng);
  p.patch_b = Matrix<T>::Zero(1, d);
  p.context_pos = randn<T>(static_cast<Index>(cfg.num_patches()), d, std, rng);
  p.ln_context = make_ln<T>(d);
  auto attn = [&]() {
    typename Parameters<T>::Attention a;
    a.wq = randn<T>(d, d, std, rng);
    a.wk = randn<T>(d, d, std, rng);
    a.wv = randn<T>(d, d, std, rng);
    a.wo = randn<T>(d, d, out_std, rng);
    a.bq = Matrix<T>::Zero(1, d);
    a.bk = Matrix<T>::Zero(1, d);
    a.bv = Matrix<T>::Zero(1, d);
    a.bo = Matrix<T>::Zero(1, d);
    return a;
  };
  for (std::size_t i = 0; i < cfg.num_layers; ++i) {
    typename Parameters<T>::Block b;
    b.ln_self = make_ln<T>(d);
    b.self_attn = attn();
    b.ln_cross = make_ln<T>(d);
    b.cross_attn = attn();
    b.ln_ff = make_ln<T>(d);
    b.w1 = randn<T>(d, f, std, rng);
    b.b1 = Matrix<T>::Zero(1, f);
    b.w2 = randn<T>(f, d, out_std, rng);
    b.b2 = Matrix<T>::Zero(1, d);
    p.blocks.push_back(std::move(b));
  }
  p.ln_final = make_ln<T>(d);
  p.out_w = randn<T>(d, v, std, rng);
  p.out_b = Matrix<T>::Zero(1, v);
  if (cfg.embed_dim >= 4) seed_coordinate_geometry(p, cfg, vocab);
  return p;
}

// ---- layer primitives ------------------------------------------------------------

template <typename T>
struct LnCache {
  Matrix<T> xhat;
  ColVec<T> inv_std;
};

template <typename T>
Matrix<T> layer_norm(const Matrix<T>& x, const typename Parameters<T>::LayerNorm& p, LnCache<T>* cache) {
  const Index n = x.rows(), d = x.cols();
  Matrix<T> xhat(n, d);
  ColVec<T> inv(n);
  for (Index i = 0; i < n; ++i) {
    const T mean = x.row(i).mean();
    const T var = (x.row(i).array() - mean).square().mean();
    inv(i) = T(1) / std::sqrt(var + static_cast<T>(kLnEps));
    xhat.row(i) = (x.row(i).array() - mean) * inv(i);
  }
  Matrix<T> y = (xhat.array().rowwise() * p.gamma.row(0).array()).rowwise() + p.beta.row(0).array();
  if (cache != nullptr) {
    cache->xhat = std::move(xhat);
    cache->inv_std = std::move(inv);
  }
  return y;
}

template <typename T>
Matrix<T> layer_norm_backward(const Matrix<T>& dy, const LnCache<T>& c, const typename Parameters<T>::LayerNorm& p,
                              typename Parameters<T>::LayerNorm& g) {
  g.gamma.row(0) += (dy.array() * c.xhat.array()).colwise().sum().matrix();
  g.beta.row(0) += dy.colwise().sum();
  const Matrix<T> dxhat = dy.array().rowwise() * p.gamma.row(0).array();
  Matrix<T> dx(dy.rows(), dy.cols());
  for (Index i = 0; i < dy.rows(); ++i) {
    const T m1 = dxhat.row(i).mean();
    const T m2 = (dxhat.row(i).array() * c.xhat.row(i).array()).mean();
    dx.row(i) = c.inv_std(i) * (dxhat.row(i).array() - m1 - c.xhat.row(i).array() * m2);
  }
  return dx;
}

template <typename T>
Matrix<T> linear(const Matrix<T>& x, const Matrix<T>& w, const Matrix<T>& b) {
  Matrix<T> y = x * w;
  y.rowwise() += b.row(0);
  return y;
}

template <typename T>
void softmax_rows(Matrix<T>& s, Index valid_prefix_offset, bool causal) {
  for (Index i = 0; i < s.rows(); ++i) {
    const Index cols = causal ? std::min<Index>(s.cols(), i + 1 + valid_prefix_offset) : s.cols();
    auto head = s.row(i).head(cols);
    const T mx = head.maxCoeff();
    head = (head.array() - mx).exp();
    head /= head.sum();
    if (cols < s.cols()) s.row(i).tail(s.cols() - cols).setZero();
  }
}

template <typename T>
struct AttnCache {
  Matrix<T> q, k, v;
  std::vector<Matrix<T>> probs;
  Matrix<T> concat;
};

template <typename T>
Matrix<T> attention(const typename Parameters<T>::Attention& p, const Matrix<T>& xq, const Matrix<T>& xkv, bool causal,
                    std::size_t heads, AttnCache<T>* cache) {
  const Index d = xq.cols();
  const Index dh = d / static_cast<Index>(heads);
  const T scale = T(1) / std::sqrt(static_cast<T>(dh));
  Matrix<T> q = linear(xq, p.wq, p.bq);
  Matrix<T> k = linear(xkv, p.wk, p.bk);
  Matrix<T> v = linear(xkv, p.wv, p.bv);
  Matrix<T> concat(xq.rows(), d);
  if (cache != nullptr) cache->probs.resize(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    const Index off = static_cast<Index>(h) * dh;
    Matrix<T> s = (q.middleCols(off, dh) * k.middleCols(off, dh).transpose()) * scale;
    softmax_rows(s, 0, causal);
    concat.middleCols(off, dh).noalias() = s * v.middleCols(off, dh);
    if (cache != nullptr) cache->probs[h] = std::move(s);
  }
  Matrix<T> out = linear(concat, p.wo, p.bo);
  if (cache != nullptr) {
    cache->q = std::move(q);
    cache->k = std::move(k);
    cache->v = std::move(v);
    cache->concat = std::move(concat);
  }
  return out;
}

// Returns (d xq, d xkv).
template <typename T>
std::pair<Matrix<T>, Matrix<T>> attention_backward(const Matrix<T>& dout, const AttnCache<T>& c, const Matrix<T>& xq,
                                                   const Matrix<T>& xkv, const typename Parameters<T>::Attention& p,
                                                   typename Parameters<T>::Attention& g, std::size_t heads) {
  const Index d = xq.cols();
  const Index dh = d / static_cast<Index>(heads);
  const T scale = T(1) / std::sqrt(static_cast<T>(dh));
  g.wo.noalias() += c.concat.transpose() * dout;
  g.bo.row(0) += dout.colwise().sum();
  const Matrix<T> dconcat = dout * p.wo.transpose();
  Matrix<T> dq = Matrix<T>::Zero(c.q.rows(), d);
  Matrix<T> dk = Matrix<T>::Zero(c.k.rows(), d);
  Matrix<T> dv = Matrix<T>::Zero(c.v.rows(), d);
  for (std::size_t h = 0; h < heads; ++h) {
    const Index off = static_cast<Index>(h) * dh;
    const Matrix<T>& prob = c.probs[h];
    const auto doh = dconcat.middleCols(off, dh);
    const Matrix<T> dp = doh * c.v.middleCols(off, dh).transpose();
    dv.middleCols(off, dh).noalias() += prob.transpose() * doh;
    const ColVec<T> rowdot = (dp.array() * prob.array()).rowwise().sum();
    const Matrix<T> ds = (prob.array() * (dp.array().colwise() - rowdot.array())).matrix() * scale;
    dq.middleCols(off, dh).noalias() += ds * c.k.middleCols(off, dh);
    dk.middleCols(off, dh).noalias() += ds.transpose() * c.q.middleCols(off, dh);
  }
  g.wq.noalias() += xq.transpose() * dq;
  g.bq.row(0) += dq.colwise().sum();
  g.wk.noalias() += xkv.transpose() * dk;
  g.bk.row(0) += dk.colwise().sum();
  g.wv.noalias() += xkv.transpose() * dv;
  g.bv.row(0) += dv.colwise().sum();
  Matrix<T> dxq = dq * p.wq.transpose();
  Matrix<T> dxkv = dk * p.wk.transpose();
  dxkv.noalias() += dv * p.wv.transpose();
  return {std::move(dxq), std::move(dxkv)};
}

template <typename T>
constexpr T kGeluC = static_cast<T>(0.7978845608028654);  // sqrt(2/pi)

template <typename T>
Matrix<T> gelu(const Matrix<T>& x) {
  return x.unaryExpr([](T v) { return T(0.5) * v * (T(1) + std::tanh(kGeluC<T> * (v + T(0.044715) * v * v * v))); });
}

template <typename T>
Matrix<T> gelu_grad(const Matrix<T>& x) {
  return x.unaryExpr([](T v) {
    const T th = std::tanh(kGeluC<T> * (v + T(0.044715) * v * v * v));
    return T(0.5) * (T(1) + th) + T(0.5) * v * (T(1) - th * th) * kGeluC<T> * (T(1) + T(3) * T(0.044715) * v * v);
  });
}

template <typename T>
Matrix<T> dropout_mask(Index rows, Index cols, double rate, Rng& rng) {
  Matrix<T> m(rows, cols);
  const T keep = static_cast<T>(1.0 / (1.0 - rate));
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform() < rate ? T(0) : keep;
  return m;
}

template <typename T>
struct BlockCache {
  Matrix<T> x_in, a, x_mid1, b, x_mid2, c, hpre, hact;
  LnCache<T> ln_self, ln_cross, ln_ff;
  AttnCache<T> self_attn, cross_attn;
  Matrix<T> mask_self, mask_cross, mask_ff;
};

}  // namespace

template <typename T>
Transformer<T>::Transformer(const ModelConfig& config, const VocabSpec& vocab, std::uint64_t seed)
    : config_(config), vocab_(vocab) {
  config_.check();
  vocab_.check();
  Rng rng(seed);
  params_ = init_parameters<T>(config_, vocab_, rng);
}

template <typename T>
Transformer<T>::Transformer(const ModelConfig& config, const VocabSpec& vocab, Parameters<T> params)
    : config_(config), vocab_(vocab), params_(std::move(params)) {
  config_.check();
  vocab_.check();
  const Parameters<float> shapes = make_parameter_shapes(config_, vocab_);
  std::vector<std::pair<Index, Index>> expected;
  shapes.for_each([&](const std::string&, const Matrix<float>& m) { expected.emplace_back(m.rows(), m.cols()); });
  std::size_t i = 0;
  bool ok = params_.blocks.size() == config_.num_layers;
  if (ok) {
    params_.for_each([&](const std::string&, const Matrix<T>& m) {
      ok = ok && i < expected.size() && expected[i] == std::make_pair(m.rows(), m.cols());
      ++i;
    });
  }
  if (!ok || i != expected.size()) throw std::invalid_argument("transformer: parameter shapes do not match config");
}

template <typename T>
Matrix<T> Transformer<T>::embed_context(const Raster& raster) const {
  if (raster.height != config_.raster_h || raster.width != config_.raster_w) {
    throw std::invalid_argument("embed_context: raster is " + std::to_string(raster.height) + "x" +
                                std::to_string(raster.width) + ", model expects " + std::to_string(config_.raster_h) +
                                "x" + std::to_string(config_.raster_w));
  }
  Matrix<T> ctx = linear(patchify<T>(raster, config_.patch_size), params_.patch_w, params_.patch_b);
  ctx += params_.context_pos;
  return ctx;
}

template <typename T>
Matrix<T> Transformer<T>::forward(std::span<const Token> prefix, const Matrix<T>& context) const {
  if (prefix.empty()) throw std::invalid_argument("forward: empty prefix");
  if (prefix.size() > max_len()) throw std::invalid_argument("forward: prefix exceeds maximum sequence length");
  const auto len = static_cast<Index>(prefix.size());
  const auto vsize = static_cast<Token>(vocab_.vocab_size());
  Matrix<T> x(len, static_cast<Index>(config_.embed_dim));
  for (Index i = 0; i < len; ++i) {
    const Token t = prefix[static_cast<std::size_t>(i)];
    if (t < 0 || t >= vsize) throw std::invalid_argument("forward: token id outside vocabulary");
    x.row(i) = params_.token_embed.row(t) + params_.pos_embed.row(i);
  }
  const Matrix<T> ctx = layer_norm<T>(context, params_.ln_context, nullptr);
  for (const auto& blk : params_.blocks) {
    const Matrix<T> a = layer_norm<T>(x, blk.ln_self, nullptr);
    x += attention<T>(blk.self_attn, a, a, true, config_.num_heads, nullptr);
    const Matrix<T> b = layer_norm<T>(x, blk.ln_cross, nullptr);
    x += attention<T>(blk.cross_attn, b, ctx, false, config_.num_heads, nullptr);
    const Matrix<T> c = layer_norm<T>(x, blk.ln_ff, nullptr);
    x += linear<T>(gelu<T>(linear<T>(c, blk.w1, blk.b1)), blk.w2, blk.b2);
  }
  return linear<T>(layer_norm<T>(x, params_.ln_final, nullptr), params_.out_w, params_.out_b);
}

template <typename T>
T Transformer<T>::forward_backward(std::span<const Token> inputs, std::span<const Token> targets, const Raster& raster,
                                   const LossWeights& weights, T weight_norm, Parameters<T>& grads,
                                   Rng* dropout_rng) const {
  if (inputs.size() != targets.size() || inputs.empty()) {
    throw std::invalid_argument("forward_backward: inputs and targets must be non-empty and aligned");
  }
  if (inputs.size() > max_len()) throw std::invalid_argument("forward_backward: sequence too long");
  const auto len = static_cast<Index>(inputs.size());
  const auto d = static_cast<Index>(config_.embed_dim);
  const std::size_t heads = config_.num_heads;
  const bool drop = dropout_rng != nullptr && config_.dropout > 0.0;

  // Forward.
  const Matrix<T> patches = patchify<T>(raster, config_.patch_size);
  Matrix<T> ctx0 = linear(patches, params_.patch_w, params_.patch_b);
  ctx0 += params_.context_pos;
  LnCache<T> ln_ctx_cache;
  const Matrix<T> ctx = layer_norm<T>(ctx0, params_.ln_context, &ln_ctx_cache);

  Matrix<T> x(len, d);
  for (Index i = 0; i < len; ++i) x.row(i) = params_.token_embed.row(inputs[static_cast<std::size_t>(i)]) + params_.pos_embed.row(i);

  std::vector<BlockCache<T>> caches(params_.blocks.size());
  for (std::size_t l = 0; l < params_.blocks.size(); ++l) {
    const auto& blk = params_.blocks[l];
    BlockCache<T>& c = caches[l];
    c.x_in = x;
    c.a = layer_norm<T>(x, blk.ln_self, &c.ln_self);
    Matrix<T> sa = attention<T>(blk.self_attn, c.a, c.a, true, heads, &c.self_attn);
    if (drop) {
      c.mask_self = dropout_mask<T>(len, d, config_.dropout, *dropout_rng);
      sa.array() *= c.mask_self.array();
    }
    x += sa;
    c.b = layer_norm<T>(x, blk.ln_cross, &c.ln_cross);
    Matrix<T> ca = attention<T>(blk.cross_attn, c.b, ctx, false, heads, &c.cross_attn);
    if (drop) {
      c.mask_cross = dropout_mask<T>(len, d, config_.dropout, *dropout_rng);
      ca.array() *= c.mask_cross.array();
    }
    x += ca;
    c.c = layer_norm<T>(x, blk.ln_ff, &c.ln_ff);
    c.hpre = linear<T>(c.c, blk.w1, blk.b1);
    c.hact = gelu<T>(c.hpre);
    Matrix<T> f = linear<T>(c.hact, blk.w2, blk.b2);
    if (drop) {
      c.mask_ff = dropout_mask<T>(len, d, config_.dropout, *dropout_rng);
      f.array() *= c.mask_ff.array();
    }
    x += f;
  }
  LnCache<T> ln_final_cache;
  const Matrix<T> h = layer_norm<T>(x, params_.ln_final, &ln_final_cache);
  const Matrix<T> logits = linear<T>(h, params_.out_w, params_.out_b);

  // Loss and its gradient w.r.t. the logits.
  Matrix<T> dlogits = Matrix<T>::Zero(len, logits.cols());
  T loss = 0;
  for (Index i = 0; i < len; ++i) {
    const Token t = targets[static_cast<std::size_t>(i)];
    const T w = static_cast<T>(weights.weight(t, vocab_));
    if (w == T(0)) continue;
    const T mx = logits.row(i).maxCoeff();
    RowVec<T> e = (logits.row(i).array() - mx).exp();
    const T sum = e.sum();
    loss -= w * (logits(i, t) - mx - std::log(sum)) / weight_norm;
    e /= sum;
    e(t) -= T(1);
    dlogits.row(i) = e * (w / weight_norm);
  }

  // Backward.
  grads.out_w.noalias() += h.transpose() * dlogits;
  grads.out_b.row(0) += dlogits.colwise().sum();
  Matrix<T> dx = layer_norm_backward<T>(dlogits * params_.out_w.transpose(), ln_final_cache, params_.ln_final,
                                        grads.ln_final);
  Matrix<T> dctx = Matrix<T>::Zero(ctx.rows(), d);
  for (std::size_t li = params_.blocks.size(); li-- > 0;) {
    const auto& blk = params_.blocks[li];
    auto& gb = grads.blocks[li];
    const BlockCache<T>& c = caches[li];

    Matrix<T> df = dx;
    if (drop) df.array() *= c.mask_ff.array();
    gb.w2.noalias() += c.hact.transpose() * df;
    gb.b2.row(0) += df.colwise().sum();
    const Matrix<T> dhpre = ((df * blk.w2.transpose()).array() * gelu_grad<T>(c.hpre).array()).matrix();
    gb.w1.noalias() += c.c.transpose() * dhpre;
    gb.b1.row(0) += dhpre.colwise().sum();
    dx += layer_norm_backward<T>(dhpre * blk.w1.transpose(), c.ln_ff, blk.ln_ff, gb.ln_ff);

    Matrix<T> dca = dx;
    if (drop) dca.array() *= c.mask_cross.array();
    auto [db, dctx_part] = attention_backward<T>(dca, c.cross_attn, c.b, ctx, blk.cross_attn, gb.cross_attn, heads);
    dctx += dctx_part;
    dx += layer_norm_backward<T>(db, c.ln_cross, blk.ln_cross, gb.ln_cross);

    Matrix<T> dsa = dx;
    if (drop) dsa.array() *= c.mask_self.array();
    auto [daq, dakv] = attention_backward<T>(dsa, c.self_attn, c.a, c.a, blk.self_attn, gb.self_attn, heads);
    daq += dakv;
    dx += layer_norm_backward<T>(daq, c.ln_self, blk.ln_self, gb.ln_self);
  }

  const Matrix<T> dctx0 = layer_norm_backward<T>(dctx, ln_ctx_cache, params_.ln_context, grads.ln_context);
  grads.patch_w.noalias() += patches.transpose() * dctx0;
  grads.patch_b.row(0) += dctx0.colwise().sum();
  grads.context_pos += dctx0;
  for (Index i = 0; i < len; ++i) grads.token_embed.row(inputs[static_cast<std::size_t>(i)]) += dx.row(i);
  grads.pos_embed.topRows(len) += dx;
  return loss;
}

template <typename T>
DecodeState<T> Transformer<T>::begin_decode(const Matrix<T>& context) const {
  DecodeState<T> s;
  const Matrix<T> ctx = layer_norm<T>(context, params_.ln_context, nullptr);
  const auto d = static_cast<Index>(config_.embed_dim);
  for (const auto& blk : params_.blocks) {
    s.cross_k.push_back(linear<T>(ctx, blk.cross_attn.wk, blk.cross_attn.bk));
    s.cross_v.push_back(linear<T>(ctx, blk.cross_attn.wv, blk.cross_attn.bv));
    s.self_k.emplace_back(static_cast<Index>(max_len()), d);
    s.self_v.emplace_back(static_cast<Index>(max_len()), d);
  }
  return s;
}

template <typename T>
Eigen::Matrix<T, 1, Eigen::Dynamic> Transformer<T>::decode_step(DecodeState<T>& s, Token token) const {
  if (s.length >= max_len()) throw std::invalid_argument("decode_step: sequence length exceeded");
  if (token < 0 || static_cast<std::size_t>(token) >= vocab_.vocab_size()) {
    throw std::invalid_argument("decode_step: token id outside vocabulary");
  }
  const auto pos = static_cast<Index>(s.length);
  const Index d = static_cast<Index>(config_.embed_dim);
  const Index dh = d / static_cast<Index>(config_.num_heads);
  const T scale = T(1) / std::sqrt(static_cast<T>(dh));
  Matrix<T> x = params_.token_embed.row(token) + params_.pos_embed.row(pos);

  auto attend = [&](const Matrix<T>& q, const auto& keys, const auto& values) {
    Matrix<T> concat(1, d);
    for (std::size_t h = 0; h < config_.num_heads; ++h) {
      const Index off = static_cast<Index>(h) * dh;
      Matrix<T> sc = (q.middleCols(off, dh) * keys.middleCols(off, dh).transpose()) * scale;
      softmax_rows(sc, 0, false);
      concat.middleCols(off, dh).noalias() = sc * values.middleCols(off, dh);
    }
    return concat;
  };

  for (std::size_t l = 0; l < params_.blocks.size(); ++l) {
    const auto& blk = params_.blocks[l];
    const Matrix<T> a = layer_norm<T>(x, blk.ln_self, nullptr);
    s.self_k[l].row(pos) = linear<T>(a, blk.self_attn.wk, blk.self_attn.bk);
    s.self_v[l].row(pos) = linear<T>(a, blk.self_attn.wv, blk.self_attn.bv);
    const Matrix<T> q = linear<T>(a, blk.self_attn.wq, blk.self_attn.bq);
    x += linear<T>(attend(q, s.self_k[l].topRows(pos + 1), s.self_v[l].topRows(pos + 1)), blk.self_attn.wo,
                   blk.self_attn.bo);
    const Matrix<T> b = layer_norm<T>(x, blk.ln_cross, nullptr);
    const Matrix<T> qc = linear<T>(b, blk.cross_attn.wq, blk.cross_attn.bq);
    x += linear<T>(attend(qc, s.cross_k[l], s.cross_v[l]), blk.cross_attn.wo, blk.cross_attn.bo);
    const Matrix<T> c = layer_norm<T>(x, blk.ln_ff, nullptr);
    x += linear<T>(gelu<T>(linear<T>(c, blk.w1, blk.b1)), blk.w2, blk.b2);
  }
  ++s.length;
  return linear<T>(layer_norm<T>(x, params_.ln_final, nullptr), params_.out_w, params_.out_b).row(0);
}

template <typename T>
double weighted_nll(const Matrix<T>& logits, std::span<const Token> targets, const LossWeights& weights,
                    const VocabSpec& vocab, bool* degenerate) {
  if (static_cast<std::size_t>(logits.rows()) != targets.size()) {
    throw std::invalid_argument("weighted_nll: logits rows must match target count");
  }
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    const double w = weights.weight(targets[i], vocab);
    if (w == 0.0) continue;
    const auto row = logits.row(static_cast<Index>(i)).template cast<double>();
    const double mx = row.maxCoeff();
    const double lse = mx + std::log((row.array() - mx).exp().sum());
    num += w * (lse - row(targets[i]));
    den += w;
  }
  if (degenerate != nullptr) *degenerate = den == 0.0;
  if (den == 0.0) {
    std::cerr << "warning: loss over a target with no weighted positions is defined as 0\n";
    return 0.0;
  }
  return num / den;
}

template class Transformer<float>;
template class Transformer<double>;
template double weighted_nll<float>(const Matrix<float>&, std::span<const Token>, const LossWeights&, const VocabSpec&,
                                    bool*);
template double weighted_nll<double>(const Matrix<double>&, std::span<const Token>, const LossWeights&,
                                     const VocabSpec&, bool*);

Parameters<float> make_parameter_shapes(const ModelConfig& config, const VocabSpec& vocab) {
  Rng rng(0);
  return init_parameters<float>(config, vocab, rng);
}

}  // namespace lanegraph
