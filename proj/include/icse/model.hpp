#pragma once

// Decoder-only transformer mapping a causal stream of (input, output) tokens
// to state estimates: GPT-2 block structure (pre-layernorm, causal multi-head
// attention, GELU MLP, learned absolute positions) with a linear token
// embedding in front and a linear state head behind. Forward, exact
// reverse-mode gradients, and sliding-window streaming deployment.

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "icse/process.hpp"
#include "icse/rng.hpp"
#include "icse/standardize.hpp"

namespace icse {

struct ModelConfig {
  int n_layers = 12;
  int n_heads = 4;
  int n_ctx = 500;
  int d_filter = 128;
  int n_u = 2;
  int n_y = 1;
  int n_x = 2;
  double dropout = 0.0;

  int d_token() const { return n_u + n_y; }
  int head_dim() const { return d_filter / n_heads; }

  void validate() const {
    if (n_layers < 0) throw std::invalid_argument("ModelConfig: n_layers < 0");
    if (n_heads < 1) throw std::invalid_argument("ModelConfig: n_heads < 1");
    if (n_ctx < 1) throw std::invalid_argument("ModelConfig: n_ctx < 1");
    if (d_filter < 1) throw std::invalid_argument("ModelConfig: d_filter < 1");
    if (n_u < 0 || n_y < 0 || n_u + n_y < 1) {
      throw std::invalid_argument("ModelConfig: need at least one token channel");
    }
    if (n_x < 1) throw std::invalid_argument("ModelConfig: n_x < 1");
    if (d_filter % n_heads != 0) {
      throw std::invalid_argument("ModelConfig: d_filter must divide by n_heads");
    }
    if (dropout != 0.0) {
      throw std::invalid_argument("ModelConfig: only dropout = 0 is supported");
    }
  }

  bool operator==(const ModelConfig&) const = default;
};

template <class S>
struct TensorT {
  std::vector<std::size_t> shape;
  std::vector<S> data;

  static TensorT zeros(std::vector<std::size_t> shape_in) {
    TensorT t;
    std::size_t n = 1;
    for (std::size_t s : shape_in) n *= s;
    t.shape = std::move(shape_in);
    t.data.assign(n, S(0));
    return t;
  }

  std::size_t size() const { return data.size(); }
  void fill(S v) { std::fill(data.begin(), data.end(), v); }
};

using Tensor = TensorT<double>;

template <class S>
struct BlockWeightsT {
  TensorT<S> ln1_w, ln1_b;
  TensorT<S> qkv_w, qkv_b;    // fused q,k,v projection: (3d, d)
  TensorT<S> proj_w, proj_b;  // attention output projection: (d, d)
  TensorT<S> ln2_w, ln2_b;
  TensorT<S> up_w, up_b;      // MLP expansion: (4d, d)
  TensorT<S> down_w, down_b;  // MLP contraction: (d, 4d)
};

template <class S>
struct ModelWeightsT {
  TensorT<S> in_w, in_b;  // token embedding: (d, n_u+n_y)
  TensorT<S> pos;         // learned positions: (n_ctx, d)
  std::vector<BlockWeightsT<S>> blocks;
  TensorT<S> lnf_w, lnf_b;
  TensorT<S> head_w, head_b;  // state head: (n_x, d)
};

using ModelWeights = ModelWeightsT<double>;

template <class S>
ModelWeightsT<S> make_weights(const ModelConfig& cfg) {
  cfg.validate();
  const std::size_t d = static_cast<std::size_t>(cfg.d_filter);
  const std::size_t dt = static_cast<std::size_t>(cfg.d_token());
  const std::size_t dx = static_cast<std::size_t>(cfg.n_x);

  ModelWeightsT<S> w;
  w.in_w = TensorT<S>::zeros({d, dt});
  w.in_b = TensorT<S>::zeros({d});
  w.pos = TensorT<S>::zeros({static_cast<std::size_t>(cfg.n_ctx), d});
  w.blocks.resize(static_cast<std::size_t>(cfg.n_layers));
  for (auto& blk : w.blocks) {
    blk.ln1_w = TensorT<S>::zeros({d});
    blk.ln1_b = TensorT<S>::zeros({d});
    blk.qkv_w = TensorT<S>::zeros({3 * d, d});
    blk.qkv_b = TensorT<S>::zeros({3 * d});
    blk.proj_w = TensorT<S>::zeros({d, d});
    blk.proj_b = TensorT<S>::zeros({d});
    blk.ln2_w = TensorT<S>::zeros({d});
    blk.ln2_b = TensorT<S>::zeros({d});
    blk.up_w = TensorT<S>::zeros({4 * d, d});
    blk.up_b = TensorT<S>::zeros({4 * d});
    blk.down_w = TensorT<S>::zeros({d, 4 * d});
    blk.down_b = TensorT<S>::zeros({d});
  }
  w.lnf_w = TensorT<S>::zeros({d});
  w.lnf_b = TensorT<S>::zeros({d});
  w.head_w = TensorT<S>::zeros({dx, d});
  w.head_b = TensorT<S>::zeros({dx});
  return w;
}

// Visits every learnable tensor in a fixed canonical order.
template <class S, class Fn>
void for_each_tensor(ModelWeightsT<S>& w, Fn&& fn) {
  fn("in_proj.weight", w.in_w);
  fn("in_proj.bias", w.in_b);
  fn("pos_embedding", w.pos);
  for (std::size_t i = 0; i < w.blocks.size(); ++i) {
    const std::string p = "blocks." + std::to_string(i) + ".";
    auto& b = w.blocks[i];
    fn(p + "ln1.weight", b.ln1_w);
    fn(p + "ln1.bias", b.ln1_b);
    fn(p + "attn.qkv.weight", b.qkv_w);
    fn(p + "attn.qkv.bias", b.qkv_b);
    fn(p + "attn.proj.weight", b.proj_w);
    fn(p + "attn.proj.bias", b.proj_b);
    fn(p + "ln2.weight", b.ln2_w);
    fn(p + "ln2.bias", b.ln2_b);
    fn(p + "mlp.up.weight", b.up_w);
    fn(p + "mlp.up.bias", b.up_b);
    fn(p + "mlp.down.weight", b.down_w);
    fn(p + "mlp.down.bias", b.down_b);
  }
  fn("ln_f.weight", w.lnf_w);
  fn("ln_f.bias", w.lnf_b);
  fn("head.weight", w.head_w);
  fn("head.bias", w.head_b);
}

template <class S, class Fn>
void for_each_tensor(const ModelWeightsT<S>& w, Fn&& fn) {
  for_each_tensor(const_cast<ModelWeightsT<S>&>(w),
                  [&](const std::string& name, const TensorT<S>& t) { fn(name, t); });
}

inline std::size_t count_parameters(const ModelConfig& cfg) {
  cfg.validate();
  const std::size_t d = static_cast<std::size_t>(cfg.d_filter);
  const std::size_t dt = static_cast<std::size_t>(cfg.d_token());
  const std::size_t dx = static_cast<std::size_t>(cfg.n_x);
  const std::size_t per_block = 2 * d                  // ln1
                                + 3 * d * d + 3 * d    // qkv
                                + d * d + d            // proj
                                + 2 * d                // ln2
                                + 4 * d * d + 4 * d    // up
                                + 4 * d * d + d;       // down
  return d * dt + d                                        // in_proj
         + static_cast<std::size_t>(cfg.n_ctx) * d          // positions
         + static_cast<std::size_t>(cfg.n_layers) * per_block
         + 2 * d                                             // ln_f
         + dx * d + dx;                                      // head
}

// GPT-2 style init: N(0, 0.02) projections and positions, zero biases,
// unit/zero layer norms. The state head starts at zero so the untrained
// filter predicts the standardized mean state.
inline ModelWeights init_weights(const ModelConfig& cfg, std::uint64_t seed) {
  ModelWeights w = make_weights<double>(cfg);
  Rng rng(derive_seed(seed, SeedDomain::weight_init, 0));
  auto gaussian_fill = [&](Tensor& t) {
    for (double& v : t.data) v = rng.normal(0.0, 0.02);
  };
  for_each_tensor(w, [&](const std::string& name, Tensor& t) {
    const bool is_ln_weight = name.ends_with("ln1.weight") ||
                              name.ends_with("ln2.weight") ||
                              name.ends_with("ln_f.weight");
    const bool is_head = name.starts_with("head.");
    const bool is_bias = name.ends_with(".bias") || name == "in_proj.bias";
    if (is_head) {
      t.fill(0.0);
    } else if (is_ln_weight) {
      t.fill(1.0);
    } else if (is_bias) {
      t.fill(0.0);
    } else {
      gaussian_fill(t);  // in_proj.weight, pos_embedding, attn/mlp weights
    }
  });
  return w;
}

template <class S>
ModelWeightsT<S> cast_weights(const ModelWeights& w) {
  ModelWeightsT<S> out;
  if constexpr (std::is_same_v<S, double>) {
    out = w;
  } else {
    auto copy = [](const Tensor& src) {
      TensorT<S> t;
      t.shape = src.shape;
      t.data.assign(src.data.begin(), src.data.end());
      return t;
    };
    out.in_w = copy(w.in_w);
    out.in_b = copy(w.in_b);
    out.pos = copy(w.pos);
    out.blocks.resize(w.blocks.size());
    for (std::size_t i = 0; i < w.blocks.size(); ++i) {
      const auto& s = w.blocks[i];
      auto& d = out.blocks[i];
      d.ln1_w = copy(s.ln1_w); d.ln1_b = copy(s.ln1_b);
      d.qkv_w = copy(s.qkv_w); d.qkv_b = copy(s.qkv_b);
      d.proj_w = copy(s.proj_w); d.proj_b = copy(s.proj_b);
      d.ln2_w = copy(s.ln2_w); d.ln2_b = copy(s.ln2_b);
      d.up_w = copy(s.up_w); d.up_b = copy(s.up_b);
      d.down_w = copy(s.down_w); d.down_b = copy(s.down_b);
    }
    out.lnf_w = copy(w.lnf_w);
    out.lnf_b = copy(w.lnf_b);
    out.head_w = copy(w.head_w);
    out.head_b = copy(w.head_b);
  }
  return out;
}

template <class S>
using RowMat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class S>
using VecX = Eigen::Matrix<S, Eigen::Dynamic, 1>;

namespace detail {

template <class S>
Eigen::Map<const RowMat<S>> as_matrix(const TensorT<S>& t) {
  return Eigen::Map<const RowMat<S>>(t.data.data(),
                                     static_cast<Eigen::Index>(t.shape.at(0)),
                                     static_cast<Eigen::Index>(t.shape.at(1)));
}

template <class S>
Eigen::Map<RowMat<S>> as_matrix_mut(TensorT<S>& t) {
  return Eigen::Map<RowMat<S>>(t.data.data(),
                               static_cast<Eigen::Index>(t.shape.at(0)),
                               static_cast<Eigen::Index>(t.shape.at(1)));
}

template <class S>
Eigen::Map<const Eigen::Matrix<S, 1, Eigen::Dynamic>> as_row(const TensorT<S>& t) {
  return Eigen::Map<const Eigen::Matrix<S, 1, Eigen::Dynamic>>(
      t.data.data(), 1, static_cast<Eigen::Index>(t.shape.at(0)));
}

template <class S>
Eigen::Map<Eigen::Matrix<S, 1, Eigen::Dynamic>> as_row_mut(TensorT<S>& t) {
  return Eigen::Map<Eigen::Matrix<S, 1, Eigen::Dynamic>>(
      t.data.data(), 1, static_cast<Eigen::Index>(t.shape.at(0)));
}

inline constexpr double kLnEps = 1e-5;
inline constexpr double kGeluC0 = 0.7978845608028654;  // sqrt(2/pi)
inline constexpr double kGeluC1 = 0.044715;

template <class S>
S gelu_tanh(S x) {
  const S inner = S(kGeluC0) * (x + S(kGeluC1) * x * x * x);
  return S(0.5) * x * (S(1) + std::tanh(inner));
}

template <class S>
S gelu_tanh_grad(S x) {
  const S inner = S(kGeluC0) * (x + S(kGeluC1) * x * x * x);
  const S t = std::tanh(inner);
  const S dinner = S(kGeluC0) * (S(1) + S(3) * S(kGeluC1) * x * x);
  return S(0.5) * (S(1) + t) + S(0.5) * x * (S(1) - t * t) * dinner;
}

// y = xhat * gamma + beta with xhat = (x - mean) * rstd, per row.
template <class S>
void layernorm_forward(const RowMat<S>& x, const TensorT<S>& gamma,
                       const TensorT<S>& beta, RowMat<S>& y, RowMat<S>& xhat,
                       VecX<S>& rstd) {
  const Eigen::Index T = x.rows(), d = x.cols();
  y.resize(T, d);
  xhat.resize(T, d);
  rstd.resize(T);
  const auto g = as_row(gamma);
  const auto b = as_row(beta);
  for (Eigen::Index t = 0; t < T; ++t) {
    const S mean = x.row(t).mean();
    const S var = (x.row(t).array() - mean).square().sum() / S(d);
    const S r = S(1) / std::sqrt(var + S(kLnEps));
    rstd(t) = r;
    xhat.row(t) = (x.row(t).array() - mean) * r;
    y.row(t) = xhat.row(t).cwiseProduct(g) + b;
  }
}

template <class S>
void layernorm_backward(const RowMat<S>& dy, const RowMat<S>& xhat,
                        const VecX<S>& rstd, const TensorT<S>& gamma,
                        TensorT<S>& dgamma, TensorT<S>& dbeta, RowMat<S>& dx) {
  const Eigen::Index T = dy.rows(), d = dy.cols();
  dx.resize(T, d);
  const auto g = as_row(gamma);
  auto dg = as_row_mut(dgamma);
  auto db = as_row_mut(dbeta);
  for (Eigen::Index t = 0; t < T; ++t) {
    dg += dy.row(t).cwiseProduct(xhat.row(t));
    db += dy.row(t);
    const Eigen::Matrix<S, 1, Eigen::Dynamic> dxhat = dy.row(t).cwiseProduct(g);
    const S m1 = dxhat.mean();
    const S m2 = dxhat.cwiseProduct(xhat.row(t)).mean();
    dx.row(t) = rstd(t) * (dxhat.array() - m1 - xhat.row(t).array() * m2);
  }
}

}  // namespace detail

// Activations retained for the backward pass (and for attention diagnostics).
template <class S>
struct ForwardCache {
  RowMat<S> tokens;
  RowMat<S> x0;  // embedded stream entering block 0
  struct BlockCache {
    RowMat<S> x_in;
    RowMat<S> ln1, ln1_xhat;
    VecX<S> ln1_rstd;
    RowMat<S> qkv;
    std::vector<RowMat<S>> att_probs;  // one T x T lower-triangular per head
    RowMat<S> att_concat;
    RowMat<S> x_mid;
    RowMat<S> ln2, ln2_xhat;
    VecX<S> ln2_rstd;
    RowMat<S> mlp_pre, mlp_act;
  };
  std::vector<BlockCache> blocks;
  RowMat<S> lnf_xhat;
  VecX<S> lnf_rstd;
  RowMat<S> x_final;  // after final layer norm
};

// Causal forward pass: row k of the result is the standardized state estimate
// given tokens 0..k. Scores for positions after k are never formed, so row k
// is bit-for-bit independent of later tokens.
template <class S>
RowMat<S> forward(const ModelWeightsT<S>& w, const ModelConfig& cfg,
                  const RowMat<S>& tokens, ForwardCache<S>* cache = nullptr) {
  const Eigen::Index T = tokens.rows();
  const Eigen::Index d = cfg.d_filter;
  const Eigen::Index H = cfg.n_heads;
  const Eigen::Index hd = cfg.head_dim();
  if (T < 1 || T > cfg.n_ctx) {
    throw std::invalid_argument("forward: need 1 <= T <= n_ctx, got T = " +
                                std::to_string(T));
  }
  if (tokens.cols() != cfg.d_token()) {
    throw std::invalid_argument("forward: token width mismatch");
  }
  if (!tokens.allFinite()) {
    throw std::invalid_argument("forward: non-finite token entries");
  }

  using Mat = RowMat<S>;
  const S inv_sqrt_hd = S(1) / std::sqrt(static_cast<S>(hd));

  Mat x = tokens * detail::as_matrix(w.in_w).transpose();
  x.rowwise() += detail::as_row(w.in_b);
  x += detail::as_matrix(w.pos).topRows(T);

  if (cache) {
    cache->tokens = tokens;
    cache->x0 = x;
    cache->blocks.resize(w.blocks.size());
  }

  Mat ln, xhat, qkv, att_out(T, d), probs_scratch;
  VecX<S> rstd;
  for (std::size_t li = 0; li < w.blocks.size(); ++li) {
    const auto& blk = w.blocks[li];
    auto* bc = cache ? &cache->blocks[li] : nullptr;
    if (bc) bc->x_in = x;

    detail::layernorm_forward(x, blk.ln1_w, blk.ln1_b, ln, xhat, rstd);
    if (bc) {
      bc->ln1 = ln;
      bc->ln1_xhat = xhat;
      bc->ln1_rstd = rstd;
    }

    qkv = ln * detail::as_matrix(blk.qkv_w).transpose();
    qkv.rowwise() += detail::as_row(blk.qkv_b);
    if (bc) {
      bc->qkv = qkv;
      bc->att_probs.assign(static_cast<std::size_t>(H), Mat());
    }

    for (Eigen::Index hI = 0; hI < H; ++hI) {
      const auto Q = qkv.block(0, hI * hd, T, hd);
      const auto K = qkv.block(0, d + hI * hd, T, hd);
      const auto V = qkv.block(0, 2 * d + hI * hd, T, hd);
      Mat& probs = bc ? bc->att_probs[static_cast<std::size_t>(hI)] : probs_scratch;
      probs.setZero(T, T);
      for (Eigen::Index t = 0; t < T; ++t) {
        auto row = probs.row(t).head(t + 1);
        row.noalias() = (K.topRows(t + 1) * Q.row(t).transpose()).transpose();
        row *= inv_sqrt_hd;
        const S row_max = row.maxCoeff();
        row = (row.array() - row_max).exp();
        row /= row.sum();
        att_out.block(t, hI * hd, 1, hd).noalias() = row * V.topRows(t + 1);
      }
    }
    if (bc) bc->att_concat = att_out;

    x.noalias() += att_out * detail::as_matrix(blk.proj_w).transpose();
    x.rowwise() += detail::as_row(blk.proj_b);
    if (bc) bc->x_mid = x;

    detail::layernorm_forward(x, blk.ln2_w, blk.ln2_b, ln, xhat, rstd);
    if (bc) {
      bc->ln2 = ln;
      bc->ln2_xhat = xhat;
      bc->ln2_rstd = rstd;
    }

    Mat up = ln * detail::as_matrix(blk.up_w).transpose();
    up.rowwise() += detail::as_row(blk.up_b);
    if (bc) bc->mlp_pre = up;
    Mat act = up.unaryExpr([](S v) { return detail::gelu_tanh(v); });
    if (bc) bc->mlp_act = act;

    x.noalias() += act * detail::as_matrix(blk.down_w).transpose();
    x.rowwise() += detail::as_row(blk.down_b);

    if (!x.allFinite()) {
      throw std::runtime_error("forward: non-finite activation after block " +
                               std::to_string(li));
    }
  }

  detail::layernorm_forward(x, w.lnf_w, w.lnf_b, ln, xhat, rstd);
  if (cache) {
    cache->lnf_xhat = xhat;
    cache->lnf_rstd = rstd;
    cache->x_final = ln;
  }

  Mat out = ln * detail::as_matrix(w.head_w).transpose();
  out.rowwise() += detail::as_row(w.head_b);
  if (!out.allFinite()) {
    throw std::runtime_error("forward: non-finite activation in output head");
  }
  return out;
}

// Reverse-mode pass for one sequence. `d_out` is dLoss/dOutput (T x n_x);
// gradients accumulate into `grads` (shaped like the weights, not cleared).
template <class S>
void backward(const ModelWeightsT<S>& w, const ModelConfig& cfg,
              const ForwardCache<S>& cache, const RowMat<S>& d_out,
              ModelWeightsT<S>& grads) {
  using Mat = RowMat<S>;
  const Eigen::Index T = cache.tokens.rows();
  const Eigen::Index d = cfg.d_filter;
  const Eigen::Index H = cfg.n_heads;
  const Eigen::Index hd = cfg.head_dim();
  const S inv_sqrt_hd = S(1) / std::sqrt(static_cast<S>(hd));

  // head
  detail::as_matrix_mut(grads.head_w).noalias() += d_out.transpose() * cache.x_final;
  detail::as_row_mut(grads.head_b) += d_out.colwise().sum();
  Mat dx = d_out * detail::as_matrix(w.head_w);

  // final layer norm
  Mat dtmp;
  detail::layernorm_backward(dx, cache.lnf_xhat, cache.lnf_rstd, w.lnf_w,
                             grads.lnf_w, grads.lnf_b, dtmp);
  dx = dtmp;

  for (std::size_t li = w.blocks.size(); li-- > 0;) {
    const auto& blk = w.blocks[li];
    const auto& bc = cache.blocks[li];
    auto& gblk = grads.blocks[li];

    // x_out = x_mid + down(gelu(up(ln2(x_mid))))
    detail::as_matrix_mut(gblk.down_w).noalias() += dx.transpose() * bc.mlp_act;
    detail::as_row_mut(gblk.down_b) += dx.colwise().sum();
    Mat d_act = dx * detail::as_matrix(blk.down_w);
    Mat d_up = d_act.binaryExpr(bc.mlp_pre, [](S g, S x) {
      return g * detail::gelu_tanh_grad(x);
    });
    detail::as_matrix_mut(gblk.up_w).noalias() += d_up.transpose() * bc.ln2;
    detail::as_row_mut(gblk.up_b) += d_up.colwise().sum();
    Mat d_ln2 = d_up * detail::as_matrix(blk.up_w);
    detail::layernorm_backward(d_ln2, bc.ln2_xhat, bc.ln2_rstd, blk.ln2_w,
                               gblk.ln2_w, gblk.ln2_b, dtmp);
    Mat dx_mid = dx + dtmp;

    // x_mid = x_in + proj(attn(ln1(x_in)))
    detail::as_matrix_mut(gblk.proj_w).noalias() += dx_mid.transpose() * bc.att_concat;
    detail::as_row_mut(gblk.proj_b) += dx_mid.colwise().sum();
    Mat d_att = dx_mid * detail::as_matrix(blk.proj_w);

    Mat d_qkv = Mat::Zero(T, 3 * d);
    for (Eigen::Index hI = 0; hI < H; ++hI) {
      const auto Q = bc.qkv.block(0, hI * hd, T, hd);
      const auto K = bc.qkv.block(0, d + hI * hd, T, hd);
      const auto V = bc.qkv.block(0, 2 * d + hI * hd, T, hd);
      const Mat& probs = bc.att_probs[static_cast<std::size_t>(hI)];
      const auto d_o = d_att.block(0, hI * hd, T, hd);

      // probs is exactly zero above the diagonal, so full-matrix products
      // below reproduce the masked computation.
      Mat d_probs = d_o * V.transpose();
      d_qkv.block(0, 2 * d + hI * hd, T, hd).noalias() = probs.transpose() * d_o;
      const VecX<S> row_dot =
          (d_probs.cwiseProduct(probs)).rowwise().sum();
      Mat d_scores =
          probs.cwiseProduct(d_probs.colwise() - row_dot);
      d_qkv.block(0, hI * hd, T, hd).noalias() =
          (d_scores * K) * inv_sqrt_hd;
      d_qkv.block(0, d + hI * hd, T, hd).noalias() =
          (d_scores.transpose() * Q) * inv_sqrt_hd;
    }

    detail::as_matrix_mut(gblk.qkv_w).noalias() += d_qkv.transpose() * bc.ln1;
    detail::as_row_mut(gblk.qkv_b) += d_qkv.colwise().sum();
    Mat d_ln1 = d_qkv * detail::as_matrix(blk.qkv_w);
    detail::layernorm_backward(d_ln1, bc.ln1_xhat, bc.ln1_rstd, blk.ln1_w,
                               gblk.ln1_w, gblk.ln1_b, dtmp);
    dx = dx_mid + dtmp;
  }

  // embedding
  detail::as_matrix_mut(grads.pos).topRows(T) += dx;
  detail::as_matrix_mut(grads.in_w).noalias() += dx.transpose() * cache.tokens;
  detail::as_row_mut(grads.in_b) += dx.colwise().sum();
}

struct BatchSample {
  RowMat<double> tokens;   // T x (n_u + n_y), standardized
  RowMat<double> targets;  // T x n_x, standardized noiseless states
};

// Mean over the batch of the summed-over-time squared estimation error.
inline double loss(const ModelWeights& w, const ModelConfig& cfg,
                   const std::vector<BatchSample>& batch) {
  if (batch.empty()) throw std::invalid_argument("loss: empty batch");
  double total = 0.0;
  for (const BatchSample& s : batch) {
    if (s.tokens.rows() != s.targets.rows()) {
      throw std::invalid_argument("loss: token/target length mismatch");
    }
    const RowMat<double> pred = forward(w, cfg, s.tokens);
    total += (pred - s.targets).squaredNorm();
  }
  return total / static_cast<double>(batch.size());
}

// Loss plus gradient for one sequence, unscaled (summed squared error over
// time). Gradients accumulate into `grads`.
inline double sequence_backward(const ModelWeights& w, const ModelConfig& cfg,
                                const RowMat<double>& tokens,
                                const RowMat<double>& targets,
                                ModelWeights& grads) {
  if (tokens.rows() != targets.rows()) {
    throw std::invalid_argument("sequence_backward: length mismatch");
  }
  ForwardCache<double> cache;
  const RowMat<double> pred = forward(w, cfg, tokens, &cache);
  const RowMat<double> resid = pred - targets;
  backward(w, cfg, cache, RowMat<double>(2.0 * resid), grads);
  return resid.squaredNorm();
}

struct LossAndGrads {
  double loss = 0.0;
  ModelWeights grads;
};

// Exact reverse-mode gradient of `loss` with respect to every weight tensor.
inline LossAndGrads backward(const ModelWeights& w, const ModelConfig& cfg,
                             const std::vector<BatchSample>& batch) {
  if (batch.empty()) throw std::invalid_argument("backward: empty batch");
  LossAndGrads out;
  out.grads = make_weights<double>(cfg);
  for (const BatchSample& s : batch) {
    out.loss += sequence_backward(w, cfg, s.tokens, s.targets, out.grads);
  }
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  out.loss *= inv_b;
  for_each_tensor(out.grads, [&](const std::string&, Tensor& t) {
    for (double& v : t.data) v *= inv_b;
  });
  return out;
}

// Sliding-window deployment: at time t the filter digests the most recent
// min(t+1, n_ctx) tokens and the estimate is read from the last row. For
// t < n_ctx this reproduces the full-prefix forward pass exactly.
template <class S = double>
class StreamingEstimator {
 public:
  StreamingEstimator(std::shared_ptr<const ModelWeightsT<S>> weights,
                     ModelConfig cfg, Standardizer std)
      : w_(std::move(weights)), cfg_(cfg), std_(std) {
    cfg_.validate();
    std_.validate();
    if (cfg_.n_u != 2 || cfg_.n_y != 1 || cfg_.n_x != 2) {
      throw std::invalid_argument(
          "StreamingEstimator: expects the plant's (n_u, n_y, n_x) = (2, 1, 2)");
    }
  }

  StreamingEstimator(ModelWeightsT<S> weights, ModelConfig cfg, Standardizer std)
      : StreamingEstimator(
            std::make_shared<const ModelWeightsT<S>>(std::move(weights)), cfg,
            std) {}

  SimState push(const SimInput& u, double y) {
    const auto tok = std_.standardize_token(u, y);
    if (static_cast<int>(window_.size()) == cfg_.n_ctx) window_.pop_front();
    window_.push_back({S(tok[0]), S(tok[1]), S(tok[2])});

    const Eigen::Index T = static_cast<Eigen::Index>(window_.size());
    RowMat<S> tokens(T, 3);
    for (Eigen::Index t = 0; t < T; ++t) {
      tokens(t, 0) = window_[static_cast<std::size_t>(t)][0];
      tokens(t, 1) = window_[static_cast<std::size_t>(t)][1];
      tokens(t, 2) = window_[static_cast<std::size_t>(t)][2];
    }
    const RowMat<S> out = forward(*w_, cfg_, tokens);
    const SimState z{static_cast<double>(out(T - 1, 0)),
                     static_cast<double>(out(T - 1, 1))};
    return std_.destandardize_state(z);
  }

  void reset() { window_.clear(); }

  const ModelConfig& config() const { return cfg_; }
  const Standardizer& standardizer() const { return std_; }

 private:
  std::shared_ptr<const ModelWeightsT<S>> w_;
  ModelConfig cfg_;
  Standardizer std_;
  std::deque<std::array<S, 3>> window_;
};

// Whole-sequence deployment for T <= n_ctx: one forward pass, every row is
// the estimate for its own time step.
template <class S = double>
std::vector<SimState> batch_estimate(const ModelWeightsT<S>& w,
                                     const ModelConfig& cfg,
                                     const Standardizer& std_,
                                     const std::vector<SimInput>& inputs,
                                     const std::vector<double>& outputs) {
  if (inputs.size() != outputs.size()) {
    throw std::invalid_argument("batch_estimate: input/output length mismatch");
  }
  if (cfg.n_u != 2 || cfg.n_y != 1 || cfg.n_x != 2) {
    throw std::invalid_argument(
        "batch_estimate: expects the plant's (n_u, n_y, n_x) = (2, 1, 2)");
  }
  const Eigen::Index T = static_cast<Eigen::Index>(inputs.size());
  if (T > cfg.n_ctx) {
    throw std::invalid_argument(
        "batch_estimate: sequence longer than n_ctx; use streaming");
  }
  RowMat<S> tokens(T, 3);
  for (Eigen::Index t = 0; t < T; ++t) {
    const auto tok = std_.standardize_token(inputs[static_cast<std::size_t>(t)],
                                            outputs[static_cast<std::size_t>(t)]);
    tokens(t, 0) = S(tok[0]);
    tokens(t, 1) = S(tok[1]);
    tokens(t, 2) = S(tok[2]);
  }
  const RowMat<S> out = forward(w, cfg, tokens);
  std::vector<SimState> estimates(static_cast<std::size_t>(T));
  for (Eigen::Index t = 0; t < T; ++t) {
    estimates[static_cast<std::size_t>(t)] = std_.destandardize_state(
        SimState{static_cast<double>(out(t, 0)), static_cast<double>(out(t, 1))});
  }
  return estimates;
}

}  // namespace icse
