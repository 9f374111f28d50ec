#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "lenlab/common.hpp"
#include "lenlab/tensor.hpp"

// The four positional-encoding schemes as interchangeable strategies.
// Sinusoidal injects at the input embeddings; the other three act inside
// every attention block, either by rotating q/k (rotary, xPOS) or by adding
// a per-head bias grid to the scores (ALiBi, learned relative bias).

namespace lenlab {

enum class PosKind { Sinusoidal, XPos, ALiBi, T5Bias };
enum class Injection { InputEmbeddings, AttentionBlocks };
enum class BiasMode { Causal, Bidirectional };

inline Injection injection_point(PosKind kind) {
  return kind == PosKind::Sinusoidal ? Injection::InputEmbeddings
                                     : Injection::AttentionBlocks;
}

inline std::string pos_kind_name(PosKind kind) {
  switch (kind) {
    case PosKind::Sinusoidal: return "sinusoidal";
    case PosKind::XPos: return "xpos";
    case PosKind::ALiBi: return "alibi";
    case PosKind::T5Bias: return "t5";
  }
  throw ConfigError("unknown positional kind");
}

inline PosKind pos_kind_from_name(const std::string& name) {
  if (name == "sinusoidal") return PosKind::Sinusoidal;
  if (name == "xpos") return PosKind::XPos;
  if (name == "alibi") return PosKind::ALiBi;
  if (name == "t5") return PosKind::T5Bias;
  throw ConfigError("unknown positional scheme '" + name +
                    "' (expected sinusoidal|xpos|alibi|t5)");
}

struct PositionalScheme {
  PosKind kind = PosKind::Sinusoidal;
  double rotary_theta_base = 10000.0;
  int t5_num_buckets = 32;
  int t5_max_distance = 128;
  double xpos_gamma = 0.4;
  double xpos_scale_base = 512.0;
  bool cross_attention_bias = false;

  void validate() const {
    if (rotary_theta_base <= 1.0)
      throw ConfigError("posenc: rotary_theta_base must exceed 1");
    if (t5_num_buckets < 4) throw ConfigError("posenc: t5_num_buckets >= 4");
    if (t5_max_distance <= t5_num_buckets / 2)
      throw ConfigError("posenc: t5_max_distance must exceed t5_num_buckets/2");
    if (xpos_gamma <= 0.0) throw ConfigError("posenc: xpos_gamma must be positive");
    if (xpos_scale_base <= 0.0)
      throw ConfigError("posenc: xpos_scale_base must be positive");
  }
};

// Per-head [len_q, len_k] additive score grids. Heads are separate tensors so
// a learned table's gradients can flow per head.
template <class S>
struct AttentionBiasT {
  std::size_t n_heads = 0, len_q = 0, len_k = 0;
  bool causal = false;
  std::vector<TensorT<S>> per_head;

  S at(std::size_t h, std::size_t i, std::size_t j) const {
    return per_head.at(h).at(i, j);
  }
};

// ---------------------------------------------------------------------------
// Sinusoidal table: entry[pos][2i] = sin(pos / base^(2i/d)), entry[pos][2i+1]
// the matching cosine. Added to token embeddings before the first block.
// ---------------------------------------------------------------------------

template <class S>
TensorT<S> sinusoidal_table(std::size_t max_len, std::size_t d_model,
                            double base = 10000.0) {
  if (d_model == 0 || d_model % 2 != 0)
    throw ConfigError("sinusoidal_table: d_model must be positive and even, got " +
                      std::to_string(d_model));
  if (max_len == 0) throw ConfigError("sinusoidal_table: max_len must be positive");
  std::vector<S> v(max_len * d_model);
  for (std::size_t pos = 0; pos < max_len; ++pos)
    for (std::size_t i = 0; i < d_model / 2; ++i) {
      double freq = std::pow(base, -2.0 * double(i) / double(d_model));
      double ang = double(pos) * freq;
      v[pos * d_model + 2 * i] = S(std::sin(ang));
      v[pos * d_model + 2 * i + 1] = S(std::cos(ang));
    }
  return TensorT<S>::from({max_len, d_model}, std::move(v));
}

// ---------------------------------------------------------------------------
// Rotary / xPOS, thin wrappers over the differentiable rope op.
// ---------------------------------------------------------------------------

template <class S>
TensorT<S> rotary_apply(const TensorT<S>& qk, const std::vector<int>& positions,
                        double theta_base = 10000.0, std::size_t head_dim = 0) {
  if (head_dim == 0) head_dim = qk.cols();
  return rope(qk, positions, head_dim, theta_base, 0);
}

template <class S>
TensorT<S> xpos_apply(const TensorT<S>& qk, const std::vector<int>& positions,
                      bool is_query, double gamma = 0.4,
                      double theta_base = 10000.0, double scale_base = 512.0,
                      std::size_t head_dim = 0) {
  if (gamma <= 0.0) throw ConfigError("xpos_apply: gamma must be positive");
  if (head_dim == 0) head_dim = qk.cols();
  return rope(qk, positions, head_dim, theta_base, is_query ? +1 : -1, gamma,
              scale_base);
}

// Per-pair decay bases zeta_i = ((2i/head_dim) + gamma) / (1 + gamma).
inline std::vector<double> xpos_zetas(std::size_t head_dim, double gamma) {
  if (head_dim == 0 || head_dim % 2 != 0)
    throw ConfigError("xpos_zetas: head_dim must be positive and even");
  if (gamma <= 0.0) throw ConfigError("xpos_zetas: gamma must be positive");
  std::vector<double> z(head_dim / 2);
  for (std::size_t i = 0; i < z.size(); ++i)
    z[i] = ((2.0 * double(i) / double(head_dim)) + gamma) / (1.0 + gamma);
  return z;
}

// The scalar decay envelope at distance d: product over pairs of
// zeta_i^(d/scale_base). Strictly decreasing in d.
inline double xpos_envelope(std::size_t head_dim, double gamma, double distance,
                            double scale_base = 512.0) {
  double env = 1.0;
  for (double z : xpos_zetas(head_dim, gamma))
    env *= std::pow(z, distance / scale_base);
  return env;
}

// ---------------------------------------------------------------------------
// ALiBi: geometric head slopes starting at 2^(-8/n_heads), static linear
// distance penalty added to scores.
// ---------------------------------------------------------------------------

inline std::vector<double> alibi_slopes(int n_heads) {
  if (n_heads < 1) throw ConfigError("alibi_slopes: n_heads must be >= 1");
  double ratio = std::pow(2.0, -8.0 / double(n_heads));
  std::vector<double> slopes(static_cast<std::size_t>(n_heads));
  double cur = 1.0;
  for (int h = 0; h < n_heads; ++h) {
    cur *= ratio;
    slopes[std::size_t(h)] = cur;
  }
  return slopes;
}

// Causal mode: bias[h][i][j] = slope_h * (j - i) for j <= i, zero above the
// diagonal (those entries are removed by the causal mask anyway).
// Bidirectional mode: symmetric -slope_h * |j - i|.
template <class S>
AttentionBiasT<S> alibi_bias(std::size_t len_q, std::size_t len_k, int n_heads,
                             BiasMode mode) {
  if (len_q < 1 || len_k < 1) throw ConfigError("alibi_bias: lengths must be >= 1");
  auto slopes = alibi_slopes(n_heads);
  AttentionBiasT<S> out;
  out.n_heads = std::size_t(n_heads);
  out.len_q = len_q;
  out.len_k = len_k;
  out.causal = (mode == BiasMode::Causal);
  for (int h = 0; h < n_heads; ++h) {
    std::vector<S> v(len_q * len_k, S(0));
    for (std::size_t i = 0; i < len_q; ++i)
      for (std::size_t j = 0; j < len_k; ++j) {
        double rel = double(j) - double(i);
        if (mode == BiasMode::Causal) {
          if (rel <= 0.0) v[i * len_k + j] = S(slopes[std::size_t(h)] * rel);
        } else {
          v[i * len_k + j] = S(-slopes[std::size_t(h)] * std::fabs(rel));
        }
      }
    out.per_head.push_back(TensorT<S>::from({len_q, len_k}, std::move(v)));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Learned relative bias with the reference bucketing: exact buckets for
// small distances, logarithmic buckets up to max_distance, one shared
// terminal bucket past it. Bidirectional splits the bucket budget by sign;
// unidirectional buckets only non-positive relative positions.
// ---------------------------------------------------------------------------

inline int t5_bucket(int relative_position, bool bidirectional, int num_buckets,
                     int max_distance) {
  if (num_buckets < 4) throw ConfigError("t5_bucket: num_buckets must be >= 4");
  if (max_distance <= num_buckets / 2)
    throw ConfigError("t5_bucket: max_distance must exceed num_buckets/2");
  int bucket = 0;
  int n = num_buckets;
  int rp = relative_position;
  if (bidirectional) {
    n /= 2;
    if (rp > 0) bucket += n;
    rp = std::abs(rp);
  } else {
    rp = rp < 0 ? -rp : 0;
  }
  int max_exact = n / 2;
  if (rp < max_exact) return bucket + rp;
  double large = double(max_exact) +
                 std::log(double(rp) / double(max_exact)) /
                     std::log(double(max_distance) / double(max_exact)) *
                     double(n - max_exact);
  int idx = int(large);
  if (idx > n - 1) idx = n - 1;
  return bucket + idx;
}

// Bucket ids for a [len_q, len_k] grid of relative positions
// (j + k_offset) - (i + q_offset).
inline std::vector<int> t5_bucket_grid(std::size_t len_q, std::size_t len_k,
                                       bool bidirectional, int num_buckets,
                                       int max_distance, int q_offset = 0,
                                       int k_offset = 0) {
  std::vector<int> grid(len_q * len_k);
  for (std::size_t i = 0; i < len_q; ++i)
    for (std::size_t j = 0; j < len_k; ++j) {
      int rel = (int(j) + k_offset) - (int(i) + q_offset);
      grid[i * len_k + j] = t5_bucket(rel, bidirectional, num_buckets, max_distance);
    }
  return grid;
}

template <class S>
AttentionBiasT<S> t5_bias(std::size_t len_q, std::size_t len_k,
                          const TensorT<S>& bias_table, BiasMode mode,
                          int max_distance = 128, int q_offset = 0,
                          int k_offset = 0) {
  if (bias_table.ndim() != 2)
    throw ShapeError("t5_bias: table must be [num_buckets, n_heads]");
  int num_buckets = int(bias_table.rows());
  std::size_t n_heads = bias_table.cols();
  auto grid = t5_bucket_grid(len_q, len_k, mode == BiasMode::Bidirectional,
                             num_buckets, max_distance, q_offset, k_offset);
  AttentionBiasT<S> out;
  out.n_heads = n_heads;
  out.len_q = len_q;
  out.len_k = len_k;
  out.causal = (mode == BiasMode::Causal);
  for (std::size_t h = 0; h < n_heads; ++h)
    out.per_head.push_back(bucket_gather(bias_table, grid, h, len_q, len_k));
  return out;
}

}  // namespace lenlab
