#pragma once

#include <cmath>
#include <cstring>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "lenlab/common.hpp"
#include "lenlab/posenc.hpp"
#include "lenlab/tensor.hpp"
#include "lenlab/tokenizer.hpp"

// Encoder-decoder transformer with post-norm blocks, a shared embedding
// matrix, and pluggable positional schemes. Decoder attention runs at
// dec_heads * head_dim (384 for the default config) with a projection back
// to d_model. All forward passes are single-threaded and deterministic.

namespace lenlab {

struct ModelConfig {
  int d_model = 512;
  int enc_layers = 6;
  int enc_heads = 8;
  int dec_layers = 8;
  int dec_heads = 6;
  int enc_max_len = 1024;
  int dec_max_len = 128;
  int head_dim = 64;
  int ffn_mult = 4;
  int vocab_size = 0;
  PositionalScheme scheme;
  double dropout = 0.0;
  bool tie_output = false;

  void validate() const {
    if (d_model < 1 || enc_layers < 1 || dec_layers < 1 || enc_heads < 1 ||
        dec_heads < 1 || head_dim < 1 || ffn_mult < 1 || enc_max_len < 1 ||
        dec_max_len < 1)
      throw ConfigError("ModelConfig: all dimensions must be positive");
    if (vocab_size <= int(default_specials().size()))
      throw ConfigError("ModelConfig: vocab_size " + std::to_string(vocab_size) +
                        " must exceed the " +
                        std::to_string(default_specials().size()) +
                        " special tokens");
    if (dropout < 0.0 || dropout >= 1.0)
      throw ConfigError("ModelConfig: dropout must be in [0, 1)");
    if (scheme.kind == PosKind::XPos && head_dim % 2 != 0)
      throw ConfigError("ModelConfig: rotary schemes need an even head_dim");
    scheme.validate();
  }
};

inline nlohmann::json scheme_to_json(const PositionalScheme& s) {
  return {{"kind", pos_kind_name(s.kind)},
          {"rotary_theta_base", s.rotary_theta_base},
          {"t5_num_buckets", s.t5_num_buckets},
          {"t5_max_distance", s.t5_max_distance},
          {"xpos_gamma", s.xpos_gamma},
          {"xpos_scale_base", s.xpos_scale_base},
          {"cross_attention_bias", s.cross_attention_bias}};
}

inline PositionalScheme scheme_from_json(const nlohmann::json& j) {
  PositionalScheme s;
  s.kind = pos_kind_from_name(j.at("kind").get<std::string>());
  s.rotary_theta_base = j.value("rotary_theta_base", s.rotary_theta_base);
  s.t5_num_buckets = j.value("t5_num_buckets", s.t5_num_buckets);
  s.t5_max_distance = j.value("t5_max_distance", s.t5_max_distance);
  s.xpos_gamma = j.value("xpos_gamma", s.xpos_gamma);
  s.xpos_scale_base = j.value("xpos_scale_base", s.xpos_scale_base);
  s.cross_attention_bias = j.value("cross_attention_bias", s.cross_attention_bias);
  return s;
}

inline nlohmann::json config_to_json(const ModelConfig& c) {
  return {{"d_model", c.d_model},       {"enc_layers", c.enc_layers},
          {"enc_heads", c.enc_heads},   {"dec_layers", c.dec_layers},
          {"dec_heads", c.dec_heads},   {"enc_max_len", c.enc_max_len},
          {"dec_max_len", c.dec_max_len}, {"head_dim", c.head_dim},
          {"ffn_mult", c.ffn_mult},     {"vocab_size", c.vocab_size},
          {"dropout", c.dropout},       {"tie_output", c.tie_output},
          {"scheme", scheme_to_json(c.scheme)}};
}

inline ModelConfig config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.d_model = j.value("d_model", c.d_model);
  c.enc_layers = j.value("enc_layers", c.enc_layers);
  c.enc_heads = j.value("enc_heads", c.enc_heads);
  c.dec_layers = j.value("dec_layers", c.dec_layers);
  c.dec_heads = j.value("dec_heads", c.dec_heads);
  c.enc_max_len = j.value("enc_max_len", c.enc_max_len);
  c.dec_max_len = j.value("dec_max_len", c.dec_max_len);
  c.head_dim = j.value("head_dim", c.head_dim);
  c.ffn_mult = j.value("ffn_mult", c.ffn_mult);
  c.vocab_size = j.at("vocab_size").get<int>();
  c.dropout = j.value("dropout", c.dropout);
  c.tie_output = j.value("tie_output", c.tie_output);
  if (j.contains("scheme")) c.scheme = scheme_from_json(j.at("scheme"));
  return c;
}

template <typename S>
struct LinearT {
  TensorT<S> w;  // [in, out]
  TensorT<S> b;  // [1, out]
  TensorT<S> apply(const TensorT<S>& x) const {
    return add_rowvec(matmul(x, w), b);
  }
};

template <typename S>
struct AttnParamsT {
  LinearT<S> q, k, v, o;
};

template <typename S>
struct EncBlockT {
  AttnParamsT<S> attn;
  TensorT<S> ln1_g, ln1_b, ln2_g, ln2_b;
  LinearT<S> ffn1, ffn2;
};

template <typename S>
struct DecBlockT {
  AttnParamsT<S> self_attn, cross_attn;
  TensorT<S> ln1_g, ln1_b, ln2_g, ln2_b, ln3_g, ln3_b;
  LinearT<S> ffn1, ffn2;
};

template <typename S>
struct EncodedT {
  TensorT<S> z;
  std::vector<std::uint8_t> key_keep;  // 1 where the source token is real
  std::vector<int> positions;
};

namespace modeldetail {

template <typename S>
TensorT<S> table_rows(const TensorT<S>& table, std::size_t rows) {
  std::size_t d = table.cols();
  std::vector<S> v(table.data().begin(), table.data().begin() + rows * d);
  return TensorT<S>::from({rows, d}, std::move(v));
}

}  // namespace modeldetail

template <typename S>
class ModelT {
 public:
  ModelConfig cfg;
  TensorT<S> embed;            // [vocab, d_model], shared encoder/decoder
  TensorT<S> out_w, out_b;     // output projection (out_w unused when tied)
  std::vector<EncBlockT<S>> enc;
  std::vector<DecBlockT<S>> dec;
  TensorT<S> t5_enc, t5_dec;   // [num_buckets, heads] bias tables (T5 only)
  TensorT<S> sin_enc, sin_dec; // constant sinusoidal tables (sinusoidal only)

  std::vector<std::pair<std::string, TensorT<S>>> named_parameters() const {
    std::vector<std::pair<std::string, TensorT<S>>> out;
    out.emplace_back("embed", embed);
    auto add_linear = [&](const std::string& p, const LinearT<S>& l) {
      out.emplace_back(p + ".w", l.w);
      out.emplace_back(p + ".b", l.b);
    };
    auto add_attn = [&](const std::string& p, const AttnParamsT<S>& a) {
      add_linear(p + ".q", a.q);
      add_linear(p + ".k", a.k);
      add_linear(p + ".v", a.v);
      add_linear(p + ".o", a.o);
    };
    for (std::size_t i = 0; i < enc.size(); ++i) {
      std::string p = "enc." + std::to_string(i);
      add_attn(p + ".attn", enc[i].attn);
      out.emplace_back(p + ".ln1.g", enc[i].ln1_g);
      out.emplace_back(p + ".ln1.b", enc[i].ln1_b);
      add_linear(p + ".ffn1", enc[i].ffn1);
      add_linear(p + ".ffn2", enc[i].ffn2);
      out.emplace_back(p + ".ln2.g", enc[i].ln2_g);
      out.emplace_back(p + ".ln2.b", enc[i].ln2_b);
    }
    for (std::size_t i = 0; i < dec.size(); ++i) {
      std::string p = "dec." + std::to_string(i);
      add_attn(p + ".self", dec[i].self_attn);
      out.emplace_back(p + ".ln1.g", dec[i].ln1_g);
      out.emplace_back(p + ".ln1.b", dec[i].ln1_b);
      add_attn(p + ".cross", dec[i].cross_attn);
      out.emplace_back(p + ".ln2.g", dec[i].ln2_g);
      out.emplace_back(p + ".ln2.b", dec[i].ln2_b);
      add_linear(p + ".ffn1", dec[i].ffn1);
      add_linear(p + ".ffn2", dec[i].ffn2);
      out.emplace_back(p + ".ln3.g", dec[i].ln3_g);
      out.emplace_back(p + ".ln3.b", dec[i].ln3_b);
    }
    if (cfg.scheme.kind == PosKind::T5Bias) {
      out.emplace_back("t5.enc", t5_enc);
      out.emplace_back("t5.dec", t5_dec);
    }
    if (!cfg.tie_output) out.emplace_back("out.w", out_w);
    out.emplace_back("out.b", out_b);
    return out;
  }

  std::vector<TensorT<S>> parameters() const {
    std::vector<TensorT<S>> out;
    for (auto& [name, t] : named_parameters()) out.push_back(t);
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (auto& [name, t] : named_parameters()) n += t.numel();
    return n;
  }

  void zero_grads() const {
    for (auto& t : parameters()) t.zero_grad();
  }

  EncodedT<S> encode(const std::vector<int>& src, Rng* drop = nullptr) const {
    if (src.empty()) throw ContractError("encode: empty input");
    if (int(src.size()) > cfg.enc_max_len)
      throw ContractError("encode: input length " + std::to_string(src.size()) +
                          " exceeds enc_max_len " +
                          std::to_string(cfg.enc_max_len));
    std::size_t len = src.size();
    EncodedT<S> out;
    out.positions.resize(len);
    out.key_keep.resize(len);
    for (std::size_t i = 0; i < len; ++i) {
      out.positions[i] = int(i);
      out.key_keep[i] = src[i] != Bpe::kPad;
    }
    bool any_real = false;
    for (auto k : out.key_keep) any_real = any_real || k;
    if (!any_real) throw ContractError("encode: all-pad input");

    TensorT<S> x = embedding(embed, src, std::sqrt(double(cfg.d_model)));
    if (cfg.scheme.kind == PosKind::Sinusoidal)
      x = add(x, modeldetail::table_rows(sin_enc, len));
    x = maybe_drop(x, drop);

    AttentionBiasT<S> bias;
    bool use_bias = build_bias(bias, len, len, true, nullptr);
    for (const auto& block : enc) {
      TensorT<S> a = attention(block.attn, x, x, cfg.enc_heads, out.positions,
                               out.positions, use_bias ? &bias : nullptr,
                               &out.key_keep, false, true);
      x = layer_norm(add(x, maybe_drop(a, drop)), block.ln1_g, block.ln1_b);
      TensorT<S> f = block.ffn2.apply(relu(block.ffn1.apply(x)));
      x = layer_norm(add(x, maybe_drop(f, drop)), block.ln2_g, block.ln2_b);
    }
    out.z = x;
    return out;
  }

  TensorT<S> decode_logits(const EncodedT<S>& encoded,
                           const std::vector<int>& tgt_prefix,
                           Rng* drop = nullptr) const {
    if (tgt_prefix.empty()) throw ContractError("decode_logits: empty prefix");
    if (int(tgt_prefix.size()) > cfg.dec_max_len)
      throw ContractError("decode_logits: prefix length " +
                          std::to_string(tgt_prefix.size()) +
                          " exceeds dec_max_len " +
                          std::to_string(cfg.dec_max_len));
    std::size_t len = tgt_prefix.size();
    std::vector<int> positions(len);
    for (std::size_t i = 0; i < len; ++i) positions[i] = int(i);

    TensorT<S> y = embedding(embed, tgt_prefix, std::sqrt(double(cfg.d_model)));
    if (cfg.scheme.kind == PosKind::Sinusoidal)
      y = add(y, modeldetail::table_rows(sin_dec, len));
    y = maybe_drop(y, drop);

    AttentionBiasT<S> self_bias, cross_bias;
    bool use_self = build_bias(self_bias, len, len, false, nullptr);
    bool use_cross =
        cfg.scheme.cross_attention_bias &&
        build_bias(cross_bias, len, encoded.z.rows(), false, &encoded);
    for (const auto& block : dec) {
      TensorT<S> a =
          attention(block.self_attn, y, y, cfg.dec_heads, positions, positions,
                    use_self ? &self_bias : nullptr, nullptr, true, true);
      y = layer_norm(add(y, maybe_drop(a, drop)), block.ln1_g, block.ln1_b);
      TensorT<S> c = attention(
          block.cross_attn, y, encoded.z, cfg.dec_heads, positions,
          encoded.positions, use_cross ? &cross_bias : nullptr,
          &encoded.key_keep, false, cfg.scheme.cross_attention_bias);
      y = layer_norm(add(y, maybe_drop(c, drop)), block.ln2_g, block.ln2_b);
      TensorT<S> f = block.ffn2.apply(relu(block.ffn1.apply(y)));
      y = layer_norm(add(y, maybe_drop(f, drop)), block.ln3_g, block.ln3_b);
    }
    TensorT<S> logits = cfg.tie_output ? matmul_nt(y, embed) : matmul(y, out_w);
    return add_rowvec(logits, out_b);
  }

  // Mean token cross-entropy over the batch, teacher forced with a leading
  // pad as the start symbol. Targets must end with EOS and contain no pad.
  TensorT<S> loss(const std::vector<std::pair<std::vector<int>, std::vector<int>>>& batch,
                  Rng* drop = nullptr) const {
    if (batch.empty()) throw ContractError("loss: empty batch");
    TensorT<S> total;
    std::size_t tokens = 0;
    for (const auto& [src, tgt] : batch) {
      if (tgt.empty() || tgt.back() != Bpe::kEos)
        throw ContractError("loss: target must end with EOS");
      for (int id : tgt)
        if (id == Bpe::kPad)
          throw ContractError("loss: target contains pad");
      std::vector<int> dec_in(tgt.size());
      dec_in[0] = Bpe::kPad;
      for (std::size_t i = 1; i < tgt.size(); ++i) dec_in[i] = tgt[i - 1];
      EncodedT<S> encoded = encode(src, drop);
      TensorT<S> logits = decode_logits(encoded, dec_in, drop);
      TensorT<S> ce = cross_entropy_sum(logits, tgt);
      total = total.defined() ? add(total, ce) : ce;
      tokens += tgt.size();
    }
    return scale(total, 1.0 / double(tokens));
  }

 private:
  TensorT<S> maybe_drop(const TensorT<S>& x, Rng* drop) const {
    if (drop == nullptr || cfg.dropout <= 0.0) return x;
    return dropout(x, cfg.dropout, *drop);
  }

  // Fills `bias` for score-additive schemes; false means no bias is used.
  // Cross-attention reuses the decoder T5 table with bidirectional buckets.
  bool build_bias(AttentionBiasT<S>& bias, std::size_t len_q, std::size_t len_k,
                  bool encoder_side, const EncodedT<S>* cross) const {
    BiasMode mode = (encoder_side || cross) ? BiasMode::Bidirectional
                                            : BiasMode::Causal;
    int heads = encoder_side ? cfg.enc_heads : cfg.dec_heads;
    if (cfg.scheme.kind == PosKind::ALiBi) {
      bias = alibi_bias<S>(len_q, len_k, heads, mode);
      return true;
    }
    if (cfg.scheme.kind == PosKind::T5Bias) {
      bias = t5_bias(len_q, len_k, encoder_side ? t5_enc : t5_dec, mode,
                     cfg.scheme.t5_max_distance);
      return true;
    }
    return false;
  }

  TensorT<S> attention(const AttnParamsT<S>& p, const TensorT<S>& xq,
                       const TensorT<S>& xkv, int n_heads,
                       const std::vector<int>& q_pos,
                       const std::vector<int>& k_pos,
                       const AttentionBiasT<S>* bias,
                       const std::vector<std::uint8_t>* key_keep, bool causal,
                       bool rotate) const {
    TensorT<S> Q = p.q.apply(xq), K = p.k.apply(xkv), V = p.v.apply(xkv);
    std::size_t tq = xq.rows(), tk = xkv.rows();
    std::vector<std::uint8_t> keep;
    bool need_mask = causal || key_keep != nullptr;
    if (need_mask) {
      keep.assign(tq * tk, 1);
      for (std::size_t i = 0; i < tq; ++i)
        for (std::size_t j = 0; j < tk; ++j)
          keep[i * tk + j] = (!causal || j <= i) &&
                             (key_keep == nullptr || (*key_keep)[j]);
    }
    rotate = rotate && cfg.scheme.kind == PosKind::XPos;
    std::size_t hd = std::size_t(cfg.head_dim);
    std::vector<TensorT<S>> heads;
    for (int h = 0; h < n_heads; ++h) {
      TensorT<S> q = slice_cols(Q, h * hd, (h + 1) * hd);
      TensorT<S> k = slice_cols(K, h * hd, (h + 1) * hd);
      TensorT<S> v = slice_cols(V, h * hd, (h + 1) * hd);
      if (rotate) {
        q = xpos_apply(q, q_pos, true, cfg.scheme.xpos_gamma,
                       cfg.scheme.rotary_theta_base, cfg.scheme.xpos_scale_base);
        k = xpos_apply(k, k_pos, false, cfg.scheme.xpos_gamma,
                       cfg.scheme.rotary_theta_base, cfg.scheme.xpos_scale_base);
      }
      TensorT<S> scores =
          scale(matmul_nt(q, k), 1.0 / std::sqrt(double(cfg.head_dim)));
      const TensorT<S>* b = bias ? &bias->per_head[std::size_t(h)] : nullptr;
      TensorT<S> probs =
          softmax_lastdim(scores, b, need_mask ? &keep : nullptr);
      heads.push_back(matmul(probs, v));
    }
    return p.o.apply(concat_cols(heads));
  }
};

using Model = ModelT<float>;

// ---------------------------------------------------------------------------
// Construction.
// ---------------------------------------------------------------------------

namespace modeldetail {

template <typename S>
TensorT<S> uniform_param(Rng& rng, std::vector<std::size_t> shape,
                         std::size_t fan_in, const std::string& name) {
  double bound = 1.0 / std::sqrt(double(fan_in));
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  std::vector<S> v(n);
  for (auto& x : v) x = S(rng.uniform(-bound, bound));
  return TensorT<S>::param(std::move(shape), std::move(v), name);
}

template <typename S>
TensorT<S> const_param(std::vector<std::size_t> shape, S value,
                       const std::string& name) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return TensorT<S>::param(std::move(shape), std::vector<S>(n, value), name);
}

template <typename S>
LinearT<S> make_linear(Rng& rng, std::size_t in, std::size_t out,
                       const std::string& name) {
  LinearT<S> l;
  l.w = uniform_param<S>(rng, {in, out}, in, name + ".w");
  l.b = const_param<S>({1, out}, S(0), name + ".b");
  return l;
}

template <typename S>
AttnParamsT<S> make_attn(Rng& rng, std::size_t d, std::size_t width,
                         const std::string& name) {
  AttnParamsT<S> a;
  a.q = make_linear<S>(rng, d, width, name + ".q");
  a.k = make_linear<S>(rng, d, width, name + ".k");
  a.v = make_linear<S>(rng, d, width, name + ".v");
  a.o = make_linear<S>(rng, width, d, name + ".o");
  return a;
}

}  // namespace modeldetail

template <typename S>
ModelT<S> build_model_t(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  using namespace modeldetail;
  ModelT<S> m;
  m.cfg = cfg;
  Rng rng(derive_seed(seed, "model"));
  std::size_t d = std::size_t(cfg.d_model);
  std::size_t v = std::size_t(cfg.vocab_size);
  std::size_t hidden = d * std::size_t(cfg.ffn_mult);

  m.embed = uniform_param<S>(rng, {v, d}, d, "embed");
  for (int i = 0; i < cfg.enc_layers; ++i) {
    std::string p = "enc." + std::to_string(i);
    EncBlockT<S> b;
    std::size_t width = std::size_t(cfg.enc_heads) * std::size_t(cfg.head_dim);
    b.attn = make_attn<S>(rng, d, width, p + ".attn");
    b.ln1_g = const_param<S>({1, d}, S(1), p + ".ln1.g");
    b.ln1_b = const_param<S>({1, d}, S(0), p + ".ln1.b");
    b.ffn1 = make_linear<S>(rng, d, hidden, p + ".ffn1");
    b.ffn2 = make_linear<S>(rng, hidden, d, p + ".ffn2");
    b.ln2_g = const_param<S>({1, d}, S(1), p + ".ln2.g");
    b.ln2_b = const_param<S>({1, d}, S(0), p + ".ln2.b");
    m.enc.push_back(std::move(b));
  }
  for (int i = 0; i < cfg.dec_layers; ++i) {
    std::string p = "dec." + std::to_string(i);
    DecBlockT<S> b;
    std::size_t width = std::size_t(cfg.dec_heads) * std::size_t(cfg.head_dim);
    b.self_attn = make_attn<S>(rng, d, width, p + ".self");
    b.ln1_g = const_param<S>({1, d}, S(1), p + ".ln1.g");
    b.ln1_b = const_param<S>({1, d}, S(0), p + ".ln1.b");
    b.cross_attn = make_attn<S>(rng, d, width, p + ".cross");
    b.ln2_g = const_param<S>({1, d}, S(1), p + ".ln2.g");
    b.ln2_b = const_param<S>({1, d}, S(0), p + ".ln2.b");
    b.ffn1 = make_linear<S>(rng, d, hidden, p + ".ffn1");
    b.ffn2 = make_linear<S>(rng, hidden, d, p + ".ffn2");
    b.ln3_g = const_param<S>({1, d}, S(1), p + ".ln3.g");
    b.ln3_b = const_param<S>({1, d}, S(0), p + ".ln3.b");
    m.dec.push_back(std::move(b));
  }
  if (cfg.scheme.kind == PosKind::T5Bias) {
    std::size_t nb = std::size_t(cfg.scheme.t5_num_buckets);
    m.t5_enc = uniform_param<S>(rng, {nb, std::size_t(cfg.enc_heads)}, nb, "t5.enc");
    m.t5_dec = uniform_param<S>(rng, {nb, std::size_t(cfg.dec_heads)}, nb, "t5.dec");
  }
  if (!cfg.tie_output) m.out_w = uniform_param<S>(rng, {d, v}, d, "out.w");
  m.out_b = const_param<S>({1, v}, S(0), "out.b");
  if (cfg.scheme.kind == PosKind::Sinusoidal) {
    m.sin_enc = sinusoidal_table<S>(std::size_t(cfg.enc_max_len), d);
    m.sin_dec = sinusoidal_table<S>(std::size_t(cfg.dec_max_len), d);
  }
  return m;
}

inline Model build_model(const ModelConfig& cfg, std::uint64_t seed) {
  return build_model_t<float>(cfg, seed);
}

// ---------------------------------------------------------------------------
// Checkpoints: "LLCK0001" magic, JSON metadata, then named raw tensors.
// ---------------------------------------------------------------------------

struct CheckpointMeta {
  int step = 0;
  double valid_loss = 0.0;
  std::string tokenizer_hash;
};

namespace modeldetail {

inline void put_u64(std::string& s, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) s += char((v >> (8 * i)) & 0xff);
}

inline std::uint64_t take_u64(const std::string& s, std::size_t& at) {
  if (at + 8 > s.size()) throw ParseError("checkpoint: truncated");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i)
    v |= std::uint64_t(static_cast<unsigned char>(s[at + i])) << (8 * i);
  at += 8;
  return v;
}

}  // namespace modeldetail

template <typename S>
void save_checkpoint(const ModelT<S>& model, const CheckpointMeta& meta,
                     const std::string& path) {
  using namespace modeldetail;
  nlohmann::json j;
  j["config"] = config_to_json(model.cfg);
  j["step"] = meta.step;
  j["valid_loss"] = meta.valid_loss;
  j["tokenizer_hash"] = meta.tokenizer_hash;
  j["dtype"] = sizeof(S) == 4 ? "f32" : "f64";
  std::string text = j.dump();

  std::string out = "LLCK0001";
  put_u64(out, text.size());
  out += text;
  auto named = model.named_parameters();
  put_u64(out, named.size());
  for (const auto& [name, t] : named) {
    put_u64(out, name.size());
    out += name;
    put_u64(out, t.ndim());
    for (std::size_t k = 0; k < t.ndim(); ++k) put_u64(out, t.dim(k));
    const char* raw = reinterpret_cast<const char*>(t.data().data());
    out.append(raw, t.numel() * sizeof(S));
  }
  write_file(path, out);
}

template <typename S>
std::pair<ModelT<S>, CheckpointMeta> load_checkpoint_t(const std::string& path) {
  using namespace modeldetail;
  std::string s = read_file(path);
  if (s.size() < 16 || s.compare(0, 8, "LLCK0001") != 0)
    throw ParseError("checkpoint: bad magic in " + path);
  std::size_t at = 8;
  std::uint64_t json_len = take_u64(s, at);
  if (at + json_len > s.size()) throw ParseError("checkpoint: truncated header");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(s.substr(at, json_len));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("checkpoint: bad metadata: ") + e.what());
  }
  at += json_len;
  std::string want_dtype = sizeof(S) == 4 ? "f32" : "f64";
  if (j.value("dtype", "f32") != want_dtype)
    throw ParseError("checkpoint: dtype mismatch");

  ModelT<S> model = build_model_t<S>(config_from_json(j.at("config")), 0);
  CheckpointMeta meta;
  meta.step = j.value("step", 0);
  meta.valid_loss = j.value("valid_loss", 0.0);
  meta.tokenizer_hash = j.value("tokenizer_hash", std::string());

  auto named = model.named_parameters();
  std::uint64_t count = take_u64(s, at);
  if (count != named.size())
    throw ParseError("checkpoint: expected " + std::to_string(named.size()) +
                     " tensors, found " + std::to_string(count));
  for (auto& [name, t] : named) {
    std::uint64_t name_len = take_u64(s, at);
    if (at + name_len > s.size()) throw ParseError("checkpoint: truncated");
    std::string got(s, at, name_len);
    at += name_len;
    if (got != name)
      throw ParseError("checkpoint: tensor '" + got + "' where '" + name +
                       "' expected");
    std::uint64_t nd = take_u64(s, at);
    if (nd != t.ndim()) throw ParseError("checkpoint: rank mismatch for " + name);
    for (std::size_t k = 0; k < nd; ++k)
      if (take_u64(s, at) != t.dim(k))
        throw ParseError("checkpoint: shape mismatch for " + name);
    std::size_t bytes = t.numel() * sizeof(S);
    if (at + bytes > s.size()) throw ParseError("checkpoint: truncated tensor");
    std::memcpy(t.data().data(), s.data() + at, bytes);
    at += bytes;
  }
  if (at != s.size()) throw ParseError("checkpoint: trailing bytes");
  return {std::move(model), meta};
}

inline std::pair<Model, CheckpointMeta> load_checkpoint(const std::string& path) {
  return load_checkpoint_t<float>(path);
}

}  // namespace lenlab
