#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include <json.hpp>

#include "lenlab/model.hpp"

// Autoregressive decoding: greedy argmax or nucleus (top-p) sampling with one
// RNG stream per (seed, instance id), so runs replay instance-by-instance.

namespace lenlab {

enum class GenMode { Nucleus, Greedy };

struct GenConfig {
  double top_p = 0.95;
  int max_new_tokens = 128;
  GenMode mode = GenMode::Nucleus;
  std::uint64_t seed = 0;
};

inline nlohmann::json gen_config_to_json(const GenConfig& c) {
  return {{"top_p", c.top_p},
          {"max_new_tokens", c.max_new_tokens},
          {"mode", c.mode == GenMode::Greedy ? "greedy" : "nucleus"},
          {"seed", c.seed}};
}

inline GenConfig gen_config_from_json(const nlohmann::json& j) {
  GenConfig c;
  c.top_p = j.value("top_p", c.top_p);
  c.max_new_tokens = j.value("max_new_tokens", c.max_new_tokens);
  std::string mode = j.value("mode", std::string("nucleus"));
  if (mode == "greedy") {
    c.mode = GenMode::Greedy;
  } else if (mode == "nucleus") {
    c.mode = GenMode::Nucleus;
  } else {
    throw ConfigError("gen config: unknown mode '" + mode + "'");
  }
  c.seed = j.value("seed", c.seed);
  return c;
}

// Keeps the largest probability-sorted prefix whose cumulative mass stays
// within top_p (ties broken by token id, the argmax always survives) and
// renormalizes it; everything else becomes exactly zero. top_p >= 1 is the
// identity.
inline std::vector<double> nucleus_filter(const std::vector<double>& probs,
                                          double top_p) {
  if (probs.empty()) throw ContractError("nucleus_filter: empty distribution");
  if (!(top_p > 0.0) || top_p > 1.0)
    throw ConfigError("nucleus_filter: top_p must be in (0, 1]");
  double sum = std::accumulate(probs.begin(), probs.end(), 0.0);
  if (std::abs(sum - 1.0) > 1e-5)
    throw ContractError("nucleus_filter: probabilities sum to " +
                        std::to_string(sum));
  if (top_p >= 1.0) return probs;

  std::vector<std::size_t> order(probs.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (probs[a] != probs[b]) return probs[a] > probs[b];
    return a < b;
  });

  std::vector<double> out(probs.size(), 0.0);
  double kept = 0.0;
  for (std::size_t k = 0; k < order.size(); ++k) {
    if (k > 0 && kept + probs[order[k]] > top_p) break;
    kept += probs[order[k]];
    out[order[k]] = probs[order[k]];
  }
  for (auto& p : out) p /= kept;
  return out;
}

// Multinomial draw via CDF inversion; callers pass a normalized distribution.
inline int sample_index(const std::vector<double>& probs, Rng& rng) {
  double u = rng.uniform();
  double cum = 0.0;
  int last_nonzero = -1;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (probs[i] <= 0.0) continue;
    last_nonzero = int(i);
    cum += probs[i];
    if (u < cum) return int(i);
  }
  if (last_nonzero < 0) throw ContractError("sample_index: all-zero distribution");
  return last_nonzero;  // u landed in the rounding gap past the final CDF step
}

namespace gendetail {

template <typename S>
std::vector<double> last_row_softmax(const TensorT<S>& logits) {
  std::size_t last = logits.rows() - 1;
  std::size_t v = logits.cols();
  std::vector<double> p(v);
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < v; ++j) mx = std::max(mx, double(logits.at(last, j)));
  double z = 0.0;
  for (std::size_t j = 0; j < v; ++j) {
    p[j] = std::exp(double(logits.at(last, j)) - mx);
    z += p[j];
  }
  for (auto& x : p) x /= z;
  return p;
}

template <typename S>
int argmax_last_row(const TensorT<S>& logits) {
  std::size_t last = logits.rows() - 1;
  int best = 0;
  S best_v = logits.at(last, 0);
  for (std::size_t j = 1; j < logits.cols(); ++j)
    if (logits.at(last, j) > best_v) {
      best_v = logits.at(last, j);
      best = int(j);
    }
  return best;
}

}  // namespace gendetail

// Decodes until EOS (excluded from the output) or max_new_tokens.
template <typename S>
std::vector<int> generate(const ModelT<S>& model, const std::vector<int>& src,
                          const GenConfig& cfg,
                          const std::string& instance_id = "") {
  if (!(cfg.top_p > 0.0) || cfg.top_p > 1.0)
    throw ConfigError("generate: top_p must be in (0, 1]");
  if (cfg.max_new_tokens < 1 || cfg.max_new_tokens > model.cfg.dec_max_len)
    throw ConfigError("generate: max_new_tokens must be in [1, " +
                      std::to_string(model.cfg.dec_max_len) + "]");
  auto encoded = model.encode(src);
  Rng rng(derive_seed(cfg.seed, "gen:" + instance_id));
  std::vector<int> prefix = {Bpe::kPad};
  std::vector<int> out;
  for (int t = 0; t < cfg.max_new_tokens; ++t) {
    TensorT<S> logits = model.decode_logits(encoded, prefix);
    int tok;
    if (cfg.mode == GenMode::Greedy) {
      tok = gendetail::argmax_last_row(logits);
    } else {
      auto filtered =
          nucleus_filter(gendetail::last_row_softmax(logits), cfg.top_p);
      tok = sample_index(filtered, rng);
    }
    if (tok == Bpe::kEos) break;
    out.push_back(tok);
    prefix.push_back(tok);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Prediction records, one JSON object per line.
// ---------------------------------------------------------------------------

struct Prediction {
  std::string instance_id;
  std::string prediction;
  std::string target;
  std::string bucket;
};

inline std::string predictions_to_jsonl(const std::vector<Prediction>& preds) {
  std::string out;
  for (const auto& p : preds) {
    nlohmann::json j;
    j["instance_id"] = p.instance_id;
    j["prediction"] = p.prediction;
    j["target"] = p.target;
    j["bucket"] = p.bucket;
    out += j.dump() + "\n";
  }
  return out;
}

inline std::vector<Prediction> predictions_from_jsonl(const std::string& text) {
  std::vector<Prediction> out;
  std::size_t line_no = 0;
  for (const auto& line : split_lines(text)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError("predictions line " + std::to_string(line_no) + ": " +
                       e.what());
    }
    if (!j.contains("instance_id") || !j.contains("prediction") ||
        !j.contains("target") || !j.contains("bucket"))
      throw ParseError("predictions line " + std::to_string(line_no) +
                       ": missing field");
    Prediction p;
    p.instance_id = j["instance_id"].get<std::string>();
    p.prediction = j["prediction"].get<std::string>();
    p.target = j["target"].get<std::string>();
    p.bucket = j["bucket"].get<std::string>();
    out.push_back(p);
  }
  return out;
}

}  // namespace lenlab
