#pragma once

#include <cstdio>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "lenlab/metrics.hpp"

// The scheme x train-bucket x test-bucket score grid, its derived relative
// deltas, and the CSV / markdown renderings of both.

namespace lenlab {

inline const std::vector<std::string>& default_scheme_names() {
  static const std::vector<std::string> v = {"sinusoidal", "xpos", "alibi", "t5"};
  return v;
}

inline const std::vector<std::string>& train_bucket_names() {
  static const std::vector<std::string> v = {"short", "medium", "long", "mix"};
  return v;
}

inline const std::vector<std::string>& test_bucket_names() {
  static const std::vector<std::string> v = {"short", "medium", "long"};
  return v;
}

inline const std::vector<std::string>& default_metric_names() {
  static const std::vector<std::string> v = {"em",      "bleu",    "chrf",
                                             "rouge_l", "lev_sim", "meteor"};
  return v;
}

inline std::map<std::string, double> summary_to_scores(const MetricSummary& s) {
  return {{"em", s.em_pct},          {"bleu", s.bleu_score},
          {"chrf", s.chrf_score},    {"rouge_l", s.rouge_l_f1},
          {"lev_sim", s.lev_sim},    {"meteor", s.meteor_score}};
}

class GeneralizationMatrix {
 public:
  explicit GeneralizationMatrix(
      std::vector<std::string> schemes = default_scheme_names(),
      std::vector<std::string> metrics = default_metric_names())
      : schemes_(std::move(schemes)), metrics_(std::move(metrics)) {
    if (schemes_.empty() || metrics_.empty())
      throw ConfigError("GeneralizationMatrix: empty scheme or metric list");
  }

  const std::vector<std::string>& schemes() const { return schemes_; }
  const std::vector<std::string>& metrics() const { return metrics_; }
  const std::string& config_hash() const { return hash_; }

  void set_cell(const std::string& scheme, const std::string& train,
                const std::string& test,
                const std::map<std::string, double>& scores,
                const std::string& config_hash) {
    require_axis(schemes_, scheme, "scheme");
    require_axis(train_bucket_names(), train, "train bucket");
    require_axis(test_bucket_names(), test, "test bucket");
    for (const auto& m : metrics_)
      if (!scores.count(m))
        throw ContractError("set_cell: missing metric '" + m + "'");
    if (scores.size() != metrics_.size())
      throw ContractError("set_cell: unexpected extra metrics");
    if (hash_.empty()) {
      hash_ = config_hash;
    } else if (hash_ != config_hash) {
      throw ConfigError("set_cell: config hash " + config_hash +
                        " does not match matrix hash " + hash_);
    }
    cells_[key(scheme, train, test)] = scores;
  }

  bool has_cell(const std::string& scheme, const std::string& train,
                const std::string& test) const {
    return cells_.count(key(scheme, train, test)) > 0;
  }

  double score(const std::string& scheme, const std::string& train,
               const std::string& test, const std::string& metric) const {
    auto it = cells_.find(key(scheme, train, test));
    if (it == cells_.end())
      throw ContractError("score: missing cell " + key(scheme, train, test));
    auto jt = it->second.find(metric);
    if (jt == it->second.end())
      throw ContractError("score: unknown metric '" + metric + "'");
    return jt->second;
  }

  // Every (scheme, train, test) triple not yet filled, as "scheme/train/test".
  std::vector<std::string> missing_cells() const {
    std::vector<std::string> out;
    for (const auto& s : schemes_)
      for (const auto& tr : train_bucket_names())
        for (const auto& te : test_bucket_names())
          if (!has_cell(s, tr, te)) out.push_back(key(s, tr, te));
    return out;
  }

  bool complete() const { return missing_cells().empty(); }

  void require_complete() const {
    auto missing = missing_cells();
    if (missing.empty()) return;
    std::string msg = "matrix incomplete: missing";
    for (const auto& m : missing) msg += " " + m;
    throw ContractError(msg);
  }

  std::optional<double> avg_delta_cell(const std::string& scheme,
                                       const std::string& test,
                                       const std::string& metric) const {
    double matched = score(scheme, test, test, metric);
    std::vector<double> others;
    for (const auto& tr : test_bucket_names())
      if (tr != test) others.push_back(score(scheme, tr, test, metric));
    return avg_delta(matched, others);
  }

  std::optional<double> mix_delta_cell(const std::string& scheme,
                                       const std::string& test,
                                       const std::string& metric) const {
    return mix_delta(score(scheme, "mix", test, metric),
                     score(scheme, test, test, metric));
  }

  // ---- serialization ------------------------------------------------------

  std::string to_json() const {
    nlohmann::json j;
    j["config_hash"] = hash_;
    j["schemes"] = schemes_;
    j["metrics"] = metrics_;
    j["cells"] = nlohmann::json::array();
    for (const auto& s : schemes_)
      for (const auto& tr : train_bucket_names())
        for (const auto& te : test_bucket_names()) {
          auto it = cells_.find(key(s, tr, te));
          if (it == cells_.end()) continue;
          nlohmann::json c;
          c["scheme"] = s;
          c["train"] = tr;
          c["test"] = te;
          c["scores"] = it->second;
          j["cells"].push_back(c);
        }
    return j.dump(2) + "\n";
  }

  static GeneralizationMatrix from_json(const std::string& text) {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(std::string("matrix json: ") + e.what());
    }
    if (!j.contains("config_hash") || !j.contains("schemes") ||
        !j.contains("metrics") || !j.contains("cells"))
      throw ParseError("matrix json: missing field");
    GeneralizationMatrix m(j["schemes"].get<std::vector<std::string>>(),
                           j["metrics"].get<std::vector<std::string>>());
    std::string hash = j["config_hash"].get<std::string>();
    for (const auto& c : j["cells"]) {
      m.set_cell(c["scheme"].get<std::string>(), c["train"].get<std::string>(),
                 c["test"].get<std::string>(),
                 c["scores"].get<std::map<std::string, double>>(), hash);
    }
    if (m.hash_.empty()) m.hash_ = hash;
    return m;
  }

  // One row per (scheme, train, test, metric), full precision.
  std::string to_csv() const {
    require_complete();
    std::string out = "scheme,train_bucket,test_bucket,metric,score\n";
    char buf[64];
    for (const auto& s : schemes_)
      for (const auto& tr : train_bucket_names())
        for (const auto& te : test_bucket_names())
          for (const auto& m : metrics_) {
            std::snprintf(buf, sizeof buf, "%.10g", score(s, tr, te, m));
            out += s + "," + tr + "," + te + "," + m + "," + buf + "\n";
          }
    return out;
  }

  // Per metric: one table over the single-bucket training runs (row maxima in
  // bold, Avg Delta at the right) and one table for the mix-trained runs with
  // a signed Delta row per scheme.
  std::string render_markdown() const {
    require_complete();
    std::string out = "# Generalization matrix\n";
    for (const auto& metric : metrics_) {
      out += "\n## " + metric + "\n\n";
      out += "| Test bucket | Scheme | Train short | Train medium | Train long | Avg Δ |\n";
      out += "| --- | --- | --- | --- | --- | --- |\n";
      for (const auto& te : test_bucket_names()) {
        for (const auto& s : schemes_) {
          double mx = -std::numeric_limits<double>::infinity();
          for (const auto& tr : test_bucket_names())
            mx = std::max(mx, score(s, tr, te, metric));
          out += "| " + te + " | " + s + " |";
          for (const auto& tr : test_bucket_names()) {
            double v = score(s, tr, te, metric);
            std::string cell = format2(v);
            if (v == mx) cell = "**" + cell + "**";
            out += " " + cell + " |";
          }
          out += " " + plain_pct(avg_delta_cell(s, te, metric)) + " |\n";
        }
      }
      out += "\n### " + metric + ", mix-trained\n\n";
      out += "| Scheme | Row | Test short | Test medium | Test long |\n";
      out += "| --- | --- | --- | --- | --- |\n";
      for (const auto& s : schemes_) {
        out += "| " + s + " | mix |";
        for (const auto& te : test_bucket_names())
          out += " " + format2(score(s, "mix", te, metric)) + " |";
        out += "\n| " + s + " | Δ |";
        for (const auto& te : test_bucket_names())
          out += " " + signed_pct(mix_delta_cell(s, te, metric)) + " |";
        out += "\n";
      }
    }
    return out;
  }

 private:
  static std::string key(const std::string& s, const std::string& tr,
                         const std::string& te) {
    return s + "/" + tr + "/" + te;
  }

  static void require_axis(const std::vector<std::string>& axis,
                           const std::string& v, const std::string& what) {
    for (const auto& a : axis)
      if (a == v) return;
    throw ConfigError("unknown " + what + " '" + v + "'");
  }

  static std::string plain_pct(const std::optional<double>& v) {
    return v ? format2(*v) + "%" : "n/a";
  }

  static std::string signed_pct(const std::optional<double>& v) {
    if (!v) return "n/a";
    std::string s = format2(*v);
    if (*v > 0.0 && s != "0.00") s = "+" + s;
    return s + "%";
  }

  std::vector<std::string> schemes_;
  std::vector<std::string> metrics_;
  std::map<std::string, std::map<std::string, double>> cells_;
  std::string hash_;
};

}  // namespace lenlab
