#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "lenlab/trainer.hpp"

// Text-similarity metrics for generated completions, plus the relative-change
// summaries used by the generalization tables. Everything here is a pure
// function of its inputs.

namespace lenlab {

// 1 iff the strings are identical after whitespace canonicalization.
inline int exact_match(const std::string& pred, const std::string& target) {
  return normalize_ws(pred) == normalize_ws(target) ? 1 : 0;
}

// Character-level edit distance (insert / delete / substitute, all cost 1).
inline int levenshtein(const std::string& a, const std::string& b) {
  std::size_t n = a.size(), m = b.size();
  std::vector<int> prev(m + 1), cur(m + 1);
  for (std::size_t j = 0; j <= m; ++j) prev[j] = int(j);
  for (std::size_t i = 1; i <= n; ++i) {
    cur[0] = int(i);
    for (std::size_t j = 1; j <= m; ++j) {
      int sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return prev[m];
}

// 1 - d / max(len); two empty strings count as identical.
inline double lev_similarity(const std::string& a, const std::string& b) {
  std::size_t mx = std::max(a.size(), b.size());
  if (mx == 0) return 1.0;
  return 1.0 - double(levenshtein(a, b)) / double(mx);
}

namespace metdetail {

inline std::string drop_ws(const std::string& s) {
  std::string out;
  for (char c : s)
    if (c != ' ' && c != '\t' && c != '\n' && c != '\r' && c != '\f' &&
        c != '\v')
      out += c;
  return out;
}

inline std::map<std::string, int> char_ngrams(const std::string& s, std::size_t n) {
  std::map<std::string, int> out;
  if (s.size() >= n)
    for (std::size_t i = 0; i + n <= s.size(); ++i) ++out[s.substr(i, n)];
  return out;
}

inline std::map<std::vector<std::string>, int> word_ngrams(
    const std::vector<std::string>& toks, std::size_t n) {
  std::map<std::vector<std::string>, int> out;
  if (toks.size() >= n)
    for (std::size_t i = 0; i + n <= toks.size(); ++i)
      ++out[std::vector<std::string>(toks.begin() + i, toks.begin() + i + n)];
  return out;
}

template <typename K>
long long overlap(const std::map<K, int>& a, const std::map<K, int>& b) {
  long long total = 0;
  for (const auto& [k, c] : a) {
    auto it = b.find(k);
    if (it != b.end()) total += std::min(c, it->second);
  }
  return total;
}

}  // namespace metdetail

// Character n-gram F-score (orders 1..6, beta = 2, whitespace removed),
// averaged over the orders where either side has n-grams; scaled to [0, 100].
inline double chrf(const std::string& pred, const std::string& target) {
  const double beta2 = 4.0;  // beta = 2
  std::string p = metdetail::drop_ws(pred);
  std::string t = metdetail::drop_ws(target);
  double sum = 0.0;
  int orders = 0;
  for (std::size_t n = 1; n <= 6; ++n) {
    auto pg = metdetail::char_ngrams(p, n);
    auto tg = metdetail::char_ngrams(t, n);
    long long ptotal = 0, ttotal = 0;
    for (const auto& [k, c] : pg) ptotal += c;
    for (const auto& [k, c] : tg) ttotal += c;
    if (ptotal == 0 && ttotal == 0) continue;
    ++orders;
    long long m = metdetail::overlap(pg, tg);
    if (m == 0 || ptotal == 0 || ttotal == 0) continue;  // order scores 0
    double prec = double(m) / double(ptotal);
    double rec = double(m) / double(ttotal);
    sum += (1.0 + beta2) * prec * rec / (beta2 * prec + rec);
  }
  if (orders == 0) return pred == target ? 100.0 : 0.0;  // both empty
  return 100.0 * sum / double(orders);
}

struct RougeL {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

// Longest-common-subsequence F1 over whitespace tokens.
inline RougeL rouge_l(const std::string& pred, const std::string& target) {
  auto p = split_ws(pred);
  auto t = split_ws(target);
  if (p.empty() && t.empty()) return {1.0, 1.0, 1.0};
  if (p.empty() || t.empty()) return {};
  std::vector<std::vector<int>> dp(p.size() + 1, std::vector<int>(t.size() + 1, 0));
  for (std::size_t i = 1; i <= p.size(); ++i)
    for (std::size_t j = 1; j <= t.size(); ++j)
      dp[i][j] = p[i - 1] == t[j - 1]
                     ? dp[i - 1][j - 1] + 1
                     : std::max(dp[i - 1][j], dp[i][j - 1]);
  int lcs = dp[p.size()][t.size()];
  if (lcs == 0) return {};
  RougeL r;
  r.precision = double(lcs) / double(p.size());
  r.recall = double(lcs) / double(t.size());
  r.f1 = 2.0 * r.precision * r.recall / (r.precision + r.recall);
  return r;
}

// Corpus BLEU-4 over whitespace tokens with brevity penalty; orders that end
// up with zero matches take add-one smoothing, so short corpora stay finite.
inline double bleu(const std::vector<std::string>& preds,
                   const std::vector<std::string>& targets) {
  if (preds.empty() || preds.size() != targets.size())
    throw ContractError("bleu: corpus sizes differ or are empty");
  long long match[5] = {0, 0, 0, 0, 0};
  long long total[5] = {0, 0, 0, 0, 0};
  long long pred_len = 0, target_len = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    auto p = split_ws(preds[i]);
    auto t = split_ws(targets[i]);
    pred_len += (long long)p.size();
    target_len += (long long)t.size();
    for (std::size_t n = 1; n <= 4; ++n) {
      auto pg = metdetail::word_ngrams(p, n);
      auto tg = metdetail::word_ngrams(t, n);
      for (const auto& [k, c] : pg) total[n] += c;
      match[n] += metdetail::overlap(pg, tg);
    }
  }
  if (pred_len == 0) return 0.0;
  double log_sum = 0.0;
  for (std::size_t n = 1; n <= 4; ++n) {
    double p = match[n] > 0
                   ? double(match[n]) / double(total[n])
                   : (double(match[n]) + 1.0) / (double(total[n]) + 1.0);
    log_sum += 0.25 * std::log(p);
  }
  double bp = pred_len >= target_len
                  ? 1.0
                  : std::exp(1.0 - double(target_len) / double(pred_len));
  return 100.0 * bp * std::exp(log_sum);
}

// Exact-unigram alignment score: F = 10PR / (R + 9P), discounted by the
// fragmentation penalty 0.5 * (chunks / matches)^3. Pred tokens are aligned
// greedily left to right, preferring the target slot right after the previous
// match so contiguous phrases stay in one chunk.
inline double meteor(const std::string& pred, const std::string& target) {
  auto p = split_ws(pred);
  auto t = split_ws(target);
  if (p.empty() || t.empty()) return 0.0;
  std::vector<bool> used(t.size(), false);
  std::vector<int> align(p.size(), -1);
  int prev_slot = -2;
  for (std::size_t i = 0; i < p.size(); ++i) {
    int slot = -1;
    if (prev_slot + 1 >= 0 && std::size_t(prev_slot + 1) < t.size() &&
        !used[std::size_t(prev_slot + 1)] && t[std::size_t(prev_slot + 1)] == p[i])
      slot = prev_slot + 1;
    for (std::size_t j = 0; slot < 0 && j < t.size(); ++j)
      if (!used[j] && t[j] == p[i]) slot = int(j);
    if (slot >= 0) {
      used[std::size_t(slot)] = true;
      align[i] = slot;
      prev_slot = slot;
    }
  }
  int m = 0, chunks = 0;
  int last_pred = -2, last_tgt = -2;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (align[i] < 0) continue;
    ++m;
    bool adjacent = int(i) == last_pred + 1 && align[i] == last_tgt + 1;
    if (!adjacent) ++chunks;
    last_pred = int(i);
    last_tgt = align[i];
  }
  if (m == 0) return 0.0;
  double prec = double(m) / double(p.size());
  double rec = double(m) / double(t.size());
  double f = 10.0 * prec * rec / (rec + 9.0 * prec);
  double penalty = 0.5 * std::pow(double(chunks) / double(m), 3.0);
  return f * (1.0 - penalty);
}

// Mean negative log-likelihood per target token under teacher forcing; the
// same quantity the trainer reports as validation loss.
template <typename S>
double cross_entropy(const ModelT<S>& model, const TokenBatch& data,
                     int batch_size = 32) {
  return evaluate_loss(model, data, batch_size);
}

// ---------------------------------------------------------------------------
// Relative-change summaries for the generalization tables (percentages).
// ---------------------------------------------------------------------------

// Mean over the other train buckets of (matched - other) / matched.
inline std::optional<double> avg_delta(double matched,
                                       const std::vector<double>& others) {
  if (matched <= 0.0 || others.empty()) return std::nullopt;
  double sum = 0.0;
  for (double o : others) sum += (matched - o) / matched;
  return 100.0 * sum / double(others.size());
}

// (mix - matched) / matched.
inline std::optional<double> mix_delta(double mix, double matched) {
  if (matched <= 0.0) return std::nullopt;
  return 100.0 * (mix - matched) / matched;
}

// ---------------------------------------------------------------------------
// Per-corpus aggregation over (prediction, target) pairs.
// ---------------------------------------------------------------------------

struct MetricSummary {
  double em_pct = 0.0;        // percentage of exact matches
  double bleu_score = 0.0;    // corpus BLEU-4, [0, 100]
  double chrf_score = 0.0;    // mean chrF, [0, 100]
  double rouge_l_f1 = 0.0;    // mean LCS F1, [0, 1]
  double lev_sim = 0.0;       // mean normalized similarity, [0, 1]
  double meteor_score = 0.0;  // mean METEOR, [0, 1]
  std::size_t count = 0;
};

inline MetricSummary score_corpus(const std::vector<std::string>& preds,
                                  const std::vector<std::string>& targets) {
  if (preds.empty() || preds.size() != targets.size())
    throw ContractError("score_corpus: corpus sizes differ or are empty");
  MetricSummary s;
  s.count = preds.size();
  for (std::size_t i = 0; i < preds.size(); ++i) {
    s.em_pct += exact_match(preds[i], targets[i]);
    s.chrf_score += chrf(preds[i], targets[i]);
    s.rouge_l_f1 += rouge_l(preds[i], targets[i]).f1;
    s.lev_sim += lev_similarity(preds[i], targets[i]);
    s.meteor_score += meteor(preds[i], targets[i]);
  }
  double n = double(s.count);
  s.em_pct = 100.0 * s.em_pct / n;
  s.chrf_score /= n;
  s.rouge_l_f1 /= n;
  s.lev_sim /= n;
  s.meteor_score /= n;
  s.bleu_score = bleu(preds, targets);
  return s;
}

}  // namespace lenlab
