#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <json.hpp>

#include "lenlab/common.hpp"

// Byte-level BPE shared by encoder and decoder. Special tokens are atomic:
// they are carved out of the text before byte splitting, so no merge can
// ever produce or cross one. Merge order is deterministic: highest pair
// frequency first, ties broken by lexicographic (left, right) token strings.

namespace lenlab {

inline std::string special_tag(const std::string& name) {
  return "\xE2\x9F\xA8" + name + "\xE2\x9F\xA9";  // mathematical angle brackets
}

inline const std::vector<std::string>& default_specials() {
  static const std::vector<std::string> s = {
      special_tag("PAD"), special_tag("EOS"), special_tag("MASK"),
      special_tag("NEW_LINE"), special_tag("TAB")};
  return s;
}

class Bpe {
 public:
  static constexpr int kPad = 0;
  static constexpr int kEos = 1;
  static constexpr int kMask = 2;
  static constexpr int kNewLine = 3;
  static constexpr int kTab = 4;

  int n_specials() const { return int(specials_.size()); }
  int size() const { return int(token_str_.size()); }
  const std::vector<std::string>& specials() const { return specials_; }
  const std::vector<std::pair<int, int>>& merges() const { return merges_; }
  const std::string& token(int id) const {
    if (id < 0 || id >= size())
      throw ContractError("tokenizer: unknown id " + std::to_string(id));
    return token_str_[std::size_t(id)];
  }
  const std::string& content_hash() const { return content_hash_; }

  // -------------------------------------------------------------------------
  // Training.
  // -------------------------------------------------------------------------

  static Bpe train(const std::string& corpus, std::size_t vocab_size,
                   std::vector<std::string> specials = default_specials()) {
    if (corpus.empty()) throw ContractError("train_bpe: empty corpus");
    Bpe bpe;
    bpe.init_base(std::move(specials));
    if (vocab_size < std::size_t(bpe.size()))
      throw ConfigError("train_bpe: vocab_size " + std::to_string(vocab_size) +
                        " below base alphabet + specials (" +
                        std::to_string(bpe.size()) + ")");

    // Unique pre-tokens with occurrence counts; specials never enter.
    std::map<std::string, long long> word_counts;
    for (const auto& seg : bpe.segment(corpus))
      if (seg.special_id < 0) word_counts[seg.text] += 1;
    std::vector<std::pair<std::vector<int>, long long>> words;
    words.reserve(word_counts.size());
    for (const auto& [w, c] : word_counts) words.push_back({bpe.bytes_of(w), c});

    std::set<std::pair<int, int>> banned;
    while (std::size_t(bpe.size()) < vocab_size) {
      std::map<std::pair<int, int>, long long> pair_counts;
      for (const auto& [ids, c] : words)
        for (std::size_t i = 0; i + 1 < ids.size(); ++i)
          pair_counts[{ids[i], ids[i + 1]}] += c;

      bool found = false;
      std::pair<int, int> best{0, 0};
      long long best_count = 0;
      for (const auto& [p, c] : pair_counts) {
        if (c < 2 || banned.count(p)) continue;
        if (!found || c > best_count ||
            (c == best_count &&
             std::make_pair(bpe.token(p.first), bpe.token(p.second)) <
                 std::make_pair(bpe.token(best.first), bpe.token(best.second)))) {
          best = p;
          best_count = c;
          found = true;
        }
      }
      if (!found) break;

      std::string merged = bpe.token(best.first) + bpe.token(best.second);
      bool clashes = false;
      for (const auto& sp : bpe.specials_)
        if (merged.find(sp) != std::string::npos) clashes = true;
      if (clashes) {  // never let a merge spell out a special literal
        banned.insert(best);
        continue;
      }

      int new_id = bpe.size();
      bpe.token_str_.push_back(merged);
      bpe.merges_.push_back(best);
      bpe.rank_[pair_key(best.first, best.second)] = new_id;
      for (auto& [ids, c] : words) apply_merge(ids, best, new_id);
    }
    bpe.content_hash_ = bpe.compute_hash();
    return bpe;
  }

  // -------------------------------------------------------------------------
  // Encode / decode.
  // -------------------------------------------------------------------------

  std::vector<int> encode(const std::string& text) const {
    std::vector<int> out;
    for (const auto& seg : segment(text)) {
      if (seg.special_id >= 0) {
        out.push_back(seg.special_id);
        continue;
      }
      std::vector<int> ids = bytes_of(seg.text);
      // Repeatedly apply the earliest-trained merge present in the word.
      while (ids.size() > 1) {
        int best_rank = -1;
        std::size_t best_at = 0;
        for (std::size_t i = 0; i + 1 < ids.size(); ++i) {
          auto it = rank_.find(pair_key(ids[i], ids[i + 1]));
          if (it != rank_.end() && (best_rank < 0 || it->second < best_rank)) {
            best_rank = it->second;
            best_at = i;
          }
        }
        if (best_rank < 0) break;
        ids[best_at] = best_rank;
        ids.erase(ids.begin() + long(best_at) + 1);
      }
      out.insert(out.end(), ids.begin(), ids.end());
    }
    return out;
  }

  std::string decode(const std::vector<int>& ids) const {
    std::string out;
    for (int id : ids) out += token(id);
    return out;
  }

  // -------------------------------------------------------------------------
  // Serialization: merges stored as id pairs (byte-safe), specials as text.
  // -------------------------------------------------------------------------

  std::string to_json() const {
    nlohmann::json j;
    j["version"] = 1;
    j["specials"] = specials_;
    nlohmann::json merges = nlohmann::json::array();
    for (const auto& [l, r] : merges_) merges.push_back({l, r});
    j["merges"] = std::move(merges);
    j["content_hash"] = content_hash_;
    return j.dump(2);
  }

  static Bpe from_json(const std::string& text) {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(std::string("tokenizer json: ") + e.what());
    }
    if (!j.contains("version") || j["version"] != 1)
      throw ParseError("tokenizer json: unsupported version");
    Bpe bpe;
    bpe.init_base(j.at("specials").get<std::vector<std::string>>());
    for (const auto& m : j.at("merges")) {
      int l = m.at(0).get<int>(), r = m.at(1).get<int>();
      if (l < 0 || l >= bpe.size() || r < 0 || r >= bpe.size())
        throw ParseError("tokenizer json: merge refers to unknown id");
      int new_id = bpe.size();
      bpe.token_str_.push_back(bpe.token(l) + bpe.token(r));
      bpe.merges_.push_back({l, r});
      bpe.rank_[pair_key(l, r)] = new_id;
    }
    bpe.content_hash_ = bpe.compute_hash();
    if (j.contains("content_hash") && j["content_hash"] != bpe.content_hash_)
      throw ParseError("tokenizer json: content hash mismatch");
    return bpe;
  }

  void save(const std::string& path) const { write_file(path, to_json()); }
  static Bpe load(const std::string& path) { return from_json(read_file(path)); }

 private:
  struct Segment {
    int special_id = -1;  // >= 0 when this segment is a special literal
    std::string text;
  };

  void init_base(std::vector<std::string> specials) {
    specials_ = std::move(specials);
    token_str_ = specials_;
    for (int b = 0; b < 256; ++b) token_str_.push_back(std::string(1, char(b)));
  }

  std::vector<int> bytes_of(const std::string& w) const {
    std::vector<int> ids;
    ids.reserve(w.size());
    for (unsigned char c : w) ids.push_back(n_specials() + int(c));
    return ids;
  }

  static std::uint64_t pair_key(int l, int r) {
    return (std::uint64_t(std::uint32_t(l)) << 32) | std::uint32_t(r);
  }

  static void apply_merge(std::vector<int>& ids, std::pair<int, int> p,
                          int new_id) {
    std::size_t w = 0;
    for (std::size_t r = 0; r < ids.size();) {
      if (r + 1 < ids.size() && ids[r] == p.first && ids[r + 1] == p.second) {
        ids[w++] = new_id;
        r += 2;
      } else {
        ids[w++] = ids[r++];
      }
    }
    ids.resize(w);
  }

  int match_special(const std::string& text, std::size_t at) const {
    int best = -1;
    std::size_t best_len = 0;
    for (int s = 0; s < n_specials(); ++s) {
      const auto& sp = specials_[std::size_t(s)];
      if (sp.size() > best_len && text.compare(at, sp.size(), sp) == 0) {
        best = s;
        best_len = sp.size();
      }
    }
    return best;
  }

  static bool hard_sep(char c) {
    return c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
  }

  // Split into special literals and pre-tokens. Pre-tokens are either runs
  // of spaces, single control whitespace bytes, or words with one attached
  // leading space; merges never cross pre-token boundaries.
  std::vector<Segment> segment(const std::string& text) const {
    std::vector<Segment> out;
    std::size_t i = 0, n = text.size();
    auto boundary = [&](std::size_t at) {
      return at >= n || text[at] == ' ' || hard_sep(text[at]) ||
             match_special(text, at) >= 0;
    };
    while (i < n) {
      int sp = match_special(text, i);
      if (sp >= 0) {
        out.push_back({sp, specials_[std::size_t(sp)]});
        i += specials_[std::size_t(sp)].size();
        continue;
      }
      char c = text[i];
      if (hard_sep(c)) {
        out.push_back({-1, std::string(1, c)});
        ++i;
      } else if (c == ' ') {
        std::size_t j = i;
        while (j < n && text[j] == ' ') ++j;
        bool glue = j < n && !hard_sep(text[j]) && match_special(text, j) < 0;
        std::size_t run_end = glue ? j - 1 : j;  // keep one space for the word
        if (run_end > i) out.push_back({-1, text.substr(i, run_end - i)});
        if (glue) {
          std::size_t k = j;
          while (!boundary(k)) ++k;
          out.push_back({-1, text.substr(run_end, k - run_end)});
          i = k;
        } else {
          i = j;
        }
      } else {
        std::size_t k = i;
        while (!boundary(k)) ++k;
        out.push_back({-1, text.substr(i, k - i)});
        i = k;
      }
    }
    return out;
  }

  std::string compute_hash() const {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (const auto& s : specials_) {
      h = fnv1a64(s, h);
      h = fnv1a64(std::string(1, '\0'), h);
    }
    for (const auto& [l, r] : merges_) {
      std::uint64_t lr = pair_key(l, r);
      h = fnv1a64(&lr, sizeof lr, h);
    }
    return hex64(h);
  }

  std::vector<std::string> specials_;
  std::vector<std::string> token_str_;
  std::vector<std::pair<int, int>> merges_;
  std::unordered_map<std::uint64_t, int> rank_;
  std::string content_hash_;
};

}  // namespace lenlab
