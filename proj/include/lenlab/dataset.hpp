#pragma once

#include <algorithm>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "lenlab/common.hpp"
#include "lenlab/lexer.hpp"
#include "lenlab/tokenizer.hpp"

// Corpus of standalone functions -> length-bucketed completion datasets.
// Java masks the last 11 tokens of a semicolon-terminated statement;
// Python masks the last 11 tokens of an indentation block. Functions are
// sorted by lexer token count into terciles (short/medium/long), instances
// are deduplicated, split 80/10/10 grouped by function, capped per bucket,
// and a mixed training set draws equal thirds from the three buckets.

namespace lenlab {

inline const std::string& mask_tag() {
  static const std::string t = special_tag("MASK");
  return t;
}
inline const std::string& newline_tag() {
  static const std::string t = special_tag("NEW_LINE");
  return t;
}
inline const std::string& tab_tag() {
  static const std::string t = special_tag("TAB");
  return t;
}

constexpr int kMaskTokens = 11;       // median statement length
constexpr int kMaxLexerTokens = 1024; // ingestion cap
constexpr int kIndentUnit = 4;        // spaces per indentation level

struct SourceFunction {
  std::string id;
  std::string language;  // "java" | "python"
  std::string code;
  int lexer_token_count = 0;
};

struct CompletionInstance {
  std::string input;        // flattened, exactly one mask sentinel
  std::string target;       // the masked 11 language tokens as text
  std::string function_id;
  std::string bucket;       // short | medium | long
  std::string split;        // train | valid | test
  std::size_t span_begin = 0;  // canonical ordering key (not serialized)
};

struct BucketSpec {
  int short_min = 0, short_max = 0;
  int medium_min = 0, medium_max = 0;
  int long_min = 0, long_max = 0;
};

struct DatasetCaps {
  long long train = 280000;
  long long valid = 35000;
  long long test = 35000;
};

struct BuildStats {
  long long functions_total = 0;
  long long rejected_non_ascii = 0;
  long long rejected_parse = 0;
  long long rejected_too_long = 0;
  long long rejected_no_candidates = 0;
  long long functions_kept = 0;
  long long instances_raw = 0;
  long long dedup_dropped = 0;
  long long instances_kept = 0;
};

// ---------------------------------------------------------------------------
// Ingestion normalization. Tag characters are non-ASCII, so the ASCII check
// runs on the raw code before any tag is introduced.
// ---------------------------------------------------------------------------

inline bool is_ascii(const std::string& s) {
  for (unsigned char c : s)
    if (c > 127) return false;
  return true;
}

inline std::string normalize_source(const std::string& code) {
  std::string s;
  s.reserve(code.size());
  for (std::size_t i = 0; i < code.size(); ++i) {
    char c = code[i];
    if (c == '\r') {
      if (i + 1 < code.size() && code[i + 1] == '\n') continue;
      s += '\n';
    } else if (c == '\t') {
      s.append(kIndentUnit, ' ');
    } else {
      s += c;
    }
  }
  // Strip trailing whitespace per line, drop blank lines, trim the tail.
  std::string out;
  std::string line;
  auto flush = [&]() {
    std::size_t e = line.size();
    while (e > 0 && line[e - 1] == ' ') --e;
    if (e > 0) {
      if (!out.empty()) out += '\n';
      out.append(line, 0, e);
    }
    line.clear();
  };
  for (char c : s) {
    if (c == '\n')
      flush();
    else
      line += c;
  }
  flush();
  return out;
}

// Canonical comment-free form: normalizing again after stripping removes the
// whitespace-only lines a comment can leave behind, so no line is blank and
// tag runs stay unambiguous.
inline std::string prepare_source(const std::string& language,
                                  const std::string& code) {
  return normalize_source(strip_comments(language, normalize_source(code)));
}

// ---------------------------------------------------------------------------
// Flattening.
// ---------------------------------------------------------------------------

inline std::string flatten_java(const std::string& code) {
  std::string out;
  bool at_line_start = true;
  for (char c : code) {
    if (c == '\n') {
      out += newline_tag();
      at_line_start = true;
    } else if (at_line_start && c == ' ') {
      // indentation dropped
    } else {
      out += c;
      at_line_start = false;
    }
  }
  return out;
}

// Every newline becomes one tag and every indent unit one more, so a line at
// depth d is preceded by 1 + d tags; depth is recoverable exactly.
inline std::string flatten_python(const std::string& code) {
  std::string out;
  std::size_t i = 0, n = code.size();
  bool first_line = true;
  while (i < n) {
    std::size_t eol = code.find('\n', i);
    if (eol == std::string::npos) eol = n;
    std::size_t indent = 0;
    while (i + indent < eol && code[i + indent] == ' ') ++indent;
    if (!first_line) out += tab_tag();
    for (std::size_t u = 0; u < indent / kIndentUnit; ++u) out += tab_tag();
    out.append(indent % kIndentUnit, ' ');
    out.append(code, i + indent, eol - i - indent);
    first_line = false;
    i = eol + 1;
  }
  return out;
}

inline std::string unflatten_python(const std::string& flat) {
  std::string out;
  std::size_t i = 0, n = flat.size();
  const std::string& tag = tab_tag();
  while (i < n) {
    if (flat.compare(i, tag.size(), tag) == 0) {
      std::size_t run = 0;
      while (flat.compare(i, tag.size(), tag) == 0) {
        ++run;
        i += tag.size();
      }
      std::size_t units = run;
      if (!out.empty() || run == 0) {
        out += '\n';
        units = run - 1;
      } else if (i >= n) {
        // tags with nothing after them at the very start: treat as newline(s)
        out += '\n';
        units = run - 1;
      }
      out.append(units * kIndentUnit, ' ');
    } else {
      out += flat[i++];
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Candidate extraction.
// ---------------------------------------------------------------------------

struct Candidate {
  std::size_t begin = 0, end = 0;  // byte span of the masked run
  std::string target;
};

// Semicolon-terminated statements inside the method body (after the first
// '{'), at any brace depth, with the terminating ';' outside parentheses.
// Control-flow headers and brace lines never end with a bare ';'.
inline std::vector<Candidate> java_candidates(const std::string& stripped) {
  auto all = lex_java(stripped);
  std::vector<LexTok> toks;
  for (auto& t : all)
    if (t.kind != TokKind::Comment) toks.push_back(std::move(t));

  std::size_t body = 0;
  bool found = false;
  for (std::size_t k = 0; k < toks.size(); ++k)
    if (toks[k].text == "{") {
      body = k;
      found = true;
      break;
    }
  if (!found) return {};

  std::vector<Candidate> out;
  int paren = 0;
  std::size_t seg_start = body + 1;
  for (std::size_t k = body + 1; k < toks.size(); ++k) {
    const std::string& s = toks[k].text;
    if (s == "(" || s == "[") {
      ++paren;
    } else if (s == ")" || s == "]") {
      if (paren > 0) --paren;
    } else if (paren == 0 && (s == "{" || s == "}")) {
      seg_start = k + 1;
    } else if (paren == 0 && s == ";") {
      std::size_t len = k - seg_start + 1;
      if (len >= std::size_t(kMaskTokens)) {
        std::size_t first = k - (kMaskTokens - 1);
        Candidate c;
        c.begin = toks[first].begin;
        c.end = toks[k].end;
        for (std::size_t j = first; j <= k; ++j) {
          if (j > first) c.target += ' ';
          c.target += toks[j].text;
        }
        out.push_back(std::move(c));
      }
      seg_start = k + 1;
    }
  }
  return out;
}

namespace datadetail {

inline int line_indent(const std::string& code, const std::vector<LexTok>& toks,
                       std::size_t tok_idx) {
  std::size_t b = toks[tok_idx].begin;
  std::size_t line_start = code.rfind('\n', b == 0 ? 0 : b - 1);
  line_start = (line_start == std::string::npos || b == 0) ? 0 : line_start + 1;
  int ind = 0;
  while (line_start + std::size_t(ind) < code.size() &&
         code[line_start + std::size_t(ind)] == ' ')
    ++ind;
  return ind;
}

inline bool compound_keyword(const std::string& s) {
  return s == "if" || s == "elif" || s == "else" || s == "for" || s == "while" ||
         s == "with" || s == "try" || s == "except" || s == "finally" ||
         s == "def" || s == "class";
}

}  // namespace datadetail

// Indentation suites following a ':' header (if/for/while/def/...), except
// the function's own top-level body. The suite is every logical line more
// indented than its header; candidates mask the suite's last 11 tokens.
inline std::vector<Candidate> python_candidates(const std::string& stripped) {
  auto all = lex_python(stripped);
  std::vector<LexTok> toks;
  for (auto& t : all)
    if (t.kind != TokKind::Comment) toks.push_back(std::move(t));
  if (toks.empty()) return {};

  // Group tokens into logical lines: a new group starts on a physical line
  // change while outside brackets.
  std::vector<std::size_t> group_of(toks.size(), 0);
  std::vector<std::size_t> group_first;  // first token index per group
  int depth = 0;
  std::size_t group = 0;
  group_first.push_back(0);
  for (std::size_t k = 0; k < toks.size(); ++k) {
    if (k > 0 && depth == 0 && toks[k].line != toks[k - 1].line) {
      ++group;
      group_first.push_back(k);
    }
    group_of[k] = group;
    const std::string& s = toks[k].text;
    if (s == "(" || s == "[" || s == "{") ++depth;
    if ((s == ")" || s == "]" || s == "}") && depth > 0) --depth;
  }
  std::size_t n_groups = group + 1;
  std::vector<std::size_t> group_last(n_groups);
  for (std::size_t k = 0; k < toks.size(); ++k) group_last[group_of[k]] = k;

  std::vector<Candidate> out;
  bool top_def_seen = false;
  for (std::size_t g = 0; g < n_groups; ++g) {
    std::size_t first = group_first[g], last = group_last[g];
    if (toks[last].text != ":") continue;
    if (!datadetail::compound_keyword(toks[first].text)) continue;
    int header_indent = datadetail::line_indent(stripped, toks, first);
    if (toks[first].text == "def" && header_indent == 0 && !top_def_seen) {
      top_def_seen = true;  // the function's own body is not a candidate
      continue;
    }
    // Collect suite groups.
    std::size_t suite_first_tok = 0, suite_last_tok = 0;
    bool have = false;
    for (std::size_t g2 = g + 1; g2 < n_groups; ++g2) {
      int ind = datadetail::line_indent(stripped, toks, group_first[g2]);
      if (ind <= header_indent) break;
      if (!have) suite_first_tok = group_first[g2];
      suite_last_tok = group_last[g2];
      have = true;
    }
    if (!have) continue;
    std::size_t count = suite_last_tok - suite_first_tok + 1;
    if (count < std::size_t(kMaskTokens)) continue;

    std::size_t mask_first = suite_last_tok - (kMaskTokens - 1);
    Candidate c;
    c.begin = toks[mask_first].begin;
    c.end = toks[suite_last_tok].end;
    for (std::size_t j = mask_first; j <= suite_last_tok; ++j) {
      if (j > mask_first) {
        if (toks[j].line == toks[j - 1].line) {
          c.target += ' ';
        } else {
          int units =
              datadetail::line_indent(stripped, toks, j) / kIndentUnit;
          c.target += tab_tag();
          for (int u = 0; u < units; ++u) c.target += tab_tag();
        }
      }
      c.target += toks[j].text;
    }
    out.push_back(std::move(c));
  }
  return out;
}

inline std::vector<Candidate> extract_candidates(const std::string& language,
                                                 const std::string& stripped) {
  if (language == "java") return java_candidates(stripped);
  if (language == "python") return python_candidates(stripped);
  throw ConfigError("extract_candidates: unknown language '" + language + "'");
}

inline std::string flatten(const std::string& language, const std::string& code) {
  if (language == "java") return flatten_java(code);
  if (language == "python") return flatten_python(code);
  throw ConfigError("flatten: unknown language '" + language + "'");
}

// ---------------------------------------------------------------------------
// Buckets, splits, dedup, caps.
// ---------------------------------------------------------------------------

inline const char* bucket_name(int b) {
  return b == 0 ? "short" : b == 1 ? "medium" : "long";
}

inline std::string split_of_function(const std::string& id, std::uint64_t seed) {
  std::uint64_t h = fnv1a64(id + "#" + std::to_string(seed));
  std::uint64_t r = h % 10;
  return r < 8 ? "train" : r == 8 ? "valid" : "test";
}

struct BuildResult {
  std::map<std::string, std::map<std::string, std::vector<CompletionInstance>>> sets;
  BucketSpec spec;
  BuildStats stats;
  DatasetCaps caps;  // after scaling
  std::string language;
  std::uint64_t seed = 0;
};

namespace datadetail {

inline void sort_canonical(std::vector<CompletionInstance>& v) {
  std::sort(v.begin(), v.end(),
            [](const CompletionInstance& a, const CompletionInstance& b) {
              if (a.function_id != b.function_id)
                return a.function_id < b.function_id;
              return a.span_begin < b.span_begin;
            });
}

inline std::string dedup_key(const CompletionInstance& inst) {
  return normalize_ws(inst.input) + '\x1f' + normalize_ws(inst.target);
}

}  // namespace datadetail

inline BuildResult build_dataset(const std::vector<SourceFunction>& corpus,
                                 const std::string& language,
                                 std::uint64_t seed, double scale = 1.0,
                                 DatasetCaps base = {}) {
  if (language != "java" && language != "python")
    throw ConfigError("build_dataset: unknown language '" + language + "'");
  if (scale <= 0.0) throw ConfigError("build_dataset: scale must be positive");
  if (corpus.size() < 3)
    throw ContractError("build_dataset: need at least 3 functions");

  BuildResult result;
  result.language = language;
  result.seed = seed;
  result.caps.train = std::max(1LL, (long long)std::llround(double(base.train) * scale));
  result.caps.valid = std::max(1LL, (long long)std::llround(double(base.valid) * scale));
  result.caps.test = std::max(1LL, (long long)std::llround(double(base.test) * scale));
  BuildStats& st = result.stats;
  st.functions_total = (long long)corpus.size();

  struct Kept {
    const SourceFunction* fn;
    std::string stripped;
    int tokens;
    std::vector<Candidate> candidates;
  };
  std::vector<Kept> kept;
  for (const auto& fn : corpus) {
    if (!is_ascii(fn.code)) {
      ++st.rejected_non_ascii;
      continue;
    }
    std::string stripped;
    int tokens = 0;
    try {
      stripped = prepare_source(language, fn.code);
      tokens = count_code_tokens(lex(language, stripped));
    } catch (const ParseError&) {
      ++st.rejected_parse;
      continue;
    }
    if (tokens > kMaxLexerTokens || tokens == 0) {
      ++st.rejected_too_long;
      continue;
    }
    auto cands = extract_candidates(language, stripped);
    if (cands.empty()) {
      ++st.rejected_no_candidates;
      continue;
    }
    kept.push_back({&fn, std::move(stripped), tokens, std::move(cands)});
  }
  st.functions_kept = (long long)kept.size();
  if (kept.size() < 3)
    throw ContractError("build_dataset: fewer than 3 usable functions survive "
                        "ingestion");

  // Terciles by token count, ties broken by function id.
  std::vector<std::size_t> order(kept.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (kept[a].tokens != kept[b].tokens) return kept[a].tokens < kept[b].tokens;
    return kept[a].fn->id < kept[b].fn->id;
  });
  std::size_t n = order.size();
  std::size_t s0 = n / 3 + (n % 3 > 0 ? 1 : 0);
  std::size_t s1 = n / 3 + (n % 3 > 1 ? 1 : 0);
  std::vector<int> bucket_of(kept.size());
  for (std::size_t r = 0; r < n; ++r)
    bucket_of[order[r]] = r < s0 ? 0 : (r < s0 + s1 ? 1 : 2);
  result.spec.short_min = kept[order.front()].tokens;
  result.spec.short_max = kept[order[s0 - 1]].tokens;
  result.spec.medium_min = kept[order[s0]].tokens;
  result.spec.medium_max = kept[order[s0 + s1 - 1]].tokens;
  result.spec.long_min = kept[order[s0 + s1]].tokens;
  result.spec.long_max = kept[order.back()].tokens;

  // Instances.
  std::vector<CompletionInstance> all;
  for (std::size_t i = 0; i < kept.size(); ++i) {
    const auto& k = kept[i];
    std::string split = split_of_function(k.fn->id, seed);
    for (const auto& c : k.candidates) {
      CompletionInstance inst;
      inst.input = flatten(language, k.stripped.substr(0, c.begin) + mask_tag() +
                                         k.stripped.substr(c.end));
      inst.target = c.target;
      inst.function_id = k.fn->id;
      inst.bucket = bucket_name(bucket_of[i]);
      inst.split = split;
      inst.span_begin = c.begin;
      all.push_back(std::move(inst));
    }
  }
  st.instances_raw = (long long)all.size();

  // Global dedup in canonical order.
  datadetail::sort_canonical(all);
  std::set<std::string> seen;
  std::vector<CompletionInstance> unique;
  for (auto& inst : all) {
    if (seen.insert(datadetail::dedup_key(inst)).second)
      unique.push_back(std::move(inst));
    else
      ++st.dedup_dropped;
  }

  // Group, check, cap.
  for (auto& inst : unique)
    result.sets[inst.bucket][inst.split].push_back(inst);
  for (const char* b : {"short", "medium", "long"})
    for (const char* sp : {"train", "valid", "test"}) {
      auto& v = result.sets[b][sp];
      if (v.empty())
        throw Error(std::string("build_dataset: bucket '") + b + "' split '" +
                    sp + "' has zero instances");
      long long cap = std::string(sp) == "train" ? result.caps.train
                      : std::string(sp) == "valid" ? result.caps.valid
                                                   : result.caps.test;
      if ((long long)v.size() > cap) {
        Rng rng(derive_seed(seed, std::string("cap:") + b + ":" + sp));
        rng.shuffle(v);
        v.resize(std::size_t(cap));
      }
      datadetail::sort_canonical(v);
      st.instances_kept += (long long)v.size();
    }
  return result;
}

// Mixed training/validation sets: equal thirds (+-1) from the three buckets,
// totalling exactly one bucket's size; the mix never touches test instances.
inline void build_mix(BuildResult& result, std::uint64_t seed) {
  for (const char* sp : {"train", "valid"}) {
    std::size_t total = result.sets.at("short").at(sp).size();
    std::vector<CompletionInstance> mix;
    int i = 0;
    for (const char* b : {"short", "medium", "long"}) {
      std::size_t want = total / 3 + (std::size_t(i) < total % 3 ? 1 : 0);
      auto pool = result.sets.at(b).at(sp);
      if (pool.size() < want)
        throw Error(std::string("build_mix: bucket '") + b + "' split '" + sp +
                    "' has " + std::to_string(pool.size()) +
                    " instances, needs " + std::to_string(want));
      Rng rng(derive_seed(seed, std::string("mix:") + sp + ":" + b));
      rng.shuffle(pool);
      pool.resize(want);
      mix.insert(mix.end(), pool.begin(), pool.end());
      ++i;
    }
    datadetail::sort_canonical(mix);
    result.sets["mix"][sp] = std::move(mix);
  }
}

// ---------------------------------------------------------------------------
// JSONL + manifest I/O.
// ---------------------------------------------------------------------------

inline std::vector<SourceFunction> corpus_from_jsonl(const std::string& text) {
  std::vector<SourceFunction> out;
  std::size_t line_no = 0;
  for (const auto& line : split_lines(text)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
      SourceFunction fn;
      fn.id = j.at("id").get<std::string>();
      fn.language = j.at("language").get<std::string>();
      fn.code = j.at("code").get<std::string>();
      out.push_back(std::move(fn));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError("corpus line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

inline std::string corpus_to_jsonl(const std::vector<SourceFunction>& fns) {
  std::string out;
  for (const auto& fn : fns) {
    nlohmann::json j;
    j["id"] = fn.id;
    j["language"] = fn.language;
    j["code"] = fn.code;
    out += j.dump();
    out += '\n';
  }
  return out;
}

inline std::string instances_to_jsonl(const std::vector<CompletionInstance>& v) {
  std::string out;
  for (const auto& inst : v) {
    nlohmann::json j;
    j["input"] = inst.input;
    j["target"] = inst.target;
    j["function_id"] = inst.function_id;
    j["bucket"] = inst.bucket;
    j["split"] = inst.split;
    out += j.dump();
    out += '\n';
  }
  return out;
}

inline std::vector<CompletionInstance> instances_from_jsonl(
    const std::string& text) {
  std::vector<CompletionInstance> out;
  std::size_t line_no = 0;
  for (const auto& line : split_lines(text)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      auto j = nlohmann::json::parse(line);
      CompletionInstance inst;
      inst.input = j.at("input").get<std::string>();
      inst.target = j.at("target").get<std::string>();
      inst.function_id = j.at("function_id").get<std::string>();
      inst.bucket = j.at("bucket").get<std::string>();
      inst.split = j.at("split").get<std::string>();
      out.push_back(std::move(inst));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError("dataset line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

inline void write_dataset_dir(const BuildResult& result, const std::string& dir) {
  std::filesystem::create_directories(dir);
  for (const auto& [bucket, splits] : result.sets)
    for (const auto& [split, insts] : splits)
      write_file(dir + "/" + bucket + "_" + split + ".jsonl",
                 instances_to_jsonl(insts));
  nlohmann::json m;
  m["language"] = result.language;
  m["seed"] = result.seed;
  m["caps"] = {{"train", result.caps.train},
               {"valid", result.caps.valid},
               {"test", result.caps.test}};
  m["buckets"] = {
      {"short", {{"min_tokens", result.spec.short_min}, {"max_tokens", result.spec.short_max}}},
      {"medium", {{"min_tokens", result.spec.medium_min}, {"max_tokens", result.spec.medium_max}}},
      {"long", {{"min_tokens", result.spec.long_min}, {"max_tokens", result.spec.long_max}}}};
  m["stats"] = {{"functions_total", result.stats.functions_total},
                {"rejected_non_ascii", result.stats.rejected_non_ascii},
                {"rejected_parse", result.stats.rejected_parse},
                {"rejected_too_long", result.stats.rejected_too_long},
                {"rejected_no_candidates", result.stats.rejected_no_candidates},
                {"functions_kept", result.stats.functions_kept},
                {"instances_raw", result.stats.instances_raw},
                {"dedup_dropped", result.stats.dedup_dropped},
                {"instances_kept", result.stats.instances_kept}};
  write_file(dir + "/manifest.json", m.dump(2) + "\n");
}

}  // namespace lenlab
