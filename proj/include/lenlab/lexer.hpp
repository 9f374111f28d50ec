#pragma once

#include <cctype>
#include <string>
#include <vector>

#include "lenlab/common.hpp"

// Hand-rolled Java and Python lexers, just deep enough for the dataset
// pipeline: identifiers, numbers, string/char literals as single tokens,
// longest-match operators, comments kept as distinct tokens so a stripping
// pass can drop them. Python tokens carry physical line and indentation so
// block boundaries can be recovered.

namespace lenlab {

enum class TokKind { Ident, Number, Str, CharLit, Op, Punct, Comment };

struct LexTok {
  TokKind kind;
  std::string text;
  std::size_t begin = 0;  // byte offsets into the lexed source
  std::size_t end = 0;
  std::size_t line = 0;   // physical line index
};

namespace lexdetail {

inline bool ident_start(char c) {
  return std::isalpha(static_cast<unsigned char>(c)) || c == '_' || c == '$';
}
inline bool ident_cont(char c) {
  return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '$';
}
inline bool digit(char c) { return c >= '0' && c <= '9'; }

inline const std::vector<std::string>& java_ops() {
  static const std::vector<std::string> ops = {
      ">>>=", ">>>", ">>=", "<<=", "->", "::", "==", "!=", "<=", ">=",
      "&&",   "||",  "++",  "--",  "+=", "-=", "*=", "/=", "%=", "&=",
      "|=",   "^=",  "<<",  ">>"};
  return ops;
}

inline const std::vector<std::string>& python_ops() {
  static const std::vector<std::string> ops = {
      "**=", "//=", "<<=", ">>=", "->", ":=", "==", "!=", "<=", ">=",
      "**",  "//",  "<<",  ">>",  "+=", "-=", "*=", "/=", "%=", "&=",
      "|=",  "^=",  "@="};
  return ops;
}

inline bool match_at(const std::string& s, std::size_t i, const std::string& pat) {
  return s.compare(i, pat.size(), pat) == 0;
}

// Maximal simple-number run: digits, letters (hex/suffixes), dots, and a
// sign directly after an exponent letter.
inline std::size_t scan_number(const std::string& s, std::size_t i) {
  std::size_t j = i;
  while (j < s.size()) {
    char c = s[j];
    if (std::isalnum(static_cast<unsigned char>(c)) || c == '.') {
      ++j;
    } else if ((c == '+' || c == '-') && j > i &&
               (s[j - 1] == 'e' || s[j - 1] == 'E') &&
               !match_at(s, i, "0x") && !match_at(s, i, "0X")) {
      ++j;
    } else {
      break;
    }
  }
  return j;
}

}  // namespace lexdetail

// ---------------------------------------------------------------------------
// Java.
// ---------------------------------------------------------------------------

inline std::vector<LexTok> lex_java(const std::string& code) {
  using namespace lexdetail;
  std::vector<LexTok> out;
  std::size_t i = 0, n = code.size(), line = 0;
  while (i < n) {
    char c = code[i];
    if (c == '\n') {
      ++line;
      ++i;
      continue;
    }
    if (c == ' ' || c == '\t' || c == '\r' || c == '\f' || c == '\v') {
      ++i;
      continue;
    }
    std::size_t start = i, start_line = line;
    if (c == '/' && i + 1 < n && code[i + 1] == '/') {
      while (i < n && code[i] != '\n') ++i;
      out.push_back({TokKind::Comment, code.substr(start, i - start), start, i,
                     start_line});
      continue;
    }
    if (c == '/' && i + 1 < n && code[i + 1] == '*') {
      std::size_t close = code.find("*/", i + 2);
      if (close == std::string::npos)
        throw ParseError("unterminated block comment at line " +
                         std::to_string(line + 1));
      for (std::size_t k = i; k < close + 2; ++k)
        if (code[k] == '\n') ++line;
      i = close + 2;
      out.push_back({TokKind::Comment, code.substr(start, i - start), start, i,
                     start_line});
      continue;
    }
    if (c == '"' || c == '\'') {
      char quote = c;
      ++i;
      while (i < n && code[i] != quote) {
        if (code[i] == '\n')
          throw ParseError("unterminated literal at line " +
                           std::to_string(line + 1));
        if (code[i] == '\\' && i + 1 < n) ++i;
        ++i;
      }
      if (i >= n)
        throw ParseError("unterminated literal at line " +
                         std::to_string(line + 1));
      ++i;
      out.push_back({quote == '"' ? TokKind::Str : TokKind::CharLit,
                     code.substr(start, i - start), start, i, start_line});
      continue;
    }
    if (ident_start(c)) {
      while (i < n && ident_cont(code[i])) ++i;
      out.push_back({TokKind::Ident, code.substr(start, i - start), start, i,
                     start_line});
      continue;
    }
    if (digit(c) || (c == '.' && i + 1 < n && digit(code[i + 1]))) {
      i = scan_number(code, i);
      out.push_back({TokKind::Number, code.substr(start, i - start), start, i,
                     start_line});
      continue;
    }
    bool matched = false;
    for (const auto& op : java_ops())
      if (match_at(code, i, op)) {
        i += op.size();
        out.push_back({TokKind::Op, op, start, i, start_line});
        matched = true;
        break;
      }
    if (matched) continue;
    ++i;
    out.push_back({TokKind::Punct, std::string(1, c), start, i, start_line});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Python.
// ---------------------------------------------------------------------------

inline std::vector<LexTok> lex_python(const std::string& code) {
  using namespace lexdetail;
  std::vector<LexTok> out;
  std::size_t i = 0, n = code.size(), line = 0;
  auto string_prefix_len = [&](std::size_t at) -> std::size_t {
    std::size_t len = 0;
    while (len < 2 && at + len < n) {
      char p = char(std::tolower(static_cast<unsigned char>(code[at + len])));
      if (p == 'r' || p == 'b' || p == 'u' || p == 'f')
        ++len;
      else
        break;
    }
    if (at + len < n && (code[at + len] == '"' || code[at + len] == '\''))
      return len;
    return std::string::npos;  // not a string prefix
  };
  while (i < n) {
    char c = code[i];
    if (c == '\n') {
      ++line;
      ++i;
      continue;
    }
    if (c == ' ' || c == '\t' || c == '\r' || c == '\f' || c == '\v') {
      ++i;
      continue;
    }
    std::size_t start = i, start_line = line;
    if (c == '#') {
      while (i < n && code[i] != '\n') ++i;
      out.push_back({TokKind::Comment, code.substr(start, i - start), start, i,
                     start_line});
      continue;
    }
    std::size_t plen = ident_start(c) ? string_prefix_len(i) : std::string::npos;
    if (c == '"' || c == '\'' || plen != std::string::npos) {
      std::size_t q = (plen == std::string::npos) ? i : i + plen;
      char quote = code[q];
      bool triple = q + 2 < n && code[q + 1] == quote && code[q + 2] == quote;
      std::size_t j = q + (triple ? 3 : 1);
      bool closed = false;
      while (j < n) {
        if (code[j] == '\\' && j + 1 < n) {
          j += 2;
          continue;
        }
        if (code[j] == '\n') {
          if (!triple)
            throw ParseError("unterminated string at line " +
                             std::to_string(line + 1));
          ++line;
          ++j;
          continue;
        }
        if (code[j] == quote &&
            (!triple || (j + 2 < n + 1 && match_at(code, j, std::string(3, quote))))) {
          j += triple ? 3 : 1;
          closed = true;
          break;
        }
        ++j;
      }
      if (!closed)
        throw ParseError("unterminated string at line " +
                         std::to_string(start_line + 1));
      i = j;
      out.push_back({TokKind::Str, code.substr(start, i - start), start, i,
                     start_line});
      continue;
    }
    if (ident_start(c)) {
      while (i < n && ident_cont(code[i])) ++i;
      out.push_back({TokKind::Ident, code.substr(start, i - start), start, i,
                     start_line});
      continue;
    }
    if (digit(c) || (c == '.' && i + 1 < n && digit(code[i + 1]))) {
      i = scan_number(code, i);
      out.push_back({TokKind::Number, code.substr(start, i - start), start, i,
                     start_line});
      continue;
    }
    bool matched = false;
    for (const auto& op : python_ops())
      if (match_at(code, i, op)) {
        i += op.size();
        out.push_back({TokKind::Op, op, start, i, start_line});
        matched = true;
        break;
      }
    if (matched) continue;
    ++i;
    out.push_back({TokKind::Punct, std::string(1, c), start, i, start_line});
  }
  return out;
}

inline std::vector<LexTok> lex(const std::string& language,
                               const std::string& code) {
  if (language == "java") return lex_java(code);
  if (language == "python") return lex_python(code);
  throw ConfigError("lex: unknown language '" + language + "'");
}

inline int count_code_tokens(const std::vector<LexTok>& toks) {
  int n = 0;
  for (const auto& t : toks)
    if (t.kind != TokKind::Comment) ++n;
  return n;
}

// Remove comment tokens from source, preserving the line structure (newlines
// inside block comments survive so physical lines keep their numbers).
inline std::string strip_comments(const std::string& language,
                                  const std::string& code) {
  auto toks = lex(language, code);
  std::string out;
  std::size_t pos = 0;
  for (const auto& t : toks) {
    if (t.kind != TokKind::Comment) continue;
    out += code.substr(pos, t.begin - pos);
    for (std::size_t k = t.begin; k < t.end; ++k)
      if (code[k] == '\n') out += '\n';
    pos = t.end;
  }
  out += code.substr(pos);
  return out;
}

}  // namespace lenlab
