#pragma once

#include <string>
#include <vector>

#include "lenlab/common.hpp"
#include "lenlab/dataset.hpp"

// Deterministic synthetic corpora: small code-shaped functions with a wide
// spread of token counts, some maskable statements/blocks, some comments and
// string literals, and a few statements too short to mask.

namespace fixtures {

inline std::string num(lenlab::Rng& rng) {
  return std::to_string(1 + rng.below(97));
}

inline std::string java_statement(lenlab::Rng& rng, int serial) {
  std::string a = num(rng), b = num(rng);
  switch (rng.below(8)) {
    case 0:
      return "    v = v + a * " + a + " - b + " + b + " + 1 ;\n";
    case 1:
      return "    v = helper(v, a, " + a + ") + b % " + b + " ;\n";
    case 2:
      return "    if (v > " + a + ") {\n        v = v - " + b +
             " + a * 2 ;\n    }\n";
    case 3:
      return "    v += " + a + " ;\n";
    case 4:
      return "    int t" + std::to_string(serial) + " = v * " + a +
             " + a - b + " + b + " ;\n";
    case 5:
      return "    while (v > " + a + ") {\n        v = v / 2 + " + b +
             " - 1 + b ;\n    }\n";
    case 6:
      return "    // step " + a + "\n    v = v ^ " + b + " ;\n";
    default:
      return "    s = \"m" + a + "\" + a + b + v + " + b + " ;\n";
  }
}

inline lenlab::SourceFunction make_java(std::size_t idx, lenlab::Rng& rng) {
  int stmts = 2 + int(rng.below(11));
  std::string code = "public static int calc" + std::to_string(idx) +
                     "(int a, int b) {\n    int v = " + num(rng) + " ;\n";
  if (rng.below(4) == 0) code = "/* helper " + std::to_string(idx) + " */\n" + code;
  for (int s = 0; s < stmts; ++s) code += java_statement(rng, s);
  code += "    v = v + a * " + num(rng) + " - b + " + num(rng) + " + 1 ;\n";
  code += "    return v + a + b ;\n}\n";
  lenlab::SourceFunction fn;
  fn.id = "jfix" + std::to_string(idx);
  fn.language = "java";
  fn.code = code;
  return fn;
}

inline std::string python_statement(lenlab::Rng& rng) {
  std::string a = num(rng), b = num(rng);
  switch (rng.below(8)) {
    case 0:
      return "    v = v * 2 + " + a + "\n";
    case 1:
      return "    if v > " + a + ":\n        v = v - a * 2 + " + b +
             " + 1\n        v = v + b\n";
    case 2:
      return "    for i in range(" + a + "):\n        v = v + i * b - " + b +
             " + 2\n";
    case 3:
      return "    while v < " + a + ":\n        v = v + a + b + " + b +
             " + 3 - 1\n";
    case 4:
      return "    if a > " + a + ":\n        for j in range(b):\n"
             "            v = v + j * 2 - " + b + " + a\n";
    case 5:
      return "    try:\n        v = v + a // (b + " + a +
             ") + 1\n    except ZeroDivisionError:\n        v = v - " + b +
             " - 1 - a - b\n";
    case 6:
      return "    # step " + a + "\n    v = v & " + b + "\n";
    default:
      return "    s = 'm" + a + "' + str(v + a + b * 2)\n";
  }
}

inline lenlab::SourceFunction make_python(std::size_t idx, lenlab::Rng& rng) {
  int stmts = 2 + int(rng.below(9));
  std::string code = "def calc" + std::to_string(idx) +
                     "(a, b):\n    v = a + " + num(rng) + "\n";
  for (int s = 0; s < stmts; ++s) code += python_statement(rng);
  code += "    if v > " + num(rng) + ":\n        v = v - a * 2 + " + num(rng) +
          " + 1\n        v = v + b\n";
  code += "    return v\n";
  lenlab::SourceFunction fn;
  fn.id = "pyfix" + std::to_string(idx);
  fn.language = "python";
  fn.code = code;
  return fn;
}

inline std::vector<lenlab::SourceFunction> java_corpus(std::size_t n,
                                                       std::uint64_t seed = 77) {
  lenlab::Rng rng(seed);
  std::vector<lenlab::SourceFunction> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(make_java(i, rng));
  return out;
}

inline std::vector<lenlab::SourceFunction> python_corpus(
    std::size_t n, std::uint64_t seed = 78) {
  lenlab::Rng rng(seed);
  std::vector<lenlab::SourceFunction> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(make_python(i, rng));
  return out;
}

}  // namespace fixtures
