#pragma once

#include <cstdint>
#include <cstdio>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace lenlab {

// ---------------------------------------------------------------------------
// Error taxonomy. Everything user-facing throws one of these; nothing in the
// library swallows them.
// ---------------------------------------------------------------------------

struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Mismatched tensor shapes or out-of-range indices.
struct ShapeError : Error { using Error::Error; };
// Invalid or inconsistent configuration values.
struct ConfigError : Error { using Error::Error; };
// A documented API precondition was violated by the caller.
struct ContractError : Error { using Error::Error; };
// Non-finite value produced where finite math is required.
struct NumericError : Error { using Error::Error; };
// Malformed input text / file contents.
struct ParseError : Error { using Error::Error; };
// Filesystem trouble: missing file, short read, bad magic.
struct IoError : Error { using Error::Error; };

// ---------------------------------------------------------------------------
// Deterministic RNG. mt19937_64 is pinned by the standard, but the
// distributions are not, so bounded ints / doubles / gaussians are derived
// here explicitly and behave identically on every platform.
// ---------------------------------------------------------------------------

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : s_(seed ? seed : 0x9e3779b97f4a7c15ull) {}

  // SplitMix64 step: solid 64-bit mixing, trivially reproducible.
  std::uint64_t next_u64() {
    std::uint64_t z = (s_ += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  // Uniform double in [0, 1): top 53 bits scaled by 2^-53.
  double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Unbiased integer in [0, n) via rejection sampling.
  std::uint64_t below(std::uint64_t n) {
    if (n == 0) throw ContractError("Rng::below: n must be positive");
    std::uint64_t threshold = (0 - n) % n;
    for (;;) {
      std::uint64_t r = next_u64();
      if (r >= threshold) return r % n;
    }
  }

  // Standard normal via Box-Muller (uses one pair per call, no caching,
  // so the stream position is predictable).
  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

  // Fisher-Yates; std::shuffle is implementation-defined, this is not.
  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = std::size_t(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::uint64_t s_;
};

// Derive a child seed from a parent seed and a stream label, so independent
// consumers (per-epoch shuffles, per-sampler streams) never share state.
inline std::uint64_t derive_seed(std::uint64_t seed, const std::string& label) {
  std::uint64_t h = 0xcbf29ce484222325ull ^ seed;
  for (unsigned char c : label) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  h ^= seed >> 32;
  h *= 0x100000001b3ull;
  return h;
}

// ---------------------------------------------------------------------------
// FNV-1a 64-bit content hash, used for tokenizer/vocab fingerprints.
// ---------------------------------------------------------------------------

inline std::uint64_t fnv1a64(const void* data, std::size_t n,
                             std::uint64_t h = 0xcbf29ce484222325ull) {
  const unsigned char* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::uint64_t fnv1a64(const std::string& s,
                             std::uint64_t h = 0xcbf29ce484222325ull) {
  return fnv1a64(s.data(), s.size(), h);
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return std::string(buf);
}

// ---------------------------------------------------------------------------
// Small file / string helpers.
// ---------------------------------------------------------------------------

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open for reading: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  if (!in.good() && !in.eof()) throw IoError("read failed: " + path);
  return ss.str();
}

inline void write_file(const std::string& path, const std::string& data) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path);
  out.write(data.data(), std::streamsize(data.size()));
  if (!out.good()) throw IoError("write failed: " + path);
}

inline std::vector<std::string> split_lines(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == '\n') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

// Collapse runs of whitespace to single spaces and trim the ends; the
// canonical form used by exact match and de-duplication.
inline std::string normalize_ws(const std::string& s) {
  std::string out;
  bool in_space = false;
  for (char c : s) {
    bool sp = (c == ' ' || c == '\t' || c == '\n' || c == '\r' ||
               c == '\f' || c == '\v');
    if (sp) {
      in_space = true;
    } else {
      if (in_space && !out.empty()) out += ' ';
      in_space = false;
      out += c;
    }
  }
  return out;
}

inline std::vector<std::string> split_ws(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' ||
        c == '\v') {
      if (!cur.empty()) {
        out.push_back(cur);
        cur.clear();
      }
    } else {
      cur += c;
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

// Banker's rounding of v to two decimals, returned as the rounded value.
// Ties (x.xx5 exactly in scaled space) go to the even hundredth.
inline double round2_half_even(double v) {
  double scaled = v * 100.0;
  double fl = std::floor(scaled);
  double frac = scaled - fl;
  double r;
  if (frac > 0.5) {
    r = fl + 1.0;
  } else if (frac < 0.5) {
    r = fl;
  } else {
    r = (std::fmod(fl, 2.0) == 0.0) ? fl : fl + 1.0;
  }
  return r / 100.0;
}

inline std::string format2(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2f", round2_half_even(v));
  // Avoid "-0.00".
  std::string s(buf);
  if (s == "-0.00") s = "0.00";
  return s;
}

}  // namespace lenlab
