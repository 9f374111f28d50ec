#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "lenlab/posenc.hpp"

using namespace lenlab;

namespace {

template <class S>
TensorT<S> random_vec(std::size_t len, std::size_t d, Rng& rng) {
  std::vector<S> v(len * d);
  for (auto& x : v) x = S(rng.uniform(-1.0, 1.0));
  return TensorT<S>::from({len, d}, std::move(v));
}

double dot_rows(const TensorT<double>& a, std::size_t i, const TensorT<double>& b,
                std::size_t j) {
  double s = 0;
  for (std::size_t c = 0; c < a.cols(); ++c)
    s += a.at(i, c) * b.at(j, c);
  return s;
}

}  // namespace

TEST_CASE("sinusoidal table values") {
  auto tab = sinusoidal_table<double>(8, 4);

  // Position 0 alternates sin 0 = 0, cos 0 = 1.
  REQUIRE(tab.at(0, 0) == 0.0);
  REQUIRE(tab.at(0, 1) == 1.0);
  REQUIRE(tab.at(0, 2) == 0.0);
  REQUIRE(tab.at(0, 3) == 1.0);

  // Position 1, first pair: angle exactly 1.
  REQUIRE_THAT(tab.at(1, 0), Catch::Matchers::WithinAbs(0.8415, 1e-4));
  REQUIRE_THAT(tab.at(1, 1), Catch::Matchers::WithinAbs(0.5403, 1e-4));

  auto big = sinusoidal_table<double>(64, 32);
  for (std::size_t i = 0; i < big.numel(); ++i) {
    REQUIRE(big.at(i) <= 1.0);
    REQUIRE(big.at(i) >= -1.0);
  }

  REQUIRE_THROWS_AS(sinusoidal_table<double>(8, 5), ConfigError);
}

TEST_CASE("rotary dot products depend only on relative position") {
  Rng rng(71);
  std::size_t d = 16;
  int checked = 0;
  for (int rep = 0; rep < 100; ++rep) {
    auto q = random_vec<double>(1, d, rng);
    auto k = random_vec<double>(1, d, rng);
    int m = int(rng.below(32)), n = int(rng.below(32));
    int s = int(rng.below(64));
    auto qm = rotary_apply(q, {m});
    auto kn = rotary_apply(k, {n});
    auto qms = rotary_apply(q, {m + s});
    auto kns = rotary_apply(k, {n + s});
    double base = dot_rows(qm, 0, kn, 0);
    double shifted = dot_rows(qms, 0, kns, 0);
    REQUIRE_THAT(shifted, Catch::Matchers::WithinAbs(base, 1e-5));

    // Rotations preserve the norm.
    REQUIRE_THAT(dot_rows(qm, 0, qm, 0),
                 Catch::Matchers::WithinAbs(dot_rows(q, 0, q, 0), 1e-5));
    ++checked;
  }
  REQUIRE(checked == 100);
}

TEST_CASE("xpos identity at position zero and relative-shift property") {
  Rng rng(73);
  std::size_t d = 16;
  auto q = random_vec<double>(1, d, rng);
  auto q0 = xpos_apply(q, {0}, true);
  for (std::size_t i = 0; i < d; ++i)
    REQUIRE_THAT(q0.at(i), Catch::Matchers::WithinAbs(q.at(i), 1e-12));

  for (int rep = 0; rep < 100; ++rep) {
    auto qq = random_vec<double>(1, d, rng);
    auto kk = random_vec<double>(1, d, rng);
    int n = int(rng.below(40));
    int m = n + int(rng.below(40));  // decoder-style m >= n
    int s = int(rng.below(50));
    double base = dot_rows(xpos_apply(qq, {m}, true), 0,
                           xpos_apply(kk, {n}, false), 0);
    double shifted = dot_rows(xpos_apply(qq, {m + s}, true), 0,
                              xpos_apply(kk, {n + s}, false), 0);
    double scale = std::max({std::fabs(base), std::fabs(shifted), 1.0});
    REQUIRE(std::fabs(base - shifted) / scale < 1e-5);
  }
}

TEST_CASE("xpos decay envelope strictly decreases with distance") {
  std::size_t d = 16;
  double gamma = 0.4;
  double prev = 2.0;
  for (double dist : {0.0, 4.0, 16.0, 64.0}) {
    double env = xpos_envelope(d, gamma, dist);
    REQUIRE(env < prev);
    REQUIRE(env > 0.0);
    prev = env;
  }
  REQUIRE(xpos_envelope(d, gamma, 0.0) == 1.0);

  // Per dimension pair, xpos composes exactly zeta_i^((m-n)/scale_base) on
  // top of the plain rotation.
  Rng rng(79);
  auto q = random_vec<double>(1, d, rng);
  auto k = random_vec<double>(1, d, rng);
  int m = 37, n = 12;
  auto qr = rotary_apply(q, {m});
  auto kr = rotary_apply(k, {n});
  auto qx = xpos_apply(q, {m}, true);
  auto kx = xpos_apply(k, {n}, false);
  auto zetas = xpos_zetas(d, gamma);
  for (std::size_t i = 0; i < d / 2; ++i) {
    double plain = qr.at(2 * i) * kr.at(2 * i) + qr.at(2 * i + 1) * kr.at(2 * i + 1);
    double decayed = qx.at(2 * i) * kx.at(2 * i) + qx.at(2 * i + 1) * kx.at(2 * i + 1);
    double factor = std::pow(zetas[i], double(m - n) / 512.0);
    REQUIRE_THAT(decayed, Catch::Matchers::WithinAbs(plain * factor, 1e-9));
  }
}

TEST_CASE("alibi slopes") {
  auto s8 = alibi_slopes(8);
  REQUIRE(s8.size() == 8);
  for (int h = 0; h < 8; ++h)
    REQUIRE_THAT(s8[std::size_t(h)],
                 Catch::Matchers::WithinAbs(std::pow(2.0, -(h + 1)), 1e-15));

  auto s1 = alibi_slopes(1);
  REQUIRE(s1.size() == 1);
  REQUIRE_THAT(s1[0], Catch::Matchers::WithinAbs(std::pow(2.0, -8.0), 1e-15));

  for (int n : {2, 4, 6, 8, 12, 16}) {
    auto s = alibi_slopes(n);
    for (std::size_t h = 0; h < s.size(); ++h) {
      REQUIRE(s[h] > 0.0);
      if (h) REQUIRE(s[h] < s[h - 1]);
    }
  }
  REQUIRE_THROWS_AS(alibi_slopes(0), ConfigError);
}

TEST_CASE("alibi bias grids") {
  auto causal = alibi_bias<double>(6, 6, 4, BiasMode::Causal);
  auto slopes = alibi_slopes(4);
  for (std::size_t h = 0; h < 4; ++h) {
    for (std::size_t i = 0; i < 6; ++i) {
      REQUIRE(causal.at(h, i, i) == 0.0);  // same token: no reduction
      for (std::size_t j = 0; j <= i; ++j) {
        double expect = slopes[h] * (double(j) - double(i));
        REQUIRE_THAT(causal.at(h, i, j), Catch::Matchers::WithinAbs(expect, 1e-12));
        REQUIRE(causal.at(h, i, j) <= 0.0);
        if (j > 0)
          REQUIRE(causal.at(h, i, j - 1) < causal.at(h, i, j));  // farther = smaller
      }
    }
    // (i=3, j=1) -> slope * (1-3) = -2 * slope.
    REQUIRE_THAT(causal.at(h, 3, 1),
                 Catch::Matchers::WithinAbs(-2.0 * slopes[h], 1e-12));
  }

  auto bi = alibi_bias<double>(5, 5, 3, BiasMode::Bidirectional);
  for (std::size_t h = 0; h < 3; ++h)
    for (std::size_t i = 0; i < 5; ++i)
      for (std::size_t j = 0; j < 5; ++j) {
        REQUIRE(bi.at(h, i, j) == bi.at(h, j, i));
        REQUIRE(bi.at(h, i, j) <= 0.0);
      }
}

TEST_CASE("t5 bucket mapping") {
  REQUIRE(t5_bucket(0, true, 32, 128) == 0);
  REQUIRE(t5_bucket(0, false, 32, 128) == 0);

  // Distances at and beyond max_distance share the terminal bucket.
  REQUIRE(t5_bucket(-128, true, 32, 128) == t5_bucket(-256, true, 32, 128));
  REQUIRE(t5_bucket(128, true, 32, 128) == t5_bucket(256, true, 32, 128));
  REQUIRE(t5_bucket(-128, false, 32, 128) == t5_bucket(-256, false, 32, 128));

  // Monotone within one direction.
  for (bool bidir : {true, false}) {
    int prev = -1;
    for (int d = 0; d <= 512; ++d) {
      int b = t5_bucket(-d, bidir, 32, 128);
      REQUIRE(b >= prev);
      prev = b;
    }
  }

  // Bidirectional: positive side occupies the upper half of the budget.
  for (int d = 1; d <= 512; ++d) {
    REQUIRE(t5_bucket(d, true, 32, 128) >= 16);
    REQUIRE(t5_bucket(-d, true, 32, 128) < 16);
  }

  REQUIRE_THROWS_AS(t5_bucket(0, true, 2, 128), ConfigError);
  REQUIRE_THROWS_AS(t5_bucket(0, true, 32, 10), ConfigError);
}

TEST_CASE("t5 bias grids") {
  // Zero table: position-free attention.
  auto zero_table = TensorT<double>::from({32, 2}, std::vector<double>(64, 0.0));
  auto zb = t5_bias(6, 6, zero_table, BiasMode::Causal);
  for (std::size_t h = 0; h < 2; ++h)
    for (std::size_t i = 0; i < 6; ++i)
      for (std::size_t j = 0; j < 6; ++j) REQUIRE(zb.at(h, i, j) == 0.0);

  // Relative scheme: bias[h][i][j] == bias[h][i+s][j+s] exactly.
  Rng rng(83);
  std::vector<double> tv(32 * 2);
  for (auto& x : tv) x = rng.uniform(-1.0, 1.0);
  auto table = TensorT<double>::from({32, 2}, tv);
  auto b = t5_bias(8, 8, table, BiasMode::Bidirectional);
  for (std::size_t h = 0; h < 2; ++h)
    for (std::size_t s = 1; s < 4; ++s)
      for (std::size_t i = 0; i + s < 8; ++i)
        for (std::size_t j = 0; j + s < 8; ++j)
          REQUIRE(b.at(h, i, j) == b.at(h, i + s, j + s));

  // Gradients flow into the table.
  auto param = TensorT<double>::param({32, 2}, tv, "bias_table");
  double err = grad_check<double>(
      [&]() {
        auto bias = t5_bias(5, 5, param, BiasMode::Causal);
        TensorT<double> total;
        for (std::size_t h = 0; h < 2; ++h) {
          auto sq = sum_all(mul(bias.per_head[h], bias.per_head[h]));
          total = h == 0 ? sq : add(total, sq);
        }
        return total;
      },
      param);
  REQUIRE(err < 1e-3);
}

TEST_CASE("injection points and scheme naming") {
  REQUIRE(injection_point(PosKind::Sinusoidal) == Injection::InputEmbeddings);
  REQUIRE(injection_point(PosKind::XPos) == Injection::AttentionBlocks);
  REQUIRE(injection_point(PosKind::ALiBi) == Injection::AttentionBlocks);
  REQUIRE(injection_point(PosKind::T5Bias) == Injection::AttentionBlocks);
  for (auto kind : {PosKind::Sinusoidal, PosKind::XPos, PosKind::ALiBi,
                    PosKind::T5Bias})
    REQUIRE(pos_kind_from_name(pos_kind_name(kind)) == kind);
  REQUIRE_THROWS_AS(pos_kind_from_name("learned"), ConfigError);
}

TEST_CASE("relative score grids are shift invariant, sinusoidal is not") {
  Rng rng(89);
  std::size_t L = 12, d = 16;

  // xpos: full q/k grids at offsets 0 and 7 produce the same score grid.
  auto q = random_vec<double>(L, d, rng);
  auto k = random_vec<double>(L, d, rng);
  auto grid_at = [&](int off) {
    std::vector<int> pos(L);
    for (std::size_t i = 0; i < L; ++i) pos[i] = off + int(i);
    auto qq = xpos_apply(q, pos, true);
    auto kk = xpos_apply(k, pos, false);
    return matmul_nt(qq, kk);
  };
  auto g0 = grid_at(0), g7 = grid_at(7);
  for (std::size_t i = 0; i < g0.numel(); ++i)
    REQUIRE_THAT(g7.at(i), Catch::Matchers::WithinAbs(g0.at(i), 1e-5));

  // Sinusoidal additive embeddings must break shift invariance.
  auto tab = sinusoidal_table<double>(64, d);
  auto sin_grid = [&](std::size_t off) {
    std::vector<double> qv(L * d), kv(L * d);
    for (std::size_t i = 0; i < L; ++i)
      for (std::size_t c = 0; c < d; ++c) {
        qv[i * d + c] = q.at(i, c) + tab.at(off + i, c);
        kv[i * d + c] = k.at(i, c) + tab.at(off + i, c);
      }
    return matmul_nt(TensorT<double>::from({L, d}, qv),
                     TensorT<double>::from({L, d}, kv));
  };
  auto s0 = sin_grid(0), s7 = sin_grid(7);
  double max_dev = 0;
  for (std::size_t i = 0; i < s0.numel(); ++i)
    max_dev = std::max(max_dev, std::fabs(s0.at(i) - s7.at(i)));
  REQUIRE(max_dev > 1e-3);
}
