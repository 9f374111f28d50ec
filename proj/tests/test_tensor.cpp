#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <functional>
#include <vector>

#include "lenlab/tensor.hpp"

using namespace lenlab;

namespace {

template <class S>
TensorT<S> random_tensor(std::vector<std::size_t> shape, Rng& rng,
                         double lo = -1.0, double hi = 1.0) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  std::vector<S> v(n);
  for (auto& x : v) x = S(rng.uniform(lo, hi));
  return TensorT<S>::param(std::move(shape), std::move(v), "x");
}

}  // namespace

TEST_CASE("matmul basics") {
  // Identity passthrough.
  auto I = Tensor::from({2, 2}, {1, 0, 0, 1});
  auto X = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
  auto Y = matmul(I, X);
  for (std::size_t i = 0; i < 6; ++i) REQUIRE(Y.at(i) == X.at(i));

  // Hand-multiplied 2x2 by 2x1.
  auto A = Tensor::from({2, 2}, {1, 2, 3, 4});
  auto B = Tensor::from({2, 1}, {1, 1});
  auto C = matmul(A, B);
  REQUIRE(C.at(0, 0) == 3.0f);
  REQUIRE(C.at(1, 0) == 7.0f);

  REQUIRE_THROWS_AS(matmul(A, Tensor::from({3, 1}, {1, 2, 3})), ShapeError);
}

TEST_CASE("matmul gradient vs finite differences") {
  Rng rng(11);
  auto A = random_tensor<double>({3, 4}, rng);
  auto B = random_tensor<double>({4, 2}, rng);
  double err = grad_check_many<double>(
      [&]() { return sum_all(matmul(A, B)); }, {A, B});
  REQUIRE(err < 1e-4);
}

TEST_CASE("matmul associativity") {
  Rng rng(17);
  auto A = random_tensor<float>({3, 4}, rng);
  auto B = random_tensor<float>({4, 5}, rng);
  auto C = random_tensor<float>({5, 2}, rng);
  auto left = matmul(matmul(A, B), C);
  auto right = matmul(A, matmul(B, C));
  for (std::size_t i = 0; i < left.numel(); ++i)
    REQUIRE(std::fabs(double(left.at(i)) - double(right.at(i))) < 1e-4);
}

TEST_CASE("softmax values") {
  auto x = Tensor::from({1, 3}, {1, 2, 3});
  auto y = softmax_lastdim(x);
  REQUIRE_THAT(double(y.at(0)), Catch::Matchers::WithinAbs(0.0900, 1e-3));
  REQUIRE_THAT(double(y.at(1)), Catch::Matchers::WithinAbs(0.2447, 1e-3));
  REQUIRE_THAT(double(y.at(2)), Catch::Matchers::WithinAbs(0.6652, 1e-3));

  // Uniform scores give uniform weights.
  auto u = softmax_lastdim(Tensor::from({1, 4}, {0.5f, 0.5f, 0.5f, 0.5f}));
  for (std::size_t j = 0; j < 4; ++j)
    REQUIRE_THAT(double(u.at(j)), Catch::Matchers::WithinAbs(0.25, 1e-6));

  // Masked middle entry drops out entirely.
  std::vector<std::uint8_t> mask{1, 0, 1};
  auto m = softmax_lastdim(Tensor::from({1, 3}, {0, 0, 0}), mask);
  REQUIRE_THAT(double(m.at(0)), Catch::Matchers::WithinAbs(0.5, 1e-6));
  REQUIRE(m.at(1) == 0.0f);
  REQUIRE_THAT(double(m.at(2)), Catch::Matchers::WithinAbs(0.5, 1e-6));

  std::vector<std::uint8_t> all_off{0, 0, 0};
  REQUIRE_THROWS_AS(
      softmax_lastdim(Tensor::from({1, 3}, {0, 0, 0}), all_off),
      ContractError);
}

TEST_CASE("softmax rows sum to one and shift invariance") {
  Rng rng(23);
  for (int rep = 0; rep < 100; ++rep) {
    std::size_t n = 2 + rng.below(6);
    auto x = random_tensor<float>({2, n}, rng, -4.0, 4.0);
    auto y = softmax_lastdim(x);
    for (std::size_t i = 0; i < 2; ++i) {
      double s = 0;
      for (std::size_t j = 0; j < n; ++j) s += double(y.at(i, j));
      REQUIRE_THAT(s, Catch::Matchers::WithinAbs(1.0, 1e-6));
    }
    // Adding a constant to a whole row leaves the distribution unchanged.
    double c = rng.uniform(-3.0, 3.0);
    std::vector<float> shifted(x.data());
    for (std::size_t j = 0; j < n; ++j) shifted[j] += float(c);
    auto y2 = softmax_lastdim(Tensor::from({2, n}, shifted));
    for (std::size_t j = 0; j < n; ++j)
      REQUIRE_THAT(double(y2.at(0, j)),
                   Catch::Matchers::WithinAbs(double(y.at(0, j)), 1e-5));
  }
}

TEST_CASE("layer_norm values and gradient") {
  auto gain = TensorT<double>::from({3}, {1, 1, 1});
  auto bias = TensorT<double>::from({3}, {0, 0, 0});
  auto x = TensorT<double>::from({1, 3}, {1, 2, 3});
  auto y = layer_norm(x, gain, bias);
  REQUIRE_THAT(y.at(0), Catch::Matchers::WithinAbs(-1.2247, 1e-3));
  REQUIRE_THAT(y.at(1), Catch::Matchers::WithinAbs(0.0, 1e-6));
  REQUIRE_THAT(y.at(2), Catch::Matchers::WithinAbs(1.2247, 1e-3));

  // Constant row collapses to the bias (eps absorbs zero variance).
  auto c = layer_norm(TensorT<double>::from({1, 3}, {5, 5, 5}), gain, bias);
  for (std::size_t j = 0; j < 3; ++j)
    REQUIRE_THAT(c.at(j), Catch::Matchers::WithinAbs(0.0, 1e-9));

  Rng rng(31);
  auto xx = random_tensor<double>({4, 6}, rng);
  auto g2 = random_tensor<double>({6}, rng, 0.5, 1.5);
  auto b2 = random_tensor<double>({6}, rng);
  double err = grad_check_many<double>(
      [&]() { return sum_all(layer_norm(xx, g2, b2)); }, {xx, g2, b2}, 1e-4);
  REQUIRE(err < 1e-4);
}

TEST_CASE("backward basics") {
  auto x = Tensor::param({4}, {1, 2, 3, 4}, "x");

  {
    Tape tape;
    TapeScope scope(tape);
    auto loss = sum_all(x);
    tape.backward(loss);
  }
  for (std::size_t i = 0; i < 4; ++i) REQUIRE(x.grad()[i] == 1.0f);

  x.zero_grad();
  {
    Tape tape;
    TapeScope scope(tape);
    auto loss = sum_all(mul(x, x));
    tape.backward(loss);
  }
  for (std::size_t i = 0; i < 4; ++i)
    REQUIRE_THAT(double(x.grad()[i]),
                 Catch::Matchers::WithinAbs(2.0 * double(x.at(i)), 1e-6));

  // Non-scalar loss rejected; tape is single use.
  Tape tape;
  TapeScope scope(tape);
  auto y = mul(x, x);
  REQUIRE_THROWS_AS(tape.backward(y), ContractError);
  auto loss = sum_all(y);
  tape.backward(loss);
  REQUIRE_THROWS_AS(tape.backward(loss), ContractError);
}

TEST_CASE("grad_check on elementwise ops, 100+ random cases") {
  Rng rng(41);
  int cases = 0;
  for (int rep = 0; rep < 30; ++rep) {
    std::size_t m = 1 + rng.below(4), n = 1 + rng.below(5);
    auto a = random_tensor<double>({m, n}, rng);
    auto b = random_tensor<double>({m, n}, rng);
    auto v = random_tensor<double>({n}, rng);

    REQUIRE(grad_check_many<double>(
                [&]() { return sum_all(mul(add(a, b), sub(a, b))); }, {a, b}) <
            1e-4);
    ++cases;
    REQUIRE(grad_check_many<double>(
                [&]() { return sum_all(add_rowvec(a, v)); }, {a, v}) < 1e-4);
    ++cases;
    REQUIRE(grad_check<double>(
                [&]() { return sum_all(relu(scale(a, 1.7))); }, a) < 1e-3);
    ++cases;
    REQUIRE(grad_check<double>(
                [&]() { return scale(sum_all(mul(a, a)), 0.5); }, a) < 1e-4);
    ++cases;
  }
  REQUIRE(cases >= 100);
}

TEST_CASE("grad_check on softmax, slice, concat, gather") {
  Rng rng(43);
  for (int rep = 0; rep < 25; ++rep) {
    std::size_t m = 1 + rng.below(3), n = 2 + rng.below(5);
    auto x = random_tensor<double>({m, n}, rng, -2.0, 2.0);
    auto bias = random_tensor<double>({m, n}, rng, -0.5, 0.5);
    auto w = random_tensor<double>({n, 2}, rng);

    REQUIRE(grad_check_many<double>(
                [&]() {
                  auto p = softmax_lastdim(x, &bias);
                  return sum_all(matmul(p, w));
                },
                {x, bias, w}) < 1e-4);

    if (n >= 3) {
      REQUIRE(grad_check<double>(
                  [&]() {
                    auto left = slice_cols(x, 0, 2);
                    auto right = slice_cols(x, 2, n);
                    auto back = concat_cols<double>({left, right});
                    return sum_all(mul(back, back));
                  },
                  x) < 1e-4);
    }
  }

  auto table = random_tensor<double>({8, 3}, rng);
  std::vector<int> buckets{0, 1, 2, 3, 4, 5, 6, 7, 0, 1, 2, 3};
  REQUIRE(grad_check<double>(
              [&]() {
                auto g = bucket_gather(table, buckets, 1, 3, 4);
                return sum_all(mul(g, g));
              },
              table) < 1e-4);
}

TEST_CASE("grad_check on cross entropy and embedding") {
  Rng rng(47);
  for (int rep = 0; rep < 10; ++rep) {
    std::size_t t = 1 + rng.below(4), v = 3 + rng.below(6);
    auto logits = random_tensor<double>({t, v}, rng, -2.0, 2.0);
    std::vector<int> labels(t);
    for (auto& l : labels) l = int(rng.below(v));
    REQUIRE(grad_check<double>(
                [&]() { return cross_entropy_sum(logits, labels); }, logits) <
            1e-4);

    auto table = random_tensor<double>({6, 4}, rng);
    std::vector<int> ids{0, 3, 5, 3};
    REQUIRE(grad_check<double>(
                [&]() {
                  auto e = embedding(table, ids, 2.0);
                  return sum_all(mul(e, e));
                },
                table) < 1e-4);
  }
}

TEST_CASE("grad_check error scales with h^2 on softmax cross entropy") {
  Rng rng(53);
  auto logits = random_tensor<double>({3, 7}, rng, -2.0, 2.0);
  std::vector<int> labels{1, 4, 6};
  auto f = std::function<TensorT<double>()>(
      [&]() { return cross_entropy_sum(logits, labels); });
  double coarse = grad_check<double>(f, logits, 1e-2);
  double fine = grad_check<double>(f, logits, 1e-3);
  REQUIRE(fine < 1e-4);
  REQUIRE(coarse < 1e-2);
  // Central differences: halving h quarters the truncation error; a decade
  // drop in h should shrink the error by far more than 10x unless it is
  // already at rounding noise.
  if (coarse > 1e-7) REQUIRE(fine < coarse);
}

TEST_CASE("deliberately wrong backward is caught") {
  // A "square" whose backward pretends the derivative is 3x.
  auto broken_square = [](const TensorT<double>& a) {
    std::vector<double> v(a.numel());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.at(i) * a.at(i);
    auto out = TensorT<double>::from(a.shape(), v);
    out.set_requires_grad(true);
    if (current_tape<double>()) {
      current_tape<double>()->record([a, out]() mutable {
        auto& ga = a.grad();
        const auto& g = out.node().grad;
        for (std::size_t i = 0; i < g.size(); ++i)
          ga[i] += g[i] * 3.0 * a.at(i);
      });
    }
    return out;
  };
  Rng rng(59);
  auto x = random_tensor<double>({5}, rng, 0.5, 2.0);
  double err =
      grad_check<double>([&]() { return sum_all(broken_square(x)); }, x);
  REQUIRE(err > 1e-1);
}

TEST_CASE("rope rotation properties") {
  Rng rng(61);
  std::size_t head_dim = 8;
  std::vector<int> pos{0, 1, 5, 13};

  // Position 0 is the identity.
  auto q = random_tensor<double>({4, head_dim}, rng);
  auto r0 = rope(q, {0, 0, 0, 0}, head_dim, 10000.0);
  for (std::size_t i = 0; i < q.numel(); ++i)
    REQUIRE_THAT(r0.at(i), Catch::Matchers::WithinAbs(q.at(i), 1e-12));

  // Norm preservation.
  auto r = rope(q, pos, head_dim, 10000.0);
  for (std::size_t i = 0; i < 4; ++i) {
    double n0 = 0, n1 = 0;
    for (std::size_t j = 0; j < head_dim; ++j) {
      n0 += double(q.at(i, j)) * double(q.at(i, j));
      n1 += double(r.at(i, j)) * double(r.at(i, j));
    }
    REQUIRE_THAT(std::sqrt(n1), Catch::Matchers::WithinAbs(std::sqrt(n0), 1e-9));
  }

  // Gradient through the rotation (plain and with xpos decay).
  REQUIRE(grad_check<double>(
              [&]() {
                auto y = rope(q, pos, head_dim, 10000.0);
                return sum_all(mul(y, y));
              },
              q) < 1e-4);
  REQUIRE(grad_check<double>(
              [&]() {
                auto y = rope(q, pos, head_dim, 10000.0, +1, 0.4, 512.0);
                return sum_all(mul(y, y));
              },
              q) < 1e-4);

  REQUIRE_THROWS_AS(rope(q, pos, 7, 10000.0), ConfigError);
  REQUIRE_THROWS_AS(rope(q, pos, head_dim, 10000.0, +1, -0.1), ConfigError);
}

TEST_CASE("finite violations throw instead of propagating") {
  auto big = Tensor::from({1, 2}, {3e38f, 3e38f});
  REQUIRE_THROWS_AS(add(big, big), NumericError);
  REQUIRE_THROWS_AS(mul(big, big), NumericError);
}

TEST_CASE("deterministic forward given a seed") {
  auto run = []() {
    Rng rng(97);
    auto a = random_tensor<float>({8, 8}, rng);
    auto b = random_tensor<float>({8, 8}, rng);
    auto y = softmax_lastdim(matmul(a, b));
    return y.data();
  };
  auto r1 = run();
  auto r2 = run();
  REQUIRE(r1 == r2);
}

TEST_CASE("dropout identity at p=0 and unbiased scaling") {
  Rng rng(101);
  auto x = random_tensor<float>({4, 4}, rng);
  auto y = dropout(x, 0.0, rng);
  REQUIRE(y.data() == x.data());

  Rng rng2(103);
  auto ones = Tensor::from({1, 10000}, std::vector<float>(10000, 1.0f));
  auto d = dropout(ones, 0.3, rng2);
  double mean = 0;
  for (std::size_t i = 0; i < d.numel(); ++i) mean += double(d.at(i));
  mean /= double(d.numel());
  REQUIRE_THAT(mean, Catch::Matchers::WithinAbs(1.0, 0.05));
}
