#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "lenlab/common.hpp"

// Dense row-major tensors with reverse-mode differentiation on a dynamic
// per-forward tape. The scalar type is a template parameter: float is the
// working precision, double is the shadow precision used by gradient checks.
// Reductions (softmax denominators, layer-norm statistics, log-sum-exp)
// accumulate in double regardless of scalar type. Every op validates that
// its output is finite and throws NumericError otherwise.

namespace lenlab {

template <class S>
struct NodeT {
  std::vector<std::size_t> shape;
  std::vector<S> value;
  std::vector<S> grad;  // empty until needed; same length as value once used
  bool requires_grad = false;
  std::string name;
};

template <class S>
class TensorT;

// ---------------------------------------------------------------------------
// Tape: ordered backward closures for one forward pass. Single use: backward
// consumes the tape. A fresh tape is opened per training step via TapeScopeT.
// ---------------------------------------------------------------------------

template <class S>
class TapeT {
 public:
  void record(std::function<void()> fn) { steps_.push_back(std::move(fn)); }
  std::size_t size() const { return steps_.size(); }

  void backward(const TensorT<S>& loss);

 private:
  std::vector<std::function<void()>> steps_;
  bool consumed_ = false;
};

template <class S>
inline std::vector<TapeT<S>*>& active_tapes() {
  static thread_local std::vector<TapeT<S>*> stack;
  return stack;
}

template <class S>
inline TapeT<S>* current_tape() {
  auto& st = active_tapes<S>();
  return st.empty() ? nullptr : st.back();
}

template <class S>
class TapeScopeT {
 public:
  explicit TapeScopeT(TapeT<S>& tape) { active_tapes<S>().push_back(&tape); }
  ~TapeScopeT() { active_tapes<S>().pop_back(); }
  TapeScopeT(const TapeScopeT&) = delete;
  TapeScopeT& operator=(const TapeScopeT&) = delete;
};

// ---------------------------------------------------------------------------
// Tensor handle.
// ---------------------------------------------------------------------------

template <class S>
class TensorT {
 public:
  TensorT() = default;
  explicit TensorT(std::shared_ptr<NodeT<S>> n) : n_(std::move(n)) {}

  static TensorT zeros(std::vector<std::size_t> shape) {
    auto n = std::make_shared<NodeT<S>>();
    n->shape = std::move(shape);
    n->value.assign(numel_of(n->shape), S(0));
    return TensorT(n);
  }

  static TensorT from(std::vector<std::size_t> shape, std::vector<S> data) {
    if (numel_of(shape) != data.size())
      throw ShapeError("tensor init: shape " + shape_str(shape) + " needs " +
                       std::to_string(numel_of(shape)) + " values, got " +
                       std::to_string(data.size()));
    auto n = std::make_shared<NodeT<S>>();
    n->shape = std::move(shape);
    n->value = std::move(data);
    return TensorT(n);
  }

  static TensorT scalar(S v) { return from({1}, {v}); }

  static TensorT param(std::vector<std::size_t> shape, std::vector<S> data,
                       std::string name) {
    TensorT t = from(std::move(shape), std::move(data));
    t.n_->requires_grad = true;
    t.n_->grad.assign(t.numel(), S(0));
    t.n_->name = std::move(name);
    return t;
  }

  bool defined() const { return n_ != nullptr; }
  const std::vector<std::size_t>& shape() const { return node().shape; }
  std::size_t ndim() const { return node().shape.size(); }
  std::size_t numel() const { return node().value.size(); }
  std::size_t rows() const { return dim(0); }
  std::size_t cols() const { return dim(1); }
  std::size_t dim(std::size_t i) const {
    if (i >= node().shape.size())
      throw ShapeError("dim index " + std::to_string(i) + " out of range for " +
                       shape_str(node().shape));
    return node().shape[i];
  }

  // A TensorT is a handle: constness is shallow, as with shared_ptr, so
  // backward closures holding copies can still write gradients.
  std::vector<S>& data() const { return node().value; }
  std::vector<S>& grad() const {
    ensure_grad();
    return node().grad;
  }

  S at(std::size_t i) const { return node().value.at(i); }
  S at(std::size_t i, std::size_t j) const {
    return node().value.at(i * cols() + j);
  }
  S value() const {
    if (numel() != 1)
      throw ContractError("value(): tensor is not scalar, shape " +
                          shape_str(shape()));
    return node().value[0];
  }

  bool requires_grad() const { return node().requires_grad; }
  void set_requires_grad(bool v) const {
    node().requires_grad = v;
    if (v) ensure_grad();
  }
  const std::string& name() const { return node().name; }

  void zero_grad() const { node().grad.assign(numel(), S(0)); }
  void ensure_grad() const {
    if (node().grad.size() != numel()) node().grad.assign(numel(), S(0));
  }

  NodeT<S>& node() const {
    if (!n_) throw ContractError("use of undefined tensor");
    return *n_;
  }
  std::shared_ptr<NodeT<S>> handle() const { return n_; }

  static std::string shape_str(const std::vector<std::size_t>& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (i) out += ",";
      out += std::to_string(s[i]);
    }
    return out + "]";
  }

 private:
  static std::size_t numel_of(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) {
      if (d == 0) throw ShapeError("zero-sized dimension in " + shape_str(shape));
      n *= d;
    }
    return shape.empty() ? 0 : n;
  }

  std::shared_ptr<NodeT<S>> n_;
};

template <class S>
void TapeT<S>::backward(const TensorT<S>& loss) {
  if (consumed_) throw ContractError("tape already consumed by backward()");
  if (loss.numel() != 1)
    throw ContractError("backward(): loss must be scalar, shape " +
                        TensorT<S>::shape_str(loss.shape()));
  loss.node().grad.assign(1, S(1));
  for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) (*it)();
  steps_.clear();
  consumed_ = true;
}

// ---------------------------------------------------------------------------
// Internals shared by the ops.
// ---------------------------------------------------------------------------

namespace detail {

template <class S>
inline void check_finite(const char* op, const std::vector<S>& v) {
  for (S x : v)
    if (!std::isfinite(double(x)))
      throw NumericError(std::string(op) + " produced a non-finite value");
}

template <class S>
inline TensorT<S> make_out(std::vector<std::size_t> shape, std::vector<S> value,
                           bool requires_grad) {
  auto n = std::make_shared<NodeT<S>>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  n->requires_grad = requires_grad;
  return TensorT<S>(n);
}

// A backward closure runs only when a tape was active at op creation and at
// least one input wants gradients.
template <class S>
inline bool tracing(bool any_input_grad) {
  return any_input_grad && current_tape<S>() != nullptr;
}

template <class S>
inline std::vector<S>& grad_buf(const TensorT<S>& t) {
  t.ensure_grad();
  return t.node().grad;
}

inline void require_2d(const char* op, const std::vector<std::size_t>& s) {
  if (s.size() != 2)
    throw ShapeError(std::string(op) + ": expected 2-d tensor, got " +
                     TensorT<float>::shape_str(s));
}

// C[m,n] += A[m,k] * B[k,n]
template <class S>
inline void gemm_nn(S* C, const S* A, const S* B, std::size_t m, std::size_t k,
                    std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const S* a = A + i * k;
    S* c = C + i * n;
    for (std::size_t t = 0; t < k; ++t) {
      S av = a[t];
      const S* b = B + t * n;
      for (std::size_t j = 0; j < n; ++j) c[j] += av * b[j];
    }
  }
}

// C[m,n] += A[m,k] * B[n,k]^T   (B transposed through a scratch copy so the
// inner loop stays unit-stride)
template <class S>
inline void gemm_nt(S* C, const S* A, const S* B, std::size_t m, std::size_t k,
                    std::size_t n) {
  static thread_local std::vector<S> scratch;
  scratch.assign(k * n, S(0));
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t t = 0; t < k; ++t) scratch[t * n + j] = B[j * k + t];
  gemm_nn(C, A, scratch.data(), m, k, n);
}

// C[m,n] += A[k,m]^T * B[k,n]
template <class S>
inline void gemm_tn(S* C, const S* A, const S* B, std::size_t m, std::size_t k,
                    std::size_t n) {
  for (std::size_t t = 0; t < k; ++t) {
    const S* a = A + t * m;
    const S* b = B + t * n;
    for (std::size_t i = 0; i < m; ++i) {
      S av = a[i];
      S* c = C + i * n;
      for (std::size_t j = 0; j < n; ++j) c[j] += av * b[j];
    }
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise ops.
// ---------------------------------------------------------------------------

template <class S>
TensorT<S> add(const TensorT<S>& a, const TensorT<S>& b) {
  if (a.shape() != b.shape())
    throw ShapeError("add: shape mismatch " + TensorT<S>::shape_str(a.shape()) +
                     " vs " + TensorT<S>::shape_str(b.shape()));
  std::vector<S> v(a.numel());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.at(i) + b.at(i);
  detail::check_finite("add", v);
  bool rg = a.requires_grad() || b.requires_grad();
  TensorT<S> out = detail::make_out(a.shape(), std::move(v), rg);
  if (detail::tracing<S>(rg)) {
    current_tape<S>()->record([a, b, out]() mutable {
      const auto& g = out.node().grad;
      if (a.requires_grad()) {
        auto& ga = detail::grad_buf(a);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (b.requires_grad()) {
        auto& gb = detail::grad_buf(b);
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
      }
    });
  }
  return out;
}

template <class S>
TensorT<S> sub(const TensorT<S>& a, const TensorT<S>& b) {
  if (a.shape() != b.shape())
    throw ShapeError("sub: shape mismatch " + TensorT<S>::shape_str(a.shape()) +
                     " vs " + TensorT<S>::shape_str(b.shape()));
  std::vector<S> v(a.numel());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.at(i) - b.at(i);
  detail::check_finite("sub", v);
  bool rg = a.requires_grad() || b.requires_grad();
  TensorT<S> out = detail::make_out(a.shape(), std::move(v), rg);
  if (detail::tracing<S>(rg)) {
    current_tape<S>()->record([a, b, out]() mutable {
      const auto& g = out.node().grad;
      if (a.requires_grad()) {
        auto& ga = detail::grad_buf(a);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (b.requires_grad()) {
        auto& gb = detail::grad_buf(b);
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
      }
    });
  }
  return out;
}

template <class S>
TensorT<S> mul(const TensorT<S>& a, const TensorT<S>& b) {
  if (a.shape() != b.shape())
    throw ShapeError("mul: shape mismatch " + TensorT<S>::shape_str(a.shape()) +
                     " vs " + TensorT<S>::shape_str(b.shape()));
  std::vector<S> v(a.numel());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.at(i) * b.at(i);
  detail::check_finite("mul", v);
  bool rg = a.requires_grad() || b.requires_grad();
  TensorT<S> out = detail::make_out(a.shape(), std::move(v), rg);
  if (detail::tracing<S>(rg)) {
    current_tape<S>()->record([a, b, out]() mutable {
      const auto& g = out.node().grad;
      if (a.requires_grad()) {
        auto& ga = detail::grad_buf(a);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * b.at(i);
      }
      if (b.requires_grad()) {
        auto& gb = detail::grad_buf(b);
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * a.at(i);
      }
    });
  }
  return out;
}

template <class S>
TensorT<S> scale(const TensorT<S>& a, double c) {
  std::vector<S> v(a.numel());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = S(double(a.at(i)) * c);
  detail::check_finite("scale", v);
  bool rg = a.requires_grad();
  TensorT<S> out = detail::make_out(a.shape(), std::move(v), rg);
  if (detail::tracing<S>(rg)) {
    current_tape<S>()->record([a, out, c]() mutable {
      const auto& g = out.node().grad;
      auto& ga = detail::grad_buf(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += S(double(g[i]) * c);
    });
  }
  return out;
}

// X[m,n] + row vector v[n] broadcast over rows (bias add).
template <class S>
TensorT<S> add_rowvec(const TensorT<S>& x, const TensorT<S>& v) {
  detail::require_2d("add_rowvec", x.shape());
  if (v.numel() != x.cols())
    throw ShapeError("add_rowvec: vector length " + std::to_string(v.numel()) +
                     " vs " + std::to_string(x.cols()) + " columns");
  std::size_t m = x.rows(), n = x.cols();
  std::vector<S> out_v(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out_v[i * n + j] = x.at(i, j) + v.at(j);
  detail::check_finite("add_rowvec", out_v);
  bool rg = x.requires_grad() || v.requires_grad();
  TensorT<S> out = detail::make_out(x.shape(), std::move(out_v), rg);
  if (detail::tracing<S>(rg)) {
    current_tape<S>()->record([x, v, out, m, n]() mutable {
      const auto& g = out.node().grad;
      if (x.requires_grad()) {
        auto& gx = detail::grad_buf(x);
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
      }
      if (v.requires_grad()) {
        auto& gv = detail::grad_buf(v);
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) gv[j] += g[i * n + j];
      }
    });
  }
  return out;
}

template <class S>
TensorT<S> relu(const TensorT<S>& a) {
  std::vector<S> v(a.numel());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.at(i) > S(0) ? a.at(i) : S(0);
  bool rg = a.requires_grad();
  TensorT<S> out = detail::make_out(a.shape(), std::move(v), rg);
  if (detail::tracing<S>(rg)) {
    current_tape<S>()->record([a, out]() mutable {
      const auto& g = out.node().grad;
      auto& ga = detail::grad_buf(a);
      for (std::size_t i = 0; i < g.size(); ++i)
        if (a.at(i) > S(0)) ga[i] += g[i];
    });
  }
  return out;
}

template <class S>
TensorT<S> sum_all(const TensorT<S>& a) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) acc += double(a.at(i));
  std::vector<S> v{S(acc)};
  detail::check_finite("sum_all", v);
  bool rg = a.requires_grad();
  TensorT<S> out = detail::make_out({1}, std::move(v), rg);
  if (detail::tracing<S>(rg)) {
    current_tape<S>()->record([a, out]() mutable {
      S g = out.node().grad[0];
      auto& ga = detail::grad_buf(a);
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g;
    });
  }
  return out;
}

// Inverted dropout; identity when p == 0. The mask is drawn from rng at
// forward time and reused by the backward rule.
template <class S>
TensorT<S> dropout(const TensorT<S>& a, double p, Rng& rng) {
  if (p < 0.0 || p >= 1.0) throw ConfigError("dropout: p must be in [0,1)");
  if (p == 0.0) return a;
  double keep = 1.0 - p;
  auto mask = std::make_shared<std::vector<std::uint8_t>>(a.numel());
  std::vector<S> v(a.numel());
  for (std::size_t i = 0; i < v.size(); ++i) {
    bool on = rng.uniform() < keep;
    (*mask)[i] = on ? 1 : 0;
    v[i] = on ? S(double(a.at(i)) / keep) : S(0);
  }
  detail::check_finite("dropout", v);
  bool rg = a.requires_grad();
  TensorT<S> out = detail::make_out(a.shape(), std::move(v), rg);
  if (detail::tracing<S>(rg)) {
    current_tape<S>()->record([a, out, mask, keep]() mutable {
      const auto& g = out.node().grad;
      auto& ga = detail::grad_buf(a);
      for (std::size_t i = 0; i < g.size(); ++i)
        if ((*mask)[i]) ga[i] += S(double(g[i]) / keep);
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Matrix products.
// ---------------------------------------------------------------------------

template <class S>
TensorT<S> matmul(const TensorT<S>& a, const TensorT<S>& b) {
  detail::require_2d("matmul", a.shape());
  detail::require_2d("matmul", b.shape());
  if (a.cols() != b.rows())
    throw ShapeError("matmul: inner dimensions differ, " +
                     TensorT<S>::shape_str(a.shape()) + " x " +
                     TensorT<S>::shape_str(b.shape()));
  std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  std::vector<S> v(m * n, S(0));
  detail::gemm_nn(v.data(), a.data().data(), b.data().data(), m, k, n);
  detail::check_finite("matmul", v);
  bool rg = a.requires_grad() || b.requires_grad();
  TensorT<S> out = detail::make_out({m, n}, std::move(v), rg);
  if (detail::tracing<S>(rg)) {
    current_tape<S>()->record([a, b, out, m, k, n]() mutable {
      const auto& g = out.node().grad;
      if (a.requires_grad())
        detail::gemm_nt(detail::grad_buf(a).data(), g.data(), b.data().data(),
                        m, n, k);
      if (b.requires_grad())
        detail::gemm_tn(detail::grad_buf(b).data(), a.data().data(), g.data(),
                        k, m, n);
    });
  }
  return out;
}

// a[m,k] * b[n,k]^T -> [m,n]
template <class S>
TensorT<S> matmul_nt(const TensorT<S>& a, const TensorT<S>& b) {
  detail::require_2d("matmul_nt", a.shape());
  detail::require_2d("matmul_nt", b.shape());
  if (a.cols() != b.cols())
    throw ShapeError("matmul_nt: inner dimensions differ, " +
                     TensorT<S>::shape_str(a.shape()) + " x " +
                     TensorT<S>::shape_str(b.shape()) + "^T");
  std::size_t m = a.rows(), k = a.cols(), n = b.rows();
  std::vector<S> v(m * n, S(0));
  detail::gemm_nt(v.data(), a.data().data(), b.data().data(), m, k, n);
  detail::check_finite("matmul_nt", v);
  bool rg = a.requires_grad() || b.requires_grad();
  TensorT<S> out = detail::make_out({m, n}, std::move(v), rg);
  if (detail::tracing<S>(rg)) {
    current_tape<S>()->record([a, b, out, m, k, n]() mutable {
      const auto& g = out.node().grad;
      if (a.requires_grad())
        detail::gemm_nn(detail::grad_buf(a).data(), g.data(), b.data().data(),
                        m, n, k);
      if (b.requires_grad())
        detail::gemm_tn(detail::grad_buf(b).data(), g.data(), a.data().data(),
                        n, m, k);
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Column slice / concat, used to walk per-head views of [len, heads*head_dim].
// ---------------------------------------------------------------------------

template <class S>
TensorT<S> slice_cols(const TensorT<S>& x, std::size_t c0, std::size_t c1) {
  detail::require_2d("slice_cols", x.shape());
  if (c0 >= c1 || c1 > x.cols())
    throw ShapeError("slice_cols: bad range [" + std::to_string(c0) + "," +
                     std::to_string(c1) + ") for " +
                     TensorT<S>::shape_str(x.shape()));
  std::size_t m = x.rows(), n = x.cols(), w = c1 - c0;
  std::vector<S> v(m * w);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < w; ++j) v[i * w + j] = x.at(i, c0 + j);
  bool rg = x.requires_grad();
  TensorT<S> out = detail::make_out({m, w}, std::move(v), rg);
  if (detail::tracing<S>(rg)) {
    current_tape<S>()->record([x, out, m, n, w, c0]() mutable {
      const auto& g = out.node().grad;
      auto& gx = detail::grad_buf(x);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < w; ++j) gx[i * n + c0 + j] += g[i * w + j];
    });
  }
  return out;
}

template <class S>
TensorT<S> concat_cols(const std::vector<TensorT<S>>& parts) {
  if (parts.empty()) throw ContractError("concat_cols: no inputs");
  std::size_t m = parts[0].rows(), n = 0;
  bool rg = false;
  for (const auto& p : parts) {
    detail::require_2d("concat_cols", p.shape());
    if (p.rows() != m) throw ShapeError("concat_cols: row count mismatch");
    n += p.cols();
    rg = rg || p.requires_grad();
  }
  std::vector<S> v(m * n);
  std::size_t off = 0;
  for (const auto& p : parts) {
    std::size_t w = p.cols();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < w; ++j) v[i * n + off + j] = p.at(i, j);
    off += w;
  }
  TensorT<S> out = detail::make_out({m, n}, std::move(v), rg);
  if (detail::tracing<S>(rg)) {
    auto parts_copy = parts;
    current_tape<S>()->record([parts_copy, out, m, n]() mutable {
      const auto& g = out.node().grad;
      std::size_t off = 0;
      for (auto& p : parts_copy) {
        std::size_t w = p.cols();
        if (p.requires_grad()) {
          auto& gp = detail::grad_buf(p);
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < w; ++j)
              gp[i * w + j] += g[i * n + off + j];
        }
        off += w;
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Embedding lookup with optional scale (sqrt(d_model) convention).
// ---------------------------------------------------------------------------

template <class S>
TensorT<S> embedding(const TensorT<S>& table, const std::vector<int>& ids,
                     double scale_factor = 1.0) {
  detail::require_2d("embedding", table.shape());
  if (ids.empty()) throw ContractError("embedding: empty id list");
  std::size_t v_size = table.rows(), d = table.cols(), t_len = ids.size();
  std::vector<S> v(t_len * d);
  for (std::size_t t = 0; t < t_len; ++t) {
    int id = ids[t];
    if (id < 0 || std::size_t(id) >= v_size)
      throw ContractError("embedding: id " + std::to_string(id) +
                          " out of range for vocab " + std::to_string(v_size));
    for (std::size_t j = 0; j < d; ++j)
      v[t * d + j] = S(double(table.at(std::size_t(id), j)) * scale_factor);
  }
  detail::check_finite("embedding", v);
  bool rg = table.requires_grad();
  TensorT<S> out = detail::make_out({t_len, d}, std::move(v), rg);
  if (detail::tracing<S>(rg)) {
    auto ids_copy = std::make_shared<std::vector<int>>(ids);
    current_tape<S>()->record([table, out, ids_copy, d, scale_factor]() mutable {
      const auto& g = out.node().grad;
      auto& gt = detail::grad_buf(table);
      for (std::size_t t = 0; t < ids_copy->size(); ++t) {
        std::size_t id = std::size_t((*ids_copy)[t]);
        for (std::size_t j = 0; j < d; ++j)
          gt[id * d + j] += S(double(g[t * d + j]) * scale_factor);
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Softmax over the last dimension with optional additive bias and boolean
// mask (true = attend). Masked entries are excluded from the reduction and
// are exactly zero in the output; a fully-masked row is a contract error.
// ---------------------------------------------------------------------------

template <class S>
TensorT<S> softmax_lastdim(const TensorT<S>& x, const TensorT<S>* bias = nullptr,
                           const std::vector<std::uint8_t>* mask = nullptr) {
  detail::require_2d("softmax_lastdim", x.shape());
  std::size_t m = x.rows(), n = x.cols();
  if (bias && bias->shape() != x.shape())
    throw ShapeError("softmax_lastdim: bias shape " +
                     TensorT<S>::shape_str(bias->shape()) + " vs scores " +
                     TensorT<S>::shape_str(x.shape()));
  if (mask && mask->size() != m * n)
    throw ShapeError("softmax_lastdim: mask size mismatch");
  std::vector<S> v(m * n, S(0));
  for (std::size_t i = 0; i < m; ++i) {
    double mx = -1e300;
    bool any = false;
    for (std::size_t j = 0; j < n; ++j) {
      if (mask && !(*mask)[i * n + j]) continue;
      double s = double(x.at(i, j)) + (bias ? double(bias->at(i, j)) : 0.0);
      if (!any || s > mx) mx = s;
      any = true;
    }
    if (!any)
      throw ContractError("softmax_lastdim: fully masked row " +
                          std::to_string(i));
    double denom = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (mask && !(*mask)[i * n + j]) continue;
      double s = double(x.at(i, j)) + (bias ? double(bias->at(i, j)) : 0.0);
      double e = std::exp(s - mx);
      v[i * n + j] = S(e);
      denom += e;
    }
    for (std::size_t j = 0; j < n; ++j) {
      if (mask && !(*mask)[i * n + j]) continue;
      v[i * n + j] = S(double(v[i * n + j]) / denom);
    }
  }
  detail::check_finite("softmax_lastdim", v);
  bool bias_rg = bias && bias->requires_grad();
  bool rg = x.requires_grad() || bias_rg;
  TensorT<S> out = detail::make_out(x.shape(), std::move(v), rg);
  if (detail::tracing<S>(rg)) {
    TensorT<S> bias_t = bias ? *bias : TensorT<S>();
    std::shared_ptr<std::vector<std::uint8_t>> mask_copy;
    if (mask) mask_copy = std::make_shared<std::vector<std::uint8_t>>(*mask);
    current_tape<S>()->record([x, bias_t, out, mask_copy, m, n]() mutable {
      const auto& g = out.node().grad;
      const auto& p = out.node().value;
      for (std::size_t i = 0; i < m; ++i) {
        double dot = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
          if (mask_copy && !(*mask_copy)[i * n + j]) continue;
          dot += double(g[i * n + j]) * double(p[i * n + j]);
        }
        for (std::size_t j = 0; j < n; ++j) {
          if (mask_copy && !(*mask_copy)[i * n + j]) continue;
          S ds = S(double(p[i * n + j]) * (double(g[i * n + j]) - dot));
          if (x.requires_grad()) detail::grad_buf(x)[i * n + j] += ds;
          if (bias_t.defined() && bias_t.requires_grad())
            detail::grad_buf(bias_t)[i * n + j] += ds;
        }
      }
    });
  }
  return out;
}

template <class S>
TensorT<S> softmax_lastdim(const TensorT<S>& x,
                           const std::vector<std::uint8_t>& mask) {
  return softmax_lastdim<S>(x, nullptr, &mask);
}

// ---------------------------------------------------------------------------
// Row-wise layer norm with affine gain/bias; statistics in double.
// ---------------------------------------------------------------------------

template <class S>
TensorT<S> layer_norm(const TensorT<S>& x, const TensorT<S>& gain,
                      const TensorT<S>& bias, double eps = 1e-5) {
  detail::require_2d("layer_norm", x.shape());
  std::size_t m = x.rows(), n = x.cols();
  if (gain.numel() != n || bias.numel() != n)
    throw ShapeError("layer_norm: gain/bias must match last dim " +
                     std::to_string(n));
  std::vector<S> v(m * n);
  auto xhat = std::make_shared<std::vector<S>>(m * n);
  auto inv_sd = std::make_shared<std::vector<double>>(m);
  for (std::size_t i = 0; i < m; ++i) {
    double mean = 0.0;
    for (std::size_t j = 0; j < n; ++j) mean += double(x.at(i, j));
    mean /= double(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      double d = double(x.at(i, j)) - mean;
      var += d * d;
    }
    var /= double(n);
    double inv = 1.0 / std::sqrt(var + eps);
    (*inv_sd)[i] = inv;
    for (std::size_t j = 0; j < n; ++j) {
      double h = (double(x.at(i, j)) - mean) * inv;
      (*xhat)[i * n + j] = S(h);
      v[i * n + j] = S(h * double(gain.at(j)) + double(bias.at(j)));
    }
  }
  detail::check_finite("layer_norm", v);
  bool rg = x.requires_grad() || gain.requires_grad() || bias.requires_grad();
  TensorT<S> out = detail::make_out(x.shape(), std::move(v), rg);
  if (detail::tracing<S>(rg)) {
    current_tape<S>()->record([x, gain, bias, out, xhat, inv_sd, m, n]() mutable {
      const auto& g = out.node().grad;
      for (std::size_t i = 0; i < m; ++i) {
        if (x.requires_grad()) {
          double sum_dy = 0.0, sum_dyh = 0.0;
          for (std::size_t j = 0; j < n; ++j) {
            double dy = double(g[i * n + j]) * double(gain.at(j));
            sum_dy += dy;
            sum_dyh += dy * double((*xhat)[i * n + j]);
          }
          sum_dy /= double(n);
          sum_dyh /= double(n);
          auto& gx = detail::grad_buf(x);
          for (std::size_t j = 0; j < n; ++j) {
            double dy = double(g[i * n + j]) * double(gain.at(j));
            double h = double((*xhat)[i * n + j]);
            gx[i * n + j] += S((dy - sum_dy - h * sum_dyh) * (*inv_sd)[i]);
          }
        }
        if (gain.requires_grad()) {
          auto& gg = detail::grad_buf(gain);
          for (std::size_t j = 0; j < n; ++j)
            gg[j] += S(double(g[i * n + j]) * double((*xhat)[i * n + j]));
        }
        if (bias.requires_grad()) {
          auto& gb = detail::grad_buf(bias);
          for (std::size_t j = 0; j < n; ++j) gb[j] += g[i * n + j];
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Summed token-level cross entropy from logits [T, V] against integer labels.
// Callers divide by the token count for a mean. Log-sum-exp in double.
// ---------------------------------------------------------------------------

template <class S>
TensorT<S> cross_entropy_sum(const TensorT<S>& logits,
                             const std::vector<int>& labels) {
  detail::require_2d("cross_entropy_sum", logits.shape());
  std::size_t t_len = logits.rows(), vocab = logits.cols();
  if (labels.size() != t_len)
    throw ShapeError("cross_entropy_sum: " + std::to_string(labels.size()) +
                     " labels for " + std::to_string(t_len) + " rows");
  auto probs = std::make_shared<std::vector<S>>(t_len * vocab);
  double loss = 0.0;
  for (std::size_t t = 0; t < t_len; ++t) {
    int label = labels[t];
    if (label < 0 || std::size_t(label) >= vocab)
      throw ContractError("cross_entropy_sum: label " + std::to_string(label) +
                          " out of range for vocab " + std::to_string(vocab));
    double mx = -1e300;
    for (std::size_t j = 0; j < vocab; ++j)
      mx = std::max(mx, double(logits.at(t, j)));
    double denom = 0.0;
    for (std::size_t j = 0; j < vocab; ++j)
      denom += std::exp(double(logits.at(t, j)) - mx);
    double lse = mx + std::log(denom);
    for (std::size_t j = 0; j < vocab; ++j)
      (*probs)[t * vocab + j] = S(std::exp(double(logits.at(t, j)) - lse));
    loss += lse - double(logits.at(t, std::size_t(label)));
  }
  std::vector<S> v{S(loss)};
  detail::check_finite("cross_entropy_sum", v);
  bool rg = logits.requires_grad();
  TensorT<S> out = detail::make_out({1}, std::move(v), rg);
  if (detail::tracing<S>(rg)) {
    auto labels_copy = std::make_shared<std::vector<int>>(labels);
    current_tape<S>()->record(
        [logits, out, probs, labels_copy, t_len, vocab]() mutable {
          S g = out.node().grad[0];
          auto& gl = detail::grad_buf(logits);
          for (std::size_t t = 0; t < t_len; ++t) {
            for (std::size_t j = 0; j < vocab; ++j)
              gl[t * vocab + j] += g * (*probs)[t * vocab + j];
            gl[t * vocab + std::size_t((*labels_copy)[t])] -= g;
          }
        });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Rotary position transform over [len, heads*head_dim], dim pairs (2i, 2i+1)
// within each head rotated by pos * theta_base^(-2i/head_dim). decay_sign
// 0 is the plain rotation; +1/-1 compose the query/key decay zeta^(+-pos/
// scale_base) with zeta_i = ((2i/head_dim)+gamma)/(1+gamma). Angles and
// scales are computed in double.
// ---------------------------------------------------------------------------

template <class S>
TensorT<S> rope(const TensorT<S>& x, const std::vector<int>& positions,
                std::size_t head_dim, double theta_base, int decay_sign = 0,
                double gamma = 0.4, double scale_base = 512.0) {
  detail::require_2d("rope", x.shape());
  if (head_dim == 0 || head_dim % 2 != 0)
    throw ConfigError("rope: head_dim must be positive and even, got " +
                      std::to_string(head_dim));
  if (x.cols() % head_dim != 0)
    throw ShapeError("rope: width " + std::to_string(x.cols()) +
                     " not a multiple of head_dim " + std::to_string(head_dim));
  if (positions.size() != x.rows())
    throw ShapeError("rope: positions length " +
                     std::to_string(positions.size()) + " vs rows " +
                     std::to_string(x.rows()));
  if (decay_sign != 0 && gamma <= 0.0)
    throw ConfigError("rope: xpos gamma must be positive");
  for (int p : positions)
    if (p < 0) throw ContractError("rope: negative position");

  std::size_t t_len = x.rows(), width = x.cols(), half = head_dim / 2;
  std::size_t heads = width / head_dim;
  // Per (row, pair): cos, sin, scale.
  auto cs = std::make_shared<std::vector<double>>(t_len * half * 3);
  for (std::size_t t = 0; t < t_len; ++t) {
    double pos = double(positions[t]);
    for (std::size_t i = 0; i < half; ++i) {
      double expo = -2.0 * double(i) / double(head_dim);
      double theta = std::pow(theta_base, expo);
      double ang = pos * theta;
      double sc = 1.0;
      if (decay_sign != 0) {
        double zeta = ((2.0 * double(i) / double(head_dim)) + gamma) / (1.0 + gamma);
        sc = std::pow(zeta, double(decay_sign) * pos / scale_base);
      }
      (*cs)[(t * half + i) * 3 + 0] = std::cos(ang);
      (*cs)[(t * half + i) * 3 + 1] = std::sin(ang);
      (*cs)[(t * half + i) * 3 + 2] = sc;
    }
  }
  std::vector<S> v(t_len * width);
  for (std::size_t t = 0; t < t_len; ++t)
    for (std::size_t h = 0; h < heads; ++h)
      for (std::size_t i = 0; i < half; ++i) {
        double c = (*cs)[(t * half + i) * 3 + 0];
        double s = (*cs)[(t * half + i) * 3 + 1];
        double sc = (*cs)[(t * half + i) * 3 + 2];
        std::size_t j0 = t * width + h * head_dim + 2 * i;
        double x0 = double(x.at(j0)), x1 = double(x.at(j0 + 1));
        v[j0] = S(sc * (c * x0 - s * x1));
        v[j0 + 1] = S(sc * (s * x0 + c * x1));
      }
  detail::check_finite("rope", v);
  bool rg = x.requires_grad();
  TensorT<S> out = detail::make_out(x.shape(), std::move(v), rg);
  if (detail::tracing<S>(rg)) {
    current_tape<S>()->record(
        [x, out, cs, t_len, heads, half, head_dim, width]() mutable {
          const auto& g = out.node().grad;
          auto& gx = detail::grad_buf(x);
          for (std::size_t t = 0; t < t_len; ++t)
            for (std::size_t h = 0; h < heads; ++h)
              for (std::size_t i = 0; i < half; ++i) {
                double c = (*cs)[(t * half + i) * 3 + 0];
                double s = (*cs)[(t * half + i) * 3 + 1];
                double sc = (*cs)[(t * half + i) * 3 + 2];
                std::size_t j0 = t * width + h * head_dim + 2 * i;
                double g0 = double(g[j0]), g1 = double(g[j0 + 1]);
                gx[j0] += S(sc * (c * g0 + s * g1));
                gx[j0 + 1] += S(sc * (-s * g0 + c * g1));
              }
        });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Gather a [len_q, len_k] bias grid for one head out of a learned
// [num_buckets, n_heads] table; gradients scatter-add back into the table.
// ---------------------------------------------------------------------------

template <class S>
TensorT<S> bucket_gather(const TensorT<S>& table, const std::vector<int>& buckets,
                         std::size_t head, std::size_t len_q, std::size_t len_k) {
  detail::require_2d("bucket_gather", table.shape());
  if (head >= table.cols())
    throw ShapeError("bucket_gather: head " + std::to_string(head) +
                     " out of range for " + std::to_string(table.cols()));
  if (buckets.size() != len_q * len_k)
    throw ShapeError("bucket_gather: bucket grid size mismatch");
  std::size_t n_heads = table.cols();
  std::vector<S> v(len_q * len_k);
  for (std::size_t i = 0; i < buckets.size(); ++i) {
    int b = buckets[i];
    if (b < 0 || std::size_t(b) >= table.rows())
      throw ContractError("bucket_gather: bucket " + std::to_string(b) +
                          " out of range");
    v[i] = table.at(std::size_t(b), head);
  }
  detail::check_finite("bucket_gather", v);
  bool rg = table.requires_grad();
  TensorT<S> out = detail::make_out({len_q, len_k}, std::move(v), rg);
  if (detail::tracing<S>(rg)) {
    auto buckets_copy = std::make_shared<std::vector<int>>(buckets);
    current_tape<S>()->record([table, out, buckets_copy, head, n_heads]() mutable {
      const auto& g = out.node().grad;
      auto& gt = detail::grad_buf(table);
      for (std::size_t i = 0; i < buckets_copy->size(); ++i)
        gt[std::size_t((*buckets_copy)[i]) * n_heads + head] += g[i];
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Gradient checking: central finite differences against the tape.
// Returns max over elements of |analytic - numeric| / max(|analytic|,
// |numeric|, 1e-8).
// ---------------------------------------------------------------------------

template <class S>
double grad_check_many(const std::function<TensorT<S>()>& f,
                       std::vector<TensorT<S>> xs, double h = 1e-3) {
  std::vector<std::vector<S>> analytic;
  for (auto& x : xs) {
    x.set_requires_grad(true);
    x.zero_grad();
  }
  {
    TapeT<S> tape;
    TapeScopeT<S> scope(tape);
    TensorT<S> loss = f();
    tape.backward(loss);
  }
  for (auto& x : xs) analytic.push_back(x.grad());
  double max_err = 0.0;
  for (std::size_t xi = 0; xi < xs.size(); ++xi) {
    auto& x = xs[xi];
    for (std::size_t i = 0; i < x.numel(); ++i) {
      S orig = x.data()[i];
      x.data()[i] = S(double(orig) + h);
      double fp = double(f().value());
      x.data()[i] = S(double(orig) - h);
      double fm = double(f().value());
      x.data()[i] = orig;
      double numeric = (fp - fm) / (2.0 * h);
      double a = double(analytic[xi][i]);
      double err = std::fabs(a - numeric) /
                   std::max({std::fabs(a), std::fabs(numeric), 1e-8});
      max_err = std::max(max_err, err);
    }
  }
  return max_err;
}

template <class S>
double grad_check(const std::function<TensorT<S>()>& f, const TensorT<S>& x,
                  double h = 1e-3) {
  return grad_check_many<S>(f, {x}, h);
}

using Tensor = TensorT<float>;
using Tape = TapeT<float>;
using TapeScope = TapeScopeT<float>;

}  // namespace lenlab
