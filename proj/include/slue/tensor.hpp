#pragma once

// Minimal dense-tensor engine with reverse-mode automatic differentiation.
// Dynamic define-by-run tape: every op records a backprop closure on its
// result node when gradients are enabled and any input requires them.
// Templated on the scalar type; training runs in float, gradient checks
// instantiate the same code in double.

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "slue/common.hpp"

namespace slue {

inline thread_local bool g_grad_enabled = true;

struct NoGradGuard {
  bool prev;
  NoGradGuard() : prev(g_grad_enabled) { g_grad_enabled = false; }
  ~NoGradGuard() { g_grad_enabled = prev; }
};

inline std::string shape_str(const std::vector<int>& s) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << "]";
  return os.str();
}

template <typename T>
class Tensor {
 public:
  struct Node {
    std::vector<int> shape;
    std::vector<T> value;
    std::vector<T> grad;  // allocated iff requires_grad
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backprop;  // adds node.grad into parents
  };

  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node> n) : n_(std::move(n)) {}

  static Tensor zeros(std::vector<int> shape, bool requires_grad = false) {
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->value.assign(numel_of(n->shape), T(0));
    n->requires_grad = requires_grad;
    if (requires_grad) n->grad.assign(n->value.size(), T(0));
    return Tensor(n);
  }

  static Tensor from(std::vector<int> shape, std::vector<T> data,
                     bool requires_grad = false) {
    if (numel_of(shape) != data.size())
      throw ShapeError("tensor data size " + std::to_string(data.size()) +
                       " does not match shape " + shape_str(shape));
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->value = std::move(data);
    n->requires_grad = requires_grad;
    if (requires_grad) n->grad.assign(n->value.size(), T(0));
    return Tensor(n);
  }

  static Tensor scalar(T v) { return from({1}, {v}); }

  static Tensor randn(std::vector<int> shape, Rng& rng, T stddev,
                      bool requires_grad = true) {
    auto t = zeros(std::move(shape), requires_grad);
    for (auto& x : t.n_->value) x = static_cast<T>(rng.normal()) * stddev;
    return t;
  }

  bool defined() const { return n_ != nullptr; }
  const std::vector<int>& shape() const { return n_->shape; }
  std::size_t numel() const { return n_->value.size(); }
  std::vector<T>& data() { return n_->value; }
  const std::vector<T>& data() const { return n_->value; }
  std::vector<T>& grad() { return n_->grad; }
  const std::vector<T>& grad() const { return n_->grad; }
  bool requires_grad() const { return n_->requires_grad; }
  std::shared_ptr<Node> node() const { return n_; }

  int rows() const { return n_->shape.size() >= 1 ? n_->shape[0] : 1; }
  int cols() const {
    return n_->shape.size() >= 2 ? n_->shape[1] : (n_->shape.empty() ? 1 : 1);
  }
  T item() const {
    if (numel() != 1) throw ShapeError("item() on non-scalar " + shape_str(shape()));
    return n_->value[0];
  }

  void zero_grad() {
    if (n_->requires_grad) std::fill(n_->grad.begin(), n_->grad.end(), T(0));
  }

  // Deep copy of the value; detached from any graph.
  Tensor clone_detached() const {
    return from(n_->shape, n_->value, false);
  }

  static std::size_t numel_of(const std::vector<int>& shape) {
    std::size_t n = 1;
    for (int d : shape) {
      if (d <= 0) throw ShapeError("non-positive dimension in " + shape_str(shape));
      n *= static_cast<std::size_t>(d);
    }
    return n;
  }

 private:
  std::shared_ptr<Node> n_;
};

namespace detail {

template <typename T>
Tensor<T> make_result(std::vector<int> shape,
                      std::vector<std::shared_ptr<typename Tensor<T>::Node>> parents) {
  bool rg = false;
  if (g_grad_enabled)
    for (auto& p : parents)
      if (p->requires_grad) rg = true;
  auto out = Tensor<T>::zeros(std::move(shape), rg);
  if (rg) out.node()->parents = std::move(parents);
  return out;
}

template <typename T>
void require_2d(const Tensor<T>& t, const char* what) {
  if (t.shape().size() != 2)
    throw ShapeError(std::string(what) + ": expected 2-d tensor, got " +
                     shape_str(t.shape()));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// core ops

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_2d(a, "matmul lhs");
  detail::require_2d(b, "matmul rhs");
  const int m = a.shape()[0], k = a.shape()[1], k2 = b.shape()[0], n = b.shape()[1];
  if (k != k2)
    throw ShapeError("matmul: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  auto out = detail::make_result<T>({m, n}, {a.node(), b.node()});
  const T* A = a.data().data();
  const T* B = b.data().data();
  T* C = out.data().data();
  for (int i = 0; i < m; ++i) {
    T* ci = C + static_cast<std::size_t>(i) * n;
    const T* ai = A + static_cast<std::size_t>(i) * k;
    for (int p = 0; p < k; ++p) {
      const T av = ai[p];
      if (av == T(0)) continue;
      const T* bp = B + static_cast<std::size_t>(p) * n;
      for (int j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
  if (out.requires_grad()) {
    auto an = a.node();
    auto bn = b.node();
    out.node()->backprop = [an, bn, m, k, n](typename Tensor<T>::Node& o) {
      const T* G = o.grad.data();
      if (an->requires_grad) {
        // dA += G * B^T
        T* dA = an->grad.data();
        const T* B2 = bn->value.data();
        for (int i = 0; i < m; ++i)
          for (int p = 0; p < k; ++p) {
            T s = 0;
            const T* gi = G + static_cast<std::size_t>(i) * n;
            const T* bp = B2 + static_cast<std::size_t>(p) * n;
            for (int j = 0; j < n; ++j) s += gi[j] * bp[j];
            dA[static_cast<std::size_t>(i) * k + p] += s;
          }
      }
      if (bn->requires_grad) {
        // dB += A^T * G
        T* dB = bn->grad.data();
        const T* A2 = an->value.data();
        for (int i = 0; i < m; ++i) {
          const T* ai = A2 + static_cast<std::size_t>(i) * k;
          const T* gi = G + static_cast<std::size_t>(i) * n;
          for (int p = 0; p < k; ++p) {
            const T av = ai[p];
            if (av == T(0)) continue;
            T* dbp = dB + static_cast<std::size_t>(p) * n;
            for (int j = 0; j < n; ++j) dbp[j] += av * gi[j];
          }
        }
      }
    };
  }
  return out;
}

// add: equal shapes, or b broadcast over the rows of a ([m,n] + [n] / [1,n]).
template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  const bool same = a.shape() == b.shape();
  bool row_bcast = false;
  if (!same && a.shape().size() == 2) {
    const int n = a.shape()[1];
    if ((b.shape().size() == 1 && b.shape()[0] == n) ||
        (b.shape().size() == 2 && b.shape()[0] == 1 && b.shape()[1] == n))
      row_bcast = true;
  }
  if (!same && !row_bcast)
    throw ShapeError("add: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  auto out = detail::make_result<T>(a.shape(), {a.node(), b.node()});
  const std::size_t total = a.numel(), bn_sz = b.numel();
  for (std::size_t i = 0; i < total; ++i)
    out.data()[i] = a.data()[i] + b.data()[i % bn_sz];
  if (out.requires_grad()) {
    auto an = a.node();
    auto bn = b.node();
    out.node()->backprop = [an, bn, total, bn_sz](typename Tensor<T>::Node& o) {
      if (an->requires_grad)
        for (std::size_t i = 0; i < total; ++i) an->grad[i] += o.grad[i];
      if (bn->requires_grad)
        for (std::size_t i = 0; i < total; ++i) bn->grad[i % bn_sz] += o.grad[i];
    };
  }
  return out;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T c) {
  auto out = detail::make_result<T>(a.shape(), {a.node()});
  for (std::size_t i = 0; i < a.numel(); ++i) out.data()[i] = a.data()[i] * c;
  if (out.requires_grad()) {
    auto an = a.node();
    out.node()->backprop = [an, c](typename Tensor<T>::Node& o) {
      if (an->requires_grad)
        for (std::size_t i = 0; i < o.grad.size(); ++i) an->grad[i] += c * o.grad[i];
    };
  }
  return out;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape())
    throw ShapeError("mul: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  auto out = detail::make_result<T>(a.shape(), {a.node(), b.node()});
  for (std::size_t i = 0; i < a.numel(); ++i)
    out.data()[i] = a.data()[i] * b.data()[i];
  if (out.requires_grad()) {
    auto an = a.node();
    auto bn = b.node();
    out.node()->backprop = [an, bn](typename Tensor<T>::Node& o) {
      for (std::size_t i = 0; i < o.grad.size(); ++i) {
        if (an->requires_grad) an->grad[i] += bn->value[i] * o.grad[i];
        if (bn->requires_grad) bn->grad[i] += an->value[i] * o.grad[i];
      }
    };
  }
  return out;
}

template <typename T>
Tensor<T> tanh_t(const Tensor<T>& a) {
  auto out = detail::make_result<T>(a.shape(), {a.node()});
  for (std::size_t i = 0; i < a.numel(); ++i) out.data()[i] = std::tanh(a.data()[i]);
  if (out.requires_grad()) {
    auto an = a.node();
    out.node()->backprop = [an](typename Tensor<T>::Node& o) {
      if (!an->requires_grad) return;
      for (std::size_t i = 0; i < o.grad.size(); ++i)
        an->grad[i] += (T(1) - o.value[i] * o.value[i]) * o.grad[i];
    };
  }
  return out;
}

template <typename T>
Tensor<T> sigmoid_t(const Tensor<T>& a) {
  auto out = detail::make_result<T>(a.shape(), {a.node()});
  for (std::size_t i = 0; i < a.numel(); ++i)
    out.data()[i] = T(1) / (T(1) + std::exp(-a.data()[i]));
  if (out.requires_grad()) {
    auto an = a.node();
    out.node()->backprop = [an](typename Tensor<T>::Node& o) {
      if (!an->requires_grad) return;
      for (std::size_t i = 0; i < o.grad.size(); ++i)
        an->grad[i] += o.value[i] * (T(1) - o.value[i]) * o.grad[i];
    };
  }
  return out;
}

// softmax over all elements (used for attention weights)
template <typename T>
Tensor<T> softmax_flat(const Tensor<T>& a) {
  auto out = detail::make_result<T>(a.shape(), {a.node()});
  const std::size_t n = a.numel();
  T mx = a.data()[0];
  for (std::size_t i = 1; i < n; ++i) mx = std::max(mx, a.data()[i]);
  T z = 0;
  for (std::size_t i = 0; i < n; ++i) z += (out.data()[i] = std::exp(a.data()[i] - mx));
  for (std::size_t i = 0; i < n; ++i) out.data()[i] /= z;
  if (out.requires_grad()) {
    auto an = a.node();
    out.node()->backprop = [an, n](typename Tensor<T>::Node& o) {
      if (!an->requires_grad) return;
      T dot = 0;
      for (std::size_t i = 0; i < n; ++i) dot += o.grad[i] * o.value[i];
      for (std::size_t i = 0; i < n; ++i)
        an->grad[i] += o.value[i] * (o.grad[i] - dot);
    };
  }
  return out;
}

// log-softmax over all elements (logits are [1,V] rows here)
template <typename T>
Tensor<T> log_softmax_flat(const Tensor<T>& a) {
  auto out = detail::make_result<T>(a.shape(), {a.node()});
  const std::size_t n = a.numel();
  T mx = a.data()[0];
  for (std::size_t i = 1; i < n; ++i) mx = std::max(mx, a.data()[i]);
  T z = 0;
  for (std::size_t i = 0; i < n; ++i) z += std::exp(a.data()[i] - mx);
  const T lz = mx + std::log(z);
  for (std::size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] - lz;
  if (out.requires_grad()) {
    auto an = a.node();
    out.node()->backprop = [an, n](typename Tensor<T>::Node& o) {
      if (!an->requires_grad) return;
      T gsum = 0;
      for (std::size_t i = 0; i < n; ++i) gsum += o.grad[i];
      for (std::size_t i = 0; i < n; ++i)
        an->grad[i] += o.grad[i] - std::exp(o.value[i]) * gsum;
    };
  }
  return out;
}

// negative log-likelihood of one target index over flat log-probabilities
template <typename T>
Tensor<T> nll(const Tensor<T>& logp, int target) {
  if (target < 0 || static_cast<std::size_t>(target) >= logp.numel())
    throw ShapeError("nll: target " + std::to_string(target) + " out of range for " +
                     shape_str(logp.shape()));
  auto out = detail::make_result<T>({1}, {logp.node()});
  out.data()[0] = -logp.data()[target];
  if (out.requires_grad()) {
    auto an = logp.node();
    out.node()->backprop = [an, target](typename Tensor<T>::Node& o) {
      if (an->requires_grad) an->grad[target] -= o.grad[0];
    };
  }
  return out;
}

// flat 1-d concat; result is a [1,n] row
template <typename T>
Tensor<T> concat1d(const Tensor<T>& a, const Tensor<T>& b) {
  const int na = static_cast<int>(a.numel()), nb = static_cast<int>(b.numel());
  auto out = detail::make_result<T>({1, na + nb}, {a.node(), b.node()});
  std::copy(a.data().begin(), a.data().end(), out.data().begin());
  std::copy(b.data().begin(), b.data().end(), out.data().begin() + na);
  if (out.requires_grad()) {
    auto an = a.node();
    auto bn = b.node();
    out.node()->backprop = [an, bn, na, nb](typename Tensor<T>::Node& o) {
      if (an->requires_grad)
        for (int i = 0; i < na; ++i) an->grad[i] += o.grad[i];
      if (bn->requires_grad)
        for (int i = 0; i < nb; ++i) bn->grad[i] += o.grad[na + i];
    };
  }
  return out;
}

// contiguous slice of the flattened data; result is a [1,len] row
template <typename T>
Tensor<T> slice_flat(const Tensor<T>& a, int start, int len) {
  if (start < 0 || len <= 0 || static_cast<std::size_t>(start + len) > a.numel())
    throw ShapeError("slice: [" + std::to_string(start) + "," +
                     std::to_string(start + len) + ") out of " + shape_str(a.shape()));
  auto out = detail::make_result<T>({1, len}, {a.node()});
  std::copy(a.data().begin() + start, a.data().begin() + start + len,
            out.data().begin());
  if (out.requires_grad()) {
    auto an = a.node();
    out.node()->backprop = [an, start, len](typename Tensor<T>::Node& o) {
      if (!an->requires_grad) return;
      for (int i = 0; i < len; ++i) an->grad[start + i] += o.grad[i];
    };
  }
  return out;
}

// stack row vectors [1,d] into a [T,d] matrix
template <typename T>
Tensor<T> stack_rows(const std::vector<Tensor<T>>& rows) {
  if (rows.empty()) throw ShapeError("stack_rows: empty input");
  const int d = static_cast<int>(rows[0].numel());
  std::vector<std::shared_ptr<typename Tensor<T>::Node>> parents;
  parents.reserve(rows.size());
  for (auto& r : rows) {
    if (static_cast<int>(r.numel()) != d)
      throw ShapeError("stack_rows: inconsistent row widths");
    parents.push_back(r.node());
  }
  auto out = detail::make_result<T>({static_cast<int>(rows.size()), d}, parents);
  for (std::size_t t = 0; t < rows.size(); ++t)
    std::copy(rows[t].data().begin(), rows[t].data().end(),
              out.data().begin() + t * d);
  if (out.requires_grad()) {
    auto ps = out.node()->parents;
    out.node()->backprop = [ps, d](typename Tensor<T>::Node& o) {
      for (std::size_t t = 0; t < ps.size(); ++t) {
        if (!ps[t]->requires_grad) continue;
        for (int i = 0; i < d; ++i)
          ps[t]->grad[i] += o.grad[t * d + i];
      }
    };
  }
  return out;
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
  detail::require_2d(a, "transpose");
  const int m = a.shape()[0], n = a.shape()[1];
  auto out = detail::make_result<T>({n, m}, {a.node()});
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      out.data()[static_cast<std::size_t>(j) * m + i] =
          a.data()[static_cast<std::size_t>(i) * n + j];
  if (out.requires_grad()) {
    auto an = a.node();
    out.node()->backprop = [an, m, n](typename Tensor<T>::Node& o) {
      if (!an->requires_grad) return;
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
          an->grad[static_cast<std::size_t>(i) * n + j] +=
              o.grad[static_cast<std::size_t>(j) * m + i];
    };
  }
  return out;
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, std::vector<int> shape) {
  if (Tensor<T>::numel_of(shape) != a.numel())
    throw ShapeError("reshape: " + shape_str(a.shape()) + " -> " + shape_str(shape));
  auto out = detail::make_result<T>(std::move(shape), {a.node()});
  out.data() = a.data();
  if (out.requires_grad()) {
    auto an = a.node();
    out.node()->backprop = [an](typename Tensor<T>::Node& o) {
      if (!an->requires_grad) return;
      for (std::size_t i = 0; i < o.grad.size(); ++i) an->grad[i] += o.grad[i];
    };
  }
  return out;
}

// one row of a [V,d] matrix as [1,d] (embedding lookup)
template <typename T>
Tensor<T> take_row(const Tensor<T>& a, int row) {
  detail::require_2d(a, "take_row");
  const int m = a.shape()[0], d = a.shape()[1];
  if (row < 0 || row >= m)
    throw ShapeError("take_row: row " + std::to_string(row) + " out of " +
                     shape_str(a.shape()));
  return slice_flat(a, row * d, d);
}

// [C,H,W] -> [H, C*W]: one row per time step with channels flattened,
// bridging the conv stack and the recurrent layers.
template <typename T>
Tensor<T> channels_to_rows(const Tensor<T>& x) {
  if (x.shape().size() != 3) throw ShapeError("channels_to_rows: input must be [C,H,W]");
  const int c = x.shape()[0], h = x.shape()[1], w = x.shape()[2];
  auto out = detail::make_result<T>({h, c * w}, {x.node()});
  for (int ch = 0; ch < c; ++ch)
    for (int t = 0; t < h; ++t)
      for (int f = 0; f < w; ++f)
        out.data()[(static_cast<std::size_t>(t) * c + ch) * w + f] =
            x.data()[(static_cast<std::size_t>(ch) * h + t) * w + f];
  if (out.requires_grad()) {
    auto xn = x.node();
    out.node()->backprop = [xn, c, h, w](typename Tensor<T>::Node& o) {
      if (!xn->requires_grad) return;
      for (int ch = 0; ch < c; ++ch)
        for (int t = 0; t < h; ++t)
          for (int f = 0; f < w; ++f)
            xn->grad[(static_cast<std::size_t>(ch) * h + t) * w + f] +=
                o.grad[(static_cast<std::size_t>(t) * c + ch) * w + f];
    };
  }
  return out;
}

// ---------------------------------------------------------------------------
// conv2d over [C,H,W] with kernel [Co,Ci,kh,kw], explicit stride/padding

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b,
                 int sh, int sw, int ph, int pw) {
  if (x.shape().size() != 3) throw ShapeError("conv2d: input must be [C,H,W]");
  if (w.shape().size() != 4) throw ShapeError("conv2d: kernel must be [Co,Ci,kh,kw]");
  const int ci = x.shape()[0], h = x.shape()[1], wd = x.shape()[2];
  const int co = w.shape()[0], ci2 = w.shape()[1], kh = w.shape()[2], kw = w.shape()[3];
  if (ci != ci2)
    throw ShapeError("conv2d: input channels " + shape_str(x.shape()) +
                     " vs kernel " + shape_str(w.shape()));
  if (b.numel() != static_cast<std::size_t>(co))
    throw ShapeError("conv2d: bias size mismatch");
  const int ho = (h + 2 * ph - kh) / sh + 1;
  const int wo = (wd + 2 * pw - kw) / sw + 1;
  if (ho <= 0 || wo <= 0) throw DataError("conv2d: input too short for kernel");
  auto out = detail::make_result<T>({co, ho, wo}, {x.node(), w.node(), b.node()});
  const T* X = x.data().data();
  const T* W = w.data().data();
  T* Y = out.data().data();
  auto xat = [&](int c, int i, int j) -> T {
    if (i < 0 || i >= h || j < 0 || j >= wd) return T(0);
    return X[(static_cast<std::size_t>(c) * h + i) * wd + j];
  };
  for (int oc = 0; oc < co; ++oc)
    for (int oi = 0; oi < ho; ++oi)
      for (int oj = 0; oj < wo; ++oj) {
        T s = b.data()[oc];
        for (int c = 0; c < ci; ++c)
          for (int u = 0; u < kh; ++u)
            for (int v = 0; v < kw; ++v)
              s += W[((static_cast<std::size_t>(oc) * ci + c) * kh + u) * kw + v] *
                   xat(c, oi * sh - ph + u, oj * sw - pw + v);
        Y[(static_cast<std::size_t>(oc) * ho + oi) * wo + oj] = s;
      }
  if (out.requires_grad()) {
    auto xn = x.node();
    auto wn = w.node();
    auto bn = b.node();
    out.node()->backprop = [=](typename Tensor<T>::Node& o) {
      const T* G = o.grad.data();
      for (int oc = 0; oc < co; ++oc)
        for (int oi = 0; oi < ho; ++oi)
          for (int oj = 0; oj < wo; ++oj) {
            const T g = G[(static_cast<std::size_t>(oc) * ho + oi) * wo + oj];
            if (g == T(0)) continue;
            if (bn->requires_grad) bn->grad[oc] += g;
            for (int c = 0; c < ci; ++c)
              for (int u = 0; u < kh; ++u)
                for (int v = 0; v < kw; ++v) {
                  const int i = oi * sh - ph + u, j = oj * sw - pw + v;
                  if (i < 0 || i >= h || j < 0 || j >= wd) continue;
                  const std::size_t xi =
                      (static_cast<std::size_t>(c) * h + i) * wd + j;
                  const std::size_t wi =
                      ((static_cast<std::size_t>(oc) * ci + c) * kh + u) * kw + v;
                  if (wn->requires_grad) wn->grad[wi] += g * xn->value[xi];
                  if (xn->requires_grad) xn->grad[xi] += g * wn->value[wi];
                }
          }
    };
  }
  return out;
}

// ---------------------------------------------------------------------------
// batch norm over [C,H,W]: statistics per channel across H*W.
// running_mean / running_var are plain (non-grad) tensors mutated in
// training mode; inference mode uses them read-only.

template <typename T>
Tensor<T> batch_norm(const Tensor<T>& x, const Tensor<T>& gamma,
                     const Tensor<T>& beta, Tensor<T>& running_mean,
                     Tensor<T>& running_var, bool training,
                     T momentum = T(0.1), T eps = T(1e-5)) {
  if (x.shape().size() != 3) throw ShapeError("batch_norm: input must be [C,H,W]");
  const int c = x.shape()[0];
  const std::size_t n = static_cast<std::size_t>(x.shape()[1]) * x.shape()[2];
  if (gamma.numel() != static_cast<std::size_t>(c) ||
      beta.numel() != static_cast<std::size_t>(c) ||
      running_mean.numel() != static_cast<std::size_t>(c) ||
      running_var.numel() != static_cast<std::size_t>(c))
    throw ShapeError("batch_norm: parameter size mismatch for " + shape_str(x.shape()));
  auto out = detail::make_result<T>(x.shape(), {x.node(), gamma.node(), beta.node()});
  std::vector<T> mean(c), invstd(c);
  for (int ch = 0; ch < c; ++ch) {
    const T* xc = x.data().data() + ch * n;
    if (training) {
      T mu = 0;
      for (std::size_t i = 0; i < n; ++i) mu += xc[i];
      mu /= static_cast<T>(n);
      T var = 0;
      for (std::size_t i = 0; i < n; ++i) var += (xc[i] - mu) * (xc[i] - mu);
      var /= static_cast<T>(n);
      mean[ch] = mu;
      invstd[ch] = T(1) / std::sqrt(var + eps);
      running_mean.data()[ch] = (T(1) - momentum) * running_mean.data()[ch] + momentum * mu;
      running_var.data()[ch] = (T(1) - momentum) * running_var.data()[ch] + momentum * var;
    } else {
      mean[ch] = running_mean.data()[ch];
      invstd[ch] = T(1) / std::sqrt(running_var.data()[ch] + eps);
    }
    T* yc = out.data().data() + ch * n;
    const T g = gamma.data()[ch], bt = beta.data()[ch];
    for (std::size_t i = 0; i < n; ++i)
      yc[i] = g * (xc[i] - mean[ch]) * invstd[ch] + bt;
  }
  if (out.requires_grad()) {
    auto xn = x.node();
    auto gn = gamma.node();
    auto bn2 = beta.node();
    out.node()->backprop = [xn, gn, bn2, mean, invstd, c, n,
                            training](typename Tensor<T>::Node& o) {
      for (int ch = 0; ch < c; ++ch) {
        const T* xc = xn->value.data() + ch * n;
        const T* gc = o.grad.data() + ch * n;
        const T g = gn->value[ch];
        T sum_dy = 0, sum_dy_xhat = 0;
        for (std::size_t i = 0; i < n; ++i) {
          const T xhat = (xc[i] - mean[ch]) * invstd[ch];
          sum_dy += gc[i];
          sum_dy_xhat += gc[i] * xhat;
        }
        if (gn->requires_grad) gn->grad[ch] += sum_dy_xhat;
        if (bn2->requires_grad) bn2->grad[ch] += sum_dy;
        if (xn->requires_grad) {
          T* dxc = xn->grad.data() + ch * n;
          if (training) {
            const T inv_n = T(1) / static_cast<T>(n);
            for (std::size_t i = 0; i < n; ++i) {
              const T xhat = (xc[i] - mean[ch]) * invstd[ch];
              dxc[i] += g * invstd[ch] *
                        (gc[i] - inv_n * sum_dy - xhat * inv_n * sum_dy_xhat);
            }
          } else {
            for (std::size_t i = 0; i < n; ++i) dxc[i] += g * invstd[ch] * gc[i];
          }
        }
      }
    };
  }
  return out;
}

// ---------------------------------------------------------------------------
// backward

// Reverse traversal of the recorded tape rooted at a scalar loss.
// Intermediate (non-leaf) gradients are reset before the sweep, so repeated
// backward calls accumulate only into leaf (parameter) gradients.
template <typename T>
void backward(const Tensor<T>& loss) {
  if (loss.numel() != 1)
    throw std::invalid_argument("backward: loss must be scalar, got " +
                                shape_str(loss.shape()));
  if (!loss.requires_grad()) return;
  using Node = typename Tensor<T>::Node;
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  // iterative post-order DFS
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.push_back({loss.node().get(), 0});
  seen.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    if (idx < node->parents.size()) {
      Node* p = node->parents[idx++].get();
      if (p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.push_back({p, 0});
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  for (Node* n : order)
    if (!n->parents.empty())
      std::fill(n->grad.begin(), n->grad.end(), T(0));
  loss.node()->grad[0] = T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it)
    if ((*it)->backprop) (*it)->backprop(**it);
}

// ---------------------------------------------------------------------------
// gradient check: analytic backward vs central finite differences

template <typename T>
T grad_check(const std::function<Tensor<T>()>& f, std::vector<Tensor<T>> params,
             T eps) {
  if (eps <= T(0)) throw std::invalid_argument("grad_check: eps must be positive");
  for (auto& p : params) p.zero_grad();
  auto loss = f();
  if (!std::isfinite(static_cast<double>(loss.item())))
    throw NumericError("grad_check: non-finite loss");
  backward(loss);
  std::vector<std::vector<T>> analytic;
  for (auto& p : params) analytic.push_back(p.grad());
  T max_rel = 0;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    auto& p = params[pi];
    for (std::size_t i = 0; i < p.numel(); ++i) {
      const T orig = p.data()[i];
      T lp, lm;
      {
        NoGradGuard ng;
        p.data()[i] = orig + eps;
        lp = f().item();
        p.data()[i] = orig - eps;
        lm = f().item();
        p.data()[i] = orig;
      }
      const T numeric = (lp - lm) / (T(2) * eps);
      const T a = analytic[pi][i];
      if (!std::isfinite(static_cast<double>(numeric)) ||
          !std::isfinite(static_cast<double>(a)))
        throw NumericError("grad_check: non-finite gradient");
      const T denom = std::max({std::abs(a), std::abs(numeric), T(1e-8)});
      max_rel = std::max(max_rel, std::abs(a - numeric) / denom);
    }
  }
  return max_rel;
}

// ---------------------------------------------------------------------------
// optimizer

template <typename T>
class AdamOptimizer {
 public:
  AdamOptimizer(std::vector<Tensor<T>> params, T lr = T(1e-3), T beta1 = T(0.9),
                T beta2 = T(0.999), T eps = T(1e-8))
      : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (auto& p : params_) {
      if (!p.requires_grad())
        throw std::logic_error("adam: parameter without gradient buffer");
      m_.emplace_back(p.numel(), T(0));
      v_.emplace_back(p.numel(), T(0));
    }
  }

  void step() {
    ++t_;
    const T bc1 = T(1) - std::pow(beta1_, static_cast<T>(t_));
    const T bc2 = T(1) - std::pow(beta2_, static_cast<T>(t_));
    for (std::size_t pi = 0; pi < params_.size(); ++pi) {
      auto& p = params_[pi];
      for (std::size_t i = 0; i < p.numel(); ++i) {
        const T g = p.grad()[i];
        m_[pi][i] = beta1_ * m_[pi][i] + (T(1) - beta1_) * g;
        v_[pi][i] = beta2_ * v_[pi][i] + (T(1) - beta2_) * g * g;
        const T mhat = m_[pi][i] / bc1;
        const T vhat = v_[pi][i] / bc2;
        p.data()[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
      }
    }
  }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

  long step_count() const { return t_; }
  void set_lr(T lr) { lr_ = lr; }
  T lr() const { return lr_; }

 private:
  std::vector<Tensor<T>> params_;
  std::vector<std::vector<T>> m_, v_;
  T lr_, beta1_, beta2_, eps_;
  long t_ = 0;
};

// Scale all gradients so their global L2 norm does not exceed max_norm.
// Returns the pre-clip norm.
template <typename T>
T clip_global_norm(std::vector<Tensor<T>>& params, T max_norm) {
  T sq = 0;
  for (auto& p : params)
    for (T g : p.grad()) sq += g * g;
  const T norm = std::sqrt(sq);
  if (norm > max_norm && norm > T(0)) {
    const T s = max_norm / norm;
    for (auto& p : params)
      for (auto& g : p.grad()) g *= s;
  }
  return norm;
}

}  // namespace slue
