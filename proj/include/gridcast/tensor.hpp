#pragma once

// Dense double-precision tensors with reverse-mode differentiation.
//
// Image-like tensors use a channel-major batch layout [C, B, H, W]: every
// channel is one contiguous block, so convolutions reduce to a single GEMM
// per column chunk and batch norm statistics are contiguous reductions.
// Fully connected layers use the same layout with H = W = 1.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "error.hpp"
#include "rng.hpp"

namespace gridcast {

using Shape = std::vector<int>;

inline std::size_t numel(const Shape& s) {
  std::size_t n = 1;
  for (int d : s) n *= static_cast<std::size_t>(d);
  return n;
}

inline std::string shape_string(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "," : "") + std::to_string(s[i]);
  return out + "]";
}

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  std::vector<double>& ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), 0.0);
    return grad;
  }
};

namespace detail {
inline bool& grad_enabled() {
  thread_local bool enabled = true;
  return enabled;
}
}  // namespace detail

/// Disables graph recording on this thread while alive.
class NoGradGuard {
 public:
  NoGradGuard() : prev_(detail::grad_enabled()) { detail::grad_enabled() = false; }
  ~NoGradGuard() { detail::grad_enabled() = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false) : node_(std::make_shared<Node>()) {
    require(values.size() == numel(shape), "tensor of shape ", shape_string(shape), " needs ", numel(shape),
            " values, got ", values.size());
    node_->shape = std::move(shape);
    node_->value = std::move(values);
    node_->requires_grad = requires_grad;
  }
  static Tensor zeros(Shape shape, bool requires_grad = false) {
    const auto n = numel(shape);
    return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
  }
  static Tensor full(Shape shape, double v, bool requires_grad = false) {
    const auto n = numel(shape);
    return Tensor(std::move(shape), std::vector<double>(n, v), requires_grad);
  }
  static Tensor from_node(std::shared_ptr<Node> n) {
    Tensor t;
    t.node_ = std::move(n);
    return t;
  }

  explicit operator bool() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t size() const { return node_->value.size(); }
  std::span<double> values() { return node_->value; }
  std::span<const double> values() const { return node_->value; }
  const double* data() const { return node_->value.data(); }
  double* data() { return node_->value.data(); }
  double item() const {
    require(size() == 1, "item() on a tensor of shape ", shape_string(shape()));
    return node_->value[0];
  }
  /// Empty until a backward pass reaches this tensor.
  std::span<const double> grad() const { return node_->grad; }
  bool requires_grad() const { return node_->requires_grad; }
  void zero_grad() { node_->grad.clear(); }
  Node* node() const { return node_.get(); }
  const std::shared_ptr<Node>& ptr() const { return node_; }

  /// Reverse pass from a scalar.
  void backward() const;

 private:
  std::shared_ptr<Node> node_;
};

namespace detail {

/// Creates an op result; the graph edge is recorded only when some parent
/// needs a gradient and recording is enabled.
inline Tensor make_result(Shape shape, std::vector<double> value, std::initializer_list<Tensor> parents,
                          std::function<void(Node&)> backward) {
  Tensor out(std::move(shape), std::move(value));
  if (!grad_enabled()) return out;
  bool any = false;
  for (const Tensor& p : parents) any = any || p.requires_grad();
  if (!any) return out;
  Node* n = out.node();
  n->requires_grad = true;
  for (const Tensor& p : parents) n->parents.push_back(p.ptr());
  n->backward = std::move(backward);
  return out;
}

inline Tensor make_result(Shape shape, std::vector<double> value, const std::vector<Tensor>& parents,
                          std::function<void(Node&)> backward) {
  Tensor out(std::move(shape), std::move(value));
  if (!grad_enabled()) return out;
  bool any = false;
  for (const Tensor& p : parents) any = any || p.requires_grad();
  if (!any) return out;
  Node* n = out.node();
  n->requires_grad = true;
  for (const Tensor& p : parents) n->parents.push_back(p.ptr());
  n->backward = std::move(backward);
  return out;
}

/// Parent gradient buffer, or nullptr when that parent needs none.
inline double* grad_of(Node& out, std::size_t i) {
  Node* p = out.parents[i].get();
  return p->requires_grad ? p->ensure_grad().data() : nullptr;
}

}  // namespace detail

inline void Tensor::backward() const {
  require(size() == 1, "backward() needs a scalar, got shape ", shape_string(shape()));
  if (!requires_grad()) return;
  // Iterative post-order DFS gives a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{node_.get(), 0}};
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      Node* p = n->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.push_back({p, 0});
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  node_->ensure_grad()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward && !n->grad.empty()) n->backward(*n);
  }
}

// ---------------------------------------------------------------------------
// Elementwise

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  require(a.shape() == b.shape(), op, ": shape mismatch ", shape_string(a.shape()), " vs ", shape_string(b.shape()));
}

inline Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> v(a.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.data()[i] + b.data()[i];
  return detail::make_result(a.shape(), std::move(v), {a, b}, [](Node& o) {
    for (std::size_t k = 0; k < 2; ++k)
      if (double* g = detail::grad_of(o, k))
        for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i];
  });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> v(a.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.data()[i] - b.data()[i];
  return detail::make_result(a.shape(), std::move(v), {a, b}, [](Node& o) {
    if (double* g = detail::grad_of(o, 0))
      for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i];
    if (double* g = detail::grad_of(o, 1))
      for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] -= o.grad[i];
  });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> v(a.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.data()[i] * b.data()[i];
  return detail::make_result(a.shape(), std::move(v), {a, b}, [](Node& o) {
    const double* av = o.parents[0]->value.data();
    const double* bv = o.parents[1]->value.data();
    if (double* g = detail::grad_of(o, 0))
      for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i] * bv[i];
    if (double* g = detail::grad_of(o, 1))
      for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i] * av[i];
  });
}

inline Tensor scale(const Tensor& a, double s) {
  std::vector<double> v(a.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.data()[i] * s;
  return detail::make_result(a.shape(), std::move(v), {a}, [s](Node& o) {
    if (double* g = detail::grad_of(o, 0))
      for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i] * s;
  });
}

namespace detail {
template <typename F, typename D>
Tensor unary(const Tensor& a, F f, D dfdx_from_y) {
  std::vector<double> v(a.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = f(a.data()[i]);
  return make_result(a.shape(), std::move(v), {a}, [dfdx_from_y](Node& o) {
    if (double* g = grad_of(o, 0)) {
      const double* x = o.parents[0]->value.data();
      for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i] * dfdx_from_y(x[i], o.value[i]);
    }
  });
}
}  // namespace detail

inline double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline Tensor sigmoid(const Tensor& a) {
  return detail::unary(a, [](double x) { return sigmoid(x); }, [](double, double y) { return y * (1.0 - y); });
}

inline Tensor tanh(const Tensor& a) {
  return detail::unary(a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

/// Subgradient 0 at 0.
inline Tensor relu(const Tensor& a) {
  return detail::unary(a, [](double x) { return x > 0.0 ? x : 0.0; }, [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

inline Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double x : a.values()) s += x;
  return detail::make_result({1}, {s}, {a}, [](Node& o) {
    if (double* g = detail::grad_of(o, 0))
      for (std::size_t i = 0; i < o.parents[0]->value.size(); ++i) g[i] += o.grad[0];
  });
}

inline Tensor reshape(const Tensor& a, Shape shape) {
  require(numel(shape) == a.size(), "reshape ", shape_string(a.shape()), " to ", shape_string(shape));
  std::vector<double> v(a.values().begin(), a.values().end());
  return detail::make_result(std::move(shape), std::move(v), {a}, [](Node& o) {
    if (double* g = detail::grad_of(o, 0))
      for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i];
  });
}

/// Matrix transpose of a rank-2 tensor.
inline Tensor transpose2d(const Tensor& a) {
  require(a.shape().size() == 2, "transpose2d needs a matrix, got ", shape_string(a.shape()));
  const auto R = static_cast<std::size_t>(a.dim(0));
  const auto S = static_cast<std::size_t>(a.dim(1));
  std::vector<double> v(a.size());
  for (std::size_t r = 0; r < R; ++r)
    for (std::size_t s = 0; s < S; ++s) v[s * R + r] = a.data()[r * S + s];
  return detail::make_result({a.dim(1), a.dim(0)}, std::move(v), {a}, [R, S](Node& o) {
    if (double* g = detail::grad_of(o, 0))
      for (std::size_t r = 0; r < R; ++r)
        for (std::size_t s = 0; s < S; ++s) g[r * S + s] += o.grad[s * R + r];
  });
}

// ---------------------------------------------------------------------------
// Channel-major helpers. x is viewed as [C, B, P] with P the product of the
// dimensions after the second.

inline std::size_t inner_size(const Tensor& x) {
  std::size_t p = 1;
  for (std::size_t i = 2; i < x.shape().size(); ++i) p *= static_cast<std::size_t>(x.shape()[i]);
  return p;
}

/// Adds b[c] to every element of channel c.
inline Tensor add_channel_bias(const Tensor& x, const Tensor& b) {
  const auto C = static_cast<std::size_t>(x.dim(0));
  require(b.size() == C, "channel bias of size ", b.size(), " for ", C, " channels");
  const std::size_t chunk = x.size() / C;
  std::vector<double> v(x.size());
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t i = 0; i < chunk; ++i) v[c * chunk + i] = x.data()[c * chunk + i] + b.data()[c];
  return detail::make_result(x.shape(), std::move(v), {x, b}, [C, chunk](Node& o) {
    if (double* g = detail::grad_of(o, 0))
      for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i];
    if (double* g = detail::grad_of(o, 1))
      for (std::size_t c = 0; c < C; ++c) {
        double s = 0.0;
        for (std::size_t i = 0; i < chunk; ++i) s += o.grad[c * chunk + i];
        g[c] += s;
      }
  });
}

/// Hadamard product with weights shared across the batch axis: w holds
/// either one value per channel or one per (channel, position).
inline Tensor hadamard_broadcast(const Tensor& x, const Tensor& w) {
  require(x.shape().size() >= 2, "hadamard_broadcast needs a [C, B, ...] tensor");
  const auto C = static_cast<std::size_t>(x.dim(0));
  const auto B = static_cast<std::size_t>(x.dim(1));
  const std::size_t P = inner_size(x);
  const bool per_channel = w.size() == C;
  require(per_channel || w.size() == C * P, "hadamard weights of size ", w.size(), " do not fit ",
          shape_string(x.shape()));
  auto widx = [=](std::size_t c, std::size_t p) { return per_channel ? c : c * P + p; };
  std::vector<double> v(x.size());
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t p = 0; p < P; ++p) {
        const std::size_t i = (c * B + b) * P + p;
        v[i] = x.data()[i] * w.data()[widx(c, p)];
      }
  return detail::make_result(x.shape(), std::move(v), {x, w}, [=](Node& o) {
    const double* xv = o.parents[0]->value.data();
    const double* wv = o.parents[1]->value.data();
    double* gx = detail::grad_of(o, 0);
    double* gw = detail::grad_of(o, 1);
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t p = 0; p < P; ++p) {
          const std::size_t i = (c * B + b) * P + p;
          if (gx) gx[i] += o.grad[i] * wv[widx(c, p)];
          if (gw) gw[widx(c, p)] += o.grad[i] * xv[i];
        }
  });
}

/// Channels [begin, end) of x.
inline Tensor slice_channels(const Tensor& x, int begin, int end) {
  require(0 <= begin && begin < end && end <= x.dim(0), "channel slice [", begin, ",", end, ") of ",
          shape_string(x.shape()));
  const std::size_t chunk = x.size() / static_cast<std::size_t>(x.dim(0));
  const std::size_t off = static_cast<std::size_t>(begin) * chunk;
  std::vector<double> v(x.data() + off, x.data() + off + static_cast<std::size_t>(end - begin) * chunk);
  Shape s = x.shape();
  s[0] = end - begin;
  return detail::make_result(std::move(s), std::move(v), {x}, [off](Node& o) {
    if (double* g = detail::grad_of(o, 0))
      for (std::size_t i = 0; i < o.grad.size(); ++i) g[off + i] += o.grad[i];
  });
}

/// Entries [begin, end) along the batch axis.
inline Tensor slice_batch(const Tensor& x, int begin, int end) {
  require(x.shape().size() >= 2 && 0 <= begin && begin < end && end <= x.dim(1), "batch slice [", begin, ",", end,
          ") of ", shape_string(x.shape()));
  const auto C = static_cast<std::size_t>(x.dim(0));
  const auto B = static_cast<std::size_t>(x.dim(1));
  const std::size_t P = inner_size(x);
  const std::size_t n = static_cast<std::size_t>(end - begin);
  const std::size_t b0 = static_cast<std::size_t>(begin);
  std::vector<double> v(C * n * P);
  for (std::size_t c = 0; c < C; ++c)
    std::copy_n(x.data() + (c * B + b0) * P, n * P, v.data() + c * n * P);
  Shape s = x.shape();
  s[1] = end - begin;
  return detail::make_result(std::move(s), std::move(v), {x}, [=](Node& o) {
    if (double* g = detail::grad_of(o, 0))
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t i = 0; i < n * P; ++i) g[(c * B + b0) * P + i] += o.grad[c * n * P + i];
  });
}

/// Concatenation along the batch axis.
inline Tensor concat_batch(const std::vector<Tensor>& parts) {
  require(!parts.empty(), "concat_batch of nothing");
  Shape s = parts[0].shape();
  const auto C = static_cast<std::size_t>(s[0]);
  const std::size_t P = inner_size(parts[0]);
  std::vector<std::size_t> offsets;
  std::size_t total = 0;
  for (const Tensor& t : parts) {
    Shape ts = t.shape();
    ts[1] = s[1];
    require(ts == s, "concat_batch: shape mismatch ", shape_string(t.shape()), " vs ", shape_string(parts[0].shape()));
    offsets.push_back(total);
    total += static_cast<std::size_t>(t.dim(1));
  }
  std::vector<double> v(C * total * P);
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const std::size_t n = static_cast<std::size_t>(parts[k].dim(1));
    for (std::size_t c = 0; c < C; ++c)
      std::copy_n(parts[k].data() + c * n * P, n * P, v.data() + (c * total + offsets[k]) * P);
  }
  s[1] = static_cast<int>(total);
  return detail::make_result(std::move(s), std::move(v), parts, [=](Node& o) {
    for (std::size_t k = 0; k < o.parents.size(); ++k) {
      double* g = detail::grad_of(o, k);
      if (!g) continue;
      const std::size_t n = static_cast<std::size_t>(o.parents[k]->shape[1]);
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t i = 0; i < n * P; ++i) g[c * n * P + i] += o.grad[(c * total + offsets[k]) * P + i];
    }
  });
}

// ---------------------------------------------------------------------------
// Convolution

namespace detail {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowMap = Eigen::Map<RowMat>;
using ConstRowMap = Eigen::Map<const RowMat>;
using AlignedBuf = std::vector<double, Eigen::aligned_allocator<double>>;

/// Eigen chooses vectorized loop boundaries from operand addresses, so the
/// same product on differently aligned buffers can round differently.
/// Operands are copied to aligned storage when needed to keep runs bitwise
/// reproducible.
inline const double* aligned_input(const double* p, std::size_t n, AlignedBuf& scratch) {
  if (reinterpret_cast<std::uintptr_t>(p) % EIGEN_MAX_ALIGN_BYTES == 0) return p;
  scratch.assign(p, p + n);
  return scratch.data();
}

inline void accumulate(const AlignedBuf& src, double* dst) {
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] += src[i];
}

/// Unfolds images [b0, b1) of a [C, B, H, W] buffer into a
/// (C*k*k) x ((b1-b0)*H*W) row-major matrix with zero padding.
inline void im2col(const double* x, int C, int B, int H, int W, int k, int b0, int b1, double* col) {
  const int pad = k / 2;
  const std::size_t HW = static_cast<std::size_t>(H) * W;
  const std::size_t ncols = static_cast<std::size_t>(b1 - b0) * HW;
  for (int c = 0; c < C; ++c)
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        double* row = col + ((static_cast<std::size_t>(c) * k + ky) * k + kx) * ncols;
        for (int b = b0; b < b1; ++b) {
          const double* img = x + (static_cast<std::size_t>(c) * B + b) * HW;
          double* out = row + static_cast<std::size_t>(b - b0) * HW;
          for (int y = 0; y < H; ++y) {
            const int sy = y + ky - pad;
            double* orow = out + static_cast<std::size_t>(y) * W;
            if (sy < 0 || sy >= H) {
              std::fill_n(orow, W, 0.0);
              continue;
            }
            const double* irow = img + static_cast<std::size_t>(sy) * W;
            for (int xx = 0; xx < W; ++xx) {
              const int sx = xx + kx - pad;
              orow[xx] = (sx >= 0 && sx < W) ? irow[sx] : 0.0;
            }
          }
        }
      }
}

/// Adjoint of im2col: accumulates a column matrix back into images.
inline void col2im(const double* col, int C, int B, int H, int W, int k, int b0, int b1, double* x) {
  const int pad = k / 2;
  const std::size_t HW = static_cast<std::size_t>(H) * W;
  const std::size_t ncols = static_cast<std::size_t>(b1 - b0) * HW;
  for (int c = 0; c < C; ++c)
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        const double* row = col + ((static_cast<std::size_t>(c) * k + ky) * k + kx) * ncols;
        for (int b = b0; b < b1; ++b) {
          double* img = x + (static_cast<std::size_t>(c) * B + b) * HW;
          const double* in = row + static_cast<std::size_t>(b - b0) * HW;
          for (int y = 0; y < H; ++y) {
            const int sy = y + ky - pad;
            if (sy < 0 || sy >= H) continue;
            const double* irow = in + static_cast<std::size_t>(y) * W;
            double* orow = img + static_cast<std::size_t>(sy) * W;
            for (int xx = 0; xx < W; ++xx) {
              const int sx = xx + kx - pad;
              if (sx >= 0 && sx < W) orow[sx] += irow[xx];
            }
          }
        }
      }
}

// Column budget per im2col chunk, bounding scratch memory.
inline constexpr std::size_t kIm2colColumns = 1 << 14;

}  // namespace detail

/// Same-padded 2-D cross-correlation. x: [C_in, B, H, W], w: [C_out, C_in, k, k],
/// bias: [C_out] or empty. Even kernels are rejected.
inline Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias = {}) {
  require(x.shape().size() == 4 && w.shape().size() == 4, "conv2d expects [C,B,H,W] input and [Co,Ci,k,k] kernels");
  const int Ci = x.dim(0), B = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int Co = w.dim(0), k = w.dim(2);
  require(w.dim(1) == Ci, "conv2d: kernel expects ", w.dim(1), " input channels, got ", Ci);
  require(w.dim(3) == k, "conv2d: kernels must be square");
  require(k % 2 == 1, "conv2d: kernel size must be odd, got ", k);
  require(!bias || bias.size() == static_cast<std::size_t>(Co), "conv2d: bias size mismatch");
  const std::size_t HW = static_cast<std::size_t>(H) * W;
  const std::size_t N = static_cast<std::size_t>(B) * HW;
  const std::size_t K = static_cast<std::size_t>(Ci) * k * k;
  const int per_chunk = std::max(1, static_cast<int>(detail::kIm2colColumns / HW));
  const auto Ke = static_cast<Eigen::Index>(K);

  detail::AlignedBuf y(static_cast<std::size_t>(Co) * N);
  detail::AlignedBuf w_copy, x_copy;
  detail::RowMap Y(y.data(), Co, static_cast<Eigen::Index>(N));
  detail::ConstRowMap Wm(detail::aligned_input(w.data(), w.size(), w_copy), Co, Ke);
  if (k == 1) {
    Y.noalias() = Wm * detail::ConstRowMap(detail::aligned_input(x.data(), x.size(), x_copy), Ci,
                                           static_cast<Eigen::Index>(N));
  } else {
    detail::AlignedBuf col;
    for (int b0 = 0; b0 < B; b0 += per_chunk) {
      const int b1 = std::min(B, b0 + per_chunk);
      const std::size_t n = static_cast<std::size_t>(b1 - b0) * HW;
      col.resize(K * n);
      detail::im2col(x.data(), Ci, B, H, W, k, b0, b1, col.data());
      Y.middleCols(static_cast<Eigen::Index>(b0 * HW), static_cast<Eigen::Index>(n)).noalias() =
          Wm * detail::ConstRowMap(col.data(), Ke, static_cast<Eigen::Index>(n));
    }
  }
  std::vector<double> out(y.begin(), y.end());
  if (bias)
    for (int c = 0; c < Co; ++c)
      for (std::size_t i = 0; i < N; ++i) out[c * N + i] += bias.data()[c];

  std::vector<Tensor> parents{x, w};
  if (bias) parents.push_back(bias);
  return detail::make_result({Co, B, H, W}, std::move(out), parents, [=](Node& o) {
    const Node& xn = *o.parents[0];
    const Node& wn = *o.parents[1];
    double* gx = detail::grad_of(o, 0);
    double* gw = detail::grad_of(o, 1);
    double* gb = o.parents.size() > 2 ? detail::grad_of(o, 2) : nullptr;
    detail::AlignedBuf dy_copy, wv_copy, xv_copy, col, dcol, tmp;
    detail::ConstRowMap dY(detail::aligned_input(o.grad.data(), o.grad.size(), dy_copy), Co,
                           static_cast<Eigen::Index>(N));
    detail::ConstRowMap Wv(detail::aligned_input(wn.value.data(), wn.value.size(), wv_copy), Co, Ke);
    if (gb)
      for (int c = 0; c < Co; ++c) gb[c] += dY.row(c).sum();
    if (k == 1) {
      detail::ConstRowMap X(detail::aligned_input(xn.value.data(), xn.value.size(), xv_copy), Ci,
                            static_cast<Eigen::Index>(N));
      if (gw) {
        tmp.resize(static_cast<std::size_t>(Co) * K);
        detail::RowMap(tmp.data(), Co, Ke).noalias() = dY * X.transpose();
        detail::accumulate(tmp, gw);
      }
      if (gx) {
        tmp.resize(static_cast<std::size_t>(Ci) * N);
        detail::RowMap(tmp.data(), Ci, static_cast<Eigen::Index>(N)).noalias() = Wv.transpose() * dY;
        detail::accumulate(tmp, gx);
      }
      return;
    }
    for (int b0 = 0; b0 < B; b0 += per_chunk) {
      const int b1 = std::min(B, b0 + per_chunk);
      const auto n = static_cast<Eigen::Index>(static_cast<std::size_t>(b1 - b0) * HW);
      const auto dYc = dY.middleCols(static_cast<Eigen::Index>(b0 * HW), n);
      if (gw) {
        col.resize(K * static_cast<std::size_t>(n));
        detail::im2col(xn.value.data(), Ci, B, H, W, k, b0, b1, col.data());
        tmp.resize(static_cast<std::size_t>(Co) * K);
        detail::RowMap(tmp.data(), Co, Ke).noalias() = dYc * detail::ConstRowMap(col.data(), Ke, n).transpose();
        detail::accumulate(tmp, gw);
      }
      if (gx) {
        dcol.resize(K * static_cast<std::size_t>(n));
        detail::RowMap(dcol.data(), Ke, n).noalias() = Wv.transpose() * dYc;
        detail::col2im(dcol.data(), Ci, B, H, W, k, b0, b1, gx);
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Normalization, dropout, loss

/// Per-channel batch normalization over every axis but the first.
class BatchNorm {
 public:
  BatchNorm() = default;
  explicit BatchNorm(int channels, double momentum = 0.1, double eps = 1e-5)
      : gamma(Tensor::full({channels}, 1.0, true)),
        beta(Tensor::zeros({channels}, true)),
        running_mean(static_cast<std::size_t>(channels), 0.0),
        running_var(static_cast<std::size_t>(channels), 1.0),
        momentum_(momentum),
        eps_(eps) {}

  Tensor forward(const Tensor& x, bool training) {
    const auto C = static_cast<std::size_t>(x.dim(0));
    require(C == gamma.size(), "batch norm expects ", gamma.size(), " channels, got ", C);
    const std::size_t n = x.size() / C;
    std::vector<double> out(x.size());
    if (!training) {
      require(updated, "batch norm used for inference before any training update");
      for (std::size_t c = 0; c < C; ++c) {
        const double inv = 1.0 / std::sqrt(running_var[c] + eps_);
        for (std::size_t i = 0; i < n; ++i)
          out[c * n + i] = (x.data()[c * n + i] - running_mean[c]) * inv * gamma.data()[c] + beta.data()[c];
      }
      return detail::make_result(
          x.shape(), std::move(out), {x, gamma, beta},
          [C, n, mean = running_mean, inv_std = running_inv_std()](Node& o) {
            const double* gv = o.parents[1]->value.data();
            const double* xv = o.parents[0]->value.data();
            double* gx = detail::grad_of(o, 0);
            double* gg = detail::grad_of(o, 1);
            double* gb = detail::grad_of(o, 2);
            for (std::size_t c = 0; c < C; ++c)
              for (std::size_t i = 0; i < n; ++i) {
                const double dy = o.grad[c * n + i];
                if (gx) gx[c * n + i] += dy * gv[c] * inv_std[c];
                if (gb) gb[c] += dy;
                if (gg) gg[c] += dy * (xv[c * n + i] - mean[c]) * inv_std[c];
              }
          });
    }
    require(n >= 2, "batch norm training needs at least 2 values per channel");
    std::vector<double> xhat(x.size());
    std::vector<double> inv_std(C);
    for (std::size_t c = 0; c < C; ++c) {
      const double* xc = x.data() + c * n;
      double mean = 0.0;
      for (std::size_t i = 0; i < n; ++i) mean += xc[i];
      mean /= static_cast<double>(n);
      double var = 0.0;
      for (std::size_t i = 0; i < n; ++i) var += (xc[i] - mean) * (xc[i] - mean);
      var /= static_cast<double>(n);
      inv_std[c] = 1.0 / std::sqrt(var + eps_);
      for (std::size_t i = 0; i < n; ++i) {
        xhat[c * n + i] = (xc[i] - mean) * inv_std[c];
        out[c * n + i] = xhat[c * n + i] * gamma.data()[c] + beta.data()[c];
      }
      const double unbiased = var * static_cast<double>(n) / static_cast<double>(n - 1);
      running_mean[c] = (1.0 - momentum_) * running_mean[c] + momentum_ * mean;
      running_var[c] = (1.0 - momentum_) * running_var[c] + momentum_ * unbiased;
    }
    updated = true;
    return detail::make_result(
        x.shape(), std::move(out), {x, gamma, beta},
        [C, n, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& o) {
          const double* gv = o.parents[1]->value.data();
          double* gx = detail::grad_of(o, 0);
          double* gg = detail::grad_of(o, 1);
          double* gb = detail::grad_of(o, 2);
          const double nn = static_cast<double>(n);
          for (std::size_t c = 0; c < C; ++c) {
            double sum_dy = 0.0, sum_dy_xhat = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
              sum_dy += o.grad[c * n + i];
              sum_dy_xhat += o.grad[c * n + i] * xhat[c * n + i];
            }
            if (gg) gg[c] += sum_dy_xhat;
            if (gb) gb[c] += sum_dy;
            if (gx) {
              const double k = gv[c] * inv_std[c] / nn;
              for (std::size_t i = 0; i < n; ++i)
                gx[c * n + i] += k * (nn * o.grad[c * n + i] - sum_dy - xhat[c * n + i] * sum_dy_xhat);
            }
          }
        });
  }

  Tensor gamma;
  Tensor beta;
  std::vector<double> running_mean;
  std::vector<double> running_var;
  bool updated = false;

 private:
  std::vector<double> running_inv_std() const {
    std::vector<double> v(running_var.size());
    for (std::size_t c = 0; c < v.size(); ++c) v[c] = 1.0 / std::sqrt(running_var[c] + eps_);
    return v;
  }
  double momentum_ = 0.1;
  double eps_ = 1e-5;
};

/// Inverted dropout: survivors are scaled by 1/(1-p) so inference is identity.
inline Tensor dropout(const Tensor& x, double p, bool training, Rng& rng) {
  require(p >= 0.0 && p < 1.0, "dropout probability must lie in [0, 1), got ", p);
  if (!training || p == 0.0) return x;
  const double keep_scale = 1.0 / (1.0 - p);
  std::vector<double> mask(x.size());
  std::vector<double> v(x.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    mask[i] = rng.uniform() < p ? 0.0 : keep_scale;
    v[i] = x.data()[i] * mask[i];
  }
  return detail::make_result(x.shape(), std::move(v), {x}, [mask = std::move(mask)](Node& o) {
    if (double* g = detail::grad_of(o, 0))
      for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i] * mask[i];
  });
}

inline constexpr double kProbClamp = 1e-7;

/// Mean binary cross-entropy over entries whose mask is nonzero.
inline Tensor bce_loss(const Tensor& probs, std::span<const double> targets, std::span<const double> mask) {
  require(targets.size() == probs.size() && mask.size() == probs.size(), "bce_loss: size mismatch");
  std::size_t count = 0;
  double total = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (mask[i] == 0.0) continue;
    const double p = std::clamp(probs.data()[i], kProbClamp, 1.0 - kProbClamp);
    total += -(targets[i] * std::log(p) + (1.0 - targets[i]) * std::log(1.0 - p));
    ++count;
  }
  require(count > 0, "bce_loss: every cell is masked");
  std::vector<double> t(targets.begin(), targets.end());
  std::vector<double> m(mask.begin(), mask.end());
  return detail::make_result({1}, {total / static_cast<double>(count)}, {probs},
                             [t = std::move(t), m = std::move(m), count](Node& o) {
                               double* g = detail::grad_of(o, 0);
                               if (!g) return;
                               const double* pv = o.parents[0]->value.data();
                               const double scale = o.grad[0] / static_cast<double>(count);
                               for (std::size_t i = 0; i < t.size(); ++i) {
                                 if (m[i] == 0.0) continue;
                                 const double p = pv[i];
                                 if (p < kProbClamp || p > 1.0 - kProbClamp) continue;
                                 g[i] += scale * (-(t[i] / p) + (1.0 - t[i]) / (1.0 - p));
                               }
                             });
}

}  // namespace gridcast
