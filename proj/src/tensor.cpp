#include "dbl/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

namespace dbl {

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) os << ',';
    os << s[i];
  }
  os << ']';
  return os.str();
}

std::int64_t shape_numel(const Shape& s) {
  std::int64_t n = 1;
  for (int d : s) n *= d;
  return n;
}

namespace {

[[noreturn]] void shape_error(const char* op, const Shape& a, const Shape& b) {
  throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " +
                              shape_str(b));
}

std::shared_ptr<TensorImpl> make_impl(Shape shape, std::vector<float> data) {
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  return impl;
}

using Parents = std::vector<std::shared_ptr<TensorImpl>>;

Tensor make_op(Shape shape, std::vector<float> data, Parents parents,
               std::function<void(const TensorImpl&)> bw) {
  auto impl = make_impl(std::move(shape), std::move(data));
  bool need = false;
  for (const auto& p : parents) need = need || p->requires_grad;
  if (need) {
    impl->requires_grad = true;
    impl->node = std::make_unique<Node>();
    impl->node->parents = std::move(parents);
    impl->node->backward = std::move(bw);
  }
  return Tensor::wrap(impl);
}

}  // namespace

Tensor Tensor::zeros(const Shape& shape, bool requires_grad) {
  auto impl = make_impl(shape, std::vector<float>(static_cast<size_t>(shape_numel(shape)), 0.f));
  impl->requires_grad = requires_grad;
  return wrap(impl);
}

Tensor Tensor::full(const Shape& shape, float value, bool requires_grad) {
  auto impl = make_impl(shape, std::vector<float>(static_cast<size_t>(shape_numel(shape)), value));
  impl->requires_grad = requires_grad;
  return wrap(impl);
}

Tensor Tensor::scalar(float value, bool requires_grad) { return full({1}, value, requires_grad); }

Tensor Tensor::from(std::vector<float> data, const Shape& shape, bool requires_grad) {
  if (static_cast<std::int64_t>(data.size()) != shape_numel(shape))
    throw std::invalid_argument("Tensor::from: data length " + std::to_string(data.size()) +
                                " does not match shape " + shape_str(shape));
  auto impl = make_impl(shape, std::move(data));
  impl->requires_grad = requires_grad;
  return wrap(impl);
}

Tensor Tensor::uniform(const Shape& shape, RandomSource& rng, float lo, float hi,
                       bool requires_grad) {
  std::vector<float> d(static_cast<size_t>(shape_numel(shape)));
  for (auto& x : d) x = rng.uniform(lo, hi);
  return from(std::move(d), shape, requires_grad);
}

Tensor Tensor::normal(const Shape& shape, RandomSource& rng, bool requires_grad) {
  std::vector<float> d(static_cast<size_t>(shape_numel(shape)));
  for (auto& x : d) x = rng.normal();
  return from(std::move(d), shape, requires_grad);
}

float Tensor::value() const {
  if (numel() != 1)
    throw std::invalid_argument("Tensor::value: tensor has " + std::to_string(numel()) +
                                " elements, expected 1");
  return impl_->data[0];
}

std::vector<float>& Tensor::grad() {
  impl_->ensure_grad();
  return impl_->grad;
}

const std::vector<float>& Tensor::grad() const {
  if (!has_grad()) throw std::runtime_error("Tensor::grad: no gradient recorded");
  return impl_->grad;
}

Tensor Tensor::detach() const {
  auto impl = make_impl(impl_->shape, impl_->data);
  return wrap(impl);
}

Tensor Tensor::clone() const {
  auto impl = make_impl(impl_->shape, impl_->data);
  impl->requires_grad = impl_->requires_grad;
  return wrap(impl);
}

// ---- binary elementwise ----

namespace {

enum class BinKind { Add, Sub, Mul, Div };

Tensor binary_op(const char* name, BinKind kind, const Tensor& a, const Tensor& b) {
  const auto& as = a.shape();
  const auto& bs = b.shape();
  const bool a_scalar = a.numel() == 1;
  const bool b_scalar = b.numel() == 1;
  if (as != bs && !a_scalar && !b_scalar) shape_error(name, as, bs);

  if (kind == BinKind::Div) {
    for (float v : b.data())
      if (v == 0.f) throw std::domain_error(std::string(name) + ": division by zero");
  }

  const Shape& rs = a_scalar ? bs : as;
  const std::int64_t n = shape_numel(rs);
  std::vector<float> out(static_cast<size_t>(n));
  const float* pa = a.ptr();
  const float* pb = b.ptr();
  const std::int64_t sa = a_scalar ? 0 : 1;
  const std::int64_t sb = b_scalar ? 0 : 1;
  switch (kind) {
    case BinKind::Add:
      for (std::int64_t i = 0; i < n; ++i) out[i] = pa[i * sa] + pb[i * sb];
      break;
    case BinKind::Sub:
      for (std::int64_t i = 0; i < n; ++i) out[i] = pa[i * sa] - pb[i * sb];
      break;
    case BinKind::Mul:
      for (std::int64_t i = 0; i < n; ++i) out[i] = pa[i * sa] * pb[i * sb];
      break;
    case BinKind::Div:
      for (std::int64_t i = 0; i < n; ++i) out[i] = pa[i * sa] / pb[i * sb];
      break;
  }

  auto ai = a.impl();
  auto bi = b.impl();
  return make_op(rs, std::move(out), {ai, bi}, [=](const TensorImpl& o) {
    const float* g = o.grad.data();
    if (ai->requires_grad) {
      ai->ensure_grad();
      float* ga = ai->grad.data();
      for (std::int64_t i = 0; i < n; ++i) {
        float d;
        switch (kind) {
          case BinKind::Add: d = g[i]; break;
          case BinKind::Sub: d = g[i]; break;
          case BinKind::Mul: d = g[i] * bi->data[static_cast<size_t>(i * sb)]; break;
          case BinKind::Div: d = g[i] / bi->data[static_cast<size_t>(i * sb)]; break;
        }
        ga[i * sa] += d;
      }
    }
    if (bi->requires_grad) {
      bi->ensure_grad();
      float* gb = bi->grad.data();
      for (std::int64_t i = 0; i < n; ++i) {
        float d;
        switch (kind) {
          case BinKind::Add: d = g[i]; break;
          case BinKind::Sub: d = -g[i]; break;
          case BinKind::Mul: d = g[i] * ai->data[static_cast<size_t>(i * sa)]; break;
          case BinKind::Div: {
            float bv = bi->data[static_cast<size_t>(i * sb)];
            d = -g[i] * ai->data[static_cast<size_t>(i * sa)] / (bv * bv);
            break;
          }
        }
        gb[i * sb] += d;
      }
    }
  });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary_op("add", BinKind::Add, a, b); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary_op("sub", BinKind::Sub, a, b); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary_op("mul", BinKind::Mul, a, b); }
Tensor div(const Tensor& a, const Tensor& b) { return binary_op("div", BinKind::Div, a, b); }

Tensor add(const Tensor& a, float b) { return add(a, Tensor::scalar(b)); }
Tensor sub(float a, const Tensor& b) { return sub(Tensor::scalar(a), b); }

Tensor scale(const Tensor& a, float s) {
  const std::int64_t n = a.numel();
  std::vector<float> out(static_cast<size_t>(n));
  const float* pa = a.ptr();
  for (std::int64_t i = 0; i < n; ++i) out[i] = pa[i] * s;
  auto ai = a.impl();
  return make_op(a.shape(), std::move(out), {ai}, [=](const TensorImpl& o) {
    ai->ensure_grad();
    float* ga = ai->grad.data();
    const float* g = o.grad.data();
    for (std::int64_t i = 0; i < n; ++i) ga[i] += g[i] * s;
  });
}

Tensor neg(const Tensor& a) { return scale(a, -1.f); }

Tensor scale_rows(const Tensor& x, const std::vector<float>& c) {
  if (x.rank() < 1 || x.dim(0) != static_cast<int>(c.size()))
    throw std::invalid_argument("scale_rows: " + std::to_string(c.size()) +
                                " coefficients for tensor " + shape_str(x.shape()));
  const size_t stride = static_cast<size_t>(x.numel()) / c.size();
  std::vector<float> out(x.data());
  for (size_t b = 0; b < c.size(); ++b)
    for (size_t i = 0; i < stride; ++i) out[b * stride + i] *= c[b];
  auto xi = x.impl();
  return make_op(x.shape(), std::move(out), {xi}, [xi, c, stride](const TensorImpl& o) {
    xi->ensure_grad();
    const float* g = o.grad.data();
    for (size_t b = 0; b < c.size(); ++b)
      for (size_t i = 0; i < stride; ++i) xi->grad[b * stride + i] += c[b] * g[b * stride + i];
  });
}

Tensor add_image(const Tensor& x, const Tensor& img) {
  if (x.rank() != img.rank() + 1)
    throw std::invalid_argument("add_image: batch rank must exceed image rank by 1");
  for (int i = 1; i < x.rank(); ++i)
    if (x.dim(i) != img.dim(i - 1))
      throw std::invalid_argument("add_image: " + shape_str(img.shape()) + " into " +
                                  shape_str(x.shape()));
  const size_t stride = static_cast<size_t>(img.numel());
  const size_t b = static_cast<size_t>(x.dim(0));
  std::vector<float> out(x.data());
  const float* pi = img.ptr();
  for (size_t s = 0; s < b; ++s)
    for (size_t i = 0; i < stride; ++i) out[s * stride + i] += pi[i];
  auto xi = x.impl();
  auto ii = img.impl();
  return make_op(x.shape(), std::move(out), {xi, ii}, [xi, ii, b, stride](const TensorImpl& o) {
    const float* g = o.grad.data();
    if (xi->requires_grad) {
      xi->ensure_grad();
      for (size_t i = 0; i < b * stride; ++i) xi->grad[i] += g[i];
    }
    if (ii->requires_grad) {
      ii->ensure_grad();
      for (size_t i = 0; i < stride; ++i) {
        double acc = 0.0;
        for (size_t s = 0; s < b; ++s) acc += g[s * stride + i];
        ii->grad[i] += static_cast<float>(acc);
      }
    }
  });
}

// ---- reductions ----

Tensor sum(const Tensor& a) {
  const std::int64_t n = a.numel();
  const float* pa = a.ptr();
  double acc = 0.0;
  for (std::int64_t i = 0; i < n; ++i) acc += pa[i];
  auto ai = a.impl();
  return make_op({1}, {static_cast<float>(acc)}, {ai}, [=](const TensorImpl& o) {
    ai->ensure_grad();
    const float g = o.grad[0];
    float* ga = ai->grad.data();
    for (std::int64_t i = 0; i < n; ++i) ga[i] += g;
  });
}

Tensor mean(const Tensor& a) {
  const std::int64_t n = a.numel();
  const float* pa = a.ptr();
  double acc = 0.0;
  for (std::int64_t i = 0; i < n; ++i) acc += pa[i];
  const float inv = 1.f / static_cast<float>(n);
  auto ai = a.impl();
  return make_op({1}, {static_cast<float>(acc / static_cast<double>(n))}, {ai},
                 [=](const TensorImpl& o) {
                   ai->ensure_grad();
                   const float g = o.grad[0] * inv;
                   float* ga = ai->grad.data();
                   for (std::int64_t i = 0; i < n; ++i) ga[i] += g;
                 });
}

Tensor mean_axis0(const Tensor& a) {
  if (a.rank() < 1 || a.dim(0) < 1)
    throw std::invalid_argument("mean_axis0: need a non-empty leading axis, got " +
                                shape_str(a.shape()));
  const int b = a.dim(0);
  Shape rs(a.shape().begin() + 1, a.shape().end());
  if (rs.empty()) rs = {1};
  const std::int64_t m = shape_numel(rs);
  std::vector<float> out(static_cast<size_t>(m), 0.f);
  const float* pa = a.ptr();
  for (int i = 0; i < b; ++i)
    for (std::int64_t j = 0; j < m; ++j) out[static_cast<size_t>(j)] += pa[i * m + j];
  const float inv = 1.f / static_cast<float>(b);
  for (auto& v : out) v *= inv;
  auto ai = a.impl();
  return make_op(rs, std::move(out), {ai}, [=](const TensorImpl& o) {
    ai->ensure_grad();
    float* ga = ai->grad.data();
    const float* g = o.grad.data();
    for (int i = 0; i < b; ++i)
      for (std::int64_t j = 0; j < m; ++j) ga[i * m + j] += g[j] * inv;
  });
}

// ---- unary ----

Tensor square(const Tensor& a) {
  const std::int64_t n = a.numel();
  std::vector<float> out(static_cast<size_t>(n));
  const float* pa = a.ptr();
  for (std::int64_t i = 0; i < n; ++i) out[i] = pa[i] * pa[i];
  auto ai = a.impl();
  return make_op(a.shape(), std::move(out), {ai}, [=](const TensorImpl& o) {
    ai->ensure_grad();
    float* ga = ai->grad.data();
    const float* g = o.grad.data();
    for (std::int64_t i = 0; i < n; ++i) ga[i] += 2.f * pa[i] * g[i];
  });
}

Tensor sqrt_t(const Tensor& a) {
  const std::int64_t n = a.numel();
  const float* pa = a.ptr();
  const bool needs_grad = a.requires_grad();
  std::vector<float> out(static_cast<size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) {
    if (pa[i] < 0.f || (needs_grad && pa[i] == 0.f))
      throw std::domain_error("sqrt: input " + std::to_string(pa[i]) + " outside domain");
    out[i] = std::sqrt(pa[i]);
  }
  auto ai = a.impl();
  return make_op(a.shape(), std::move(out), {ai}, [=](const TensorImpl& o) {
    ai->ensure_grad();
    float* ga = ai->grad.data();
    const float* g = o.grad.data();
    const float* y = o.data.data();
    for (std::int64_t i = 0; i < n; ++i) ga[i] += 0.5f / y[i] * g[i];
  });
}

Tensor silu(const Tensor& a) {
  const std::int64_t n = a.numel();
  std::vector<float> out(static_cast<size_t>(n));
  const float* pa = a.ptr();
  for (std::int64_t i = 0; i < n; ++i) {
    const float s = 1.f / (1.f + std::exp(-pa[i]));
    out[i] = pa[i] * s;
  }
  auto ai = a.impl();
  return make_op(a.shape(), std::move(out), {ai}, [=](const TensorImpl& o) {
    ai->ensure_grad();
    float* ga = ai->grad.data();
    const float* g = o.grad.data();
    for (std::int64_t i = 0; i < n; ++i) {
      const float x = pa[i];
      const float s = 1.f / (1.f + std::exp(-x));
      ga[i] += g[i] * s * (1.f + x * (1.f - s));
    }
  });
}

// ---- matmul ----

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2) shape_error("matmul", a.shape(), b.shape());
  const int m = a.dim(0), k = a.dim(1), k2 = b.dim(0), n = b.dim(1);
  if (k != k2) shape_error("matmul", a.shape(), b.shape());
  std::vector<float> out(static_cast<size_t>(m) * n, 0.f);
  {
    const float* __restrict pa = a.ptr();
    const float* __restrict pb = b.ptr();
    float* __restrict pc = out.data();
    for (int i = 0; i < m; ++i)
      for (int p = 0; p < k; ++p) {
        const float av = pa[i * k + p];
        const float* br = pb + static_cast<std::int64_t>(p) * n;
        float* cr = pc + static_cast<std::int64_t>(i) * n;
        for (int j = 0; j < n; ++j) cr[j] += av * br[j];
      }
  }
  auto ai = a.impl();
  auto bi = b.impl();
  return make_op({m, n}, std::move(out), {ai, bi}, [=](const TensorImpl& o) {
    const float* g = o.grad.data();
    if (ai->requires_grad) {
      ai->ensure_grad();
      float* ga = ai->grad.data();
      const float* pb = bi->data.data();
      // dA = dC * B^T
      for (int i = 0; i < m; ++i)
        for (int p = 0; p < k; ++p) {
          float acc = 0.f;
          for (int j = 0; j < n; ++j) acc += g[i * n + j] * pb[p * n + j];
          ga[i * k + p] += acc;
        }
    }
    if (bi->requires_grad) {
      bi->ensure_grad();
      float* gb = bi->grad.data();
      const float* pa = ai->data.data();
      // dB = A^T * dC
      for (int p = 0; p < k; ++p)
        for (int i = 0; i < m; ++i) {
          const float av = pa[i * k + p];
          for (int j = 0; j < n; ++j) gb[p * n + j] += av * g[i * n + j];
        }
    }
  });
}

Tensor l2_norm(const Tensor& a) { return sqrt_t(sum(square(a))); }

// ---- backward driver ----

void backward(const Tensor& loss) {
  if (loss.numel() != 1)
    throw std::invalid_argument("backward: loss must be scalar, got shape " +
                                shape_str(loss.shape()));
  auto root = loss.impl();
  if (!root->requires_grad) return;  // nothing reachable requires grad

  // Iterative post-order DFS over creator nodes.
  std::vector<TensorImpl*> order;
  std::unordered_set<TensorImpl*> seen;
  struct Frame {
    TensorImpl* impl;
    size_t next_parent;
  };
  std::vector<Frame> stack;
  stack.push_back({root.get(), 0});
  seen.insert(root.get());
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.impl->node && f.next_parent < f.impl->node->parents.size()) {
      TensorImpl* p = f.impl->node->parents[f.next_parent++].get();
      if (p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.push_back({p, 0});
      }
    } else {
      order.push_back(f.impl);
      stack.pop_back();
    }
  }

  root->ensure_grad();
  root->grad[0] += 1.f;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorImpl* impl = *it;
    if (impl->node) {
      impl->ensure_grad();
      impl->node->backward(*impl);
    }
  }
}

// ---- misc ----

bool all_finite(const Tensor& t) {
  for (float v : t.data())
    if (!std::isfinite(v)) return false;
  return true;
}

Tensor clamp_unit(const Tensor& t) {
  std::vector<float> out(t.data());
  for (auto& v : out) v = std::min(1.f, std::max(-1.f, v));
  return Tensor::from(std::move(out), t.shape());
}

}  // namespace dbl
