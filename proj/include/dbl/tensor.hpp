#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "dbl/rng.hpp"

namespace dbl {

using Shape = std::vector<int>;

std::string shape_str(const Shape& s);
std::int64_t shape_numel(const Shape& s);

struct TensorImpl;

// Backward rule of one recorded operation. `out` is the impl that owns the
// node; rules read out->grad and accumulate into parent grads.
struct Node {
  std::vector<std::shared_ptr<TensorImpl>> parents;
  std::function<void(const TensorImpl& out)> backward;
};

struct TensorImpl {
  Shape shape;
  std::vector<float> data;
  bool requires_grad = false;
  std::vector<float> grad;  // allocated on demand, same length as data
  std::unique_ptr<Node> node;

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.f);
  }
};

// Dense float32 tensor with value semantics on a shared buffer. Recording a
// differentiable op attaches a Node; backward() walks the recorded graph.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(const Shape& shape, bool requires_grad = false);
  static Tensor full(const Shape& shape, float value, bool requires_grad = false);
  static Tensor scalar(float value, bool requires_grad = false);
  static Tensor from(std::vector<float> data, const Shape& shape, bool requires_grad = false);
  static Tensor uniform(const Shape& shape, RandomSource& rng, float lo = 0.f, float hi = 1.f,
                        bool requires_grad = false);
  static Tensor normal(const Shape& shape, RandomSource& rng, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::int64_t numel() const { return static_cast<std::int64_t>(impl_->data.size()); }
  int dim(int i) const { return impl_->shape.at(static_cast<size_t>(i)); }
  int rank() const { return static_cast<int>(impl_->shape.size()); }

  std::vector<float>& data() { return impl_->data; }
  const std::vector<float>& data() const { return impl_->data; }
  float* ptr() { return impl_->data.data(); }
  const float* ptr() const { return impl_->data.data(); }

  float value() const;  // single-element tensors only
  float at(std::int64_t i) const { return impl_->data[static_cast<size_t>(i)]; }

  bool requires_grad() const { return impl_->requires_grad; }
  Tensor& set_requires_grad(bool v) {
    impl_->requires_grad = v;
    return *this;
  }
  bool has_grad() const { return impl_ && impl_->grad.size() == impl_->data.size(); }
  std::vector<float>& grad();
  const std::vector<float>& grad() const;
  void zero_grad() {
    if (impl_) impl_->grad.assign(impl_->data.size(), 0.f);
  }

  // Same values, no graph, no grad requirement.
  Tensor detach() const;
  // Deep copy preserving requires_grad (fresh grad buffer, no graph).
  Tensor clone() const;

  std::shared_ptr<TensorImpl> impl() const { return impl_; }

  static Tensor wrap(std::shared_ptr<TensorImpl> impl) {
    Tensor t;
    t.impl_ = std::move(impl);
    return t;
  }

 private:
  std::shared_ptr<TensorImpl> impl_;
};

// ---- elementwise & linear ops (all differentiable) ----

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);  // rejects zero denominators
Tensor add(const Tensor& a, float b);
Tensor sub(float a, const Tensor& b);
Tensor scale(const Tensor& a, float s);
Tensor neg(const Tensor& a);

Tensor sum(const Tensor& a);           // -> scalar
Tensor mean(const Tensor& a);          // -> scalar
Tensor mean_axis0(const Tensor& a);    // [N, ...] -> [...]
Tensor square(const Tensor& a);
Tensor sqrt_t(const Tensor& a);        // rejects negative inputs
Tensor silu(const Tensor& a);

Tensor matmul(const Tensor& a, const Tensor& b);  // 2-D only

// 3x3, stride 1, zero padding 1. x: [B,C,H,W], w: [Co,Ci,3,3], bias: [Co] or empty.
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias);

Tensor group_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, int groups,
                  float eps = 1e-5f);

Tensor avg_pool2(const Tensor& x);         // [B,C,H,W] -> [B,C,H/2,W/2]
Tensor global_avg_pool(const Tensor& x);   // [B,C,H,W] -> [B,C]
Tensor global_max_pool(const Tensor& x);   // [B,C,H,W] -> [B,C]
Tensor upsample_nearest2(const Tensor& x); // [B,C,H,W] -> [B,C,2H,2W]
Tensor concat_channels(const Tensor& a, const Tensor& b);

// Multiply each leading-axis slice by its own constant: out[b,...] = c[b]*x[b,...].
Tensor scale_rows(const Tensor& x, const std::vector<float>& c);

// Add one image to every sample: out[b,...] = x[b,...] + img[...].
Tensor add_image(const Tensor& x, const Tensor& img);

// bias shape [C] (shared) or [B,C] (per sample) added across H,W.
Tensor add_channel_bias(const Tensor& x, const Tensor& bias);
Tensor scale_channels(const Tensor& x, const Tensor& s);   // [B,C,H,W] * [B,C]
Tensor add_row_bias(const Tensor& x, const Tensor& bias);  // [B,C] + [C]

// ---- compositions ----

inline Tensor mse(const Tensor& a, const Tensor& b) { return mean(square(sub(a, b))); }
Tensor l2_norm(const Tensor& a);  // sqrt(sum(a^2)) -> scalar

// ---- autodiff driver ----

// Reverse-mode sweep from a scalar loss. Each reachable node is visited
// exactly once in reverse topological order; leaf grads accumulate.
void backward(const Tensor& loss);

// ---- misc ----

bool all_finite(const Tensor& t);
Tensor clamp_unit(const Tensor& t);  // clamp to [-1, 1], non-differentiable

}  // namespace dbl
