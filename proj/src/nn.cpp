#include "dbl/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace dbl {

Tensor ParamStore::add(const std::string& name, Tensor t) {
  if (contains(name)) throw std::invalid_argument("duplicate parameter name: " + name);
  t.set_requires_grad(true);
  items_.emplace_back(name, t);
  return t;
}

Tensor& ParamStore::find(const std::string& name) {
  for (auto& [n, t] : items_)
    if (n == name) return t;
  throw std::invalid_argument("no such parameter: " + name);
}

const Tensor& ParamStore::find(const std::string& name) const {
  for (const auto& [n, t] : items_)
    if (n == name) return t;
  throw std::invalid_argument("no such parameter: " + name);
}

bool ParamStore::contains(const std::string& name) const {
  for (const auto& [n, t] : items_)
    if (n == name) return true;
  return false;
}

void ParamStore::zero_grad() {
  for (auto& [n, t] : items_) t.zero_grad();
}

int ParamStore::count() const {
  int n = 0;
  for (const auto& [name, t] : items_) n += static_cast<int>(t.numel());
  return n;
}

void ParamStore::copy_from(const ParamStore& other) {
  if (items_.size() != other.items_.size())
    throw std::invalid_argument("copy_from: parameter count mismatch");
  for (size_t i = 0; i < items_.size(); ++i) {
    auto& dst = items_[i];
    const auto& src = other.items_[i];
    if (dst.first != src.first || dst.second.shape() != src.second.shape())
      throw std::invalid_argument("copy_from: mismatch at " + dst.first);
    dst.second.impl()->data = src.second.impl()->data;
  }
}

Adam::Adam(ParamStore& params, float lr, float beta1, float beta2, float eps)
    : params_(params), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (const auto& [n, t] : params_.items()) {
    m_.emplace_back(t.numel(), 0.f);
    v_.emplace_back(t.numel(), 0.f);
  }
}

void Adam::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(static_cast<double>(beta1_), t_);
  const double bc2 = 1.0 - std::pow(static_cast<double>(beta2_), t_);
  auto& items = params_.items();
  for (size_t i = 0; i < items.size(); ++i) {
    Tensor& p = items[i].second;
    if (!p.has_grad()) continue;
    const std::vector<float>& g = p.impl()->grad;
    std::vector<float>& data = p.impl()->data;
    std::vector<float>& m = m_[i];
    std::vector<float>& v = v_[i];
    for (size_t k = 0; k < data.size(); ++k) {
      m[k] = beta1_ * m[k] + (1.f - beta1_) * g[k];
      v[k] = beta2_ * v[k] + (1.f - beta2_) * g[k] * g[k];
      const double mh = m[k] / bc1;
      const double vh = v[k] / bc2;
      data[k] -= static_cast<float>(lr_ * mh / (std::sqrt(vh) + eps_));
    }
  }
}

void kaiming_uniform(Tensor& t, int fan_in, RandomSource& rng) {
  if (fan_in <= 0) throw std::invalid_argument("kaiming_uniform: fan_in must be positive");
  const float bound = std::sqrt(6.f / static_cast<float>(fan_in));
  for (int i = 0; i < t.numel(); ++i) t.impl()->data[i] = rng.uniform(-bound, bound);
}

}  // namespace dbl
