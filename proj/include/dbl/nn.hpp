#pragma once

#include <string>
#include <utility>
#include <vector>

#include "dbl/rng.hpp"
#include "dbl/tensor.hpp"

namespace dbl {

// Ordered collection of named trainable parameters. Order is the registration
// order and is part of the checkpoint format, so keep it stable.
class ParamStore {
 public:
  // Returns a handle sharing the stored buffer (safe across later adds).
  Tensor add(const std::string& name, Tensor t);
  Tensor& find(const std::string& name);
  const Tensor& find(const std::string& name) const;
  bool contains(const std::string& name) const;

  void zero_grad();
  int count() const;  // total number of scalar parameters

  std::vector<std::pair<std::string, Tensor>>& items() { return items_; }
  const std::vector<std::pair<std::string, Tensor>>& items() const { return items_; }

  // Copies parameter values from another store (shapes and names must match).
  void copy_from(const ParamStore& other);

 private:
  std::vector<std::pair<std::string, Tensor>> items_;
};

// Adam optimizer with bias correction. Parameters that have no gradient
// buffer on a given step are skipped.
class Adam {
 public:
  explicit Adam(ParamStore& params, float lr, float beta1 = 0.9f,
                float beta2 = 0.999f, float eps = 1e-8f);

  void step();
  void set_lr(float lr) { lr_ = lr; }
  float lr() const { return lr_; }
  int steps_taken() const { return t_; }

 private:
  ParamStore& params_;
  float lr_, beta1_, beta2_, eps_;
  int t_ = 0;
  std::vector<std::vector<float>> m_, v_;
};

// He/Kaiming-uniform fill: U[-b, b] with b = sqrt(6 / fan_in).
void kaiming_uniform(Tensor& t, int fan_in, RandomSource& rng);

}  // namespace dbl
