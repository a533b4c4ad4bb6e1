#pragma once

#include <map>
#include <random>
#include <string>
#include <vector>

#include "lava/tensor.h"

namespace lava {

using NamedTensors = std::map<std::string, Tensor>;

// Ordered registry of trainable tensors keyed by canonical dotted names.
class ParamStore {
 public:
  Tensor& add(const std::string& name, Tensor value);
  Tensor& get(const std::string& name);
  const Tensor& get(const std::string& name) const;
  bool contains(const std::string& name) const;

  const std::vector<std::string>& names() const { return names_; }
  std::vector<Tensor> tensors() const;
  std::size_t size() const { return names_.size(); }
  std::size_t scalar_count() const;

  void zero_grad();
  // Named copies of every parameter whose name starts with `prefix`.
  NamedTensors snapshot(const std::string& prefix = "") const;
  // Copies values in; throws naming the first missing key.
  void assign(const NamedTensors& values, const std::string& prefix = "");

 private:
  std::vector<std::string> names_;
  std::map<std::string, Tensor> by_name_;
};

namespace init {
Tensor xavier(std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng);
Tensor normal(Shape shape, double stddev, std::mt19937_64& rng);
Tensor constant(Shape shape, double value);
}  // namespace init

}  // namespace lava
