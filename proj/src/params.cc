#include "lava/params.h"

#include <cmath>

namespace lava {

Tensor& ParamStore::add(const std::string& name, Tensor value) {
  if (by_name_.contains(name)) {
    throw ContractError("duplicate parameter name: " + name);
  }
  value.set_requires_grad(true);
  names_.push_back(name);
  return by_name_.emplace(name, std::move(value)).first->second;
}

Tensor& ParamStore::get(const std::string& name) {
  auto it = by_name_.find(name);
  if (it == by_name_.end()) throw ContractError("unknown parameter: " + name);
  return it->second;
}

const Tensor& ParamStore::get(const std::string& name) const {
  auto it = by_name_.find(name);
  if (it == by_name_.end()) throw ContractError("unknown parameter: " + name);
  return it->second;
}

bool ParamStore::contains(const std::string& name) const {
  return by_name_.contains(name);
}

std::vector<Tensor> ParamStore::tensors() const {
  std::vector<Tensor> out;
  out.reserve(names_.size());
  for (const auto& n : names_) out.push_back(by_name_.at(n));
  return out;
}

std::size_t ParamStore::scalar_count() const {
  std::size_t total = 0;
  for (const auto& [_, t] : by_name_) total += t.numel();
  return total;
}

void ParamStore::zero_grad() {
  for (auto& [_, t] : by_name_) t.zero_grad();
}

NamedTensors ParamStore::snapshot(const std::string& prefix) const {
  NamedTensors out;
  for (const auto& n : names_) {
    if (n.starts_with(prefix)) out.emplace(n, by_name_.at(n).detach());
  }
  return out;
}

void ParamStore::assign(const NamedTensors& values, const std::string& prefix) {
  for (const auto& n : names_) {
    if (!n.starts_with(prefix)) continue;
    auto it = values.find(n);
    if (it == values.end()) throw ContractError("missing tensor: " + n);
    Tensor& dst = by_name_.at(n);
    if (it->second.shape() != dst.shape()) {
      throw DimensionError("tensor " + n + " has shape " +
                           shape_str(it->second.shape()) + ", expected " +
                           shape_str(dst.shape()));
    }
    auto out = dst.mutable_data();
    auto in = it->second.data();
    std::copy(in.begin(), in.end(), out.begin());
  }
}

namespace init {

Tensor xavier(std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<double> v(fan_in * fan_out);
  for (double& x : v) x = dist(rng);
  return Tensor::from({fan_in, fan_out}, std::move(v));
}

Tensor normal(Shape shape, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = dist(rng);
  return Tensor::from(std::move(shape), std::move(v));
}

Tensor constant(Shape shape, double value) {
  return Tensor::full(std::move(shape), value);
}

}  // namespace init

}  // namespace lava
