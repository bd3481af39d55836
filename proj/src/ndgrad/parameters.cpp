#include "timefilter/ndgrad/parameters.hpp"

#include <cmath>
#include <stdexcept>

namespace timefilter::ndgrad {

void ParameterStore::add(const std::string& name, Array value) {
  if (contains(name)) throw std::invalid_argument("parameter '" + name + "' already registered");
  order_.push_back(name);
  values_.emplace(name, std::move(value));
}

Array& ParameterStore::at(const std::string& name) {
  auto it = values_.find(name);
  if (it == values_.end()) throw std::out_of_range("unknown parameter '" + name + "'");
  return it->second;
}

const Array& ParameterStore::at(const std::string& name) const {
  auto it = values_.find(name);
  if (it == values_.end()) throw std::out_of_range("unknown parameter '" + name + "'");
  return it->second;
}

std::size_t ParameterStore::total_size() const {
  std::size_t n = 0;
  for (const auto& [_, v] : values_) n += v.size();
  return n;
}

bool ParameterStore::bitwise_equal(const ParameterStore& other) const {
  if (order_ != other.order_) return false;
  for (const auto& name : order_) {
    if (!at(name).bitwise_equal(other.at(name))) return false;
  }
  return true;
}

double global_norm(const GradientMap& grads) {
  double sq = 0.0;
  for (const auto& [_, g] : grads) {
    for (double v : g.values()) sq += v * v;
  }
  return std::sqrt(sq);
}

double clip_global_norm(GradientMap& grads, double max_norm) {
  const double norm = global_norm(grads);
  if (max_norm > 0.0 && norm > max_norm) {
    const double factor = max_norm / norm;
    for (auto& [_, g] : grads) {
      for (double& v : g.values()) v *= factor;
    }
  }
  return norm;
}

}  // namespace timefilter::ndgrad
