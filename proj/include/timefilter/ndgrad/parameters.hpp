#pragma once

#include <map>
#include <string>
#include <vector>

#include "timefilter/ndgrad/array.hpp"

namespace timefilter::ndgrad {

using GradientMap = std::map<std::string, Array>;

/// Named trainable arrays, iterated in registration order.
class ParameterStore {
 public:
  void add(const std::string& name, Array value);
  bool contains(const std::string& name) const { return values_.count(name) != 0; }
  Array& at(const std::string& name);
  const Array& at(const std::string& name) const;
  const std::vector<std::string>& names() const { return order_; }
  std::size_t count() const { return order_.size(); }
  std::size_t total_size() const;

  bool bitwise_equal(const ParameterStore& other) const;

 private:
  std::vector<std::string> order_;
  std::map<std::string, Array> values_;
};

double global_norm(const GradientMap& grads);

/// Rescales all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
double clip_global_norm(GradientMap& grads, double max_norm);

}  // namespace timefilter::ndgrad
