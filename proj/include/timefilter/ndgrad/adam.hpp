#pragma once

#include <cstddef>
#include <map>
#include <string>

#include "timefilter/ndgrad/parameters.hpp"

namespace timefilter::ndgrad {

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  AdamOptions options;
  std::size_t step = 0;
  std::map<std::string, Array> first_moment;
  std::map<std::string, Array> second_moment;
};

/// Adam with bias correction. Moment buffers are created lazily on the first
/// step for every parameter present in the store.
class Adam {
 public:
  explicit Adam(AdamOptions options = {});

  /// Applies one update. A non-finite or mis-shaped gradient rejects the whole
  /// step before any parameter or moment is touched.
  void step(ParameterStore& params, const GradientMap& grads);

  const AdamState& state() const { return state_; }
  std::size_t step_count() const { return state_.step; }

 private:
  AdamState state_;
};

}  // namespace timefilter::ndgrad
