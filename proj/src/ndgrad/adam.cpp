#include "timefilter/ndgrad/adam.hpp"

#include <cmath>
#include <stdexcept>

namespace timefilter::ndgrad {

Adam::Adam(AdamOptions options) {
  if (!(options.lr > 0.0)) throw std::invalid_argument("adam: learning rate must be positive");
  if (options.beta1 < 0.0 || options.beta1 >= 1.0 || options.beta2 < 0.0 || options.beta2 >= 1.0) {
    throw std::invalid_argument("adam: betas must lie in [0, 1)");
  }
  if (!(options.eps > 0.0)) throw std::invalid_argument("adam: eps must be positive");
  state_.options = options;
}

void Adam::step(ParameterStore& params, const GradientMap& grads) {
  for (const auto& name : params.names()) {
    auto it = grads.find(name);
    if (it == grads.end()) throw std::invalid_argument("adam: missing gradient for '" + name + "'");
    if (it->second.shape() != params.at(name).shape()) {
      throw ShapeError("adam: gradient shape " + shape_string(it->second.shape()) +
                       " does not match parameter '" + name + "' " +
                       shape_string(params.at(name).shape()));
    }
    if (!it->second.all_finite()) {
      throw NonFiniteError("adam: non-finite gradient for '" + name + "'");
    }
  }

  const auto& opt = state_.options;
  ++state_.step;
  const double t = static_cast<double>(state_.step);
  const double correct1 = 1.0 - std::pow(opt.beta1, t);
  const double correct2 = 1.0 - std::pow(opt.beta2, t);

  for (const auto& name : params.names()) {
    Array& p = params.at(name);
    const Array& g = grads.at(name);
    auto [mit, _m] = state_.first_moment.try_emplace(name, p.shape(), 0.0);
    auto [vit, _v] = state_.second_moment.try_emplace(name, p.shape(), 0.0);
    Array& m = mit->second;
    Array& v = vit->second;
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = opt.beta1 * m[i] + (1.0 - opt.beta1) * g[i];
      v[i] = opt.beta2 * v[i] + (1.0 - opt.beta2) * g[i] * g[i];
      const double m_hat = m[i] / correct1;
      const double v_hat = v[i] / correct2;
      p[i] -= opt.lr * m_hat / (std::sqrt(v_hat) + opt.eps);
    }
  }
}

}  // namespace timefilter::ndgrad
