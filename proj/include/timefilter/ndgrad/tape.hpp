#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "timefilter/ndgrad/array.hpp"

namespace timefilter::ndgrad {

class Tape;

/// Handle to a node recorded on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;

  bool valid() const { return tape_ != nullptr; }
  Tape& tape() const;
  std::size_t id() const { return id_; }
  const Array& value() const;
  const Shape& shape() const { return value().shape(); }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Arguments handed to a primitive's backward rule. `input_grads[k]` is null
/// when input k needs no gradient; otherwise the rule accumulates into it.
struct BackwardArgs {
  std::span<const Array* const> inputs;
  const Array& output;
  const Array& grad_output;
  std::span<Array* const> input_grads;
};

using ForwardFn = std::function<Array(std::span<const Array* const>)>;
using BackwardFn = std::function<void(const BackwardArgs&)>;

struct OpRecord {
  std::string op;
  std::vector<std::size_t> inputs;
  std::size_t output = 0;
};

/// Records primitives in execution order so gradients can be propagated in
/// reverse. Leaves are constants (no gradient) and named parameters.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Non-differentiable input. Rejects non-finite values.
  Var constant(Array value, std::string_view label = "constant");

  /// Registers a named parameter leaf. Registering the same name twice
  /// returns the existing node.
  Var parameter(const std::string& name, const Array& value);

  /// Appends a primitive. The forward function is evaluated immediately and
  /// kept so the tape can be replayed.
  Var record(std::string op, const std::vector<Var>& inputs, ForwardFn forward,
             BackwardFn backward);

  const Array& value(std::size_t id) const { return nodes_.at(id).value; }
  std::size_t size() const { return nodes_.size(); }
  std::vector<OpRecord> operations() const;
  const std::vector<std::string>& parameter_names() const { return param_order_; }

  /// Reverse sweep from a scalar node. Returns one gradient per registered
  /// parameter; parameters the loss does not depend on get zero arrays.
  std::map<std::string, Array> gradient(Var loss) const;

  /// Recomputes every node from the leaves using the recorded forward rules.
  std::vector<Array> replay() const;

 private:
  struct Node {
    std::string op;
    std::vector<std::size_t> inputs;
    Array value;
    ForwardFn forward;
    BackwardFn backward;
    bool requires_grad = false;
  };

  void check_owner(const Var& v, std::string_view op) const;

  std::deque<Node> nodes_;
  std::map<std::string, std::size_t> params_;
  std::vector<std::string> param_order_;
};

}  // namespace timefilter::ndgrad
