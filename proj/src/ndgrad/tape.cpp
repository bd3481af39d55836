#include "timefilter/ndgrad/tape.hpp"

#include <optional>

namespace timefilter::ndgrad {

Tape& Var::tape() const {
  if (!tape_) throw std::logic_error("var: not attached to a tape");
  return *tape_;
}

const Array& Var::value() const { return tape().value(id_); }

void Tape::check_owner(const Var& v, std::string_view op) const {
  if (!v.valid() || v.tape_ != this || v.id_ >= nodes_.size()) {
    throw std::invalid_argument(std::string(op) + ": input does not belong to this tape");
  }
}

Var Tape::constant(Array value, std::string_view label) {
  if (!value.all_finite()) {
    throw NonFiniteError(std::string(label) + ": non-finite input rejected");
  }
  Node node;
  node.op = std::string(label);
  node.value = std::move(value);
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Tape::parameter(const std::string& name, const Array& value) {
  if (auto it = params_.find(name); it != params_.end()) return Var(this, it->second);
  if (!value.all_finite()) throw NonFiniteError("parameter '" + name + "': non-finite value");
  Node node;
  node.op = "parameter:" + name;
  node.value = value;
  node.requires_grad = true;
  nodes_.push_back(std::move(node));
  params_.emplace(name, nodes_.size() - 1);
  param_order_.push_back(name);
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(std::string op, const std::vector<Var>& inputs, ForwardFn forward,
                 BackwardFn backward) {
  Node node;
  node.op = std::move(op);
  std::vector<const Array*> in;
  in.reserve(inputs.size());
  for (const auto& v : inputs) {
    check_owner(v, node.op);
    node.inputs.push_back(v.id());
    in.push_back(&nodes_[v.id()].value);
    node.requires_grad = node.requires_grad || nodes_[v.id()].requires_grad;
  }
  node.value = forward(in);
  if (!node.value.all_finite()) {
    throw NonFiniteError(node.op + ": produced non-finite values");
  }
  node.forward = std::move(forward);
  node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

std::vector<OpRecord> Tape::operations() const {
  std::vector<OpRecord> out;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (!nodes_[i].forward) continue;
    out.push_back({nodes_[i].op, nodes_[i].inputs, i});
  }
  return out;
}

std::map<std::string, Array> Tape::gradient(Var loss) const {
  check_owner(loss, "gradient");
  const Array& lv = nodes_[loss.id()].value;
  if (!lv.is_scalar()) {
    throw ShapeError("gradient: loss node has shape " + shape_string(lv.shape()) +
                     ", expected a scalar");
  }

  std::vector<std::optional<Array>> grads(nodes_.size());
  grads[loss.id()] = Array(lv.shape(), 1.0);

  std::vector<const Array*> in;
  std::vector<Array*> in_grads;
  for (std::size_t id = loss.id() + 1; id-- > 0;) {
    const Node& node = nodes_[id];
    if (!grads[id] || !node.backward || !node.requires_grad) continue;
    in.clear();
    in_grads.clear();
    for (auto src : node.inputs) {
      in.push_back(&nodes_[src].value);
      if (nodes_[src].requires_grad) {
        if (!grads[src]) grads[src] = Array(nodes_[src].value.shape(), 0.0);
        in_grads.push_back(&*grads[src]);
      } else {
        in_grads.push_back(nullptr);
      }
    }
    node.backward(BackwardArgs{in, node.value, *grads[id], in_grads});
  }

  std::map<std::string, Array> out;
  for (const auto& [name, id] : params_) {
    out.emplace(name, grads[id] ? *grads[id] : Array(nodes_[id].value.shape(), 0.0));
  }
  return out;
}

std::vector<Array> Tape::replay() const {
  std::vector<Array> values;
  values.reserve(nodes_.size());
  std::vector<const Array*> in;
  for (const auto& node : nodes_) {
    if (!node.forward) {
      values.push_back(node.value);
      continue;
    }
    in.clear();
    for (auto src : node.inputs) in.push_back(&values[src]);
    values.push_back(node.forward(in));
  }
  return values;
}

}  // namespace timefilter::ndgrad
