#pragma once

#include <cstddef>
#include <vector>

#include "timefilter/ndgrad/tape.hpp"

// Differentiable primitives. Binary elementwise ops broadcast numpy-style
// (shapes right-aligned, extents equal or 1).
namespace timefilter::ndgrad {

Shape broadcast_shapes(const Shape& a, const Shape& b, const char* op);

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);
Var neg(Var a);
Var scale(Var a, double factor);
Var add_scalar(Var a, double offset);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator/(Var a, Var b) { return div(a, b); }
inline Var operator-(Var a) { return neg(a); }

/// Multiplies by a constant 0/1 (or any constant) mask that broadcasts to `a`.
Var masked(Var a, const Array& mask);

/// a: [..., m, k]; b: [k, p] (shared) or [..., k, p] with identical leading extents.
Var matmul(Var a, Var b);
Var transpose(Var a);  // swaps the last two axes
Var permute(Var a, const std::vector<std::size_t>& axes);
Var reshape(Var a, Shape shape);
Var slice_last(Var a, std::size_t start, std::size_t length);
Var concat(const std::vector<Var>& parts, std::size_t axis);

Var gelu(Var a);  // exact erf form
Var softplus(Var a);
Var sigmoid(Var a);
Var exp(Var a);
/// Natural log of max(a, floor). The gradient is zero where a < floor.
Var log(Var a, double floor = 0.0);
/// Square root with a zero subgradient at 0.
Var sqrt(Var a);
Var square(Var a);
Var abs(Var a);  // subgradient 0 at 0
/// 1/a where a != 0, else 0.
Var safe_reciprocal(Var a);
Var softmax(Var a);  // along the last axis, max-subtracted

Var sum(Var a);
Var mean(Var a);
Var sum_axis(Var a, std::size_t axis, bool keepdim = false);
Var mean_axis(Var a, std::size_t axis, bool keepdim = false);

/// Same value, no gradient flows back through it.
Var stop_gradient(Var a);

// Array-level kernels shared with non-differentiable code paths.
double gelu_value(double x);
double softplus_value(double x);
Array softmax_rows(const Array& a);

}  // namespace timefilter::ndgrad
