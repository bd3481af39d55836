#include "timefilter/ndgrad/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

namespace timefilter::ndgrad {

namespace {

std::vector<std::size_t> contiguous_strides(const Shape& s) {
  std::vector<std::size_t> st(s.size(), 1);
  for (std::size_t i = s.size(); i-- > 1;) st[i - 1] = st[i] * s[i];
  return st;
}

// Strides of `in` expressed per axis of `out`; broadcast axes get stride 0.
std::vector<std::size_t> operand_strides(const Shape& out, const Shape& in) {
  const std::size_t r_out = out.size();
  const std::size_t r_in = in.size();
  const auto cs = contiguous_strides(in);
  std::vector<std::size_t> st(r_out, 0);
  for (std::size_t ax = r_out - r_in; ax < r_out; ++ax) {
    const std::size_t oa = ax - (r_out - r_in);
    st[ax] = in[oa] == 1 ? 0 : cs[oa];
  }
  return st;
}

// Calls f(out_index, a_index, b_index) for every element of `out`.
template <class F>
void for_each_pair(const Shape& out, const std::vector<std::size_t>& sa,
                   const std::vector<std::size_t>& sb, F&& f) {
  const std::size_t rank = out.size();
  if (rank == 0) {
    f(std::size_t{0}, std::size_t{0}, std::size_t{0});
    return;
  }
  const std::size_t total = shape_size(out);
  const std::size_t last = out[rank - 1];
  const std::size_t la = sa[rank - 1];
  const std::size_t lb = sb[rank - 1];
  std::vector<std::size_t> ctr(rank, 0);
  std::size_t ia = 0;
  std::size_t ib = 0;
  for (std::size_t o = 0; o < total; o += last) {
    for (std::size_t j = 0; j < last; ++j) f(o + j, ia + j * la, ib + j * lb);
    for (std::size_t ax = rank - 1; ax-- > 0;) {
      ++ctr[ax];
      ia += sa[ax];
      ib += sb[ax];
      if (ctr[ax] < out[ax]) break;
      ia -= sa[ax] * out[ax];
      ib -= sb[ax] * out[ax];
      ctr[ax] = 0;
    }
  }
}

template <class Value, class DA, class DB>
Var binary(const char* name, Var a, Var b, Value value, DA da, DB db) {
  const Shape out = broadcast_shapes(a.shape(), b.shape(), name);
  auto forward = [out, value](std::span<const Array* const> in) {
    const Array& x = *in[0];
    const Array& y = *in[1];
    Array r(out);
    if (x.shape() == out && y.shape() == out) {
      for (std::size_t i = 0; i < r.size(); ++i) r[i] = value(x[i], y[i]);
      return r;
    }
    for_each_pair(out, operand_strides(out, x.shape()), operand_strides(out, y.shape()),
                  [&](std::size_t o, std::size_t i, std::size_t j) { r[o] = value(x[i], y[j]); });
    return r;
  };
  auto backward = [out, da, db](const BackwardArgs& args) {
    const Array& x = *args.inputs[0];
    const Array& y = *args.inputs[1];
    const Array& g = args.grad_output;
    Array* gx = args.input_grads[0];
    Array* gy = args.input_grads[1];
    if (x.shape() == out && y.shape() == out) {
      for (std::size_t i = 0; i < g.size(); ++i) {
        if (gx) (*gx)[i] += g[i] * da(x[i], y[i]);
        if (gy) (*gy)[i] += g[i] * db(x[i], y[i]);
      }
      return;
    }
    for_each_pair(out, operand_strides(out, x.shape()), operand_strides(out, y.shape()),
                  [&](std::size_t o, std::size_t i, std::size_t j) {
                    if (gx) (*gx)[i] += g[o] * da(x[i], y[j]);
                    if (gy) (*gy)[j] += g[o] * db(x[i], y[j]);
                  });
  };
  return a.tape().record(name, {a, b}, forward, backward);
}

// deriv(x, y) returns dy/dx given the input x and output y.
template <class Value, class Deriv>
Var unary(const char* name, Var a, Value value, Deriv deriv) {
  auto forward = [value](std::span<const Array* const> in) {
    const Array& x = *in[0];
    Array r(x.shape());
    for (std::size_t i = 0; i < r.size(); ++i) r[i] = value(x[i]);
    return r;
  };
  auto backward = [deriv](const BackwardArgs& args) {
    const Array& x = *args.inputs[0];
    Array& gx = *args.input_grads[0];
    for (std::size_t i = 0; i < x.size(); ++i) {
      gx[i] += args.grad_output[i] * deriv(x[i], args.output[i]);
    }
  };
  return a.tape().record(name, {a}, forward, backward);
}

struct AxisSplit {
  std::size_t outer = 1;
  std::size_t len = 1;
  std::size_t inner = 1;
};

AxisSplit split_at(const Shape& s, std::size_t axis) {
  AxisSplit r;
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  r.len = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

}  // namespace

Shape broadcast_shapes(const Shape& a, const Shape& b, const char* op) {
  const std::size_t rank = std::max(a.size(), b.size());
  Shape out(rank, 1);
  for (std::size_t i = 0; i < rank; ++i) {
    const std::size_t da = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
    const std::size_t db = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
    if (da != db && da != 1 && db != 1) {
      throw ShapeError(std::string(op) + ": cannot broadcast " + shape_string(a) + " with " +
                       shape_string(b));
    }
    out[i] = std::max(da, db);
  }
  return out;
}

Var add(Var a, Var b) {
  return binary(
      "add", a, b, [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

Var sub(Var a, Var b) {
  return binary(
      "sub", a, b, [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

Var mul(Var a, Var b) {
  return binary(
      "mul", a, b, [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

Var div(Var a, Var b) {
  return binary(
      "div", a, b, [](double x, double y) { return x / y; },
      [](double, double y) { return 1.0 / y; }, [](double x, double y) { return -x / (y * y); });
}

Var masked(Var a, const Array& mask) {
  Var m = a.tape().constant(mask, "mask");
  return binary(
      "masked", a, m, [](double x, double y) { return x * y; },
      [](double, double y) { return y; }, [](double, double) { return 0.0; });
}

Var neg(Var a) {
  return unary(
      "neg", a, [](double x) { return -x; }, [](double, double) { return -1.0; });
}

Var scale(Var a, double factor) {
  return unary(
      "scale", a, [factor](double x) { return x * factor; },
      [factor](double, double) { return factor; });
}

Var add_scalar(Var a, double offset) {
  return unary(
      "add_scalar", a, [offset](double x) { return x + offset; },
      [](double, double) { return 1.0; });
}

Var matmul(Var a, Var b) {
  const Shape sa = a.shape();
  const Shape sb = b.shape();
  if (sa.size() < 2 || sb.size() < 2) {
    throw ShapeError("matmul: operands need rank >= 2, got " + shape_string(sa) + " and " +
                     shape_string(sb));
  }
  const bool shared = sb.size() == 2;
  if (!shared) {
    if (sb.size() != sa.size() || !std::equal(sa.begin(), sa.end() - 2, sb.begin())) {
      throw ShapeError("matmul: batch extents differ: " + shape_string(sa) + " and " +
                       shape_string(sb));
    }
  }
  const std::size_t m = sa[sa.size() - 2];
  const std::size_t k = sa[sa.size() - 1];
  const std::size_t p = sb[sb.size() - 1];
  if (sb[sb.size() - 2] != k) {
    throw ShapeError("matmul: inner extents differ: " + shape_string(sa) + " and " +
                     shape_string(sb));
  }
  const std::size_t batch = shape_size(sa) / (m * k);
  Shape out = sa;
  out.back() = p;

  auto forward = [=](std::span<const Array* const> in) {
    const double* A = in[0]->data();
    const double* B = in[1]->data();
    Array r(out);
    double* C = r.data();
    for (std::size_t bt = 0; bt < batch; ++bt) {
      const double* Ab = A + bt * m * k;
      const double* Bb = B + (shared ? 0 : bt * k * p);
      double* Cb = C + bt * m * p;
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t kk = 0; kk < k; ++kk) {
          const double aik = Ab[i * k + kk];
          if (aik == 0.0) continue;
          const double* brow = Bb + kk * p;
          double* crow = Cb + i * p;
          for (std::size_t j = 0; j < p; ++j) crow[j] += aik * brow[j];
        }
      }
    }
    return r;
  };
  auto backward = [=](const BackwardArgs& args) {
    const double* A = args.inputs[0]->data();
    const double* B = args.inputs[1]->data();
    const double* G = args.grad_output.data();
    Array* gA = args.input_grads[0];
    Array* gB = args.input_grads[1];
    for (std::size_t bt = 0; bt < batch; ++bt) {
      const double* Ab = A + bt * m * k;
      const double* Bb = B + (shared ? 0 : bt * k * p);
      const double* Gb = G + bt * m * p;
      if (gA) {
        double* gAb = gA->data() + bt * m * k;
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t kk = 0; kk < k; ++kk) {
            double acc = 0.0;
            const double* brow = Bb + kk * p;
            const double* grow = Gb + i * p;
            for (std::size_t j = 0; j < p; ++j) acc += grow[j] * brow[j];
            gAb[i * k + kk] += acc;
          }
        }
      }
      if (gB) {
        double* gBb = gB->data() + (shared ? 0 : bt * k * p);
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t kk = 0; kk < k; ++kk) {
            const double aik = Ab[i * k + kk];
            if (aik == 0.0) continue;
            const double* grow = Gb + i * p;
            double* gbrow = gBb + kk * p;
            for (std::size_t j = 0; j < p; ++j) gbrow[j] += aik * grow[j];
          }
        }
      }
    }
  };
  return a.tape().record("matmul", {a, b}, forward, backward);
}

Var permute(Var a, const std::vector<std::size_t>& axes) {
  const Shape in_shape = a.shape();
  if (axes.size() != in_shape.size()) {
    throw ShapeError("permute: " + std::to_string(axes.size()) + " axes for shape " +
                     shape_string(in_shape));
  }
  std::vector<bool> seen(axes.size(), false);
  for (auto ax : axes) {
    if (ax >= axes.size() || seen[ax]) throw ShapeError("permute: invalid axis order");
    seen[ax] = true;
  }
  Shape out(axes.size());
  const auto cs = contiguous_strides(in_shape);
  std::vector<std::size_t> st(axes.size());
  for (std::size_t d = 0; d < axes.size(); ++d) {
    out[d] = in_shape[axes[d]];
    st[d] = cs[axes[d]];
  }
  const std::vector<std::size_t> zero(axes.size(), 0);
  auto forward = [=](std::span<const Array* const> in) {
    const Array& x = *in[0];
    Array r(out);
    for_each_pair(out, st, zero, [&](std::size_t o, std::size_t i, std::size_t) { r[o] = x[i]; });
    return r;
  };
  auto backward = [=](const BackwardArgs& args) {
    Array& gx = *args.input_grads[0];
    const Array& g = args.grad_output;
    for_each_pair(out, st, zero, [&](std::size_t o, std::size_t i, std::size_t) { gx[i] += g[o]; });
  };
  return a.tape().record("permute", {a}, forward, backward);
}

Var transpose(Var a) {
  const std::size_t r = a.shape().size();
  if (r < 2) throw ShapeError("transpose: rank " + std::to_string(r) + " < 2");
  std::vector<std::size_t> axes(r);
  for (std::size_t i = 0; i < r; ++i) axes[i] = i;
  std::swap(axes[r - 1], axes[r - 2]);
  return permute(a, axes);
}

Var reshape(Var a, Shape shape) {
  if (shape_size(shape) != a.value().size()) {
    throw ShapeError("reshape: cannot view " + shape_string(a.shape()) + " as " +
                     shape_string(shape));
  }
  auto forward = [shape](std::span<const Array* const> in) { return in[0]->reshaped(shape); };
  auto backward = [](const BackwardArgs& args) {
    Array& gx = *args.input_grads[0];
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += args.grad_output[i];
  };
  return a.tape().record("reshape", {a}, forward, backward);
}

Var slice_last(Var a, std::size_t start, std::size_t length) {
  const Shape in_shape = a.shape();
  if (in_shape.empty() || length == 0 || start + length > in_shape.back()) {
    throw ShapeError("slice_last: range [" + std::to_string(start) + ", " +
                     std::to_string(start + length) + ") outside " + shape_string(in_shape));
  }
  const std::size_t last = in_shape.back();
  const std::size_t outer = shape_size(in_shape) / last;
  Shape out = in_shape;
  out.back() = length;
  auto forward = [=](std::span<const Array* const> in) {
    Array r(out);
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(in[0]->data() + o * last + start, length, r.data() + o * length);
    }
    return r;
  };
  auto backward = [=](const BackwardArgs& args) {
    Array& gx = *args.input_grads[0];
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t j = 0; j < length; ++j) {
        gx[o * last + start + j] += args.grad_output[o * length + j];
      }
    }
  };
  return a.tape().record("slice_last", {a}, forward, backward);
}

Var concat(const std::vector<Var>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  Shape out = parts[0].shape();
  if (axis >= out.size()) throw ShapeError("concat: axis out of range for " + shape_string(out));
  std::vector<std::size_t> lens;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const Shape& s = parts[p].shape();
    if (s.size() != out.size()) throw ShapeError("concat: rank mismatch");
    for (std::size_t d = 0; d < s.size(); ++d) {
      if (d != axis && s[d] != out[d]) {
        throw ShapeError("concat: " + shape_string(s) + " does not match " +
                         shape_string(parts[0].shape()));
      }
    }
    lens.push_back(s[axis]);
  }
  out[axis] = 0;
  for (auto l : lens) out[axis] += l;
  const AxisSplit sp = split_at(out, axis);
  auto forward = [=](std::span<const Array* const> in) {
    Array r(out);
    std::size_t offset = 0;
    for (std::size_t p = 0; p < in.size(); ++p) {
      const std::size_t block = lens[p] * sp.inner;
      for (std::size_t o = 0; o < sp.outer; ++o) {
        std::copy_n(in[p]->data() + o * block, block,
                    r.data() + o * sp.len * sp.inner + offset * sp.inner);
      }
      offset += lens[p];
    }
    return r;
  };
  auto backward = [=](const BackwardArgs& args) {
    std::size_t offset = 0;
    for (std::size_t p = 0; p < args.inputs.size(); ++p) {
      const std::size_t block = lens[p] * sp.inner;
      if (Array* gp = args.input_grads[p]) {
        for (std::size_t o = 0; o < sp.outer; ++o) {
          const double* src = args.grad_output.data() + o * sp.len * sp.inner + offset * sp.inner;
          double* dst = gp->data() + o * block;
          for (std::size_t j = 0; j < block; ++j) dst[j] += src[j];
        }
      }
      offset += lens[p];
    }
  };
  return parts[0].tape().record("concat", parts, forward, backward);
}

double gelu_value(double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); }

double softplus_value(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

namespace {
double sigmoid_value(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}
}  // namespace

Var gelu(Var a) {
  return unary("gelu", a, gelu_value, [](double x, double) {
    const double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
    const double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
    return cdf + x * pdf;
  });
}

Var softplus(Var a) {
  return unary("softplus", a, softplus_value, [](double x, double) { return sigmoid_value(x); });
}

Var sigmoid(Var a) {
  return unary("sigmoid", a, sigmoid_value, [](double, double y) { return y * (1.0 - y); });
}

Var exp(Var a) {
  return unary(
      "exp", a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var log(Var a, double floor) {
  return unary(
      "log", a, [floor](double x) { return std::log(std::max(x, floor)); },
      [floor](double x, double) { return x < floor ? 0.0 : 1.0 / x; });
}

Var sqrt(Var a) {
  return unary(
      "sqrt", a, [](double x) { return std::sqrt(x); },
      [](double, double y) { return y > 0.0 ? 0.5 / y : 0.0; });
}

Var square(Var a) {
  return unary(
      "square", a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Var abs(Var a) {
  return unary(
      "abs", a, [](double x) { return std::fabs(x); },
      [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

Var safe_reciprocal(Var a) {
  return unary(
      "safe_reciprocal", a, [](double x) { return x != 0.0 ? 1.0 / x : 0.0; },
      [](double x, double) { return x != 0.0 ? -1.0 / (x * x) : 0.0; });
}

Array softmax_rows(const Array& x) {
  if (x.rank() == 0) throw ShapeError("softmax: scalar input");
  const std::size_t last = x.shape().back();
  const std::size_t rows = x.size() / last;
  Array r(x.shape());
  for (std::size_t row = 0; row < rows; ++row) {
    const double* src = x.data() + row * last;
    double* dst = r.data() + row * last;
    const double mx = *std::max_element(src, src + last);
    double total = 0.0;
    for (std::size_t j = 0; j < last; ++j) {
      dst[j] = std::exp(src[j] - mx);
      total += dst[j];
    }
    for (std::size_t j = 0; j < last; ++j) dst[j] /= total;
  }
  return r;
}

Var softmax(Var a) {
  if (a.shape().empty()) throw ShapeError("softmax: scalar input");
  auto forward = [](std::span<const Array* const> in) { return softmax_rows(*in[0]); };
  auto backward = [](const BackwardArgs& args) {
    const Array& y = args.output;
    const Array& g = args.grad_output;
    Array& gx = *args.input_grads[0];
    const std::size_t last = y.shape().back();
    const std::size_t rows = y.size() / last;
    for (std::size_t row = 0; row < rows; ++row) {
      const std::size_t base = row * last;
      double dot = 0.0;
      for (std::size_t j = 0; j < last; ++j) dot += g[base + j] * y[base + j];
      for (std::size_t j = 0; j < last; ++j) gx[base + j] += y[base + j] * (g[base + j] - dot);
    }
  };
  return a.tape().record("softmax", {a}, forward, backward);
}

Var sum(Var a) {
  auto forward = [](std::span<const Array* const> in) {
    double total = 0.0;
    for (double v : in[0]->values()) total += v;
    return Array::scalar(total);
  };
  auto backward = [](const BackwardArgs& args) {
    const double g = args.grad_output[0];
    for (double& v : args.input_grads[0]->values()) v += g;
  };
  return a.tape().record("sum", {a}, forward, backward);
}

Var mean(Var a) { return scale(sum(a), 1.0 / static_cast<double>(a.value().size())); }

Var sum_axis(Var a, std::size_t axis, bool keepdim) {
  const Shape in_shape = a.shape();
  if (axis >= in_shape.size()) {
    throw ShapeError("sum_axis: axis " + std::to_string(axis) + " out of range for " +
                     shape_string(in_shape));
  }
  const AxisSplit sp = split_at(in_shape, axis);
  Shape out = in_shape;
  if (keepdim) {
    out[axis] = 1;
  } else {
    out.erase(out.begin() + static_cast<std::ptrdiff_t>(axis));
  }
  auto forward = [=](std::span<const Array* const> in) {
    Array r(out);
    const Array& x = *in[0];
    for (std::size_t o = 0; o < sp.outer; ++o) {
      for (std::size_t l = 0; l < sp.len; ++l) {
        const double* src = x.data() + (o * sp.len + l) * sp.inner;
        double* dst = r.data() + o * sp.inner;
        for (std::size_t i = 0; i < sp.inner; ++i) dst[i] += src[i];
      }
    }
    return r;
  };
  auto backward = [=](const BackwardArgs& args) {
    Array& gx = *args.input_grads[0];
    for (std::size_t o = 0; o < sp.outer; ++o) {
      for (std::size_t l = 0; l < sp.len; ++l) {
        double* dst = gx.data() + (o * sp.len + l) * sp.inner;
        const double* src = args.grad_output.data() + o * sp.inner;
        for (std::size_t i = 0; i < sp.inner; ++i) dst[i] += src[i];
      }
    }
  };
  return a.tape().record("sum_axis", {a}, forward, backward);
}

Var mean_axis(Var a, std::size_t axis, bool keepdim) {
  if (axis >= a.shape().size()) {
    throw ShapeError("mean_axis: axis " + std::to_string(axis) + " out of range for " +
                     shape_string(a.shape()));
  }
  const double len = static_cast<double>(a.shape()[axis]);
  return scale(sum_axis(a, axis, keepdim), 1.0 / len);
}

Var stop_gradient(Var a) { return a.tape().constant(a.value(), "stop_gradient"); }

}  // namespace timefilter::ndgrad
