#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>

#include "support/gradcheck.hpp"
#include "timefilter/ndgrad/adam.hpp"
#include "timefilter/ndgrad/checkpoint.hpp"
#include "timefilter/ndgrad/ops.hpp"
#include "timefilter/ndgrad/tape.hpp"

namespace nd = timefilter::ndgrad;
using nd::Array;
using nd::Shape;
using nd::Tape;
using nd::Var;

namespace {

Array random_array(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  Array a(std::move(shape));
  for (double& v : a.values()) v = dist(rng);
  return a;
}

// Checks one primitive: loss = sum(op(inputs) * fixed random weights).
void check_primitive(const std::string& label, const std::vector<Array>& inputs,
                     const std::function<Var(const std::vector<Var>&)>& op, double tolerance,
                     std::uint64_t seed = 11) {
  nd::ParameterStore params;
  for (std::size_t i = 0; i < inputs.size(); ++i) params.add("x" + std::to_string(i), inputs[i]);

  Array weights;
  {
    Tape probe;
    std::vector<Var> vars;
    for (const auto& name : params.names()) vars.push_back(probe.parameter(name, params.at(name)));
    std::mt19937_64 rng(seed);
    weights = random_array(op(vars).shape(), rng, 0.5, 1.5);
  }

  auto build = [&](Tape& tape, const nd::ParameterStore& p) {
    std::vector<Var> vars;
    for (const auto& name : p.names()) vars.push_back(tape.parameter(name, p.at(name)));
    return nd::sum(nd::mul(op(vars), tape.constant(weights)));
  };
  Tape tape;
  const Var loss = build(tape, params);
  const auto analytic = tape.gradient(loss);
  const auto report = timefilter::testing::finite_difference_check(
      params,
      [&](const nd::ParameterStore& p) {
        Tape t;
        return build(t, p).value().item();
      },
      analytic);
  EXPECT_LE(report.max_relative_error, tolerance)
      << label << ": worst " << report.worst_parameter << "[" << report.worst_index
      << "] analytic " << report.worst_analytic << " numeric " << report.worst_numeric;
}

}  // namespace

TEST(NdgradForward, SoftmaxOfUniformLogits) {
  Tape tape;
  const Var y = nd::softmax(tape.constant(Array::from({0, 0, 0})));
  for (double v : y.value().values()) EXPECT_DOUBLE_EQ(v, 1.0 / 3.0);
}

TEST(NdgradForward, GeluFixedPointAndSoftplusAtZero) {
  Tape tape;
  const Var x = tape.constant(Array::from({0.0}));
  EXPECT_EQ(nd::gelu(x).value()[0], 0.0);
  EXPECT_NEAR(nd::softplus(x).value()[0], std::log(2.0), 1e-15);
  EXPECT_NEAR(nd::softplus(x).value()[0], 0.693147, 1e-6);
}

TEST(NdgradForward, ShapeMismatchNamesOperation) {
  Tape tape;
  const Var a = tape.constant(Array({2, 3}, 1.0));
  const Var b = tape.constant(Array({4}, 1.0));
  try {
    nd::add(a, b);
    FAIL() << "expected ShapeError";
  } catch (const nd::ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("add"), std::string::npos);
  }
  const Var w = tape.constant(Array({5, 2}, 1.0));
  try {
    nd::matmul(a, w);
    FAIL() << "expected ShapeError";
  } catch (const nd::ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("matmul"), std::string::npos);
  }
}

TEST(NdgradForward, NonFiniteInputRejected) {
  Tape tape;
  EXPECT_THROW(tape.constant(Array::from({1.0, std::nan("")})), nd::NonFiniteError);
  EXPECT_THROW(tape.parameter("w", Array::from({INFINITY})), nd::NonFiniteError);
}

TEST(NdgradForward, TapeRecordsPrimitivesInTopologicalOrder) {
  Tape tape;
  const Var x = tape.parameter("x", Array::from({1.0, 2.0}));
  const Var y = nd::sum(nd::mul(nd::gelu(x), x));
  (void)y;
  const auto ops = tape.operations();
  ASSERT_EQ(ops.size(), 3u);
  EXPECT_EQ(ops[0].op, "gelu");
  EXPECT_EQ(ops[1].op, "mul");
  EXPECT_EQ(ops[2].op, "sum");
  for (const auto& op : ops) {
    for (auto in : op.inputs) EXPECT_LT(in, op.output);
  }
}

TEST(NdgradGradient, SquareAtThree) {
  Tape tape;
  const Var x = tape.parameter("x", Array::scalar(3.0));
  const auto grads = tape.gradient(nd::mul(x, x));
  EXPECT_DOUBLE_EQ(grads.at("x").item(), 6.0);
}

TEST(NdgradGradient, ConstantLossGivesZeroGradients) {
  Tape tape;
  tape.parameter("w", Array({2, 2}, 3.0));
  const Var loss = nd::sum(tape.constant(Array({3}, 1.0)));
  const auto grads = tape.gradient(loss);
  for (double v : grads.at("w").values()) EXPECT_EQ(v, 0.0);
}

TEST(NdgradGradient, NonScalarLossRejected) {
  Tape tape;
  const Var x = tape.parameter("x", Array::from({1.0, 2.0}));
  EXPECT_THROW(tape.gradient(nd::gelu(x)), nd::ShapeError);
}

TEST(NdgradGradient, PrimitivesMatchFiniteDifferences) {
  std::mt19937_64 rng(2024);
  const double tol = 1e-4;
  const Array a23 = random_array({2, 3}, rng);
  const Array b23 = random_array({2, 3}, rng);
  const Array b3 = random_array({3}, rng);
  const Array pos23 = random_array({2, 3}, rng, 0.3, 2.0);

  check_primitive("add", {a23, b3}, [](auto& v) { return nd::add(v[0], v[1]); }, tol);
  check_primitive("sub", {a23, b23}, [](auto& v) { return nd::sub(v[0], v[1]); }, tol);
  check_primitive("mul", {a23, b3}, [](auto& v) { return nd::mul(v[0], v[1]); }, tol);
  check_primitive("div", {a23, pos23}, [](auto& v) { return nd::div(v[0], v[1]); }, tol);
  check_primitive("matmul shared", {random_array({2, 3, 4}, rng), random_array({4, 5}, rng)},
                  [](auto& v) { return nd::matmul(v[0], v[1]); }, tol);
  check_primitive("matmul batched", {random_array({2, 3, 4}, rng), random_array({2, 4, 2}, rng)},
                  [](auto& v) { return nd::matmul(v[0], v[1]); }, tol);
  check_primitive("transpose", {a23}, [](auto& v) { return nd::transpose(v[0]); }, tol);
  check_primitive("permute", {random_array({2, 3, 4}, rng)},
                  [](auto& v) { return nd::permute(v[0], {2, 0, 1}); }, tol);
  check_primitive("reshape", {a23}, [](auto& v) { return nd::reshape(v[0], {3, 2}); }, tol);
  check_primitive("slice_last", {random_array({2, 5}, rng)},
                  [](auto& v) { return nd::slice_last(v[0], 1, 3); }, tol);
  check_primitive("concat", {a23, random_array({2, 2}, rng)},
                  [](auto& v) { return nd::concat({v[0], v[1]}, 1); }, tol);
  check_primitive("softplus", {a23}, [](auto& v) { return nd::softplus(v[0]); }, tol);
  check_primitive("sigmoid", {a23}, [](auto& v) { return nd::sigmoid(v[0]); }, tol);
  check_primitive("exp", {a23}, [](auto& v) { return nd::exp(v[0]); }, tol);
  check_primitive("log", {pos23}, [](auto& v) { return nd::log(v[0]); }, tol);
  check_primitive("sqrt", {pos23}, [](auto& v) { return nd::sqrt(v[0]); }, tol);
  check_primitive("abs", {a23}, [](auto& v) { return nd::abs(v[0]); }, tol);
  check_primitive("square", {a23}, [](auto& v) { return nd::square(v[0]); }, tol);
  check_primitive("safe_reciprocal", {pos23}, [](auto& v) { return nd::safe_reciprocal(v[0]); },
                  tol);
  check_primitive("softmax", {random_array({3, 4}, rng, -3, 3)},
                  [](auto& v) { return nd::softmax(v[0]); }, tol);
  check_primitive("sum_axis", {random_array({2, 3, 4}, rng)},
                  [](auto& v) { return nd::sum_axis(v[0], 1); }, tol);
  check_primitive("mean_axis", {random_array({2, 3, 4}, rng)},
                  [](auto& v) { return nd::mean_axis(v[0], 2, true); }, tol);
  check_primitive("mean", {a23}, [](auto& v) { return nd::mean(v[0]); }, tol);
  check_primitive("masked", {a23},
                  [](auto& v) { return nd::masked(v[0], Array({2, 3}, {1, 0, 1, 0, 1, 1})); }, tol);
  check_primitive("gelu core", {random_array({2, 3}, rng, -2, 2)},
                  [](auto& v) { return nd::gelu(v[0]); }, tol);
  // The flat negative tail of GeLU has tiny derivatives; looser bound there.
  check_primitive("gelu tail", {random_array({2, 3}, rng, -6, -3)},
                  [](auto& v) { return nd::gelu(v[0]); }, 1e-3);
}

TEST(NdgradProperties, SoftmaxRowsAreProbabilityVectors) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 200; ++trial) {
    const Array x = random_array({4, 7}, rng, -30.0, 30.0);
    const Array y = nd::softmax_rows(x);
    for (std::size_t r = 0; r < 4; ++r) {
      double total = 0.0;
      for (std::size_t c = 0; c < 7; ++c) {
        EXPECT_GE(y.at({r, c}), 0.0);
        total += y.at({r, c});
      }
      EXPECT_NEAR(total, 1.0, 1e-12);
    }
  }
}

TEST(NdgradProperties, ReplayIsBitwiseReproducible) {
  std::mt19937_64 rng(5);
  Tape tape;
  const Var x = tape.parameter("x", random_array({3, 4}, rng));
  const Var w = tape.parameter("w", random_array({4, 4}, rng));
  const Var h = nd::gelu(nd::matmul(x, w));
  nd::sum(nd::softmax(nd::add(h, nd::softplus(h))));
  const auto replayed = tape.replay();
  ASSERT_EQ(replayed.size(), tape.size());
  for (std::size_t i = 0; i < replayed.size(); ++i) {
    EXPECT_TRUE(replayed[i].bitwise_equal(tape.value(i))) << "node " << i;
  }
}

TEST(Adam, ZeroGradientLeavesParametersUnchanged) {
  nd::ParameterStore params;
  params.add("w", Array::from({0.5, -1.0, 2.0}));
  const auto before = params;
  nd::Adam adam({.lr = 1e-3});
  adam.step(params, {{"w", Array({3}, 0.0)}});
  EXPECT_TRUE(params.bitwise_equal(before));
  EXPECT_EQ(adam.step_count(), 1u);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  nd::ParameterStore params;
  params.add("w", Array::scalar(0.0));
  nd::Adam adam({.lr = 1e-3});
  adam.step(params, {{"w", Array::scalar(1.0)}});
  // m_hat = 1, v_hat = 1, so the step is lr / (1 + eps).
  EXPECT_NEAR(params.at("w").item(), -1e-3 / (1.0 + 1e-8), 1e-18);
  EXPECT_NEAR(params.at("w").item(), -1e-3, 1e-10);
  EXPECT_NEAR(adam.state().first_moment.at("w").item(), 0.1, 1e-15);
  EXPECT_NEAR(adam.state().second_moment.at("w").item(), 0.001, 1e-15);
}

TEST(Adam, IdenticalCallsAreDeterministic) {
  auto run = [] {
    nd::ParameterStore params;
    params.add("w", Array::from({0.1, 0.2}));
    nd::Adam adam({.lr = 1e-2});
    for (int i = 0; i < 5; ++i) adam.step(params, {{"w", Array::from({0.3 * i, -0.7})}});
    return params;
  };
  EXPECT_TRUE(run().bitwise_equal(run()));
}

TEST(Adam, NonFiniteGradientRejectsWholeStep) {
  nd::ParameterStore params;
  params.add("a", Array::from({1.0}));
  params.add("b", Array::from({2.0}));
  const auto before = params;
  nd::Adam adam;
  EXPECT_THROW(adam.step(params, {{"a", Array::from({1.0})}, {"b", Array::from({NAN})}}),
               nd::NonFiniteError);
  EXPECT_TRUE(params.bitwise_equal(before));
  EXPECT_EQ(adam.step_count(), 0u);
}

TEST(Adam, GlobalNormClipping) {
  nd::GradientMap grads{{"a", Array::from({3.0})}, {"b", Array::from({4.0})}};
  EXPECT_DOUBLE_EQ(nd::clip_global_norm(grads, 1.0), 5.0);
  EXPECT_NEAR(nd::global_norm(grads), 1.0, 1e-15);
}

TEST(Checkpoint, RoundTripIsBitwise) {
  std::mt19937_64 rng(99);
  nd::Checkpoint ck;
  ck.model_hash = "0123abcd";
  ck.config_json = R"({"model":{"d_model":8}})";
  ck.params.add("embed.weight", random_array({2, 8}, rng));
  ck.params.add("head.bias", random_array({4}, rng));
  const auto path = std::filesystem::temp_directory_path() / "tf_ckpt_roundtrip.bin";
  nd::save_checkpoint(path, ck);
  const auto loaded = nd::load_checkpoint(path);
  EXPECT_EQ(loaded.model_hash, ck.model_hash);
  EXPECT_EQ(loaded.config_json, ck.config_json);
  EXPECT_TRUE(loaded.params.bitwise_equal(ck.params));

  // Truncation is detected.
  const auto size = std::filesystem::file_size(path);
  std::filesystem::resize_file(path, size - 3);
  EXPECT_THROW(nd::load_checkpoint(path), nd::CheckpointError);
  std::filesystem::remove(path);
}

TEST(Checkpoint, LittleEndianHeaderLayout) {
  nd::Checkpoint ck;
  ck.model_hash = "h";
  ck.config_json = "{}";
  ck.params.add("p", Array::from({1.0}));
  const auto path = std::filesystem::temp_directory_path() / "tf_ckpt_layout.bin";
  nd::save_checkpoint(path, ck);
  std::ifstream in(path, std::ios::binary);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), {});
  ASSERT_GE(bytes.size(), 12u);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 8), "TFLTCKPT");
  EXPECT_EQ(bytes[8], 1u);
  EXPECT_EQ(bytes[9] | bytes[10] | bytes[11], 0u);
  // Last 8 bytes hold 1.0 as IEEE-754 little-endian: 00..00 f0 3f.
  EXPECT_EQ(bytes[bytes.size() - 1], 0x3fu);
  EXPECT_EQ(bytes[bytes.size() - 2], 0xf0u);
  std::filesystem::remove(path);
}
