#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "epk/graph.hpp"
#include "epk/model.hpp"
#include "test_util.hpp"

using namespace epk;
using epk::testing::central_difference;
using epk::testing::random_vector;
using epk::testing::relative_error;

namespace {

Tensor scalar_seed() { return Tensor({1}, {1.0}); }

}  // namespace

TEST(ForwardOps, Relu) {
  std::vector<double> none;
  ComputeGraph g(none);
  const auto y = g.relu(g.constant(Tensor({3}, {-1.0, 0.0, 2.0})));
  const auto& v = g.value(y);
  EXPECT_EQ(v[0], 0.0);
  EXPECT_EQ(v[1], 0.0);
  EXPECT_EQ(v[2], 2.0);
  EXPECT_EQ(g.kind(y), OpKind::relu);
}

TEST(ForwardOps, LogSoftmaxSymmetric) {
  std::vector<double> none;
  ComputeGraph g(none);
  const auto y = g.log_softmax(g.constant(Tensor({2}, {0.0, 0.0})));
  EXPECT_NEAR(g.value(y)[0], -std::numbers::ln2, 1e-15);
  EXPECT_NEAR(g.value(y)[1], -std::numbers::ln2, 1e-15);
}

TEST(ForwardOps, MatmulCounts) {
  std::vector<double> none;
  ComputeGraph g(none);
  const auto y = g.matmul(g.constant(Tensor({2, 3}, 1.0)), g.constant(Tensor({3, 1}, 1.0)));
  ASSERT_EQ(g.value(y).shape(), (Shape{2, 1}));
  EXPECT_EQ(g.value(y)[0], 3.0);
  EXPECT_EQ(g.value(y)[1], 3.0);
}

TEST(ForwardOps, ShapeMismatchNamesOpAndShapes) {
  std::vector<double> none;
  ComputeGraph g(none);
  const auto a = g.constant(Tensor({2, 3}, 1.0));
  const auto b = g.constant(Tensor({2, 2}, 1.0));
  try {
    g.matmul(a, b);
    FAIL() << "expected a shape error";
  } catch (const std::invalid_argument& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("matmul"), std::string::npos) << msg;
    EXPECT_NE(msg.find("[2, 3]"), std::string::npos) << msg;
    EXPECT_NE(msg.find("[2, 2]"), std::string::npos) << msg;
  }
  EXPECT_THROW(g.add(a, b), std::invalid_argument);
  EXPECT_THROW(g.slice(a, 1, 2, 5), std::invalid_argument);
  EXPECT_THROW(g.reshape(a, {5}), std::invalid_argument);
}

TEST(ForwardOps, NonFiniteForwardIsRejected) {
  std::vector<double> none;
  ComputeGraph g(none);
  EXPECT_THROW(g.constant(Tensor({1}, {std::nan("")})), std::domain_error);
}

TEST(Backward, LinearModelGradientIsInput) {
  std::vector<double> theta{0.3, -0.7};
  ComputeGraph g(theta);
  const auto w = g.parameter(0, {2, 1});
  const auto y = g.reshape(g.matmul(g.constant(Tensor({1, 2}, {1.0, 2.0})), w), {1});
  const auto grad = g.backward(y, scalar_seed());
  EXPECT_EQ(grad, (std::vector<double>{1.0, 2.0}));
}

TEST(Backward, ZeroSeedGivesZeroGradient) {
  Model model(ModelSpec{.kind = ModelKind::mlp, .input_dim = 4, .hidden = {5}, .output_dim = 3});
  const auto params = model.init(1).data;
  ComputeGraph g(params);
  Sample s;
  s.features = {0.1, -0.2, 0.3, 0.4};
  const auto out = model.forward(g, std::span<const Sample>(&s, 1));
  const auto grad = g.backward(out, Tensor(g.value(out).shape(), 0.0));
  for (double x : grad) EXPECT_EQ(x, 0.0);
}

TEST(Backward, BeforeAnyNodeFails) {
  std::vector<double> none;
  ComputeGraph g(none);
  EXPECT_THROW(g.backward(NodeId{0}, scalar_seed()), std::logic_error);
}

TEST(Backward, NonFiniteSeedFails) {
  std::vector<double> theta{1.0};
  ComputeGraph g(theta);
  const auto y = g.parameter(0, {1});
  EXPECT_THROW(g.backward(y, Tensor({1}, {INFINITY})), std::domain_error);
}

TEST(Backward, LinearInSeed) {
  Model model(ModelSpec{.kind = ModelKind::mlp, .input_dim = 6, .hidden = {7, 5}, .output_dim = 4});
  const auto params = model.init(3).data;
  std::vector<Sample> batch(3);
  for (std::size_t i = 0; i < batch.size(); ++i) batch[i].features = random_vector(6, 10 + i);
  ComputeGraph g(params);
  const auto out = model.forward(g, batch);
  const auto sa = random_vector(12, 21), sb = random_vector(12, 22);
  std::vector<double> sum(12);
  for (std::size_t i = 0; i < 12; ++i) sum[i] = sa[i] + sb[i];
  const Shape shape = g.value(out).shape();
  const auto ga = g.backward(out, Tensor(shape, sa));
  const auto gb = g.backward(out, Tensor(shape, sb));
  const auto gs = g.backward(out, Tensor(shape, sum));
  for (std::size_t i = 0; i < ga.size(); ++i) EXPECT_NEAR(gs[i], ga[i] + gb[i], 1e-12);
}

TEST(Backward, Deterministic) {
  Model model(ModelSpec{.kind = ModelKind::modadd_transformer, .modulus = 7, .d_model = 8, .heads = 2, .d_head = 4,
                        .d_mlp = 16});
  const auto params = model.init(5).data;
  const auto sample = make_modadd_sample(model.spec(), 5, 3);
  ComputeGraph g1(params), g2(params);
  const auto o1 = model.forward(g1, std::span<const Sample>(&sample, 1));
  const auto o2 = model.forward(g2, std::span<const Sample>(&sample, 1));
  const Tensor seed(g1.value(o1).shape(), random_vector(9, 4));
  EXPECT_EQ(g1.backward(o1, seed), g2.backward(o2, seed));
  EXPECT_EQ(g1.backward(o1, seed), g1.backward(o1, seed));
}

TEST(Backward, BatchMatchesSingleSeeds) {
  Model model(ModelSpec{.kind = ModelKind::mlp, .input_dim = 3, .hidden = {4}, .output_dim = 2});
  const auto params = model.init(8).data;
  Sample s;
  s.features = {0.5, -1.0, 2.0};
  ComputeGraph g(params);
  const auto out = model.forward(g, std::span<const Sample>(&s, 1));
  const auto seeds = random_vector(6, 9);
  const Matrix batch = g.backward_batch(out, seeds, 3);
  for (std::size_t c = 0; c < 3; ++c) {
    const auto single = g.backward(out, Tensor({1, 2}, {seeds[2 * c], seeds[2 * c + 1]}));
    for (std::size_t i = 0; i < single.size(); ++i) EXPECT_EQ(batch(c, i), single[i]);
  }
}

TEST(Backward, EmbeddingAndAttentionFiniteDifference) {
  // Exercises every op on a raw graph, including rank-2 attention.
  const std::size_t vocab = 5, d = 4, len = 3;
  auto theta = random_vector(vocab * d + 3 * d * d, 31, 0.5);
  const std::vector<std::size_t> ids{4, 1, 4};
  const Tensor seed({2}, {0.3, -1.1});
  auto build = [&](ComputeGraph& g) {
    const auto table = g.parameter(0, {vocab, d});
    const auto e = g.embedding_lookup(table, ids);
    const auto q = g.matmul(e, g.parameter(vocab * d, {d, d}));
    const auto k = g.matmul(e, g.parameter(vocab * d + d * d, {d, d}));
    const auto v = g.matmul(e, g.parameter(vocab * d + 2 * d * d, {d, d}));
    const auto att = g.scaled_dot_attention(q, k, v, 2);
    const auto mixed = g.add(g.scale(att, 1.5), g.relu(e));
    const auto row = g.reshape(g.slice(mixed, 0, len - 1, len), {d});
    return g.log_softmax(g.slice(row, 0, 1, 3));
  };
  ComputeGraph g(theta);
  const auto grad = g.backward(build(g), seed);
  auto f = [&](std::span<const double> p) {
    ComputeGraph h(p);
    const auto& out = h.value(build(h));
    return seed[0] * out[0] + seed[1] * out[1];
  };
  for (std::size_t i = 0; i < theta.size(); ++i) {
    EXPECT_LE(relative_error(grad[i], central_difference(f, theta, i)), 1e-4) << "coordinate " << i;
  }
}

TEST(Backward, ThreeLayerMlpFiniteDifference) {
  Model model(ModelSpec{.kind = ModelKind::mlp, .input_dim = 5, .hidden = {6, 6}, .output_dim = 3});
  auto params = model.init(12).data;
  std::vector<Sample> batch(2);
  batch[0].features = random_vector(5, 1);
  batch[1].features = random_vector(5, 2);
  const auto seed_values = random_vector(6, 3);
  ComputeGraph g(params);
  const auto out = model.forward(g, batch);
  const Tensor seed(g.value(out).shape(), seed_values);
  const auto grad = g.backward(out, seed);
  auto f = [&](std::span<const double> p) {
    ComputeGraph h(p);
    const auto& v = h.value(model.forward(h, batch));
    double s = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) s += seed_values[i] * v[i];
    return s;
  };
  for (std::size_t i = 0; i < params.size(); ++i)
    EXPECT_LE(relative_error(grad[i], central_difference(f, params, i)), 1e-4) << "coordinate " << i;
}

TEST(OutputJacobian, LinearModelReplicatesInput) {
  Model model(ModelSpec{.kind = ModelKind::linear, .input_dim = 3, .output_dim = 2});
  const auto params = random_vector(model.dim(), 4);
  Sample s;
  s.features = {1.0, -2.0, 0.5};
  ComputeGraph g(params);
  const Matrix jac = g.output_jacobian(model.forward(g, std::span<const Sample>(&s, 1)));
  ASSERT_EQ(jac.rows, 2u);
  // W is [in, out]: d f_o / d W[i, o'] = x_i when o == o'.
  for (std::size_t o = 0; o < 2; ++o)
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t o2 = 0; o2 < 2; ++o2) EXPECT_EQ(jac(o, i * 2 + o2), o == o2 ? s.features[i] : 0.0);
}

TEST(OutputJacobian, SingleOutputEqualsBackward) {
  std::vector<double> theta{0.2, 0.4, -0.1};
  ComputeGraph g(theta);
  const auto x = g.parameter(0, {1, 3});
  const auto y = g.reshape(g.matmul(g.relu(x), g.constant(Tensor({3, 1}, {1.0, 2.0, 3.0}))), {1});
  const Matrix jac = g.output_jacobian(y);
  const auto grad = g.backward(y, scalar_seed());
  ASSERT_EQ(jac.rows, 1u);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(jac(0, i), grad[i]);
}

TEST(OutputJacobian, TransformerRandomEntriesFiniteDifference) {
  Model model(ModelSpec{.kind = ModelKind::modadd_transformer, .modulus = 7, .d_model = 8, .heads = 2, .d_head = 4,
                        .d_mlp = 16});
  auto params = model.init(17).data;
  const auto sample = make_modadd_sample(model.spec(), 6, 2);
  const std::span<const Sample> one(&sample, 1);
  ComputeGraph g(params);
  const Matrix jac = g.output_jacobian(model.forward(g, one));
  SplitMix64 rng(99);
  int checked = 0;
  for (int probe = 0; probe < 500; ++probe) {
    const auto o = static_cast<std::size_t>(rng.below(jac.rows));
    const auto i = static_cast<std::size_t>(rng.below(jac.cols));
    auto f = [&](std::span<const double> p) { return model.outputs(p, sample)[o]; };
    EXPECT_LE(relative_error(jac(o, i), central_difference(f, params, i)), 1e-4) << "entry (" << o << ", " << i << ")";
    ++checked;
  }
  EXPECT_EQ(checked, 500);
}

TEST(OutputJacobian, EmbeddingRowsOutsideSampleAreZero) {
  Model model(ModelSpec{.kind = ModelKind::modadd_transformer, .modulus = 7, .d_model = 8, .heads = 2, .d_head = 4,
                        .d_mlp = 16});
  const auto params = model.init(2).data;
  const auto sample = make_modadd_sample(model.spec(), 4, 1);
  ComputeGraph g(params);
  const Matrix jac = g.output_jacobian(model.forward(g, std::span<const Sample>(&sample, 1)));
  const auto& table = model.tensor("W_E");
  const std::size_t d = model.spec().d_model;
  for (std::size_t tok = 0; tok < model.spec().vocab(); ++tok) {
    const bool present = std::find(sample.tokens.begin(), sample.tokens.end(), tok) != sample.tokens.end();
    double norm = 0.0;
    for (std::size_t o = 0; o < jac.rows; ++o)
      for (std::size_t c = 0; c < d; ++c) norm += std::abs(jac(o, table.offset + tok * d + c));
    if (present) {
      EXPECT_GT(norm, 0.0) << "token " << tok;
    } else {
      EXPECT_EQ(norm, 0.0) << "token " << tok;
    }
  }
}

TEST(Backward, BatchedTransformerFiniteDifference) {
  Model model(ModelSpec{.kind = ModelKind::modadd_transformer, .modulus = 5, .d_model = 4, .heads = 2, .d_head = 2,
                        .d_mlp = 6});
  auto params = model.init(23).data;
  const std::vector<Sample> batch{make_modadd_sample(model.spec(), 4, 1), make_modadd_sample(model.spec(), 3, 3),
                                  make_modadd_sample(model.spec(), 2, 0)};
  const auto seed_values = random_vector(batch.size() * model.num_outputs(), 5);
  ComputeGraph g(params);
  const auto out = model.forward(g, batch);
  const auto grad = g.backward(out, Tensor(g.value(out).shape(), seed_values));
  auto f = [&](std::span<const double> p) {
    ComputeGraph h(p);
    const auto& v = h.value(model.forward(h, batch));
    double s = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) s += seed_values[i] * v[i];
    return s;
  };
  for (std::size_t i = 0; i < params.size(); ++i)
    EXPECT_LE(relative_error(grad[i], central_difference(f, params, i)), 1e-4) << "coordinate " << i;
}
