#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "epk/errors.hpp"
#include "epk/influence.hpp"
#include "epk/rng.hpp"
#include "epk/trainer.hpp"
#include "test_util.hpp"

using namespace epk;
using epk::testing::relative_error;

namespace {

struct Fixture {
  RunSetup setup;
  Dataset data;
  TrajectoryLog log;
};

const Fixture& transformer_fixture() {
  static const Fixture f = [] {
    Fixture fx;
    RunSetup& s = fx.setup;
    s.model = ModelSpec{.kind = ModelKind::modadd_transformer, .modulus = 5, .d_model = 8, .heads = 2, .d_head = 4,
                        .d_mlp = 8};
    s.data = DatasetConfig{.modulus = 5, .train_fraction = 0.6, .include_diagonal = true, .seed = 1};
    s.optimizer.kind = OptimizerKind::adamw;
    s.optimizer.schedule = Schedule::constant(0.01);
    s.optimizer.beta1 = 0.9;
    s.optimizer.beta2 = 0.98;
    s.optimizer.weight_decay = 0.5;
    s.optimizer.steps = 12;
    s.optimizer.batch_size = 5;
    s.init_seed = 3;
    s.batch_seed = 4;
    fx.data = generate_dataset(s.data, s.model);
    fx.log = train(s, fx.data).log;
    return fx;
  }();
  return f;
}

double rel(double part, double whole) { return relative_error(part, whole, 1e-300); }

}  // namespace

TEST(Influence, ComponentPartitionSumsToTotal) {
  const auto& f = transformer_fixture();
  InfluenceRequest req;
  req.windows = {{0, 12}};
  req.T = 4;
  const auto table = compute_influence(f.log, f.data.train, f.data.test, req);
  ASSERT_EQ(table.components().size(), 6u);
  for (std::size_t x = 0; x < table.num_test(); ++x) {
    double reg = 0.0;
    for (std::size_t c = 0; c < 6; ++c) reg += table.reg(0, c, x);
    EXPECT_LE(rel(reg, table.total_reg(0, x)), 1e-12);
    for (std::size_t k = 0; k < table.num_train(); ++k) {
      double sum = 0.0;
      for (std::size_t c = 0; c < 6; ++c) sum += table.kernel(0, c, x, k);
      EXPECT_LE(rel(sum, table.total_kernel(0, x, k)), 1e-12);
    }
  }
}

TEST(Influence, RandomStepPartitionsSumToParent) {
  const auto& f = transformer_fixture();
  SplitMix64 rng(17);
  for (int trial = 0; trial < 3; ++trial) {
    std::size_t a = 1 + rng.below(10), b = 1 + rng.below(10);
    if (a > b) std::swap(a, b);
    InfluenceRequest req;
    req.windows = {{0, 12}, {0, a}, {a, b}, {b, 12}};
    req.T = 3;
    const auto t = compute_influence(f.log, f.data.train, f.data.test, req);
    for (std::size_t c = 0; c < t.components().size(); ++c)
      for (std::size_t x = 0; x < t.num_test(); ++x) {
        EXPECT_LE(rel(t.reg(1, c, x) + t.reg(2, c, x) + t.reg(3, c, x), t.reg(0, c, x)), 1e-12);
        for (std::size_t k = 0; k < t.num_train(); ++k) {
          const double parts = t.kernel(1, c, x, k) + t.kernel(2, c, x, k) + t.kernel(3, c, x, k);
          EXPECT_LE(rel(parts, t.kernel(0, c, x, k)), 1e-12) << "split " << a << "," << b;
        }
      }
  }
}

TEST(Influence, RandomSamplePartitionsSumToParent) {
  const auto& f = transformer_fixture();
  InfluenceRequest req;
  req.windows = {{2, 9}};
  req.T = 3;
  req.parameter_vectors = true;
  const auto t = compute_influence(f.log, f.data.train, f.data.test, req);
  SplitMix64 rng(5);
  std::vector<int> group(t.num_train());
  for (int& g : group) g = static_cast<int>(rng.below(3));
  for (std::size_t c = 0; c < t.components().size(); ++c) {
    const auto& range = t.components()[c];
    for (std::size_t x = 0; x < t.num_test(); ++x) {
      double parts[3] = {0, 0, 0};
      for (std::size_t k = 0; k < t.num_train(); ++k) parts[group[k]] += t.kernel(0, c, x, k);
      EXPECT_LE(rel(parts[0] + parts[1] + parts[2], t.kernel_over_train(0, c, x)), 1e-12);
      // The parameter vector over the component carries the same total.
      const auto p = t.parameter_vector(0, x);
      const double via_params = std::accumulate(p.begin() + static_cast<std::ptrdiff_t>(range.begin),
                                                p.begin() + static_cast<std::ptrdiff_t>(range.end), 0.0);
      EXPECT_LE(rel(via_params, t.kernel_over_train(0, c, x)), 1e-9);
      const auto r = t.reg_parameter_vector(0, x);
      const double reg_params = std::accumulate(r.begin() + static_cast<std::ptrdiff_t>(range.begin),
                                                r.begin() + static_cast<std::ptrdiff_t>(range.end), 0.0);
      EXPECT_LE(rel(reg_params, t.reg(0, c, x)), 1e-9);
    }
  }
}

TEST(Influence, KernelAndRegReproduceReconstruction) {
  const auto& f = transformer_fixture();
  InfluenceRequest req;
  req.windows = {{0, 12}};
  req.T = 6;
  const auto t = compute_influence(f.log, f.data.train, f.data.test, req);
  ReconstructOptions opts;
  opts.T = {6};
  const auto rec = reconstruct(f.log, f.data.train, f.data.test, opts);
  const double lambda = f.setup.optimizer.weight_decay;
  for (std::size_t x = 0; x < t.num_test(); ++x) {
    double kernel = 0.0;
    for (std::size_t k = 0; k < t.num_train(); ++k) kernel += t.total_kernel(0, x, k);
    const auto& pred = rec.predictions[0][x];
    double gap = 0.0;
    for (std::size_t o = 0; o < pred.base.size(); ++o) gap += pred.base[o] - pred.reconstructed[o];
    EXPECT_NEAR(kernel + lambda * t.total_reg(0, x), gap, 1e-9);
  }
}

TEST(Influence, PointwisePsiMatchesTable) {
  const auto& f = transformer_fixture();
  InfluenceRequest req;
  req.windows = {{3, 6}};
  req.components = {"linear1", "decoder"};
  req.T = 2;
  req.per_output = true;
  const auto t = compute_influence(f.log, f.data.train, f.data.test, req);
  const std::size_t x = 1, k = 2;
  const std::size_t c = t.component_index("decoder");
  double total = 0.0, reg = 0.0;
  for (std::size_t s = 3; s < 6; ++s) {
    const auto v = psi(f.log, f.data.train, s, "decoder", f.data.test[x], k, 2);
    total = std::accumulate(v.begin(), v.end(), total);
    reg += reg_influence(f.log, s, "decoder", f.data.test[x], 2);
  }
  EXPECT_LE(rel(total, t.kernel(0, c, x, k)), 1e-10);
  EXPECT_LE(rel(reg, t.reg(0, c, x)), 1e-10);
  double by_output = 0.0;
  for (std::size_t o = 0; o < f.setup.model.vocab(); ++o) by_output += t.kernel_output(0, c, x, k, o);
  EXPECT_LE(rel(by_output, t.kernel(0, c, x, k)), 1e-12);
  const Matrix per = psi_per_output(f.log, f.data.train, 4, "decoder", f.data.test[x], k, 2);
  const auto flat = psi(f.log, f.data.train, 4, "decoder", f.data.test[x], k, 2);
  for (std::size_t i = 0; i < flat.size(); ++i) {
    double col = 0.0;
    for (std::size_t o = 0; o < per.rows; ++o) col += per(o, i);
    EXPECT_NEAR(col, flat[i], 1e-15 + 1e-12 * std::abs(flat[i]));
  }
}

TEST(Influence, StepSeriesIsNonnegativeAndConsistent) {
  const auto& f = transformer_fixture();
  InfluenceRequest req;
  req.windows = {{0, 12}};
  req.T = 2;
  req.step_series = true;
  const auto t = compute_influence(f.log, f.data.train, f.data.test, req);
  ASSERT_EQ(t.series().size(), 12u);
  for (const auto& s : t.series()) {
    for (double v : s.kernel_abs) EXPECT_GE(v, 0.0);
    for (double v : s.reg_abs) EXPECT_GE(v, 0.0);
    EXPECT_EQ(s.difference.size(), t.components().size());
  }
  // A one-step window matches the series entry for that step.
  InfluenceRequest one = req;
  one.windows = {{5, 6}};
  one.step_series = false;
  const auto t1 = compute_influence(f.log, f.data.train, f.data.test, one);
  for (std::size_t c = 0; c < t1.components().size(); ++c) {
    double abs_sum = 0.0;
    for (std::size_t x = 0; x < t1.num_test(); ++x) abs_sum += std::abs(t1.kernel_over_train(0, c, x));
    EXPECT_LE(rel(abs_sum, t.series()[5].kernel_abs[c]), 1e-12);
  }
}

TEST(Influence, Validation) {
  const auto& f = transformer_fixture();
  InfluenceRequest req;
  req.windows = {{0, 40}};
  EXPECT_THROW(compute_influence(f.log, f.data.train, f.data.test, req), ValidationError);
  req.windows = {{0, 2}};
  req.components = {"mlp_in"};
  try {
    compute_influence(f.log, f.data.train, f.data.test, req);
    FAIL();
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("att_encoders"), std::string::npos) << e.what();
  }
  req.components = {};
  req.T = 0;
  EXPECT_THROW(compute_influence(f.log, f.data.train, f.data.test, req), ValidationError);
}

TEST(Similarity, Properties) {
  const std::vector<std::vector<double>> v{{1, 0, 0}, {2, 0, 0}, {0, 1, 0}, {0, 0, 0}, {-1, 1, 0}};
  const auto s = similarity(v);
  for (std::size_t i = 0; i < 5; ++i) {
    for (std::size_t j = 0; j < 5; ++j) {
      EXPECT_EQ(s.values(i, j), s.values(j, i));
      EXPECT_LE(std::abs(s.values(i, j)), 1.0);
    }
  }
  EXPECT_EQ(s.values(0, 0), 1.0);
  EXPECT_NEAR(s.values(0, 1), 1.0, 1e-15);
  EXPECT_NEAR(s.values(0, 2), 0.0, 1e-15);
  EXPECT_NEAR(s.values(0, 4), -std::sqrt(0.5), 1e-15);
  EXPECT_TRUE(s.is_missing(3, 0));
  EXPECT_TRUE(s.is_missing(3, 3));
  EXPECT_FALSE(s.is_missing(0, 2));
}

TEST(Similarity, FromTableRestrictsToComponent) {
  const auto& f = transformer_fixture();
  InfluenceRequest req;
  req.windows = {{0, 12}};
  req.T = 2;
  req.parameter_vectors = true;
  req.pairwise = false;
  const auto t = compute_influence(f.log, f.data.train, f.data.test, req);
  const auto& dec = t.components().back();
  const auto s = similarity(t, 0, dec);
  std::vector<std::vector<double>> vecs;
  for (std::size_t x = 0; x < t.num_test(); ++x) {
    const auto p = t.parameter_vector(0, x);
    vecs.emplace_back(p.begin() + static_cast<std::ptrdiff_t>(dec.begin), p.begin() + static_cast<std::ptrdiff_t>(dec.end));
  }
  const auto direct = similarity(vecs);
  for (std::size_t i = 0; i < t.num_test(); ++i)
    for (std::size_t j = 0; j < t.num_test(); ++j) EXPECT_EQ(s.values(i, j), direct.values(i, j));
}

TEST(KernelSlice, OrderedBySumAndPartitionAdds) {
  const auto& f = transformer_fixture();
  InfluenceRequest req;
  req.windows = {{6, 12}};
  req.T = 2;
  const auto t = compute_influence(f.log, f.data.train, f.data.test, req);
  std::vector<KernelSlice> slices;
  for (std::size_t c = 0; c < t.components().size(); ++c)
    slices.push_back(kernel_slice(t, 0, c, f.data.test, f.data.train));
  const auto& s0 = slices.front();
  for (std::size_t r = 1; r < s0.test_order.size(); ++r)
    EXPECT_LE(f.data.test[s0.test_order[r - 1]].sum, f.data.test[s0.test_order[r]].sum);
  for (std::size_t r = 1; r < s0.train_order.size(); ++r)
    EXPECT_LE(f.data.train[s0.train_order[r - 1]].sum, f.data.train[s0.train_order[r]].sum);
  for (std::size_t i = 0; i < s0.values.rows; ++i)
    for (std::size_t j = 0; j < s0.values.cols; ++j) {
      double sum = 0.0;
      for (const auto& sl : slices) sum += sl.values(i, j);
      EXPECT_LE(rel(sum, t.total_kernel(0, s0.test_order[i], s0.train_order[j])), 1e-12);
    }
  const Sample& x = f.data.test[s0.test_order[0]];
  EXPECT_EQ(s0.row_labels[0], sample_label(x));
  EXPECT_EQ(sample_label(make_modadd_sample(f.setup.model, 4, 3)), "4+3=7 (2)");
}

TEST(ResidueContrast, SeparatesMatchingPairs) {
  const ModelSpec spec{.kind = ModelKind::modadd_transformer, .modulus = 3, .d_model = 4, .heads = 1, .d_head = 4,
                       .d_mlp = 4};
  const std::vector<Sample> samples{make_modadd_sample(spec, 0, 0), make_modadd_sample(spec, 1, 0),
                                    make_modadd_sample(spec, 2, 0), make_modadd_sample(spec, 2, 1)};
  KernelSlice slice;
  slice.values = Matrix(4, 4);
  slice.test_order = slice.train_order = {0, 1, 2, 3};
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j) slice.values(i, j) = samples[i].label == samples[j].label ? -3.0 : 1.0;
  const auto rc = residue_contrast(slice, samples, samples);
  EXPECT_EQ(rc.matching, 3.0);
  EXPECT_EQ(rc.other, 1.0);
  EXPECT_EQ(rc.ratio(), 3.0);
  EXPECT_EQ(rc.matching_pairs, 6u);  // labels 0, 1, 2, 0
}
