#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <numeric>
#include <set>

#include "epk/dataset.hpp"
#include "epk/epk.hpp"
#include "epk/model.hpp"
#include "epk/setup.hpp"
#include "test_util.hpp"

using namespace epk;

namespace {

ModelSpec small_transformer() {
  return ModelSpec{.kind = ModelKind::modadd_transformer, .modulus = 7, .d_model = 8, .heads = 2, .d_head = 4, .d_mlp = 16};
}

double logsumexp(const std::vector<double>& v) {
  double mx = *std::max_element(v.begin(), v.end());
  double s = 0.0;
  for (double x : v) s += std::exp(x - mx);
  return mx + std::log(s);
}

}  // namespace

TEST(Models, P113TransformerHasSixComponents) {
  const Model m(p113_transformer_setup().model);
  EXPECT_EQ(m.registry().size(), 6u);
  const std::vector<std::string> names{"embedding", "att_encoders", "att_decoders", "linear1", "linear2", "decoder"};
  for (std::size_t i = 0; i < names.size(); ++i) EXPECT_EQ(m.registry().components()[i].name, names[i]);
  // 115*64 + 3*64*64 + 64*64 + (64*512 + 512) + (512*64 + 64) + (64*115 + 115)
  EXPECT_EQ(m.dim(), 97331u);
  m.registry().validate(m.dim());
}

TEST(Models, MlpParameterCount) {
  const Model m(ModelSpec{.kind = ModelKind::mlp, .input_dim = 8, .hidden = {16}, .output_dim = 2});
  EXPECT_EQ(m.dim(), 178u);
  EXPECT_EQ(m.output_components(), std::vector<std::string>{"output"});
}

TEST(Models, InitIsDeterministicPerSeed) {
  const Model m(small_transformer());
  const auto a = m.init(5), b = m.init(5), c = m.init(6);
  EXPECT_EQ(a.data, b.data);
  EXPECT_NE(a.data, c.data);
  EXPECT_EQ(a.registry, m.registry());
}

TEST(Models, InitScaleFollowsFanIn) {
  const ModelSpec spec{.kind = ModelKind::mlp, .input_dim = 400, .hidden = {300}, .output_dim = 2};
  const Model m(spec);
  const auto p = m.init(1);
  const auto& w = m.tensor("hidden1.W");
  double sq = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) sq += p.data[w.offset + i] * p.data[w.offset + i];
  EXPECT_NEAR(sq / static_cast<double>(w.size()), 1.0 / 400.0, 0.05 / 400.0);
  const auto& b = m.tensor("hidden1.b");
  for (std::size_t i = 0; i < b.size(); ++i) EXPECT_EQ(p.data[b.offset + i], 0.0);
}

TEST(Models, InvalidHeadSplitRejected) {
  ModelSpec s = small_transformer();
  s.heads = 3;
  EXPECT_THROW(Model{s}, std::invalid_argument);
}

TEST(Models, LogProbsNormalize) {
  const Model m(small_transformer());
  const auto p = m.init(3);
  for (int a = 0; a < 7; ++a) {
    const auto out = forward_logprobs(m, p.data, make_modadd_sample(m.spec(), a, a / 2));
    EXPECT_EQ(out.size(), 9u);
    EXPECT_NEAR(logsumexp(out), 0.0, 1e-12);
  }
}

TEST(Models, ZeroParametersGiveUniformOutput) {
  const Model m(small_transformer());
  const auto z = m.zeros();
  const auto out = forward_logprobs(m, z.data, make_modadd_sample(m.spec(), 4, 2));
  for (double v : out) EXPECT_NEAR(v, -std::log(9.0), 1e-14);
}

TEST(Models, TokenOutOfVocabRejected) {
  const Model m(small_transformer());
  Sample s = make_modadd_sample(m.spec(), 3, 1);
  s.tokens[0] = 42;
  EXPECT_THROW(m.outputs(m.init(0).data, s), std::invalid_argument);
}

TEST(Models, SampleLayout) {
  const ModelSpec spec = small_transformer();
  const Sample s = make_modadd_sample(spec, 5, 4);
  EXPECT_EQ(s.tokens, (std::vector<std::size_t>{5, 7, 4, 8}));
  EXPECT_EQ(s.label, 2);
  EXPECT_EQ(s.sum, 9);
}

TEST(Models, ForwardIsSideEffectFree) {
  const Model m(small_transformer());
  const auto p = m.init(9);
  const auto copy = p.data;
  const auto x = make_modadd_sample(m.spec(), 6, 1);
  const auto first = m.outputs(p.data, x);
  EXPECT_EQ(first, m.outputs(p.data, x));
  EXPECT_EQ(p.data, copy);
}

TEST(Models, EmbeddingJacobianSparsity) {
  const Model m(small_transformer());
  const auto p = m.init(2);
  const auto x = make_modadd_sample(m.spec(), 3, 1);
  const Matrix J = sample_jacobian(m, p.data, x);
  const auto& emb = m.tensor("W_E");
  const std::set<std::size_t> present(x.tokens.begin(), x.tokens.end());
  for (std::size_t tok = 0; tok < m.spec().vocab(); ++tok) {
    if (present.count(tok)) continue;
    for (std::size_t o = 0; o < J.rows; ++o)
      for (std::size_t j = 0; j < m.spec().d_model; ++j) EXPECT_EQ(J(o, emb.offset + tok * m.spec().d_model + j), 0.0);
  }
}

TEST(Dataset, PairCounts) {
  EXPECT_EQ(modadd_pair_count(113, false), 6328u);
  EXPECT_EQ(modadd_pair_count(3, true), 6u);
  EXPECT_EQ(modadd_pair_count(13, true), 91u);
}

TEST(Dataset, P113SplitSizes) {
  const RunSetup s = p113_transformer_setup();
  const Dataset d = generate_dataset(s.data, s.model);
  EXPECT_EQ(d.train.size(), 4000u);
  EXPECT_EQ(d.test.size(), 2000u);
}

TEST(Dataset, SmallModulusEnumeratesAllPairs) {
  const ModelSpec spec{.kind = ModelKind::modadd_transformer, .modulus = 3, .d_model = 4, .heads = 1, .d_head = 4, .d_mlp = 4};
  DatasetConfig cfg{.modulus = 3, .train_fraction = 0.5, .include_diagonal = true};
  const Dataset d = generate_dataset(cfg, spec);
  EXPECT_EQ(d.train.size() + d.test.size(), 6u);
  for (const auto* part : {&d.train, &d.test})
    for (const auto& s : *part) {
      EXPECT_GE(s.a, s.b);
      EXPECT_EQ(s.label, (s.a + s.b) % 3);
    }
}

TEST(Dataset, SplitIsDisjointAndSeeded) {
  const RunSetup s = desk_transformer_setup();
  const Dataset d = generate_dataset(s.data, s.model);
  std::set<std::pair<int, int>> train;
  for (const auto& x : d.train) train.insert({x.a, x.b});
  for (const auto& x : d.test) EXPECT_FALSE(train.count({x.a, x.b}));
  EXPECT_EQ(train.size(), d.train.size());
  const Dataset again = generate_dataset(s.data, s.model);
  ASSERT_EQ(again.train.size(), d.train.size());
  for (std::size_t i = 0; i < d.train.size(); ++i) EXPECT_EQ(again.train[i].tokens, d.train[i].tokens);
}

TEST(Dataset, InvalidFractionRejected) {
  const RunSetup s = desk_transformer_setup();
  DatasetConfig cfg = s.data;
  cfg.train_fraction = 1.0;
  EXPECT_THROW(generate_dataset(cfg, s.model), std::invalid_argument);
}

TEST(Dataset, CsvRoundTrip) {
  const RunSetup s = desk_transformer_setup();
  const Dataset d = generate_dataset(s.data, s.model);
  const auto path = std::filesystem::temp_directory_path() / "epk_dataset_roundtrip.csv";
  write_dataset_csv(path, d);
  const Dataset r = read_dataset_csv(path, s.model);
  ASSERT_EQ(r.train.size(), d.train.size());
  ASSERT_EQ(r.test.size(), d.test.size());
  for (std::size_t i = 0; i < d.test.size(); ++i) {
    EXPECT_EQ(r.test[i].tokens, d.test[i].tokens);
    EXPECT_EQ(r.test[i].label, d.test[i].label);
  }
  std::filesystem::remove(path);
}

TEST(Dataset, VectorCsvRoundTripIsExact) {
  const RunSetup s = desk_mlp_setup();
  const Dataset d = generate_dataset(s.data, s.model);
  const auto path = std::filesystem::temp_directory_path() / "epk_vector_roundtrip.csv";
  write_dataset_csv(path, d);
  const Dataset r = read_dataset_csv(path, s.model);
  ASSERT_EQ(r.train.size(), d.train.size());
  for (std::size_t i = 0; i < d.train.size(); ++i) {
    EXPECT_EQ(r.train[i].features, d.train[i].features);
    EXPECT_EQ(r.train[i].label, d.train[i].label);
  }
  std::filesystem::remove(path);
}
