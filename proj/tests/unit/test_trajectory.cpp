#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "epk/errors.hpp"
#include "epk/trainer.hpp"
#include "epk/trajectory.hpp"

using namespace epk;

namespace {

std::filesystem::path temp_file(const std::string& name) { return std::filesystem::temp_directory_path() / name; }

RunSetup minibatch_mlp(std::size_t steps = 20) {
  RunSetup s = desk_mlp_setup();
  s.data.train_size = 40;
  s.data.test_size = 40;
  s.optimizer.steps = steps;
  s.optimizer.batch_size = 8;
  s.optimizer.schedule = Schedule::warmup_decay(0.1, 5, steps);
  return s;
}

RunSetup tiny_adamw() {
  RunSetup s = minibatch_mlp(15);
  s.optimizer.kind = OptimizerKind::adamw;
  s.optimizer.schedule = Schedule::constant(0.01);
  s.optimizer.weight_decay = 0.1;
  s.optimizer.batch_size = 0;
  return s;
}

}  // namespace

TEST(Trainer, BatchMasksHaveConfiguredCardinality) {
  const RunSetup s = minibatch_mlp();
  const Dataset d = generate_dataset(s.data, s.model);
  const auto res = train(s, d);
  ASSERT_EQ(res.log.steps(), 20u);
  EXPECT_TRUE(res.log.records[0].batch.empty() || res.log.records[0].batch_count() == 0);
  for (std::size_t t = 1; t <= 20; ++t) {
    EXPECT_EQ(res.log.records[t].batch_count(), 8u);
    EXPECT_GT(res.log.records[t].lr, 0.0);
    EXPECT_EQ(res.log.records[t].lr, s.optimizer.schedule.at(t));
  }
  EXPECT_EQ(res.log.records.back().params, res.final_params);
}

TEST(Trainer, SampleBatchIsDeterministic) {
  EXPECT_EQ(sample_batch(30, 7, 9, 3), sample_batch(30, 7, 9, 3));
  EXPECT_NE(sample_batch(30, 7, 9, 3), sample_batch(30, 7, 9, 4));
  const auto full = sample_batch(30, 0, 9, 1);
  EXPECT_EQ(std::count(full.begin(), full.end(), 1), 30);
}

TEST(Trainer, ZeroStepsKeepsInitialization) {
  RunSetup s = tiny_adamw();
  s.optimizer.steps = 0;
  const Dataset d = generate_dataset(s.data, s.model);
  const auto res = train(s, d);
  EXPECT_EQ(res.log.steps(), 0u);
  EXPECT_EQ(res.final_params, Model(s.model).init(s.init_seed).data);
}

TEST(Trainer, DivergenceKeepsPartialLog) {
  RunSetup s = tiny_adamw();
  s.optimizer.kind = OptimizerKind::sgd_momentum;
  s.optimizer.momentum_scaled_step = false;
  s.optimizer.schedule = Schedule::constant(1e200);
  const Dataset d = generate_dataset(s.data, s.model);
  const auto res = train(s, d);
  ASSERT_TRUE(res.diverged_at.has_value());
  EXPECT_FALSE(res.divergence_message.empty());
  EXPECT_EQ(res.log.steps() + 1, *res.diverged_at);
}

TEST(Trainer, DeskTransformerMemorizes) {
  const RunSetup s = desk_transformer_setup();
  const Dataset d = generate_dataset(s.data, s.model);
  TrainOptions opts;
  opts.record_trajectory = false;
  opts.eval_every = 50;
  const auto res = train(s, d, opts);
  EXPECT_GE(evaluate(Model(s.model), res.final_params, d.train).accuracy, 0.99);
}

TEST(Trajectory, RoundTripIsBitExact) {
  const RunSetup s = minibatch_mlp();
  const Dataset d = generate_dataset(s.data, s.model);
  const auto res = train(s, d);
  const auto path = temp_file("epk_traj_roundtrip.bin");
  save_trajectory(path, res.log);
  const TrajectoryLog back = load_trajectory(path);
  EXPECT_EQ(back.setup, res.log.setup);
  ASSERT_EQ(back.records.size(), res.log.records.size());
  for (std::size_t t = 0; t < back.records.size(); ++t) {
    EXPECT_EQ(back.records[t].params, res.log.records[t].params);
    EXPECT_EQ(back.records[t].m, res.log.records[t].m);
    EXPECT_EQ(back.records[t].v, res.log.records[t].v);
    EXPECT_EQ(back.records[t].lr, res.log.records[t].lr);
    if (t > 0) EXPECT_EQ(back.records[t].batch, res.log.records[t].batch);
  }
  EXPECT_TRUE(replay_check(back).ok);
  std::filesystem::remove(path);
}

TEST(Trajectory, TruncatedFileIsInputError) {
  const RunSetup s = tiny_adamw();
  const auto res = train(s, generate_dataset(s.data, s.model));
  const auto path = temp_file("epk_traj_truncated.bin");
  save_trajectory(path, res.log);
  std::filesystem::resize_file(path, std::filesystem::file_size(path) - 9);
  EXPECT_THROW(load_trajectory(path), InputError);
  std::filesystem::remove(path);
  EXPECT_THROW(load_trajectory(temp_file("epk_traj_missing.bin")), InputError);
}

TEST(Trajectory, VersionMismatchNamesExpectedAndFound) {
  const RunSetup s = tiny_adamw();
  const auto res = train(s, generate_dataset(s.data, s.model));
  const auto path = temp_file("epk_traj_version.bin");
  save_trajectory(path, res.log);
  std::string bytes;
  {
    std::ifstream in(path, std::ios::binary);
    bytes.assign(std::istreambuf_iterator<char>(in), {});
  }
  const auto pos = bytes.find("\"version\":1");
  ASSERT_NE(pos, std::string::npos);
  bytes[pos + 10] = '7';
  {
    std::ofstream out(path, std::ios::binary);
    out << bytes;
  }
  try {
    load_trajectory(path);
    FAIL() << "expected ValidationError";
  } catch (const ValidationError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("expected 1"), std::string::npos) << msg;
    EXPECT_NE(msg.find("found 7"), std::string::npos) << msg;
  }
  std::filesystem::remove(path);
}

TEST(Trajectory, MissingStepNamed) {
  const RunSetup s = tiny_adamw();
  const auto res = train(s, generate_dataset(s.data, s.model));
  try {
    res.log.at(99);
    FAIL();
  } catch (const InputError& e) {
    EXPECT_NE(std::string(e.what()).find("99"), std::string::npos);
  }
}

TEST(Replay, FreshLogsReplay) {
  for (const RunSetup& s : {minibatch_mlp(), tiny_adamw()}) {
    const Dataset d = generate_dataset(s.data, s.model);
    const auto res = train(s, d);
    const auto rep = replay_check(res.log, d);
    EXPECT_TRUE(rep.ok) << rep.message;
    EXPECT_EQ(rep.max_abs_diff, 0.0);
  }
}

TEST(Replay, OneUlpPerturbationDetected) {
  const RunSetup s = minibatch_mlp();
  const Dataset d = generate_dataset(s.data, s.model);
  auto res = train(s, d);
  double& x = res.log.records[7].params[3];
  x = std::nextafter(x, 1e300);
  const auto rep = replay_check(res.log, d);
  EXPECT_FALSE(rep.ok);
  ASSERT_TRUE(rep.first_divergent_step.has_value());
  EXPECT_EQ(*rep.first_divergent_step, 7u);
  EXPECT_GT(rep.max_abs_diff, 0.0);
}

TEST(Curves, CsvRoundTrip) {
  const RunSetup s = tiny_adamw();
  const Dataset d = generate_dataset(s.data, s.model);
  const auto res = train(s, d);
  const auto path = temp_file("epk_curves.csv");
  write_curves_csv(path, res.curves);
  const auto back = read_curves_csv(path);
  ASSERT_EQ(back.size(), res.curves.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    EXPECT_EQ(back[i].step, res.curves[i].step);
    EXPECT_EQ(back[i].train_loss, res.curves[i].train_loss);
    EXPECT_EQ(back[i].test_accuracy, res.curves[i].test_accuracy);
  }
  std::filesystem::remove(path);
}
