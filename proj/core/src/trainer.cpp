#include "epk/trainer.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <stdexcept>

#include "epk/errors.hpp"
#include "epk/io.hpp"
#include "epk/rng.hpp"

namespace epk {

BatchGradient batch_gradient(const Model& model, std::span<const double> params, std::span<const Sample> batch) {
  ComputeGraph graph(params);
  const NodeId out = model.forward(graph, batch);
  const Tensor& values = graph.value(out);
  const std::size_t o = model.num_outputs(), n = batch.size();
  const double inv_n = 1.0 / static_cast<double>(n);

  BatchGradient result;
  Tensor seed(values.shape());
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto row = values.data().subspan(i * o, o);
    auto seed_row = seed.data().subspan(i * o, o);
    loss += loss_and_output_grad(model.loss_kind(), row, batch[i].label, seed_row);
    for (double& s : seed_row) s *= inv_n;
    if (argmax(row) == static_cast<std::size_t>(batch[i].label)) ++result.correct;
  }
  result.loss = loss * inv_n;
  if (!std::isfinite(result.loss)) throw std::domain_error("loss is not finite");
  result.grad = graph.backward(out, seed);
  return result;
}

Evaluation evaluate(const Model& model, std::span<const double> params, std::span<const Sample> samples) {
  if (samples.empty()) return {};
  constexpr std::size_t kChunk = 1024;
  const std::size_t o = model.num_outputs();
  std::vector<double> scratch(o);
  double loss = 0.0;
  std::size_t correct = 0;
  for (std::size_t begin = 0; begin < samples.size(); begin += kChunk) {
    const auto chunk = samples.subspan(begin, std::min(kChunk, samples.size() - begin));
    ComputeGraph graph(params);
    const NodeId out = model.forward(graph, chunk);
    const Tensor& values = graph.value(out);
    for (std::size_t i = 0; i < chunk.size(); ++i) {
      const auto row = values.data().subspan(i * o, o);
      loss += loss_and_output_grad(model.loss_kind(), row, chunk[i].label, scratch);
      if (argmax(row) == static_cast<std::size_t>(chunk[i].label)) ++correct;
    }
  }
  const auto n = static_cast<double>(samples.size());
  return {loss / n, static_cast<double>(correct) / n};
}

std::vector<std::uint8_t> sample_batch(std::size_t num_train, std::size_t batch_size, std::uint64_t seed,
                                       std::size_t step) {
  if (batch_size == 0 || batch_size >= num_train) return std::vector<std::uint8_t>(num_train, 1);
  std::vector<std::size_t> order(num_train);
  for (std::size_t i = 0; i < num_train; ++i) order[i] = i;
  SplitMix64 rng(derive_seed(seed, step));
  // Partial Fisher-Yates: the first batch_size slots form the batch.
  for (std::size_t i = 0; i < batch_size; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.below(num_train - i));
    std::swap(order[i], order[j]);
  }
  std::vector<std::uint8_t> mask(num_train, 0);
  for (std::size_t i = 0; i < batch_size; ++i) mask[order[i]] = 1;
  return mask;
}

std::vector<Sample> gather(std::span<const Sample> samples, const std::vector<std::uint8_t>& mask) {
  std::vector<Sample> out;
  for (std::size_t k = 0; k < samples.size(); ++k)
    if (mask[k]) out.push_back(samples[k]);
  return out;
}

TrainResult train(const RunSetup& setup, const Dataset& data, const TrainOptions& options) {
  setup.optimizer.validate();
  const Model model(setup.model);
  const OptimizerConfig& opt = setup.optimizer;
  const std::size_t m = data.train.size();
  if (m == 0) throw ValidationError("train: empty training set");
  const bool full_batch = opt.batch_size == 0 || opt.batch_size >= m;

  std::vector<double> params = options.initial_params ? *options.initial_params : model.init(setup.init_seed).data;
  if (params.size() != model.dim()) throw ValidationError("train: initial parameters do not match the model dimension");
  OptimizerState state(model.dim());

  TrainResult result;
  result.log.setup = setup;
  result.log.dim = model.dim();
  result.log.num_train = m;
  result.log.records.push_back({params, state.m, state.v, 0.0, std::vector<std::uint8_t>(m, 0)});

  const std::size_t eval_every = std::max<std::size_t>(1, options.eval_every);
  std::size_t step = 0;
  try {
    for (;; ++step) {
      const bool at_end = step == opt.steps;
      const bool eval_now = step % eval_every == 0 || at_end;

      std::optional<BatchGradient> grad;
      std::vector<std::uint8_t> mask;
      if (!at_end) {
        mask = sample_batch(m, opt.batch_size, setup.batch_seed, step + 1);
        grad = full_batch ? batch_gradient(model, params, data.train)
                          : batch_gradient(model, params, gather(data.train, mask));
      }

      bool stop = at_end;
      if (eval_now) {
        CurvePoint point{.step = step};
        if (full_batch && grad) {
          point.train_loss = grad->loss;
          point.train_accuracy = static_cast<double>(grad->correct) / static_cast<double>(m);
        } else {
          const auto e = evaluate(model, params, data.train);
          point.train_loss = e.loss;
          point.train_accuracy = e.accuracy;
        }
        const auto t = evaluate(model, params, data.test);
        point.test_loss = t.loss;
        point.test_accuracy = t.accuracy;
        result.curves.push_back(point);
        if (options.on_eval) options.on_eval(point);
        if (options.stop_at_test_accuracy > 0.0 && point.test_accuracy >= options.stop_at_test_accuracy) stop = true;
      }
      if (stop) break;

      const double lr = opt.schedule.at(step + 1);
      optimizer_step(params, state, grad->grad, opt, lr);
      if (options.record_trajectory) result.log.records.push_back({params, state.m, state.v, lr, std::move(mask)});
    }
  } catch (const std::domain_error& e) {
    result.diverged_at = step + 1;
    result.divergence_message = e.what();
  }
  result.steps_run = step;
  result.final_params = std::move(params);
  return result;
}

namespace {

bool bit_equal(const std::vector<double>& a, const std::vector<double>& b, double& max_diff) {
  bool same = a.size() == b.size();
  for (std::size_t i = 0; i < std::min(a.size(), b.size()); ++i) {
    if (std::bit_cast<std::uint64_t>(a[i]) != std::bit_cast<std::uint64_t>(b[i])) {
      same = false;
      max_diff = std::max(max_diff, std::abs(a[i] - b[i]));
    }
  }
  return same;
}

}  // namespace

ReplayReport replay_check(const TrajectoryLog& log, const Dataset& data) {
  ReplayReport report;
  const Model model(log.setup.model);
  if (log.records.empty() || data.train.size() != log.num_train || model.dim() != log.dim) {
    report.message = "log does not match the model or dataset";
    return report;
  }
  std::vector<double> params = log.records.front().params;
  OptimizerState state(model.dim());
  for (std::size_t s = 1; s < log.records.size(); ++s) {
    const StepRecord& rec = log.records[s];
    const auto batch = gather(data.train, rec.batch);
    const auto grad = batch_gradient(model, params, batch);
    optimizer_step(params, state, grad.grad, log.setup.optimizer, rec.lr);
    double diff = 0.0;
    const bool same =
        bit_equal(params, rec.params, diff) & bit_equal(state.m, rec.m, diff) & bit_equal(state.v, rec.v, diff);
    if (!same) {
      report.first_divergent_step = s;
      report.max_abs_diff = diff;
      report.message = "replay diverges at step " + std::to_string(s) + " (max abs diff " + format_double(diff) + ")";
      return report;
    }
  }
  report.ok = true;
  report.message = "replay reproduces all " + std::to_string(log.steps()) + " steps bit-exactly";
  return report;
}

ReplayReport replay_check(const TrajectoryLog& log) {
  return replay_check(log, generate_dataset(log.setup.data, log.setup.model));
}

void write_curves_csv(const std::filesystem::path& path, const std::vector<CurvePoint>& curves) {
  CsvWriter csv(path);
  csv.header({"step", "train_loss", "train_accuracy", "test_loss", "test_accuracy"});
  for (const auto& c : curves) {
    csv.row({std::to_string(c.step), format_double(c.train_loss), format_double(c.train_accuracy),
             format_double(c.test_loss), format_double(c.test_accuracy)});
  }
}

std::vector<CurvePoint> read_curves_csv(const std::filesystem::path& path) {
  const auto rows = read_csv(path);
  std::vector<CurvePoint> out;
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const auto& f = rows[r];
    if (f.size() < 5) throw ValidationError("curves csv: row " + std::to_string(r) + " has too few columns");
    out.push_back({std::stoul(f[0]), std::stod(f[1]), std::stod(f[2]), std::stod(f[3]), std::stod(f[4])});
  }
  return out;
}

}  // namespace epk
