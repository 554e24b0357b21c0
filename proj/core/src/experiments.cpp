#include "epk/experiments.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "epk/errors.hpp"
#include "epk/rng.hpp"

namespace epk {

std::string to_string(PruneStrategy s) {
  switch (s) {
    case PruneStrategy::epk_score: return "epk_score";
    case PruneStrategy::magnitude: return "magnitude";
    case PruneStrategy::random: return "random";
  }
  return "?";
}

PruneStrategy prune_strategy_from_string(const std::string& name) {
  if (name == "epk_score") return PruneStrategy::epk_score;
  if (name == "magnitude") return PruneStrategy::magnitude;
  if (name == "random") return PruneStrategy::random;
  throw ValidationError("unknown prune strategy '" + name + "'; valid strategies: epk_score, magnitude, random");
}

std::vector<double> epk_parameter_scores(const TrajectoryLog& log, std::span<const Sample> train,
                                         std::span<const Sample> xs, std::size_t T, std::size_t workers) {
  InfluenceRequest req;
  req.windows = {{0, log.steps()}};
  req.T = T;
  req.parameter_vectors = true;
  req.pairwise = false;
  req.workers = workers;
  const InfluenceTable table = compute_influence(log, train, xs, req);
  std::vector<double> scores(log.dim, 0.0);
  for (std::size_t x = 0; x < xs.size(); ++x) {
    const auto p = table.parameter_vector(0, x);
    for (std::size_t i = 0; i < scores.size(); ++i) scores[i] += std::abs(p[i]);
  }
  return scores;
}

namespace {

std::vector<std::uint8_t> protected_mask(const Model& model) {
  std::vector<std::uint8_t> prot(model.dim(), 0);
  for (const auto& name : model.output_components()) {
    const auto& r = model.registry().find(name);
    std::fill(prot.begin() + static_cast<std::ptrdiff_t>(r.begin), prot.begin() + static_cast<std::ptrdiff_t>(r.end),
              1);
  }
  return prot;
}

void check_fraction(double c) {
  if (!(c > 0.0 && c <= 1.0)) throw ValidationError("prune fraction must lie in (0, 1], got " + format_double(c));
}

double mean_kl(const Model& model, std::span<const double> reference, std::span<const double> params,
               std::span<const Sample> eval) {
  if (eval.empty()) return 0.0;
  double total = 0.0;
  for (const auto& x : eval) total += output_kl(model.outputs(reference, x), model.outputs(params, x));
  return total / static_cast<double>(eval.size());
}

}  // namespace

std::vector<std::uint8_t> prune_mask(const Model& model, std::span<const double> scores, double fraction) {
  check_fraction(fraction);
  if (scores.size() != model.dim()) throw ValidationError("prune scores must cover all parameters");
  const auto prot = protected_mask(model);
  std::vector<std::size_t> prunable;
  for (std::size_t i = 0; i < prot.size(); ++i)
    if (!prot[i]) prunable.push_back(i);
  const auto keep_count =
      static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(prunable.size()) - 1e-9));
  std::stable_sort(prunable.begin(), prunable.end(),
                   [&](std::size_t a, std::size_t b) { return std::abs(scores[a]) > std::abs(scores[b]); });
  std::vector<std::uint8_t> keep = prot;
  for (std::size_t j = 0; j < std::min(keep_count, prunable.size()); ++j) keep[prunable[j]] = 1;
  return keep;
}

PruneResult prune(const Model& model, std::span<const double> params, PruneStrategy strategy,
                  std::span<const double> scores, double fraction, std::span<const Sample> eval, std::uint64_t seed) {
  check_fraction(fraction);
  if (params.size() != model.dim()) throw ValidationError("prune: parameter vector does not match the model");
  std::vector<double> ranking(model.dim());
  switch (strategy) {
    case PruneStrategy::epk_score:
      if (scores.size() != model.dim()) throw ValidationError("prune: epk_score needs one score per parameter");
      ranking.assign(scores.begin(), scores.end());
      break;
    case PruneStrategy::magnitude:
      ranking.assign(params.begin(), params.end());
      break;
    case PruneStrategy::random: {
      SplitMix64 rng(seed);
      for (double& r : ranking) r = rng.uniform();
      break;
    }
  }
  PruneResult res;
  res.fraction = fraction;
  res.strategy = strategy;
  res.keep = prune_mask(model, ranking, fraction);
  const auto prot = protected_mask(model);
  res.params.assign(params.begin(), params.end());
  for (std::size_t i = 0; i < res.params.size(); ++i) {
    if (!prot[i]) {
      ++res.prunable;
      if (res.keep[i]) ++res.kept;
    }
    if (!res.keep[i]) res.params[i] = 0.0;
  }
  res.original_accuracy = evaluate(model, params, eval).accuracy;
  res.accuracy = evaluate(model, res.params, eval).accuracy;
  res.kl = mean_kl(model, params, res.params, eval);
  return res;
}

Json to_json(const PruneResult& r) {
  return Json{{"strategy", to_string(r.strategy)}, {"fraction", r.fraction},
              {"prunable", r.prunable},            {"kept", r.kept},
              {"accuracy", r.accuracy},            {"original_accuracy", r.original_accuracy},
              {"kl", r.kl}};
}

std::vector<double> swap_components(const Model& model, std::span<const double> source, std::span<const double> target,
                                    const std::vector<std::string>& components) {
  if (source.size() != model.dim() || target.size() != model.dim())
    throw ValidationError("swap: parameter vectors do not match the model registry");
  std::vector<double> out(target.begin(), target.end());
  for (const auto& name : components) {
    const auto& r = model.registry().find(name);
    std::copy(source.begin() + static_cast<std::ptrdiff_t>(r.begin), source.begin() + static_cast<std::ptrdiff_t>(r.end),
              out.begin() + static_cast<std::ptrdiff_t>(r.begin));
  }
  return out;
}

Matrix confusion_matrix(const Model& model, std::span<const double> params, std::span<const Sample> eval,
                        std::size_t classes, std::size_t* off_class) {
  Matrix cm(classes, classes);
  std::size_t off = 0;
  for (const auto& x : eval) {
    const auto out = model.outputs(params, x);
    const std::size_t pred = argmax(out);
    if (static_cast<std::size_t>(x.label) >= classes) throw ValidationError("confusion: label outside class range");
    if (pred >= classes) {
      ++off;
      continue;
    }
    cm(static_cast<std::size_t>(x.label), pred) += 1.0;
  }
  if (off_class) *off_class = off;
  return cm;
}

SwapResult layer_swap(const Model& model, std::span<const double> source, std::size_t source_step,
                      std::span<const double> target, std::size_t target_step,
                      const std::vector<std::string>& components, std::span<const Sample> eval) {
  SwapResult r;
  r.source_step = source_step;
  r.target_step = target_step;
  r.components = components;
  r.params = swap_components(model, source, target, components);
  r.pre_accuracy = evaluate(model, target, eval).accuracy;
  r.post_accuracy = evaluate(model, r.params, eval).accuracy;
  r.source_accuracy = evaluate(model, source, eval).accuracy;
  const std::size_t classes =
      model.spec().kind == ModelKind::modadd_transformer ? static_cast<std::size_t>(model.spec().modulus)
                                                         : model.num_outputs();
  r.confusion = confusion_matrix(model, r.params, eval, classes, &r.off_class_predictions);
  return r;
}

Json to_json(const SwapResult& r) {
  return Json{{"source_step", r.source_step},
              {"target_step", r.target_step},
              {"components", r.components},
              {"pre_accuracy", r.pre_accuracy},
              {"post_accuracy", r.post_accuracy},
              {"source_accuracy", r.source_accuracy},
              {"off_class_predictions", r.off_class_predictions}};
}

std::vector<double> reinit_params(const Model& model, std::span<const double> donor,
                                  const std::vector<std::string>& components, std::uint64_t seed) {
  const ParamVector fresh = model.init(seed);
  return swap_components(model, donor, fresh.data, components);
}

ReinitRun pipeline_reinit_train(const RunSetup& setup, const Dataset& data, std::span<const double> donor,
                                std::size_t source_step, const std::vector<std::string>& components,
                                const std::vector<std::uint64_t>& seeds, std::size_t eval_every) {
  if (seeds.empty()) throw ValidationError("reinit: at least one seed is required");
  const Model model(setup.model);
  ReinitRun run;
  run.components = components;
  run.source_step = source_step;
  run.seeds = seeds;
  for (std::uint64_t seed : seeds) {
    RunSetup s = setup;
    s.init_seed = seed;
    TrainOptions opts;
    opts.record_trajectory = false;
    opts.eval_every = eval_every;
    opts.initial_params = reinit_params(model, donor, components, seed);
    run.initial_params.push_back(*opts.initial_params);
    TrainResult res = train(s, data, opts);
    if (res.diverged_at) throw std::domain_error(res.divergence_message);
    run.curves.push_back(std::move(res.curves));
  }
  for (const auto& p : run.curves.front()) run.steps.push_back(p.step);
  for (const auto& c : run.curves)
    if (c.size() != run.steps.size()) throw std::logic_error("reinit: seeds produced different evaluation grids");
  const auto n = static_cast<double>(run.curves.size());
  for (std::size_t i = 0; i < run.steps.size(); ++i) {
    double tr = 0, te = 0, tr2 = 0, te2 = 0;
    for (const auto& c : run.curves) {
      tr += c[i].train_accuracy;
      te += c[i].test_accuracy;
    }
    tr /= n;
    te /= n;
    for (const auto& c : run.curves) {
      tr2 += (c[i].train_accuracy - tr) * (c[i].train_accuracy - tr);
      te2 += (c[i].test_accuracy - te) * (c[i].test_accuracy - te);
    }
    run.train_mean.push_back(tr);
    run.test_mean.push_back(te);
    run.train_std.push_back(std::sqrt(tr2 / n));
    run.test_std.push_back(std::sqrt(te2 / n));
  }
  return run;
}

Json to_json(const ReinitRun& r) {
  Json j{{"components", r.components}, {"source_step", r.source_step}, {"seeds", r.seeds}};
  std::optional<std::size_t> first95;
  for (std::size_t i = 0; i < r.steps.size(); ++i) {
    if (r.test_mean[i] >= 0.95) {
      first95 = r.steps[i];
      break;
    }
  }
  j["mean_test_95_step"] = first95 ? Json(*first95) : Json(nullptr);
  j["final_test_mean"] = r.test_mean.back();
  j["final_test_std"] = r.test_std.back();
  j["final_train_mean"] = r.train_mean.back();
  return j;
}

void write_reinit_csv(const std::filesystem::path& path, const ReinitRun& r) {
  CsvWriter csv(path);
  csv.header({"step", "train_mean", "train_std", "test_mean", "test_std"});
  for (std::size_t i = 0; i < r.steps.size(); ++i)
    csv.numeric_row({static_cast<double>(r.steps[i]), r.train_mean[i], r.train_std[i], r.test_mean[i], r.test_std[i]});
}

GrokkingReport grokking_report(const std::vector<CurvePoint>& curves, const std::vector<StepImportance>& series,
                               const std::vector<ComponentRange>& components) {
  GrokkingReport rep;
  for (const auto& p : curves) {
    if (!rep.memorization_step && p.train_accuracy >= 1.0) rep.memorization_step = p.step;
    if (!rep.test95_step && p.test_accuracy >= 0.95) rep.test95_step = p.step;
    if (!rep.grok_step && p.test_accuracy >= 0.99) rep.grok_step = p.step;
  }
  if (rep.memorization_step && rep.grok_step && *rep.grok_step >= *rep.memorization_step)
    rep.gap = *rep.grok_step - *rep.memorization_step;
  for (std::size_t c = 0; c < components.size(); ++c) {
    SeriesPeak peak{components[c].name, 0, -1.0};
    for (const auto& s : series) {
      if (c < s.kernel_abs.size() && s.kernel_abs[c] > peak.value) {
        peak.value = s.kernel_abs[c];
        peak.step = s.step;
      }
    }
    if (peak.value >= 0.0) rep.peaks.push_back(peak);
  }
  return rep;
}

Json to_json(const GrokkingReport& r) {
  auto opt = [](const std::optional<std::size_t>& v) { return v ? Json(*v) : Json("not-reached"); };
  Json peaks = Json::array();
  for (const auto& p : r.peaks) peaks.push_back({{"component", p.component}, {"step", p.step}, {"value", p.value}});
  return Json{{"memorization_step", opt(r.memorization_step)},
              {"grok_step", opt(r.grok_step)},
              {"gap", opt(r.gap)},
              {"test95_step", opt(r.test95_step)},
              {"series_peaks", peaks}};
}

}  // namespace epk
