#include "commands.hpp"

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <iostream>

#include "epk/errors.hpp"
#include "epk/experiments.hpp"
#include "epk/lasso.hpp"
#include "epk/trainer.hpp"
#include "epk/trajectory.hpp"

namespace fs = std::filesystem;

namespace epk::cli {

namespace {

constexpr const char* kTrajectory = "trajectory.bin";

fs::path artifact(Context& ctx, const std::string& name) {
  ctx.outputs.push_back(name);
  return ctx.out / name;
}

std::string window_tag(const StepWindow& w) { return std::to_string(w.begin) + "-" + std::to_string(w.end); }

struct LoadedRun {
  TrajectoryLog log;
  Dataset data;
};

LoadedRun load_run(Context& ctx) {
  const fs::path path = ctx.out / kTrajectory;
  if (!fs::exists(path))
    throw InputError("no trajectory at " + path.string() + "; run `epk train` with record_trajectory true first");
  ctx.inputs.push_back(path);
  LoadedRun r;
  r.log = load_trajectory(path);
  r.log.validate();
  if (r.log.setup != ctx.config.setup)
    std::cerr << "note: analysing the setup recorded in " << path.string() << ", not the config's\n";
  r.data = generate_dataset(r.log.setup.data, r.log.setup.model);
  if (r.data.train.size() != r.log.num_train)
    throw ValidationError("regenerated training set has " + std::to_string(r.data.train.size()) +
                          " samples but the trajectory expects " + std::to_string(r.log.num_train));
  return r;
}

std::vector<StepWindow> windows_for(const Context& ctx, const TrajectoryLog& log) {
  if (ctx.config.windows.empty()) return {{0, log.steps()}};
  for (const auto& w : ctx.config.windows) {
    if (w.end > log.steps())
      throw ValidationError("window " + window_tag(w) + " ends after the last transition " +
                            std::to_string(log.steps()));
  }
  return ctx.config.windows;
}

std::vector<std::string> components_for(const std::vector<std::string>& requested, const Model& model) {
  if (requested.empty()) {
    std::vector<std::string> all;
    for (const auto& c : model.registry().components()) all.push_back(c.name);
    return all;
  }
  for (const auto& n : requested) model.registry().find(n);
  return requested;
}

std::size_t checkpoint_step(std::size_t requested, const TrajectoryLog& log) {
  return requested == 0 ? log.steps() : requested;
}

TrainMapMode mode_of(const RunConfig& c) {
  return c.epk_mode == "per_sample" ? TrainMapMode::per_sample : TrainMapMode::aggregate;
}

Json components_json(const Model& model) {
  Json a = Json::array();
  for (const auto& c : model.registry().components())
    a.push_back({{"name", c.name}, {"begin", c.begin}, {"end", c.end}});
  return a;
}

void write_params_csv(const fs::path& path, const std::vector<double>& params) {
  CsvWriter csv(path);
  csv.header({"value"});
  for (double v : params) csv.numeric_row({v});
}

int cmd_train(Context& ctx) {
  const auto& cfg = ctx.config;
  const Model model(cfg.setup.model);
  const Dataset data = generate_dataset(cfg.setup.data, cfg.setup.model);
  write_dataset_csv(artifact(ctx, "dataset.csv"), data);

  TrainOptions opts;
  opts.record_trajectory = cfg.record_trajectory;
  opts.eval_every = cfg.eval_every;
  opts.stop_at_test_accuracy = cfg.stop_at_test_accuracy;
  const std::size_t every = std::max<std::size_t>(1, cfg.setup.optimizer.steps / 20);
  opts.on_eval = [every](const CurvePoint& p) {
    if (p.step % every == 0)
      std::cerr << "step " << p.step << "  train " << p.train_accuracy << "  test " << p.test_accuracy << "\n";
  };
  const TrainResult res = train(cfg.setup, data, opts);
  write_curves_csv(artifact(ctx, "curves.csv"), res.curves);
  write_params_csv(artifact(ctx, "final_params.csv"), res.final_params);

  Json summary{{"dim", model.dim()},
               {"components", components_json(model)},
               {"num_train", data.train.size()},
               {"num_test", data.test.size()},
               {"steps_run", res.steps_run},
               {"grokking", to_json(grokking_report(res.curves))}};
  if (!res.curves.empty()) {
    const auto& last = res.curves.back();
    summary["final"] = {{"train_loss", last.train_loss},
                        {"train_accuracy", last.train_accuracy},
                        {"test_loss", last.test_loss},
                        {"test_accuracy", last.test_accuracy}};
  }
  int code = 0;
  if (res.diverged_at) {
    summary["diverged_at"] = *res.diverged_at;
    summary["divergence"] = res.divergence_message;
    std::cerr << "training diverged: " << res.divergence_message << "\n";
    code = 3;
  }
  if (cfg.record_trajectory) {
    const fs::path path = artifact(ctx, kTrajectory);
    save_trajectory(path, res.log);
    if (cfg.verify_replay && !res.diverged_at) {
      const auto rep = replay_check(load_trajectory(path), data);
      summary["replay"] = {{"ok", rep.ok},
                           {"first_divergent_step", rep.first_divergent_step ? Json(*rep.first_divergent_step)
                                                                             : Json(nullptr)},
                           {"max_abs_diff", rep.max_abs_diff},
                           {"message", rep.message}};
      std::cout << "replay: " << (rep.ok ? "bit-identical" : rep.message) << "\n";
      if (!rep.ok) code = 3;
    }
  }
  write_json(artifact(ctx, "train.json"), summary);
  const auto& last = res.curves.back();
  std::cout << "trained " << res.steps_run << " steps, D = " << model.dim() << ", train acc " << last.train_accuracy
            << ", test acc " << last.test_accuracy << "\n";
  return code;
}

int cmd_epk_verify(Context& ctx) {
  const auto run = load_run(ctx);
  ReconstructOptions opts;
  opts.T = ctx.config.T;
  opts.mode = mode_of(ctx.config);
  opts.workers = ctx.config.workers;
  const auto rec = reconstruct(run.log, run.data.train, run.data.test, opts);
  const auto points = fidelity(rec);
  Json j{{"mode", ctx.config.epk_mode}, {"samples", "test"}, {"num_samples", run.data.test.size()}};
  j["points"] = Json::array();
  CsvWriter csv(artifact(ctx, "fidelity.csv"));
  csv.header({"T", "agreement", "mean_kl", "max_kl", "max_abs_error"});
  for (const auto& p : points) {
    j["points"].push_back(to_json(p));
    csv.numeric_row({static_cast<double>(p.T), p.agreement, p.mean_kl, p.max_kl, p.max_abs_error});
    std::cout << "T = " << p.T << "  agreement " << p.agreement << "  mean KL " << p.mean_kl << "\n";
  }
  write_json(artifact(ctx, "fidelity.json"), j);
  return 0;
}

InfluenceTable influence_for(Context& ctx, const LoadedRun& run, InfluenceRequest req) {
  const Model model(run.log.setup.model);
  req.windows = windows_for(ctx, run.log);
  req.components = components_for(ctx.config.components, model);
  req.T = ctx.config.influence_T;
  req.workers = ctx.config.workers;
  return compute_influence(run.log, run.data.train, run.data.test, req);
}

int cmd_scores(Context& ctx) {
  const auto run = load_run(ctx);
  const auto table = influence_for(ctx, run, {});
  CsvWriter kernel(artifact(ctx, "scores.csv"));
  kernel.header({"window_begin", "window_end", "component", "test", "train", "kernel"});
  CsvWriter reg(artifact(ctx, "reg_scores.csv"));
  reg.header({"window_begin", "window_end", "component", "test", "reg"});
  for (std::size_t w = 0; w < table.windows().size(); ++w) {
    const auto& win = table.windows()[w];
    for (std::size_t c = 0; c < table.components().size(); ++c) {
      const auto& name = table.components()[c].name;
      for (std::size_t x = 0; x < table.num_test(); ++x) {
        reg.row({std::to_string(win.begin), std::to_string(win.end), name, std::to_string(x),
                 format_double(table.reg(w, c, x))});
        for (std::size_t k = 0; k < table.num_train(); ++k)
          kernel.row({std::to_string(win.begin), std::to_string(win.end), name, std::to_string(x),
                      std::to_string(k), format_double(table.kernel(w, c, x, k))});
      }
    }
  }
  std::cout << "wrote " << table.windows().size() << " window(s) x " << table.components().size()
            << " component(s) x " << table.num_test() << " test x " << table.num_train() << " train scores\n";
  return 0;
}

int cmd_kernel_matrix(Context& ctx) {
  const auto run = load_run(ctx);
  const auto table = influence_for(ctx, run, {});
  Json contrast = Json::array();
  for (std::size_t w = 0; w < table.windows().size(); ++w) {
    for (std::size_t c = 0; c < table.components().size(); ++c) {
      const auto& name = table.components()[c].name;
      const auto slice = kernel_slice(table, w, c, run.data.test, run.data.train);
      const std::string stem = "kernel_" + name + "_" + window_tag(table.windows()[w]);
      write_matrix_csv(artifact(ctx, stem + ".csv"), slice.values, slice.row_labels, slice.col_labels);
      write_heatmap_svg(artifact(ctx, stem + ".svg"), slice.values,
                        {.title = name + " " + window_tag(table.windows()[w]), .log_scale = ctx.config.log_scale});
      const auto rc = residue_contrast(slice, run.data.test, run.data.train);
      contrast.push_back({{"component", name},
                          {"window", {table.windows()[w].begin, table.windows()[w].end}},
                          {"matching_mean_abs", rc.matching},
                          {"other_mean_abs", rc.other},
                          {"ratio", rc.ratio()}});
      std::cout << stem << ": matching/other |K| = " << rc.ratio() << "\n";
    }
  }
  write_json(artifact(ctx, "kernel_contrast.json"), contrast);
  return 0;
}

int cmd_similarity(Context& ctx) {
  const auto run = load_run(ctx);
  InfluenceRequest req;
  req.parameter_vectors = true;
  req.pairwise = false;
  const auto table = influence_for(ctx, run, req);
  std::vector<std::string> labels;
  for (const auto& s : run.data.test) labels.push_back(sample_label(s));
  Json contrast = Json::array();
  for (std::size_t w = 0; w < table.windows().size(); ++w) {
    for (const auto& comp : table.components()) {
      const auto sim = similarity(table, w, comp);
      const std::string stem = "similarity_" + comp.name + "_" + window_tag(table.windows()[w]);
      write_matrix_csv(artifact(ctx, stem + ".csv"), sim.values, labels, labels);
      write_heatmap_svg(artifact(ctx, stem + ".svg"), sim.values, {.title = comp.name}, sim.missing);
      const auto rc = residue_contrast(sim, run.data.test);
      contrast.push_back({{"component", comp.name},
                          {"window", {table.windows()[w].begin, table.windows()[w].end}},
                          {"matching_mean", rc.matching},
                          {"other_mean", rc.other}});
      std::cout << stem << ": equal-label " << rc.matching << ", other " << rc.other << "\n";
    }
  }
  write_json(artifact(ctx, "similarity_contrast.json"), contrast);
  return 0;
}

int cmd_step_importance(Context& ctx) {
  const auto run = load_run(ctx);
  InfluenceRequest req;
  req.step_series = true;
  req.pairwise = false;
  const auto table = influence_for(ctx, run, req);
  CsvWriter csv(artifact(ctx, "step_importance.csv"));
  std::vector<std::string> header{"step"};
  for (const auto& c : table.components()) {
    header.push_back(c.name + ".kernel_abs");
    header.push_back(c.name + ".reg_abs");
    header.push_back(c.name + ".difference");
  }
  csv.header(header);
  for (const auto& si : table.series()) {
    std::vector<double> row{static_cast<double>(si.step)};
    for (std::size_t c = 0; c < table.components().size(); ++c) {
      row.push_back(si.kernel_abs[c]);
      row.push_back(si.reg_abs[c]);
      row.push_back(si.difference[c]);
    }
    csv.numeric_row(row);
  }
  const auto rep = grokking_report({}, table.series(), table.components());
  write_json(artifact(ctx, "step_importance.json"), to_json(rep)["series_peaks"]);
  for (const auto& p : rep.peaks) std::cout << p.component << " peaks at step " << p.step << "\n";
  return 0;
}

int cmd_prune(Context& ctx) {
  const auto& cfg = ctx.config;
  CsvWriter csv(artifact(ctx, "prune.csv"));
  csv.header({"seed", "fraction", "strategy", "prunable", "kept", "original_accuracy", "accuracy", "kl"});
  Json all = Json::array();
  for (std::uint64_t i : cfg.prune_seeds) {
    RunSetup setup = cfg.setup;
    setup.init_seed += i;
    setup.batch_seed += i;
    const Dataset data = generate_dataset(setup.data, setup.model);
    const Model model(setup.model);
    const TrainResult res = train(setup, data);
    if (res.diverged_at) throw std::runtime_error("prune: training diverged for seed offset " + std::to_string(i));
    std::vector<double> scores;
    for (const auto& s : cfg.prune_strategies)
      if (prune_strategy_from_string(s) == PruneStrategy::epk_score)
        scores = epk_parameter_scores(res.log, data.train, data.train, cfg.influence_T, cfg.workers);
    for (double c : cfg.prune_fractions) {
      for (const auto& sname : cfg.prune_strategies) {
        const auto strategy = prune_strategy_from_string(sname);
        const auto r = prune(model, res.final_params, strategy, scores, c, data.test, 100 + i);
        csv.row({std::to_string(i), format_double(c), sname, std::to_string(r.prunable), std::to_string(r.kept),
                 format_double(r.original_accuracy), format_double(r.accuracy), format_double(r.kl)});
        Json j = to_json(r);
        j["seed"] = i;
        all.push_back(j);
        std::cout << "seed " << i << " c " << c << " " << sname << ": acc " << r.original_accuracy << " -> "
                  << r.accuracy << ", KL " << r.kl << "\n";
      }
    }
  }
  write_json(artifact(ctx, "prune.json"), all);
  return 0;
}

int cmd_swap(Context& ctx) {
  const auto run = load_run(ctx);
  const Model model(run.log.setup.model);
  const auto comps = components_for(ctx.config.swap_components, model);
  const std::size_t source = checkpoint_step(ctx.config.swap_source, run.log);
  auto targets = ctx.config.swap_targets;
  if (targets.empty())
    for (std::size_t s = 0; s < run.log.steps(); s += 50) targets.push_back(s);
  Json all = Json::array();
  for (std::size_t t : targets) {
    const auto r = layer_swap(model, run.log.at(source).params, source, run.log.at(t).params, t, comps,
                              run.data.test);
    const std::string stem = "confusion_" + std::to_string(t);
    write_matrix_csv(artifact(ctx, stem + ".csv"), r.confusion);
    write_heatmap_svg(artifact(ctx, stem + ".svg"), r.confusion, {.title = "step " + std::to_string(t)});
    all.push_back(to_json(r));
    std::cout << "step " << t << ": " << r.pre_accuracy << " -> " << r.post_accuracy << " (source "
              << r.source_accuracy << ")\n";
  }
  write_json(artifact(ctx, "swap.json"), all);
  return 0;
}

int cmd_reinit_train(Context& ctx) {
  const auto run = load_run(ctx);
  const Model model(run.log.setup.model);
  const auto comps = components_for(ctx.config.reinit_components, model);
  const std::size_t source = checkpoint_step(ctx.config.reinit_source, run.log);
  RunSetup setup = run.log.setup;
  setup.optimizer.steps = ctx.config.reinit_steps;
  if (setup.optimizer.schedule.kind == Schedule::Kind::linear_warmup_peak_decay)
    setup.optimizer.schedule.total_steps = std::max(setup.optimizer.schedule.total_steps, ctx.config.reinit_steps);
  const auto r = pipeline_reinit_train(setup, run.data, run.log.at(source).params, source, comps,
                                       ctx.config.reinit_seeds, ctx.config.eval_every);
  write_reinit_csv(artifact(ctx, "reinit.csv"), r);
  write_json(artifact(ctx, "reinit.json"), to_json(r));
  std::cout << "final test accuracy " << r.test_mean.back() << " +- " << r.test_std.back() << " over "
            << r.seeds.size() << " seed(s)\n";
  return 0;
}

int cmd_lasso(Context& ctx) {
  const auto run = load_run(ctx);
  const Model model(run.log.setup.model);
  if (model.spec().kind != ModelKind::modadd_transformer)
    throw ValidationError("lasso needs a modular-addition run (frequencies are over a + b)");
  const auto& comp = model.registry().find(ctx.config.lasso_component);
  InfluenceRequest req;
  req.windows = {windows_for(ctx, run.log).front()};
  req.components = {comp.name};
  req.T = ctx.config.influence_T;
  req.parameter_vectors = true;
  req.pairwise = false;
  req.workers = ctx.config.workers;
  const auto table = compute_influence(run.log, run.data.train, run.data.test, req);
  const auto sim = similarity(table, 0, comp);
  std::vector<int> sums;
  for (const auto& s : run.data.test) sums.push_back(s.sum);
  const int fmax = ctx.config.lasso_f_max ? static_cast<int>(ctx.config.lasso_f_max)
                                          : 2 * (model.spec().modulus - 1);
  const auto sweep = lasso_frequency_sweep(sim, sums, static_cast<int>(ctx.config.lasso_f_min), fmax,
                                           ctx.config.lasso_fractions);
  Json j = to_json(sweep);
  j["component"] = comp.name;
  j["window"] = {req.windows[0].begin, req.windows[0].end};
  write_json(artifact(ctx, "lasso.json"), j);
  const auto& chosen = sweep.fits[sweep.chosen];
  std::cout << "dominant frequency feature " << sweep.features.names[chosen.dominant] << " ("
            << chosen.nonzero << " nonzero at lambda " << chosen.lambda << ")\n";
  return 0;
}

int cmd_report(Context& ctx) {
  const fs::path curves_path = ctx.out / "curves.csv";
  if (!fs::exists(curves_path)) throw InputError("no curves at " + curves_path.string() + "; run `epk train` first");
  ctx.inputs.push_back(curves_path);
  const auto curves = read_curves_csv(curves_path);
  GrokkingReport rep;
  if (fs::exists(ctx.out / kTrajectory)) {
    const auto run = load_run(ctx);
    InfluenceRequest req;
    req.step_series = true;
    req.pairwise = false;
    const auto table = influence_for(ctx, run, req);
    rep = grokking_report(curves, table.series(), table.components());
  } else {
    rep = grokking_report(curves);
  }
  write_json(artifact(ctx, "report.json"), to_json(rep));
  std::cout << to_json(rep).dump(2) << "\n";
  return 0;
}

int cmd_config(Context& ctx) {
  std::cout << to_json(ctx.config).dump(2) << "\n";
  return 0;
}

Json version_info() {
  return Json{{"epk", EPK_VERSION},
              {"trajectory_format", trajectory_header(TrajectoryLog{})["version"]},
              {"nlohmann_json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                                    std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                                    std::to_string(NLOHMANN_JSON_VERSION_PATCH)},
              {"compiler", __VERSION__}};
}

}  // namespace

const std::vector<CommandInfo>& commands() {
  static const std::vector<CommandInfo> c = {
      {"train", "train a model and record its trajectory", cmd_train},
      {"epk-verify", "reconstruct test outputs from the trajectory and report fidelity", cmd_epk_verify},
      {"scores", "per-window, per-component influence tables", cmd_scores},
      {"kernel-matrix", "ordered test x train kernel slices with heatmaps", cmd_kernel_matrix},
      {"similarity", "cosine similarity of parameter vectors", cmd_similarity},
      {"step-importance", "per-step kernel and reg series", cmd_step_importance},
      {"prune", "prune by EPK score, magnitude or at random", cmd_prune},
      {"swap", "copy components from a source step into earlier checkpoints", cmd_swap},
      {"reinit-train", "retrain from fresh initializations with donor components", cmd_reinit_train},
      {"lasso", "sparse frequency fit of a similarity matrix", cmd_lasso},
      {"report", "grokking phases and series peaks", cmd_report},
      {"config", "print the resolved configuration", cmd_config},
  };
  return c;
}

fs::path resolve_out(const std::string& flag, const RunConfig& config) {
  fs::path p = !flag.empty() ? fs::path(flag) : !config.out.empty() ? fs::path(config.out) : fs::path(config.preset);
  if (p.is_absolute()) return p;
  const char* root = std::getenv("EPK_OUT_ROOT");
  if (!flag.empty() && !root) return p;  // an explicit relative --out is taken relative to the cwd
  return fs::path(root ? root : "runs") / p;
}

void write_manifest(const Context& ctx, double wall_seconds, int exit_code) {
  const fs::path path = ctx.out / "manifest.json";
  Json m = Json::object();
  if (fs::exists(path)) {
    try {
      m = read_json(path);
    } catch (const std::exception&) {
      m = Json::object();
    }
  }
  Json inputs = Json::array();
  for (const auto& p : ctx.inputs)
    inputs.push_back({{"path", p.string()}, {"bytes", fs::exists(p) ? fs::file_size(p) : 0}});
  const auto& s = ctx.config.setup;
  const std::time_t now = std::time(nullptr);
  char stamp[32];
  std::strftime(stamp, sizeof stamp, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
  m["commands"][ctx.command] = {
      {"config", to_json(ctx.config)},
      {"seeds",
       {{"init_seed", s.init_seed},
        {"batch_seed", s.batch_seed},
        {"data_seed", s.data.seed},
        {"prune_seeds", ctx.config.prune_seeds},
        {"reinit_seeds", ctx.config.reinit_seeds}}},
      {"versions", version_info()},
      {"inputs", inputs},
      {"outputs", ctx.outputs},
      {"finished_at", stamp},
      {"wall_seconds", wall_seconds},
      {"exit_code", exit_code}};
  write_json(path, m);
}

}  // namespace epk::cli
