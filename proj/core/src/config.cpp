#include "epk/config.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

#include "epk/errors.hpp"
#include "epk/experiments.hpp"

namespace epk {

namespace {

struct Key {
  std::string name;
  std::string help;
  std::function<void(RunConfig&, const Json&)> set;
  std::function<Json(const RunConfig&)> get;
};

template <typename T>
T as(const Json& v) {
  return v.get<T>();
}

Schedule& sched(RunConfig& c) { return c.setup.optimizer.schedule; }

const std::vector<Key>& keys() {
  // Field bindings: name, help, setter, getter.
#define EPK_KEY(name, type, field, help)                                   \
  Key {                                                                    \
    name, help, [](RunConfig& c, const Json& v) { c.field = as<type>(v); }, \
        [](const RunConfig& c) { return Json(c.field); }                   \
  }
  static const std::vector<Key> k = {
      Key{"preset", "desk_transformer | p113_transformer | desk_mlp; applied before every other key",
          [](RunConfig& c, const Json& v) { c.preset = v.get<std::string>(); },
          [](const RunConfig& c) { return Json(c.preset); }},
      Key{"model_kind", "modadd_transformer | mlp | linear",
          [](RunConfig& c, const Json& v) { c.setup.model.kind = model_kind_from_string(v.get<std::string>()); },
          [](const RunConfig& c) { return Json(to_string(c.setup.model.kind)); }},
      Key{"modulus", "p for modular addition (model and data)",
          [](RunConfig& c, const Json& v) { c.setup.model.modulus = c.setup.data.modulus = v.get<int>(); },
          [](const RunConfig& c) { return Json(c.setup.model.modulus); }},
      EPK_KEY("d_model", std::size_t, setup.model.d_model, "transformer residual width"),
      EPK_KEY("heads", std::size_t, setup.model.heads, "attention heads"),
      EPK_KEY("d_head", std::size_t, setup.model.d_head, "per-head width"),
      EPK_KEY("d_mlp", std::size_t, setup.model.d_mlp, "transformer MLP width"),
      Key{"input_dim", "vector input width (model and data)",
          [](RunConfig& c, const Json& v) { c.setup.model.input_dim = c.setup.data.input_dim = v.get<std::size_t>(); },
          [](const RunConfig& c) { return Json(c.setup.model.input_dim); }},
      EPK_KEY("hidden", std::vector<std::size_t>, setup.model.hidden, "MLP hidden widths"),
      EPK_KEY("output_dim", std::size_t, setup.model.output_dim, "MLP / linear classes"),
      Key{"data_kind", "modular_addition | synthetic_binary",
          [](RunConfig& c, const Json& v) { c.setup.data.kind = data_kind_from_string(v.get<std::string>()); },
          [](const RunConfig& c) { return Json(to_string(c.setup.data.kind)); }},
      EPK_KEY("data_seed", std::uint64_t, setup.data.seed, "split / sampling seed"),
      EPK_KEY("train_fraction", double, setup.data.train_fraction, "fraction of pairs used for training"),
      EPK_KEY("test_limit", std::size_t, setup.data.test_limit, "cap on test pairs (0 = all remaining)"),
      EPK_KEY("include_diagonal", bool, setup.data.include_diagonal, "include pairs with a == b"),
      EPK_KEY("train_size", std::size_t, setup.data.train_size, "synthetic training samples"),
      EPK_KEY("test_size", std::size_t, setup.data.test_size, "synthetic test samples"),
      Key{"optimizer", "adamw | sgd_momentum",
          [](RunConfig& c, const Json& v) {
            c.setup.optimizer.kind = optimizer_kind_from_string(v.get<std::string>());
          },
          [](const RunConfig& c) { return Json(to_string(c.setup.optimizer.kind)); }},
      Key{"lr_schedule", "constant | linear_warmup_peak_decay",
          [](RunConfig& c, const Json& v) {
            const auto s = v.get<std::string>();
            if (s == "constant")
              sched(c).kind = Schedule::Kind::constant;
            else if (s == "linear_warmup_peak_decay")
              sched(c).kind = Schedule::Kind::linear_warmup_peak_decay;
            else
              throw ValidationError("lr_schedule must be constant or linear_warmup_peak_decay, got '" + s + "'");
          },
          [](const RunConfig& c) {
            return Json(c.setup.optimizer.schedule.kind == Schedule::Kind::constant ? "constant"
                                                                                    : "linear_warmup_peak_decay");
          }},
      EPK_KEY("lr", double, setup.optimizer.schedule.peak, "learning rate (peak for the warmup schedule)"),
      EPK_KEY("lr_peak_step", std::size_t, setup.optimizer.schedule.peak_step, "warmup length"),
      EPK_KEY("lr_total_steps", std::size_t, setup.optimizer.schedule.total_steps, "decay horizon"),
      EPK_KEY("beta1", double, setup.optimizer.beta1, "AdamW first moment or SGD momentum"),
      EPK_KEY("beta2", double, setup.optimizer.beta2, "AdamW second moment"),
      EPK_KEY("eps", double, setup.optimizer.eps, "AdamW epsilon"),
      EPK_KEY("weight_decay", double, setup.optimizer.weight_decay, "lambda"),
      EPK_KEY("momentum_scaled_step", bool, setup.optimizer.momentum_scaled_step,
              "SGD steps by alpha * beta * b instead of alpha * b"),
      EPK_KEY("steps", std::size_t, setup.optimizer.steps, "training updates"),
      EPK_KEY("batch_size", std::size_t, setup.optimizer.batch_size, "0 = full batch"),
      EPK_KEY("init_seed", std::uint64_t, setup.init_seed, "parameter initialization seed"),
      EPK_KEY("batch_seed", std::uint64_t, setup.batch_seed, "minibatch sampling seed"),
      EPK_KEY("record_trajectory", bool, record_trajectory, "write trajectory.bin (needed by every analysis)"),
      EPK_KEY("verify_replay", bool, verify_replay, "replay the saved trajectory bit-exactly after training"),
      EPK_KEY("eval_every", std::size_t, eval_every, "curve sampling interval"),
      EPK_KEY("stop_at_test_accuracy", double, stop_at_test_accuracy, "early stop threshold (0 = off)"),
      EPK_KEY("T", std::vector<std::size_t>, T, "quadrature resolutions for epk-verify"),
      EPK_KEY("influence_T", std::size_t, influence_T, "quadrature resolution for influence commands"),
      EPK_KEY("epk_mode", std::string, epk_mode, "aggregate | per_sample"),
      EPK_KEY("components", std::vector<std::string>, components, "component subset (empty = all)"),
      Key{"windows", "list of [begin, end) transition ranges (empty = whole run)",
          [](RunConfig& c, const Json& v) {
            c.windows.clear();
            for (const auto& w : v) {
              if (!w.is_array() || w.size() != 2) throw ValidationError("windows entries must be [begin, end]");
              c.windows.push_back({w[0].get<std::size_t>(), w[1].get<std::size_t>()});
            }
          },
          [](const RunConfig& c) {
            Json a = Json::array();
            for (const auto& w : c.windows) a.push_back({w.begin, w.end});
            return a;
          }},
      EPK_KEY("log_scale", bool, log_scale, "signed log10 colouring for kernel heatmaps"),
      EPK_KEY("prune_fractions", std::vector<double>, prune_fractions, "kept fractions c in (0, 1]"),
      EPK_KEY("prune_strategies", std::vector<std::string>, prune_strategies, "epk_score | magnitude | random"),
      EPK_KEY("prune_seeds", std::vector<std::uint64_t>, prune_seeds,
              "init / batch seed offsets; each retrains before pruning"),
      EPK_KEY("swap_components", std::vector<std::string>, swap_components, "components copied from the source"),
      EPK_KEY("swap_targets", std::vector<std::size_t>, swap_targets, "checkpoint steps (empty = every 50)"),
      EPK_KEY("swap_source", std::size_t, swap_source, "source step (0 = final)"),
      EPK_KEY("reinit_components", std::vector<std::string>, reinit_components, "donor components"),
      EPK_KEY("reinit_source", std::size_t, reinit_source, "donor step (0 = final)"),
      EPK_KEY("reinit_seeds", std::vector<std::uint64_t>, reinit_seeds, "fresh initialization seeds"),
      EPK_KEY("reinit_steps", std::size_t, reinit_steps, "training updates per reinit run"),
      EPK_KEY("lasso_component", std::string, lasso_component, "component whose similarity is fitted"),
      EPK_KEY("lasso_f_min", std::size_t, lasso_f_min, "smallest period"),
      EPK_KEY("lasso_f_max", std::size_t, lasso_f_max, "largest period (0 = 2 (p - 1))"),
      EPK_KEY("lasso_fractions", std::vector<double>, lasso_fractions, "lambda grid as fractions of lambda_max"),
      EPK_KEY("workers", std::size_t, workers, "threads for per-sample work"),
      EPK_KEY("out", std::string, out, "output directory"),
  };
#undef EPK_KEY
  return k;
}

const Key& find_key(const std::string& name) {
  for (const auto& k : keys())
    if (k.name == name) return k;
  std::string valid;
  for (const auto& k : keys()) valid += (valid.empty() ? "" : ", ") + k.name;
  throw ValidationError("unknown config key '" + name + "'; valid keys: " + valid);
}

RunSetup preset_setup(const std::string& name) {
  if (name == "desk_transformer") return desk_transformer_setup();
  if (name == "p113_transformer") return p113_transformer_setup();
  if (name == "desk_mlp") return desk_mlp_setup();
  throw ValidationError("unknown preset '" + name + "'; valid presets: desk_transformer, p113_transformer, desk_mlp");
}

RunConfig preset_config(const std::string& name) {
  RunConfig c;
  c.preset = name;
  c.setup = preset_setup(name);
  if (name == "desk_mlp") {
    c.lasso_component = "hidden1";
    c.swap_components = {"hidden1"};
    c.reinit_components = {"hidden1"};
  }
  if (name == "p113_transformer") {
    c.record_trajectory = false;
    c.verify_replay = false;
    c.eval_every = 10;
  }
  return c;
}

void check_components(const Registry& reg, const std::vector<std::string>& names, const char* key) {
  for (const auto& n : names) {
    if (!reg.contains(n))
      throw ValidationError(std::string(key) + ": unknown component '" + n + "'; valid components: " + reg.names());
  }
}

}  // namespace

void RunConfig::validate() const {
  setup.optimizer.validate();
  if (setup.model.kind == ModelKind::modadd_transformer && setup.data.kind != DataKind::modular_addition)
    throw ValidationError("model_kind modadd_transformer needs data_kind modular_addition");
  if (setup.model.kind != ModelKind::modadd_transformer && setup.data.kind != DataKind::synthetic_binary)
    throw ValidationError("vector models need data_kind synthetic_binary");
  if (setup.model.kind == ModelKind::modadd_transformer && setup.model.modulus < 2)
    throw ValidationError("modulus must be at least 2");
  if (!(setup.data.train_fraction > 0.0 && setup.data.train_fraction < 1.0))
    throw ValidationError("train_fraction must lie in (0, 1)");
  const Model model(setup.model);
  const auto& reg = model.registry();
  check_components(reg, components, "components");
  check_components(reg, swap_components, "swap_components");
  check_components(reg, reinit_components, "reinit_components");
  check_components(reg, {lasso_component}, "lasso_component");
  if (T.empty()) throw ValidationError("T must list at least one resolution");
  for (auto t : T)
    if (t == 0) throw ValidationError("T entries must be >= 1");
  if (influence_T == 0) throw ValidationError("influence_T must be >= 1");
  if (epk_mode != "aggregate" && epk_mode != "per_sample")
    throw ValidationError("epk_mode must be aggregate or per_sample, got '" + epk_mode + "'");
  for (const auto& w : windows) {
    if (w.begin >= w.end || w.end > setup.optimizer.steps)
      throw ValidationError("window [" + std::to_string(w.begin) + ", " + std::to_string(w.end) +
                            ") must be non-empty and inside [0, " + std::to_string(setup.optimizer.steps) + ")");
  }
  for (double c : prune_fractions)
    if (!(c > 0.0 && c <= 1.0)) throw ValidationError("prune_fractions entries must lie in (0, 1]");
  for (const auto& s : prune_strategies) prune_strategy_from_string(s);
  if (eval_every == 0) throw ValidationError("eval_every must be >= 1");
  if (workers == 0) throw ValidationError("workers must be >= 1");
  if (lasso_f_min < 1 || (lasso_f_max != 0 && lasso_f_max < lasso_f_min))
    throw ValidationError("lasso periods need 1 <= lasso_f_min <= lasso_f_max");
  for (double f : lasso_fractions)
    if (!(f > 0.0)) throw ValidationError("lasso_fractions entries must be positive");
  if (stop_at_test_accuracy > 1.0) throw ValidationError("stop_at_test_accuracy must be <= 1");
}

RunConfig config_from_json(const Json& j) {
  if (!j.is_object()) throw ValidationError("config must be a JSON object");
  RunConfig c = preset_config(j.value("preset", std::string("desk_transformer")));
  for (const auto& [name, value] : j.items()) {
    if (name == "preset") continue;
    const Key& k = find_key(name);
    try {
      k.set(c, value);
    } catch (const Json::exception& e) {
      throw ValidationError("config key '" + name + "': " + e.what());
    }
  }
  // A warmup schedule without an explicit horizon decays over the run.
  if (!j.contains("lr_total_steps") && c.setup.optimizer.schedule.kind == Schedule::Kind::linear_warmup_peak_decay &&
      j.contains("steps"))
    c.setup.optimizer.schedule.total_steps = c.setup.optimizer.steps;
  return c;
}

Json to_json(const RunConfig& c) {
  Json j = Json::object();
  for (const auto& k : keys()) j[k.name] = k.get(c);
  return j;
}

void apply_override(Json& config, const std::string& key, const std::string& value) {
  const Key& k = find_key(key);
  auto parse_one = [](const std::string& s) {
    Json parsed = Json::parse(s, nullptr, false);
    return parsed.is_discarded() ? Json(s) : parsed;
  };
  Json parsed = parse_one(value);
  // List keys also take "a,b,c".
  if (k.get(RunConfig{}).is_array() && !parsed.is_array()) {
    Json list = Json::array();
    std::size_t start = 0;
    while (start <= value.size()) {
      const auto comma = value.find(',', start);
      const auto item = value.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
      if (!item.empty()) list.push_back(parse_one(item));
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    parsed = list;
  }
  config[key] = parsed;
}

RunConfig load_config(const std::filesystem::path& path,
                      const std::vector<std::pair<std::string, std::string>>& overrides) {
  Json j = Json::object();
  if (!path.empty()) {
    if (!std::filesystem::exists(path)) throw InputError("config file not found: " + path.string());
    try {
      j = read_json(path);
    } catch (const Json::exception& e) {
      throw ValidationError("config " + path.string() + " is not valid JSON: " + e.what());
    }
  }
  for (const auto& [k, v] : overrides) apply_override(j, k, v);
  RunConfig c = config_from_json(j);
  c.validate();
  return c;
}

std::vector<std::pair<std::string, std::string>> config_keys() {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& k : keys()) out.emplace_back(k.name, k.help);
  return out;
}

}  // namespace epk
