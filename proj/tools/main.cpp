#include <chrono>
#include <filesystem>
#include <iostream>

#include <CLI11.hpp>

#include "commands.hpp"
#include "epk/errors.hpp"

namespace {

// Exit codes: 0 ok, 1 invalid configuration or arguments, 2 missing or
// incomplete input, 3 run failure (divergence, replay mismatch).
constexpr int kInvalid = 1;
constexpr int kMissingInput = 2;
constexpr int kRunFailure = 3;

struct CommonFlags {
  std::string config;
  std::string out;
  std::optional<std::size_t> workers;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> steps;
  std::vector<std::size_t> T;
};

// `--key value` and `--key=value` pairs left over after the named flags.
std::vector<std::pair<std::string, std::string>> overrides_from(const std::vector<std::string>& rest) {
  std::vector<std::pair<std::string, std::string>> out;
  for (std::size_t i = 0; i < rest.size(); ++i) {
    const std::string& a = rest[i];
    if (a.rfind("--", 0) != 0) throw epk::ValidationError("unexpected argument '" + a + "'");
    const std::string body = a.substr(2);
    if (auto eq = body.find('='); eq != std::string::npos) {
      out.emplace_back(body.substr(0, eq), body.substr(eq + 1));
    } else {
      if (i + 1 >= rest.size()) throw epk::ValidationError("override --" + body + " needs a value");
      out.emplace_back(body, rest[++i]);
    }
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Exact path kernel tools: train, reconstruct, attribute and intervene on recorded trajectories"};
  app.require_subcommand(0, 1);
  bool list_keys = false;
  app.add_flag("--config-keys", list_keys, "list every configuration key and exit");

  CommonFlags flags;
  std::vector<std::pair<CLI::App*, const epk::cli::CommandInfo*>> subs;
  for (const auto& info : epk::cli::commands()) {
    CLI::App* sub = app.add_subcommand(info.name, info.help);
    sub->allow_extras();
    sub->add_option("--config", flags.config, "flat JSON configuration file");
    sub->add_option("--out", flags.out, "output directory (relative paths go under $EPK_OUT_ROOT)");
    sub->add_option("--workers", flags.workers, "worker threads");
    sub->add_option("--seed", flags.seed, "initialization seed");
    sub->add_option("--steps", flags.steps, "training updates");
    sub->add_option("--T", flags.T, "quadrature resolution(s), comma separated")->delimiter(',');
    sub->footer("Any configuration key can be overridden with --<key> <value>; see --config-keys.");
    subs.emplace_back(sub, &info);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kInvalid;
  }
  if (list_keys) {
    for (const auto& [k, h] : epk::config_keys()) std::cout << k << "\t" << h << "\n";
    return 0;
  }

  for (const auto& [sub, info] : subs) {
    if (!sub->parsed()) continue;
    epk::cli::Context ctx;
    ctx.command = info->name;
    const auto start = std::chrono::steady_clock::now();
    int code = 0;
    bool have_out = false;
    try {
      auto overrides = overrides_from(sub->remaining());
      if (flags.workers) overrides.emplace_back("workers", std::to_string(*flags.workers));
      if (flags.seed) overrides.emplace_back("init_seed", std::to_string(*flags.seed));
      if (flags.steps) overrides.emplace_back("steps", std::to_string(*flags.steps));
      if (!flags.T.empty()) {
        std::string list = "[";
        for (std::size_t i = 0; i < flags.T.size(); ++i) list += (i ? "," : "") + std::to_string(flags.T[i]);
        overrides.emplace_back("T", list + "]");
        overrides.emplace_back("influence_T", std::to_string(flags.T.back()));
      }
      ctx.config = epk::load_config(flags.config, overrides);
      if (!flags.config.empty()) ctx.inputs.emplace_back(flags.config);
      ctx.out = epk::cli::resolve_out(flags.out, ctx.config);
      if (ctx.command != "config") {
        std::filesystem::create_directories(ctx.out);
        have_out = true;
      }
      code = info->run(ctx);
    } catch (const epk::InputError& e) {
      std::cerr << "error: " << e.what() << "\n";
      code = kMissingInput;
    } catch (const std::invalid_argument& e) {
      std::cerr << "error: " << e.what() << "\n";
      code = kInvalid;
    } catch (const nlohmann::json::exception& e) {
      std::cerr << "error: " << e.what() << "\n";
      code = kInvalid;
    } catch (const std::exception& e) {
      std::cerr << "error: " << e.what() << "\n";
      code = kRunFailure;
    }
    if (have_out) {
      const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      epk::cli::write_manifest(ctx, wall, code);
    }
    return code;
  }
  std::cerr << app.help();
  return kInvalid;
}
