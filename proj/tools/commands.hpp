#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "epk/config.hpp"

namespace epk::cli {

struct Context {
  std::string command;
  RunConfig config;
  std::filesystem::path out;
  std::vector<std::filesystem::path> inputs;
  std::vector<std::string> outputs;  // file names relative to `out`
};

using Command = int (*)(Context&);

struct CommandInfo {
  const char* name;
  const char* help;
  Command run;
};

const std::vector<CommandInfo>& commands();

/// Resolves the output directory: --out, then the config's "out"; relative
/// paths are placed under $EPK_OUT_ROOT (default "runs").
std::filesystem::path resolve_out(const std::string& flag, const RunConfig& config);

/// Merges this invocation into <out>/manifest.json. Only the manifest carries wall time.
void write_manifest(const Context& ctx, double wall_seconds, int exit_code);

}  // namespace epk::cli
