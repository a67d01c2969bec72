// Stage driver: densetune <stage> --config PATH [flags]

#include <cstdio>
#include <exception>
#include <string>

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include "densetune/error.hpp"
#include "densetune/exec.hpp"
#include "densetune/pipeline.hpp"

namespace dt = densetune;

int main(int argc, char** argv) {
  CLI::App app{"Dense retriever specialization pipeline"};
  app.require_subcommand(1, 1);
  // Flags may follow the subcommand.
  app.fallthrough();
  std::string config_path;
  std::optional<std::uint64_t> seed;
  int threads = 0;
  bool deterministic = false;
  std::string log_level;
  app.add_option("--config", config_path, "pipeline config (JSON)")->required();
  app.add_option("--seed", seed, "overrides the config seed");
  app.add_option("--threads", threads, "caps OpenMP threads (0 = runtime default)")->check(CLI::NonNegativeNumber);
  app.add_flag("--deterministic", deterministic, "force fixed-order reductions");
  app.add_option("--log-level", log_level, "trace|debug|info|warn|error|critical|off");

  for (const char* name : {"dedup", "filter-queries", "normalize-scores", "mine", "train", "apply", "retrieve",
                           "evaluate", "rerank-eval", "sweep-threshold", "pipeline"}) {
    app.add_subcommand(name);
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return static_cast<int>(dt::ErrorKind::usage);
  }

  try {
    auto cfg = dt::pipeline::load_config(config_path);
    if (seed) cfg.seed = *seed;
    if (deterministic) cfg.deterministic = true;
    if (!log_level.empty()) cfg.log_level = log_level;
    const auto level = spdlog::level::from_str(cfg.log_level);
    if (level == spdlog::level::off && cfg.log_level != "off") throw dt::UsageError("unknown log level " + cfg.log_level);
    spdlog::set_level(level);
    dt::set_thread_count(threads);

    const auto stage = dt::pipeline::parse_stage(app.get_subcommands().front()->get_name());
    dt::pipeline::run_stage(*stage, cfg);
    return 0;
  } catch (const dt::Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return e.exit_code();
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return static_cast<int>(dt::ErrorKind::data);
  }
}
