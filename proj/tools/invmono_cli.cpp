#include "experiments.hpp"

#include "CLI11.hpp"

#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <cstdlib>
#include <string>

namespace {

spdlog::level::level_enum level_from_env() {
  const char* env = std::getenv("INVMONO_LOG");
  const std::string v = env ? env : "error";
  if (v == "debug") return spdlog::level::debug;
  if (v == "info") return spdlog::level::info;
  return spdlog::level::err;
}

}  // namespace

int main(int argc, char** argv) {
  auto logger = spdlog::stderr_color_mt("invmono");
  logger->set_level(level_from_env());
  logger->set_pattern("[%l] %v");
  const invmono::cli::LogSink sink = [&](invmono::cli::LogLevel lvl, const std::string& msg) {
    switch (lvl) {
      case invmono::cli::LogLevel::debug: logger->debug(msg); break;
      case invmono::cli::LogLevel::info: logger->info(msg); break;
      case invmono::cli::LogLevel::error: logger->error(msg); break;
    }
  };

  CLI::App app{"Monotone extensions, Lipschitz extensions, couplings and dissipative flows"};
  app.require_subcommand(1);
  invmono::cli::Options opts;
  std::uint64_t seed = 0;
  double tol = 0.0;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", opts.config, "JSON config file")->required();
    sub->add_option("--out", opts.out, "output directory")->required();
    sub->add_option("--seed", seed, "random seed (overrides the config)");
    sub->add_option("--tol", tol, "check tolerance (overrides the config)")->check(CLI::PositiveNumber);
    sub->add_flag("--timing", opts.timing, "fill the runtime_ms column");
  };
  std::vector<CLI::App*> subs;
  for (const auto& name : invmono::cli::suite_names()) {
    subs.push_back(app.add_subcommand(name, "run the " + name + " suite"));
    add_common(subs.back());
  }
  CLI::App* all = app.add_subcommand("all", "run every suite listed in a manifest");
  add_common(all);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : invmono::cli::kBadConfig;
  }
  for (CLI::App* sub : app.get_subcommands()) {
    if (sub->count("--seed")) opts.seed = seed;
    if (sub->count("--tol")) opts.tolerance = tol;
    if (sub == all) return invmono::cli::run_all(opts, sink);
    return invmono::cli::run(sub->get_name(), opts, sink);
  }
  return invmono::cli::kBadConfig;
}
