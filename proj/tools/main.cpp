#include <spdlog/sinks/stdout_color_sinks.h>

#include <iostream>
#include <map>
#include <memory>

#include "cli_common.hpp"

using namespace mpiforge;
using namespace mpiforge::cli;

namespace {

int report(std::string_view category, const std::string& detail) {
  // One line, always: newlines inside the detail would break machine parsing.
  std::string flat = detail;
  for (char& c : flat) {
    if (c == '\n' || c == '\r') c = ' ';
  }
  std::cerr << "error: " << category << ": " << flat << std::endl;
  return 1;
}

void setup_logging(const std::string& level) {
  auto logger = spdlog::stderr_color_mt("mpiforge");
  logger->set_pattern("[%l] %v");
  logger->set_level(spdlog::level::from_str(level));
  spdlog::set_default_logger(logger);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mpiforge: fit, render and retarget multiplane images"};
  app.name("mpiforge");
  app.require_subcommand(1);
  app.fallthrough();
  app.config_formatter(std::make_shared<ConfigJsonOrToml>());
  // A repeated option takes its last value, so a command line can override itself.
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  app.set_config("--config", "", "read options from a JSON or TOML file; flags on the command line win");

  GlobalConfig g;
  app.add_option("--threads", g.threads, "worker threads, 0 = auto")
      ->envname("MPIFORGE_THREADS")
      ->check(CLI::NonNegativeNumber);
  std::map<std::string, Precision> precisions{{"f32", Precision::F32}, {"f64", Precision::F64}};
  app.add_option("--precision", g.precision, "rendering precision")
      ->transform(CLI::CheckedTransformer(precisions, CLI::ignore_case))
      ->option_text("f32|f64 (default f32)");
  app.add_option("--seed", g.seed, "seed for synth, gradcheck and bench scenes");
  app.add_option("--log-level", g.log_level, "trace, debug, info, warn, error or off")
      ->check(CLI::IsMember({"trace", "debug", "info", "warn", "error", "critical", "off"}));

  std::vector<Command> commands{add_fit(app, g),       add_render(app, g),   add_orbit(app, g),
                                add_depthmap(app, g),  add_retarget(app, g), add_rasterize(app, g),
                                add_synth(app, g),     add_gradcheck(app, g), add_bench(app, g),
                                add_export_web(app, g)};

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    return report("InvalidArgument", e.what()) + 1;
  }

  try {
    setup_logging(g.log_level);
    for (const auto& c : commands) {
      if (c.app->parsed()) return c.run();
    }
    return report("InvalidArgument", "no subcommand");
  } catch (const Error& e) {
    return report(e.category(), e.detail());
  } catch (const nlohmann::json::exception& e) {
    return report("SchemaError", e.what());
  } catch (const fs::filesystem_error& e) {
    return report("IoError", e.what());
  } catch (const std::bad_alloc&) {
    return report("IoError", "out of memory");
  } catch (const std::exception& e) {
    return report("Internal", e.what());
  }
}
