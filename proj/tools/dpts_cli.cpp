// Command-line harness: run / bench / trace / sweep.

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dpts/cli.hpp"

int main(int argc, char** argv) {
  CLI::App app{"dynamic parallel tree search harness"};
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::string> overrides;
  std::string trace_out;
  std::string csv_out;
  int workers = 0;
  std::string trace_in;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "configuration file")
        ->envname("DPTS_CONFIG");
    cmd->add_option("--set", overrides, "override, section.key=value (repeatable)");
  };

  CLI::App* run_cmd = app.add_subcommand("run", "run one search");
  add_common(run_cmd);
  run_cmd->add_option("--trace", trace_out, "write the run trace to this file");

  CLI::App* bench_cmd = app.add_subcommand("bench", "run the benchmark grid");
  add_common(bench_cmd);
  bench_cmd->add_option("--out", csv_out, "summary CSV path (appended)");
  bench_cmd->add_option("--workers", workers, "parallel grid workers");

  CLI::App* sweep_cmd = app.add_subcommand("sweep", "alias of bench for lambda sweeps");
  add_common(sweep_cmd);
  sweep_cmd->add_option("--out", csv_out, "summary CSV path (appended)");
  sweep_cmd->add_option("--workers", workers, "parallel grid workers");

  CLI::App* trace_cmd = app.add_subcommand("trace", "inspect a trace file");
  trace_cmd->add_option("file", trace_in, "trace JSON file")->required();

  CLI11_PARSE(app, argc, argv);

  dpts::cli::CommonArgs common{config_path, overrides};
  if (run_cmd->parsed()) {
    if (config_path.empty()) {
      std::cerr << "config error: --config (or DPTS_CONFIG) is required\n";
      return 2;
    }
    const std::optional<std::string> trace_path =
        trace_out.empty() ? std::nullopt : std::optional<std::string>(trace_out);
    return dpts::cli::cmd_run(common, trace_path, std::cout, std::cerr);
  }
  if (bench_cmd->parsed() || sweep_cmd->parsed()) {
    if (config_path.empty()) {
      std::cerr << "config error: --config (or DPTS_CONFIG) is required\n";
      return 2;
    }
    const std::optional<std::string> out_path =
        csv_out.empty() ? std::nullopt : std::optional<std::string>(csv_out);
    const std::optional<int> w = workers > 0 ? std::optional<int>(workers) : std::nullopt;
    return dpts::cli::cmd_bench(common, out_path, w, std::cout, std::cerr);
  }
  if (trace_cmd->parsed()) {
    return dpts::cli::cmd_trace(trace_in, std::cout, std::cerr);
  }
  return 2;
}
