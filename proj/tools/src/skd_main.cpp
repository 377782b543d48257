#include <cstdio>
#include <exception>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "commands.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Blockwise knowledge-distillation experiment runner"};
  app.set_help_all_flag("--help-all");

  skd::cli::Invocation inv;
  std::string config;
  std::uint64_t seed = 0;
  std::size_t workers = 0;
  app.add_option("command", inv.command, "Command to run")
      ->required()
      ->check(CLI::IsMember(skd::cli::command_names()));
  app.add_option("--config", config, "Experiment config (JSON)");
  app.add_option("--out", inv.out_dir, "Output directory")->required();
  auto* seed_opt = app.add_option("--seed", seed, "Override the config seed");
  auto* workers_opt =
      app.add_option("--workers", workers, "Block workers (capped by SKD_THREADS)")->check(CLI::PositiveNumber);
  app.add_flag("--overwrite", inv.overwrite, "Replace a non-empty output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? skd::cli::kExitOk : skd::cli::kExitConfig;
  }
  if (!config.empty()) inv.config_path = config;
  if (*seed_opt) inv.seed = seed;
  if (*workers_opt) inv.workers = workers;

  try {
    return skd::cli::run_command(inv, std::cout);
  } catch (const skd::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return skd::cli::exit_code_for(e);
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return skd::cli::kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return 1;
  }
}
