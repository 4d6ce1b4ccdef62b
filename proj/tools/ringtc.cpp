// ringtc <experiment> --config <file> [--seed S] [--out DIR]
// ringtc print-defaults [experiment]

#include <iostream>

#include <CLI11.hpp>

#include "ringtc/harness/run.hpp"

namespace h = ringtc::harness;

namespace {

int fail(const std::exception& e, const std::optional<std::string>& out_dir) {
  const int code = h::exit_code_for(e);
  const auto doc = h::error_json(e, code);
  std::cerr << doc.dump(2) << '\n';
  if (out_dir && std::filesystem::is_directory(*out_dir)) {
    std::ofstream f(std::filesystem::path(*out_dir) / "error.json");
    f << doc.dump(2) << '\n';
  }
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Measurement-induced symmetry breaking of attractive bosons on a ring"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(h::kVersion));

  auto* defaults = app.add_subcommand("print-defaults", "Print the default configuration as JSON");
  std::string defaults_experiment = "correlation";
  defaults->add_option("experiment", defaults_experiment, "Experiment name to put in the output");

  struct Args {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out;
  };
  Args args;
  std::vector<CLI::App*> runs;
  for (const auto& name : h::kExperiments) {
    auto* sub = app.add_subcommand(name, "Run the " + name + " experiment");
    sub->add_option("--config,-c", args.config, "JSON configuration file (defaults if omitted)");
    sub->add_option("--seed,-s", args.seed, "Master seed; overrides master_seed and clears explicit seeds");
    sub->add_option("--out,-o", args.out, "Output directory; overrides output_dir");
    runs.push_back(sub);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : h::kExitConfig;
  }

  if (defaults->parsed()) {
    h::RunConfig c;
    c.experiment = defaults_experiment;
    std::cout << h::to_json(c).dump(2) << '\n';
    return 0;
  }

  std::string experiment;
  for (auto* sub : runs) {
    if (sub->parsed()) experiment = sub->get_name();
  }

  std::optional<std::string> out_dir = args.out;
  try {
    h::RunConfig defaults_for_run;
    defaults_for_run.experiment = experiment;
    h::RunConfig cfg = args.config.empty() ? defaults_for_run : h::load_config(args.config, defaults_for_run);
    if (cfg.experiment != experiment) {
      throw ringtc::ConfigError("config field 'experiment': file names '" + cfg.experiment +
                                "' but the command is '" + experiment + "'");
    }
    if (args.seed) {
      cfg.master_seed = *args.seed;
      cfg.seeds.clear();
    }
    if (args.out) cfg.output_dir = *args.out;
    out_dir = cfg.output_dir;
    const auto outcome = h::run(cfg);
    std::cout << outcome.summary.dump(2) << '\n';
    return h::kExitOk;
  } catch (const std::exception& e) {
    return fail(e, out_dir);
  }
}
