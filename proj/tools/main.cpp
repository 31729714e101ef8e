#include <fmt/format.h>

#include <iostream>

#include "CLI11.hpp"
#include "config.hpp"
#include "pipeline.hpp"

int main(int argc, char** argv) {
  using namespace bowsim;
  using namespace bowsim::cli;

  CLI::App app{"Bowed mass-spring oscillator: FDM reference, physics-informed networks, Hessian diagnostics"};
  app.require_subcommand(1);
  app.fallthrough();
  std::string config_path;
  std::uint64_t seed = 0;
  std::string out_dir;
  int threads = 1;
  app.add_option("--config", config_path, "TOML run configuration")->check(CLI::ExistingFile);
  auto* seed_opt = app.add_option("--seed", seed, "Overrides the configured seed");
  auto* out_opt = app.add_option("--out", out_dir, "Overrides the output directory");
  app.add_option("--threads", threads, "Worker threads for evaluation and landscapes")->check(CLI::PositiveNumber);

  CommandOptions options;
  std::vector<std::string> plot_args;
  for (const auto& [name, help] : kCommands) {
    CLI::App* sub = app.add_subcommand(name, help);
    if (name == "eval" || name == "hessian" || name == "landscape" || name == "synth") {
      auto* ck = sub->add_option("--checkpoint", options.checkpoint, "Model checkpoint");
      if (name != "synth") ck->required();
      ck->check(CLI::ExistingFile);
    }
    if (name == "synth") sub->add_option("--input", options.input, "Trajectory CSV")->check(CLI::ExistingFile);
    if (name == "plot") {
      sub->add_option("kind", options.plot_kind,
                      "friction | trajectory | residuals | density | landscape | stick-slip | loss")
          ->required();
      sub->add_option("inputs", plot_args, "Input data files");
    }
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    RunConfig config = config_path.empty() ? parse_config("", "<defaults>") : load_config(config_path);
    if (*seed_opt) {
      config.seed = seed;
      config.plan.seed = seed;
    }
    if (*out_opt) config.output.dir = out_dir;
    options.command = app.get_subcommands().front()->get_name();
    options.threads = threads;
    for (const std::string& a : plot_args) options.plot_inputs.emplace_back(a);
    const Manifest m = run_command(config, options);
    std::cerr << fmt::format("wrote {} files to {}\n", m.entries().size() + 1, m.dir().string());
    return 0;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const TrainingFailure& e) {
    std::cerr << "training failed: " << e.what() << "\nlast finite parameters: " << e.checkpoint().string() << '\n';
    return 3;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
