// Command-line front end: editlab <verify|edit|sweep|multiturn|drag> [flags]
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "editlab/config.hpp"
#include "editlab/lab.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Guided-transport editing lab on analytic Gaussian-mixture priors"};
  app.require_subcommand(0, 1);

  editlab::CommandOptions options;
  std::string config, profile, out = ".";
  std::uint64_t seed = 0;
  unsigned threads = 0;
  bool list_profiles = false;
  app.add_flag("--list-profiles", list_profiles, "Print the built-in profile names");

  const char* commands[][2] = {
      {"verify", "Run the bound checkers"},
      {"edit", "Single inversion-and-edit run"},
      {"sweep", "Guidance-scale and noise-level sweep"},
      {"multiturn", "Multi-turn editing with stability tracking"},
      {"drag", "Drag-constrained latent optimization"},
  };
  std::vector<CLI::App*> subs;
  for (const auto& [name, help] : commands) {
    auto* sub = app.add_subcommand(name, help);
    sub->add_option("--config", config, "Experiment JSON file");
    sub->add_option("--profile", profile, "Built-in profile name");
    sub->add_option("--out", out, "Output directory")->capture_default_str();
    sub->add_option("--seed", seed, "Override the experiment seed");
    sub->add_option("--threads", threads, "Worker threads (fallback: LAB_THREADS)")
        ->check(CLI::PositiveNumber);
    subs.push_back(sub);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : editlab::kExitConfig;
  }

  if (list_profiles) {
    for (const auto& n : editlab::builtin_profile_names()) std::cout << n << "\n";
    return 0;
  }
  for (auto* sub : subs) {
    if (!sub->parsed()) continue;
    if (!config.empty()) options.config = config;
    if (!profile.empty()) options.profile = profile;
    options.out = out;
    if (sub->count("--seed") > 0) options.seed = seed;
    if (sub->count("--threads") > 0) options.threads = threads;
    return editlab::run_command(sub->get_name(), options);
  }
  std::cerr << app.help();
  return editlab::kExitConfig;
}
