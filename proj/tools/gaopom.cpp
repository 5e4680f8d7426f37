// Command-line driver: gen-data, train, craft, evaluate, ablate.
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "gaopom/pipeline.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Person-specific privacy masks with gradient accumulation"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<double> epsilon, momentum_mu, dropout_p;
  std::optional<int> outer_steps, k_multiplier;
  std::optional<std::string> method;
  std::vector<std::string> sets;

  app.add_option("--config", config_path, "Key-value config file (section.key = value)");
  app.add_option("--seed", seed, "Global seed");
  app.add_option("--out", out, "Output directory");
  app.add_option("--set", sets, "Extra config override, key=value (repeatable)");

  const char* names[] = {"gen-data", "train", "craft", "evaluate", "ablate"};
  for (const char* n : names) {
    auto* sub = app.add_subcommand(n);
    sub->fallthrough();
    if (std::string(n) == "craft" || std::string(n) == "evaluate" || std::string(n) == "ablate") {
      sub->add_option("--epsilon", epsilon, "l_inf budget in pixel units");
      sub->add_option("--outer-steps", outer_steps, "Outer iterations N_max");
      sub->add_option("--k-multiplier", k_multiplier, "Inner iterations per image K (M = K * n_k)");
      sub->add_option("--method", method, "Comma list of fi-uap, opom, ga-fi-uap, ga-opom");
      sub->add_option("--momentum-mu", momentum_mu, "Momentum decay on the outer gradient (0 = off)");
      sub->add_option("--dropout-p", dropout_p, "Surrogate dropout probability (0 = off)");
    }
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  gaopom::RunConfig cfg;
  try {
    if (!config_path.empty()) cfg = gaopom::RunConfig::from_file(config_path);
    if (seed) cfg.seed = *seed;
    if (out) cfg.out_dir = *out;
    if (epsilon) cfg.attack.epsilon = *epsilon;
    if (outer_steps) cfg.set("attack.outer_steps", std::to_string(*outer_steps));
    if (k_multiplier) cfg.set("attack.k_multiplier", std::to_string(*k_multiplier));
    if (method) cfg.set("attack.methods", *method);
    if (momentum_mu) cfg.attack.momentum_mu = *momentum_mu;
    if (dropout_p) cfg.attack.dropout_p = *dropout_p;
    for (const auto& kv : sets) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw gaopom::ConfigError("--set expects key=value, got " + kv);
      cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
    }
  } catch (const gaopom::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const gaopom::IoError& e) {
    std::cerr << "I/O error: " << e.what() << "\n";
    return 2;
  }

  return gaopom::run_command(app.get_subcommands().front()->get_name(), cfg, std::cout, std::cerr);
}
