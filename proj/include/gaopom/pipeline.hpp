#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "gaopom/attack.hpp"
#include "gaopom/data.hpp"
#include "gaopom/error.hpp"
#include "gaopom/eval.hpp"
#include "gaopom/model.hpp"

namespace gaopom {

// Raised for bad configuration; maps to exit code 1.
class ConfigError : public InvalidArgument {
 public:
  using InvalidArgument::InvalidArgument;
};

enum class ModelRole { Surrogate, Target };

struct RosterEntry {
  std::string name;
  ModelRole role;
  Architecture arch;
  LossKind loss;
};

// Two surrogates (MLP-3 softmax, MLP-3 margin-cosine) and two held-out
// targets (Conv-2 softmax, MLP-3 softmax with its own seed).
std::vector<RosterEntry> default_roster();

// Everything a run needs. One global seed fans out to per-section seeds via
// derive_seed(seed, "<section>").
struct RunConfig {
  std::uint64_t seed = 0;
  std::string out_dir = "run";

  SyntheticParams data;
  TrainConfig train;
  std::size_t feature_dim = 32;
  AttackConfig attack;
  std::vector<Method> methods = {Method::FiUap, Method::GaFiUap, Method::Opom, Method::GaOpom};
  EvalConfig eval;
  std::vector<int> ablate_k_values = {1, 2, 4, 8};
  int ablate_seeds = 5;
  std::string ablate_surrogate;  // empty = first surrogate in the roster

  std::vector<RosterEntry> roster = default_roster();

  // Flat "section.key = value" text; unknown keys are rejected.
  static RunConfig from_text(const std::string& text);
  static RunConfig from_file(const std::string& path);
  void set(const std::string& key, const std::string& value);
  void validate() const;
  // Sorted key = value dump of the effective configuration.
  std::string to_text() const;

  std::uint64_t data_seed() const;
  std::uint64_t train_seed(const std::string& model_name) const;
  std::uint64_t attack_seed() const;
  std::vector<std::uint64_t> ablation_seeds() const;

  std::string dataset_path() const;
  std::string model_path(const std::string& name) const;
  std::string mask_path(const std::string& surrogate, Method method, std::size_t identity) const;
  std::string report_path() const;
  std::string report_metadata_path() const;
  std::string k_sweep_path() const;
  std::string equal_budget_path() const;
};

void cmd_gen_data(const RunConfig& cfg, std::ostream& log);
void cmd_train(const RunConfig& cfg, std::ostream& log);
void cmd_craft(const RunConfig& cfg, std::ostream& log);
void cmd_evaluate(const RunConfig& cfg, std::ostream& log);
void cmd_ablate(const RunConfig& cfg, std::ostream& log);

// Runs a subcommand by name and maps failures onto exit codes:
// 0 success, 1 config validation, 2 I/O, 3 numeric/training/crafting failure.
int run_command(const std::string& name, const RunConfig& cfg, std::ostream& log, std::ostream& err);

}  // namespace gaopom
