#include "gaopom/pipeline.hpp"

#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iomanip>
#include <ostream>
#include <set>
#include <sstream>

#include "gaopom/binary_io.hpp"

namespace gaopom {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

double parse_double(const std::string& key, const std::string& v) {
  char* end = nullptr;
  const double d = std::strtod(v.c_str(), &end);
  if (v.empty() || end != v.c_str() + v.size()) throw ConfigError("config key '" + key + "': not a number: " + v);
  return d;
}

long long parse_int(const std::string& key, const std::string& v) {
  char* end = nullptr;
  const long long i = std::strtoll(v.c_str(), &end, 10);
  if (v.empty() || end != v.c_str() + v.size()) throw ConfigError("config key '" + key + "': not an integer: " + v);
  return i;
}

std::size_t parse_extent(const std::string& key, const std::string& v) {
  const long long i = parse_int(key, v);
  if (i < 0) throw ConfigError("config key '" + key + "': must be non-negative");
  return static_cast<std::size_t>(i);
}

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

template <typename T>
std::string join(const std::vector<T>& xs, const std::function<std::string(const T&)>& f) {
  std::string s;
  for (const auto& x : xs) s += (s.empty() ? "" : ",") + f(x);
  return s;
}

struct Key {
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

const std::map<std::string, Key>& keys() {
  static const std::map<std::string, Key> table = [] {
    std::map<std::string, Key> t;
#define GAOPOM_KEY(name, setter, getter)                                                        \
  t[name] = Key{[](RunConfig& c, const std::string& v) { setter; }, [](const RunConfig& c) { \
                  return std::string(getter);                                                 \
                }}
    GAOPOM_KEY("seed", c.seed = static_cast<std::uint64_t>(parse_int("seed", v)), std::to_string(c.seed));
    GAOPOM_KEY("out", c.out_dir = v, c.out_dir);
    GAOPOM_KEY("data.n_identities", c.data.n_identities = parse_extent("data.n_identities", v),
               std::to_string(c.data.n_identities));
    GAOPOM_KEY("data.images_per_identity", c.data.images_per_identity = parse_extent("data.images_per_identity", v),
               std::to_string(c.data.images_per_identity));
    GAOPOM_KEY("data.n_train", c.data.n_train = parse_extent("data.n_train", v), std::to_string(c.data.n_train));
    GAOPOM_KEY("data.height", c.data.height = parse_extent("data.height", v), std::to_string(c.data.height));
    GAOPOM_KEY("data.width", c.data.width = parse_extent("data.width", v), std::to_string(c.data.width));
    GAOPOM_KEY("data.channels", c.data.channels = parse_extent("data.channels", v), std::to_string(c.data.channels));
    GAOPOM_KEY("data.intra_noise", c.data.intra_noise = parse_double("data.intra_noise", v), fmt(c.data.intra_noise));
    GAOPOM_KEY("data.max_shift", c.data.max_shift = parse_double("data.max_shift", v), fmt(c.data.max_shift));
    GAOPOM_KEY("data.brightness", c.data.brightness = parse_double("data.brightness", v), fmt(c.data.brightness));
    GAOPOM_KEY("data.base_contrast", c.data.base_contrast = parse_double("data.base_contrast", v),
               fmt(c.data.base_contrast));
    GAOPOM_KEY("train.epochs", c.train.epochs = static_cast<int>(parse_int("train.epochs", v)),
               std::to_string(c.train.epochs));
    GAOPOM_KEY("train.learning_rate", c.train.learning_rate = parse_double("train.learning_rate", v),
               fmt(c.train.learning_rate));
    GAOPOM_KEY("train.batch_size", c.train.batch_size = static_cast<int>(parse_int("train.batch_size", v)),
               std::to_string(c.train.batch_size));
    GAOPOM_KEY("train.margin", c.train.margin = parse_double("train.margin", v), fmt(c.train.margin));
    GAOPOM_KEY("train.scale", c.train.scale = parse_double("train.scale", v), fmt(c.train.scale));
    GAOPOM_KEY("train.feature_dim", c.feature_dim = parse_extent("train.feature_dim", v), std::to_string(c.feature_dim));
    GAOPOM_KEY("attack.epsilon", c.attack.epsilon = parse_double("attack.epsilon", v), fmt(c.attack.epsilon));
    GAOPOM_KEY("attack.outer_steps", c.attack.outer_steps = static_cast<int>(parse_int("attack.outer_steps", v)),
               std::to_string(c.attack.outer_steps));
    GAOPOM_KEY("attack.k_multiplier",
               c.attack.inner_multiplier = static_cast<int>(parse_int("attack.k_multiplier", v)),
               std::to_string(c.attack.inner_multiplier));
    GAOPOM_KEY("attack.outer_step_size", c.attack.outer_step_size = parse_double("attack.outer_step_size", v),
               fmt(c.attack.outer_step_size));
    GAOPOM_KEY("attack.inner_step_size", c.attack.inner_step_size = parse_double("attack.inner_step_size", v),
               fmt(c.attack.inner_step_size));
    GAOPOM_KEY("attack.momentum_mu", c.attack.momentum_mu = parse_double("attack.momentum_mu", v),
               fmt(c.attack.momentum_mu));
    GAOPOM_KEY("attack.dropout_p", c.attack.dropout_p = parse_double("attack.dropout_p", v), fmt(c.attack.dropout_p));
    GAOPOM_KEY("attack.methods", {
      c.methods.clear();
      for (const auto& m : split_list(v)) c.methods.push_back(parse_method(m));
    }, join<Method>(c.methods, [](const Method& m) { return to_string(m); }));
    GAOPOM_KEY("eval.gallery_policy", c.eval.gallery_policy = parse_gallery_policy(v),
               to_string(c.eval.gallery_policy));
    GAOPOM_KEY("eval.top_k", {
      c.eval.top_k_list.clear();
      for (const auto& k : split_list(v)) c.eval.top_k_list.push_back(parse_extent("eval.top_k", k));
    }, join<std::size_t>(c.eval.top_k_list, [](const std::size_t& k) { return std::to_string(k); }));
    GAOPOM_KEY("eval.threshold_t",
               c.eval.threshold_t = v == "none" ? std::nullopt : std::optional(parse_double("eval.threshold_t", v)),
               c.eval.threshold_t ? fmt(*c.eval.threshold_t) : "none");
    GAOPOM_KEY("ablate.k_values", {
      c.ablate_k_values.clear();
      for (const auto& k : split_list(v)) c.ablate_k_values.push_back(static_cast<int>(parse_int("ablate.k_values", k)));
    }, join<int>(c.ablate_k_values, [](const int& k) { return std::to_string(k); }));
    GAOPOM_KEY("ablate.seeds", c.ablate_seeds = static_cast<int>(parse_int("ablate.seeds", v)),
               std::to_string(c.ablate_seeds));
    GAOPOM_KEY("ablate.surrogate", c.ablate_surrogate = v, c.ablate_surrogate);
#undef GAOPOM_KEY
    return t;
  }();
  return table;
}

void require_file(const std::string& path, const std::string& what) {
  if (!std::filesystem::is_regular_file(path)) throw ConfigError(what + " not found: " + path);
}

std::vector<const RosterEntry*> by_role(const RunConfig& cfg, ModelRole role) {
  std::vector<const RosterEntry*> out;
  for (const auto& e : cfg.roster) {
    if (e.role == role) out.push_back(&e);
  }
  return out;
}

struct LoadedModels {
  std::vector<std::pair<std::string, EmbeddingModel>> models;

  NamedModel named(std::size_t i) const { return {models[i].first, &models[i].second}; }
};

LoadedModels load_models(const RunConfig& cfg, ModelRole role) {
  LoadedModels out;
  for (const auto* e : by_role(cfg, role)) {
    const auto path = cfg.model_path(e->name);
    require_file(path, "model file");
    out.models.emplace_back(e->name, EmbeddingModel::load(path));
  }
  return out;
}

void write_text(const std::string& path, const std::string& text) { io::write_file(path, {text.begin(), text.end()}); }

}  // namespace

std::vector<RosterEntry> default_roster() {
  return {
      {"s-mlp3-softmax", ModelRole::Surrogate, Architecture::Mlp3, LossKind::Softmax},
      {"s-mlp3-margin", ModelRole::Surrogate, Architecture::Mlp3, LossKind::MarginCosine},
      {"t-conv2-softmax", ModelRole::Target, Architecture::Conv2, LossKind::Softmax},
      {"t-mlp3-softmax", ModelRole::Target, Architecture::Mlp3, LossKind::Softmax},
  };
}

RunConfig RunConfig::from_text(const std::string& text) {
  RunConfig cfg;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    cfg.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return cfg;
}

RunConfig RunConfig::from_file(const std::string& path) {
  require_file(path, "config file");
  const auto bytes = io::read_file(path);
  return from_text(std::string(bytes.begin(), bytes.end()));
}

void RunConfig::set(const std::string& key, const std::string& value) {
  const auto it = keys().find(key);
  if (it == keys().end()) throw ConfigError("unknown config key '" + key + "'");
  try {
    it->second.set(*this, value);
  } catch (const ConfigError&) {
    throw;
  } catch (const InvalidArgument& e) {
    throw ConfigError("config key '" + key + "': " + e.what());
  }
}

std::string RunConfig::to_text() const {
  std::string s;
  for (const auto& [k, key] : keys()) s += k + " = " + key.get(*this) + "\n";
  return s;
}

void RunConfig::validate() const {
  try {
    data.validate();
    train.validate();
    attack.validate();
    eval.validate(data.n_identities);
  } catch (const InvalidArgument& e) {
    throw ConfigError(e.what());
  }
  if (out_dir.empty()) throw ConfigError("out directory must not be empty");
  if (feature_dim == 0) throw ConfigError("train.feature_dim must be positive");
  if (methods.empty()) throw ConfigError("attack.methods must list at least one method");
  if (ablate_k_values.empty()) throw ConfigError("ablate.k_values must not be empty");
  for (int k : ablate_k_values) {
    if (k < 1) throw ConfigError("ablate.k_values entries must be >= 1");
  }
  if (ablate_seeds < 1) throw ConfigError("ablate.seeds must be >= 1");
  std::set<std::string> names;
  for (const auto& e : roster) {
    if (!names.insert(e.name).second) throw ConfigError("duplicate model name " + e.name);
  }
  if (by_role(*this, ModelRole::Surrogate).empty() || by_role(*this, ModelRole::Target).empty()) {
    throw ConfigError("roster needs at least one surrogate and one target");
  }
  if (!ablate_surrogate.empty() && !names.count(ablate_surrogate)) {
    throw ConfigError("ablate.surrogate names an unknown model: " + ablate_surrogate);
  }
  if (data.height % 4 != 0 || data.width % 4 != 0) {
    for (const auto& e : roster) {
      if (e.arch == Architecture::Conv2) throw ConfigError("conv2 models need height and width divisible by 4");
    }
  }
}

std::uint64_t RunConfig::data_seed() const { return derive_seed(seed, "data"); }
std::uint64_t RunConfig::train_seed(const std::string& model_name) const {
  return derive_seed(derive_seed(seed, "train"), model_name);
}
std::uint64_t RunConfig::attack_seed() const { return derive_seed(seed, "attack"); }
std::vector<std::uint64_t> RunConfig::ablation_seeds() const {
  std::vector<std::uint64_t> out;
  for (int i = 0; i < ablate_seeds; ++i) out.push_back(derive_seed(derive_seed(seed, "ablate"), static_cast<std::uint64_t>(i)));
  return out;
}

std::string RunConfig::dataset_path() const { return out_dir + "/dataset.gads"; }
std::string RunConfig::model_path(const std::string& name) const { return out_dir + "/models/" + name + ".gaom"; }
std::string RunConfig::mask_path(const std::string& surrogate, Method method, std::size_t identity) const {
  std::ostringstream os;
  os << out_dir << "/masks/" << surrogate << '/' << to_string(method) << "/identity_" << std::setw(4)
     << std::setfill('0') << identity << ".gapm";
  return os.str();
}
std::string RunConfig::report_path() const { return out_dir + "/report.csv"; }
std::string RunConfig::report_metadata_path() const { return out_dir + "/report_metadata.txt"; }
std::string RunConfig::k_sweep_path() const { return out_dir + "/ablation_k.csv"; }
std::string RunConfig::equal_budget_path() const { return out_dir + "/ablation_equal_budget.csv"; }

void cmd_gen_data(const RunConfig& cfg, std::ostream& log) {
  SyntheticParams p = cfg.data;
  p.seed = cfg.data_seed();
  const Dataset ds = gen_synthetic_identities(p);
  ds.save(cfg.dataset_path());
  log << "wrote " << cfg.dataset_path() << ": " << ds.num_identities() << " identities, " << ds.num_train_images()
      << " train / " << ds.num_test_images() << " test images of " << p.height << "x" << p.width << "x" << p.channels
      << "\n";
}

void cmd_train(const RunConfig& cfg, std::ostream& log) {
  require_file(cfg.dataset_path(), "dataset file");
  const Dataset ds = Dataset::load(cfg.dataset_path());
  for (const auto& e : cfg.roster) {
    const TrainResult r = train_classifier(ds, e.arch, e.loss, cfg.train, cfg.train_seed(e.name), cfg.feature_dim);
    r.model.save(cfg.model_path(e.name));
    log << std::fixed << std::setprecision(4) << e.name << " (" << to_string(e.arch) << "/" << to_string(e.loss)
        << "): train accuracy " << r.train_accuracy << ", test accuracy " << classification_accuracy(r.model, ds, true)
        << ", final loss " << r.final_loss << " -> " << cfg.model_path(e.name) << "\n";
    log.unsetf(std::ios::floatfield);
  }
}

void cmd_craft(const RunConfig& cfg, std::ostream& log) {
  require_file(cfg.dataset_path(), "dataset file");
  const Dataset ds = Dataset::load(cfg.dataset_path());
  const LoadedModels surrogates = load_models(cfg, ModelRole::Surrogate);
  AttackConfig attack = cfg.attack;
  attack.seed = cfg.attack_seed();
  log << "attack config: " << attack.canonical() << "\n";
  for (std::size_t s = 0; s < surrogates.models.size(); ++s) {
    const auto& [name, model] = surrogates.models[s];
    for (Method m : cfg.methods) {
      const auto masks = craft_all(m, model, ds, attack);
      for (const auto& mask : masks) {
        const auto path = cfg.mask_path(name, m, mask.identity_id);
        mask.save(path);
        // Load-time verification re-checks the budget on disk.
        (void)PrivacyMask::load(path);
      }
      log << name << "/" << to_string(m) << ": " << masks.size() << " masks\n";
    }
  }
}

void cmd_evaluate(const RunConfig& cfg, std::ostream& log) {
  require_file(cfg.dataset_path(), "dataset file");
  const Dataset ds = Dataset::load(cfg.dataset_path());
  const LoadedModels surrogates = load_models(cfg, ModelRole::Surrogate);
  const LoadedModels targets = load_models(cfg, ModelRole::Target);
  std::vector<NamedModel> target_list;
  for (std::size_t i = 0; i < targets.models.size(); ++i) target_list.push_back(targets.named(i));

  AttackConfig attack = cfg.attack;
  attack.seed = cfg.attack_seed();
  EvalReport report;
  report.metadata["attack"] = attack.canonical();
  report.metadata["dataset.gen_seed"] = std::to_string(ds.gen_seed);
  report.metadata["eval.gallery_policy"] = to_string(cfg.eval.gallery_policy);
  report.metadata["seed"] = std::to_string(cfg.seed);
  for (const auto& [name, m] : surrogates.models) report.metadata["model." + name] = m.fingerprint();
  for (const auto& [name, m] : targets.models) report.metadata["model." + name] = m.fingerprint();

  for (const auto& [name, model] : surrogates.models) {
    for (Method m : cfg.methods) {
      std::vector<PrivacyMask> masks;
      for (const auto& id : ds.identities) {
        const auto path = cfg.mask_path(name, m, id.identity_id);
        require_file(path, "mask file");
        PrivacyMask mask = PrivacyMask::load(path);
        AttackConfig per_identity = attack;
        per_identity.seed = derive_seed(attack.seed, id.identity_id);
        if (mask.config_fingerprint != attack_fingerprint(m, per_identity, model)) {
          throw ConfigError("mask " + path + " was crafted with a different config or surrogate; rerun craft");
        }
        masks.push_back(std::move(mask));
      }
      evaluate_masks(report, name, m, masks, target_list, ds, cfg.eval, attack.seed);
    }
  }
  report.write(cfg.report_path(), cfg.report_metadata_path());
  log << report.to_csv();
  log << "wrote " << cfg.report_path() << " and " << cfg.report_metadata_path() << "\n";
}

void cmd_ablate(const RunConfig& cfg, std::ostream& log) {
  require_file(cfg.dataset_path(), "dataset file");
  const Dataset ds = Dataset::load(cfg.dataset_path());
  const LoadedModels targets = load_models(cfg, ModelRole::Target);
  std::vector<NamedModel> target_list;
  for (std::size_t i = 0; i < targets.models.size(); ++i) target_list.push_back(targets.named(i));
  const std::string surrogate_name =
      cfg.ablate_surrogate.empty() ? by_role(cfg, ModelRole::Surrogate).front()->name : cfg.ablate_surrogate;
  require_file(cfg.model_path(surrogate_name), "model file");
  const EmbeddingModel surrogate = EmbeddingModel::load(cfg.model_path(surrogate_name));

  const auto seeds = cfg.ablation_seeds();
  const auto sweep = ablation_k_sweep(surrogate, ds, target_list, cfg.ablate_k_values, cfg.attack, seeds);
  write_text(cfg.k_sweep_path(), k_sweep_csv(sweep));
  const auto budget = equal_budget_comparison(surrogate, ds, target_list, cfg.attack, seeds);
  write_text(cfg.equal_budget_path(), equal_budget_csv(budget));
  log << "surrogate " << surrogate_name << "\n" << k_sweep_csv(sweep) << equal_budget_csv(budget);
  log << "wrote " << cfg.k_sweep_path() << " and " << cfg.equal_budget_path() << "\n";
}

int run_command(const std::string& name, const RunConfig& cfg, std::ostream& log, std::ostream& err) {
  static const std::map<std::string, std::function<void(const RunConfig&, std::ostream&)>> commands = {
      {"gen-data", cmd_gen_data}, {"train", cmd_train},     {"craft", cmd_craft},
      {"evaluate", cmd_evaluate}, {"ablate", cmd_ablate},
  };
  const auto it = commands.find(name);
  if (it == commands.end()) {
    err << "error: unknown subcommand '" << name << "'\n";
    return 1;
  }
  try {
    cfg.validate();
    it->second(cfg, log);
    return 0;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return 1;
  } catch (const IoError& e) {
    err << "I/O error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << name << " failed: " << e.what() << "\n";
    return 3;
  }
}

}  // namespace gaopom
