#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gaopom/hash.hpp"
#include "gaopom/model.hpp"
#include "gaopom/numerics.hpp"

namespace gaopom {

struct Dataset;

enum class Method { FiUap, Opom, GaFiUap, GaOpom };

std::string to_string(Method m);
Method parse_method(const std::string& s);
bool is_gradient_accumulation(Method m);
bool uses_convex_hull(Method m);

struct AttackConfig {
  double epsilon = 8.0;          // l_inf budget, 0..255 pixel units
  int outer_steps = 16;          // N_max
  int inner_multiplier = 4;      // K, inner iterations M = K * n_k
  double outer_step_size = 1.0;
  double inner_step_size = 1.0;  // 0 turns the inner pre-search off
  double momentum_mu = 0.0;      // 0 disables momentum
  double dropout_p = 0.0;        // 0 disables surrogate dropout
  std::uint64_t seed = 0;

  void validate() const;
  // Stable text form; hashed into mask fingerprints.
  std::string canonical() const;
};

struct PrivacyMask {
  Tensor delta;
  std::size_t identity_id = 0;
  double epsilon = 0.0;
  Digest config_fingerprint{};

  std::vector<std::uint8_t> serialize() const;
  static PrivacyMask deserialize(const std::vector<std::uint8_t>& bytes);
  void save(const std::string& path) const;
  // Rejects files whose delta exceeds the recorded budget.
  static PrivacyMask load(const std::string& path);
};

Digest attack_fingerprint(Method method, const AttackConfig& cfg, const EmbeddingModel& surrogate);

// Optional instrumentation filled in by the crafting routines.
struct AttackTrace {
  bool record_inner_gradients = false;
  bool record_losses = false;

  std::vector<Tensor> outer_iterates;                 // Delta after each outer step
  std::vector<Tensor> outer_directions;               // g_accum (or mean gradient) per outer step
  std::vector<std::vector<Tensor>> inner_gradients;   // per outer step, when requested
  std::vector<double> mean_losses;                    // [0] at Delta_0, then after each step
  int outer_sign_count = 0;
  int gradient_evaluations = 0;
};

// GA-OPOM (convex-hull targets) with inner sign pre-search and one outer
// sign update of the accumulated raw gradients per outer step.
PrivacyMask craft_ga_opom(const EmbeddingModel& model, const std::vector<Tensor>& train_images,
                          const AttackConfig& cfg, AttackTrace* trace = nullptr);
// Same loop with each sampled image's own clean feature as the target.
PrivacyMask craft_ga_fi_uap(const EmbeddingModel& model, const std::vector<Tensor>& train_images,
                            const AttackConfig& cfg, AttackTrace* trace = nullptr);
// Full-batch baselines: one sign step per outer iteration on the mean gradient
// over all training images.
PrivacyMask craft_opom(const EmbeddingModel& model, const std::vector<Tensor>& train_images, const AttackConfig& cfg,
                       AttackTrace* trace = nullptr);
PrivacyMask craft_fi_uap(const EmbeddingModel& model, const std::vector<Tensor>& train_images,
                         const AttackConfig& cfg, AttackTrace* trace = nullptr);

PrivacyMask craft(Method method, const EmbeddingModel& model, const std::vector<Tensor>& train_images,
                  const AttackConfig& cfg, AttackTrace* trace = nullptr);

// One mask per identity of `ds`; identity k crafts with seed derive_seed(cfg.seed, k).
std::vector<PrivacyMask> craft_all(Method method, const EmbeddingModel& model, const Dataset& ds,
                                   const AttackConfig& cfg);

// state <- mu * state + g / ||g||_1. An empty state counts as zero.
Tensor momentum_fold(const Tensor& state, const Tensor& g, double mu);

// x + delta clamped to [0, 255].
Tensor apply_mask(const Tensor& image, const PrivacyMask& mask);
Tensor apply_delta(const Tensor& image, const Tensor& delta);

// Mean attack loss over `images` under `delta`: distance of each protected
// feature to its hull-closest point (hull methods) or to its clean feature.
double mean_attack_loss(const EmbeddingModel& model, const std::vector<Tensor>& images, const Tensor& delta,
                        bool convex_hull);

}  // namespace gaopom
