#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "gaopom/attack.hpp"
#include "gaopom/data.hpp"
#include "gaopom/model.hpp"

namespace gaopom {

enum class GalleryPolicy { PerImage, IdentityMean };

std::string to_string(GalleryPolicy p);
GalleryPolicy parse_gallery_policy(const std::string& s);

struct EvalConfig {
  std::vector<std::size_t> top_k_list = {1, 5};
  GalleryPolicy gallery_policy = GalleryPolicy::PerImage;
  // Verification-mode distance threshold; unused by identification.
  std::optional<double> threshold_t;

  void validate(std::size_t num_identities) const;
};

// Clean training features of every identity, as seen by one model.
struct Gallery {
  std::vector<std::size_t> identity_ids;  // parallel to features
  std::vector<Tensor> features;
  std::size_t num_identities = 0;
};

Gallery build_gallery(const EmbeddingModel& model, const Dataset& ds, GalleryPolicy policy);

// Identities ranked by their best cosine similarity to `probe`, ties broken by
// ascending id; the top-k prefix.
std::vector<std::size_t> identify(const Gallery& gallery, const Tensor& probe, std::size_t k);

// Percent of protected test images whose true identity is not in the top-k.
// `masks` is indexed by identity id.
double protection_rate(const std::vector<PrivacyMask>& masks, const Dataset& ds, const EmbeddingModel& target,
                       const Gallery& gallery, std::size_t k);

// Same as protection_rate for several k at once, embedding each probe only once.
std::vector<double> protection_rates(const std::vector<PrivacyMask>& masks, const Dataset& ds,
                                     const EmbeddingModel& target, const Gallery& gallery,
                                     const std::vector<std::size_t>& ks);

struct NamedModel {
  std::string name;
  const EmbeddingModel* model = nullptr;
};

struct ReportRow {
  std::string surrogate;
  std::string method;
  std::string target;
  double top1 = 0.0;
  double top5 = 0.0;
  std::uint64_t seed = 0;
};

struct EvalReport {
  std::vector<ReportRow> rows;
  std::map<std::string, std::string> metadata;

  // Mean (top1, top5) over targets and seeds for one surrogate/method row.
  std::pair<double, double> average(const std::string& surrogate, const std::string& method) const;

  std::string to_csv() const;
  std::string metadata_text() const;
  void write(const std::string& csv_path, const std::string& metadata_path) const;
};

// Masks for one (surrogate, method, seed), evaluated against every target.
void evaluate_masks(EvalReport& report, const std::string& surrogate_name, Method method,
                    const std::vector<PrivacyMask>& masks, const std::vector<NamedModel>& targets, const Dataset& ds,
                    const EvalConfig& eval_cfg, std::uint64_t seed);

EvalReport transfer_matrix(const std::vector<NamedModel>& surrogates, const std::vector<Method>& methods,
                           const std::vector<NamedModel>& targets, const Dataset& ds, const AttackConfig& attack_cfg,
                           const EvalConfig& eval_cfg, const std::vector<std::uint64_t>& seeds);

struct KSweepRow {
  int k = 0;
  double mean_top1 = 0.0;
  double stddev_top1 = 0.0;
  std::size_t n_seeds = 0;
  long gradient_evaluations = 0;  // per identity, K * n_k * N_max
};

// GA-OPOM Top-1 protection against `targets` for each inner multiplier K.
// mean/stddev are taken over per-seed averages across targets.
std::vector<KSweepRow> ablation_k_sweep(const EmbeddingModel& surrogate, const Dataset& ds,
                                        const std::vector<NamedModel>& targets, const std::vector<int>& k_values,
                                        const AttackConfig& cfg, const std::vector<std::uint64_t>& seeds,
                                        Method method = Method::GaOpom);
std::string k_sweep_csv(const std::vector<KSweepRow>& rows);

struct EqualBudgetRow {
  std::string method;
  int outer_steps = 0;
  long gradient_evaluations = 0;  // per identity
  double mean_top1 = 0.0;
  double stddev_top1 = 0.0;
  std::size_t n_seeds = 0;
};

// GA-OPOM at `cfg` against OPOM granted N_max * K outer steps, so both spend
// N_max * K * n_k gradient evaluations per identity.
std::vector<EqualBudgetRow> equal_budget_comparison(const EmbeddingModel& surrogate, const Dataset& ds,
                                                    const std::vector<NamedModel>& targets, const AttackConfig& cfg,
                                                    const std::vector<std::uint64_t>& seeds);
std::string equal_budget_csv(const std::vector<EqualBudgetRow>& rows);

}  // namespace gaopom
