#include "gaopom/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "gaopom/binary_io.hpp"
#include "gaopom/error.hpp"

namespace gaopom {

namespace {

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

std::pair<double, double> mean_stddev(const std::vector<double>& xs) {
  if (xs.empty()) return {0.0, 0.0};
  const double mean = std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
  if (xs.size() < 2) return {mean, 0.0};
  double ss = 0.0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  return {mean, std::sqrt(ss / static_cast<double>(xs.size() - 1))};
}

// Mean Top-1 protection over targets, one value per seed.
std::vector<double> per_seed_top1(Method method, const EmbeddingModel& surrogate, const Dataset& ds,
                                  const std::vector<NamedModel>& targets, const std::vector<Gallery>& galleries,
                                  AttackConfig cfg, const std::vector<std::uint64_t>& seeds) {
  std::vector<double> out;
  for (auto seed : seeds) {
    cfg.seed = seed;
    const auto masks = craft_all(method, surrogate, ds, cfg);
    double sum = 0.0;
    for (std::size_t t = 0; t < targets.size(); ++t) {
      sum += protection_rate(masks, ds, *targets[t].model, galleries[t], 1);
    }
    out.push_back(sum / static_cast<double>(targets.size()));
  }
  return out;
}

std::vector<Gallery> galleries_for(const std::vector<NamedModel>& targets, const Dataset& ds) {
  std::vector<Gallery> g;
  for (const auto& t : targets) g.push_back(build_gallery(*t.model, ds, GalleryPolicy::PerImage));
  return g;
}

}  // namespace

std::string to_string(GalleryPolicy p) { return p == GalleryPolicy::PerImage ? "per-image" : "identity-mean"; }

GalleryPolicy parse_gallery_policy(const std::string& s) {
  if (s == "per-image") return GalleryPolicy::PerImage;
  if (s == "identity-mean") return GalleryPolicy::IdentityMean;
  throw InvalidArgument("unknown gallery policy '" + s + "'");
}

void EvalConfig::validate(std::size_t num_identities) const {
  if (top_k_list.empty()) throw InvalidArgument("top_k_list must not be empty");
  for (auto k : top_k_list) {
    if (k < 1 || k > num_identities) throw InvalidArgument("top-k value out of range: " + std::to_string(k));
  }
}

Gallery build_gallery(const EmbeddingModel& model, const Dataset& ds, GalleryPolicy policy) {
  if (ds.identities.empty()) throw InvalidArgument("build_gallery: empty dataset");
  Gallery g;
  g.num_identities = ds.identities.size();
  for (const auto& id : ds.identities) {
    if (policy == GalleryPolicy::PerImage) {
      for (const auto& img : id.train_images) {
        g.identity_ids.push_back(id.identity_id);
        g.features.push_back(model.embed(img));
      }
    } else {
      Tensor mean({model.feature_dim()});
      for (const auto& img : id.train_images) mean += model.embed(img);
      mean *= 1.0 / mean.norm_l2();
      g.identity_ids.push_back(id.identity_id);
      g.features.push_back(std::move(mean));
    }
  }
  return g;
}

std::vector<std::size_t> identify(const Gallery& gallery, const Tensor& probe, std::size_t k) {
  if (gallery.features.empty() || gallery.num_identities == 0) throw InvalidArgument("identify: empty gallery");
  if (k < 1 || k > gallery.num_identities) throw InvalidArgument("identify: k out of range");
  std::vector<double> best(gallery.num_identities, -INFINITY);
  for (std::size_t i = 0; i < gallery.features.size(); ++i) {
    const double s = dot(gallery.features[i].data(), probe.data());
    auto& b = best.at(gallery.identity_ids[i]);
    b = std::max(b, s);
  }
  std::vector<std::size_t> order(best.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return best[a] > best[b]; });
  order.resize(k);
  return order;
}

std::vector<double> protection_rates(const std::vector<PrivacyMask>& masks, const Dataset& ds,
                                     const EmbeddingModel& target, const Gallery& gallery,
                                     const std::vector<std::size_t>& ks) {
  if (ks.empty()) throw InvalidArgument("protection_rates: no k values");
  const std::size_t kmax = *std::max_element(ks.begin(), ks.end());
  std::vector<std::size_t> escaped(ks.size(), 0);
  std::size_t probes = 0;
  for (const auto& id : ds.identities) {
    if (id.identity_id >= masks.size()) {
      throw InvalidArgument("missing mask for identity " + std::to_string(id.identity_id));
    }
    const PrivacyMask& mask = masks[id.identity_id];
    if (mask.identity_id != id.identity_id) {
      throw InvalidArgument("mask list out of order at identity " + std::to_string(id.identity_id));
    }
    if (id.test_images.empty()) throw InvalidArgument("identity without test images");
    for (const auto& img : id.test_images) {
      const auto ranked = identify(gallery, target.embed(apply_mask(img, mask)), kmax);
      const auto pos = static_cast<std::size_t>(std::find(ranked.begin(), ranked.end(), id.identity_id) - ranked.begin());
      for (std::size_t j = 0; j < ks.size(); ++j) {
        if (pos >= ks[j]) ++escaped[j];
      }
      ++probes;
    }
  }
  std::vector<double> rates(ks.size());
  for (std::size_t j = 0; j < ks.size(); ++j) {
    rates[j] = 100.0 * static_cast<double>(escaped[j]) / static_cast<double>(probes);
  }
  return rates;
}

double protection_rate(const std::vector<PrivacyMask>& masks, const Dataset& ds, const EmbeddingModel& target,
                       const Gallery& gallery, std::size_t k) {
  return protection_rates(masks, ds, target, gallery, {k}).front();
}

std::pair<double, double> EvalReport::average(const std::string& surrogate, const std::string& method) const {
  double t1 = 0.0, t5 = 0.0;
  std::size_t n = 0;
  for (const auto& r : rows) {
    if (r.surrogate == surrogate && r.method == method) {
      t1 += r.top1;
      t5 += r.top5;
      ++n;
    }
  }
  if (n == 0) throw InvalidArgument("no report rows for " + surrogate + "/" + method);
  return {t1 / static_cast<double>(n), t5 / static_cast<double>(n)};
}

std::string EvalReport::to_csv() const {
  std::ostringstream os;
  os << "surrogate,method,target,top1_protection,top5_protection,seed\n";
  for (const auto& r : rows) {
    os << r.surrogate << ',' << r.method << ',' << r.target << ',' << fmt(r.top1) << ',' << fmt(r.top5) << ','
       << r.seed << '\n';
  }
  return os.str();
}

std::string EvalReport::metadata_text() const {
  std::map<std::string, std::string> all = metadata;
  std::map<std::pair<std::string, std::string>, bool> seen;
  for (const auto& r : rows) {
    if (seen.emplace(std::make_pair(r.surrogate, r.method), true).second) {
      const auto [t1, t5] = average(r.surrogate, r.method);
      all["average." + r.surrogate + "." + r.method + ".top1"] = fmt(t1);
      all["average." + r.surrogate + "." + r.method + ".top5"] = fmt(t5);
    }
  }
  std::ostringstream os;
  for (const auto& [k, v] : all) os << k << " = " << v << '\n';
  return os.str();
}

void EvalReport::write(const std::string& csv_path, const std::string& metadata_path) const {
  const auto csv = to_csv();
  const auto meta = metadata_text();
  io::write_file(csv_path, {csv.begin(), csv.end()});
  io::write_file(metadata_path, {meta.begin(), meta.end()});
}

void evaluate_masks(EvalReport& report, const std::string& surrogate_name, Method method,
                    const std::vector<PrivacyMask>& masks, const std::vector<NamedModel>& targets, const Dataset& ds,
                    const EvalConfig& eval_cfg, std::uint64_t seed) {
  eval_cfg.validate(ds.num_identities());
  // Report columns are Top-1 and Top-5; clamp 5 for tiny galleries.
  const std::vector<std::size_t> ks = {1, std::min<std::size_t>(5, ds.num_identities())};
  for (const auto& t : targets) {
    const Gallery g = build_gallery(*t.model, ds, eval_cfg.gallery_policy);
    const auto rates = protection_rates(masks, ds, *t.model, g, ks);
    report.rows.push_back({surrogate_name, to_string(method), t.name, rates[0], rates[1], seed});
  }
}

EvalReport transfer_matrix(const std::vector<NamedModel>& surrogates, const std::vector<Method>& methods,
                           const std::vector<NamedModel>& targets, const Dataset& ds, const AttackConfig& attack_cfg,
                           const EvalConfig& eval_cfg, const std::vector<std::uint64_t>& seeds) {
  if (surrogates.empty() || methods.empty() || targets.empty() || seeds.empty()) {
    throw InvalidArgument("transfer_matrix: surrogates, methods, targets and seeds must be nonempty");
  }
  EvalReport report;
  report.metadata["attack"] = attack_cfg.canonical();
  report.metadata["gallery_policy"] = to_string(eval_cfg.gallery_policy);
  report.metadata["dataset.gen_seed"] = std::to_string(ds.gen_seed);
  std::string seed_list;
  for (auto s : seeds) seed_list += (seed_list.empty() ? "" : " ") + std::to_string(s);
  report.metadata["seeds"] = seed_list;
  for (const auto& s : surrogates) {
    report.metadata["model." + s.name] = s.model->fingerprint();
  }
  for (const auto& t : targets) report.metadata["model." + t.name] = t.model->fingerprint();

  for (const auto& s : surrogates) {
    for (Method m : methods) {
      for (auto seed : seeds) {
        AttackConfig cfg = attack_cfg;
        cfg.seed = seed;
        const auto masks = craft_all(m, *s.model, ds, cfg);
        evaluate_masks(report, s.name, m, masks, targets, ds, eval_cfg, seed);
      }
    }
  }
  return report;
}

std::vector<KSweepRow> ablation_k_sweep(const EmbeddingModel& surrogate, const Dataset& ds,
                                        const std::vector<NamedModel>& targets, const std::vector<int>& k_values,
                                        const AttackConfig& cfg, const std::vector<std::uint64_t>& seeds,
                                        Method method) {
  if (k_values.empty()) throw InvalidArgument("ablation_k_sweep: no K values");
  if (targets.empty() || seeds.empty()) throw InvalidArgument("ablation_k_sweep: need targets and seeds");
  const auto galleries = galleries_for(targets, ds);
  const long n_k = static_cast<long>(ds.identities.front().train_images.size());
  std::vector<KSweepRow> rows;
  for (int k : k_values) {
    AttackConfig c = cfg;
    c.inner_multiplier = k;
    const auto [mean, sd] = mean_stddev(per_seed_top1(method, surrogate, ds, targets, galleries, c, seeds));
    rows.push_back({k, mean, sd, seeds.size(), static_cast<long>(k) * n_k * cfg.outer_steps});
  }
  return rows;
}

std::string k_sweep_csv(const std::vector<KSweepRow>& rows) {
  std::ostringstream os;
  os << "K,mean_top1,stddev_top1,n_seeds\n";
  for (const auto& r : rows) os << r.k << ',' << fmt(r.mean_top1) << ',' << fmt(r.stddev_top1) << ',' << r.n_seeds << '\n';
  return os.str();
}

std::vector<EqualBudgetRow> equal_budget_comparison(const EmbeddingModel& surrogate, const Dataset& ds,
                                                    const std::vector<NamedModel>& targets, const AttackConfig& cfg,
                                                    const std::vector<std::uint64_t>& seeds) {
  if (targets.empty() || seeds.empty()) throw InvalidArgument("equal_budget_comparison: need targets and seeds");
  const auto galleries = galleries_for(targets, ds);
  const long n_k = static_cast<long>(ds.identities.front().train_images.size());
  const long budget = static_cast<long>(cfg.outer_steps) * cfg.inner_multiplier * n_k;

  std::vector<EqualBudgetRow> rows;
  {
    const auto [mean, sd] = mean_stddev(per_seed_top1(Method::GaOpom, surrogate, ds, targets, galleries, cfg, seeds));
    rows.push_back({to_string(Method::GaOpom), cfg.outer_steps, budget, mean, sd, seeds.size()});
  }
  {
    AttackConfig c = cfg;
    c.outer_steps = cfg.outer_steps * cfg.inner_multiplier;
    const auto [mean, sd] = mean_stddev(per_seed_top1(Method::Opom, surrogate, ds, targets, galleries, c, seeds));
    rows.push_back({to_string(Method::Opom), c.outer_steps, budget, mean, sd, seeds.size()});
  }
  return rows;
}

std::string equal_budget_csv(const std::vector<EqualBudgetRow>& rows) {
  std::ostringstream os;
  os << "method,outer_steps,gradient_evaluations,mean_top1,stddev_top1,n_seeds\n";
  for (const auto& r : rows) {
    os << r.method << ',' << r.outer_steps << ',' << r.gradient_evaluations << ',' << fmt(r.mean_top1) << ','
       << fmt(r.stddev_top1) << ',' << r.n_seeds << '\n';
  }
  return os.str();
}

}  // namespace gaopom
