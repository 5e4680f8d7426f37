// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fail.
#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "gaopom/attack.hpp"
#include "gaopom/binary_io.hpp"
#include "gaopom/eval.hpp"
#include "gaopom/hull.hpp"
#include "gaopom/pipeline.hpp"

using namespace gaopom;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

int failures = 0;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

void report(const std::string& name, bool pass, const std::string& detail) {
  std::printf("%s  %-24s %s\n", pass ? "PASS" : "FAIL", name.c_str(), detail.c_str());
  std::fflush(stdout);
  if (!pass) ++failures;
}

std::string fmt(const char* f, double a, double b = 0, double c = 0, double d = 0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c, d);
  return buf;
}

Tensor random_unit(Rng& rng, std::size_t d) {
  Tensor t({d});
  for (auto& v : t.data()) v = rng.normal();
  t *= 1.0 / t.norm_l2();
  return t;
}

Tensor random_image(Rng& rng, const std::vector<std::size_t>& shape) {
  Tensor t(shape);
  for (auto& v : t.data()) v = rng.uniform(0.0, 255.0);
  return t;
}

double rel_error(const Tensor& a, const Tensor& b) { return (a - b).norm_l2() / std::max(b.norm_l2(), 1e-300); }

void sign_cancellation() {
  const auto t0 = Clock::now();
  const Tensor g_m = Tensor::vector({-0.01, 0.10, 0.25, 1.00});
  const Tensor g_next = Tensor::vector({1.00, 0.05, 0.10, -0.02});
  const bool ok = sign(g_m) + sign(g_next) == Tensor::vector({0, 2, 2, 0}) &&
                  sign(g_m + g_next) == Tensor::vector({1, 1, 1, 1});
  const double ms = seconds_since(t0) * 1e3;
  report("sign-cancellation", ok && ms < 1.0, fmt("per-step signs give [0,2,2,0], accumulated sign keeps 4/4 directions, %.3f ms", ms));
}

ModelSpec small_spec(Rng& rng, std::uint64_t seed) {
  ModelSpec s;
  s.arch = rng.uniform() < 0.5 ? Architecture::Mlp3 : Architecture::Conv2;
  s.loss = rng.uniform() < 0.5 ? LossKind::Softmax : LossKind::MarginCosine;
  s.height = 8;
  s.width = 8;
  s.channels = 2;
  s.hidden_a = s.arch == Architecture::Mlp3 ? 12 : 3;
  s.hidden_b = s.arch == Architecture::Mlp3 ? 10 : 4;
  s.feature_dim = 6;
  s.num_classes = 4;
  s.train_seed = seed;
  return s;
}

void gradient_checks() {
  const auto t0 = Clock::now();
  Rng rng(derive_seed(0, "acceptance-gradients"));
  double worst_input = 0.0, worst_dropout = 0.0, worst_param = 0.0;
  for (int c = 0; c < 10; ++c) {
    const EmbeddingModel m(small_spec(rng, 1000 + c));
    const Tensor x = random_image(rng, {8, 8, 2});
    const Tensor t = random_unit(rng, 6);
    const Tensor num = finite_diff_grad([&](const Tensor& xx) { return m.distance_loss(xx, t); }, x, 1e-5);
    worst_input = std::max(worst_input, rel_error(m.input_gradient(x, t), num));
  }
  for (int c = 0; c < 10; ++c) {
    const EmbeddingModel m(small_spec(rng, 2000 + c));
    DropoutMasks masks;
    for (auto n : m.dropout_sites()) {
      std::vector<double> mk(n);
      for (auto& v : mk) v = rng.uniform() < 0.2 ? 0.0 : 1.25;
      masks.push_back(std::move(mk));
    }
    const Tensor x = random_image(rng, {8, 8, 2});
    const Tensor t = random_unit(rng, 6);
    const auto loss = [&](const Tensor& xx) { return norm_l2((m.forward(xx, masks).feature - t).data()); };
    worst_dropout = std::max(worst_dropout, rel_error(m.distance_gradient(m.forward(x, masks), t).gradient,
                                                      finite_diff_grad(loss, x, 1e-5)));
  }
  const TrainConfig cfg;
  for (int c = 0; c < 10; ++c) {
    EmbeddingModel m(small_spec(rng, 3000 + c));
    const Tensor x = random_image(rng, {8, 8, 2});
    const std::size_t label = rng.index(4);
    std::vector<double> grad(m.parameters().size(), 0.0);
    m.accumulate_training_gradient(x, label, cfg, grad);
    const auto eval = [&] {
      std::vector<double> scratch(m.parameters().size(), 0.0);
      return m.accumulate_training_gradient(x, label, cfg, scratch);
    };
    Tensor a({60}), n({60});
    for (std::size_t k = 0; k < 60; ++k) {
      const std::size_t i = rng.index(grad.size());
      double& p = m.mutable_parameters()[i];
      const double orig = p;
      p = orig + 1e-5;
      const double fp = eval();
      p = orig - 1e-5;
      const double fm = eval();
      p = orig;
      a[k] = grad[i];
      n[k] = (fp - fm) / 2e-5;
    }
    worst_param = std::max(worst_param, rel_error(a, n));
  }
  const double s = seconds_since(t0);
  report("gradient-correctness", std::max({worst_input, worst_dropout, worst_param}) < 1e-4 && s < 30,
         fmt("max rel err input %.2e, dropout %.2e, parameters %.2e; %.1f s", worst_input, worst_dropout, worst_param,
             s));
}

void hull_oracle() {
  const auto t0 = Clock::now();
  Rng rng(derive_seed(0, "acceptance-hull"));
  double worst_gap = 0.0;
  for (int c = 0; c < 50; ++c) {
    FeatureMatrix fm;
    for (int i = 0; i < 3; ++i) fm.columns.push_back(random_unit(rng, 4));
    Tensor q = random_unit(rng, 4);
    q *= rng.uniform(0.2, 1.5);
    const HullSolution s = solve_hull(fm, q);
    double best = 1e300;
    const int steps = 1000;
    for (int i = 0; i <= steps; ++i)
      for (int j = 0; i + j <= steps; ++j) {
        const double a[3] = {i * 1e-3, j * 1e-3, (steps - i - j) * 1e-3};
        best = std::min(best, norm_l2((hull_point(fm, a) - q).data()));
      }
    worst_gap = std::max(worst_gap, std::abs(s.residual - best));
  }
  int dominance_violations = 0;
  for (int c = 0; c < 500; ++c) {
    FeatureMatrix fm;
    const std::size_t n = 1 + rng.index(8);
    for (std::size_t i = 0; i < n; ++i) fm.columns.push_back(random_unit(rng, 8));
    const Tensor q = random_unit(rng, 8);
    const HullSolution s = solve_hull(fm, q);
    for (const auto& col : fm.columns) dominance_violations += s.residual > norm_l2((col - q).data()) + 1e-12;
  }
  const double s = seconds_since(t0);
  report("hull-oracle", worst_gap <= 1e-4 && dominance_violations == 0 && s < 60,
         fmt("max |residual - grid| %.2e over 50 cases, %.0f dominance violations in 500, %.1f s", worst_gap,
             dominance_violations, s));
}

void simplex_projection() {
  const auto t0 = Clock::now();
  Rng rng(derive_seed(0, "acceptance-simplex"));
  int infeasible = 0, beaten = 0;
  for (int c = 0; c < 100; ++c) {
    const std::size_t n = 2 + rng.index(9);
    std::vector<double> v(n);
    for (auto& x : v) x = rng.normal() * 2.0;
    const auto p = project_simplex(v);
    double sum = 0.0;
    for (double a : p) {
      infeasible += a < 0.0 || a > 1.0;
      sum += a;
    }
    infeasible += std::abs(sum - 1.0) > 1e-12;
    double dp = 0.0;
    for (std::size_t i = 0; i < n; ++i) dp += (p[i] - v[i]) * (p[i] - v[i]);
    for (int k = 0; k < 1000; ++k) {
      // Uniform point on the simplex via normalized exponentials.
      std::vector<double> r(n);
      double tot = 0.0;
      for (auto& x : r) tot += (x = -std::log(1.0 - rng.uniform()));
      double dr = 0.0;
      for (std::size_t i = 0; i < n; ++i) dr += (r[i] / tot - v[i]) * (r[i] / tot - v[i]);
      beaten += dr < dp - 1e-12;
    }
  }
  const double s = seconds_since(t0);
  report("simplex-projection", infeasible == 0 && beaten == 0 && s < 10,
         fmt("%.0f infeasible, %.0f random points closer, 100 cases, %.2f s", infeasible, beaten, s));
}

void budget_invariants(const EmbeddingModel& surrogate, const Dataset& ds, const AttackConfig& cfg) {
  int violations = 0, count_mismatch = 0, runs = 0;
  for (Method m : {Method::GaOpom, Method::GaFiUap, Method::Opom, Method::FiUap}) {
    for (const auto& id : ds.identities) {
      AttackConfig c = cfg;
      c.seed = derive_seed(cfg.seed, id.identity_id);
      AttackTrace trace;
      const PrivacyMask mask = craft(m, surrogate, id.train_images, c, &trace);
      for (const auto& d : trace.outer_iterates) violations += !(d.norm_inf() <= c.epsilon);
      violations += !(mask.delta.norm_inf() <= c.epsilon);
      count_mismatch += trace.outer_sign_count != c.outer_steps ||
                        trace.outer_iterates.size() != static_cast<std::size_t>(c.outer_steps);
      ++runs;
    }
  }
  report("budget-and-sign-count", violations == 0 && count_mismatch == 0,
         fmt("%.0f crafting runs, %.0f budget violations, %.0f sign-count mismatches (expected N_max = %.0f)", runs,
             violations, count_mismatch, cfg.outer_steps));
}

bool same_tree(const fs::path& a, const fs::path& b, std::size_t& files) {
  std::map<std::string, std::vector<std::uint8_t>> left, right;
  for (const auto& e : fs::recursive_directory_iterator(a))
    if (e.is_regular_file()) left[fs::relative(e.path(), a).string()] = io::read_file(e.path().string());
  for (const auto& e : fs::recursive_directory_iterator(b))
    if (e.is_regular_file()) right[fs::relative(e.path(), b).string()] = io::read_file(e.path().string());
  files = left.size();
  return left == right;
}

bool run_stages(RunConfig cfg, const fs::path& dir, const std::vector<std::string>& stages) {
  cfg.out_dir = dir.string();
  std::ostringstream log, err;
  for (const auto& s : stages)
    if (run_command(s, cfg, log, err) != 0) {
      std::printf("  stage %s failed: %s\n", s.c_str(), err.str().c_str());
      return false;
    }
  return true;
}

}  // namespace

int main() {
  const auto start = Clock::now();
  const fs::path root = fs::temp_directory_path() / "gaopom_acceptance";
  fs::remove_all(root);

  sign_cancellation();
  gradient_checks();
  hull_oracle();
  simplex_projection();

  // Toy-scale setup: default configuration, global seed 0.
  RunConfig cfg;
  const fs::path base = root / "a";
  if (!run_stages(cfg, base, {"gen-data", "train"})) {
    report("setup", false, "pipeline setup failed");
    return 1;
  }
  cfg.out_dir = base.string();
  const Dataset ds = Dataset::load(cfg.dataset_path());
  std::vector<std::pair<std::string, EmbeddingModel>> surrogates, targets;
  for (const auto& e : cfg.roster)
    (e.role == ModelRole::Surrogate ? surrogates : targets).emplace_back(e.name, EmbeddingModel::load(cfg.model_path(e.name)));
  std::vector<NamedModel> s_named, t_named;
  for (auto& [n, m] : surrogates) s_named.push_back({n, &m});
  for (auto& [n, m] : targets) t_named.push_back({n, &m});
  AttackConfig attack = cfg.attack;
  attack.seed = cfg.attack_seed();

  budget_invariants(*s_named.front().model, ds, attack);

  const auto seeds = cfg.ablation_seeds();
  const auto t_table = Clock::now();
  const EvalReport table = transfer_matrix(s_named, cfg.methods, t_named, ds, attack, cfg.eval, seeds);
  const double table_s = seconds_since(t_table);
  std::map<std::string, double> mean_top1;
  for (const auto& s : s_named) {
    for (Method m : cfg.methods) {
      const double v = table.average(s.name, to_string(m)).first;
      mean_top1[to_string(m)] += v / static_cast<double>(s_named.size());
      std::printf("  table  %-16s %-10s top1 %.2f\n", s.name.c_str(), to_string(m).c_str(), v);
    }
  }
  const double d_opom = mean_top1["ga-opom"] - mean_top1["opom"];
  const double d_fi = mean_top1["ga-fi-uap"] - mean_top1["fi-uap"];
  report("table1-directional", d_opom > 0 && d_fi > 0 && table_s < 600,
         fmt("GA-OPOM %.2f vs OPOM %.2f; GA-FI-UAP %.2f vs FI-UAP %.2f", mean_top1["ga-opom"], mean_top1["opom"],
             mean_top1["ga-fi-uap"], mean_top1["fi-uap"]) +
             fmt(" (mean Top-1 over 2 surrogates x 2 targets x 5 seeds, %.0f s)", table_s));
  std::printf("  info   OPOM - FI-UAP = %.2f points\n", mean_top1["opom"] - mean_top1["fi-uap"]);

  int bad_cells = 0;
  for (const auto& r : table.rows) bad_cells += r.top1 < r.top5;
  report("top1-ge-top5", bad_cells == 0 && !table.rows.empty(),
         fmt("%.0f report cells, %.0f with Top-1 < Top-5", table.rows.size(), bad_cells));

  double ga = 0.0, opom = 0.0;
  std::map<int, double> k_mean;
  for (const auto& s : s_named) {
    const auto eb = equal_budget_comparison(*s.model, ds, t_named, attack, seeds);
    for (const auto& r : eb) {
      (r.method == "ga-opom" ? ga : opom) += r.mean_top1 / static_cast<double>(s_named.size());
      std::printf("  budget %-16s %-10s steps %3d grads %5ld top1 %.2f +- %.2f\n", s.name.c_str(), r.method.c_str(),
                  r.outer_steps, r.gradient_evaluations, r.mean_top1, r.stddev_top1);
    }
    const auto ks = ablation_k_sweep(*s.model, ds, t_named, cfg.ablate_k_values, attack, seeds);
    for (const auto& r : ks) {
      k_mean[r.k] += r.mean_top1 / static_cast<double>(s_named.size());
      std::printf("  k-sweep %-15s K=%d top1 %.2f +- %.2f\n", s.name.c_str(), r.k, r.mean_top1, r.stddev_top1);
    }
  }
  report("equal-budget", ga >= opom, fmt("GA-OPOM %.2f vs OPOM(N_max*K outer steps) %.2f mean Top-1", ga, opom));
  double k_max = 0.0;
  for (const auto& [k, v] : k_mean) k_max = std::max(k_max, v);
  report("k-sweep", k_mean.count(4) && k_max - k_mean[4] <= 2.0,
         fmt("K=1 %.2f, K=2 %.2f, K=4 %.2f, K=8 %.2f", k_mean[1], k_mean[2], k_mean[4], k_mean[8]));

  // Every stage twice in separate directories, then once more in place.
  RunConfig small = cfg;
  small.attack.outer_steps = 4;
  small.attack.inner_multiplier = 2;
  small.ablate_k_values = {1, 2};
  small.ablate_seeds = 2;
  const std::vector<std::string> stages = {"gen-data", "train", "craft", "evaluate", "ablate"};
  bool det = run_stages(small, root / "d1", stages) && run_stages(small, root / "d2", stages);
  std::size_t files = 0;
  det = det && same_tree(root / "d1", root / "d2", files);
  std::size_t files_again = 0;
  det = det && run_stages(small, root / "d2", stages) && same_tree(root / "d1", root / "d2", files_again);
  report("determinism", det && files > 0, fmt("%.0f artifacts byte-identical across 3 runs of every stage", files));

  fs::remove_all(root);
  std::printf("%s  total %.0f s\n", failures == 0 ? "ALL PASS" : "FAILURES", seconds_since(start));
  return failures == 0 ? 0 : 1;
}
