#include "gaopom/hull.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "gaopom/error.hpp"

namespace gaopom {

void FeatureMatrix::validate() const {
  if (columns.empty()) throw InvalidArgument("feature matrix has no columns");
  const std::size_t d = columns.front().size();
  for (const auto& c : columns) {
    if (c.size() != d) throw InvalidArgument("feature matrix columns differ in dimension");
    if (std::abs(c.norm_l2() - 1.0) > 1e-9) throw InvalidArgument("feature matrix column is not unit norm");
  }
}

Tensor hull_point(const FeatureMatrix& features, std::span<const double> alpha) {
  if (features.columns.empty()) throw InvalidArgument("hull_point: empty feature matrix");
  if (alpha.size() != features.size()) {
    throw InvalidArgument("hull_point: alpha has " + std::to_string(alpha.size()) + " entries for " +
                          std::to_string(features.size()) + " columns");
  }
  Tensor out({features.dim()});
  for (std::size_t i = 0; i < alpha.size(); ++i) {
    const auto& col = features.columns[i];
    if (col.size() != out.size()) throw InvalidArgument("hull_point: column dimension mismatch");
    for (std::size_t j = 0; j < out.size(); ++j) out[j] += alpha[i] * col[j];
  }
  return out;
}

HullSolver::HullSolver(FeatureMatrix features, SimplexBounds bounds, HullSolverOptions options)
    : features_(std::move(features)), bounds_(bounds), options_(options) {
  features_.validate();
  const std::size_t n = features_.size();
  if (!bounds_.feasible_for(n)) throw InvalidArgument("hull bounds infeasible for " + std::to_string(n) + " columns");
  gram_.assign(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i; j < n; ++j) {
      const double g = dot(features_.columns[i].data(), features_.columns[j].data());
      gram_[i * n + j] = gram_[j * n + i] = g;
    }
  }
  // Power iteration for the top eigenvalue of the Gram matrix. A uniform start
  // can be an eigenvector of a smaller eigenvalue (n = 2, negative
  // correlation), so start from an uneven deterministic vector.
  std::vector<double> v(n), w(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = 1.0 + 0.5 * std::sin(1.0 + 2.0 * static_cast<double>(i));
  double lambda = 0.0;
  for (int it = 0; it < options_.power_iterations; ++it) {
    const double nv = norm_l2(v);
    for (auto& x : v) x /= nv;
    for (std::size_t i = 0; i < n; ++i) w[i] = dot({gram_.data() + i * n, n}, v);
    lambda = dot(v, w);
    if (norm_l2(w) == 0.0) break;
    v.swap(w);
  }
  // Gershgorin row sums bound the top eigenvalue from above.
  double gershgorin = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double row = 0.0;
    for (std::size_t j = 0; j < n; ++j) row += std::abs(gram_[i * n + j]);
    gershgorin = std::max(gershgorin, row);
  }
  lipschitz_ = std::min(gershgorin, 1.02 * lambda);
  if (!(lipschitz_ > 0.0)) lipschitz_ = 1.0;
}

HullSolution HullSolver::solve(const Tensor& query) const {
  const std::size_t n = features_.size();
  if (query.size() != features_.dim()) throw InvalidArgument("hull query dimension does not match features");
  std::vector<double> b(n);
  for (std::size_t i = 0; i < n; ++i) b[i] = dot(features_.columns[i].data(), query.data());

  HullSolution sol;
  sol.alpha = project_simplex(std::vector<double>(n, 1.0 / static_cast<double>(n)), bounds_);
  const double step = 1.0 / lipschitz_;
  std::vector<double> grad(n), trial(n);
  // One projected gradient step from `from`; returns the projected point.
  auto pg_step = [&](const std::vector<double>& from) {
    // Gradient of 0.5 ||F a - y||^2 is G a - F^T y.
    for (std::size_t i = 0; i < n; ++i) grad[i] = dot({gram_.data() + i * n, n}, from) - b[i];
    for (std::size_t i = 0; i < n; ++i) trial[i] = from[i] - step * grad[i];
    return project_simplex(trial, bounds_);
  };

  // Accelerated projected gradient with gradient-based adaptive restart.
  std::vector<double> extrapolated = sol.alpha;
  double momentum = 1.0;
  for (int it = 0; it < options_.max_iterations; ++it) {
    const auto at_alpha = pg_step(sol.alpha);
    double move = 0.0;
    for (std::size_t i = 0; i < n; ++i) move += (at_alpha[i] - sol.alpha[i]) * (at_alpha[i] - sol.alpha[i]);
    sol.projected_gradient_norm = std::sqrt(move) / step;
    sol.iterations = it;
    if (sol.projected_gradient_norm < options_.tolerance) break;

    auto next = pg_step(extrapolated);
    double restart = 0.0;
    for (std::size_t i = 0; i < n; ++i) restart += (extrapolated[i] - next[i]) * (next[i] - sol.alpha[i]);
    if (restart > 0.0) {
      momentum = 1.0;
      extrapolated = next;
    } else {
      const double m_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * momentum * momentum));
      const double beta = (momentum - 1.0) / m_next;
      for (std::size_t i = 0; i < n; ++i) extrapolated[i] = next[i] + beta * (next[i] - sol.alpha[i]);
      momentum = m_next;
    }
    sol.alpha = std::move(next);
  }
  sol.hull_point = hull_point(features_, sol.alpha);
  sol.residual = norm_l2((sol.hull_point - Tensor::vector(query.data())).data());
  return sol;
}

HullSolution solve_hull(const FeatureMatrix& features, const Tensor& query, const SimplexBounds& bounds) {
  return HullSolver(features, bounds).solve(query);
}

}  // namespace gaopom
