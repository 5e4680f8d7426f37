#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "gaopom/numerics.hpp"

namespace gaopom {

// Columns are the unit-norm training features of one identity.
struct FeatureMatrix {
  std::vector<Tensor> columns;
  std::size_t identity_id = 0;

  std::size_t size() const { return columns.size(); }
  std::size_t dim() const { return columns.empty() ? 0 : columns.front().size(); }
  void validate() const;
};

struct HullSolution {
  std::vector<double> alpha;
  Tensor hull_point;
  double residual = 0.0;
  double projected_gradient_norm = 0.0;
  int iterations = 0;
};

struct HullSolverOptions {
  double tolerance = 1e-8;
  int max_iterations = 5000;
  int power_iterations = 50;
};

// Closest point of the bounded convex hull of F's columns to a query, by
// accelerated projected gradient on the coefficients (step 1/L, L the top
// eigenvalue of F^T F, adaptive restart), started from uniform weights. The Gram matrix and L are computed once per matrix so
// repeated queries against one identity stay cheap.
class HullSolver {
 public:
  explicit HullSolver(FeatureMatrix features, SimplexBounds bounds = {}, HullSolverOptions options = {});

  HullSolution solve(const Tensor& query) const;

  const FeatureMatrix& features() const { return features_; }
  double lipschitz() const { return lipschitz_; }

 private:
  FeatureMatrix features_;
  SimplexBounds bounds_;
  HullSolverOptions options_;
  std::vector<double> gram_;  // n x n, row-major
  double lipschitz_ = 0.0;
};

HullSolution solve_hull(const FeatureMatrix& features, const Tensor& query, const SimplexBounds& bounds = {});

// F * alpha, not renormalized.
Tensor hull_point(const FeatureMatrix& features, std::span<const double> alpha);

}  // namespace gaopom
