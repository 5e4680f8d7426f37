#include "gaopom/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "gaopom/error.hpp"

namespace gaopom {

std::size_t shape_volume(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (auto e : shape) {
    if (e == 0) throw InvalidArgument("tensor extents must be positive");
    n *= e;
  }
  return n;
}

Tensor::Tensor(std::vector<std::size_t> shape) : shape_(std::move(shape)), data_(shape_volume(shape_), 0.0) {}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_volume(shape_) != data_.size()) {
    throw InvalidArgument("tensor data length " + std::to_string(data_.size()) + " does not match shape volume " +
                          std::to_string(shape_volume(shape_)));
  }
}

Tensor Tensor::vector(std::vector<double> data) {
  const std::size_t n = data.size();
  return Tensor({n}, std::move(data));
}

Tensor& Tensor::operator+=(const Tensor& other) {
  if (!same_shape(other)) throw InvalidArgument("tensor shape mismatch in +=");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
  return *this;
}

Tensor& Tensor::operator*=(double s) {
  for (auto& v : data_) v *= s;
  return *this;
}

double Tensor::norm_l1() const {
  double s = 0.0;
  for (double v : data_) s += std::abs(v);
  return s;
}

double Tensor::norm_l2() const { return gaopom::norm_l2(data_); }

double Tensor::norm_inf() const {
  double m = 0.0;
  for (double v : data_) m = std::max(m, std::abs(v));
  return m;
}

Tensor operator+(Tensor a, const Tensor& b) {
  a += b;
  return a;
}

Tensor operator-(Tensor a, const Tensor& b) {
  if (!a.same_shape(b)) throw InvalidArgument("tensor shape mismatch in -");
  for (std::size_t i = 0; i < a.size(); ++i) a[i] -= b[i];
  return a;
}

Tensor operator*(double s, Tensor a) {
  a *= s;
  return a;
}

Tensor sign(const Tensor& t) {
  Tensor out = t;
  for (auto& v : out.data()) v = v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0);
  return out;
}

Tensor clip_inf(const Tensor& t, double epsilon) {
  if (!(epsilon >= 0.0)) throw InvalidArgument("clip_inf: epsilon must be non-negative");
  Tensor out = t;
  for (auto& v : out.data()) v = std::clamp(v, -epsilon, epsilon);
  return out;
}

bool SimplexBounds::feasible_for(std::size_t n) const {
  const double dn = static_cast<double>(n);
  return n > 0 && lower <= upper && lower * dn <= 1.0 && upper * dn >= 1.0;
}

namespace {

// Unit simplex projection by sorting (Held, Wolfe, Crowder).
std::vector<double> project_unit_simplex(std::span<const double> v) {
  std::vector<double> u(v.begin(), v.end());
  std::sort(u.begin(), u.end(), std::greater<>());
  double cumsum = 0.0;
  double tau = 0.0;
  for (std::size_t j = 0; j < u.size(); ++j) {
    cumsum += u[j];
    const double t = (cumsum - 1.0) / static_cast<double>(j + 1);
    if (u[j] - t > 0.0) tau = t;
  }
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = std::max(v[i] - tau, 0.0);
  return out;
}

std::vector<double> project_bounded_simplex(std::span<const double> v, const SimplexBounds& b) {
  auto clamped_sum = [&](double tau) {
    double s = 0.0;
    for (double x : v) s += std::clamp(x - tau, b.lower, b.upper);
    return s;
  };
  // sum is non-increasing in tau; bracket the root of sum(tau) = 1.
  const auto [mn, mx] = std::minmax_element(v.begin(), v.end());
  double lo = *mn - b.upper;
  double hi = *mx - b.lower;
  while (hi - lo > 1e-12) {
    const double mid = 0.5 * (lo + hi);
    if (mid == lo || mid == hi) break;
    if (clamped_sum(mid) > 1.0) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  const double tau = 0.5 * (lo + hi);
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = std::clamp(v[i] - tau, b.lower, b.upper);
  return out;
}

}  // namespace

std::vector<double> project_simplex(std::span<const double> v, const SimplexBounds& bounds) {
  if (!bounds.feasible_for(v.size())) {
    throw InvalidArgument("project_simplex: bounds [" + std::to_string(bounds.lower) + ", " +
                          std::to_string(bounds.upper) + "] infeasible for dimension " + std::to_string(v.size()));
  }
  // With lower = 0 any simplex point already satisfies a_i <= 1.
  if (bounds.lower == 0.0 && bounds.upper >= 1.0) return project_unit_simplex(v);
  return project_bounded_simplex(v, bounds);
}

Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, const Tensor& x, double h) {
  if (!(h > 0.0)) throw InvalidArgument("finite_diff_grad: h must be positive");
  Tensor grad(x.shape());
  Tensor probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + h;
    const double fp = f(probe);
    probe[i] = orig - h;
    const double fm = f(probe);
    probe[i] = orig;
    grad[i] = (fp - fm) / (2.0 * h);
  }
  return grad;
}

double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw InvalidArgument("dot: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double norm_l2(std::span<const double> a) { return std::sqrt(dot(a, a)); }

}  // namespace gaopom
