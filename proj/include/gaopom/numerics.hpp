#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <span>
#include <vector>

namespace gaopom {

// Dense row-major tensor of doubles. Images are (H, W, C) in 0..255 pixel
// units; gradients share the image shape.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape);
  Tensor(std::vector<std::size_t> shape, std::vector<double> data);
  static Tensor vector(std::vector<double> data);

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }
  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  Tensor& operator+=(const Tensor& other);
  Tensor& operator*=(double s);

  double norm_l1() const;
  double norm_l2() const;
  double norm_inf() const;

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

std::size_t shape_volume(const std::vector<std::size_t>& shape);

Tensor operator+(Tensor a, const Tensor& b);
Tensor operator-(Tensor a, const Tensor& b);
Tensor operator*(double s, Tensor a);

// Mathematical signum: 0 maps to 0.
Tensor sign(const Tensor& t);

// Componentwise clamp into [-epsilon, epsilon].
Tensor clip_inf(const Tensor& t, double epsilon);

struct SimplexBounds {
  double lower = 0.0;
  double upper = 1.0;

  bool feasible_for(std::size_t n) const;
};

// Euclidean projection onto {a : sum(a) = 1, lower <= a_i <= upper}.
std::vector<double> project_simplex(std::span<const double> v, const SimplexBounds& bounds = {});

// Central differences (f(x + h e_i) - f(x - h e_i)) / 2h per coordinate.
Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, const Tensor& x, double h);

double dot(std::span<const double> a, std::span<const double> b);
double norm_l2(std::span<const double> a);

}  // namespace gaopom
