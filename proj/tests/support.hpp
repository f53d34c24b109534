#ifndef DISTILLERY_TESTS_SUPPORT_HPP_
#define DISTILLERY_TESTS_SUPPORT_HPP_

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <string>

#include <unistd.h>

#include "distillery/nn.hpp"
#include "distillery/rng.hpp"

namespace testing {

using distillery::nn::ActorCriticNet;
using distillery::nn::Matrix;
using distillery::nn::Vector;

// Relative error with a small absolute floor so entries that are zero in both
// the analytic and numeric gradient compare as equal.
inline double relative_error(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-6});
}

// Central differences of loss(net) over every parameter.
inline Vector numeric_gradient(const ActorCriticNet& net,
                               const std::function<double(const ActorCriticNet&)>& loss,
                               double h = 1e-5) {
  const Vector base = net.flat_parameters();
  Vector grad(base.size());
  ActorCriticNet probe = net;
  for (Eigen::Index i = 0; i < base.size(); ++i) {
    Vector p = base;
    p[i] += h;
    probe.set_flat_parameters(p);
    const double up = loss(probe);
    p[i] -= 2 * h;
    probe.set_flat_parameters(p);
    const double down = loss(probe);
    grad[i] = (up - down) / (2 * h);
  }
  return grad;
}

inline double max_relative_error(const Vector& a, const Vector& b) {
  double worst = 0.0;
  for (Eigen::Index i = 0; i < a.size(); ++i) worst = std::max(worst, relative_error(a[i], b[i]));
  return worst;
}

inline Matrix random_matrix(Eigen::Index rows, Eigen::Index cols, distillery::Rng& rng,
                            double lo = -1.0, double hi = 1.0) {
  Matrix m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = rng.uniform(lo, hi);
  return m;
}

inline Vector random_vector(Eigen::Index n, distillery::Rng& rng, double lo = -1.0,
                            double hi = 1.0) {
  Vector v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = rng.uniform(lo, hi);
  return v;
}

// Fresh scratch directory removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    path_ = std::filesystem::temp_directory_path() /
            ("distillery_" + tag + "_" + std::to_string(::getpid()));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

}  // namespace testing

#endif  // DISTILLERY_TESTS_SUPPORT_HPP_
