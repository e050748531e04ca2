#pragma once

// Stereographic projection R^n -> S^n \ {e_{n+1}} and the geometric checks
// that back using the unit sphere as a decision region.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>

#include "spherehead/random.hpp"
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "spherehead/errors.hpp"
#include "spherehead/ndcore.hpp"

namespace spherehead::stereo {

/// Tolerance for accepting a point as lying on the unit sphere.
inline constexpr double kSphereTolerance = 1e-9;
/// inverse_project refuses points whose last coordinate is >= 1 - kPoleEpsilon.
inline constexpr double kPoleEpsilon = 1e-9;
/// Slack on the norm bound for hemisphere_map and the convexity check.
inline constexpr double kNormSlack = 1e-12;

/// A finite point of R^n.
class EuclideanPoint {
 public:
  explicit EuclideanPoint(std::vector<double> coords) : coords_(std::move(coords)) {
    for (std::size_t i = 0; i < coords_.size(); ++i) {
      if (!std::isfinite(coords_[i])) {
        throw DomainError("non-finite coordinate " + std::to_string(i) + " in Euclidean point");
      }
    }
  }

  const std::vector<double>& coords() const& noexcept { return coords_; }
  std::vector<double> coords() && noexcept { return std::move(coords_); }
  std::size_t dim() const noexcept { return coords_.size(); }

  double squared_norm() const noexcept {
    double s = 0.0;
    for (double v : coords_) s += v * v;
    return s;
  }

 private:
  std::vector<double> coords_;
};

enum class Hemisphere { upper, lower };

/// A point of R^{n+1} on the unit sphere.
class SpherePoint {
 public:
  /// Validates |coords| = 1 within `tol`.
  static SpherePoint from_coords(std::vector<double> coords, double tol = kSphereTolerance) {
    double s = 0.0;
    for (double v : coords) {
      if (!std::isfinite(v)) throw DomainError("non-finite sphere coordinate");
      s += v * v;
    }
    if (coords.empty() || std::abs(s - 1.0) > tol) {
      throw DomainError("point is off the unit sphere: |p|^2 = " + std::to_string(s));
    }
    return SpherePoint(std::move(coords));
  }

  const std::vector<double>& coords() const& noexcept { return coords_; }
  std::vector<double> coords() && noexcept { return std::move(coords_); }
  /// Ambient dimension n + 1.
  std::size_t dim() const noexcept { return coords_.size(); }
  double last() const noexcept { return coords_.back(); }

  double squared_norm() const noexcept {
    double s = 0.0;
    for (double v : coords_) s += v * v;
    return s;
  }

 private:
  explicit SpherePoint(std::vector<double> coords) : coords_(std::move(coords)) {}

  friend SpherePoint project(const EuclideanPoint& x);
  friend SpherePoint hemisphere_map(const EuclideanPoint& v, Hemisphere side);

  std::vector<double> coords_;
};

namespace detail {

// Writes phi(x) into `out` (size n + 1) and returns |x|^2. Falls back to a
// norm-scaled form when |x|^2 overflows.
inline double project_into(std::span<const double> x, std::span<double> out) {
  const std::size_t n = x.size();
  double s = 0.0;
  for (double v : x) s += v * v;
  if (std::isfinite(s)) {
    const double denom = s + 1.0;
    for (std::size_t i = 0; i < n; ++i) out[i] = 2.0 * x[i] / denom;
    out[n] = (s - 1.0) / denom;
    return s;
  }
  double big = 0.0;
  for (double v : x) big = std::max(big, std::abs(v));
  double ss = 0.0;
  for (double v : x) ss += (v / big) * (v / big);
  const double r = big * std::sqrt(ss);
  const double denom = r + 1.0 / r;
  for (std::size_t i = 0; i < n; ++i) out[i] = 2.0 * (x[i] / r) / denom;
  out[n] = (r - 1.0 / r) / denom;
  return s;
}

}  // namespace detail

/// z = (|x|^2 - 1) / (|x|^2 + 1), the line parameter at which x + z (e_{n+1} - x)
/// meets the sphere. Lies in [-1, 1).
inline double scale_factor(const EuclideanPoint& x) {
  const double s = x.squared_norm();
  if (!std::isfinite(s)) return 1.0;
  return (s - 1.0) / (s + 1.0);
}

/// phi(x) = (2 x_1, ..., 2 x_n, |x|^2 - 1) / (|x|^2 + 1).
inline SpherePoint project(const EuclideanPoint& x) {
  std::vector<double> out(x.dim() + 1);
  detail::project_into(x.coords(), out);
  return SpherePoint(std::move(out));
}

inline SpherePoint project(std::span<const double> x) {
  return project(EuclideanPoint(std::vector<double>(x.begin(), x.end())));
}

/// Inverse map x_i = p_i / (1 - p_{n+1}).
inline EuclideanPoint inverse_project(const SpherePoint& p) {
  const auto& c = p.coords();
  const std::size_t n = c.size() - 1;
  if (std::abs(p.squared_norm() - 1.0) > kSphereTolerance) {
    throw DomainError("inverse_project: point is off the unit sphere");
  }
  const double last = c[n];
  if (last >= 1.0 - kPoleEpsilon) {
    throw PoleSingularityError("inverse_project: last coordinate " + std::to_string(last) +
                               " is within the pole cutoff");
  }
  std::vector<double> x(n);
  if (last > 0.0) {
    // 1 - p_{n+1} = (sum_i p_i^2) / (1 + p_{n+1}) avoids cancellation near the pole.
    double head = 0.0;
    for (std::size_t i = 0; i < n; ++i) head += c[i] * c[i];
    const double factor = (1.0 + last) / head;
    for (std::size_t i = 0; i < n; ++i) x[i] = c[i] * factor;
  } else {
    for (std::size_t i = 0; i < n; ++i) x[i] = c[i] / (1.0 - last);
  }
  return EuclideanPoint(std::move(x));
}

/// Jacobian d phi / d x, shape (n + 1) x n.
inline nd::Tensor projection_jacobian(const EuclideanPoint& x) {
  const std::size_t n = x.dim();
  const auto& v = x.coords();
  const double q = 1.0 / (x.squared_norm() + 1.0);
  nd::Tensor jac(nd::Shape{n + 1, n});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < n; ++k) jac(i, k) = (i == k ? 2.0 * q : 0.0) - 4.0 * v[i] * v[k] * q * q;
  }
  for (std::size_t k = 0; k < n; ++k) jac(n, k) = 4.0 * v[k] * q * q;
  return jac;
}

/// Row-wise projection of a [B x n] matrix to [B x (n + 1)], without a tape.
inline nd::Tensor project_batch(const nd::Tensor& X) {
  if (X.rank() != 2 || X.shape()[0] == 0 || X.shape()[1] == 0) {
    throw DimensionError("project_batch needs a non-empty [B x n] matrix, got " + nd::to_string(X.shape()));
  }
  if (!X.all_finite()) throw DomainError("project_batch: non-finite input");
  const std::size_t rows = X.shape()[0], n = X.shape()[1];
  nd::Tensor out(nd::Shape{rows, n + 1});
  for (std::size_t r = 0; r < rows; ++r) detail::project_into(X.row(r), out.row(r));
  return out;
}

/// Differentiable row-wise projection.
inline nd::Var project_batch(const nd::Var& X) {
  nd::Tensor out = project_batch(X.value());
  const std::size_t rows = out.shape()[0], n = X.value().shape()[1];
  return X.tape().record(
      "stereo_project", std::move(out), {X},
      [X, rows, n](std::span<const double> g, std::span<const std::span<double>> gin) {
        const nd::Tensor& in = X.value();
        for (std::size_t r = 0; r < rows; ++r) {
          const auto x = in.row(r);
          double s = 0.0;
          for (double v : x) s += v * v;
          const double q = std::isfinite(s) ? 1.0 / (s + 1.0) : 0.0;
          const double* gr = g.data() + r * (n + 1);
          // dphi_i/dx_k = 2 q d_ik - 4 q^2 x_i x_k ; dphi_{n+1}/dx_k = 4 q^2 x_k
          if (q == 0.0) continue;
          double gdot = 0.0;
          for (std::size_t i = 0; i < n; ++i) gdot += gr[i] * x[i];
          const double radial = 4.0 * q * q * (gr[n] - gdot);
          for (std::size_t k = 0; k < n; ++k) gin[0][r * n + k] += 2.0 * q * gr[k] + radial * x[k];
        }
      });
}

/// Outcome of sampling convex combinations of points in the closed unit ball.
struct ConvexityReport {
  std::size_t trials = 0;
  std::size_t violations = 0;
  double max_norm = 0.0;
};

/// Samples x, y with |x|, |y| <= 1 and alpha in [0, 1] and counts
/// combinations alpha x + (1 - alpha) y whose norm exceeds 1 + kNormSlack.
/// Every other pair is drawn on the unit shell, where the bound is tight.
inline ConvexityReport check_ball_convexity(std::uint64_t seed, std::size_t trials, std::size_t dim = 3) {
  if (trials == 0) throw ConfigError("check_ball_convexity needs at least one trial");
  if (dim == 0) throw ConfigError("check_ball_convexity needs dim >= 1");
  Rng rng(seed);
  auto sample = [&](bool on_shell) {
    std::vector<double> v(dim);
    double ss = 0.0;
    do {
      ss = 0.0;
      for (double& c : v) {
        c = rng.normal();
        ss += c * c;
      }
    } while (ss == 0.0);
    const double radius = on_shell ? 1.0 : std::pow(rng.uniform(), 1.0 / static_cast<double>(dim));
    const double k = radius / std::sqrt(ss);
    for (double& c : v) c *= k;
    return v;
  };
  ConvexityReport report;
  report.trials = trials;
  for (std::size_t t = 0; t < trials; ++t) {
    const bool shell = t % 2 == 0;
    const auto x = sample(shell);
    const auto y = sample(shell);
    const double alpha = rng.uniform();
    double ss = 0.0;
    for (std::size_t i = 0; i < dim; ++i) {
      const double c = alpha * x[i] + (1.0 - alpha) * y[i];
      ss += c * c;
    }
    const double norm = std::sqrt(ss);
    report.max_norm = std::max(report.max_norm, norm);
    if (norm > 1.0 + kNormSlack) ++report.violations;
  }
  return report;
}

/// Lifts a point of the closed unit disk onto the closed upper or lower
/// hemisphere: (v, +-sqrt(1 - |v|^2)). On |v| = 1 both sides give the same
/// point (last coordinate +0).
inline SpherePoint hemisphere_map(const EuclideanPoint& v, Hemisphere side) {
  const double s = v.squared_norm();
  if (std::sqrt(s) > 1.0 + kNormSlack) {
    throw DomainError("hemisphere_map: |v| = " + std::to_string(std::sqrt(s)) + " exceeds 1");
  }
  const double root = std::sqrt(std::max(0.0, 1.0 - s));
  std::vector<double> out(v.coords().begin(), v.coords().end());
  out.push_back(root == 0.0 ? 0.0 : (side == Hemisphere::upper ? root : -root));
  return SpherePoint(std::move(out));
}

}  // namespace spherehead::stereo
