#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <unistd.h>

#include "spherehead/nd/ops.hpp"
#include "spherehead/nd/tape.hpp"
#include "spherehead/nd/tensor.hpp"
#include "spherehead/random.hpp"

namespace spherehead::testing {

/// Builds a scalar loss on `tape` from the input variable.
using LossFn = std::function<nd::Var(nd::Tape&, const nd::Var&)>;

inline nd::Tensor random_tensor(Rng& rng, nd::Shape shape, double lo = -2.0, double hi = 2.0) {
  nd::Tensor t(shape);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

inline double evaluate_loss(const LossFn& f, const nd::Tensor& x) {
  nd::Tape tape;
  return f(tape, tape.constant(x)).value().item();
}

inline std::vector<double> analytic_grad(const LossFn& f, const nd::Tensor& x) {
  nd::Tape tape;
  const nd::Var v = tape.variable(x);
  tape.backward(f(tape, v));
  const auto g = tape.grad(v);
  return g ? g->values() : std::vector<double>(x.size(), 0.0);
}

/// Central differences, step h.
inline std::vector<double> numeric_grad(const LossFn& f, const nd::Tensor& x, double h = 1e-6) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    nd::Tensor plus = x, minus = x;
    plus[i] += h;
    minus[i] -= h;
    g[i] = (evaluate_loss(f, plus) - evaluate_loss(f, minus)) / (2.0 * h);
  }
  return g;
}

/// ||a - b|| / max(||a||, ||b||), 0 when both vanish.
inline double relative_error(std::span<const double> a, std::span<const double> b) {
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  const double scale = std::sqrt(std::max(na, nb));
  return scale < 1e-12 ? std::sqrt(diff) : std::sqrt(diff) / scale;
}

inline double gradient_error(const LossFn& f, const nd::Tensor& x, double h = 1e-6) {
  const auto a = analytic_grad(f, x);
  const auto n = numeric_grad(f, x, h);
  return relative_error(a, n);
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

/// Scratch directory removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("spherehead-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const noexcept { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

}  // namespace spherehead::testing
