#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "spherehead/errors.hpp"
#include "spherehead/nd/tape.hpp"
#include "spherehead/nd/tensor.hpp"

namespace spherehead::nd {

enum class UnaryOp { exp, log, neg, relu, sqrt, cos, acos };
enum class BinaryOp { add, sub, mul, div };
enum class ReduceOp { sum, mean, max };

namespace detail {

inline void require_same_tape(const Var& a, const Var& b) {
  if (&a.tape() != &b.tape()) throw StateError("operands live on different tapes");
}

inline void require_same_shape(std::string_view op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                         to_string(b.shape()));
  }
}

inline void require_matrix(std::string_view op, const Tensor& a) {
  if (a.rank() != 2) {
    throw DimensionError(std::string(op) + ": expected a matrix, got " + to_string(a.shape()));
  }
}

inline void require_labels(std::string_view op, const Tensor& a, std::span<const std::size_t> labels) {
  require_matrix(op, a);
  if (labels.size() != a.shape()[0]) {
    throw DimensionError(std::string(op) + ": " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(a.shape()[0]) + " rows");
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= a.shape()[1]) {
      throw IndexError(std::string(op) + ": label " + std::to_string(labels[i]) + " at row " +
                       std::to_string(i) + " outside [0, " + std::to_string(a.shape()[1]) + ")");
    }
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Matrix product

inline Var matmul(const Var& a, const Var& b) {
  detail::require_same_tape(a, b);
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  if (A.rank() != 2 || B.rank() != 2 || A.shape()[1] != B.shape()[0]) {
    throw DimensionError("matmul: cannot multiply " + to_string(A.shape()) + " by " +
                         to_string(B.shape()));
  }
  const std::size_t m = A.shape()[0], k = A.shape()[1], n = B.shape()[1];
  Tensor out(Shape{m, n});
  for (std::size_t i = 0; i < m; ++i) {
    double* o = &out(i, 0);
    for (std::size_t p = 0; p < k; ++p) {
      const double av = A(i, p);
      const double* br = B.data().data() + p * n;
      for (std::size_t j = 0; j < n; ++j) o[j] += av * br[j];
    }
  }
  return a.tape().record("matmul", std::move(out), {a, b},
                         [a, b, m, k, n](std::span<const double> g, std::span<const std::span<double>> gin) {
                           const Tensor& A = a.value();
                           const Tensor& B = b.value();
                           if (!gin[0].empty()) {
                             // dA = g * B^T
                             for (std::size_t i = 0; i < m; ++i)
                               for (std::size_t p = 0; p < k; ++p) {
                                 double acc = 0.0;
                                 for (std::size_t j = 0; j < n; ++j) acc += g[i * n + j] * B(p, j);
                                 gin[0][i * k + p] += acc;
                               }
                           }
                           if (!gin[1].empty()) {
                             // dB = A^T * g
                             for (std::size_t i = 0; i < m; ++i)
                               for (std::size_t p = 0; p < k; ++p) {
                                 const double av = A(i, p);
                                 for (std::size_t j = 0; j < n; ++j) gin[1][p * n + j] += av * g[i * n + j];
                               }
                           }
                         });
}

// ---------------------------------------------------------------------------
// Element-wise

/// Applies `op` to every element. log needs strictly positive input, sqrt
/// non-negative, acos [-1, 1]; violations raise DomainError.
inline Var elementwise(const Var& a, UnaryOp op) {
  const Tensor& A = a.value();
  Tensor out(A.shape());
  const auto x = A.data();
  auto y = out.data();
  const char* name = "";
  switch (op) {
    case UnaryOp::exp:
      name = "exp";
      for (std::size_t i = 0; i < x.size(); ++i) y[i] = std::exp(x[i]);
      break;
    case UnaryOp::log:
      name = "log";
      for (std::size_t i = 0; i < x.size(); ++i) {
        if (!(x[i] > 0.0)) {
          throw DomainError("log of non-positive value " + std::to_string(x[i]) + " at index " +
                            std::to_string(i));
        }
        y[i] = std::log(x[i]);
      }
      break;
    case UnaryOp::neg:
      name = "neg";
      for (std::size_t i = 0; i < x.size(); ++i) y[i] = -x[i];
      break;
    case UnaryOp::relu:
      name = "relu";
      for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
      break;
    case UnaryOp::sqrt:
      name = "sqrt";
      for (std::size_t i = 0; i < x.size(); ++i) {
        if (x[i] < 0.0) throw DomainError("sqrt of negative value " + std::to_string(x[i]));
        y[i] = std::sqrt(x[i]);
      }
      break;
    case UnaryOp::cos:
      name = "cos";
      for (std::size_t i = 0; i < x.size(); ++i) y[i] = std::cos(x[i]);
      break;
    case UnaryOp::acos:
      name = "acos";
      for (std::size_t i = 0; i < x.size(); ++i) {
        if (x[i] < -1.0 || x[i] > 1.0) throw DomainError("acos outside [-1, 1]: " + std::to_string(x[i]));
        y[i] = std::acos(x[i]);
      }
      break;
  }
  return a.tape().record(name, std::move(out), {a},
                         [a, op](std::span<const double> g, std::span<const std::span<double>> gin) {
                           const auto x = a.value().data();
                           auto gx = gin[0];
                           for (std::size_t i = 0; i < x.size(); ++i) {
                             double d = 0.0;
                             switch (op) {
                               case UnaryOp::exp: d = std::exp(x[i]); break;
                               case UnaryOp::log: d = 1.0 / x[i]; break;
                               case UnaryOp::neg: d = -1.0; break;
                               // subgradient 0 at the kink
                               case UnaryOp::relu: d = x[i] > 0.0 ? 1.0 : 0.0; break;
                               case UnaryOp::sqrt: d = 0.5 / std::sqrt(x[i]); break;
                               case UnaryOp::cos: d = -std::sin(x[i]); break;
                               case UnaryOp::acos: d = -1.0 / std::sqrt(1.0 - x[i] * x[i]); break;
                             }
                             gx[i] += g[i] * d;
                           }
                         });
}

/// Same-shape element-wise arithmetic. Division by an exact zero raises DomainError.
inline Var elementwise(const Var& a, BinaryOp op, const Var& b) {
  detail::require_same_tape(a, b);
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  static constexpr const char* names[] = {"add", "sub", "mul", "div"};
  detail::require_same_shape(names[static_cast<int>(op)], A, B);
  Tensor out(A.shape());
  const auto x = A.data();
  const auto z = B.data();
  auto y = out.data();
  for (std::size_t i = 0; i < x.size(); ++i) {
    switch (op) {
      case BinaryOp::add: y[i] = x[i] + z[i]; break;
      case BinaryOp::sub: y[i] = x[i] - z[i]; break;
      case BinaryOp::mul: y[i] = x[i] * z[i]; break;
      case BinaryOp::div:
        if (z[i] == 0.0) throw DomainError("division by zero at index " + std::to_string(i));
        y[i] = x[i] / z[i];
        break;
    }
  }
  return a.tape().record(names[static_cast<int>(op)], std::move(out), {a, b},
                         [a, b, op](std::span<const double> g, std::span<const std::span<double>> gin) {
                           const auto x = a.value().data();
                           const auto z = b.value().data();
                           auto ga = gin[0];
                           auto gb = gin[1];
                           for (std::size_t i = 0; i < x.size(); ++i) {
                             switch (op) {
                               case BinaryOp::add:
                                 if (!ga.empty()) ga[i] += g[i];
                                 if (!gb.empty()) gb[i] += g[i];
                                 break;
                               case BinaryOp::sub:
                                 if (!ga.empty()) ga[i] += g[i];
                                 if (!gb.empty()) gb[i] -= g[i];
                                 break;
                               case BinaryOp::mul:
                                 if (!ga.empty()) ga[i] += g[i] * z[i];
                                 if (!gb.empty()) gb[i] += g[i] * x[i];
                                 break;
                               case BinaryOp::div:
                                 if (!ga.empty()) ga[i] += g[i] / z[i];
                                 if (!gb.empty()) gb[i] -= g[i] * x[i] / (z[i] * z[i]);
                                 break;
                             }
                           }
                         });
}

/// Tensor-scalar arithmetic (`a op s`).
inline Var elementwise(const Var& a, BinaryOp op, double s) {
  if (op == BinaryOp::div && s == 0.0) throw DomainError("division by scalar zero");
  const Tensor& A = a.value();
  Tensor out(A.shape());
  const auto x = A.data();
  auto y = out.data();
  for (std::size_t i = 0; i < x.size(); ++i) {
    switch (op) {
      case BinaryOp::add: y[i] = x[i] + s; break;
      case BinaryOp::sub: y[i] = x[i] - s; break;
      case BinaryOp::mul: y[i] = x[i] * s; break;
      case BinaryOp::div: y[i] = x[i] / s; break;
    }
  }
  static constexpr const char* names[] = {"add_scalar", "sub_scalar", "mul_scalar", "div_scalar"};
  return a.tape().record(names[static_cast<int>(op)], std::move(out), {a},
                         [op, s](std::span<const double> g, std::span<const std::span<double>> gin) {
                           const double d = op == BinaryOp::mul ? s : op == BinaryOp::div ? 1.0 / s : 1.0;
                           for (std::size_t i = 0; i < g.size(); ++i) gin[0][i] += g[i] * d;
                         });
}

/// Clamps into [lo, hi]. Gradient passes only strictly inside the interval.
inline Var clamp(const Var& a, double lo, double hi) {
  if (!(lo <= hi)) throw DomainError("clamp: empty interval");
  const Tensor& A = a.value();
  Tensor out(A.shape());
  const auto x = A.data();
  auto y = out.data();
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = std::clamp(x[i], lo, hi);
  return a.tape().record("clamp", std::move(out), {a},
                         [a, lo, hi](std::span<const double> g, std::span<const std::span<double>> gin) {
                           const auto x = a.value().data();
                           for (std::size_t i = 0; i < x.size(); ++i)
                             if (x[i] > lo && x[i] < hi) gin[0][i] += g[i];
                         });
}

inline Var exp(const Var& a) { return elementwise(a, UnaryOp::exp); }
inline Var log(const Var& a) { return elementwise(a, UnaryOp::log); }
inline Var relu(const Var& a) { return elementwise(a, UnaryOp::relu); }
inline Var sqrt(const Var& a) { return elementwise(a, UnaryOp::sqrt); }
inline Var cos(const Var& a) { return elementwise(a, UnaryOp::cos); }
inline Var acos(const Var& a) { return elementwise(a, UnaryOp::acos); }

inline Var operator-(const Var& a) { return elementwise(a, UnaryOp::neg); }
inline Var operator+(const Var& a, const Var& b) { return elementwise(a, BinaryOp::add, b); }
inline Var operator-(const Var& a, const Var& b) { return elementwise(a, BinaryOp::sub, b); }
inline Var operator*(const Var& a, const Var& b) { return elementwise(a, BinaryOp::mul, b); }
inline Var operator/(const Var& a, const Var& b) { return elementwise(a, BinaryOp::div, b); }
inline Var operator+(const Var& a, double s) { return elementwise(a, BinaryOp::add, s); }
inline Var operator-(const Var& a, double s) { return elementwise(a, BinaryOp::sub, s); }
inline Var operator*(const Var& a, double s) { return elementwise(a, BinaryOp::mul, s); }
inline Var operator*(double s, const Var& a) { return elementwise(a, BinaryOp::mul, s); }
inline Var operator/(const Var& a, double s) { return elementwise(a, BinaryOp::div, s); }

// ---------------------------------------------------------------------------
// Reductions

/// Reduces over one axis (dropping it) or over every element when `axis` is
/// empty, giving a rank-0 result. max routes the gradient to the first
/// maximal element.
inline Var reduce(const Var& a, ReduceOp op, std::optional<std::size_t> axis = std::nullopt) {
  const Tensor& A = a.value();
  if (A.size() == 0) throw DimensionError("reduce over an empty tensor");
  std::size_t outer = 1, len = A.size(), inner = 1;
  Shape out_shape;
  if (axis) {
    if (*axis >= A.rank()) {
      throw DimensionError("reduce: axis " + std::to_string(*axis) + " out of range for shape " +
                           to_string(A.shape()));
    }
    for (std::size_t d = 0; d < *axis; ++d) outer *= A.shape()[d];
    len = A.shape()[*axis];
    for (std::size_t d = *axis + 1; d < A.rank(); ++d) inner *= A.shape()[d];
    if (len == 0) throw DimensionError("reduce over an empty axis");
    out_shape = A.shape();
    out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(*axis));
  }
  Tensor out(out_shape);
  std::vector<std::size_t> argmax(op == ReduceOp::max ? out.size() : 0);
  const auto x = A.data();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * len * inner + in;
      const std::size_t slot = o * inner + in;
      double acc = op == ReduceOp::max ? x[base] : 0.0;
      std::size_t best = 0;
      for (std::size_t k = 0; k < len; ++k) {
        const double v = x[base + k * inner];
        if (op == ReduceOp::max) {
          if (v > acc) {
            acc = v;
            best = k;
          }
        } else {
          acc += v;
        }
      }
      if (op == ReduceOp::mean) acc /= static_cast<double>(len);
      if (op == ReduceOp::max) argmax[slot] = best;
      out[slot] = acc;
    }
  }
  static constexpr const char* names[] = {"sum", "mean", "max"};
  return a.tape().record(
      names[static_cast<int>(op)], std::move(out), {a},
      [op, outer, len, inner, argmax = std::move(argmax)](std::span<const double> g,
                                                           std::span<const std::span<double>> gin) {
        auto gx = gin[0];
        const double scale = op == ReduceOp::mean ? 1.0 / static_cast<double>(len) : 1.0;
        for (std::size_t o = 0; o < outer; ++o)
          for (std::size_t in = 0; in < inner; ++in) {
            const std::size_t base = o * len * inner + in;
            const std::size_t slot = o * inner + in;
            if (op == ReduceOp::max) {
              gx[base + argmax[slot] * inner] += g[slot];
            } else {
              for (std::size_t k = 0; k < len; ++k) gx[base + k * inner] += g[slot] * scale;
            }
          }
      });
}

inline Var sum(const Var& a, std::optional<std::size_t> axis = std::nullopt) {
  return reduce(a, ReduceOp::sum, axis);
}
inline Var mean(const Var& a, std::optional<std::size_t> axis = std::nullopt) {
  return reduce(a, ReduceOp::mean, axis);
}
inline Var max(const Var& a, std::optional<std::size_t> axis = std::nullopt) {
  return reduce(a, ReduceOp::max, axis);
}

// ---------------------------------------------------------------------------
// Row/column structure. These cover the few places where the network needs
// a per-row or per-column operand without general broadcasting.

/// out[i, j] = a[i, j] + bias[j]; bias has N elements (any shape).
inline Var add_row(const Var& a, const Var& bias) {
  detail::require_same_tape(a, bias);
  const Tensor& A = a.value();
  detail::require_matrix("add_row", A);
  const Tensor& b = bias.value();
  const std::size_t rows = A.shape()[0], cols = A.shape()[1];
  if (b.size() != cols) {
    throw DimensionError("add_row: bias " + to_string(b.shape()) + " for matrix " + to_string(A.shape()));
  }
  Tensor out(A.shape());
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) out(i, j) = A(i, j) + b[j];
  return a.tape().record("add_row", std::move(out), {a, bias},
                         [rows, cols](std::span<const double> g, std::span<const std::span<double>> gin) {
                           for (std::size_t i = 0; i < rows; ++i)
                             for (std::size_t j = 0; j < cols; ++j) {
                               if (!gin[0].empty()) gin[0][i * cols + j] += g[i * cols + j];
                               if (!gin[1].empty()) gin[1][j] += g[i * cols + j];
                             }
                         });
}

/// out[i, j] = a[i, j] * scale[i]; scale has one element per row.
inline Var scale_rows(const Var& a, const Var& scale) {
  detail::require_same_tape(a, scale);
  const Tensor& A = a.value();
  detail::require_matrix("scale_rows", A);
  const Tensor& r = scale.value();
  const std::size_t rows = A.shape()[0], cols = A.shape()[1];
  if (r.size() != rows) {
    throw DimensionError("scale_rows: scale " + to_string(r.shape()) + " for matrix " + to_string(A.shape()));
  }
  Tensor out(A.shape());
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) out(i, j) = A(i, j) * r[i];
  return a.tape().record("scale_rows", std::move(out), {a, scale},
                         [a, scale, rows, cols](std::span<const double> g, std::span<const std::span<double>> gin) {
                           const Tensor& A = a.value();
                           const Tensor& r = scale.value();
                           for (std::size_t i = 0; i < rows; ++i)
                             for (std::size_t j = 0; j < cols; ++j) {
                               const double gij = g[i * cols + j];
                               if (!gin[0].empty()) gin[0][i * cols + j] += gij * r[i];
                               if (!gin[1].empty()) gin[1][i] += gij * A(i, j);
                             }
                         });
}

/// Euclidean norm of every row, shape [rows].
inline Var row_norms(const Var& a) {
  const Tensor& A = a.value();
  detail::require_matrix("row_norms", A);
  const std::size_t rows = A.shape()[0];
  Tensor out(Shape{rows});
  for (std::size_t i = 0; i < rows; ++i) {
    double ss = 0.0;
    for (double v : A.row(i)) ss += v * v;
    out[i] = std::sqrt(ss);
    if (out[i] == 0.0) throw DegenerateInputError("row_norms: row " + std::to_string(i) + " has zero norm");
  }
  Tensor norms = out;
  return a.tape().record(
      "row_norms", std::move(out), {a},
      [a, norms = std::move(norms)](std::span<const double> g, std::span<const std::span<double>> gin) {
        const Tensor& A = a.value();
        const std::size_t cols = A.shape()[1];
        for (std::size_t i = 0; i < norms.size(); ++i)
          for (std::size_t j = 0; j < cols; ++j) gin[0][i * cols + j] += g[i] * A(i, j) / norms[i];
      });
}

namespace detail {

// Normalizes vectors laid out with `stride` between elements; `count` vectors
// of length `len`, vector v starting at offset v * `step`.
struct Layout {
  std::size_t count, len, step, stride;
};

inline Var normalize(const Var& a, Layout lay, const char* op, const char* what) {
  const Tensor& A = a.value();
  Tensor out(A.shape());
  std::vector<double> norms(lay.count);
  for (std::size_t v = 0; v < lay.count; ++v) {
    double ss = 0.0;
    for (std::size_t k = 0; k < lay.len; ++k) {
      const double x = A[v * lay.step + k * lay.stride];
      ss += x * x;
    }
    norms[v] = std::sqrt(ss);
    if (norms[v] == 0.0) {
      throw DegenerateInputError(std::string(op) + ": " + what + " " + std::to_string(v) + " has zero norm");
    }
    for (std::size_t k = 0; k < lay.len; ++k) {
      const std::size_t idx = v * lay.step + k * lay.stride;
      out[idx] = A[idx] / norms[v];
    }
  }
  Tensor unit = out;
  return a.tape().record(op, std::move(out), {a},
                         [lay, norms = std::move(norms), unit = std::move(unit)](
                             std::span<const double> g, std::span<const std::span<double>> gin) {
                           // d(x/|x|) = (g - (g.u) u) / |x|
                           for (std::size_t v = 0; v < lay.count; ++v) {
                             double gu = 0.0;
                             for (std::size_t k = 0; k < lay.len; ++k) {
                               const std::size_t idx = v * lay.step + k * lay.stride;
                               gu += g[idx] * unit[idx];
                             }
                             for (std::size_t k = 0; k < lay.len; ++k) {
                               const std::size_t idx = v * lay.step + k * lay.stride;
                               gin[0][idx] += (g[idx] - gu * unit[idx]) / norms[v];
                             }
                           }
                         });
}

}  // namespace detail

/// Scales every row to unit Euclidean norm. Zero rows raise DegenerateInputError.
inline Var normalize_rows(const Var& a) {
  const Tensor& A = a.value();
  detail::require_matrix("normalize_rows", A);
  const std::size_t r = A.shape()[0], c = A.shape()[1];
  return detail::normalize(a, {r, c, c, 1}, "normalize_rows", "row");
}

/// Scales every column to unit Euclidean norm. Zero columns raise DegenerateInputError.
inline Var normalize_cols(const Var& a) {
  const Tensor& A = a.value();
  detail::require_matrix("normalize_cols", A);
  const std::size_t r = A.shape()[0], c = A.shape()[1];
  return detail::normalize(a, {c, r, 1, c}, "normalize_cols", "column");
}

/// Picks a[i, labels[i]] for every row, shape [rows].
inline Var gather(const Var& a, std::span<const std::size_t> labels) {
  const Tensor& A = a.value();
  detail::require_labels("gather", A, labels);
  const std::size_t cols = A.shape()[1];
  Tensor out(Shape{labels.size()});
  for (std::size_t i = 0; i < labels.size(); ++i) out[i] = A(i, labels[i]);
  std::vector<std::size_t> idx(labels.begin(), labels.end());
  return a.tape().record("gather", std::move(out), {a},
                         [cols, idx = std::move(idx)](std::span<const double> g, std::span<const std::span<double>> gin) {
                           for (std::size_t i = 0; i < idx.size(); ++i) gin[0][i * cols + idx[i]] += g[i];
                         });
}

/// Copy of `a` with a[i, labels[i]] replaced by values[i].
inline Var scatter(const Var& a, std::span<const std::size_t> labels, const Var& values) {
  detail::require_same_tape(a, values);
  const Tensor& A = a.value();
  detail::require_labels("scatter", A, labels);
  const Tensor& v = values.value();
  if (v.size() != labels.size()) {
    throw DimensionError("scatter: " + std::to_string(v.size()) + " values for " +
                         std::to_string(labels.size()) + " rows");
  }
  const std::size_t cols = A.shape()[1];
  Tensor out = A;
  out.clear_grad();
  out.set_requires_grad(false);
  for (std::size_t i = 0; i < labels.size(); ++i) out(i, labels[i]) = v[i];
  std::vector<std::size_t> idx(labels.begin(), labels.end());
  return a.tape().record("scatter", std::move(out), {a, values},
                         [cols, idx = std::move(idx)](std::span<const double> g, std::span<const std::span<double>> gin) {
                           for (std::size_t i = 0; i < idx.size(); ++i) {
                             const std::size_t target = i * cols + idx[i];
                             if (!gin[0].empty()) {
                               for (std::size_t j = 0; j < cols; ++j)
                                 if (j != idx[i]) gin[0][i * cols + j] += g[i * cols + j];
                             }
                             if (!gin[1].empty()) gin[1][i] += g[target];
                           }
                         });
}

/// Stacks `b` below `a`; both must have the same column count.
inline Var concat_rows(const Var& a, const Var& b) {
  detail::require_same_tape(a, b);
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  detail::require_matrix("concat_rows", A);
  detail::require_matrix("concat_rows", B);
  if (A.shape()[1] != B.shape()[1]) {
    throw DimensionError("concat_rows: " + to_string(A.shape()) + " and " + to_string(B.shape()));
  }
  std::vector<double> data(A.values());
  data.insert(data.end(), B.values().begin(), B.values().end());
  const std::size_t na = A.size();
  Tensor out(Shape{A.shape()[0] + B.shape()[0], A.shape()[1]}, std::move(data));
  return a.tape().record("concat_rows", std::move(out), {a, b},
                         [na](std::span<const double> g, std::span<const std::span<double>> gin) {
                           if (!gin[0].empty())
                             for (std::size_t i = 0; i < na; ++i) gin[0][i] += g[i];
                           if (!gin[1].empty())
                             for (std::size_t i = 0; i < gin[1].size(); ++i) gin[1][i] += g[na + i];
                         });
}

/// Mean over rows of -log softmax(logits[i])[labels[i]], computed with a
/// max-shifted log-sum-exp. Rows whose target is the largest logit use
/// log1p so small losses keep full relative precision.
inline Var softmax_cross_entropy(const Var& logits, std::span<const std::size_t> labels) {
  const Tensor& Z = logits.value();
  detail::require_labels("softmax_cross_entropy", Z, labels);
  const std::size_t rows = Z.shape()[0], cols = Z.shape()[1];
  if (rows == 0) throw DimensionError("softmax_cross_entropy: empty batch");
  Tensor probs(Shape{rows, cols});
  // 1 - p_target, summed from the other classes.
  std::vector<double> rest(rows);
  double total = 0.0;
  for (std::size_t i = 0; i < rows; ++i) {
    const auto z = Z.row(i);
    const std::size_t y = labels[i];
    const double shift = *std::max_element(z.begin(), z.end());
    double denom = 0.0, others = 0.0;
    for (std::size_t j = 0; j < cols; ++j) {
      probs(i, j) = std::exp(z[j] - shift);
      denom += probs(i, j);
      if (j != y) others += probs(i, j);
    }
    for (std::size_t j = 0; j < cols; ++j) probs(i, j) /= denom;
    rest[i] = others / denom;
    total += z[y] == shift ? std::log1p(others) : std::log(denom) + shift - z[y];
  }
  std::vector<std::size_t> idx(labels.begin(), labels.end());
  return logits.tape().record(
      "softmax_cross_entropy", Tensor::scalar(total / static_cast<double>(rows)), {logits},
      [rows, cols, probs = std::move(probs), rest = std::move(rest), idx = std::move(idx)](
          std::span<const double> g, std::span<const std::span<double>> gin) {
        const double scale = g[0] / static_cast<double>(rows);
        for (std::size_t i = 0; i < rows; ++i)
          for (std::size_t j = 0; j < cols; ++j)
            gin[0][i * cols + j] += scale * (j == idx[i] ? -rest[i] : probs(i, j));
      });
}

}  // namespace spherehead::nd
