#pragma once

// Classification heads: cosine logits and the angular-margin objectives
// (multiplicative angular, additive cosine, additive angular, and the
// queue-broadened additive angular variant) next to plain cross-entropy.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <deque>
#include <numbers>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "spherehead/errors.hpp"
#include "spherehead/ndcore.hpp"

namespace spherehead::heads {

/// Cosines are clamped into [-1 + kCosineClamp, 1 - kCosineClamp] before acos.
inline constexpr double kCosineClamp = 1e-12;

enum class Family { cce, sphereface, cosface, arcface, broadface };

inline constexpr Family kAllFamilies[] = {Family::cce, Family::sphereface, Family::cosface, Family::arcface,
                                          Family::broadface};

inline std::string_view to_string(Family f) {
  switch (f) {
    case Family::cce: return "cce";
    case Family::sphereface: return "sphereface";
    case Family::cosface: return "cosface";
    case Family::arcface: return "arcface";
    case Family::broadface: return "broadface";
  }
  return "?";
}

/// Display name used in report tables.
inline std::string_view display_name(Family f) {
  switch (f) {
    case Family::cce: return "CCE";
    case Family::sphereface: return "SphereFace";
    case Family::cosface: return "CosFace";
    case Family::arcface: return "ArcFace";
    case Family::broadface: return "BroadFace";
  }
  return "?";
}

inline Family parse_family(std::string_view name) {
  for (Family f : kAllFamilies)
    if (to_string(f) == name) return f;
  throw ConfigError("unknown loss family '" + std::string(name) + "'");
}

inline bool is_angular(Family f) { return f != Family::cce; }

/// Loss family plus its hyperparameters.
struct MarginConfig {
  Family family = Family::cce;
  /// Integer multiplier for sphereface, additive margin otherwise.
  double m = 0.0;
  /// Logit scale for cosface, arcface and broadface.
  double s = 8.0;
  /// broadface only; zero disables the queue.
  std::size_t queue_capacity = 0;
  /// Keeps the target logit decreasing in theta: piecewise psi for
  /// sphereface, -cos(theta + m) - 2 beyond pi for arcface and broadface.
  /// false uses cos(m theta) / cos(theta + m) verbatim.
  bool use_monotone_psi = true;

  static MarginConfig defaults(Family f) {
    MarginConfig cfg;
    cfg.family = f;
    switch (f) {
      case Family::cce: break;
      case Family::sphereface: cfg.m = 2.0; break;
      case Family::cosface: cfg.m = 0.35; break;
      case Family::arcface: cfg.m = 0.5; break;
      case Family::broadface:
        cfg.m = 0.5;
        cfg.queue_capacity = 32;
        break;
    }
    return cfg;
  }

  void validate() const {
    if (!(s > 0.0) || !std::isfinite(s)) throw ConfigError("scale s must be positive, got " + std::to_string(s));
    switch (family) {
      case Family::cce: break;
      case Family::sphereface:
        if (m != std::floor(m) || m < 1.0 || m > 4.0) {
          throw ConfigError("sphereface needs an integer margin m in {1,2,3,4}, got " + std::to_string(m));
        }
        break;
      case Family::cosface:
      case Family::arcface:
      case Family::broadface:
        if (!(m >= 0.0 && m <= 1.0)) {
          throw ConfigError(std::string(to_string(family)) + " needs m in [0, 1], got " + std::to_string(m));
        }
        break;
    }
    if (queue_capacity != 0 && family != Family::broadface) {
      throw ConfigError("queue capacity applies only to broadface");
    }
  }
};

/// Classifier weights, one column per class. Columns are normalized inside
/// the cosine computation; the raw matrix is what the optimizer updates.
struct HeadWeights {
  nd::Tensor W;

  std::size_t dim() const { return W.shape()[0]; }
  std::size_t classes() const { return W.shape()[1]; }

  std::vector<double> column(std::size_t c) const {
    std::vector<double> col(dim());
    for (std::size_t r = 0; r < dim(); ++r) col[r] = W(r, c);
    return col;
  }
};

namespace detail {

inline void require_head_dims(const nd::Var& features, const nd::Var& weights) {
  const auto& f = features.value();
  const auto& w = weights.value();
  if (f.rank() != 2 || w.rank() != 2 || f.shape()[1] != w.shape()[0]) {
    throw DimensionError("head: features " + nd::to_string(f.shape()) + " do not match weights " +
                         nd::to_string(w.shape()));
  }
}

inline void require_family(const MarginConfig& cfg, Family expected) {
  if (cfg.family != expected) {
    throw ConfigError("expected a " + std::string(to_string(expected)) + " config, got " +
                      std::string(to_string(cfg.family)));
  }
  cfg.validate();
}

inline nd::Var target_angles(const nd::Var& cosines, std::span<const std::size_t> labels) {
  return nd::acos(nd::clamp(nd::gather(cosines, labels), -1.0 + kCosineClamp, 1.0 - kCosineClamp));
}

}  // namespace detail

/// cos(theta) between every feature row and every (normalized) weight column, [B x C].
inline nd::Var cosine_logits(const nd::Var& features, const nd::Var& weights) {
  detail::require_head_dims(features, weights);
  return nd::matmul(nd::normalize_rows(features), nd::normalize_cols(weights));
}

/// Mean softmax cross-entropy over given logits.
inline nd::Var cce_loss(const nd::Var& logits, std::span<const std::size_t> labels) {
  return nd::softmax_cross_entropy(logits, labels);
}

namespace detail {

/// (-1)^k cos(phi) - 2k on [k pi, (k + 1) pi], k clamped to [0, k_max].
inline nd::Var extended_cos(const nd::Var& phi, int k_max) {
  const auto& t = phi.value();
  nd::Tensor out(t.shape());
  std::vector<int> ks(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) {
    const int k = std::clamp(static_cast<int>(std::floor(t[i] / std::numbers::pi)), 0, k_max);
    ks[i] = k;
    out[i] = (k % 2 == 0 ? 1.0 : -1.0) * std::cos(t[i]) - 2.0 * k;
  }
  return phi.tape().record("extended_cos", std::move(out), {phi},
                           [phi, ks = std::move(ks)](std::span<const double> g, std::span<const std::span<double>> gin) {
                             const auto& t = phi.value();
                             for (std::size_t i = 0; i < t.size(); ++i) {
                               const double sign = ks[i] % 2 == 0 ? 1.0 : -1.0;
                               gin[0][i] -= g[i] * sign * std::sin(t[i]);
                             }
                           });
}

}  // namespace detail

/// psi(theta) = (-1)^k cos(m theta) - 2k on [k pi / m, (k + 1) pi / m]:
/// continuous and decreasing over [0, pi], equal to cos(m theta) for k = 0.
inline nd::Var monotone_psi(const nd::Var& theta, int m) {
  return detail::extended_cos(theta * static_cast<double>(m), m - 1);
}

/// Multiplicative angular margin: target logit |x_i| psi(m theta_{y_i}),
/// other logits |x_i| cos(theta_j), with |x_i| the raw feature norm.
inline nd::Var sphereface_loss(const nd::Var& features, const nd::Var& weights, const MarginConfig& cfg,
                               std::span<const std::size_t> labels) {
  detail::require_family(cfg, Family::sphereface);
  const int m = static_cast<int>(cfg.m);
  const nd::Var cosines = cosine_logits(features, weights);
  const nd::Var theta = detail::target_angles(cosines, labels);
  const nd::Var target = cfg.use_monotone_psi ? monotone_psi(theta, m) : nd::cos(theta * static_cast<double>(m));
  const nd::Var logits = nd::scale_rows(nd::scatter(cosines, labels, target), nd::row_norms(features));
  return cce_loss(logits, labels);
}

/// Additive cosine margin: target logit s (cos theta_{y_i} - m).
inline nd::Var cosface_loss(const nd::Var& features, const nd::Var& weights, const MarginConfig& cfg,
                            std::span<const std::size_t> labels) {
  detail::require_family(cfg, Family::cosface);
  const nd::Var cosines = cosine_logits(features, weights);
  const nd::Var target = nd::gather(cosines, labels) - cfg.m;
  return cce_loss(nd::scatter(cosines, labels, target) * cfg.s, labels);
}

namespace detail {

inline nd::Var additive_angular(const nd::Var& features, const nd::Var& weights, const MarginConfig& cfg,
                                std::span<const std::size_t> labels) {
  const nd::Var cosines = cosine_logits(features, weights);
  const nd::Var phi = target_angles(cosines, labels) + cfg.m;
  const nd::Var target = cfg.use_monotone_psi ? extended_cos(phi, 1) : nd::cos(phi);
  return cce_loss(nd::scatter(cosines, labels, target) * cfg.s, labels);
}

}  // namespace detail

/// Additive angular margin: target logit s cos(theta_{y_i} + m). Past
/// theta + m = pi the monotone form continues as -cos(theta + m) - 2.
inline nd::Var arcface_loss(const nd::Var& features, const nd::Var& weights, const MarginConfig& cfg,
                            std::span<const std::size_t> labels) {
  detail::require_family(cfg, Family::arcface);
  return detail::additive_angular(features, weights, cfg, labels);
}

/// Past embedding kept by the broadface queue, with the class weight column
/// as it was when the embedding was enqueued.
struct QueueEntry {
  std::vector<double> embedding;
  std::size_t label = 0;
  std::vector<double> snapshot_weight;
};

/// Bounded FIFO of detached embeddings.
class EmbeddingQueue {
 public:
  explicit EmbeddingQueue(std::size_t capacity = 0) : capacity_(capacity) {}

  std::size_t capacity() const noexcept { return capacity_; }
  std::size_t size() const noexcept { return entries_.size(); }
  bool empty() const noexcept { return entries_.empty(); }
  const std::deque<QueueEntry>& entries() const noexcept { return entries_; }

  void push(QueueEntry entry) {
    if (capacity_ == 0) return;
    if (!entries_.empty() && (entry.embedding.size() != entries_.front().embedding.size() ||
                              entry.snapshot_weight.size() != entry.embedding.size())) {
      throw StateError("queue entry of dimension " + std::to_string(entry.embedding.size()) +
                       " does not match queued dimension " + std::to_string(entries_.front().embedding.size()));
    }
    entries_.push_back(std::move(entry));
    while (entries_.size() > capacity_) entries_.pop_front();
  }

  void clear() noexcept { entries_.clear(); }

 private:
  std::size_t capacity_;
  std::deque<QueueEntry> entries_;
};

/// b* = b + (|b| / |W_snapshot|) (W_current - W_snapshot): shifts a stale
/// embedding by the drift of its class weight, rescaled to the embedding's norm.
inline std::vector<double> compensate(const QueueEntry& entry, std::span<const double> current_weight) {
  const auto& b = entry.embedding;
  const auto& snap = entry.snapshot_weight;
  if (current_weight.size() != b.size() || snap.size() != b.size()) {
    throw StateError("compensate: dimension mismatch between embedding, snapshot and current weight");
  }
  double bn = 0.0, sn = 0.0;
  for (std::size_t i = 0; i < b.size(); ++i) {
    bn += b[i] * b[i];
    sn += snap[i] * snap[i];
  }
  if (sn == 0.0) throw DegenerateInputError("compensate: zero-norm snapshot weight");
  const double ratio = std::sqrt(bn) / std::sqrt(sn);
  std::vector<double> out(b.size());
  for (std::size_t i = 0; i < b.size(); ++i) out[i] = b[i] + ratio * (current_weight[i] - snap[i]);
  return out;
}

/// Additive angular loss averaged over the batch and the compensated queue,
/// (sum_X l(b_i) + sum_E l(b*_j)) / (|X| + |E|). Queued embeddings are
/// constants: they send gradient to the weights only. Afterwards the batch
/// embeddings (detached) and their current class columns are enqueued.
inline nd::Var broadface_step(const nd::Var& features, const nd::Var& weights, const MarginConfig& cfg,
                              std::span<const std::size_t> labels, EmbeddingQueue& queue) {
  detail::require_family(cfg, Family::broadface);
  detail::require_head_dims(features, weights);
  const nd::Tensor& F = features.value();
  const nd::Tensor& W = weights.value();
  const std::size_t d = F.shape()[1], classes = W.shape()[1];
  auto column = [&](std::size_t c) {
    std::vector<double> col(d);
    for (std::size_t r = 0; r < d; ++r) col[r] = W(r, c);
    return col;
  };

  nd::Var loss;
  if (queue.empty()) {
    loss = detail::additive_angular(features, weights, cfg, labels);
  } else {
    const std::size_t q = queue.size();
    std::vector<double> past;
    past.reserve(q * d);
    std::vector<std::size_t> all_labels(labels.begin(), labels.end());
    for (const QueueEntry& e : queue.entries()) {
      if (e.embedding.size() != d || e.snapshot_weight.size() != d) {
        throw StateError("broadface queue holds " + std::to_string(e.embedding.size()) +
                         "-dim entries but features are " + std::to_string(d) + "-dim");
      }
      if (e.label >= classes) throw StateError("broadface queue entry label exceeds class count");
      const auto b_star = compensate(e, column(e.label));
      past.insert(past.end(), b_star.begin(), b_star.end());
      all_labels.push_back(e.label);
    }
    const nd::Var queued = features.tape().constant(nd::Tensor(nd::Shape{q, d}, std::move(past)));
    loss = detail::additive_angular(nd::concat_rows(features, queued), weights, cfg, all_labels);
  }

  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto row = F.row(i);
    queue.push(QueueEntry{std::vector<double>(row.begin(), row.end()), labels[i], column(labels[i])});
  }
  return loss;
}

/// Dispatches to the loss of `cfg.family`. cce uses raw linear logits
/// features * W. broadface without a queue behaves as with an empty one and
/// keeps no state.
inline nd::Var head_forward(const nd::Var& features, const nd::Var& weights, const MarginConfig& cfg,
                            std::span<const std::size_t> labels, EmbeddingQueue* queue = nullptr) {
  cfg.validate();
  switch (cfg.family) {
    case Family::cce:
      detail::require_head_dims(features, weights);
      return cce_loss(nd::matmul(features, weights), labels);
    case Family::sphereface: return sphereface_loss(features, weights, cfg, labels);
    case Family::cosface: return cosface_loss(features, weights, cfg, labels);
    case Family::arcface: return arcface_loss(features, weights, cfg, labels);
    case Family::broadface: {
      if (queue) return broadface_step(features, weights, cfg, labels, *queue);
      EmbeddingQueue scratch(0);
      return broadface_step(features, weights, cfg, labels, scratch);
    }
  }
  throw ConfigError("unhandled loss family");
}

/// Inference scores: raw linear logits for cce, plain cosines (no margin)
/// for every angular family.
inline nd::Tensor head_scores(const nd::Tensor& features, const nd::Tensor& weights, Family family) {
  nd::Tape tape;
  const nd::Var f = tape.constant(features);
  const nd::Var w = tape.constant(weights);
  if (family == Family::cce) {
    detail::require_head_dims(f, w);
    return nd::detach(nd::matmul(f, w));
  }
  return nd::detach(cosine_logits(f, w));
}

}  // namespace spherehead::heads
