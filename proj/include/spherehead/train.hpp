#pragma once

// MLP encoder with optional stereographic projection, momentum SGD, and the
// fit/evaluate loop.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <numeric>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "spherehead/data.hpp"
#include "spherehead/errors.hpp"
#include "spherehead/heads.hpp"
#include "spherehead/ndcore.hpp"
#include "spherehead/random.hpp"
#include "spherehead/stereo.hpp"

namespace spherehead::train {

struct ModelConfig {
  /// Hidden widths, each followed by ReLU.
  std::vector<std::size_t> hidden{512, 256};
  /// Encoder output width before projection.
  std::size_t feature_dim = 16;
  bool projection = true;
  heads::MarginConfig margin;

  /// Width of the features the head sees.
  std::size_t head_dim() const { return feature_dim + (projection ? 1 : 0); }

  void validate() const {
    for (std::size_t w : hidden)
      if (w == 0) throw ConfigError("hidden widths must be positive");
    if (feature_dim == 0) throw ConfigError("feature_dim must be positive");
    margin.validate();
  }
};

struct OptimConfig {
  double learning_rate = 1e-3;
  double momentum = 0.92;
  std::size_t batch_size = 128;
  std::size_t epochs = 300;
  std::uint64_t seed = 0;
  /// Stop when the epoch loss improved by less than plateau_tolerance
  /// (relative) over the last plateau_window epochs. 0 disables.
  std::size_t plateau_window = 10;
  double plateau_tolerance = 1e-4;

  void validate() const {
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) throw ConfigError("learning rate must be >= 0");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
    if (batch_size == 0) throw ConfigError("batch size must be positive");
  }
};

/// 1e-3 for cce, 1e-4 for the margin families.
inline double default_learning_rate(heads::Family family) {
  return family == heads::Family::cce ? 1e-3 : 1e-4;
}

struct DenseLayer {
  nd::Tensor weight;  // [in x out]
  nd::Tensor bias;    // [out]
};

class Model {
 public:
  Model(ModelConfig cfg, std::size_t input_dim, std::vector<DenseLayer> layers, heads::HeadWeights head)
      : cfg_(std::move(cfg)), input_dim_(input_dim), layers_(std::move(layers)), head_(std::move(head)) {}

  const ModelConfig& config() const noexcept { return cfg_; }
  std::size_t input_dim() const noexcept { return input_dim_; }
  std::size_t class_count() const { return head_.classes(); }
  const std::vector<DenseLayer>& layers() const noexcept { return layers_; }
  const heads::HeadWeights& head() const noexcept { return head_; }
  nd::Tensor& head_weights() noexcept { return head_.W; }

  /// Trainable tensors: layer weights and biases in order, then the head.
  std::vector<nd::Tensor*> parameters() {
    std::vector<nd::Tensor*> out;
    for (auto& l : layers_) {
      out.push_back(&l.weight);
      out.push_back(&l.bias);
    }
    out.push_back(&head_.W);
    return out;
  }

  /// Encoder (and projection) output recorded on `tape` with parameters watched.
  nd::Var features(nd::Tape& tape, const nd::Var& x) {
    nd::Var h = x;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      h = nd::add_row(nd::matmul(h, tape.watch(layers_[i].weight)), tape.watch(layers_[i].bias));
      if (i + 1 < layers_.size()) h = nd::relu(h);
    }
    return cfg_.projection ? stereo::project_batch(h) : h;
  }

  /// Head input features for every row of `x`, without gradients.
  nd::Tensor embed(const nd::Tensor& x) const {
    nd::Tape tape;
    nd::Var h = tape.constant(x);
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      h = nd::add_row(nd::matmul(h, tape.constant(layers_[i].weight)), tape.constant(layers_[i].bias));
      if (i + 1 < layers_.size()) h = nd::relu(h);
    }
    if (cfg_.projection) h = stereo::project_batch(h);
    return nd::detach(h);
  }

 private:
  ModelConfig cfg_;
  std::size_t input_dim_;
  std::vector<DenseLayer> layers_;
  heads::HeadWeights head_;
};

namespace detail {

// He-style uniform: U(-sqrt(6 / fan_in), sqrt(6 / fan_in)).
inline nd::Tensor he_uniform(Rng& rng, std::size_t fan_in, std::size_t fan_out) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  nd::Tensor w(nd::Shape{fan_in, fan_out});
  for (double& v : w.data()) v = rng.uniform(-bound, bound);
  w.set_requires_grad(true);
  return w;
}

}  // namespace detail

/// Encoder input -> hidden... -> feature_dim (linear), then the head weights
/// [head_dim x class_count]. Biases start at zero.
inline Model build_model(const ModelConfig& cfg, std::size_t input_dim, std::size_t class_count,
                         std::uint64_t seed) {
  cfg.validate();
  if (input_dim == 0 || class_count == 0) throw ConfigError("input dim and class count must be positive");
  Rng rng(seed);
  std::vector<DenseLayer> layers;
  std::size_t fan_in = input_dim;
  std::vector<std::size_t> widths = cfg.hidden;
  widths.push_back(cfg.feature_dim);
  for (std::size_t w : widths) {
    nd::Tensor bias(nd::Shape{w});
    bias.set_requires_grad(true);
    layers.push_back({detail::he_uniform(rng, fan_in, w), std::move(bias)});
    fan_in = w;
  }
  heads::HeadWeights head{detail::he_uniform(rng, cfg.head_dim(), class_count)};
  return Model(cfg, input_dim, std::move(layers), std::move(head));
}

/// Per-parameter velocity buffers, allocated on first use.
struct MomentumState {
  std::vector<std::vector<double>> velocity;
};

/// Heavy-ball momentum: v <- momentum v + g; p <- p - lr v. Parameters
/// without a gradient buffer are treated as having a zero gradient.
inline void sgd_step(std::span<nd::Tensor* const> params, MomentumState& state, const OptimConfig& opt) {
  if (state.velocity.empty()) {
    for (const nd::Tensor* p : params) state.velocity.emplace_back(p->size(), 0.0);
  }
  if (state.velocity.size() != params.size()) {
    throw StateError("momentum state holds " + std::to_string(state.velocity.size()) + " buffers for " +
                     std::to_string(params.size()) + " parameters");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    nd::Tensor& p = *params[i];
    auto& v = state.velocity[i];
    if (v.size() != p.size()) throw StateError("momentum buffer " + std::to_string(i) + " has the wrong size");
    const auto& g = p.grad();
    auto data = p.data();
    for (std::size_t k = 0; k < v.size(); ++k) {
      v[k] = opt.momentum * v[k] + (g ? (*g)[k] : 0.0);
      data[k] -= opt.learning_rate * v[k];
    }
  }
}

struct EpochStats {
  std::size_t epoch = 0;
  double loss = 0.0;
  double train_accuracy = 0.0;
};

/// Entry 0 is the loss and accuracy of the untrained model on the full
/// training set; entry e > 0 averages the mini-batches of epoch e.
struct History {
  std::vector<EpochStats> epochs;
  bool early_stopped = false;
};

/// Called after each mini-batch forward pass with the head input features.
using StepObserver = std::function<void(std::size_t epoch, std::size_t batch, const nd::Tensor& features)>;

namespace detail {

inline std::size_t argmax_row(std::span<const double> row) {
  std::size_t best = 0;
  for (std::size_t j = 1; j < row.size(); ++j)
    if (row[j] > row[best]) best = j;
  return best;
}

inline std::size_t count_correct(const nd::Tensor& scores, std::span<const std::size_t> labels) {
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (argmax_row(scores.row(i)) == labels[i]) ++correct;
  return correct;
}

inline void check_dataset(const Model& model, const data::Dataset& ds) {
  ds.validate();
  if (ds.size() == 0) throw ConfigError("dataset '" + ds.name + "' is empty");
  if (ds.dim() != model.input_dim()) {
    throw DimensionError("dataset '" + ds.name + "' has " + std::to_string(ds.dim()) + " features, model expects " +
                         std::to_string(model.input_dim()));
  }
  if (ds.class_count > model.class_count()) {
    throw DimensionError("dataset '" + ds.name + "' has " + std::to_string(ds.class_count) +
                         " classes, model has " + std::to_string(model.class_count()));
  }
}

}  // namespace detail

/// Mini-batch training for opt.epochs epochs with a fresh shuffle per
/// epoch. The broadface queue persists across all steps of the run. A
/// non-finite loss aborts with TrainingError.
inline History fit(Model& model, const data::Dataset& train, const OptimConfig& opt,
                   const StepObserver& observer = {}) {
  opt.validate();
  detail::check_dataset(model, train);
  const heads::MarginConfig& margin = model.config().margin;
  const auto params = model.parameters();
  heads::EmbeddingQueue queue(margin.family == heads::Family::broadface ? margin.queue_capacity : 0);
  MomentumState state;
  History history;
  std::vector<double> trajectory;

  {
    nd::Tape tape;
    const nd::Var f = model.features(tape, tape.constant(train.features));
    const nd::Var loss = heads::head_forward(f, tape.watch(model.head_weights()), margin, train.labels);
    const auto scores = heads::head_scores(f.value(), model.head().W, margin.family);
    history.epochs.push_back({0, loss.value().item(),
                              static_cast<double>(detail::count_correct(scores, train.labels)) /
                                  static_cast<double>(train.size())});
  }

  const std::size_t n = train.size();
  std::vector<std::size_t> order(n);
  for (std::size_t epoch = 1; epoch <= opt.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(Rng::mix(opt.seed, epoch));
    rng.shuffle(std::span<std::size_t>(order));

    double loss_sum = 0.0;
    std::size_t correct = 0;
    std::size_t batch_index = 0;
    for (std::size_t start = 0; start < n; start += opt.batch_size, ++batch_index) {
      const std::size_t end = std::min(n, start + opt.batch_size);
      const auto idx = std::span<const std::size_t>(order).subspan(start, end - start);
      const data::Dataset batch = data::select(train, idx);

      nd::Tape tape;
      const nd::Var f = model.features(tape, tape.constant(batch.features));
      const nd::Var w = tape.watch(model.head_weights());
      const auto scores = heads::head_scores(f.value(), model.head().W, margin.family);
      correct += detail::count_correct(scores, batch.labels);
      if (observer) observer(epoch, batch_index, f.value());

      const nd::Var loss = heads::head_forward(f, w, margin, batch.labels, &queue);
      const double value = loss.value().item();
      trajectory.push_back(value);
      if (!std::isfinite(value)) {
        std::ostringstream msg;
        msg << "non-finite loss at epoch " << epoch << ", batch " << batch_index << "; recent losses:";
        const std::size_t from = trajectory.size() > 10 ? trajectory.size() - 10 : 0;
        for (std::size_t i = from; i < trajectory.size(); ++i) msg << ' ' << trajectory[i];
        throw TrainingError(msg.str());
      }
      for (nd::Tensor* p : params) p->clear_grad();
      tape.backward(loss);
      sgd_step(params, state, opt);
      loss_sum += value * static_cast<double>(end - start);
    }
    history.epochs.push_back({epoch, loss_sum / static_cast<double>(n),
                              static_cast<double>(correct) / static_cast<double>(n)});

    if (opt.plateau_window > 0 && epoch >= opt.plateau_window) {
      const double before = history.epochs[epoch - opt.plateau_window].loss;
      const double now = history.epochs[epoch].loss;
      if (before - now < opt.plateau_tolerance * std::abs(before)) {
        history.early_stopped = true;
        break;
      }
    }
  }
  return history;
}

/// Fraction of rows whose argmax score matches the label. Angular families
/// score with plain cosines, so margins never influence predictions.
inline double evaluate(const Model& model, const data::Dataset& ds) {
  detail::check_dataset(model, ds);
  const nd::Tensor f = model.embed(ds.features);
  const nd::Tensor scores = heads::head_scores(f, model.head().W, model.config().margin.family);
  return static_cast<double>(detail::count_correct(scores, ds.labels)) / static_cast<double>(ds.size());
}

}  // namespace spherehead::train
