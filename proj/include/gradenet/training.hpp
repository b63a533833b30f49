#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "gradenet/augment.hpp"
#include "gradenet/network.hpp"
#include "gradenet/sample.hpp"

namespace gradenet {

// ---------------------------------------------------------------------------
// Loss

struct LossResult {
  double loss = 0.0;
  std::vector<double> grad;  // dL/df per prediction
};

inline constexpr double kPredictionClamp = 1e-7;

/// Mean binary cross-entropy over n predictions, clamped into [eps, 1-eps].
template <class T>
LossResult bce_loss(std::span<const T> predictions, std::span<const int> labels, double eps = kPredictionClamp) {
  if (predictions.empty()) throw ShapeError("bce_loss on an empty batch");
  if (predictions.size() != labels.size())
    throw ShapeError("bce_loss: " + std::to_string(predictions.size()) + " predictions for " +
                     std::to_string(labels.size()) + " labels");
  const double n = static_cast<double>(predictions.size());
  LossResult r;
  r.grad.resize(predictions.size());
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const int y = labels[i];
    if (y != 0 && y != 1) throw DataError("bce_loss label must be 0 or 1, got " + std::to_string(y));
    const double f = std::clamp(static_cast<double>(predictions[i]), eps, 1.0 - eps);
    r.loss -= y ? std::log(f) : std::log(1.0 - f);
    r.grad[i] = (f - y) / (n * f * (1.0 - f));
  }
  r.loss /= n;
  return r;
}

// ---------------------------------------------------------------------------
// Optimizer

/// v <- momentum * v - lr * g;  p <- p + v
template <class T>
void momentum_update(std::span<T> param, std::span<const T> grad, std::span<T> velocity, double lr, double momentum) {
  if (param.size() != grad.size() || param.size() != velocity.size())
    throw ShapeError("momentum update: parameter, gradient and velocity lengths differ");
  const T m = static_cast<T>(momentum), a = static_cast<T>(lr);
  for (std::size_t i = 0; i < param.size(); ++i) {
    velocity[i] = m * velocity[i] - a * grad[i];
    param[i] += velocity[i];
  }
}

/// Per-layer trainable flags, in Network::all_layers() order.
struct FreezeMask {
  std::vector<bool> trainable;

  template <class T>
  static FreezeMask of(Network<T>& net) {
    FreezeMask m;
    for (auto* l : net.all_layers()) m.trainable.push_back(l->trainable);
    return m;
  }
};

template <class T>
struct OptimizerState {
  std::vector<std::vector<Tensor<T>>> velocity;  // per layer, per parameter

  static OptimizerState zeros_like(Network<T>& net) {
    OptimizerState s;
    for (auto* l : net.all_layers()) {
      auto& v = s.velocity.emplace_back();
      for (auto* p : l->parameters()) v.emplace_back(p->value.shape());
    }
    return s;
  }
};

/// One SGD-with-momentum step over every layer the mask marks trainable.
/// Frozen parameters and their velocities are left untouched.
template <class T>
void sgd_momentum_step(Network<T>& net, OptimizerState<T>& state, double lr, double momentum,
                       const FreezeMask& mask) {
  auto layers = net.all_layers();
  if (mask.trainable.size() != layers.size() || state.velocity.size() != layers.size())
    throw ShapeError("optimizer state or freeze mask does not match the network layout");
  for (std::size_t li = 0; li < layers.size(); ++li) {
    if (!mask.trainable[li]) continue;
    auto params = layers[li]->parameters();
    if (params.size() != state.velocity[li].size())
      throw ShapeError("optimizer state does not match layer " + layers[li]->name);
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
      auto* p = params[pi];
      auto& v = state.velocity[li][pi];
      if (p->grad.shape() != p->value.shape() || v.shape() != p->value.shape())
        throw ShapeError("shape mismatch in " + layers[li]->name + "." + p->name + ": parameter " +
                         to_string(p->value.shape()) + ", gradient " + to_string(p->grad.shape()) +
                         ", velocity " + to_string(v.shape()));
      momentum_update<T>(p->value.data(), std::span<const T>(p->grad.data()), v.data(), lr, momentum);
    }
  }
}

// ---------------------------------------------------------------------------
// Configuration and logs

struct TrainConfig {
  double learning_rate = 0.001;
  double momentum = 0.9;
  std::size_t batch_size = 32;
  std::size_t epochs = 10;
  double validation_fraction = 0.20;
  std::uint64_t seed = 42;
  bool augment = true;
  bool dropout = true;
  AugmentPolicy policy{};

  void validate() const {
    if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
    if (batch_size == 0) throw ConfigError("batch_size must be positive");
    if (epochs == 0) throw ConfigError("epochs must be positive");
    if (!(validation_fraction >= 0.0 && validation_fraction < 1.0))
      throw ConfigError("validation_fraction must lie in [0, 1)");
    policy.validate();
  }
};

inline constexpr double kFineTuneLearningRate = 1e-4;

struct EpochRow {
  std::size_t epoch = 0;
  double train_loss = 0, train_acc = 0;
  double val_loss = NAN, val_acc = NAN;

  friend bool operator==(const EpochRow&, const EpochRow&) = default;
};

using EpochLog = std::vector<EpochRow>;

inline std::string epoch_log_csv(const EpochLog& log) {
  std::ostringstream os;
  os << "epoch,train_loss,train_acc,val_loss,val_acc\n";
  char buf[160];
  for (const auto& r : log) {
    std::snprintf(buf, sizeof buf, "%zu,%.9g,%.9g,%.9g,%.9g\n", r.epoch, r.train_loss, r.train_acc, r.val_loss,
                  r.val_acc);
    os << buf;
  }
  return os.str();
}

inline void write_epoch_log(const std::filesystem::path& path, const EpochLog& log) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw DataError("cannot write " + path.string());
  os << epoch_log_csv(log);
}

// ---------------------------------------------------------------------------
// Validation split

/// Patient-level split: round(fraction * patients) patients, chosen by a
/// seeded shuffle of the sorted ids, go to the validation side. Item order is
/// preserved on both sides.
template <class Item>
std::pair<std::vector<Item>, std::vector<Item>> split_train_val(const std::vector<Item>& items, double fraction,
                                                                std::uint64_t seed) {
  if (!(fraction >= 0.0 && fraction < 1.0)) throw ConfigError("validation fraction must lie in [0, 1)");
  auto ids = patient_ids(items);
  const auto n_val = static_cast<std::size_t>(std::lround(fraction * static_cast<double>(ids.size())));
  if (!ids.empty() && n_val >= ids.size())
    throw ConfigError("validation fraction " + std::to_string(fraction) + " leaves no training patients");
  Rng rng(derive_seed(seed, {0x5b117}));
  std::shuffle(ids.begin(), ids.end(), rng);
  const std::set<std::string> val_ids(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_val));
  std::pair<std::vector<Item>, std::vector<Item>> out;
  for (const auto& it : items) (val_ids.count(it.patient_id) ? out.second : out.first).push_back(it);
  return out;
}

// ---------------------------------------------------------------------------
// Training loop

namespace detail {

inline void check_binary_output(Network<float>& net) {
  const auto& head = net.spec().head;
  if (head.empty() || head.back().kind != LayerKind::sigmoid)
    throw ConfigError(net.spec().name + " must end in a sigmoid output");
  if (symbolic_trace(net.spec()).head.back().shape != Shape{1})
    throw ConfigError(net.spec().name + " must produce a single probability");
}

// Batch tensors per branch for the given sample indices.
inline std::vector<Tensor<float>> assemble_batch(const Dataset& data, std::span<const std::size_t> idx,
                                                 const TrainConfig* augment_cfg, std::size_t epoch) {
  const std::size_t branches = data[idx.front()].inputs.size();
  std::vector<Tensor<float>> batch;
  for (std::size_t b = 0; b < branches; ++b) {
    std::vector<Tensor<float>> items;
    std::vector<const Tensor<float>*> ptrs;
    items.reserve(idx.size());
    for (auto i : idx) {
      const auto& s = data[i];
      if (s.inputs.size() != branches) throw ShapeError("samples disagree on branch count");
      if (augment_cfg) {
        Rng rng(derive_seed(augment_cfg->seed, {2, epoch, i, b}));
        items.push_back(augment_sample(s.inputs[b], augment_cfg->policy, rng));
      } else {
        items.push_back(s.inputs[b]);
      }
    }
    for (const auto& t : items) ptrs.push_back(&t);
    batch.push_back(stack<float>(ptrs));
  }
  return batch;
}

// Consecutive batches of `size`; a trailing singleton is folded into the
// previous batch because batchnorm cannot train on one sample.
inline std::vector<std::span<const std::size_t>> make_batches(std::span<const std::size_t> order, std::size_t size) {
  std::vector<std::span<const std::size_t>> out;
  for (std::size_t start = 0; start < order.size(); start += size)
    out.push_back(order.subspan(start, std::min(size, order.size() - start)));
  if (out.size() > 1 && out.back().size() == 1) {
    const auto prev = out[out.size() - 2];
    out.pop_back();
    out.back() = order.subspan(prev.data() - order.data(), prev.size() + 1);
  }
  return out;
}

struct EvalStats {
  double loss = NAN, accuracy = NAN;
};

inline EvalStats evaluate_loss(Network<float>& net, const Dataset& data, std::size_t batch_size) {
  if (data.empty()) return {};
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  double loss = 0;
  std::size_t correct = 0;
  Rng rng(0);
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    auto idx = std::span<const std::size_t>(order).subspan(start, std::min(batch_size, order.size() - start));
    auto batch = assemble_batch(data, idx, nullptr, 0);
    Tensor<float> out = net.forward(std::span<const Tensor<float>>(batch), Mode::infer, rng);
    std::vector<int> labels;
    for (auto i : idx) labels.push_back(data[i].label);
    auto r = bce_loss<float>(out.data(), labels);
    loss += r.loss * static_cast<double>(idx.size());
    for (std::size_t q = 0; q < idx.size(); ++q) correct += (out[q] >= 0.5f ? 1 : 0) == labels[q];
  }
  return {loss / static_cast<double>(data.size()), static_cast<double>(correct) / static_cast<double>(data.size())};
}

}  // namespace detail

/// Probability of the positive class for each sample, in inference mode.
inline std::vector<double> predict(Network<float>& net, const Dataset& data, std::size_t batch_size = 32) {
  std::vector<double> out;
  out.reserve(data.size());
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(0);
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    auto idx = std::span<const std::size_t>(order).subspan(start, std::min(batch_size, order.size() - start));
    auto batch = detail::assemble_batch(data, idx, nullptr, 0);
    Tensor<float> y = net.forward(std::span<const Tensor<float>>(batch), Mode::infer, rng);
    for (std::size_t q = 0; q < idx.size(); ++q) out.push_back(y[q]);
  }
  return out;
}

/// Minibatch SGD with momentum on binary cross-entropy. Shuffles each epoch
/// from config.seed, augments training batches when enabled, and validates
/// in inference mode after every epoch.
inline EpochLog train(Network<float>& net, const Dataset& train_set, const Dataset& val_set,
                      const TrainConfig& config) {
  config.validate();
  if (train_set.empty()) throw DataError("cannot assemble batches from an empty training set");
  if (config.batch_size > train_set.size())
    throw ConfigError("batch_size " + std::to_string(config.batch_size) + " exceeds training set size " +
                      std::to_string(train_set.size()));
  detail::check_binary_output(net);
  for (const auto& s : train_set)
    if (s.label != 0 && s.label != 1) throw DataError("training labels must be binary");

  net.set_dropout_enabled(config.dropout);
  auto state = OptimizerState<float>::zeros_like(net);
  const auto mask = FreezeMask::of(net);
  const bool any_trainable = net.trainable_parameter_count() > 0;
  const TrainConfig* augment_cfg = config.augment && config.policy.enabled ? &config : nullptr;

  EpochLog log;
  std::vector<std::size_t> order(train_set.size());
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle_rng(derive_seed(config.seed, {1, epoch}));
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double loss_sum = 0;
    std::size_t correct = 0;
    const auto batches = detail::make_batches(order, config.batch_size);
    for (std::size_t bi = 0; bi < batches.size(); ++bi) {
      const auto idx = batches[bi];
      auto batch = detail::assemble_batch(train_set, idx, augment_cfg, epoch);
      Rng dropout_rng(derive_seed(config.seed, {3, epoch, bi}));
      Tensor<float> out = net.forward(std::span<const Tensor<float>>(batch), Mode::train, dropout_rng);
      std::vector<int> labels;
      for (auto i : idx) labels.push_back(train_set[i].label);
      const auto r = bce_loss<float>(out.data(), labels);
      loss_sum += r.loss * static_cast<double>(idx.size());
      for (std::size_t q = 0; q < idx.size(); ++q) correct += (out[q] >= 0.5f ? 1 : 0) == labels[q];
      if (!any_trainable) continue;
      Tensor<float> grad(out.shape());
      for (std::size_t q = 0; q < idx.size(); ++q) grad[q] = static_cast<float>(r.grad[q]);
      net.backward(grad);
      sgd_momentum_step(net, state, config.learning_rate, config.momentum, mask);
    }
    EpochRow row;
    row.epoch = epoch;
    row.train_loss = loss_sum / static_cast<double>(train_set.size());
    row.train_acc = static_cast<double>(correct) / static_cast<double>(train_set.size());
    const auto v = detail::evaluate_loss(net, val_set, config.batch_size);
    row.val_loss = v.loss;
    row.val_acc = v.accuracy;
    log.push_back(row);
  }
  return log;
}

// ---------------------------------------------------------------------------
// Transfer learning

/// Replaces the last dense layer of the head with a freshly initialized
/// single-neuron layer (feeding the sigmoid output) and freezes every layer
/// strictly before trunk position `freeze_boundary`.
template <class T>
Network<T> apply_transfer(const Network<T>& source, std::size_t freeze_boundary, std::uint64_t seed) {
  Network<T> net = source;
  if (freeze_boundary > net.depth())
    throw ConfigError("freeze boundary " + std::to_string(freeze_boundary) + " beyond last layer (depth " +
                      std::to_string(net.depth()) + ")");
  const auto& head = net.spec().head;
  std::size_t pos = head.size();
  for (std::size_t i = head.size(); i-- > 0;)
    if (head[i].kind == LayerKind::dense) {
      pos = i;
      break;
    }
  if (pos == head.size()) throw ConfigError(net.spec().name + " has no dense layer to replace");
  if (pos + 1 >= head.size() || head[pos + 1].kind != LayerKind::sigmoid)
    throw ConfigError(net.spec().name + ": replaced dense layer must feed the sigmoid output");
  auto& old = dynamic_cast<DenseLayer<T>&>(net.head_layer(pos));
  auto fresh = std::make_unique<DenseLayer<T>>(old.inputs(), 1);
  Rng rng(seed);
  fresh->initialize(rng);
  fresh->name = old.name;
  LayerSpec spec = head[pos];
  spec.units = 1;
  net.replace_head_layer(pos, std::move(fresh), spec);
  net.freeze_before(freeze_boundary);
  return net;
}

}  // namespace gradenet
