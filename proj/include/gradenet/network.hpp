#pragma once

#include <algorithm>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gradenet/layers.hpp"

namespace gradenet {

struct LayerSpec {
  LayerKind kind;
  std::size_t units = 0;  // filters for conv2d, neurons for dense
  double rate = 0.0;      // dropout only
  bool trainable = true;
  std::string name;
};

/// Layer descriptors of a network. `branch` is instantiated once per entry of
/// `branch_names`, with independent parameters, each fed an input of shape
/// `input` ([C,H,W]); the flattened branch outputs are concatenated and fed
/// to `head`.
struct NetworkSpec {
  std::string name;
  Shape input;
  std::vector<std::string> branch_names{""};
  std::vector<LayerSpec> branch;
  std::vector<LayerSpec> head;

  std::size_t branch_count() const { return branch_names.size(); }
  std::size_t depth() const { return branch.size() + head.size(); }

  const LayerSpec& at(std::size_t pos) const {
    return pos < branch.size() ? branch.at(pos) : head.at(pos - branch.size());
  }
};

struct TraceEntry {
  std::string name;
  LayerKind kind;
  Shape shape;  // per-sample output shape

  friend bool operator==(const TraceEntry&, const TraceEntry&) = default;
};

struct ShapeTrace {
  std::vector<TraceEntry> branch;  // identical for every branch
  std::size_t merged_width = 0;
  std::vector<TraceEntry> head;

  friend bool operator==(const ShapeTrace&, const ShapeTrace&) = default;
};

/// Output shapes computed from the layer formulas alone.
inline ShapeTrace symbolic_trace(const NetworkSpec& spec) {
  auto step = [](const LayerSpec& l, const Shape& in) -> Shape {
    switch (l.kind) {
      case LayerKind::conv2d:
        if (in.size() != 3) throw ShapeError(l.name + ": conv2d needs [C,H,W], got " + to_string(in));
        return {l.units, conv_output_dim(in[1], 3), conv_output_dim(in[2], 3)};
      case LayerKind::maxpool:
        if (in.size() != 3) throw ShapeError(l.name + ": maxpool needs [C,H,W], got " + to_string(in));
        return {in[0], pool_output_dim(in[1]), pool_output_dim(in[2])};
      case LayerKind::flatten: return {element_count(in)};
      case LayerKind::dense:
        if (in.size() != 1) throw ShapeError(l.name + ": dense needs a flat input, got " + to_string(in));
        return {l.units};
      default: return in;
    }
  };
  if (spec.input.size() != 3) throw ShapeError("network input must be [C,H,W], got " + to_string(spec.input));
  ShapeTrace t;
  Shape s = spec.input;
  try {
    for (const auto& l : spec.branch) {
      s = step(l, s);
      t.branch.push_back({l.name, l.kind, s});
    }
  } catch (const ShapeError& e) {
    throw ShapeError(spec.name + ": input " + to_string(spec.input) + " too small for the layer stack (" +
                     e.what() + ")");
  }
  if (s.size() != 1) throw ShapeError(spec.name + ": branch output must be flat, got " + to_string(s));
  t.merged_width = s[0] * spec.branch_count();
  s = {t.merged_width};
  for (const auto& l : spec.head) {
    s = step(l, s);
    t.head.push_back({l.name, l.kind, s});
  }
  return t;
}

template <class T>
class Network {
 public:
  using LayerPtr = std::unique_ptr<Layer<T>>;

  Network() = default;
  Network(Network&&) noexcept = default;
  Network& operator=(Network&&) noexcept = default;
  Network(const Network& other) : spec_(other.spec_), trace_(other.trace_) {
    for (const auto& b : other.branches_) {
      auto& dst = branches_.emplace_back();
      for (const auto& l : b) dst.push_back(l->clone());
    }
    for (const auto& l : other.head_) head_.push_back(l->clone());
  }
  Network& operator=(const Network& other) {
    if (this != &other) *this = Network(other);
    return *this;
  }

  /// Builds the layers of `spec` with fresh Glorot-uniform weights and zero
  /// biases drawn from `seed`.
  static Network instantiate(const NetworkSpec& spec, std::uint64_t seed) {
    const ShapeTrace trace = symbolic_trace(spec);
    Network net;
    net.spec_ = spec;
    Rng rng(seed);
    for (std::size_t b = 0; b < spec.branch_count(); ++b) {
      auto& layers = net.branches_.emplace_back();
      Shape in = spec.input;
      const std::string prefix = spec.branch_names[b].empty() ? "" : spec.branch_names[b] + ".";
      for (std::size_t i = 0; i < spec.branch.size(); ++i) {
        layers.push_back(make_layer(spec.branch[i], in, rng));
        layers.back()->name = prefix + spec.branch[i].name;
        in = trace.branch[i].shape;
      }
    }
    Shape in{trace.merged_width};
    for (std::size_t i = 0; i < spec.head.size(); ++i) {
      net.head_.push_back(make_layer(spec.head[i], in, rng));
      net.head_.back()->name = spec.head[i].name;
      in = trace.head[i].shape;
    }
    return net;
  }

  const NetworkSpec& spec() const { return spec_; }
  std::size_t branch_count() const { return branches_.size(); }
  std::size_t branch_length() const { return spec_.branch.size(); }
  std::size_t depth() const { return spec_.depth(); }

  /// Layers at a trunk position: one per branch for positions inside the
  /// branches, the single head layer otherwise.
  std::vector<Layer<T>*> layers_at(std::size_t pos) {
    std::vector<Layer<T>*> out;
    if (pos < branch_length()) {
      for (auto& b : branches_) out.push_back(b[pos].get());
    } else {
      out.push_back(head_.at(pos - branch_length()).get());
    }
    return out;
  }

  std::vector<Layer<T>*> all_layers() {
    std::vector<Layer<T>*> out;
    for (auto& b : branches_)
      for (auto& l : b) out.push_back(l.get());
    for (auto& l : head_) out.push_back(l.get());
    return out;
  }

  Layer<T>& branch_layer(std::size_t branch, std::size_t pos) { return *branches_.at(branch).at(pos); }
  Layer<T>& head_layer(std::size_t pos) { return *head_.at(pos); }

  /// Replaces a head layer (used when swapping the classifier).
  void replace_head_layer(std::size_t pos, LayerPtr layer, LayerSpec spec) {
    head_.at(pos) = std::move(layer);
    spec_.head.at(pos) = std::move(spec);
  }

  /// inputs: one [N,C,H,W] tensor per branch. Returns [N, units of last layer].
  Tensor<T> forward(std::span<const Tensor<T>> inputs, Mode mode, Rng& rng) {
    if (inputs.size() != branches_.size())
      throw ShapeError(spec_.name + " expects " + std::to_string(branches_.size()) + " inputs, got " +
                       std::to_string(inputs.size()));
    ShapeTrace trace;
    std::vector<Tensor<T>> outs;
    for (std::size_t b = 0; b < branches_.size(); ++b) {
      const Tensor<T>& x = inputs[b];
      if (x.rank() != 4 || Shape(x.shape().begin() + 1, x.shape().end()) != spec_.input)
        throw ShapeError(spec_.name + " input " + to_string(x.shape()) + " does not match [N]" +
                         to_string(spec_.input));
      Tensor<T> h = x;
      for (std::size_t i = 0; i < branches_[b].size(); ++i) {
        auto& l = branches_[b][i];
        h = l->forward(h, mode, rng);
        if (b == 0)
          trace.branch.push_back({spec_.branch[i].name, l->kind(), Shape(h.shape().begin() + 1, h.shape().end())});
      }
      outs.push_back(std::move(h));
    }
    Tensor<T> h = merge(std::span<const Tensor<T>>(outs));
    trace.merged_width = h.dim(1);
    for (auto& l : head_) {
      h = l->forward(h, mode, rng);
      trace.head.push_back({l->name, l->kind(), Shape(h.shape().begin() + 1, h.shape().end())});
    }
    branch_widths_.clear();
    for (const auto& o : outs) branch_widths_.push_back(o.dim(1));
    trace_ = std::move(trace);
    return h;
  }

  /// Runs layers [0, last_pos] of one branch on a batched input.
  Tensor<T> forward_prefix(std::size_t branch, const Tensor<T>& x, std::size_t last_pos, Mode mode, Rng& rng) {
    if (last_pos >= branch_length())
      throw ConfigError("branch position " + std::to_string(last_pos) + " out of range");
    Tensor<T> h = x;
    for (std::size_t i = 0; i <= last_pos; ++i) h = branches_.at(branch)[i]->forward(h, mode, rng);
    return h;
  }

  /// Backpropagates from the output gradient, filling parameter gradients of
  /// every layer at or above the first trainable position.
  void backward(const Tensor<T>& grad_out) {
    const auto first = first_trainable_position();
    if (!first) return;
    const std::size_t bl = branch_length();
    Tensor<T> g = grad_out;
    for (std::size_t i = head_.size(); i-- > 0;) {
      const std::size_t pos = bl + i;
      if (pos < *first) return;
      g = head_[i]->backward(g, pos > *first);
    }
    if (*first >= bl) return;
    auto parts = merge_backward(g, std::span<const std::size_t>(branch_widths_));
    for (std::size_t b = 0; b < branches_.size(); ++b) {
      Tensor<T> gb = std::move(parts[b]);
      for (std::size_t i = bl; i-- > *first;) gb = branches_[b][i]->backward(gb, i > *first);
    }
  }

  std::vector<Parameter<T>*> parameters() {
    std::vector<Parameter<T>*> out;
    for (auto* l : all_layers())
      for (auto* p : l->parameters()) out.push_back(p);
    return out;
  }

  std::vector<Parameter<T>*> trainable_parameters() {
    std::vector<Parameter<T>*> out;
    for (auto* l : all_layers())
      if (l->trainable)
        for (auto* p : l->parameters()) out.push_back(p);
    return out;
  }

  std::size_t parameter_count() {
    std::size_t n = 0;
    for (auto* p : parameters()) n += p->value.size();
    return n;
  }

  std::size_t trainable_parameter_count() {
    std::size_t n = 0;
    for (auto* p : trainable_parameters()) n += p->value.size();
    return n;
  }

  /// Freezes every layer strictly before trunk position `boundary` and
  /// unfreezes the rest.
  void freeze_before(std::size_t boundary) {
    if (boundary > depth())
      throw ConfigError("freeze boundary " + std::to_string(boundary) + " beyond last layer (depth " +
                        std::to_string(depth()) + ")");
    for (std::size_t pos = 0; pos < depth(); ++pos) {
      const bool trainable = pos >= boundary;
      for (auto* l : layers_at(pos)) l->trainable = trainable;
      (pos < branch_length() ? spec_.branch[pos] : spec_.head[pos - branch_length()]).trainable = trainable;
    }
  }

  void set_dropout_enabled(bool enabled) {
    for (auto* l : all_layers())
      if (auto* d = dynamic_cast<DropoutLayer<T>*>(l)) d->enabled = enabled;
  }

  /// Trunk position of the k-th (1-based) convolution of a branch.
  std::size_t conv_block_position(std::size_t k) const {
    std::size_t seen = 0;
    for (std::size_t i = 0; i < spec_.branch.size(); ++i)
      if (spec_.branch[i].kind == LayerKind::conv2d && ++seen == k) return i;
    throw ConfigError(spec_.name + " has no convolution block " + std::to_string(k));
  }

  /// Shapes observed during the most recent forward pass.
  const ShapeTrace& last_trace() const { return trace_; }

 private:
  std::optional<std::size_t> first_trainable_position() {
    for (std::size_t pos = 0; pos < depth(); ++pos)
      for (auto* l : layers_at(pos))
        if (l->trainable && !l->parameters().empty()) return pos;
    return std::nullopt;
  }

  static LayerPtr make_layer(const LayerSpec& s, const Shape& in, Rng& rng) {
    LayerPtr l;
    switch (s.kind) {
      case LayerKind::conv2d: {
        auto c = std::make_unique<Conv2dLayer<T>>(in.at(0), s.units);
        c->initialize(rng);
        l = std::move(c);
        break;
      }
      case LayerKind::dense: {
        auto d = std::make_unique<DenseLayer<T>>(in.at(0), s.units);
        d->initialize(rng);
        l = std::move(d);
        break;
      }
      case LayerKind::batchnorm: l = std::make_unique<BatchNormLayer<T>>(in.at(0)); break;
      case LayerKind::relu: l = std::make_unique<ActivationLayer<T>>(Activation::relu); break;
      case LayerKind::sigmoid: l = std::make_unique<ActivationLayer<T>>(Activation::sigmoid); break;
      case LayerKind::maxpool: l = std::make_unique<MaxPoolLayer<T>>(); break;
      case LayerKind::flatten: l = std::make_unique<FlattenLayer<T>>(); break;
      case LayerKind::dropout: l = std::make_unique<DropoutLayer<T>>(s.rate); break;
    }
    l->trainable = s.trainable;
    return l;
  }

  NetworkSpec spec_;
  std::vector<std::vector<LayerPtr>> branches_;
  std::vector<LayerPtr> head_;
  std::vector<std::size_t> branch_widths_;
  ShapeTrace trace_;
};

}  // namespace gradenet
