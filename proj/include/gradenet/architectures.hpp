#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "gradenet/network.hpp"

namespace gradenet {

enum class Architecture { patchnet, slicenet, volumenet };

inline const char* to_string(Architecture a) {
  switch (a) {
    case Architecture::patchnet: return "patchnet";
    case Architecture::slicenet: return "slicenet";
    case Architecture::volumenet: return "volumenet";
  }
  return "?";
}

inline Architecture parse_architecture(const std::string& s) {
  if (s == "patchnet") return Architecture::patchnet;
  if (s == "slicenet") return Architecture::slicenet;
  if (s == "volumenet") return Architecture::volumenet;
  throw ConfigError("unknown architecture '" + s + "'");
}

inline const std::vector<std::string>& anatomical_planes() {
  static const std::vector<std::string> planes{"axial", "coronal", "sagittal"};
  return planes;
}

namespace detail {

// conv3x3 -> batchnorm -> relu -> maxpool2x2 per entry of `filters`.
inline std::vector<LayerSpec> conv_blocks(std::initializer_list<std::size_t> filters) {
  std::vector<LayerSpec> layers;
  std::size_t i = 0;
  for (auto f : filters) {
    const std::string n = std::to_string(++i);
    layers.push_back({LayerKind::conv2d, f, 0.0, true, "conv" + n});
    layers.push_back({LayerKind::batchnorm, 0, 0.0, true, "bn" + n});
    layers.push_back({LayerKind::relu, 0, 0.0, true, "relu" + n});
    layers.push_back({LayerKind::maxpool, 0, 0.0, true, "pool" + n});
  }
  layers.push_back({LayerKind::flatten, 0, 0.0, true, "flatten"});
  return layers;
}

inline std::vector<LayerSpec> classifier(std::size_t hidden) {
  std::vector<LayerSpec> layers;
  if (hidden) {
    layers.push_back({LayerKind::dense, hidden, 0.0, true, "fc1"});
    layers.push_back({LayerKind::relu, 0, 0.0, true, "fc1_relu"});
  }
  layers.push_back({LayerKind::dropout, 0, 0.5, true, "dropout"});
  layers.push_back({LayerKind::dense, 1, 0.0, true, "fc_out"});
  layers.push_back({LayerKind::sigmoid, 0, 0.0, true, "sigmoid"});
  return layers;
}

inline void check_channels(std::size_t c) {
  if (c < 1) throw ConfigError("in_channels must be >= 1");
}

}  // namespace detail

/// 32x32 patches: three conv blocks (8, 16, 32 filters), FC 16, sigmoid output.
inline NetworkSpec build_patchnet(std::size_t in_channels, std::size_t size = 32) {
  detail::check_channels(in_channels);
  NetworkSpec s;
  s.name = "patchnet";
  s.input = {in_channels, size, size};
  s.branch = detail::conv_blocks({8, 16, 32});
  s.head = detail::classifier(16);
  symbolic_trace(s);
  return s;
}

/// 200x200 slices: four conv blocks (16, 32, 64, 128 filters), FC 64, sigmoid output.
inline NetworkSpec build_slicenet(std::size_t in_channels, std::size_t size = 200) {
  detail::check_channels(in_channels);
  NetworkSpec s;
  s.name = "slicenet";
  s.input = {in_channels, size, size};
  s.branch = detail::conv_blocks({16, 32, 64, 128});
  s.head = detail::classifier(64);
  symbolic_trace(s);
  return s;
}

/// Axial, coronal and sagittal branches of three conv blocks (8, 16, 32
/// filters) and FC 32 each, concatenated (late fusion) into a sigmoid output.
inline NetworkSpec build_volumenet(std::size_t in_channels, std::size_t size = 200) {
  detail::check_channels(in_channels);
  NetworkSpec s;
  s.name = "volumenet";
  s.input = {in_channels, size, size};
  s.branch_names = anatomical_planes();
  s.branch = detail::conv_blocks({8, 16, 32});
  s.branch.push_back({LayerKind::dense, 32, 0.0, true, "fc1"});
  s.branch.push_back({LayerKind::relu, 0, 0.0, true, "fc1_relu"});
  s.head = detail::classifier(0);
  symbolic_trace(s);
  return s;
}

inline NetworkSpec build_architecture(Architecture a, std::size_t in_channels) {
  switch (a) {
    case Architecture::patchnet: return build_patchnet(in_channels);
    case Architecture::slicenet: return build_slicenet(in_channels);
    case Architecture::volumenet: return build_volumenet(in_channels);
  }
  throw ConfigError("unknown architecture");
}

// ---------------------------------------------------------------------------
// Activation maps

struct ActivationMap {
  std::size_t filter = 0;
  Tensor<float> values;        // [H, W] post-ReLU response
  std::vector<std::uint8_t> gray;  // min-max scaled to [0, 255]; constant maps become 0
};

/// Post-ReLU maps of the k-th (1-based) convolution block of one branch for a
/// single sample ([C,H,W]), computed in inference mode. Does not touch any
/// training state.
inline std::vector<ActivationMap> dump_activations(const Network<float>& network, const Tensor<float>& sample,
                                                   std::size_t conv_block, std::size_t branch = 0) {
  Network<float> net = network;
  if (branch >= net.branch_count())
    throw ConfigError("branch " + std::to_string(branch) + " out of range");
  const std::size_t conv_pos = net.conv_block_position(conv_block);
  std::size_t relu_pos = conv_pos;
  while (relu_pos < net.branch_length() && net.spec().branch[relu_pos].kind != LayerKind::relu) ++relu_pos;
  if (relu_pos == net.branch_length()) throw ConfigError("conv block has no activation");
  if (sample.rank() != 3) throw ShapeError("sample must be [C,H,W], got " + to_string(sample.shape()));
  Rng rng(0);
  Tensor<float> out =
      net.forward_prefix(branch, sample.reshaped(detail::with_batch(1, sample.shape())), relu_pos, Mode::infer, rng);
  const std::size_t k = out.dim(1), h = out.dim(2), w = out.dim(3);
  std::vector<ActivationMap> maps;
  for (std::size_t f = 0; f < k; ++f) {
    ActivationMap m;
    m.filter = f;
    std::vector<float> v(out.raw() + f * h * w, out.raw() + (f + 1) * h * w);
    const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
    const float mn = *lo, mx = *hi;
    m.gray.resize(v.size());
    for (std::size_t i = 0; i < v.size(); ++i)
      m.gray[i] = mx > mn ? static_cast<std::uint8_t>(std::lround(255.0 * (v[i] - mn) / (mx - mn))) : 0;
    m.values = Tensor<float>({h, w}, std::move(v));
    maps.push_back(std::move(m));
  }
  return maps;
}

inline void write_pgm(const std::filesystem::path& path, const ActivationMap& m) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write " + path.string());
  os << "P5\n" << m.values.dim(1) << ' ' << m.values.dim(0) << "\n255\n";
  os.write(reinterpret_cast<const char*>(m.gray.data()), static_cast<std::streamsize>(m.gray.size()));
}

inline void write_map_csv(const std::filesystem::path& path, const ActivationMap& m) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot write " + path.string());
  os.precision(9);
  for (std::size_t y = 0; y < m.values.dim(0); ++y) {
    for (std::size_t x = 0; x < m.values.dim(1); ++x) {
      if (x) os << ',';
      os << m.values.at(y, x);
    }
    os << '\n';
  }
}

}  // namespace gradenet
