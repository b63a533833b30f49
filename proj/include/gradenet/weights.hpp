#pragma once

// Portable weight file:
//   magic "GNWEIGHT" (8 bytes), u32 version, u32 layer count
//   per layer: u32 name length, name bytes, u32 tensor count,
//              per tensor: u32 rank, u32 dims[rank], f32 data[prod(dims)]
// All integers and floats little-endian. Only layers holding tensors are
// written; tensors appear as parameters() followed by buffers().

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "gradenet/network.hpp"

namespace gradenet {

static_assert(std::endian::native == std::endian::little, "weight and sample files assume a little-endian host");

inline constexpr std::array<char, 8> kWeightMagic{'G', 'N', 'W', 'E', 'I', 'G', 'H', 'T'};
inline constexpr std::uint32_t kWeightVersion = 1;

namespace detail {

inline void write_u32(std::ostream& os, std::uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); }

inline std::uint32_t read_u32(std::istream& is, const std::string& what) {
  std::uint32_t v = 0;
  if (!is.read(reinterpret_cast<char*>(&v), 4)) throw DataError("truncated " + what);
  return v;
}

template <class T>
std::vector<Tensor<T>*> persisted_tensors(Layer<T>& l) {
  std::vector<Tensor<T>*> out;
  for (auto* p : l.parameters()) out.push_back(&p->value);
  for (auto* b : l.buffers()) out.push_back(b);
  return out;
}

}  // namespace detail

inline void save_weights(Network<float>& net, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot write weight file " + path.string());
  std::vector<Layer<float>*> layers;
  for (auto* l : net.all_layers())
    if (!detail::persisted_tensors(*l).empty()) layers.push_back(l);
  os.write(kWeightMagic.data(), kWeightMagic.size());
  detail::write_u32(os, kWeightVersion);
  detail::write_u32(os, static_cast<std::uint32_t>(layers.size()));
  for (auto* l : layers) {
    detail::write_u32(os, static_cast<std::uint32_t>(l->name.size()));
    os.write(l->name.data(), static_cast<std::streamsize>(l->name.size()));
    const auto tensors = detail::persisted_tensors(*l);
    detail::write_u32(os, static_cast<std::uint32_t>(tensors.size()));
    for (const auto* t : tensors) {
      detail::write_u32(os, static_cast<std::uint32_t>(t->rank()));
      for (auto d : t->shape()) detail::write_u32(os, static_cast<std::uint32_t>(d));
      os.write(reinterpret_cast<const char*>(t->raw()), static_cast<std::streamsize>(t->size() * sizeof(float)));
    }
  }
  if (!os) throw DataError("failed writing weight file " + path.string());
}

/// Loads into an already-built network; names, tensor counts and shapes must
/// match exactly.
inline void load_weights(Network<float>& net, const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open weight file " + path.string());
  const std::string what = "weight file " + path.string();
  std::array<char, 8> magic{};
  if (!is.read(magic.data(), magic.size()) || magic != kWeightMagic) throw DataError("bad magic in " + what);
  if (const auto v = detail::read_u32(is, what); v != kWeightVersion)
    throw DataError("unsupported version " + std::to_string(v) + " in " + what);
  std::vector<Layer<float>*> layers;
  for (auto* l : net.all_layers())
    if (!detail::persisted_tensors(*l).empty()) layers.push_back(l);
  const auto count = detail::read_u32(is, what);
  if (count != layers.size())
    throw DataError(what + " holds " + std::to_string(count) + " layers, network has " +
                    std::to_string(layers.size()));
  for (auto* l : layers) {
    const auto len = detail::read_u32(is, what);
    if (len > 4096) throw DataError("corrupt layer name in " + what);
    std::string name(len, '\0');
    if (!is.read(name.data(), len)) throw DataError("truncated " + what);
    if (name != l->name) throw DataError(what + ": expected layer '" + l->name + "', found '" + name + "'");
    const auto tensors = detail::persisted_tensors(*l);
    if (detail::read_u32(is, what) != tensors.size()) throw DataError(what + ": tensor count mismatch in " + name);
    for (auto* t : tensors) {
      const auto rank = detail::read_u32(is, what);
      Shape shape;
      for (std::uint32_t i = 0; i < rank; ++i) shape.push_back(detail::read_u32(is, what));
      if (shape != t->shape())
        throw DataError(what + ": layer " + name + " tensor " + to_string(shape) + " does not match " +
                        to_string(t->shape()));
      if (!is.read(reinterpret_cast<char*>(t->raw()), static_cast<std::streamsize>(t->size() * sizeof(float))))
        throw DataError("truncated " + what);
    }
  }
  if (is.peek() != std::char_traits<char>::eof()) throw DataError("trailing bytes in " + what);
}

}  // namespace gradenet
