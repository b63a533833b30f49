#pragma once

// On-disk volume layout, one directory per patient:
//   volume.txt      key=value header (patient_id, grade, dims, order, sequences)
//   <SEQ>.f32       raw little-endian float32 grid per sequence, z-major
//   mask.f32        raw little-endian float32 grid, 1 inside the tumor

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "gradenet/sample.hpp"
#include "gradenet/tensor.hpp"

namespace gradenet {

inline const std::vector<std::string>& canonical_sequences() {
  static const std::vector<std::string> order{"T1", "T1C", "T2", "FLAIR"};
  return order;
}

inline std::size_t sequence_rank(const std::string& name) {
  const auto& order = canonical_sequences();
  const auto it = std::find(order.begin(), order.end(), name);
  if (it == order.end()) throw DataError("unknown MR sequence '" + name + "'");
  return static_cast<std::size_t>(it - order.begin());
}

struct NamedGrid {
  std::string name;
  Tensor<float> grid;  // [nz, ny, nx]
};

/// One patient's co-registered multi-sequence scan with tumor mask.
/// Sequences are kept in canonical order (T1, T1C, T2, FLAIR).
struct VolumeSet {
  std::string patient_id;
  Grade grade = Grade::lgg;
  std::vector<NamedGrid> sequences;
  Tensor<float> mask;  // [nz, ny, nx], 0 or 1

  const Shape& dims() const { return mask.shape(); }

  const Tensor<float>& sequence(const std::string& name) const {
    for (const auto& s : sequences)
      if (s.name == name) return s.grid;
    throw DataError(patient_id + ": sequence " + name + " not present");
  }

  std::vector<std::string> sequence_names() const {
    std::vector<std::string> out;
    for (const auto& s : sequences) out.push_back(s.name);
    return out;
  }

  void validate() const {
    if (mask.rank() != 3) throw DataError(patient_id + ": mask must be a 3-D grid");
    if (sequences.empty()) throw DataError(patient_id + ": no sequences");
    std::size_t last = 0;
    for (std::size_t i = 0; i < sequences.size(); ++i) {
      if (sequences[i].grid.shape() != mask.shape())
        throw DataError(patient_id + ": sequence " + sequences[i].name + " dims " +
                        to_string(sequences[i].grid.shape()) + " differ from mask " + to_string(mask.shape()));
      const auto r = sequence_rank(sequences[i].name);
      if (i && r <= last) throw DataError(patient_id + ": sequences not in canonical order");
      last = r;
    }
  }
};

namespace detail {

inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(s);
  while (std::getline(is, cur, sep)) out.push_back(cur);
  return out;
}

inline std::map<std::string, std::string> read_key_values(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open " + path.string());
  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw DataError("malformed line in " + path.string() + ": " + line);
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return kv;
}

inline void write_raw_f32(const std::filesystem::path& path, const Tensor<float>& t) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot write " + path.string());
  os.write(reinterpret_cast<const char*>(t.raw()), static_cast<std::streamsize>(t.size() * sizeof(float)));
  if (!os) throw DataError("failed writing " + path.string());
}

inline Tensor<float> read_raw_f32(const std::filesystem::path& path, const Shape& shape) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open " + path.string());
  Tensor<float> t(shape);
  if (!is.read(reinterpret_cast<char*>(t.raw()), static_cast<std::streamsize>(t.size() * sizeof(float))) ||
      is.peek() != std::char_traits<char>::eof())
    throw DataError(path.string() + " does not hold " + to_string(shape) + " float32 values");
  return t;
}

}  // namespace detail

inline void write_volume(const std::filesystem::path& dir, const VolumeSet& v) {
  v.validate();
  std::filesystem::create_directories(dir);
  const auto& d = v.dims();
  {
    std::ofstream os(dir / "volume.txt", std::ios::trunc);
    if (!os) throw DataError("cannot write " + (dir / "volume.txt").string());
    os << "patient_id=" << v.patient_id << '\n'
       << "grade=" << to_string(v.grade) << '\n'
       << "dims=" << d[0] << ',' << d[1] << ',' << d[2] << '\n'
       << "order=z,y,x\n"
       << "format=float32-le\n"
       << "sequences=";
    for (std::size_t i = 0; i < v.sequences.size(); ++i) os << (i ? "," : "") << v.sequences[i].name;
    os << "\nmask=mask.f32\n";
  }
  for (const auto& s : v.sequences) detail::write_raw_f32(dir / (s.name + ".f32"), s.grid);
  detail::write_raw_f32(dir / "mask.f32", v.mask);
}

inline VolumeSet read_volume(const std::filesystem::path& dir) {
  const auto kv = detail::read_key_values(dir / "volume.txt");
  auto get = [&](const std::string& k) {
    const auto it = kv.find(k);
    if (it == kv.end()) throw DataError((dir / "volume.txt").string() + " lacks key " + k);
    return it->second;
  };
  VolumeSet v;
  v.patient_id = get("patient_id");
  v.grade = parse_grade(get("grade"));
  if (get("order") != "z,y,x") throw DataError(dir.string() + ": only z,y,x voxel order is supported");
  Shape dims;
  for (const auto& s : detail::split(get("dims"), ',')) dims.push_back(std::stoul(s));
  if (dims.size() != 3) throw DataError(dir.string() + ": dims must have three entries");
  for (const auto& name : detail::split(get("sequences"), ','))
    v.sequences.push_back({name, detail::read_raw_f32(dir / (name + ".f32"), dims)});
  v.mask = detail::read_raw_f32(dir / get("mask"), dims);
  v.validate();
  return v;
}

/// Patient directories (those holding volume.txt) under root, sorted by name.
inline std::vector<std::filesystem::path> list_volume_dirs(const std::filesystem::path& root) {
  if (!std::filesystem::is_directory(root)) throw DataError("volume directory " + root.string() + " not found");
  std::vector<std::filesystem::path> out;
  for (const auto& e : std::filesystem::directory_iterator(root))
    if (e.is_directory() && std::filesystem::exists(e.path() / "volume.txt")) out.push_back(e.path());
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace gradenet
