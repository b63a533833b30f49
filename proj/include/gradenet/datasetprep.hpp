#pragma once

// Patch, slice and multi-planar sample extraction from labeled volumes, plus
// the sample file and manifest formats.
//
// Sample file: 256-byte header followed by little-endian float32 data laid
// out [stack][channel][row][col].
//   0   char[8]   magic "GNSAMPLE"
//   8   u32       version (1)
//   12  u32       mode (0 patch, 1 slice, 2 planar)
//   16  u32       stacks (1, or 3 for planar)
//   20  u32       channels
//   24  u32       height
//   28  u32       width
//   32  char[8][16] channel names, NUL padded
//   160 zero padding up to 256
//
// Manifest: one tab-separated record per line:
//   patient_id  label  mode  plane  slice_index  path
// Planar records list planes and indices comma-separated in axial, coronal,
// sagittal order. Paths are relative to the manifest's directory.

#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "gradenet/parallel.hpp"
#include "gradenet/rng.hpp"
#include "gradenet/volume.hpp"

namespace gradenet {

enum class SampleMode { patch, slice, planar };
enum class Plane { axial = 0, coronal = 1, sagittal = 2 };

inline const char* to_string(SampleMode m) {
  switch (m) {
    case SampleMode::patch: return "patch";
    case SampleMode::slice: return "slice";
    case SampleMode::planar: return "planar";
  }
  return "?";
}

inline SampleMode parse_sample_mode(const std::string& s) {
  if (s == "patch") return SampleMode::patch;
  if (s == "slice") return SampleMode::slice;
  if (s == "planar") return SampleMode::planar;
  throw ConfigError("unknown sample mode '" + s + "'");
}

inline const char* to_string(Plane p) {
  switch (p) {
    case Plane::axial: return "axial";
    case Plane::coronal: return "coronal";
    case Plane::sagittal: return "sagittal";
  }
  return "?";
}

inline Plane parse_plane(const std::string& s) {
  if (s == "axial") return Plane::axial;
  if (s == "coronal") return Plane::coronal;
  if (s == "sagittal") return Plane::sagittal;
  throw DataError("unknown plane '" + s + "'");
}

inline constexpr std::array<Plane, 3> kAllPlanes{Plane::axial, Plane::coronal, Plane::sagittal};

struct PrepConfig {
  std::size_t window = 20;
  std::size_t skip_hgg = 5;
  std::size_t skip_lgg = 2;
  int jitter = 5;  // static bounding-box augmentation, pixels; 0 disables
  std::size_t patch_size = 32;
  std::size_t slice_size = 200;
  std::vector<std::string> sequences;  // empty: all present, canonical order
  bool normalize = true;
  std::uint64_t seed = 42;

  std::size_t skip_for(Grade g) const { return g == Grade::hgg ? skip_hgg : skip_lgg; }
};

struct BoundingBox {
  std::size_t row_min = 0, row_max = 0, col_min = 0, col_max = 0;  // inclusive

  friend bool operator==(const BoundingBox&, const BoundingBox&) = default;
};

struct SampleRecord {
  std::string patient_id;
  Grade label = Grade::lgg;
  SampleMode mode = SampleMode::patch;
  std::vector<Plane> planes;
  std::vector<std::size_t> slice_indices;
  std::string path;  // relative to the manifest directory
  int binary() const { return binary_label(label); }

  friend bool operator==(const SampleRecord&, const SampleRecord&) = default;
};

struct PreparedSample {
  SampleRecord record;
  std::vector<Tensor<float>> stacks;  // [C,H,W] each
  std::vector<std::string> channels;
};

// ---------------------------------------------------------------------------
// Geometry

inline std::size_t plane_depth(const Shape& dims, Plane p) { return dims.at(static_cast<std::size_t>(p)); }

/// 2-D image of grid at `index` along the plane's normal axis:
/// axial [ny,nx] at z, coronal [nz,nx] at y, sagittal [nz,ny] at x.
inline Tensor<float> plane_image(const Tensor<float>& grid, Plane p, std::size_t index) {
  const std::size_t nz = grid.dim(0), ny = grid.dim(1), nx = grid.dim(2);
  if (index >= plane_depth(grid.shape(), p))
    throw ShapeError(std::string(to_string(p)) + " slice " + std::to_string(index) + " outside " +
                     to_string(grid.shape()));
  switch (p) {
    case Plane::axial: {
      Tensor<float> out({ny, nx});
      std::copy_n(grid.raw() + index * ny * nx, ny * nx, out.raw());
      return out;
    }
    case Plane::coronal: {
      Tensor<float> out({nz, nx});
      for (std::size_t z = 0; z < nz; ++z)
        for (std::size_t x = 0; x < nx; ++x) out.at(z, x) = grid.at(z, index, x);
      return out;
    }
    case Plane::sagittal: {
      Tensor<float> out({nz, ny});
      for (std::size_t z = 0; z < nz; ++z)
        for (std::size_t y = 0; y < ny; ++y) out.at(z, y) = grid.at(z, y, index);
      return out;
    }
  }
  throw ShapeError("unknown plane");
}

/// Tumor voxel count of every slice along the plane normal.
inline std::vector<std::size_t> slice_areas(const Tensor<float>& mask, Plane p) {
  std::vector<std::size_t> areas(plane_depth(mask.shape(), p), 0);
  const std::size_t ny = mask.dim(1), nx = mask.dim(2);
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (mask[i] == 0.0f) continue;
    const std::size_t z = i / (ny * nx), y = (i / nx) % ny, x = i % nx;
    ++areas[p == Plane::axial ? z : p == Plane::coronal ? y : x];
  }
  return areas;
}

/// Index of the largest tumor cross-section; ties go to the lowest index.
inline std::size_t reference_from_areas(const std::vector<std::size_t>& areas, const std::string& patient = "") {
  std::size_t best = 0;
  for (std::size_t i = 1; i < areas.size(); ++i)
    if (areas[i] > areas[best]) best = i;
  if (areas.empty() || areas[best] == 0)
    throw DataError("patient " + (patient.empty() ? std::string("?") : patient) + ": tumor mask is empty");
  return best;
}

inline std::size_t find_reference_slice(const Tensor<float>& mask, Plane p, const std::string& patient = "") {
  return reference_from_areas(slice_areas(mask, p), patient);
}

/// Window of `window` slices spanning [reference-10, reference+9] (shifted
/// to stay inside the volume), sampled from its start every `skip` slices.
inline std::vector<std::size_t> slice_window(std::size_t reference, std::size_t window, std::size_t skip,
                                             std::size_t depth) {
  if (window == 0 || skip == 0) throw ConfigError("window and skip must be positive");
  if (depth < window)
    throw DataError("volume depth " + std::to_string(depth) + " smaller than the " + std::to_string(window) +
                    "-slice window");
  if (reference >= depth) throw DataError("reference slice outside the volume");
  const std::size_t half = window / 2;
  std::size_t start = reference >= half ? reference - half : 0;
  if (start + window > depth) start = depth - window;
  std::vector<std::size_t> out;
  for (std::size_t i = start; i < start + window; i += skip) out.push_back(i);
  return out;
}

inline std::optional<BoundingBox> bounding_box(const Tensor<float>& mask2d) {
  std::optional<BoundingBox> box;
  for (std::size_t r = 0; r < mask2d.dim(0); ++r)
    for (std::size_t c = 0; c < mask2d.dim(1); ++c) {
      if (mask2d.at(r, c) == 0.0f) continue;
      if (!box) {
        box = BoundingBox{r, r, c, c};
      } else {
        box->row_min = std::min(box->row_min, r);
        box->row_max = std::max(box->row_max, r);
        box->col_min = std::min(box->col_min, c);
        box->col_max = std::max(box->col_max, c);
      }
    }
  return box;
}

/// Moves each coordinate by an independent integer in [-amount, amount],
/// clamps to the image, and redraws (up to 10 attempts) when min > max.
inline BoundingBox jitter_box(const BoundingBox& box, int amount, std::size_t rows, std::size_t cols, Rng& rng) {
  if (amount <= 0) return box;
  auto clampi = [](long v, std::size_t n) { return static_cast<std::size_t>(std::clamp<long>(v, 0, static_cast<long>(n) - 1)); };
  for (int attempt = 0; attempt < 10; ++attempt) {
    BoundingBox b;
    b.row_min = clampi(static_cast<long>(box.row_min) + uniform_int(rng, -amount, amount), rows);
    b.row_max = clampi(static_cast<long>(box.row_max) + uniform_int(rng, -amount, amount), rows);
    b.col_min = clampi(static_cast<long>(box.col_min) + uniform_int(rng, -amount, amount), cols);
    b.col_max = clampi(static_cast<long>(box.col_max) + uniform_int(rng, -amount, amount), cols);
    if (b.row_min <= b.row_max && b.col_min <= b.col_max) return b;
  }
  throw DataError("bounding box degenerate after 10 jitter attempts");
}

/// Bilinear resample of the inclusive box region of a [H,W] image onto
/// size x size, corner-aligned (an exact-size box is copied verbatim).
inline Tensor<float> resample_box(const Tensor<float>& img, const BoundingBox& b, std::size_t size) {
  Tensor<float> out({size, size});
  const double rows = static_cast<double>(b.row_max - b.row_min), cols = static_cast<double>(b.col_max - b.col_min);
  const double denom = size > 1 ? static_cast<double>(size - 1) : 1.0;
  for (std::size_t i = 0; i < size; ++i) {
    const double sy = static_cast<double>(b.row_min) + rows * static_cast<double>(i) / denom;
    const auto y0 = static_cast<std::size_t>(std::floor(sy));
    const std::size_t y1 = std::min(y0 + 1, b.row_max);
    const double ty = sy - static_cast<double>(y0);
    for (std::size_t j = 0; j < size; ++j) {
      const double sx = static_cast<double>(b.col_min) + cols * static_cast<double>(j) / denom;
      const auto x0 = static_cast<std::size_t>(std::floor(sx));
      const std::size_t x1 = std::min(x0 + 1, b.col_max);
      const double tx = sx - static_cast<double>(x0);
      double v = (1 - ty) * (1 - tx) * img.at(y0, x0);
      if (tx > 0) v += (1 - ty) * tx * img.at(y0, x1);
      if (ty > 0) v += ty * (1 - tx) * img.at(y1, x0);
      if (tx > 0 && ty > 0) v += ty * tx * img.at(y1, x1);
      out.at(i, j) = static_cast<float>(v);
    }
  }
  return out;
}

/// Center crop (larger) or symmetric zero pad (smaller) of [H,W] to size x size.
inline Tensor<float> center_fit(const Tensor<float>& img, std::size_t size) {
  Tensor<float> out({size, size});
  const long h = static_cast<long>(img.dim(0)), w = static_cast<long>(img.dim(1)), s = static_cast<long>(size);
  const long oy = (h - s) / 2, ox = (w - s) / 2;  // negative: padding
  for (long y = 0; y < s; ++y) {
    const long sy = y + oy;
    if (sy < 0 || sy >= h) continue;
    for (long x = 0; x < s; ++x) {
      const long sx = x + ox;
      if (sx >= 0 && sx < w) out.at(y, x) = img.at(sy, sx);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Extraction

inline std::vector<std::string> selected_sequences(const VolumeSet& v, const PrepConfig& cfg) {
  if (cfg.sequences.empty()) return v.sequence_names();
  std::vector<std::string> names = cfg.sequences;
  std::sort(names.begin(), names.end(),
            [](const auto& a, const auto& b) { return sequence_rank(a) < sequence_rank(b); });
  for (const auto& n : names) v.sequence(n);
  return names;
}

namespace detail {

inline Tensor<float> stack_channels(const std::vector<Tensor<float>>& planes) {
  std::vector<const Tensor<float>*> ptrs;
  for (const auto& p : planes) ptrs.push_back(&p);
  return stack<float>(ptrs);
}

inline std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) h = (h ^ c) * 0x100000001b3ULL;
  return h;
}

}  // namespace detail

/// [C, size, size] patch of the mask's bounding box on an axial slice, with
/// static jitter. Falls back to the reference slice's box when the slice
/// itself has no tumor.
inline Tensor<float> extract_patch(const VolumeSet& v, std::size_t slice, std::size_t reference, Rng& rng,
                                   const PrepConfig& cfg = {}) {
  auto box = bounding_box(plane_image(v.mask, Plane::axial, slice));
  if (!box) box = bounding_box(plane_image(v.mask, Plane::axial, reference));
  if (!box) throw DataError("patient " + v.patient_id + ": no tumor on slice " + std::to_string(slice));
  const BoundingBox b = jitter_box(*box, cfg.jitter, v.dims()[1], v.dims()[2], rng);
  std::vector<Tensor<float>> chans;
  for (const auto& name : selected_sequences(v, cfg))
    chans.push_back(resample_box(plane_image(v.sequence(name), Plane::axial, slice), b, cfg.patch_size));
  return detail::stack_channels(chans);
}

/// [C, size, size] full slice along a plane, center cropped or zero padded.
inline Tensor<float> extract_slice_sample(const VolumeSet& v, Plane p, std::size_t slice, const PrepConfig& cfg = {}) {
  std::vector<Tensor<float>> chans;
  for (const auto& name : selected_sequences(v, cfg))
    chans.push_back(center_fit(plane_image(v.sequence(name), p, slice), cfg.slice_size));
  return detail::stack_channels(chans);
}

struct PlanarTriple {
  std::array<std::size_t, 3> slices{};  // axial, coronal, sagittal
  std::array<Tensor<float>, 3> stacks;
};

/// Window/skip selection on every plane with plane-specific reference
/// slices; the k-th triple pairs the k-th index of each plane.
inline std::vector<PlanarTriple> extract_multiplanar(const VolumeSet& v, const PrepConfig& cfg = {}) {
  std::array<std::vector<std::size_t>, 3> idx;
  for (auto p : kAllPlanes) {
    const auto ref = find_reference_slice(v.mask, p, v.patient_id);
    idx[static_cast<std::size_t>(p)] = slice_window(ref, cfg.window, cfg.skip_for(v.grade), plane_depth(v.dims(), p));
  }
  std::vector<PlanarTriple> out;
  for (std::size_t k = 0; k < idx[0].size(); ++k) {
    PlanarTriple t;
    for (auto p : kAllPlanes) {
      const auto pi = static_cast<std::size_t>(p);
      t.slices[pi] = idx[pi].at(k);
      t.stacks[pi] = extract_slice_sample(v, p, t.slices[pi], cfg);
    }
    out.push_back(std::move(t));
  }
  return out;
}

/// Per-sequence z-score over nonzero voxels; zero voxels stay zero.
inline VolumeSet normalize_volume(VolumeSet v) {
  for (auto& s : v.sequences) {
    double sum = 0, sq = 0;
    std::size_t n = 0;
    for (float x : s.grid.data())
      if (x != 0.0f) {
        sum += x;
        ++n;
      }
    if (n == 0) continue;
    const double mean = sum / static_cast<double>(n);
    for (float x : s.grid.data())
      if (x != 0.0f) sq += (x - mean) * (x - mean);
    const double sd = std::max(std::sqrt(sq / static_cast<double>(n)), 1e-8);
    for (auto& x : s.grid.data())
      if (x != 0.0f) x = static_cast<float>((x - mean) / sd);
  }
  return v;
}

/// All samples of one patient for a mode (4 per HGG, 10 per LGG patient
/// with the default window and skips). Record paths are left empty.
inline std::vector<PreparedSample> prepare_volume(const VolumeSet& raw, SampleMode mode, const PrepConfig& cfg) {
  raw.validate();
  const VolumeSet v = cfg.normalize ? normalize_volume(raw) : raw;
  const auto channels = selected_sequences(v, cfg);
  std::vector<PreparedSample> out;
  auto make = [&](std::vector<Plane> planes, std::vector<std::size_t> slices, std::vector<Tensor<float>> stacks) {
    PreparedSample s;
    s.record = {v.patient_id, v.grade, mode, std::move(planes), std::move(slices), ""};
    s.stacks = std::move(stacks);
    s.channels = channels;
    out.push_back(std::move(s));
  };
  if (mode == SampleMode::planar) {
    for (auto& t : extract_multiplanar(v, cfg))
      make({Plane::axial, Plane::coronal, Plane::sagittal}, {t.slices.begin(), t.slices.end()},
           {std::move(t.stacks[0]), std::move(t.stacks[1]), std::move(t.stacks[2])});
    return out;
  }
  const auto ref = find_reference_slice(v.mask, Plane::axial, v.patient_id);
  const auto slices = slice_window(ref, cfg.window, cfg.skip_for(v.grade), plane_depth(v.dims(), Plane::axial));
  for (std::size_t k = 0; k < slices.size(); ++k) {
    if (mode == SampleMode::patch) {
      Rng rng(derive_seed(cfg.seed, {detail::fnv1a(v.patient_id), k}));
      make({Plane::axial}, {slices[k]}, {extract_patch(v, slices[k], ref, rng, cfg)});
    } else {
      make({Plane::axial}, {slices[k]}, {extract_slice_sample(v, Plane::axial, slices[k], cfg)});
    }
  }
  return out;
}

inline Sample to_sample(const PreparedSample& p) { return {p.record.patient_id, p.record.binary(), p.stacks}; }

// ---------------------------------------------------------------------------
// Sample files

inline constexpr std::array<char, 8> kSampleMagic{'G', 'N', 'S', 'A', 'M', 'P', 'L', 'E'};
inline constexpr std::size_t kSampleHeaderBytes = 256;
inline constexpr std::size_t kMaxChannelNames = 8;
inline constexpr std::size_t kChannelNameBytes = 16;

struct SampleFile {
  SampleMode mode = SampleMode::patch;
  std::vector<std::string> channels;
  std::vector<Tensor<float>> stacks;
};

inline void write_sample_file(const std::filesystem::path& path, SampleMode mode,
                              const std::vector<Tensor<float>>& stacks, const std::vector<std::string>& channels) {
  if (stacks.empty()) throw ShapeError("sample has no stacks");
  const Shape& s = stacks.front().shape();
  if (s.size() != 3 || s[0] != channels.size() || channels.size() > kMaxChannelNames)
    throw ShapeError("sample stack " + to_string(s) + " does not match " + std::to_string(channels.size()) +
                     " channel names");
  std::array<char, kSampleHeaderBytes> header{};
  std::memcpy(header.data(), kSampleMagic.data(), kSampleMagic.size());
  const std::uint32_t fields[6] = {1, static_cast<std::uint32_t>(mode), static_cast<std::uint32_t>(stacks.size()),
                                   static_cast<std::uint32_t>(s[0]), static_cast<std::uint32_t>(s[1]),
                                   static_cast<std::uint32_t>(s[2])};
  std::memcpy(header.data() + 8, fields, sizeof fields);
  for (std::size_t c = 0; c < channels.size(); ++c) {
    if (channels[c].size() >= kChannelNameBytes) throw ShapeError("channel name too long: " + channels[c]);
    std::memcpy(header.data() + 32 + c * kChannelNameBytes, channels[c].data(), channels[c].size());
  }
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot write " + path.string());
  os.write(header.data(), header.size());
  for (const auto& t : stacks) {
    if (t.shape() != s) throw ShapeError("planar members must share one shape");
    os.write(reinterpret_cast<const char*>(t.raw()), static_cast<std::streamsize>(t.size() * sizeof(float)));
  }
  if (!os) throw DataError("failed writing " + path.string());
}

inline SampleFile read_sample_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open sample file " + path.string());
  std::array<char, kSampleHeaderBytes> header{};
  if (!is.read(header.data(), header.size()) || std::memcmp(header.data(), kSampleMagic.data(), 8) != 0)
    throw DataError("bad sample header in " + path.string());
  std::uint32_t f[6];
  std::memcpy(f, header.data() + 8, sizeof f);
  if (f[0] != 1 || f[1] > 2 || f[2] == 0 || f[3] == 0 || f[3] > kMaxChannelNames || f[4] == 0 || f[5] == 0)
    throw DataError("unsupported sample header in " + path.string());
  SampleFile out;
  out.mode = static_cast<SampleMode>(f[1]);
  for (std::uint32_t c = 0; c < f[3]; ++c) {
    const char* p = header.data() + 32 + c * kChannelNameBytes;
    out.channels.emplace_back(p, strnlen(p, kChannelNameBytes));
  }
  for (std::uint32_t k = 0; k < f[2]; ++k) {
    Tensor<float> t({f[3], f[4], f[5]});
    if (!is.read(reinterpret_cast<char*>(t.raw()), static_cast<std::streamsize>(t.size() * sizeof(float))))
      throw DataError("truncated sample file " + path.string());
    out.stacks.push_back(std::move(t));
  }
  if (is.peek() != std::char_traits<char>::eof()) throw DataError("trailing bytes in " + path.string());
  return out;
}

// ---------------------------------------------------------------------------
// Manifest

inline std::string manifest_line(const SampleRecord& r) {
  std::ostringstream os;
  os << r.patient_id << '\t' << to_string(r.label) << '\t' << to_string(r.mode) << '\t';
  for (std::size_t i = 0; i < r.planes.size(); ++i) os << (i ? "," : "") << to_string(r.planes[i]);
  os << '\t';
  for (std::size_t i = 0; i < r.slice_indices.size(); ++i) os << (i ? "," : "") << r.slice_indices[i];
  os << '\t' << r.path;
  return os.str();
}

inline void write_manifest(const std::filesystem::path& path, const std::vector<SampleRecord>& records) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw DataError("cannot write manifest " + path.string());
  for (const auto& r : records) os << manifest_line(r) << '\n';
}

inline std::vector<SampleRecord> read_manifest(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open manifest " + path.string());
  std::vector<SampleRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto f = detail::split(line, '\t');
    if (f.size() != 6)
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": expected 6 tab-separated fields");
    SampleRecord r;
    r.patient_id = f[0];
    r.label = parse_grade(f[1]);
    try {
      r.mode = parse_sample_mode(f[2]);
    } catch (const ConfigError& e) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
    for (const auto& p : detail::split(f[3], ',')) r.planes.push_back(parse_plane(p));
    for (const auto& s : detail::split(f[4], ',')) r.slice_indices.push_back(std::stoul(s));
    r.path = f[5];
    if (r.planes.size() != r.slice_indices.size() || r.planes.size() != (r.mode == SampleMode::planar ? 3u : 1u))
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": plane/slice fields do not match mode");
    out.push_back(std::move(r));
  }
  return out;
}

/// Loads every record's sample file (paths relative to `base`).
inline Dataset load_dataset(const std::vector<SampleRecord>& records, const std::filesystem::path& base) {
  Dataset out;
  out.reserve(records.size());
  for (const auto& r : records) {
    auto f = read_sample_file(base / r.path);
    if (f.mode != r.mode) throw DataError(r.path + ": file mode does not match manifest");
    out.push_back({r.patient_id, r.binary(), std::move(f.stacks)});
  }
  return out;
}

struct PrepareReport {
  std::vector<SampleRecord> records;
  std::vector<std::string> diagnostics;  // skipped patients
};

/// Prepares every patient under volume_root into out_dir (samples/ and
/// manifest.tsv). Patients run in parallel; records are emitted in sorted
/// patient order. Planar failures skip the patient with a diagnostic.
inline PrepareReport prepare_cohort(const std::filesystem::path& volume_root, SampleMode mode, const PrepConfig& cfg,
                                    const std::filesystem::path& out_dir, std::size_t jobs = 1) {
  const auto dirs = list_volume_dirs(volume_root);
  if (dirs.empty()) throw DataError("no patient volumes under " + volume_root.string());
  std::filesystem::create_directories(out_dir / "samples");
  std::vector<std::vector<SampleRecord>> per_patient(dirs.size());
  std::vector<std::string> skipped(dirs.size());
  parallel_for(dirs.size(), jobs, [&](std::size_t i) {
    const VolumeSet v = read_volume(dirs[i]);
    std::vector<PreparedSample> samples;
    try {
      samples = prepare_volume(v, mode, cfg);
    } catch (const DataError& e) {
      if (mode != SampleMode::planar) throw;
      skipped[i] = e.what();
      return;
    }
    for (std::size_t k = 0; k < samples.size(); ++k) {
      auto& s = samples[k];
      s.record.path = "samples/" + v.patient_id + "_" + to_string(mode) + "_" + std::to_string(k) + ".f32";
      write_sample_file(out_dir / s.record.path, mode, s.stacks, s.channels);
      per_patient[i].push_back(s.record);
    }
  });
  PrepareReport report;
  std::vector<std::pair<std::string, std::size_t>> order;
  for (std::size_t i = 0; i < dirs.size(); ++i)
    if (!per_patient[i].empty()) order.emplace_back(per_patient[i].front().patient_id, i);
  std::sort(order.begin(), order.end());
  for (const auto& [id, i] : order) report.records.insert(report.records.end(), per_patient[i].begin(), per_patient[i].end());
  for (const auto& d : skipped)
    if (!d.empty()) report.diagnostics.push_back(d);
  write_manifest(out_dir / "manifest.tsv", report.records);
  return report;
}

}  // namespace gradenet
