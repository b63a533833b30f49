#pragma once

// Synthetic multi-sequence volumes with one spherical lesion each. Positive
// lesions have a bright rim, a dark core and strong texture noise; negative
// lesions are homogeneous.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "gradenet/parallel.hpp"
#include "gradenet/rng.hpp"
#include "gradenet/volume.hpp"

namespace gradenet {

struct LesionContrast {
  float rim = 1.8f;     // intensity of the outer shell (relative to tissue)
  float core = 0.25f;   // intensity of the inner core
  float noise = 0.35f;  // texture standard deviation
  bool ring = true;     // false: homogeneous lesion at `rim`
};

struct PhantomConfig {
  Shape dims{120, 120, 120};
  std::size_t positive_count = 20;
  std::size_t negative_count = 20;
  Grade positive_grade = Grade::hgg;
  Grade negative_grade = Grade::lgg;
  std::uint64_t seed = 42;
  double radius_min = 10.0;
  double radius_max = 16.0;
  double core_fraction = 0.6;  // core radius relative to lesion radius
  LesionContrast positive{1.8f, 0.25f, 0.35f, true};
  LesionContrast negative{1.4f, 1.4f, 0.05f, false};
  std::size_t sequence_count = 4;  // 4: T1,T1C,T2,FLAIR; 2: T1C,T2
  std::string id_prefix = "ph";

  std::size_t patient_count() const { return positive_count + negative_count; }

  std::vector<std::string> sequence_names() const {
    if (sequence_count == 4) return canonical_sequences();
    if (sequence_count == 2) return {"T1C", "T2"};
    throw ConfigError("sequence_count must be 2 or 4");
  }

  void validate() const {
    sequence_names();
    if (dims.size() != 3) throw ConfigError("phantom dims must have three entries");
    for (auto d : dims)
      if (d < 40) throw ConfigError("phantom dims too small: every axis needs >= 40 voxels, got " + to_string(dims));
    if (!(radius_min >= 2.0 && radius_min <= radius_max)) throw ConfigError("invalid lesion radius range");
    const double smallest = static_cast<double>(*std::min_element(dims.begin(), dims.end()));
    if (radius_max + 0.12 * smallest > 0.36 * smallest)
      throw ConfigError("phantom dims too small for lesion radius " + std::to_string(radius_max));
    if (!(core_fraction > 0.0 && core_fraction < 1.0)) throw ConfigError("core_fraction must be in (0,1)");
    if (patient_count() == 0) throw ConfigError("phantom cohort is empty");
  }
};

inline std::string phantom_patient_id(const PhantomConfig& cfg, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%03zu", i);
  return cfg.id_prefix + buf;
}

/// Patients 0..positive_count-1 are positive, the rest negative.
inline VolumeSet generate_volume(const PhantomConfig& cfg, std::size_t index) {
  cfg.validate();
  if (index >= cfg.patient_count()) throw ConfigError("phantom index out of range");
  const bool positive = index < cfg.positive_count;
  const LesionContrast& lc = positive ? cfg.positive : cfg.negative;
  Rng rng(derive_seed(cfg.seed, {index}));
  std::normal_distribution<float> gauss(0.0f, 1.0f);

  const std::size_t nz = cfg.dims[0], ny = cfg.dims[1], nx = cfg.dims[2];
  const double cz = (static_cast<double>(nz) - 1) / 2, cy = (static_cast<double>(ny) - 1) / 2,
               cx = (static_cast<double>(nx) - 1) / 2;
  const double az = 0.42 * static_cast<double>(nz), ay = 0.42 * static_cast<double>(ny),
               ax = 0.42 * static_cast<double>(nx);
  const double radius = cfg.radius_min + (cfg.radius_max - cfg.radius_min) * uniform01(rng);
  const double lz = cz + (uniform01(rng) * 2 - 1) * 0.12 * static_cast<double>(nz);
  const double ly = cy + (uniform01(rng) * 2 - 1) * 0.12 * static_cast<double>(ny);
  const double lx = cx + (uniform01(rng) * 2 - 1) * 0.12 * static_cast<double>(nx);

  VolumeSet v;
  v.patient_id = phantom_patient_id(cfg, index);
  v.grade = positive ? cfg.positive_grade : cfg.negative_grade;
  v.mask = Tensor<float>(cfg.dims);
  for (std::size_t z = 0; z < nz; ++z)
    for (std::size_t y = 0; y < ny; ++y)
      for (std::size_t x = 0; x < nx; ++x) {
        const double dz = static_cast<double>(z) - lz, dy = static_cast<double>(y) - ly,
                     dx = static_cast<double>(x) - lx;
        if (dz * dz + dy * dy + dx * dx <= radius * radius) v.mask.at(z, y, x) = 1.0f;
      }

  const auto names = cfg.sequence_names();
  for (std::size_t s = 0; s < names.size(); ++s) {
    const float tissue = 0.5f + 0.1f * static_cast<float>(sequence_rank(names[s]));
    const float gain = 1.0f + 0.15f * static_cast<float>(sequence_rank(names[s]) % 2);
    Tensor<float> g(cfg.dims);
    for (std::size_t z = 0; z < nz; ++z)
      for (std::size_t y = 0; y < ny; ++y)
        for (std::size_t x = 0; x < nx; ++x) {
          const double ez = (static_cast<double>(z) - cz) / az, ey = (static_cast<double>(y) - cy) / ay,
                       ex = (static_cast<double>(x) - cx) / ax;
          const double e2 = ez * ez + ey * ey + ex * ex;
          if (e2 > 1.0) continue;
          float val = tissue * static_cast<float>(1.0 - 0.3 * e2) + 0.02f * gauss(rng);
          if (v.mask.at(z, y, x) != 0.0f) {
            const double dz = static_cast<double>(z) - lz, dy = static_cast<double>(y) - ly,
                         dx = static_cast<double>(x) - lx;
            const double d = std::sqrt(dz * dz + dy * dy + dx * dx);
            const float base = lc.ring && d < cfg.core_fraction * radius ? lc.core : lc.rim;
            val = tissue * gain * base + lc.noise * gauss(rng);
          }
          g.at(z, y, x) = std::max(val, 0.01f);
        }
    v.sequences.push_back({names[s], std::move(g)});
  }
  return v;
}

/// Whole cohort in memory; prefer write_cohort for full-size volumes.
inline std::vector<VolumeSet> generate_cohort(const PhantomConfig& cfg) {
  std::vector<VolumeSet> out;
  for (std::size_t i = 0; i < cfg.patient_count(); ++i) out.push_back(generate_volume(cfg, i));
  return out;
}

/// Generates and writes each patient to root/<patient_id>/ without holding
/// the cohort in memory.
inline std::vector<std::string> write_cohort(const PhantomConfig& cfg, const std::filesystem::path& root,
                                             std::size_t jobs = 1) {
  cfg.validate();
  std::filesystem::create_directories(root);
  std::vector<std::string> ids(cfg.patient_count());
  parallel_for(cfg.patient_count(), jobs, [&](std::size_t i) {
    const VolumeSet v = generate_volume(cfg, i);
    write_volume(root / v.patient_id, v);
    ids[i] = v.patient_id;
  });
  return ids;
}

/// Variance of the first sequence's intensities inside the mask.
inline double lesion_variance(const VolumeSet& v) {
  const auto& g = v.sequences.at(0).grid;
  double sum = 0, sq = 0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < g.size(); ++i)
    if (v.mask[i] != 0.0f) {
      sum += g[i];
      sq += static_cast<double>(g[i]) * g[i];
      ++n;
    }
  if (n == 0) return 0.0;
  const double mean = sum / static_cast<double>(n);
  return sq / static_cast<double>(n) - mean * mean;
}

}  // namespace gradenet
