#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "gradenet/gradenet.hpp"

using namespace gradenet;
namespace fs = std::filesystem;

namespace {

// Sequence values encode (sequence, z, y, x) so any misplaced copy shows up.
float encode(std::size_t seq, std::size_t z, std::size_t y, std::size_t x) {
  return static_cast<float>(1 + seq) * 1000.0f + static_cast<float>(z) + 0.01f * static_cast<float>(y) +
         0.0001f * static_cast<float>(x);
}

VolumeSet make_volume(const std::string& id, Grade g, Shape dims, std::vector<std::string> seqs) {
  VolumeSet v;
  v.patient_id = id;
  v.grade = g;
  v.mask = Tensor<float>(dims);
  for (const auto& name : seqs) {
    Tensor<float> grid(dims);
    const auto r = sequence_rank(name);
    for (std::size_t z = 0; z < dims[0]; ++z)
      for (std::size_t y = 0; y < dims[1]; ++y)
        for (std::size_t x = 0; x < dims[2]; ++x) grid.at(z, y, x) = encode(r, z, y, x);
    v.sequences.push_back({name, std::move(grid)});
  }
  return v;
}

void add_sphere(VolumeSet& v, double cz, double cy, double cx, double r) {
  const auto& d = v.dims();
  for (std::size_t z = 0; z < d[0]; ++z)
    for (std::size_t y = 0; y < d[1]; ++y)
      for (std::size_t x = 0; x < d[2]; ++x) {
        const double dz = static_cast<double>(z) - cz, dy = static_cast<double>(y) - cy,
                     dx = static_cast<double>(x) - cx;
        if (dz * dz + dy * dy + dx * dx <= r * r) v.mask.at(z, y, x) = 1.0f;
      }
}

void add_box(VolumeSet& v, std::size_t z0, std::size_t z1, std::size_t r0, std::size_t r1, std::size_t c0,
             std::size_t c1) {
  for (std::size_t z = z0; z <= z1; ++z)
    for (std::size_t y = r0; y <= r1; ++y)
      for (std::size_t x = c0; x <= c1; ++x) v.mask.at(z, y, x) = 1.0f;
}

fs::path temp_dir(const std::string& name) {
  const auto d = fs::temp_directory_path() / ("gradenet_prep_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

PrepConfig raw_config() {
  PrepConfig c;
  c.normalize = false;
  return c;
}

}  // namespace

TEST(ReferenceSlice, SingleVoxel) {
  auto v = make_volume("p", Grade::hgg, {20, 8, 9}, {"T1"});
  v.mask.at(7, 3, 5) = 1.0f;
  EXPECT_EQ(find_reference_slice(v.mask, Plane::axial), 7u);
  EXPECT_EQ(find_reference_slice(v.mask, Plane::coronal), 3u);
  EXPECT_EQ(find_reference_slice(v.mask, Plane::sagittal), 5u);
}

TEST(ReferenceSlice, TiesGoToLowestIndex) {
  EXPECT_EQ(reference_from_areas({0, 5, 9, 9, 2}), 2u);
  EXPECT_EQ(reference_from_areas({4}), 0u);
}

TEST(ReferenceSlice, EmptyMaskIsDataError) {
  EXPECT_THROW(reference_from_areas({0, 0, 0}, "x"), DataError);
  EXPECT_THROW(reference_from_areas({}), DataError);
  try {
    reference_from_areas({0, 0}, "BRATS_007");
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("BRATS_007"), std::string::npos);
  }
}

TEST(SliceWindow, Examples) {
  EXPECT_EQ(slice_window(50, 20, 5, 155), (std::vector<std::size_t>{40, 45, 50, 55}));
  const auto lgg = slice_window(50, 20, 2, 155);
  ASSERT_EQ(lgg.size(), 10u);
  EXPECT_EQ(lgg.front(), 40u);
  EXPECT_EQ(lgg.back(), 58u);
  EXPECT_EQ(slice_window(3, 20, 5, 155), (std::vector<std::size_t>{0, 5, 10, 15}));
  EXPECT_EQ(slice_window(150, 20, 5, 155), (std::vector<std::size_t>{135, 140, 145, 150}));
  EXPECT_EQ(slice_window(10, 20, 5, 20).front(), 0u);
}

TEST(SliceWindow, Rejects) {
  EXPECT_THROW(slice_window(5, 20, 5, 19), DataError);
  EXPECT_THROW(slice_window(5, 20, 0, 155), ConfigError);
  EXPECT_THROW(slice_window(200, 20, 5, 155), DataError);
}

TEST(SliceWindow, CountsMatchBruteForce) {
  for (std::size_t depth = 20; depth < 60; depth += 7)
    for (std::size_t ref = 0; ref < depth; ++ref)
      for (std::size_t skip : {1u, 2u, 3u, 5u}) {
        const auto w = slice_window(ref, 20, skip, depth);
        std::size_t expected = 0;
        for (std::size_t i = 0; i < 20; i += skip) ++expected;
        ASSERT_EQ(w.size(), expected);
        EXPECT_LE(w.back(), depth - 1);
        EXPECT_LE(w.back() - w.front(), 19u);
      }
}

TEST(Patch, ExactSizeBoxIsVerbatimCopy) {
  auto v = make_volume("p", Grade::hgg, {25, 100, 100}, {"T1", "T2"});
  add_box(v, 5, 15, 40, 71, 40, 71);
  auto cfg = raw_config();
  cfg.jitter = 0;
  Rng rng(1);
  const auto p = extract_patch(v, 10, 10, rng, cfg);
  ASSERT_EQ(p.shape(), (Shape{2, 32, 32}));
  for (std::size_t c = 0; c < 2; ++c) {
    const auto& g = v.sequences[c].grid;
    for (std::size_t i = 0; i < 32; ++i)
      for (std::size_t j = 0; j < 32; ++j) ASSERT_EQ(p.at(c, i, j), g.at(10, 40 + i, 40 + j));
  }
}

TEST(Patch, ResampleCornersAndMidpoint) {
  Tensor<float> img({4, 4});
  for (std::size_t i = 0; i < 16; ++i) img[i] = static_cast<float>(i);
  const auto out = resample_box(img, {0, 3, 0, 3}, 7);
  EXPECT_FLOAT_EQ(out.at(0, 0), 0.0f);
  EXPECT_FLOAT_EQ(out.at(6, 6), 15.0f);
  EXPECT_FLOAT_EQ(out.at(0, 6), 3.0f);
  // Corner-aligned: output column 1 samples source column 0.5.
  EXPECT_FLOAT_EQ(out.at(0, 1), 0.5f);
  EXPECT_FLOAT_EQ(out.at(1, 1), 2.5f);
}

TEST(Patch, FallsBackToReferenceBox) {
  auto v = make_volume("p", Grade::hgg, {25, 60, 60}, {"T1"});
  add_box(v, 10, 10, 20, 51, 10, 41);
  auto cfg = raw_config();
  cfg.jitter = 0;
  Rng rng(1);
  const auto p = extract_patch(v, 3, 10, rng, cfg);
  EXPECT_EQ(p.at(0, 0, 0), v.sequences[0].grid.at(3, 20, 10));
}

TEST(Jitter, StaysWithinAmountAndNonDegenerate) {
  const BoundingBox box{40, 71, 30, 50};
  Rng rng(3);
  std::array<bool, 11> seen{};
  for (int t = 0; t < 2000; ++t) {
    const auto b = jitter_box(box, 5, 100, 100, rng);
    EXPECT_LE(std::abs(static_cast<long>(b.row_min) - 40), 5);
    EXPECT_LE(std::abs(static_cast<long>(b.row_max) - 71), 5);
    EXPECT_LE(std::abs(static_cast<long>(b.col_min) - 30), 5);
    EXPECT_LE(std::abs(static_cast<long>(b.col_max) - 50), 5);
    EXPECT_LE(b.row_min, b.row_max);
    EXPECT_LE(b.col_min, b.col_max);
    seen[static_cast<std::size_t>(static_cast<long>(b.row_min) - 35)] = true;
  }
  for (bool s : seen) EXPECT_TRUE(s);
  EXPECT_EQ(jitter_box(box, 0, 100, 100, rng), box);
}

TEST(Jitter, SingleVoxelBoxIsValid) {
  Tensor<float> img({3, 3}, 2.0f);
  img.at(1, 1) = 9.0f;
  const auto out = resample_box(img, {1, 1, 1, 1}, 4);
  for (float x : out.data()) EXPECT_EQ(x, 9.0f);
}

TEST(Jitter, ClampsAtImageEdge) {
  Rng rng(4);
  for (int t = 0; t < 500; ++t) {
    const auto b = jitter_box({0, 3, 95, 99}, 5, 100, 100, rng);
    EXPECT_LE(b.col_max, 99u);
    EXPECT_LE(b.row_min, b.row_max);
    EXPECT_LE(b.col_min, b.col_max);
  }
}

TEST(CenterFit, CropsLargerImage) {
  Tensor<float> img({240, 240});
  for (std::size_t i = 0; i < img.size(); ++i) img[i] = static_cast<float>(i);
  const auto out = center_fit(img, 200);
  ASSERT_EQ(out.shape(), (Shape{200, 200}));
  EXPECT_EQ(out.at(0, 0), img.at(20, 20));
  EXPECT_EQ(out.at(199, 199), img.at(219, 219));
}

TEST(CenterFit, PadsSmallerImage) {
  Tensor<float> img({180, 180}, 1.0f);
  img.at(0, 0) = 5.0f;
  const auto out = center_fit(img, 200);
  EXPECT_EQ(out.at(10, 10), 5.0f);
  EXPECT_EQ(out.at(9, 9), 0.0f);
  EXPECT_EQ(out.at(189, 189), 1.0f);
  EXPECT_EQ(out.at(190, 190), 0.0f);
  double sum = 0;
  for (float x : out.data()) sum += x;
  EXPECT_DOUBLE_EQ(sum, 180.0 * 180.0 + 4.0);
}

TEST(Channels, CanonicalOrderRegardlessOfRequest) {
  auto v = make_volume("p", Grade::lgg, {25, 40, 40}, {"T1", "T1C", "T2", "FLAIR"});
  add_box(v, 5, 15, 5, 30, 5, 30);
  auto cfg = raw_config();
  cfg.sequences = {"FLAIR", "T1"};
  const auto s = extract_slice_sample(v, Plane::axial, 10, cfg);
  ASSERT_EQ(s.dim(0), 2u);
  EXPECT_EQ(selected_sequences(v, cfg), (std::vector<std::string>{"T1", "FLAIR"}));
  // Padded 40 -> 200: source (0,0) lands at (80,80).
  EXPECT_EQ(s.at(0, 80, 80), encode(0, 10, 0, 0));
  EXPECT_EQ(s.at(1, 80, 80), encode(3, 10, 0, 0));
  cfg.sequences = {"T2"};
  v.sequences.erase(v.sequences.begin() + 2);
  EXPECT_THROW(selected_sequences(v, cfg), DataError);
}

TEST(Planes, ImagesIndexTheRightAxis) {
  auto v = make_volume("p", Grade::hgg, {5, 6, 7}, {"T1"});
  const auto& g = v.sequences[0].grid;
  EXPECT_EQ(plane_image(g, Plane::axial, 2).shape(), (Shape{6, 7}));
  EXPECT_EQ(plane_image(g, Plane::coronal, 3).at(4, 6), g.at(4, 3, 6));
  EXPECT_EQ(plane_image(g, Plane::sagittal, 1).at(4, 5), g.at(4, 5, 1));
  EXPECT_THROW(plane_image(g, Plane::sagittal, 7), ShapeError);
}

TEST(Multiplanar, CenteredSphereReferencesAtCenter) {
  auto v = make_volume("p", Grade::hgg, {60, 70, 80}, {"T1", "T2"});
  add_sphere(v, 30, 35, 40, 8);
  for (auto p : kAllPlanes) {
    const auto areas = slice_areas(v.mask, p);
    const std::size_t centre = p == Plane::axial ? 30 : p == Plane::coronal ? 35 : 40;
    EXPECT_EQ(find_reference_slice(v.mask, p), centre);
    EXPECT_EQ(areas[centre - 1], areas[centre + 1]);
  }
  const auto triples = extract_multiplanar(v, raw_config());
  ASSERT_EQ(triples.size(), 4u);
  EXPECT_EQ(triples[0].slices, (std::array<std::size_t, 3>{20, 25, 30}));
  EXPECT_EQ(triples[3].slices, (std::array<std::size_t, 3>{35, 40, 45}));
  for (const auto& t : triples)
    for (const auto& s : t.stacks) EXPECT_EQ(s.shape(), (Shape{2, 200, 200}));
  // Coronal image at y=25 is [nz=60, nx=80] padded to 200: offset (70, 60).
  EXPECT_EQ(triples[0].stacks[1].at(1, 70, 60), encode(2, 0, 25, 0));
}

TEST(Normalize, ZScoreOverNonzeroVoxels) {
  VolumeSet v;
  v.patient_id = "n";
  v.mask = Tensor<float>({1, 1, 4});
  v.sequences.push_back({"T1", Tensor<float>({1, 1, 4}, std::vector<float>{0, 1, 2, 3})});
  v.sequences.push_back({"T2", Tensor<float>({1, 1, 4}, std::vector<float>{0, 7, 7, 0})});
  const auto n = normalize_volume(v);
  const double sd = std::sqrt(2.0 / 3.0);
  EXPECT_EQ(n.sequences[0].grid[0], 0.0f);
  EXPECT_NEAR(n.sequences[0].grid[1], -1.0 / sd, 1e-6);
  EXPECT_NEAR(n.sequences[0].grid[2], 0.0, 1e-6);
  EXPECT_NEAR(n.sequences[0].grid[3], 1.0 / sd, 1e-6);
  for (float x : n.sequences[1].grid.data()) EXPECT_EQ(x, 0.0f);
}

TEST(PrepareVolume, SampleCountsPerGrade) {
  auto hgg = make_volume("h", Grade::hgg, {40, 50, 50}, {"T1", "T2"});
  add_sphere(hgg, 20, 25, 25, 6);
  auto lgg = make_volume("l", Grade::lgg, {40, 50, 50}, {"T1", "T2"});
  add_sphere(lgg, 20, 25, 25, 6);
  const PrepConfig cfg;
  for (auto mode : {SampleMode::patch, SampleMode::slice, SampleMode::planar}) {
    const auto h = prepare_volume(hgg, mode, cfg);
    const auto l = prepare_volume(lgg, mode, cfg);
    EXPECT_EQ(h.size(), 4u);
    EXPECT_EQ(l.size(), 10u);
    EXPECT_EQ(h[0].stacks.size(), mode == SampleMode::planar ? 3u : 1u);
    EXPECT_EQ(h[0].record.binary(), 1);
    EXPECT_EQ(l[0].record.binary(), 0);
  }
  const auto p = prepare_volume(hgg, SampleMode::patch, cfg);
  EXPECT_EQ(p[0].stacks[0].shape(), (Shape{2, 32, 32}));
  EXPECT_EQ(p[0].record.slice_indices, std::vector<std::size_t>{10});
  EXPECT_EQ(prepare_volume(hgg, SampleMode::slice, cfg)[0].stacks[0].shape(), (Shape{2, 200, 200}));
}

TEST(PrepareVolume, PatchJitterIsDeterministicPerPatient) {
  auto a = make_volume("a", Grade::hgg, {40, 50, 50}, {"T1"});
  add_sphere(a, 20, 25, 25, 8);
  auto b = a;
  b.patient_id = "b";
  const PrepConfig cfg;
  const auto a1 = prepare_volume(a, SampleMode::patch, cfg);
  const auto a2 = prepare_volume(a, SampleMode::patch, cfg);
  const auto b1 = prepare_volume(b, SampleMode::patch, cfg);
  bool differs = false;
  for (std::size_t k = 0; k < a1.size(); ++k) {
    EXPECT_EQ(a1[k].stacks[0], a2[k].stacks[0]);
    differs |= !(a1[k].stacks[0] == b1[k].stacks[0]);
  }
  EXPECT_TRUE(differs);
}

TEST(PrepareVolume, RejectsMismatchedGrids) {
  auto v = make_volume("m", Grade::hgg, {40, 50, 50}, {"T1", "T2"});
  add_sphere(v, 20, 25, 25, 6);
  v.sequences[1].grid = Tensor<float>({40, 50, 49});
  EXPECT_THROW(prepare_volume(v, SampleMode::slice, PrepConfig{}), DataError);
  auto e = make_volume("e", Grade::hgg, {40, 50, 50}, {"T1"});
  EXPECT_THROW(prepare_volume(e, SampleMode::patch, PrepConfig{}), DataError);
}

TEST(SampleFile, RoundTrip) {
  const auto dir = temp_dir("file");
  std::vector<Tensor<float>> stacks;
  for (int k = 0; k < 3; ++k) {
    Tensor<float> t({2, 5, 4});
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<float>(k * 100 + static_cast<int>(i)) * 0.5f;
    stacks.push_back(t);
  }
  write_sample_file(dir / "s.f32", SampleMode::planar, stacks, {"T1C", "T2"});
  EXPECT_EQ(fs::file_size(dir / "s.f32"), 256u + 3u * 40u * 4u);
  const auto f = read_sample_file(dir / "s.f32");
  EXPECT_EQ(f.mode, SampleMode::planar);
  EXPECT_EQ(f.channels, (std::vector<std::string>{"T1C", "T2"}));
  ASSERT_EQ(f.stacks.size(), 3u);
  for (int k = 0; k < 3; ++k) EXPECT_EQ(f.stacks[k], stacks[k]);

  fs::resize_file(dir / "s.f32", 256 + 100);
  EXPECT_THROW(read_sample_file(dir / "s.f32"), DataError);
  std::ofstream(dir / "bad.f32") << "NOTASAMPLE";
  EXPECT_THROW(read_sample_file(dir / "bad.f32"), DataError);
  EXPECT_THROW(read_sample_file(dir / "missing.f32"), DataError);
  EXPECT_THROW(write_sample_file(dir / "x.f32", SampleMode::patch, stacks, {"T1"}), ShapeError);
  fs::remove_all(dir);
}

TEST(Manifest, RoundTripAndErrors) {
  const auto dir = temp_dir("manifest");
  std::vector<SampleRecord> recs{
      {"BRATS_001", Grade::hgg, SampleMode::patch, {Plane::axial}, {45}, "samples/a.f32"},
      {"TCIA_9", Grade::non_deleted, SampleMode::planar, {Plane::axial, Plane::coronal, Plane::sagittal}, {1, 2, 3},
       "samples/b.f32"}};
  write_manifest(dir / "m.tsv", recs);
  EXPECT_EQ(read_manifest(dir / "m.tsv"), recs);
  EXPECT_EQ(manifest_line(recs[0]), "BRATS_001\tHGG\tpatch\taxial\t45\tsamples/a.f32");

  std::ofstream(dir / "bad.tsv") << "p\tHGG\tpatch\taxial\n";
  EXPECT_THROW(read_manifest(dir / "bad.tsv"), DataError);
  std::ofstream(dir / "bad2.tsv") << "p\tGBM\tpatch\taxial\t1\tx\n";
  EXPECT_THROW(read_manifest(dir / "bad2.tsv"), DataError);
  std::ofstream(dir / "bad3.tsv") << "p\tHGG\tplanar\taxial\t1\tx\n";
  EXPECT_THROW(read_manifest(dir / "bad3.tsv"), DataError);
  EXPECT_THROW(read_manifest(dir / "none.tsv"), DataError);
  fs::remove_all(dir);
}

TEST(PrepareCohort, WritesSortedRecordsThatLoad) {
  const auto dir = temp_dir("cohort");
  auto a = make_volume("z_lgg", Grade::lgg, {30, 40, 40}, {"T1", "T2"});
  add_sphere(a, 15, 20, 20, 5);
  auto b = make_volume("a_hgg", Grade::hgg, {30, 40, 40}, {"T1", "T2"});
  add_sphere(b, 15, 20, 20, 5);
  write_volume(dir / "vol" / "z_lgg", a);
  write_volume(dir / "vol" / "a_hgg", b);
  PrepConfig cfg;
  const auto rep = prepare_cohort(dir / "vol", SampleMode::patch, cfg, dir / "out", 2);
  ASSERT_EQ(rep.records.size(), 14u);
  EXPECT_EQ(rep.records.front().patient_id, "a_hgg");
  EXPECT_EQ(rep.records.back().patient_id, "z_lgg");
  EXPECT_EQ(read_manifest(dir / "out" / "manifest.tsv"), rep.records);
  const auto data = load_dataset(rep.records, dir / "out");
  ASSERT_EQ(data.size(), 14u);
  EXPECT_EQ(data[0].label, 1);
  EXPECT_EQ(data[0].inputs[0].shape(), (Shape{2, 32, 32}));
  EXPECT_EQ(data[0].inputs[0], prepare_volume(b, SampleMode::patch, cfg)[0].stacks[0]);
  EXPECT_THROW(prepare_cohort(dir / "empty", SampleMode::patch, cfg, dir / "o2"), DataError);
  fs::remove_all(dir);
}

TEST(PrepareCohort, PlanarSkipsUnusablePatient) {
  const auto dir = temp_dir("planar_skip");
  auto good = make_volume("good", Grade::hgg, {30, 40, 40}, {"T1"});
  add_sphere(good, 15, 20, 20, 5);
  auto bad = make_volume("bad", Grade::hgg, {30, 40, 40}, {"T1"});
  write_volume(dir / "vol" / "good", good);
  write_volume(dir / "vol" / "bad", bad);
  const auto rep = prepare_cohort(dir / "vol", SampleMode::planar, PrepConfig{}, dir / "out");
  EXPECT_EQ(rep.records.size(), 4u);
  ASSERT_EQ(rep.diagnostics.size(), 1u);
  EXPECT_NE(rep.diagnostics[0].find("bad"), std::string::npos);
  EXPECT_THROW(prepare_cohort(dir / "vol", SampleMode::patch, PrepConfig{}, dir / "out2"), DataError);
  fs::remove_all(dir);
}
