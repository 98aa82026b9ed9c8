#include <gtest/gtest.h>

#include <fstream>

#include "support.hpp"

using namespace casedx;
using casedx::testing::random_scan;
using casedx::testing::TempDir;

namespace {

ModelConfig micro(EncoderVariant v) {
  ModelConfig m;
  auto& e = m.encoder;
  e.variant = v;
  e.embed_dim = 16;
  e.geometry = {16, 16, 4};
  e.width = 4;
  e.norm_blocks = {1};
  e.shared_blocks = {1};
  e.norm_groups = 2;
  e.layers = 1;
  e.heads = 2;
  e.ffn_mult = 2;
  e.patch_size = 8;
  e.cube_depth = 2;
  e.patch_hidden = 16;
  m.fusion.layers = 1;
  m.fusion.heads = 2;
  m.fusion.ffn_mult = 2;
  return m;
}

LabelSpace two_labels() {
  LabelSpace ls;
  ls.classes = ls.names = {"a", "b"};
  ls.counts = {5, 5};
  ls.category = {Stratum::tail, Stratum::tail};
  return ls;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

TEST(ScoreCam, ZeroInputGivesZeroMap) {
  const auto m = Model<float>::build(micro(EncoderVariant::mix), two_labels(), 1);
  Rng rng(1);
  auto s = random_scan({16, 16, 4}, Dims::three_d, rng);
  std::fill(s.values.voxels.begin(), s.values.voxels.end(), 0.f);
  const auto map = score_cam(m, {s}, 0, {});
  EXPECT_TRUE(std::all_of(map.heat.begin(), map.heat.end(), [](float x) { return x == 0.f; }));
}

TEST(ScoreCam, ShapeRangeAndDeterminism) {
  for (EncoderVariant v : {EncoderVariant::resnet, EncoderVariant::mix})
    for (FusionMode f : {FusionMode::learnable, FusionMode::max}) {
      ModelConfig cfg = micro(v);
      cfg.fusion.mode = f;
      const auto m = Model<float>::build(cfg, two_labels(), 2);
      Rng rng(2);
      const std::vector<CanonicalScan> scans = {random_scan({16, 16, 4}, Dims::three_d, rng, Modality::ct, "x"),
                                                random_scan({16, 16, 4}, Dims::two_d, rng, Modality::xray, "y")};
      const auto a = score_cam(m, scans, 0, {0, 1});
      const auto b = score_cam(m, scans, 1, {0, 1});
      const auto c = score_cam(m, scans, 0, {1, std::nullopt});
      for (const auto* map : {&a, &b, &c}) {
        EXPECT_EQ(map->height, 16);
        EXPECT_EQ(map->width, 16);
        ASSERT_EQ(map->heat.size(), 256u);
        for (float x : map->heat) ASSERT_TRUE(x >= 0.f && x <= 1.f);
      }
      EXPECT_EQ(a.class_id, "a");
      EXPECT_EQ(b.class_id, "b");
      EXPECT_EQ(c.scan_id, "y");
      EXPECT_EQ(score_cam(m, scans, 0, {0, 1}).heat, a.heat) << to_string(v);
    }
}

TEST(ScoreCam, RejectsViTAndBadSelectors) {
  Rng rng(3);
  const std::vector<CanonicalScan> scans = {random_scan({16, 16, 4}, Dims::three_d, rng)};
  const auto vit = Model<float>::build(micro(EncoderVariant::vit), two_labels(), 3);
  try {
    score_cam(vit, scans, 0, {});
    FAIL();
  } catch (const InvalidArgument& e) {
    EXPECT_NE(std::string(e.what()).find("vit"), std::string::npos);
  }
  const auto mix = Model<float>::build(micro(EncoderVariant::mix), two_labels(), 3);
  EXPECT_THROW(score_cam(mix, scans, 2, {}), InvalidArgument);
  EXPECT_THROW(score_cam(mix, scans, 0, {1, std::nullopt}), InvalidArgument);
  EXPECT_THROW(score_cam(mix, scans, 0, {0, 4}), InvalidArgument);
}

TEST(ScoreCam, CaseEntryMapsKeySliceToCanonicalDepth) {
  EXPECT_EQ(canonical_slice(4, 8, 4), 2);
  EXPECT_EQ(canonical_slice(0, 8, 4), 0);
  EXPECT_EQ(canonical_slice(7, 8, 4), 3);

  Rng rng(4);
  Volume v(8, 20, 20);
  for (float& x : v.voxels) x = static_cast<float>(rng.uniform());
  Case c;
  c.id = "k";
  Scan s;
  s.id = "k_s0";
  s.dims = Dims::three_d;
  s.key_slice = 6;
  s.volume = std::make_shared<const Volume>(v);
  c.scans = {s};
  const auto m = Model<float>::build(micro(EncoderVariant::mix), two_labels(), 4);
  Preprocessor prep(m.config.encoder.geometry);
  const auto map = score_cam(m, c, "b", {}, prep);
  EXPECT_EQ(map.slice, 3);
  EXPECT_EQ(map.class_id, "b");
  EXPECT_THROW(score_cam(m, c, "zzz", {}, prep), InvalidArgument);
}

TEST(Saliency, MassInBox) {
  SaliencyMap m;
  m.height = 4;
  m.width = 4;
  m.heat.assign(16, 1.f);
  EXPECT_DOUBLE_EQ(saliency_mass_in_box(m, 0, 2, 0, 2), 0.25);
  EXPECT_DOUBLE_EQ(saliency_mass_in_box(m, 0, 4, 0, 4), 1.0);
  m.heat.assign(16, 0.f);
  m.heat[5] = 1.f;  // (1, 1)
  EXPECT_DOUBLE_EQ(saliency_mass_in_box(m, 1, 2, 1, 2), 1.0);
  EXPECT_DOUBLE_EQ(saliency_mass_in_box(m, 2, 4, 2, 4), 0.0);
  m.heat.assign(16, 0.f);
  EXPECT_DOUBLE_EQ(saliency_mass_in_box(m, 0, 4, 0, 4), 0.0);
}

TEST(Saliency, ImageWriters) {
  TempDir dir;
  SaliencyMap m;
  m.height = 2;
  m.width = 3;
  m.heat = {0.f, 0.5f, 1.f, 1.f, 0.f, 0.25f};
  write_pgm(dir / "h.pgm", 2, 3, m.heat);
  const std::string pgm = slurp(dir / "h.pgm");
  const std::string head = "P5\n3 2\n255\n";
  ASSERT_EQ(pgm.size(), head.size() + 6);
  EXPECT_EQ(pgm.substr(0, head.size()), head);
  EXPECT_EQ(static_cast<unsigned char>(pgm[head.size() + 2]), 255);
  EXPECT_EQ(static_cast<unsigned char>(pgm[head.size() + 1]), 128);
  write_overlay_ppm(dir / "o.ppm", m, std::vector<float>(6, 0.f), 1.0);
  const std::string ppm = slurp(dir / "o.ppm");
  const std::string phead = "P6\n3 2\n255\n";
  ASSERT_EQ(ppm.size(), phead.size() + 18);
  // full heat renders yellow, zero heat black
  EXPECT_EQ(static_cast<unsigned char>(ppm[phead.size() + 6]), 255);
  EXPECT_EQ(static_cast<unsigned char>(ppm[phead.size() + 7]), 255);
  EXPECT_EQ(static_cast<unsigned char>(ppm[phead.size() + 0]), 0);
}
