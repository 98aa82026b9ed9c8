#include <gtest/gtest.h>

#include "support.hpp"

using namespace casedx;

namespace {

// Linear interpolation with aligned corners along one axis.
std::vector<double> interp1(const std::vector<double>& v, int n) {
  std::vector<double> out(n);
  const int m = static_cast<int>(v.size());
  for (int i = 0; i < n; ++i) {
    const double pos = n > 1 ? static_cast<double>(i) * (m - 1) / (n - 1) : 0.0;
    const int a = std::min(static_cast<int>(pos), m - 1), b = std::min(a + 1, m - 1);
    out[i] = v[a] + (v[b] - v[a]) * (pos - a);
  }
  return out;
}

Scan scan_of(Volume v, Dims dims, std::optional<int> key = std::nullopt) {
  Scan s;
  s.id = "s0";
  s.dims = dims;
  s.key_slice = key;
  s.volume = std::make_shared<const Volume>(std::move(v));
  return s;
}

}  // namespace

TEST(Normalize, UniformDepthStride) {
  const auto idx = depth_indices(64, 32);
  for (int k = 0; k < 32; ++k) EXPECT_EQ(idx[k], 2 * k);
  // slice z carries the value z: the output slice k holds source slice 2k
  Volume v(64, 8, 8);
  for (int z = 0; z < 64; ++z)
    for (int i = 0; i < 64; ++i) v.voxels[z * 64 + i] = static_cast<float>(z);
  const CanonicalScan c = normalize_volume(v, Dims::three_d, {4, 4, 32});
  for (int k = 0; k < 32; ++k) EXPECT_NEAR(c.values.at(k, 1, 2), 2.0 * k / 62.0, 1e-6);
}

TEST(Normalize, ConstantImageBecomesZeros) {
  const CanonicalScan c = normalize_volume(Volume(1, 256, 256, 7.f), Dims::two_d, {256, 256, 32});
  EXPECT_EQ(c.values.depth, 1);
  EXPECT_EQ(c.values.height, 256);
  EXPECT_TRUE(std::all_of(c.values.voxels.begin(), c.values.voxels.end(), [](float x) { return x == 0.f; }));
}

TEST(Normalize, BilinearMatchesSeparableOracle) {
  Volume v(1, 4, 4);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x) v.at(0, y, x) = static_cast<float>((x + y) % 2);
  const int H = 10, W = 7;
  const CanonicalScan c = normalize_volume(v, Dims::two_d, {H, W, 1});
  std::vector<std::vector<double>> rows;
  for (int y = 0; y < 4; ++y) {
    std::vector<double> r;
    for (int x = 0; x < 4; ++x) r.push_back(v.at(0, y, x));
    rows.push_back(interp1(r, W));
  }
  for (int x = 0; x < W; ++x) {
    std::vector<double> col;
    for (int y = 0; y < 4; ++y) col.push_back(rows[y][x]);
    const auto ref = interp1(col, H);
    for (int y = 0; y < H; ++y) EXPECT_NEAR(c.values.at(0, y, x), ref[y], 1e-6) << y << "," << x;
  }
}

TEST(Normalize, UpsamplingKeepsCorners) {
  Rng rng(2);
  Volume v(32, 128, 128);
  for (float& x : v.voxels) x = static_cast<float>(rng.uniform(0.1, 0.9));
  for (int z = 0; z < 32; ++z) {
    v.at(z, 0, 0) = 0.f;
    v.at(z, 0, 127) = 1.f;
    v.at(z, 127, 0) = 0.25f;
    v.at(z, 127, 127) = 0.75f;
  }
  const CanonicalScan c = normalize_volume(v, Dims::three_d, {256, 256, 32});
  ASSERT_EQ(c.values.depth, 32);
  for (int z = 0; z < 32; z += 7) {
    EXPECT_FLOAT_EQ(c.values.at(z, 0, 0), 0.f);
    EXPECT_FLOAT_EQ(c.values.at(z, 0, 255), 1.f);
    EXPECT_FLOAT_EQ(c.values.at(z, 255, 0), 0.25f);
    EXPECT_FLOAT_EQ(c.values.at(z, 255, 255), 0.75f);
  }
}

TEST(Normalize, IdempotentOnCanonicalInput) {
  Rng rng(3);
  const Geometry geo{16, 16, 4};
  const CanonicalScan a = casedx::testing::random_scan(geo, Dims::three_d, rng);
  const CanonicalScan once = normalize_volume(a.values, Dims::three_d, geo);
  const CanonicalScan twice = normalize_volume(once.values, Dims::three_d, geo);
  EXPECT_EQ(once.values.voxels, twice.values.voxels);
}

TEST(Normalize, RejectsNonFinite) {
  Volume v(1, 4, 4, 0.f);
  v.voxels[3] = std::numeric_limits<float>::quiet_NaN();
  EXPECT_THROW(normalize_volume(v, Dims::two_d, {4, 4, 1}), DataError);
}

TEST(Augment, NoDrawIsIdentity) {
  Rng rng(4);
  const CanonicalScan in = casedx::testing::random_scan({12, 12, 3}, Dims::three_d, rng);
  AugmentConfig cfg;
  int identity_seeds = 0;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    AugmentDraw d{};
    const CanonicalScan out = augment(in, seed, cfg, &d);
    if (std::none_of(d.begin(), d.end(), [](bool b) { return b; })) {
      EXPECT_EQ(out.values.voxels, in.values.voxels);
      ++identity_seeds;
    }
  }
  EXPECT_GT(identity_seeds, 0);
}

TEST(Augment, AtLeastOneTransformFrequency) {
  Rng rng(5);
  const CanonicalScan in = casedx::testing::random_scan({8, 8, 1}, Dims::two_d, rng);
  int fired = 0;
  for (std::uint64_t seed = 0; seed < 10000; ++seed) {
    AugmentDraw d{};
    augment(in, seed, {}, &d);
    fired += std::any_of(d.begin(), d.end(), [](bool b) { return b; });
  }
  EXPECT_NEAR(fired / 10000.0, 1.0 - std::pow(0.85, 4), 0.02);
}

TEST(Augment, NoiseOnlyChangesValuesNotShape) {
  Rng rng(6);
  CanonicalScan in = casedx::testing::random_scan({16, 16, 2}, Dims::three_d, rng);
  for (float& x : in.values.voxels) x = 0.25f + 0.5f * x;
  AugmentConfig cfg;
  for (std::uint64_t seed = 0; seed < 2000; ++seed) {
    AugmentDraw d{};
    const CanonicalScan out = augment(in, seed, cfg, &d);
    if (!(d[0] && !d[1] && !d[2] && !d[3])) continue;
    ASSERT_EQ(out.values.voxels.size(), in.values.voxels.size());
    double diff = 0;
    for (std::size_t i = 0; i < in.values.voxels.size(); ++i) diff += std::abs(out.values.voxels[i] - in.values.voxels[i]);
    EXPECT_GT(diff / in.values.voxels.size(), 0.0);
    return;
  }
  FAIL() << "no noise-only draw in 2000 seeds";
}

TEST(Augment, RangeAndDeterminism) {
  Rng rng(7);
  const CanonicalScan in = casedx::testing::random_scan({16, 16, 4}, Dims::three_d, rng);
  AugmentConfig cfg;
  cfg.probability = 1.0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const CanonicalScan a = augment(in, seed, cfg), b = augment(in, seed, cfg);
    EXPECT_EQ(a.values.voxels, b.values.voxels);
    for (float x : a.values.voxels) ASSERT_TRUE(x >= 0.f && x <= 1.f);
  }
}

TEST(KeySlice, ZeroProbabilityKeepsCase) {
  Case c;
  c.id = "k";
  c.scans = {scan_of(Volume(8, 4, 4, 1.f), Dims::three_d, 5)};
  const Case out = key_slice_substitute(c, 0.0, 1);
  EXPECT_EQ(out.scans[0].dims, Dims::three_d);
  EXPECT_EQ(out.scans[0].volume, c.scans[0].volume);
}

TEST(KeySlice, ForcedSubstitutionTakesKeySlice) {
  Volume v(8, 4, 4);
  for (std::size_t i = 0; i < v.voxels.size(); ++i) v.voxels[i] = static_cast<float>(i);
  Case c;
  c.id = "k";
  c.scans = {scan_of(v, Dims::three_d, 5)};
  const Case out = key_slice_substitute(c, 1.0, 1);
  ASSERT_EQ(out.scans[0].dims, Dims::two_d);
  EXPECT_EQ(out.scans[0].volume->depth, 1);
  EXPECT_EQ(out.scans[0].volume->voxels, v.slice(5).voxels);
}

TEST(KeySlice, HalfProbabilityFrequency) {
  Case c;
  c.id = "k";
  c.scans = {scan_of(Volume(8, 4, 4, 1.f), Dims::three_d, 2)};
  int hits = 0;
  for (std::uint64_t seed = 0; seed < 1000; ++seed) hits += key_slice_substitute(c, 0.5, seed).scans[0].dims == Dims::two_d;
  EXPECT_NEAR(hits / 1000.0, 0.5, 0.05);
}
