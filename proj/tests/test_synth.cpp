#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <fstream>

#include <json.hpp>

#include "splitsense/band_analysis.hpp"
#include "splitsense/error.hpp"
#include "splitsense/rng.hpp"
#include "splitsense/synth.hpp"
#include "support/helpers.hpp"

using namespace splitsense;
using namespace splitsense::synth;

namespace {

SynthConfig coarse() {
  SynthConfig c;
  c.bands = 61;  // 10 nm spacing keeps the tests quick
  return c;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

}  // namespace

TEST_CASE("spectral building blocks") {
  const SynthConfig c;
  const auto wl = wavelengths(c);
  REQUIRE(wl.size() == 448);
  CHECK(wl.front() == 400.0);
  CHECK(wl.back() == 1000.0);
  CHECK(split_delta(c, 540.0) == doctest::Approx(c.delta_amplitude));
  CHECK(split_delta(c, 519.0) == 0.0);
  CHECK(split_delta(c, 601.0) == 0.0);
  for (double w = 400.0; w <= 1000.0; w += 0.5) {
    CHECK(split_delta(c, w) >= 0.0);
    CHECK(split_delta(c, w) <= split_delta(c, 540.0));
  }
  CHECK(normal_profile(c, 500.0) < normal_profile(c, 700.0));
}

TEST_CASE("config JSON and validation") {
  SynthConfig c = coarse();
  c.seed = 99;
  nlohmann::json j = c;
  CHECK(j.get<SynthConfig>().seed == 99);
  CHECK(j.get<SynthConfig>().bands == 61);
  CHECK_THROWS_AS(nlohmann::json({{"bandz", 3}}).get<SynthConfig>(), Error);
  SynthConfig bad;
  bad.radius_min = 120.0;
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = SynthConfig{};
  bad.delta_peak_nm = 700.0;
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = SynthConfig{};
  bad.noise_sigma = -1.0;
  CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("samples are deterministic and twins differ only in the crack") {
  const SynthConfig c = coarse();
  const auto normal = gen_sample(c, Label::normal, 17);
  const auto again = gen_sample(c, Label::normal, 17);
  CHECK(normal.cube == again.cube);
  CHECK_FALSE(normal.crack.has_value());

  const auto split = gen_sample(c, Label::anomalous, 17);
  REQUIRE(split.crack.has_value());
  CHECK(split.mask.bits == normal.mask.bits);
  const auto& crack = *split.crack;

  std::size_t outside_diffs = 0;
  double worst_off_band = 0.0;
  std::vector<double> mean_diff(static_cast<std::size_t>(c.bands), 0.0);
  for (int b = 0; b < c.bands; ++b) {
    const double wl = split.cube.wavelengths()[static_cast<std::size_t>(b)];
    for (int r = 0; r < c.height; ++r)
      for (int k = 0; k < c.width; ++k) {
        const double d = split.cube.at(b, r, k) - normal.cube.at(b, r, k);
        if (!crack.at(r, k)) {
          outside_diffs += d != 0.0;
        } else {
          mean_diff[static_cast<std::size_t>(b)] += d;
          if (wl < c.delta_lo_nm || wl > c.delta_hi_nm) worst_off_band = std::max(worst_off_band, std::abs(d));
        }
      }
  }
  CHECK(outside_diffs == 0);
  CHECK(worst_off_band < 3.0 * c.noise_sigma);
  const auto peak = std::max_element(mean_diff.begin(), mean_diff.end()) - mean_diff.begin();
  const double peak_wl = split.cube.wavelengths()[static_cast<std::size_t>(peak)];
  CHECK(peak_wl >= c.delta_lo_nm);
  CHECK(peak_wl <= c.delta_hi_nm);
  CHECK(std::abs(peak_wl - c.delta_peak_nm) <= 10.0);
}

TEST_CASE("crack geometry (property)") {
  const SynthConfig c = coarse();
  SplitMix64 rng(5);
  for (int trial = 0; trial < 8; ++trial) {
    const auto s = gen_sample(c, Label::anomalous, rng.next());
    REQUIRE(s.crack.has_value());
    std::size_t inside = 0, outside = 0;
    for (std::size_t i = 0; i < s.crack->bits.size(); ++i) {
      if (s.crack->bits[i]) (s.mask.bits[i] ? inside : outside)++;
    }
    CHECK(outside == 0);
    const double fraction = static_cast<double>(inside) / static_cast<double>(s.mask.count());
    CHECK(fraction >= 0.005);
    CHECK(fraction <= 0.10);
    CHECK(patch_inside(*s.crack, 5).has_value());
    for (float v : s.cube.data()) CHECK_UNARY(v >= 0.0f && v <= 1.0f);
    CHECK(s.bbox.x0 >= 0);
    CHECK(s.bbox.x0 + s.bbox.w <= c.width);
  }
}

TEST_CASE("patch_inside") {
  auto m = preprocess::ForegroundMask::filled(10, 10, 0);
  CHECK_FALSE(patch_inside(m, 5).has_value());
  for (int r = 2; r < 9; ++r)
    for (int k = 1; k < 8; ++k) m.bits[static_cast<std::size_t>(r * 10 + k)] = 1;
  const auto p = patch_inside(m, 5);
  REQUIRE(p.has_value());
  CHECK(p->x == 2);
  CHECK(p->y == 3);
  CHECK(p->size == 5);
}

TEST_CASE("synthetic split band is recovered") {
  const SynthConfig c = coarse();
  std::vector<bands::Spectrum> normals, splits;
  for (std::uint64_t seed = 1; seed <= 4; ++seed) {
    const auto n = gen_sample(c, Label::normal, seed);
    const auto a = gen_sample(c, Label::anomalous, seed + 100);
    normals.push_back(bands::patch_mean_spectrum(n.cube, *patch_inside(n.mask)));
    splits.push_back(bands::patch_mean_spectrum(a.cube, *patch_inside(*a.crack)));
  }
  const auto report = bands::analyze(normals, splits, 20.0);
  CHECK(report.range.lo >= 520.0);
  CHECK(report.range.hi <= 600.0);
  CHECK(report.range.lo <= 540.0);
  CHECK(report.range.hi >= 540.0);
}

TEST_CASE("datasets") {
  const auto dir = splitsense::testing::temp_dir("synth_ds");
  SynthConfig c = coarse();
  c.width = c.height = 160;
  c.radius_min = 40.0;
  c.radius_max = 60.0;
  c.crack_width_min = 5.0;
  c.crack_width_max = 7.0;
  c.seed = 3;

  const auto empty = gen_dataset(c, 0, 0, dir / "empty");
  CHECK(empty.entries.empty());
  CHECK(read_manifest(dir / "empty" / "manifest.json").entries.empty());

  const auto plan = plan_dataset(c, 2, 1);
  const auto made = gen_dataset(c, 2, 1, dir / "a");
  REQUIRE(made.entries.size() == 3);
  CHECK(made.entries[0].id == "tomato_0000");
  CHECK(made.entries[0].label == Label::normal);
  CHECK(made.entries[2].label == Label::anomalous);
  CHECK(made.entries[2].seed == derive_seed(c.seed, 2));
  for (std::size_t i = 0; i < 3; ++i) CHECK(plan.entries[i].seed == made.entries[i].seed);
  CHECK_FALSE(made.entries[0].crack_path.has_value());
  REQUIRE(made.entries[2].crack_path.has_value());
  CHECK(std::filesystem::exists(dir / "a" / *made.entries[2].crack_path));
  CHECK(std::filesystem::exists(dir / "a" / "annotations.json"));

  const auto back = read_manifest(dir / "a" / "manifest.json");
  REQUIRE(back.entries.size() == 3);
  CHECK(back.entries[1].cube_path == made.entries[1].cube_path);
  CHECK(manifest_json(back) == manifest_json(made));

  const auto cube = hsi::load_cube(dir / "a" / made.entries[1].cube_path, hsi::Provenance::calibrated);
  CHECK(cube == gen_sample(c, Label::normal, made.entries[1].seed).cube);

  gen_dataset(c, 2, 1, dir / "b");
  for (const auto& e : std::filesystem::directory_iterator(dir / "a")) {
    CHECK(slurp(e.path()) == slurp(dir / "b" / e.path().filename()));
  }

  CHECK_THROWS_AS(gen_dataset(c, -1, 0, dir / "bad"), Error);
}
