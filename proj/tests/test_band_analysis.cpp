#include <doctest.h>

#include <cmath>

#include "splitsense/band_analysis.hpp"
#include "splitsense/error.hpp"
#include "support/helpers.hpp"

using namespace splitsense;
using namespace splitsense::bands;

namespace {

Spectrum curve(std::vector<double> x, auto&& f) {
  Spectrum s{std::move(x), {}};
  for (double w : s.wavelengths) s.values.push_back(f(w));
  return s;
}

std::vector<double> grid(double lo, double hi, double step) {
  std::vector<double> x;
  for (double v = lo; v <= hi + 1e-9; v += step) x.push_back(v);
  return x;
}

// Oracle: the curve is piecewise linear, so trapezoids over the breakpoints
// inside the window plus its interpolated ends integrate it exactly.
double oracle_integral(const Spectrum& s, double lo, double hi) {
  auto value_at = [&](double x) {
    for (std::size_t i = 0; i + 1 < s.wavelengths.size(); ++i) {
      if (x >= s.wavelengths[i] && x <= s.wavelengths[i + 1]) {
        const double t = (x - s.wavelengths[i]) / (s.wavelengths[i + 1] - s.wavelengths[i]);
        return s.values[i] + t * (s.values[i + 1] - s.values[i]);
      }
    }
    return s.values.back();
  };
  std::vector<double> pts{lo};
  for (double w : s.wavelengths)
    if (w > lo && w < hi) pts.push_back(w);
  pts.push_back(hi);
  double total = 0.0;
  for (std::size_t i = 0; i + 1 < pts.size(); ++i) total += 0.5 * (value_at(pts[i]) + value_at(pts[i + 1])) * (pts[i + 1] - pts[i]);
  return total;
}

}  // namespace

TEST_CASE("patch_mean_spectrum") {
  const auto cube = splitsense::testing::constant_cube(8, 8, {500.0, 600.0}, 0.3f);
  const auto s = patch_mean_spectrum(cube, {2, 3, 5});
  CHECK(s.wavelengths == cube.wavelengths());
  for (double v : s.values) CHECK(v == doctest::Approx(0.3));

  const hsi::HsiCube small(hsi::make_header(2, 2, {500.0}), {0.1f, 0.2f, 0.3f, 0.4f}, hsi::Provenance::calibrated);
  CHECK(patch_mean_spectrum(small, {0, 0, 2}).values[0] == doctest::Approx(0.25));

  CHECK_THROWS_AS(patch_mean_spectrum(cube, {6, 0, 5}), Error);
  CHECK_THROWS_AS(patch_mean_spectrum(cube, {-1, 0, 2}), Error);
}

TEST_CASE("patch_mean_spectrum ignores pixel order within the patch (property)") {
  SplitMix64 rng(8);
  for (int trial = 0; trial < 30; ++trial) {
    const int n = 4;
    std::vector<float> data(static_cast<std::size_t>(n * n * 3));
    for (auto& v : data) v = static_cast<float>(rng.uniform());
    std::vector<float> permuted = data;
    // Shuffle pixel positions consistently across bands.
    std::vector<std::size_t> perm(static_cast<std::size_t>(n * n));
    for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
    rng.shuffle(std::span<std::size_t>(perm));
    for (int b = 0; b < 3; ++b)
      for (std::size_t p = 0; p < perm.size(); ++p) permuted[static_cast<std::size_t>(b) * perm.size() + p] = data[static_cast<std::size_t>(b) * perm.size() + perm[p]];
    const hsi::HsiCube a(hsi::make_header(n, n, {500.0, 510.0, 520.0}), data, hsi::Provenance::calibrated);
    const hsi::HsiCube b(hsi::make_header(n, n, {500.0, 510.0, 520.0}), permuted, hsi::Provenance::calibrated);
    const auto sa = patch_mean_spectrum(a, {0, 0, n}), sb = patch_mean_spectrum(b, {0, 0, n});
    for (int i = 0; i < 3; ++i) CHECK(sa.values[static_cast<std::size_t>(i)] == doctest::Approx(sb.values[static_cast<std::size_t>(i)]).epsilon(1e-12));
  }
}

TEST_CASE("reflectance_difference") {
  const Spectrum a{{500.0, 510.0}, {0.6, 0.1}};
  const Spectrum b{{500.0, 510.0}, {0.2, 0.3}};
  const auto d = reflectance_difference(a, b);
  CHECK(d.values[0] == doctest::Approx(0.4));
  CHECK(d.values[1] == doctest::Approx(0.2));
  for (double v : reflectance_difference(a, a).values) CHECK(v == 0.0);
  CHECK_THROWS_AS(reflectance_difference(a, Spectrum{{500.0, 511.0}, {0.0, 0.0}}), Error);
}

TEST_CASE("integrate") {
  const Spectrum s{{0.0, 10.0, 20.0}, {0.0, 1.0, 0.0}};
  CHECK(integrate(s, 0.0, 20.0) == doctest::Approx(10.0));
  CHECK(integrate(s, 5.0, 15.0) == doctest::Approx(0.5 * (0.5 + 1.0) * 5.0 * 2.0));
  CHECK(integrate(s, 3.0, 3.0) == 0.0);
}

TEST_CASE("recommend_range worked examples") {
  const auto x = grid(500.0, 600.0, 1.0);
  SUBCASE("indicator") {
    const auto s = curve(x, [](double w) { return (w >= 530.0 && w <= 550.0) ? 1.0 : 0.0; });
    const auto r = recommend_range(s, 20.0);
    CHECK(r.lo == 530.0);
    CHECK(r.hi == 550.0);
  }
  SUBCASE("constant ties to the lowest start") {
    const auto r = recommend_range(curve(x, [](double) { return 0.7; }), 20.0);
    CHECK(r.lo == 500.0);
    CHECK(r.hi == 520.0);
  }
  SUBCASE("triangle peaked at 540") {
    const auto s = curve(x, [](double w) { return std::max(0.0, 1.0 - std::abs(w - 540.0) / 40.0); });
    const auto r = recommend_range(s, 20.0);
    CHECK(r.lo == 530.0);
    CHECK(r.hi == 550.0);
  }
  SUBCASE("width limits") {
    CHECK_THROWS_AS(recommend_range(curve(x, [](double) { return 1.0; }), 101.0), Error);
    const auto full = recommend_range(curve(x, [](double) { return 1.0; }), 100.0);
    CHECK(full.lo == 500.0);
  }
}

TEST_CASE("recommend_range matches a brute-force window sweep (property)") {
  SplitMix64 rng(99);
  for (int trial = 0; trial < 200; ++trial) {
    const int n = 5 + static_cast<int>(rng.below(60));
    std::vector<double> x;
    double w = rng.uniform(400, 500);
    for (int i = 0; i < n; ++i) x.push_back(w += rng.uniform(0.5, 5.0));
    Spectrum s{x, {}};
    for (int i = 0; i < n; ++i) s.values.push_back(rng.uniform() < 0.2 ? 0.0 : rng.uniform());
    const double width = rng.uniform(0.5, 0.9) * (x.back() - x.front());
    const auto r = recommend_range(s, width);

    double best = -1.0;
    double best_lo = 0.0;
    for (double lo : x) {
      if (lo + width > x.back()) break;
      const double v = oracle_integral(s, lo, lo + width);
      if (v > best + 1e-9) best = v, best_lo = lo;
    }
    CHECK(r.hi - r.lo == doctest::Approx(width));
    CHECK(r.lo >= x.front());
    CHECK(r.hi <= x.back() + 1e-9);
    CHECK(oracle_integral(s, r.lo, r.hi) == doctest::Approx(best).epsilon(1e-9));
    CHECK(r.lo == doctest::Approx(best_lo));
  }
}

TEST_CASE("analyze and its artifacts") {
  const auto x = grid(500.0, 600.0, 5.0);
  const auto normal = curve(x, [](double) { return 0.1; });
  const auto bump = curve(x, [](double w) { return 0.1 + (std::abs(w - 545.0) <= 10.0 ? 0.3 : 0.0); });
  const std::vector<Spectrum> ns{normal, normal}, as{bump};
  const auto report = analyze(ns, as, 20.0);
  CHECK(report.range.lo == 535.0);
  CHECK(report.range.hi == 555.0);
  const auto csv = band_report_csv(report);
  CHECK(csv.rfind("wavelength,mean_normal,mean_anomalous,abs_diff\n500,0.1,0.1,0\n", 0) == 0);
  CHECK(range_json(report.range) == "{\"lo\": 535, \"hi\": 555}");
  CHECK_THROWS_AS(mean_spectrum({}), Error);
}
