// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.

#include <chrono>
#include <cmath>
#include <cstring>
#include <functional>
#include <iostream>
#include <limits>
#include <optional>
#include <sstream>

#include "splitsense/band_analysis.hpp"
#include "splitsense/hsi_io.hpp"
#include "splitsense/preprocess.hpp"
#include "splitsense/rng.hpp"
#include "splitsense/synth.hpp"
#include "splitsense/trainer.hpp"
#include "splitsense/vae_model.hpp"
#include "support/gradcheck.hpp"
#include "support/helpers.hpp"
#include "support/pipeline.hpp"
#include "support/threshold_oracle.hpp"

using namespace splitsense;

namespace {

// Tolerances.
constexpr double kBetaStepRelTol = 1e-12;  // the step is a difference of two rounded values
constexpr double kGradRelTol = 1e-4;
constexpr int kGradMinCoordinates = 100;
constexpr double kHandCaseTol = 1e-6;
constexpr double kMinAccuracy = 0.90;
constexpr double kBandWindowNm = 20.0;
constexpr double kBandTargetNm = 540.0;
constexpr double kBandLoNm = 520.0;
constexpr double kBandHiNm = 600.0;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v) {
  std::ostringstream s;
  s << v;
  return s.str();
}

Outcome beta_exactness() {
  bool ok = train::beta_schedule(0, 2500, 10.0) == 0.0 && train::beta_schedule(625, 2500, 10.0) == 5.0 &&
            train::beta_schedule(1250, 2500, 10.0) == 10.0 && train::beta_schedule(2500, 2500, 10.0) == 10.0;
  double max_step = 0.0;
  for (int t = 0; t < 2500; ++t) {
    const double step = train::beta_schedule(t + 1, 2500, 10.0) - train::beta_schedule(t, 2500, 10.0);
    ok = ok && step >= 0.0;
    max_step = std::max(max_step, step);
  }
  const double expected = 2.0 * 10.0 / 2500.0;
  ok = ok && std::abs(max_step - expected) <= kBetaStepRelTol * expected;
  return {ok, "max step " + fmt(max_step) + " (off by " + fmt(max_step - expected) + ")"};
}

Outcome loss_identities() {
  SplitMix64 rng(1);
  std::vector<double> x(1000);
  for (double& v : x) v = rng.uniform();
  bool ok = vae::recon_l1<double>(x, x) == 0.0;
  const std::vector<double> zeros(10, 0.0);
  ok = ok && vae::kl_divergence<double>(zeros, zeros) == 0.0;
  double min_kl = std::numeric_limits<double>::infinity();
  for (int i = 0; i < 1000; ++i) {
    std::vector<double> mu(8), lv(8);
    for (double& v : mu) v = rng.uniform(-5.0, 5.0);
    for (double& v : lv) v = rng.uniform(-8.0, 8.0);
    min_kl = std::min(min_kl, vae::kl_divergence<double>(mu, lv));
  }
  ok = ok && min_kl >= 0.0;
  const std::vector<double> one{1.0}, zero{0.0};
  const double unit = vae::kl_divergence<double>(one, zero);
  ok = ok && unit == 0.5;
  return {ok, "min kl " + fmt(min_kl) + ", kl(1,0) " + fmt(unit)};
}

Outcome shape_conformance() {
  const vae::VaeConfig c;
  const vae::VaeModel<float> model(c);
  const auto params = vae::init_params(c, 7);
  SplitMix64 rng(2);
  vae::Batch<float> x{2, {16, 210, 210}, std::vector<float>(2 * c.input_numel())};
  for (float& v : x.data) v = static_cast<float>(rng.uniform());
  vae::ShapeTrace trace;
  const auto enc = model.encode(params, x, &trace);
  const auto out = model.decode(params, enc.mu, &trace);
  const std::vector<std::vector<int>> expected{
      {2, 16, 105, 105}, {2, 32, 53, 53}, {2, 64, 27, 27},   {2, 128, 14, 14},  {2, 256, 7, 7},
      {2, 12544},        {2, 100},        {2, 100},          {2, 12544},        {2, 256, 7, 7},
      {2, 128, 14, 14},  {2, 64, 27, 27}, {2, 32, 53, 53},   {2, 16, 105, 105}, {2, 16, 210, 210}};
  bool ok = trace.size() == expected.size();
  for (std::size_t i = 0; ok && i < expected.size(); ++i) ok = trace[i].shape == expected[i];
  ok = ok && out.count == 2 && out.sample_shape == std::vector<int>{16, 210, 210};
  for (float v : out.data) ok = ok && v > 0.0f && v < 1.0f;
  return {ok, std::to_string(trace.size()) + " layers traced"};
}

Outcome gradient_check() {
  testing::GradCheckOptions opt;
  opt.coordinates = 120;
  const auto r = testing::gradient_check(opt);
  const bool ok = r.checked >= kGradMinCoordinates && r.max_rel_error < kGradRelTol;
  return {ok, std::to_string(r.checked) + " coords, max rel err " + fmt(r.max_rel_error)};
}

Outcome threshold_oracle() {
  SplitMix64 rng(5);
  int mismatches = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const int n = 2 + static_cast<int>(rng.below(49));
    std::vector<detect::ScoreRecord> recs;
    const bool coarse = trial % 2 == 0;
    for (int i = 0; i < n; ++i) {
      detect::ScoreRecord r;
      r.id = std::to_string(i);
      r.label = i == 0 ? Label::normal : i == 1 ? Label::anomalous
                                       : (rng.uniform() < 0.4 ? Label::anomalous : Label::normal);
      const double shift = *r.label == Label::anomalous ? rng.uniform(0.0, 3.0) : 0.0;
      r.recon_loss = (coarse ? static_cast<double>(rng.below(6)) : rng.uniform(0.0, 10.0)) + shift;
      recs.push_back(std::move(r));
    }
    const auto got = detect::select_threshold(recs);
    const auto want = testing::brute_force_threshold(recs);
    if (got.theta != want.theta || std::abs(got.f1_at_theta - want.f1) > 1e-12) ++mismatches;
  }
  return {mismatches == 0, std::to_string(mismatches) + " mismatches in 200 sets"};
}

Outcome calibration_contract() {
  SplitMix64 rng(6);
  const int w = 17, h = 13;
  const auto wl = hsi::even_grid(400.0, 1000.0, 9);
  const std::size_t n = static_cast<std::size_t>(w) * h * wl.size();
  std::vector<float> dark(n), white(n);
  for (std::size_t i = 0; i < n; ++i) {
    dark[i] = static_cast<float>(rng.uniform(0.0, 500.0));
    white[i] = dark[i] + static_cast<float>(rng.uniform(1.0, 3000.0));
  }
  const hsi::HsiCube dark_cube(hsi::make_header(w, h, wl), dark, hsi::Provenance::raw);
  const hsi::HsiCube white_cube(hsi::make_header(w, h, wl), white, hsi::Provenance::raw);
  const auto ones = preprocess::calibrate(white_cube, dark_cube, white_cube).cube;
  const auto zeros = preprocess::calibrate(dark_cube, dark_cube, white_cube).cube;
  bool ok = true;
  for (float v : ones.data()) ok = ok && v >= std::nextafter(1.0f, 0.0f) && v <= 1.0f;
  for (float v : zeros.data()) ok = ok && v >= 0.0f && v <= std::numeric_limits<float>::denorm_min();

  const auto one_px = [](float v) {
    return hsi::HsiCube(hsi::make_header(1, 1, {500.0}), {v}, hsi::Provenance::raw);
  };
  const float hand = preprocess::calibrate(one_px(0.5f), one_px(0.1f), one_px(0.9f)).cube.data()[0];
  ok = ok && std::abs(hand - 0.5) < kHandCaseTol;
  return {ok, "hand case " + fmt(hand)};
}

Outcome envi_round_trip() {
  SplitMix64 rng(7);
  int failures = 0;
  for (int i = 0; i < 20; ++i) {
    const auto cube = testing::random_cube(rng, 1 + static_cast<int>(rng.below(31)),
                                           1 + static_cast<int>(rng.below(31)), 1 + static_cast<int>(rng.below(24)));
    for (const auto il : {hsi::Interleave::bil, hsi::Interleave::bsq}) {
      const auto enc = hsi::write_cube(cube, il);
      const auto back = hsi::read_cube(hsi::parse_envi_header(enc.header_text), enc.bytes, cube.provenance());
      const bool same = back.width() == cube.width() && back.height() == cube.height() &&
                        back.bands() == cube.bands() && back.wavelengths() == cube.wavelengths() &&
                        std::memcmp(back.data().data(), cube.data().data(), cube.data().size_bytes()) == 0;
      failures += !same;
    }
  }
  return {failures == 0, std::to_string(failures) + " of 40 differ"};
}

std::optional<testing::PipelineResult> first_run, second_run;

testing::PipelineResult pipeline() {
  const auto start = std::chrono::steady_clock::now();
  auto result = testing::run_pipeline(testing::PipelineOptions{}, [&](const train::EpochStats& s) {
    if (s.epoch % 50 == 0) {
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      std::cerr << "  epoch " << s.epoch << " total " << s.total << " (" << secs << " s)\n";
    }
  });
  std::cerr << "  pipeline took "
            << std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count() << " s\n";
  return result;
}

Outcome end_to_end() {
  first_run = pipeline();
  const auto& r = *first_run;
  std::vector<double> normal, anomalous;
  for (const auto& s : r.test_scores) (*s.label == Label::normal ? normal : anomalous).push_back(s.recon_loss);
  const double max_normal = *std::max_element(normal.begin(), normal.end());
  const double p5 = testing::percentile(anomalous, 5.0);
  const double acc = r.report.validation ? r.report.validation->accuracy : 0.0;
  const bool ok = acc >= kMinAccuracy && max_normal < p5;
  return {ok, "accuracy " + fmt(acc) + ", theta " + fmt(r.report.theta) + ", max normal " + fmt(max_normal) +
                  ", anomalous P5 " + fmt(p5)};
}

Outcome band_recovery() {
  synth::SynthConfig c;
  c.seed = 9;
  const auto plan = synth::plan_dataset(c, 6, 6);
  std::vector<bands::Spectrum> normal, anomalous;
  for (const auto& e : plan.entries) {
    const auto s = synth::gen_sample(c, e.label, e.seed);
    const auto patch = synth::patch_inside(s.crack ? *s.crack : s.mask);
    if (!patch) continue;
    (e.label == Label::normal ? normal : anomalous).push_back(bands::patch_mean_spectrum(s.cube, *patch));
  }
  const auto report = bands::analyze(normal, anomalous, kBandWindowNm);
  const bool ok = report.range.lo <= kBandTargetNm && report.range.hi >= kBandTargetNm &&
                  report.range.lo >= kBandLoNm && report.range.hi <= kBandHiNm;
  return {ok, "[" + fmt(report.range.lo) + ", " + fmt(report.range.hi) + "] nm"};
}

Outcome determinism() {
  if (!first_run) first_run = pipeline();
  second_run = pipeline();
  const bool csv = first_run->scores_csv == second_run->scores_csv;
  const bool json = first_run->report_json == second_run->report_json;
  return {csv && json, std::string("scores csv ") + (csv ? "identical" : "differs") + ", report json " +
                           (json ? "identical" : "differs")};
}

}  // namespace

int main() {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"beta schedule exactness", beta_exactness},
      {"loss identities", loss_identities},
      {"network shape conformance", shape_conformance},
      {"gradient check", gradient_check},
      {"threshold oracle equivalence", threshold_oracle},
      {"calibration contract", calibration_contract},
      {"ENVI round trip", envi_round_trip},
      {"synthetic end-to-end", end_to_end},
      {"band selection recovery", band_recovery},
      {"determinism", determinism},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    failed += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " " << (i + 1) << " " << criteria[i].first << ": " << o.detail << " ("
              << fmt(secs) << " s)" << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
