#include "splitsense/band_analysis.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>


#include "splitsense/error.hpp"
#include "splitsense/format.hpp"

namespace splitsense::bands {

Spectrum patch_mean_spectrum(const hsi::HsiCube& cube, const PatchSpec& patch) {
  if (patch.size < 1 || patch.x < 0 || patch.y < 0 || patch.x + patch.size > cube.width() ||
      patch.y + patch.size > cube.height()) {
    throw Error(Errc::PatchOutOfBounds, "patch at (" + std::to_string(patch.x) + ", " + std::to_string(patch.y) +
                                            ") size " + std::to_string(patch.size) + " leaves the image");
  }
  Spectrum s{cube.wavelengths(), std::vector<double>(static_cast<std::size_t>(cube.bands()), 0.0)};
  const double n = static_cast<double>(patch.size) * patch.size;
  for (int b = 0; b < cube.bands(); ++b) {
    double sum = 0.0;
    for (int r = patch.y; r < patch.y + patch.size; ++r) {
      for (int c = patch.x; c < patch.x + patch.size; ++c) sum += cube.at(b, r, c);
    }
    s.values[static_cast<std::size_t>(b)] = sum / n;
  }
  return s;
}

Spectrum reflectance_difference(const Spectrum& a, const Spectrum& b) {
  if (a.wavelengths != b.wavelengths || a.values.size() != b.values.size()) {
    throw Error(Errc::GridMismatch, "spectra are sampled on different wavelength grids");
  }
  Spectrum d{a.wavelengths, std::vector<double>(a.values.size())};
  for (std::size_t i = 0; i < a.values.size(); ++i) d.values[i] = std::abs(a.values[i] - b.values[i]);
  return d;
}

namespace {

double interpolate(const Spectrum& curve, std::size_t seg, double x) {
  const double x0 = curve.wavelengths[seg], x1 = curve.wavelengths[seg + 1];
  const double t = (x - x0) / (x1 - x0);
  return curve.values[seg] + t * (curve.values[seg + 1] - curve.values[seg]);
}

}  // namespace

double integrate(const Spectrum& curve, double lo, double hi) {
  const auto& x = curve.wavelengths;
  if (x.size() < 2 || hi <= lo) return 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i + 1 < x.size(); ++i) {
    const double a = std::max(lo, x[i]);
    const double b = std::min(hi, x[i + 1]);
    if (b <= a) continue;
    total += 0.5 * (b - a) * (interpolate(curve, i, a) + interpolate(curve, i, b));
  }
  return total;
}

WavelengthRange recommend_range(const Spectrum& diff, double width_nm) {
  const auto& x = diff.wavelengths;
  if (x.empty() || x.size() != diff.values.size()) throw Error(Errc::InvalidArgument, "empty difference curve");
  if (!(width_nm > 0.0)) throw Error(Errc::InvalidArgument, "window width must be positive");
  const double span = x.back() - x.front();
  // Grid-step slack so that a width equal to the span survives rounding.
  if (width_nm > span + 1e-9 * std::max(1.0, span)) {
    throw Error(Errc::WidthTooLarge, "window of " + std::to_string(width_nm) + " nm exceeds the " +
                                         std::to_string(span) + " nm span");
  }

  double best_score = -1.0;
  WavelengthRange best{x.front(), x.front() + width_nm};
  double scale = 0.0;
  for (double v : diff.values) scale = std::max(scale, std::abs(v));
  const double tie_tol = 1e-9 * std::max(1.0, scale * width_nm);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double lo = x[i];
    const double hi = lo + width_nm;
    if (hi > x.back() + 1e-9 * std::max(1.0, span)) break;
    const double score = integrate(diff, lo, std::min(hi, x.back()));
    if (score > best_score + tie_tol) {
      best_score = score;
      best = {lo, hi};
    }
  }
  return best;
}

Spectrum mean_spectrum(std::span<const Spectrum> spectra) {
  if (spectra.empty()) throw Error(Errc::InvalidArgument, "no spectra to average");
  Spectrum mean{spectra.front().wavelengths, std::vector<double>(spectra.front().values.size(), 0.0)};
  for (const auto& s : spectra) {
    if (s.wavelengths != mean.wavelengths) throw Error(Errc::GridMismatch, "spectra use different wavelength grids");
    for (std::size_t i = 0; i < s.values.size(); ++i) mean.values[i] += s.values[i];
  }
  for (double& v : mean.values) v /= static_cast<double>(spectra.size());
  return mean;
}

BandReport analyze(std::span<const Spectrum> normal, std::span<const Spectrum> anomalous, double width_nm) {
  BandReport r;
  r.mean_normal = mean_spectrum(normal);
  r.mean_anomalous = mean_spectrum(anomalous);
  r.abs_diff = reflectance_difference(r.mean_anomalous, r.mean_normal);
  r.range = recommend_range(r.abs_diff, width_nm);
  return r;
}

std::string band_report_csv(const BandReport& report) {
  std::ostringstream out;
  out << "wavelength,mean_normal,mean_anomalous,abs_diff\n";
  for (std::size_t i = 0; i < report.abs_diff.wavelengths.size(); ++i) {
    out << format_number(report.abs_diff.wavelengths[i]) << "," << format_number(report.mean_normal.values[i]) << ","
        << format_number(report.mean_anomalous.values[i]) << "," << format_number(report.abs_diff.values[i]) << "\n";
  }
  return out.str();
}

std::string range_json(const WavelengthRange& range) {
  return "{\"lo\": " + format_number(range.lo) + ", \"hi\": " + format_number(range.hi) + "}";
}

}  // namespace splitsense::bands
