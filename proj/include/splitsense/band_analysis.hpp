#pragma once

#include <span>
#include <string>
#include <vector>

#include "splitsense/hsi_io.hpp"

namespace splitsense::bands {

struct PatchSpec {
  int x = 0;  // column of the top-left pixel
  int y = 0;  // row of the top-left pixel
  int size = 5;
};

struct Spectrum {
  std::vector<double> wavelengths;
  std::vector<double> values;
};

struct WavelengthRange {
  double lo = 0.0;
  double hi = 0.0;
};

Spectrum patch_mean_spectrum(const hsi::HsiCube& cube, const PatchSpec& patch);

// Per-wavelength |a - b| on identical grids.
Spectrum reflectance_difference(const Spectrum& a, const Spectrum& b);

// Integral of the piecewise-linear curve through (wavelengths, values) over [lo, hi].
double integrate(const Spectrum& curve, double lo, double hi);

// Window [lambda_i, lambda_i + width] starting on a grid wavelength that maximises
// the trapezoidal integral of `diff`. Ties go to the lowest start.
WavelengthRange recommend_range(const Spectrum& diff, double width_nm);

// Element-wise mean of spectra on one grid.
Spectrum mean_spectrum(std::span<const Spectrum> spectra);

struct BandReport {
  Spectrum mean_normal;
  Spectrum mean_anomalous;
  Spectrum abs_diff;
  WavelengthRange range;
};

// Average the normal and anomalous patch spectra, difference them and pick the window.
BandReport analyze(std::span<const Spectrum> normal, std::span<const Spectrum> anomalous, double width_nm);

// wavelength,mean_normal,mean_anomalous,abs_diff
std::string band_report_csv(const BandReport& report);
std::string range_json(const WavelengthRange& range);

}  // namespace splitsense::bands
