#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "splitsense/band_analysis.hpp"
#include "splitsense/hsi_io.hpp"
#include "splitsense/labels.hpp"
#include "splitsense/preprocess.hpp"

namespace splitsense::synth {

struct SynthConfig {
  int width = 256;
  int height = 256;
  int bands = 448;
  double lo_nm = 400.0;
  double hi_nm = 1000.0;

  // Fruit geometry, pixels.
  double radius_min = 70.0;
  double radius_max = 100.0;
  double center_jitter = 8.0;
  double shading = 0.25;  // reflectance falls by this fraction at the rim

  // Normal tissue: base + gain * sigmoid((lambda - edge) / edge_width), jittered per sample.
  double base = 0.05;
  double gain = 0.65;
  double edge_nm = 590.0;
  double edge_width_nm = 12.0;
  double base_jitter = 0.01;
  double gain_jitter = 0.05;
  double edge_jitter_nm = 5.0;
  double background = 0.02;

  // Split geometry: quadratic Bezier stroke.
  double crack_width_min = 6.0;
  double crack_width_max = 10.0;
  double crack_length_min = 0.9;  // fractions of the fruit radius
  double crack_length_max = 1.5;
  double crack_curvature = 0.3;   // control point offset as a fraction of length

  // Split spectrum: raised-cosine elevation on [delta_lo, delta_hi], maximal at delta_peak.
  double delta_lo_nm = 520.0;
  double delta_peak_nm = 540.0;
  double delta_hi_nm = 600.0;
  double delta_amplitude = 0.25;

  double noise_sigma = 0.01;
  std::uint64_t seed = 0;

  void validate() const;
};

// Missing keys keep their defaults; unknown keys are rejected.
void to_json(nlohmann::json& j, const SynthConfig& config);
void from_json(const nlohmann::json& j, SynthConfig& config);

std::vector<double> wavelengths(const SynthConfig& config);
// Per-band elevation added to crack pixels.
double split_delta(const SynthConfig& config, double wavelength_nm);
// Noise-free normal tissue reflectance at the fruit centre with no jitter.
double normal_profile(const SynthConfig& config, double wavelength_nm);

struct SynthSample {
  hsi::HsiCube cube;  // calibrated reflectance
  preprocess::ForegroundMask mask;
  preprocess::BoundingBox bbox;  // tight box around the fruit, cube coordinates
  Label label = Label::normal;
  std::optional<preprocess::ForegroundMask> crack;  // anomalous only, subset of mask
};

// Geometry, tissue and noise depend on the seed only, so a normal and an anomalous
// sample with the same seed differ only inside the crack.
SynthSample gen_sample(const SynthConfig& config, Label label, std::uint64_t seed);

// A size x size patch lying entirely inside `region`, centred as close as possible
// to the region's centroid (ties to the first in row-major order).
std::optional<bands::PatchSpec> patch_inside(const preprocess::ForegroundMask& region, int size = 5);

struct ManifestEntry {
  std::string id;
  Label label = Label::normal;
  std::uint64_t seed = 0;
  std::string cube_path;  // relative to the dataset directory
  std::string mask_path;
  std::optional<std::string> crack_path;
};

struct Manifest {
  SynthConfig config;
  std::vector<ManifestEntry> entries;
};

// Ids, labels and seeds without generating anything. Normals come first.
Manifest plan_dataset(const SynthConfig& config, int n_normal, int n_anomalous);

// Writes {id}.hdr/.raw, {id}_mask.pgm, {id}_crack.pgm, annotations.json and manifest.json.
Manifest gen_dataset(const SynthConfig& config, int n_normal, int n_anomalous, const std::filesystem::path& out_dir);

std::string manifest_json(const Manifest& manifest);
Manifest read_manifest(const std::filesystem::path& path);

}  // namespace splitsense::synth
