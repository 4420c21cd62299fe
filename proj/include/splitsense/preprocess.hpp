#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "splitsense/hsi_io.hpp"

namespace splitsense::preprocess {

using hsi::HsiCube;

struct Dims {
  int height = 0;
  int width = 0;
};

// Raster convention: (x0, y0) is the top-left pixel, x0 a column and y0 a row.
struct BoundingBox {
  int x0 = 0;
  int y0 = 0;
  int h = 0;
  int w = 0;

  bool operator==(const BoundingBox&) const = default;
};

struct ScaleFactors {
  double alpha1 = 1.0;  // W_hsi / W_rgb
  double alpha2 = 1.0;  // H_hsi / H_rgb
};

struct ForegroundMask {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> bits;  // row-major, each 0 or 1

  static ForegroundMask filled(int height, int width, std::uint8_t value);
  std::uint8_t at(int row, int col) const noexcept {
    return bits[static_cast<std::size_t>(row) * static_cast<std::size_t>(width) + static_cast<std::size_t>(col)];
  }
  std::size_t count() const noexcept;
};

// C x S x S reflectance tensor in [0,1]; the VAE's unit of input and output.
class RoiTensor {
 public:
  static constexpr int kChannels = 16;
  static constexpr int kSize = 210;

  RoiTensor(int channels, int size, std::vector<float> values, std::vector<double> wavelengths);

  int channels() const noexcept { return channels_; }
  int size() const noexcept { return size_; }
  std::span<const float> values() const noexcept { return values_; }
  const std::vector<double>& wavelengths() const noexcept { return wavelengths_; }
  float at(int c, int row, int col) const noexcept {
    return values_[(static_cast<std::size_t>(c) * static_cast<std::size_t>(size_) + static_cast<std::size_t>(row)) *
                       static_cast<std::size_t>(size_) +
                   static_cast<std::size_t>(col)];
  }

  bool operator==(const RoiTensor& other) const;

 private:
  int channels_;
  int size_;
  std::vector<float> values_;
  std::vector<double> wavelengths_;
};

RoiTensor roi_from_cube(const HsiCube& cube);
HsiCube roi_to_cube(const RoiTensor& roi);

struct CalibrationResult {
  HsiCube cube;
  std::size_t degenerate_count = 0;  // elements where |white - dark| < 1e-6; written as 0
};

// (raw - dark) / (white - dark), clamped to [0,1].
CalibrationResult calibrate(const HsiCube& raw, const HsiCube& dark, const HsiCube& white);

struct RgbImage {
  int height = 0;
  int width = 0;
  std::array<int, 3> band_indices{};  // R, G, B
  std::vector<std::uint8_t> pixels;   // interleaved RGB, row-major
};

inline constexpr double kRedNm = 650.45;
inline constexpr double kGreenNm = 540.62;
inline constexpr double kBlueNm = 460.27;

RgbImage extract_rgb(const HsiCube& cube);

ScaleFactors scale_factors(Dims rgb, Dims hsi);
BoundingBox scale_bbox(const BoundingBox& box, Dims rgb, Dims hsi);

HsiCube apply_mask(const HsiCube& cube, const ForegroundMask& mask);

// Crop to `box`, then bilinear (corner-aligned) resample each band to out_size x out_size.
HsiCube crop_resize(const HsiCube& cube, const BoundingBox& box, int out_size);
// Nearest-neighbour counterpart for masks, using the same corner-aligned sample grid.
ForegroundMask crop_resize(const ForegroundMask& mask, const BoundingBox& box, int out_size);

struct BandSlice {
  HsiCube cube;
  int first_band = 0;  // index of the first selected band in the source cube
};

BandSlice slice_bands(const HsiCube& cube, double lo_nm = 530.0, double hi_nm = 550.0,
                      int count = RoiTensor::kChannels);

RoiTensor rotate90(const RoiTensor& roi);  // clockwise
RoiTensor flip_horizontal(const RoiTensor& roi);
// The dihedral orbit: rotations 0/90/180/270, then the horizontal flip of each.
std::array<RoiTensor, 8> augment(const RoiTensor& roi);

struct RoiOptions {
  double lo_nm = 530.0;
  double hi_nm = 550.0;
  int band_count = RoiTensor::kChannels;
  int size = RoiTensor::kSize;
};

// Full chain for one fruit: scale the RGB-space box into the cube, mask, slice
// bands, crop and resize. Background stays exactly zero after resampling.
RoiTensor extract_roi(const HsiCube& calibrated, const BoundingBox& rgb_box, Dims rgb_dims,
                      const ForegroundMask& mask, const RoiOptions& options = {});

// 8-bit binary PGM (P5).
struct GrayImage {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> pixels;
};

GrayImage read_pgm(const std::filesystem::path& path);
void write_pgm(const GrayImage& image, const std::filesystem::path& path);
ForegroundMask mask_from_gray(const GrayImage& image);
GrayImage mask_to_gray(const ForegroundMask& mask);
ForegroundMask load_mask(const std::filesystem::path& path);

struct Annotation {
  std::string id;
  BoundingBox bbox;  // RGB-composite coordinates
  std::string mask_path;
  std::optional<std::string> cube_path;
};

std::vector<Annotation> read_annotations(const std::filesystem::path& path);
void write_annotations(const std::vector<Annotation>& annotations, const std::filesystem::path& path);

}  // namespace splitsense::preprocess
