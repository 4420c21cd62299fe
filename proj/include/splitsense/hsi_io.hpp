#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace splitsense::hsi {

enum class Interleave { bsq, bil, bip };

// ENVI "data type" codes supported by this reader.
enum class DataType : int { float32 = 4, uint16 = 12 };

std::string_view to_string(Interleave interleave) noexcept;
std::size_t bytes_per_sample(DataType type) noexcept;

struct EnviHeader {
  int samples = 0;  // width
  int lines = 0;    // height
  int bands = 0;
  Interleave interleave = Interleave::bsq;
  DataType data_type = DataType::float32;
  int byte_order = 0;
  std::vector<double> wavelengths;  // nm, strictly increasing, one per band
  std::optional<double> reflectance_scale;
  std::size_t header_offset = 0;

  std::size_t element_count() const noexcept {
    return static_cast<std::size_t>(samples) * static_cast<std::size_t>(lines) *
           static_cast<std::size_t>(bands);
  }
  std::size_t payload_bytes() const noexcept { return element_count() * bytes_per_sample(data_type); }
};

// Throws Error(InvalidArgument / LengthMismatch / NonMonotonicWavelengths) when a
// header violates its invariants.
void validate(const EnviHeader& header);

enum class Provenance { raw, calibrated };

// Immutable H x W x D cube stored band-sequentially as [band][row][col].
class HsiCube {
 public:
  HsiCube(EnviHeader header, std::vector<float> data, Provenance provenance);

  const EnviHeader& header() const noexcept { return header_; }
  Provenance provenance() const noexcept { return provenance_; }
  int width() const noexcept { return header_.samples; }
  int height() const noexcept { return header_.lines; }
  int bands() const noexcept { return header_.bands; }
  const std::vector<double>& wavelengths() const noexcept { return header_.wavelengths; }

  std::span<const float> data() const noexcept { return data_; }
  std::span<const float> band(int b) const noexcept {
    const auto plane = static_cast<std::size_t>(width()) * static_cast<std::size_t>(height());
    return std::span<const float>(data_).subspan(static_cast<std::size_t>(b) * plane, plane);
  }
  float at(int b, int row, int col) const noexcept {
    return data_[(static_cast<std::size_t>(b) * static_cast<std::size_t>(height()) +
                  static_cast<std::size_t>(row)) *
                     static_cast<std::size_t>(width()) +
                 static_cast<std::size_t>(col)];
  }

  bool operator==(const HsiCube& other) const;

 private:
  EnviHeader header_;
  std::vector<float> data_;
  Provenance provenance_;
};

// Header for a band-sequential float cube with the given geometry.
EnviHeader make_header(int samples, int lines, std::vector<double> wavelengths,
                       Interleave interleave = Interleave::bsq);

// `count` band centers evenly spaced over [lo, hi] inclusive.
std::vector<double> even_grid(double lo, double hi, int count);

EnviHeader parse_envi_header(std::string_view text);
HsiCube read_cube(const EnviHeader& header, std::span<const std::byte> bytes,
                  Provenance provenance = Provenance::raw);

struct EncodedCube {
  std::string header_text;
  std::vector<std::byte> bytes;
};

// Always writes 32-bit little-endian floats. BIP is read-only.
EncodedCube write_cube(const HsiCube& cube, Interleave interleave);

// argmin_i |wavelengths[i] - target|, ties to the lower index.
int nearest_band(const EnviHeader& header, double target_nm);

// File helpers. `load_cube` accepts the .hdr path and looks for the payload at
// the same stem with .raw, .img, .dat or no extension.
HsiCube load_cube(const std::filesystem::path& header_path, Provenance provenance = Provenance::raw);
void save_cube(const HsiCube& cube, const std::filesystem::path& header_path,
               Interleave interleave = Interleave::bsq);
std::filesystem::path payload_path_for(const std::filesystem::path& header_path);

}  // namespace splitsense::hsi
