#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include "splitsense/hsi_io.hpp"
#include "splitsense/rng.hpp"

namespace splitsense::testing {

inline std::vector<std::byte> f32_bytes(const std::vector<float>& values) {
  std::vector<std::byte> out(values.size() * 4);
  std::memcpy(out.data(), values.data(), out.size());
  return out;
}

inline hsi::HsiCube random_cube(SplitMix64& rng, int w, int h, int d, hsi::Provenance prov = hsi::Provenance::calibrated) {
  std::vector<float> data(static_cast<std::size_t>(w) * h * d);
  for (auto& v : data) v = static_cast<float>(rng.uniform());
  return hsi::HsiCube(hsi::make_header(w, h, hsi::even_grid(400.0, 1000.0, d)), std::move(data), prov);
}

inline hsi::HsiCube constant_cube(int w, int h, std::vector<double> wl, float value,
                                  hsi::Provenance prov = hsi::Provenance::calibrated) {
  const auto n = static_cast<std::size_t>(w) * h * wl.size();
  return hsi::HsiCube(hsi::make_header(w, h, std::move(wl)), std::vector<float>(n, value), prov);
}

// Fresh empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("splitsense_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace splitsense::testing
