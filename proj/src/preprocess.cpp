#include "splitsense/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "splitsense/error.hpp"

namespace splitsense::preprocess {

using hsi::EnviHeader;
using hsi::Provenance;

namespace {

constexpr double kDegenerateEps = 1e-6;

void require_same_geometry(const HsiCube& a, const HsiCube& b, const char* what) {
  if (a.width() != b.width() || a.height() != b.height() || a.bands() != b.bands()) {
    throw Error(Errc::DimensionMismatch, std::string(what) + " dimensions differ");
  }
  if (a.wavelengths() != b.wavelengths()) {
    throw Error(Errc::DimensionMismatch, std::string(what) + " wavelengths differ");
  }
}

EnviHeader with_geometry(const EnviHeader& base, int width, int height, std::vector<double> wavelengths) {
  EnviHeader h = base;
  h.samples = width;
  h.lines = height;
  h.bands = static_cast<int>(wavelengths.size());
  h.wavelengths = std::move(wavelengths);
  h.interleave = hsi::Interleave::bsq;
  h.data_type = hsi::DataType::float32;
  h.reflectance_scale.reset();
  h.header_offset = 0;
  return h;
}

void check_box(const BoundingBox& box, int height, int width) {
  if (box.h < 1 || box.w < 1) throw Error(Errc::EmptyBox, "bounding box has zero area");
  if (box.x0 < 0 || box.y0 < 0 || box.x0 + box.w > width || box.y0 + box.h > height) {
    throw Error(Errc::DimensionMismatch, "bounding box exceeds image bounds");
  }
}

// Corner-aligned source coordinate for output index i.
double source_coord(int i, int n_in, int n_out) {
  if (n_out == 1 || n_in == 1) return 0.0;
  if (n_in == n_out) return static_cast<double>(i);
  return static_cast<double>(i) * static_cast<double>(n_in - 1) / static_cast<double>(n_out - 1);
}

}  // namespace

ForegroundMask ForegroundMask::filled(int height, int width, std::uint8_t value) {
  ForegroundMask m;
  m.height = height;
  m.width = width;
  m.bits.assign(static_cast<std::size_t>(height) * static_cast<std::size_t>(width), value ? 1 : 0);
  return m;
}

std::size_t ForegroundMask::count() const noexcept {
  return static_cast<std::size_t>(std::count(bits.begin(), bits.end(), std::uint8_t{1}));
}

RoiTensor::RoiTensor(int channels, int size, std::vector<float> values, std::vector<double> wavelengths)
    : channels_(channels), size_(size), values_(std::move(values)), wavelengths_(std::move(wavelengths)) {
  if (channels_ < 1 || size_ < 1) throw Error(Errc::ShapeMismatch, "ROI needs at least one channel and pixel");
  if (values_.size() != static_cast<std::size_t>(channels_) * static_cast<std::size_t>(size_) *
                            static_cast<std::size_t>(size_)) {
    throw Error(Errc::ShapeMismatch, "ROI value count does not match its shape");
  }
  if (wavelengths_.size() != static_cast<std::size_t>(channels_)) {
    throw Error(Errc::LengthMismatch, "ROI needs one wavelength per channel");
  }
  if (!std::all_of(values_.begin(), values_.end(), [](float v) { return v >= 0.0f && v <= 1.0f; })) {
    throw Error(Errc::InvalidArgument, "ROI values must lie in [0,1]");
  }
}

bool RoiTensor::operator==(const RoiTensor& other) const {
  return channels_ == other.channels_ && size_ == other.size_ && wavelengths_ == other.wavelengths_ &&
         std::memcmp(values_.data(), other.values_.data(), values_.size() * sizeof(float)) == 0;
}

RoiTensor roi_from_cube(const HsiCube& cube) {
  if (cube.width() != cube.height()) throw Error(Errc::ShapeMismatch, "ROI cubes must be square");
  return RoiTensor(cube.bands(), cube.width(), std::vector<float>(cube.data().begin(), cube.data().end()),
                   cube.wavelengths());
}

HsiCube roi_to_cube(const RoiTensor& roi) {
  auto header = hsi::make_header(roi.size(), roi.size(), roi.wavelengths());
  return HsiCube(std::move(header), std::vector<float>(roi.values().begin(), roi.values().end()),
                 Provenance::calibrated);
}

CalibrationResult calibrate(const HsiCube& raw, const HsiCube& dark, const HsiCube& white) {
  require_same_geometry(raw, dark, "raw/dark");
  require_same_geometry(raw, white, "raw/white");
  const auto I = raw.data();
  const auto D = dark.data();
  const auto Wt = white.data();
  std::vector<float> out(I.size());
  std::size_t degenerate = 0;
  for (std::size_t i = 0; i < I.size(); ++i) {
    const float denom = Wt[i] - D[i];
    if (std::abs(denom) < kDegenerateEps) {
      out[i] = 0.0f;
      ++degenerate;
      continue;
    }
    const float v = (I[i] - D[i]) / denom;
    out[i] = std::isnan(v) ? 0.0f : std::clamp(v, 0.0f, 1.0f);
  }
  return {HsiCube(raw.header(), std::move(out), Provenance::calibrated), degenerate};
}

RgbImage extract_rgb(const HsiCube& cube) {
  const auto& wl = cube.wavelengths();
  if (wl.front() > kBlueNm || wl.back() < kRedNm) {
    throw Error(Errc::WavelengthOutOfRange, "cube must span 460.27-650.45 nm for RGB extraction");
  }
  RgbImage img;
  img.height = cube.height();
  img.width = cube.width();
  img.band_indices = {hsi::nearest_band(cube.header(), kRedNm), hsi::nearest_band(cube.header(), kGreenNm),
                      hsi::nearest_band(cube.header(), kBlueNm)};
  const std::size_t plane = static_cast<std::size_t>(img.height) * static_cast<std::size_t>(img.width);
  img.pixels.resize(plane * 3);
  for (int c = 0; c < 3; ++c) {
    const auto band = cube.band(img.band_indices[static_cast<std::size_t>(c)]);
    for (std::size_t p = 0; p < plane; ++p) {
      const double v = std::clamp(static_cast<double>(band[p]), 0.0, 1.0);
      img.pixels[p * 3 + static_cast<std::size_t>(c)] = static_cast<std::uint8_t>(std::lround(255.0 * v));
    }
  }
  return img;
}

ScaleFactors scale_factors(Dims rgb, Dims hsi_dims) {
  if (rgb.height < 1 || rgb.width < 1 || hsi_dims.height < 1 || hsi_dims.width < 1) {
    throw Error(Errc::InvalidArgument, "image dimensions must be positive");
  }
  return {static_cast<double>(hsi_dims.width) / rgb.width, static_cast<double>(hsi_dims.height) / rgb.height};
}

BoundingBox scale_bbox(const BoundingBox& box, Dims rgb, Dims hsi_dims) {
  const auto [a1, a2] = scale_factors(rgb, hsi_dims);
  auto r = [](double v) { return static_cast<int>(std::lround(v)); };
  BoundingBox out{r(box.x0 * a1), r(box.y0 * a2), r(box.h * a2), r(box.w * a1)};
  out.x0 = std::clamp(out.x0, 0, hsi_dims.width - 1);
  out.y0 = std::clamp(out.y0, 0, hsi_dims.height - 1);
  out.w = std::clamp(out.w, 1, hsi_dims.width - out.x0);
  out.h = std::clamp(out.h, 1, hsi_dims.height - out.y0);
  return out;
}

HsiCube apply_mask(const HsiCube& cube, const ForegroundMask& mask) {
  if (mask.height != cube.height() || mask.width != cube.width()) {
    throw Error(Errc::DimensionMismatch, "mask dimensions differ from the cube");
  }
  std::vector<float> out(cube.data().begin(), cube.data().end());
  const std::size_t plane = mask.bits.size();
  for (std::size_t b = 0; b < static_cast<std::size_t>(cube.bands()); ++b) {
    float* band = out.data() + b * plane;
    for (std::size_t p = 0; p < plane; ++p) {
      if (mask.bits[p] == 0) band[p] = 0.0f;
    }
  }
  return HsiCube(cube.header(), std::move(out), cube.provenance());
}

HsiCube crop_resize(const HsiCube& cube, const BoundingBox& box, int out_size) {
  check_box(box, cube.height(), cube.width());
  if (out_size < 1) throw Error(Errc::EmptyBox, "output size must be positive");
  const auto n = static_cast<std::size_t>(out_size);
  std::vector<float> out(static_cast<std::size_t>(cube.bands()) * n * n);

  // Precompute the separable sample grid.
  struct Tap {
    int i0, i1;
    double t;
  };
  auto taps = [](int n_in, int n_out, int offset) {
    std::vector<Tap> v(static_cast<std::size_t>(n_out));
    for (int i = 0; i < n_out; ++i) {
      const double s = source_coord(i, n_in, n_out);
      int i0 = static_cast<int>(std::floor(s));
      i0 = std::clamp(i0, 0, n_in - 1);
      const int i1 = std::min(i0 + 1, n_in - 1);
      v[static_cast<std::size_t>(i)] = {offset + i0, offset + i1, s - i0};
    }
    return v;
  };
  const auto rows = taps(box.h, out_size, box.y0);
  const auto cols = taps(box.w, out_size, box.x0);

  for (int b = 0; b < cube.bands(); ++b) {
    float* dst = out.data() + static_cast<std::size_t>(b) * n * n;
    for (std::size_t r = 0; r < n; ++r) {
      const Tap& ry = rows[r];
      for (std::size_t c = 0; c < n; ++c) {
        const Tap& cx = cols[c];
        const double v00 = cube.at(b, ry.i0, cx.i0);
        double v;
        if (ry.t == 0.0 && cx.t == 0.0) {
          v = v00;
        } else {
          const double v01 = cube.at(b, ry.i0, cx.i1);
          const double v10 = cube.at(b, ry.i1, cx.i0);
          const double v11 = cube.at(b, ry.i1, cx.i1);
          const double top = v00 + (v01 - v00) * cx.t;
          const double bottom = v10 + (v11 - v10) * cx.t;
          v = top + (bottom - top) * ry.t;
        }
        dst[r * n + c] = static_cast<float>(v);
      }
    }
  }
  auto header = with_geometry(cube.header(), out_size, out_size, cube.wavelengths());
  if (cube.provenance() == Provenance::calibrated) {
    for (float& v : out) v = std::clamp(v, 0.0f, 1.0f);
  }
  return HsiCube(std::move(header), std::move(out), cube.provenance());
}

ForegroundMask crop_resize(const ForegroundMask& mask, const BoundingBox& box, int out_size) {
  check_box(box, mask.height, mask.width);
  if (out_size < 1) throw Error(Errc::EmptyBox, "output size must be positive");
  ForegroundMask out = ForegroundMask::filled(out_size, out_size, 0);
  for (int r = 0; r < out_size; ++r) {
    const int sr = box.y0 + static_cast<int>(std::lround(source_coord(r, box.h, out_size)));
    for (int c = 0; c < out_size; ++c) {
      const int sc = box.x0 + static_cast<int>(std::lround(source_coord(c, box.w, out_size)));
      out.bits[static_cast<std::size_t>(r) * static_cast<std::size_t>(out_size) + static_cast<std::size_t>(c)] =
          mask.at(sr, sc);
    }
  }
  return out;
}

BandSlice slice_bands(const HsiCube& cube, double lo_nm, double hi_nm, int count) {
  if (count < 1) throw Error(Errc::InvalidArgument, "band count must be positive");
  if (cube.bands() < count) {
    throw Error(Errc::InsufficientBands,
                "cube has " + std::to_string(cube.bands()) + " bands, need " + std::to_string(count));
  }
  const auto& wl = cube.wavelengths();
  if (wl.front() > lo_nm || wl.back() < hi_nm) {
    throw Error(Errc::WavelengthOutOfRange, "cube does not span the requested band range");
  }
  int first_in = -1, last_in = -1;
  for (int i = 0; i < cube.bands(); ++i) {
    const double w = wl[static_cast<std::size_t>(i)];
    if (w >= lo_nm && w <= hi_nm) {
      if (first_in < 0) first_in = i;
      last_in = i;
    }
  }
  int first = first_in;
  if (first_in < 0 || last_in - first_in + 1 != count) {
    // Centre a window of `count` contiguous bands on the band nearest the midpoint;
    // for even counts the extra band goes below the centre.
    const int centre = hsi::nearest_band(cube.header(), 0.5 * (lo_nm + hi_nm));
    first = std::clamp(centre - count / 2, 0, cube.bands() - count);
  }

  const std::size_t plane = static_cast<std::size_t>(cube.width()) * static_cast<std::size_t>(cube.height());
  std::vector<float> out(plane * static_cast<std::size_t>(count));
  std::copy_n(cube.band(first).data(), out.size(), out.data());
  std::vector<double> selected(wl.begin() + first, wl.begin() + first + count);
  auto header = with_geometry(cube.header(), cube.width(), cube.height(), std::move(selected));
  return {HsiCube(std::move(header), std::move(out), cube.provenance()), first};
}

RoiTensor rotate90(const RoiTensor& roi) {
  const int n = roi.size();
  const auto un = static_cast<std::size_t>(n);
  std::vector<float> out(roi.values().size());
  for (int c = 0; c < roi.channels(); ++c) {
    float* dst = out.data() + static_cast<std::size_t>(c) * un * un;
    for (int r = 0; r < n; ++r) {
      for (int col = 0; col < n; ++col) {
        // Clockwise: destination (r, col) takes source (n-1-col, r).
        dst[static_cast<std::size_t>(r) * un + static_cast<std::size_t>(col)] = roi.at(c, n - 1 - col, r);
      }
    }
  }
  return RoiTensor(roi.channels(), n, std::move(out), roi.wavelengths());
}

RoiTensor flip_horizontal(const RoiTensor& roi) {
  const int n = roi.size();
  const auto un = static_cast<std::size_t>(n);
  std::vector<float> out(roi.values().size());
  for (int c = 0; c < roi.channels(); ++c) {
    float* dst = out.data() + static_cast<std::size_t>(c) * un * un;
    for (int r = 0; r < n; ++r) {
      for (int col = 0; col < n; ++col) {
        dst[static_cast<std::size_t>(r) * un + static_cast<std::size_t>(col)] = roi.at(c, r, n - 1 - col);
      }
    }
  }
  return RoiTensor(roi.channels(), n, std::move(out), roi.wavelengths());
}

std::array<RoiTensor, 8> augment(const RoiTensor& roi) {
  const RoiTensor r1 = rotate90(roi);
  const RoiTensor r2 = rotate90(r1);
  const RoiTensor r3 = rotate90(r2);
  return {roi, r1, r2, r3, flip_horizontal(roi), flip_horizontal(r1), flip_horizontal(r2), flip_horizontal(r3)};
}

RoiTensor extract_roi(const HsiCube& calibrated, const BoundingBox& rgb_box, Dims rgb_dims,
                      const ForegroundMask& mask, const RoiOptions& options) {
  const Dims cube_dims{calibrated.height(), calibrated.width()};
  const BoundingBox box = scale_bbox(rgb_box, rgb_dims, cube_dims);
  const BandSlice slice = slice_bands(calibrated, options.lo_nm, options.hi_nm, options.band_count);
  const HsiCube masked = apply_mask(slice.cube, mask);
  const HsiCube resized = crop_resize(masked, box, options.size);
  // Bilinear taps straddling the fruit edge blend in background; re-mask on the
  // resampled grid so background pixels stay exactly zero.
  const ForegroundMask small_mask = crop_resize(mask, box, options.size);
  return roi_from_cube(apply_mask(resized, small_mask));
}

GrayImage read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::IoFailure, "cannot open " + path.string());
  auto next_token = [&in, &path]() {
    std::string tok;
    while (tok.empty()) {
      const int ch = in.peek();
      if (ch == EOF) throw Error(Errc::IoFailure, "truncated PGM header in " + path.string());
      if (ch == '#') {
        std::string comment;
        std::getline(in, comment);
        continue;
      }
      if (std::isspace(ch)) {
        in.get();
        continue;
      }
      in >> tok;
    }
    return tok;
  };
  if (next_token() != "P5") throw Error(Errc::IoFailure, path.string() + " is not a binary PGM (P5)");
  GrayImage img;
  try {
    img.width = std::stoi(next_token());
    img.height = std::stoi(next_token());
    const int maxval = std::stoi(next_token());
    if (maxval < 1 || maxval > 255) throw Error(Errc::IoFailure, "only 8-bit PGM is supported");
  } catch (const std::invalid_argument&) {
    throw Error(Errc::IoFailure, "malformed PGM header in " + path.string());
  }
  in.get();  // single whitespace before the raster
  img.pixels.resize(static_cast<std::size_t>(img.width) * static_cast<std::size_t>(img.height));
  in.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
  if (!in) throw Error(Errc::IoFailure, "truncated PGM raster in " + path.string());
  return img;
}

void write_pgm(const GrayImage& image, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(Errc::IoFailure, "cannot write " + path.string());
  out << "P5\n" << image.width << " " << image.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(image.pixels.data()), static_cast<std::streamsize>(image.pixels.size()));
  if (!out) throw Error(Errc::IoFailure, "short write on " + path.string());
}

ForegroundMask mask_from_gray(const GrayImage& image) {
  ForegroundMask m;
  m.height = image.height;
  m.width = image.width;
  m.bits.resize(image.pixels.size());
  std::transform(image.pixels.begin(), image.pixels.end(), m.bits.begin(),
                 [](std::uint8_t v) { return static_cast<std::uint8_t>(v != 0); });
  return m;
}

GrayImage mask_to_gray(const ForegroundMask& mask) {
  GrayImage g{mask.height, mask.width, {}};
  g.pixels.resize(mask.bits.size());
  std::transform(mask.bits.begin(), mask.bits.end(), g.pixels.begin(),
                 [](std::uint8_t v) { return static_cast<std::uint8_t>(v ? 255 : 0); });
  return g;
}

ForegroundMask load_mask(const std::filesystem::path& path) { return mask_from_gray(read_pgm(path)); }

std::vector<Annotation> read_annotations(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::IoFailure, "cannot open " + path.string());
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::IoFailure, path.string() + ": " + e.what());
  }
  if (!doc.is_array()) throw Error(Errc::InvalidArgument, path.string() + ": expected a JSON list");
  std::vector<Annotation> out;
  for (const auto& item : doc) {
    try {
      Annotation a;
      a.id = item.at("id").get<std::string>();
      const auto& b = item.at("bbox");
      if (!b.is_array() || b.size() != 4) throw Error(Errc::InvalidArgument, "bbox must be [x0, y0, h, w]");
      a.bbox = {b[0].get<int>(), b[1].get<int>(), b[2].get<int>(), b[3].get<int>()};
      a.mask_path = item.at("mask_path").get<std::string>();
      if (item.contains("cube_path")) a.cube_path = item["cube_path"].get<std::string>();
      out.push_back(std::move(a));
    } catch (const nlohmann::json::exception& e) {
      throw Error(Errc::MissingKey, path.string() + ": " + e.what());
    }
  }
  return out;
}

void write_annotations(const std::vector<Annotation>& annotations, const std::filesystem::path& path) {
  nlohmann::json doc = nlohmann::json::array();
  for (const auto& a : annotations) {
    nlohmann::json item{{"id", a.id},
                        {"bbox", {a.bbox.x0, a.bbox.y0, a.bbox.h, a.bbox.w}},
                        {"mask_path", a.mask_path}};
    if (a.cube_path) item["cube_path"] = *a.cube_path;
    doc.push_back(std::move(item));
  }
  std::ofstream out(path);
  if (!out) throw Error(Errc::IoFailure, "cannot write " + path.string());
  out << doc.dump(2) << "\n";
}

}  // namespace splitsense::preprocess
