#include "splitsense/hsi_io.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "splitsense/error.hpp"
#include "splitsense/format.hpp"

namespace splitsense::hsi {

static_assert(std::endian::native == std::endian::little, "payload codec assumes a little-endian host");

std::string_view to_string(Interleave interleave) noexcept {
  switch (interleave) {
    case Interleave::bsq: return "bsq";
    case Interleave::bil: return "bil";
    case Interleave::bip: return "bip";
  }
  return "bsq";
}

std::size_t bytes_per_sample(DataType type) noexcept { return type == DataType::float32 ? 4 : 2; }

namespace {

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

// Collapses the header into key -> raw value, joining brace lists that span lines.
std::map<std::string, std::string> tokenize(std::string_view text) {
  std::map<std::string, std::string> fields;
  std::size_t pos = 0;
  while (pos < text.size()) {
    auto eol = text.find('\n', pos);
    if (eol == std::string_view::npos) eol = text.size();
    std::string_view line = trim(text.substr(pos, eol - pos));
    pos = eol + 1;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) continue;  // "ENVI" magic, blank lines, comments
    std::string key = lower(trim(line.substr(0, eq)));
    std::string value(trim(line.substr(eq + 1)));
    if (!value.empty() && value.front() == '{') {
      while (value.find('}') == std::string::npos && pos < text.size()) {
        auto next = text.find('\n', pos);
        if (next == std::string_view::npos) next = text.size();
        value += ' ';
        value += trim(text.substr(pos, next - pos));
        pos = next + 1;
      }
    }
    fields[key] = std::move(value);
  }
  return fields;
}

const std::string& require(const std::map<std::string, std::string>& fields, const std::string& key) {
  auto it = fields.find(key);
  if (it == fields.end()) throw Error(Errc::MissingKey, key);
  return it->second;
}

double parse_number(std::string_view s, std::string_view key) {
  s = trim(s);
  double value = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
  if (ec != std::errc{} || ptr != s.data() + s.size()) {
    throw Error(Errc::InvalidArgument, "cannot parse '" + std::string(s) + "' for key " + std::string(key));
  }
  return value;
}

int parse_int(std::string_view s, std::string_view key) {
  const double v = parse_number(s, key);
  if (v != std::floor(v) || v < 0 || v > 2147483647.0) {
    throw Error(Errc::InvalidArgument, "expected a non-negative integer for key " + std::string(key));
  }
  return static_cast<int>(v);
}

std::vector<double> parse_list(std::string_view value, std::string_view key) {
  value = trim(value);
  if (value.size() < 2 || value.front() != '{' || value.back() != '}') {
    throw Error(Errc::InvalidArgument, "expected a brace-delimited list for key " + std::string(key));
  }
  value = value.substr(1, value.size() - 2);
  std::vector<double> out;
  std::size_t pos = 0;
  while (pos <= value.size()) {
    auto comma = value.find(',', pos);
    if (comma == std::string_view::npos) comma = value.size();
    auto item = trim(value.substr(pos, comma - pos));
    if (!item.empty()) out.push_back(parse_number(item, key));
    pos = comma + 1;
  }
  return out;
}

std::size_t source_index(const EnviHeader& h, int b, int row, int col) {
  const auto W = static_cast<std::size_t>(h.samples);
  const auto H = static_cast<std::size_t>(h.lines);
  const auto D = static_cast<std::size_t>(h.bands);
  const auto sb = static_cast<std::size_t>(b), sr = static_cast<std::size_t>(row),
             sc = static_cast<std::size_t>(col);
  switch (h.interleave) {
    case Interleave::bsq: return (sb * H + sr) * W + sc;
    case Interleave::bil: return (sr * D + sb) * W + sc;
    case Interleave::bip: return (sr * W + sc) * D + sb;
  }
  return 0;
}

}  // namespace

void validate(const EnviHeader& h) {
  if (h.samples < 1 || h.lines < 1 || h.bands < 1) {
    throw Error(Errc::InvalidArgument, "samples, lines and bands must all be >= 1");
  }
  if (h.byte_order != 0) throw Error(Errc::InvalidArgument, "only byte order 0 (little-endian) is supported");
  if (h.wavelengths.size() != static_cast<std::size_t>(h.bands)) {
    throw Error(Errc::LengthMismatch, std::to_string(h.wavelengths.size()) + " wavelengths for " +
                                          std::to_string(h.bands) + " bands");
  }
  for (std::size_t i = 1; i < h.wavelengths.size(); ++i) {
    if (!(h.wavelengths[i] > h.wavelengths[i - 1])) {
      throw Error(Errc::NonMonotonicWavelengths, "wavelength " + std::to_string(i) + " does not increase");
    }
  }
  if (h.reflectance_scale && !(*h.reflectance_scale > 0.0)) {
    throw Error(Errc::InvalidArgument, "reflectance scale factor must be positive");
  }
}

HsiCube::HsiCube(EnviHeader header, std::vector<float> data, Provenance provenance)
    : header_(std::move(header)), data_(std::move(data)), provenance_(provenance) {
  validate(header_);
  if (data_.size() != header_.element_count()) {
    throw Error(Errc::SizeMismatch, "expected " + std::to_string(header_.element_count()) + " values, got " +
                                        std::to_string(data_.size()));
  }
  if (provenance_ == Provenance::calibrated) {
    const bool in_range = std::all_of(data_.begin(), data_.end(), [](float v) { return v >= 0.0f && v <= 1.0f; });
    if (!in_range) throw Error(Errc::InvalidArgument, "calibrated cube has values outside [0,1]");
  }
}

bool HsiCube::operator==(const HsiCube& other) const {
  if (width() != other.width() || height() != other.height() || bands() != other.bands()) return false;
  if (wavelengths() != other.wavelengths()) return false;
  // Bitwise comparison so that round trips are checked exactly (and NaN == NaN).
  return std::memcmp(data_.data(), other.data_.data(), data_.size() * sizeof(float)) == 0;
}

EnviHeader make_header(int samples, int lines, std::vector<double> wavelengths, Interleave interleave) {
  EnviHeader h;
  h.samples = samples;
  h.lines = lines;
  h.bands = static_cast<int>(wavelengths.size());
  h.interleave = interleave;
  h.data_type = DataType::float32;
  h.wavelengths = std::move(wavelengths);
  validate(h);
  return h;
}

std::vector<double> even_grid(double lo, double hi, int count) {
  std::vector<double> grid(static_cast<std::size_t>(count));
  if (count == 1) {
    grid[0] = lo;
    return grid;
  }
  const double step = (hi - lo) / (count - 1);
  for (int i = 0; i < count; ++i) grid[static_cast<std::size_t>(i)] = lo + step * i;
  return grid;
}

EnviHeader parse_envi_header(std::string_view text) {
  const auto fields = tokenize(text);
  EnviHeader h;
  h.samples = parse_int(require(fields, "samples"), "samples");
  h.lines = parse_int(require(fields, "lines"), "lines");
  h.bands = parse_int(require(fields, "bands"), "bands");

  const std::string interleave = lower(trim(require(fields, "interleave")));
  if (interleave == "bsq") h.interleave = Interleave::bsq;
  else if (interleave == "bil") h.interleave = Interleave::bil;
  else if (interleave == "bip") h.interleave = Interleave::bip;
  else throw Error(Errc::UnsupportedInterleave, interleave);

  const int type = parse_int(require(fields, "data type"), "data type");
  if (type == 4) h.data_type = DataType::float32;
  else if (type == 12) h.data_type = DataType::uint16;
  else throw Error(Errc::UnsupportedDataType, std::to_string(type));

  h.byte_order = parse_int(require(fields, "byte order"), "byte order");
  if (h.byte_order != 0) throw Error(Errc::InvalidArgument, "big-endian payloads are not supported");

  h.wavelengths = parse_list(require(fields, "wavelength"), "wavelength");
  if (auto it = fields.find("wavelength units"); it != fields.end()) {
    const std::string units = lower(trim(it->second));
    if (units == "micrometers" || units == "um") {
      for (double& w : h.wavelengths) w *= 1000.0;
    }
  }
  if (auto it = fields.find("reflectance scale factor"); it != fields.end()) {
    h.reflectance_scale = parse_number(it->second, "reflectance scale factor");
  }
  if (auto it = fields.find("header offset"); it != fields.end()) {
    h.header_offset = static_cast<std::size_t>(parse_int(it->second, "header offset"));
  }
  validate(h);
  return h;
}

HsiCube read_cube(const EnviHeader& header, std::span<const std::byte> bytes, Provenance provenance) {
  validate(header);
  const std::size_t expected = header.header_offset + header.payload_bytes();
  if (bytes.size() != expected) {
    throw Error(Errc::SizeMismatch,
                "expected " + std::to_string(expected) + " bytes, got " + std::to_string(bytes.size()));
  }
  const std::byte* payload = bytes.data() + header.header_offset;
  std::vector<float> data(header.element_count());
  const double scale = header.reflectance_scale.value_or(1.0);
  std::size_t dst = 0;
  for (int b = 0; b < header.bands; ++b) {
    for (int row = 0; row < header.lines; ++row) {
      for (int col = 0; col < header.samples; ++col) {
        const std::size_t src = source_index(header, b, row, col);
        if (header.data_type == DataType::float32) {
          std::memcpy(&data[dst], payload + src * 4, 4);
        } else {
          std::uint16_t raw = 0;
          std::memcpy(&raw, payload + src * 2, 2);
          data[dst] = header.reflectance_scale ? static_cast<float>(raw / scale) : static_cast<float>(raw);
        }
        ++dst;
      }
    }
  }
  return HsiCube(header, std::move(data), provenance);
}

EncodedCube write_cube(const HsiCube& cube, Interleave interleave) {
  if (interleave == Interleave::bip) throw Error(Errc::UnsupportedInterleave, "bip is read-only");
  EnviHeader out = cube.header();
  out.interleave = interleave;
  out.data_type = DataType::float32;
  out.byte_order = 0;
  out.header_offset = 0;
  out.reflectance_scale.reset();

  std::ostringstream text;
  text << "ENVI\n";
  text << "samples = " << out.samples << "\n";
  text << "lines = " << out.lines << "\n";
  text << "bands = " << out.bands << "\n";
  text << "header offset = 0\n";
  text << "data type = 4\n";
  text << "interleave = " << to_string(interleave) << "\n";
  text << "byte order = 0\n";
  text << "wavelength units = Nanometers\n";
  text << "wavelength = {";
  for (std::size_t i = 0; i < out.wavelengths.size(); ++i) {
    text << (i ? ", " : "") << format_number(out.wavelengths[i]);
  }
  text << "}\n";

  EncodedCube encoded;
  encoded.header_text = text.str();
  encoded.bytes.resize(out.payload_bytes());
  const auto data = cube.data();
  std::size_t src = 0;
  for (int b = 0; b < out.bands; ++b) {
    for (int row = 0; row < out.lines; ++row) {
      for (int col = 0; col < out.samples; ++col) {
        std::memcpy(encoded.bytes.data() + source_index(out, b, row, col) * 4, &data[src++], 4);
      }
    }
  }
  return encoded;
}

int nearest_band(const EnviHeader& header, double target_nm) {
  int best = 0;
  double best_dist = std::abs(header.wavelengths.at(0) - target_nm);
  for (std::size_t i = 1; i < header.wavelengths.size(); ++i) {
    const double d = std::abs(header.wavelengths[i] - target_nm);
    if (d < best_dist) {
      best_dist = d;
      best = static_cast<int>(i);
    }
  }
  return best;
}

std::filesystem::path payload_path_for(const std::filesystem::path& header_path) {
  for (const char* ext : {".raw", ".img", ".dat"}) {
    auto candidate = header_path;
    candidate.replace_extension(ext);
    if (std::filesystem::exists(candidate)) return candidate;
  }
  auto bare = header_path;
  bare.replace_extension();
  if (std::filesystem::exists(bare) && bare != header_path) return bare;
  auto fallback = header_path;
  fallback.replace_extension(".raw");
  return fallback;
}

namespace {

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::IoFailure, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

HsiCube load_cube(const std::filesystem::path& header_path, Provenance provenance) {
  const EnviHeader header = parse_envi_header(read_text(header_path));
  const auto payload = payload_path_for(header_path);
  std::ifstream in(payload, std::ios::binary);
  if (!in) throw Error(Errc::IoFailure, "cannot open " + payload.string());
  in.seekg(0, std::ios::end);
  const auto size = static_cast<std::size_t>(in.tellg());
  in.seekg(0);
  std::vector<std::byte> bytes(size);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(size));
  if (!in) throw Error(Errc::IoFailure, "short read on " + payload.string());
  return read_cube(header, bytes, provenance);
}

void save_cube(const HsiCube& cube, const std::filesystem::path& header_path, Interleave interleave) {
  const auto encoded = write_cube(cube, interleave);
  if (header_path.has_parent_path()) std::filesystem::create_directories(header_path.parent_path());
  {
    std::ofstream hdr(header_path);
    if (!hdr) throw Error(Errc::IoFailure, "cannot write " + header_path.string());
    hdr << encoded.header_text;
  }
  auto payload = header_path;
  payload.replace_extension(".raw");
  std::ofstream raw(payload, std::ios::binary);
  if (!raw) throw Error(Errc::IoFailure, "cannot write " + payload.string());
  raw.write(reinterpret_cast<const char*>(encoded.bytes.data()), static_cast<std::streamsize>(encoded.bytes.size()));
  if (!raw) throw Error(Errc::IoFailure, "short write on " + payload.string());
}

}  // namespace splitsense::hsi
