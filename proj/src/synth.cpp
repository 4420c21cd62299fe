#include "splitsense/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>

#include <json.hpp>

#include "splitsense/error.hpp"
#include "splitsense/rng.hpp"

namespace splitsense::synth {

template <typename Config, typename Fn>
void visit_fields(Config& c, Fn&& fn) {
  fn("width", c.width);
  fn("height", c.height);
  fn("bands", c.bands);
  fn("lo_nm", c.lo_nm);
  fn("hi_nm", c.hi_nm);
  fn("radius_min", c.radius_min);
  fn("radius_max", c.radius_max);
  fn("center_jitter", c.center_jitter);
  fn("shading", c.shading);
  fn("base", c.base);
  fn("gain", c.gain);
  fn("edge_nm", c.edge_nm);
  fn("edge_width_nm", c.edge_width_nm);
  fn("base_jitter", c.base_jitter);
  fn("gain_jitter", c.gain_jitter);
  fn("edge_jitter_nm", c.edge_jitter_nm);
  fn("background", c.background);
  fn("crack_width_min", c.crack_width_min);
  fn("crack_width_max", c.crack_width_max);
  fn("crack_length_min", c.crack_length_min);
  fn("crack_length_max", c.crack_length_max);
  fn("crack_curvature", c.crack_curvature);
  fn("delta_lo_nm", c.delta_lo_nm);
  fn("delta_peak_nm", c.delta_peak_nm);
  fn("delta_hi_nm", c.delta_hi_nm);
  fn("delta_amplitude", c.delta_amplitude);
  fn("noise_sigma", c.noise_sigma);
  fn("seed", c.seed);
}

void to_json(nlohmann::json& j, const SynthConfig& c) {
  j = nlohmann::json::object();
  visit_fields(c, [&j](const char* key, const auto& value) { j[key] = value; });
}

void from_json(const nlohmann::json& j, SynthConfig& c) {
  for (const auto& [key, _] : j.items()) {
    bool known = false;
    visit_fields(c, [&](const char* name, auto&) { known = known || key == name; });
    if (!known) throw Error(Errc::InvalidArgument, "unknown synth config key '" + key + "'");
  }
  visit_fields(c, [&j](const char* key, auto& value) {
    if (j.contains(key)) j.at(key).get_to(value);
  });
}

namespace {

enum Stream : std::uint64_t { kGeometry = 0, kNoise = 1, kCrack = 2 };

constexpr double kMinCrackFraction = 0.005;
constexpr double kMaxCrackFraction = 0.10;

void require(bool ok, const std::string& what) {
  if (!ok) throw Error(Errc::InvalidArgument, "synth config: " + what);
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

struct Point {
  double x, y;
};

// Stamp discs of radius w/2 along the curve, clipped to the fruit.
preprocess::ForegroundMask rasterize_crack(const preprocess::ForegroundMask& fruit, Point p0, Point p1, Point p2,
                                           double width) {
  auto crack = preprocess::ForegroundMask::filled(fruit.height, fruit.width, 0);
  const double approx_len = std::hypot(p1.x - p0.x, p1.y - p0.y) + std::hypot(p2.x - p1.x, p2.y - p1.y);
  const int steps = std::max(2, static_cast<int>(std::ceil(approx_len * 4.0)));
  const double r = 0.5 * width;
  const double r2 = r * r;
  for (int s = 0; s <= steps; ++s) {
    const double t = static_cast<double>(s) / steps;
    const double u = 1.0 - t;
    const double cx = u * u * p0.x + 2.0 * u * t * p1.x + t * t * p2.x;
    const double cy = u * u * p0.y + 2.0 * u * t * p1.y + t * t * p2.y;
    const int row_lo = std::max(0, static_cast<int>(std::floor(cy - r)));
    const int row_hi = std::min(fruit.height - 1, static_cast<int>(std::ceil(cy + r)));
    const int col_lo = std::max(0, static_cast<int>(std::floor(cx - r)));
    const int col_hi = std::min(fruit.width - 1, static_cast<int>(std::ceil(cx + r)));
    for (int row = row_lo; row <= row_hi; ++row) {
      for (int col = col_lo; col <= col_hi; ++col) {
        const double dx = col - cx, dy = row - cy;
        if (dx * dx + dy * dy > r2) continue;
        const auto idx = static_cast<std::size_t>(row) * static_cast<std::size_t>(fruit.width) +
                         static_cast<std::size_t>(col);
        if (fruit.bits[idx]) crack.bits[idx] = 1;
      }
    }
  }
  return crack;
}

preprocess::ForegroundMask make_crack(const SynthConfig& c, const preprocess::ForegroundMask& fruit, Point center,
                                      double radius, std::uint64_t seed) {
  SplitMix64 rng(seed);
  const double fruit_area = static_cast<double>(fruit.count());
  for (int attempt = 0; attempt < 64; ++attempt) {
    const double start_r = radius * 0.5 * std::sqrt(rng.uniform());
    const double start_a = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const double dir = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const double len = radius * rng.uniform(c.crack_length_min, c.crack_length_max);
    const double bend = c.crack_curvature * len * rng.uniform(-1.0, 1.0);
    const double width = rng.uniform(c.crack_width_min, c.crack_width_max);
    // Centre the stroke on the start point so most of it stays on the fruit.
    const Point mid{center.x + start_r * std::cos(start_a), center.y + start_r * std::sin(start_a)};
    const Point d{std::cos(dir), std::sin(dir)};
    const Point p0{mid.x - 0.5 * len * d.x, mid.y - 0.5 * len * d.y};
    const Point p2{mid.x + 0.5 * len * d.x, mid.y + 0.5 * len * d.y};
    const Point p1{mid.x - bend * d.y, mid.y + bend * d.x};
    auto crack = rasterize_crack(fruit, p0, p1, p2, width);
    const double frac = static_cast<double>(crack.count()) / fruit_area;
    if (frac >= kMinCrackFraction && frac <= kMaxCrackFraction) return crack;
  }
  // Fallback: a short straight stroke through the centre.
  const double half = 0.5 * radius;
  return rasterize_crack(fruit, {center.x - half, center.y}, center, {center.x + half, center.y},
                         0.5 * (c.crack_width_min + c.crack_width_max));
}

}  // namespace

void SynthConfig::validate() const {
  require(width > 0 && height > 0, "image size must be positive");
  require(bands >= 2, "need at least two bands");
  require(lo_nm < hi_nm, "lo_nm must be below hi_nm");
  require(radius_min > 0.0 && radius_min <= radius_max, "radius range is empty");
  require(radius_max + center_jitter + 1.0 <= 0.5 * std::min(width, height), "fruit does not fit in the image");
  require(shading >= 0.0 && shading < 1.0, "shading must be in [0,1)");
  require(crack_width_min > 0.0 && crack_width_min <= crack_width_max, "crack width range is empty");
  require(crack_length_min > 0.0 && crack_length_min <= crack_length_max, "crack length range is empty");
  require(delta_lo_nm < delta_peak_nm && delta_peak_nm < delta_hi_nm, "delta peak must lie inside its support");
  require(noise_sigma >= 0.0, "noise sigma must be non-negative");
  require(edge_width_nm > 0.0, "edge width must be positive");
}

std::vector<double> wavelengths(const SynthConfig& config) { return hsi::even_grid(config.lo_nm, config.hi_nm, config.bands); }

double split_delta(const SynthConfig& c, double nm) {
  if (nm <= c.delta_lo_nm || nm >= c.delta_hi_nm) return 0.0;
  const double pi = std::numbers::pi;
  if (nm <= c.delta_peak_nm) {
    return c.delta_amplitude * 0.5 * (1.0 - std::cos(pi * (nm - c.delta_lo_nm) / (c.delta_peak_nm - c.delta_lo_nm)));
  }
  return c.delta_amplitude * 0.5 * (1.0 + std::cos(pi * (nm - c.delta_peak_nm) / (c.delta_hi_nm - c.delta_peak_nm)));
}

double normal_profile(const SynthConfig& c, double nm) {
  return c.base + c.gain * sigmoid((nm - c.edge_nm) / c.edge_width_nm);
}

SynthSample gen_sample(const SynthConfig& config, Label label, std::uint64_t seed) {
  config.validate();
  const auto grid = wavelengths(config);
  const int h = config.height, w = config.width, d = config.bands;

  SplitMix64 geo(derive_seed(seed, kGeometry));
  const Point center{0.5 * (w - 1) + geo.uniform(-config.center_jitter, config.center_jitter),
                     0.5 * (h - 1) + geo.uniform(-config.center_jitter, config.center_jitter)};
  const double radius = geo.uniform(config.radius_min, config.radius_max);
  SynthConfig tissue = config;
  tissue.base += geo.uniform(-config.base_jitter, config.base_jitter);
  tissue.gain += geo.uniform(-config.gain_jitter, config.gain_jitter);
  tissue.edge_nm += geo.uniform(-config.edge_jitter_nm, config.edge_jitter_nm);

  auto mask = preprocess::ForegroundMask::filled(h, w, 0);
  std::vector<double> shade(static_cast<std::size_t>(h) * static_cast<std::size_t>(w), 0.0);
  int r0 = h, r1 = -1, c0 = w, c1 = -1;
  for (int row = 0; row < h; ++row) {
    for (int col = 0; col < w; ++col) {
      const double rr = std::hypot(col - center.x, row - center.y) / radius;
      if (rr > 1.0) continue;
      const auto idx = static_cast<std::size_t>(row) * static_cast<std::size_t>(w) + static_cast<std::size_t>(col);
      mask.bits[idx] = 1;
      shade[idx] = 1.0 - config.shading * rr * rr;
      r0 = std::min(r0, row), r1 = std::max(r1, row), c0 = std::min(c0, col), c1 = std::max(c1, col);
    }
  }

  std::optional<preprocess::ForegroundMask> crack;
  if (label == Label::anomalous) crack = make_crack(config, mask, center, radius, derive_seed(seed, kCrack));

  const std::size_t plane = shade.size();
  std::vector<float> data(plane * static_cast<std::size_t>(d));
  const std::uint64_t noise_seed = derive_seed(seed, kNoise);
  for (int b = 0; b < d; ++b) {
    // One stream per band keeps bands independent of generation order.
    SplitMix64 noise(derive_seed(noise_seed, static_cast<std::uint64_t>(b)));
    const double profile = normal_profile(tissue, grid[static_cast<std::size_t>(b)]);
    const double delta = split_delta(config, grid[static_cast<std::size_t>(b)]);
    float* out = data.data() + static_cast<std::size_t>(b) * plane;
    for (std::size_t p = 0; p < plane; ++p) {
      double v = mask.bits[p] ? shade[p] * profile : config.background;
      if (crack && crack->bits[p]) v += delta;
      v += config.noise_sigma * noise.normal();
      out[p] = static_cast<float>(std::clamp(v, 0.0, 1.0));
    }
  }

  return SynthSample{hsi::HsiCube(hsi::make_header(w, h, grid), std::move(data), hsi::Provenance::calibrated),
                     std::move(mask), preprocess::BoundingBox{c0, r0, r1 - r0 + 1, c1 - c0 + 1}, label,
                     std::move(crack)};
}

std::optional<bands::PatchSpec> patch_inside(const preprocess::ForegroundMask& region, int size) {
  const int h = region.height, w = region.width;
  if (size < 1 || size > h || size > w || region.count() == 0) return std::nullopt;
  double cx = 0.0, cy = 0.0;
  for (int row = 0; row < h; ++row) {
    for (int col = 0; col < w; ++col) {
      if (region.at(row, col)) cx += col, cy += row;
    }
  }
  const auto n = static_cast<double>(region.count());
  cx /= n, cy /= n;
  // Summed-area table for O(1) patch counts.
  std::vector<int> sat(static_cast<std::size_t>(h + 1) * static_cast<std::size_t>(w + 1), 0);
  auto at = [&](int r, int c) -> int& { return sat[static_cast<std::size_t>(r) * static_cast<std::size_t>(w + 1) + static_cast<std::size_t>(c)]; };
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) at(r + 1, c + 1) = region.at(r, c) + at(r, c + 1) + at(r + 1, c) - at(r, c);
  }
  std::optional<bands::PatchSpec> best;
  double best_d = 0.0;
  const double half = 0.5 * (size - 1);
  for (int y = 0; y + size <= h; ++y) {
    for (int x = 0; x + size <= w; ++x) {
      const int inside = at(y + size, x + size) - at(y, x + size) - at(y + size, x) + at(y, x);
      if (inside != size * size) continue;
      const double d = std::hypot(x + half - cx, y + half - cy);
      if (!best || d < best_d) best = bands::PatchSpec{x, y, size}, best_d = d;
    }
  }
  return best;
}

Manifest plan_dataset(const SynthConfig& config, int n_normal, int n_anomalous) {
  if (n_normal < 0 || n_anomalous < 0) throw Error(Errc::InvalidArgument, "sample counts must be non-negative");
  Manifest m{config, {}};
  const int total = n_normal + n_anomalous;
  for (int i = 0; i < total; ++i) {
    char id[32];
    std::snprintf(id, sizeof id, "tomato_%04d", i);
    ManifestEntry e;
    e.id = id;
    e.label = i < n_normal ? Label::normal : Label::anomalous;
    e.seed = derive_seed(config.seed, static_cast<std::uint64_t>(i));
    e.cube_path = e.id + ".hdr";
    e.mask_path = e.id + "_mask.pgm";
    if (e.label == Label::anomalous) e.crack_path = e.id + "_crack.pgm";
    m.entries.push_back(std::move(e));
  }
  return m;
}

Manifest gen_dataset(const SynthConfig& config, int n_normal, int n_anomalous, const std::filesystem::path& out_dir) {
  config.validate();
  Manifest manifest = plan_dataset(config, n_normal, n_anomalous);
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw Error(Errc::IoFailure, "cannot create " + out_dir.string() + ": " + ec.message());

  std::vector<preprocess::Annotation> annotations;
  for (const auto& e : manifest.entries) {
    const SynthSample s = gen_sample(config, e.label, e.seed);
    hsi::save_cube(s.cube, out_dir / e.cube_path);
    preprocess::write_pgm(preprocess::mask_to_gray(s.mask), out_dir / e.mask_path);
    if (s.crack) preprocess::write_pgm(preprocess::mask_to_gray(*s.crack), out_dir / *e.crack_path);
    annotations.push_back({e.id, s.bbox, e.mask_path, e.cube_path});
  }
  preprocess::write_annotations(annotations, out_dir / "annotations.json");

  std::ofstream out(out_dir / "manifest.json");
  if (!out) throw Error(Errc::IoFailure, "cannot write " + (out_dir / "manifest.json").string());
  out << manifest_json(manifest);
  if (!out) throw Error(Errc::IoFailure, "failed writing " + (out_dir / "manifest.json").string());
  return manifest;
}

std::string manifest_json(const Manifest& manifest) {
  nlohmann::json samples = nlohmann::json::array();
  for (const auto& e : manifest.entries) {
    nlohmann::json item{{"id", e.id},
                        {"label", to_string(e.label)},
                        {"seed", e.seed},
                        {"cube", e.cube_path},
                        {"mask", e.mask_path}};
    if (e.crack_path) item["crack"] = *e.crack_path;
    samples.push_back(std::move(item));
  }
  nlohmann::json doc{{"format", "splitsense-synth"}, {"version", 1}, {"config", manifest.config}, {"samples", samples}};
  return doc.dump(2) + "\n";
}

Manifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::IoFailure, "cannot open " + path.string());
  try {
    nlohmann::json doc;
    in >> doc;
    if (doc.at("format") != "splitsense-synth") throw Error(Errc::InvalidArgument, path.string() + ": not a synth manifest");
    Manifest m;
    m.config = doc.at("config").get<SynthConfig>();
    for (const auto& item : doc.at("samples")) {
      ManifestEntry e;
      e.id = item.at("id").get<std::string>();
      e.label = parse_label(item.at("label").get<std::string>());
      e.seed = item.at("seed").get<std::uint64_t>();
      e.cube_path = item.at("cube").get<std::string>();
      e.mask_path = item.at("mask").get<std::string>();
      if (item.contains("crack")) e.crack_path = item["crack"].get<std::string>();
      m.entries.push_back(std::move(e));
    }
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::MissingKey, path.string() + ": " + e.what());
  }
}

}  // namespace splitsense::synth
