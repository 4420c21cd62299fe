#include "splitsense/detector.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <json.hpp>

#include "splitsense/error.hpp"
#include "splitsense/rng.hpp"

namespace splitsense::detect {

using preprocess::ForegroundMask;
using preprocess::RoiTensor;
using splitsense::format_number;

std::string_view to_string(Status status) noexcept { return status == Status::Normal ? "Normal" : "Anomalous"; }

// ---------------------------------------------------------------- scoring ----

Scorer::Scorer(train::Checkpoint checkpoint) : ckpt_(std::move(checkpoint)), model_(ckpt_.vae) {}

void Scorer::check_shape(const RoiTensor& roi) const {
  if (roi.channels() != ckpt_.vae.in_channels || roi.size() != ckpt_.vae.spatial) {
    throw Error(Errc::ShapeMismatch, "ROI is " + std::to_string(roi.channels()) + "x" + std::to_string(roi.size()) +
                                         " but the model expects " + std::to_string(ckpt_.vae.in_channels) + "x" +
                                         std::to_string(ckpt_.vae.spatial));
  }
}

std::vector<float> Scorer::reconstruct(const RoiTensor& roi, EpsMode mode, std::uint64_t seed) const {
  check_shape(roi);
  vae::Activations<float> acts;
  model_.encode_sample(ckpt_.params, roi.values(), acts);
  std::vector<float> z(acts.mu);
  if (mode == EpsMode::seeded) {
    SplitMix64 rng(seed);
    for (std::size_t i = 0; i < z.size(); ++i) {
      z[i] += std::exp(0.5f * acts.logvar[i]) * static_cast<float>(rng.normal());
    }
  }
  model_.decode_sample(ckpt_.params, z, acts);
  return std::move(acts.dec.back());
}

ScoreRecord Scorer::score(const RoiTensor& roi, std::string id, EpsMode mode, std::uint64_t seed) const {
  const auto xhat = reconstruct(roi, mode, seed);
  ScoreRecord r;
  r.id = std::move(id);
  r.recon_loss = vae::recon_l1<float>(roi.values(), xhat);
  return r;
}

ScoreRecord score(const train::Checkpoint& checkpoint, const RoiTensor& roi, EpsMode mode, std::uint64_t seed) {
  return Scorer(checkpoint).score(roi, {}, mode, seed);
}

std::vector<ScoreRecord> regularity(std::vector<ScoreRecord> records) {
  if (records.empty()) return records;
  const auto [lo, hi] = std::minmax_element(records.begin(), records.end(), [](const auto& a, const auto& b) {
    return a.recon_loss < b.recon_loss;
  });
  const double min = lo->recon_loss;
  const double range = hi->recon_loss - min;
  for (auto& r : records) r.regularity = range > 0.0 ? (r.recon_loss - min) / range : 0.0;
  return records;
}

Status classify(double recon_loss, double theta) noexcept {
  return recon_loss > theta ? Status::Anomalous : Status::Normal;
}

// ------------------------------------------------------------- threshold ----

namespace {

struct Counts {
  int tp = 0, fp = 0, tn = 0, fn = 0;
};

CurvePoint point_from(double theta, const Counts& c) {
  CurvePoint p;
  p.theta = theta;
  p.precision = c.tp + c.fp > 0 ? static_cast<double>(c.tp) / (c.tp + c.fp) : 0.0;
  p.recall = c.tp + c.fn > 0 ? static_cast<double>(c.tp) / (c.tp + c.fn) : 0.0;
  // 2PR/(P+R) written over the counts so equal F1 values compare exactly equal.
  const int denom = 2 * c.tp + c.fp + c.fn;
  p.f1 = denom > 0 ? 2.0 * c.tp / denom : 0.0;
  return p;
}

void require_labels(std::span<const ScoreRecord> records) {
  for (const auto& r : records) {
    if (!r.label) throw Error(Errc::InvalidArgument, "record '" + r.id + "' has no label");
  }
}

bool has_both_classes(std::span<const ScoreRecord> records) {
  bool normal = false, anomalous = false;
  for (const auto& r : records) (*r.label == Label::normal ? normal : anomalous) = true;
  return normal && anomalous;
}

}  // namespace

Metrics evaluate(std::span<const ScoreRecord> records, double theta) {
  require_labels(records);
  Metrics m;
  for (const auto& r : records) {
    const bool predicted = classify(r.recon_loss, theta) == Status::Anomalous;
    const bool actual = *r.label == Label::anomalous;
    if (predicted && actual) ++m.tp;
    else if (predicted) ++m.fp;
    else if (actual) ++m.fn;
    else ++m.tn;
  }
  const int n = m.tp + m.fp + m.tn + m.fn;
  m.accuracy = n > 0 ? static_cast<double>(m.tp + m.tn) / n : 0.0;
  if (has_both_classes(records)) {
    const auto p = point_from(theta, {m.tp, m.fp, m.tn, m.fn});
    m.precision = p.precision;
    m.recall = p.recall;
    m.f1 = p.f1;
  }
  return m;
}

ThresholdReport select_threshold(std::span<const ScoreRecord> records) {
  require_labels(records);
  if (!has_both_classes(records)) throw Error(Errc::OneClassOnly, "threshold selection needs both labels");

  // Losses sorted ascending with their labels; candidates from distinct values.
  std::vector<std::pair<double, bool>> sorted;  // (loss, anomalous)
  for (const auto& r : records) sorted.emplace_back(r.recon_loss, *r.label == Label::anomalous);
  std::sort(sorted.begin(), sorted.end());
  std::vector<double> distinct;
  for (const auto& [loss, _] : sorted) {
    if (distinct.empty() || loss != distinct.back()) distinct.push_back(loss);
  }
  std::vector<double> candidates;
  for (std::size_t i = 0; i < distinct.size(); ++i) {
    candidates.push_back(distinct[i]);
    if (i + 1 < distinct.size()) candidates.push_back(0.5 * (distinct[i] + distinct[i + 1]));
  }

  int total_anomalous = 0;
  for (const auto& s : sorted) total_anomalous += s.second ? 1 : 0;
  const int total_normal = static_cast<int>(sorted.size()) - total_anomalous;

  ThresholdReport report;
  std::size_t below = 0;  // records with loss <= theta
  int anomalous_below = 0;
  for (double theta : candidates) {
    while (below < sorted.size() && sorted[below].first <= theta) {
      anomalous_below += sorted[below].second ? 1 : 0;
      ++below;
    }
    const int normal_below = static_cast<int>(below) - anomalous_below;
    const Counts c{total_anomalous - anomalous_below, total_normal - normal_below, normal_below, anomalous_below};
    report.curve.push_back(point_from(theta, c));
  }
  const auto best = std::max_element(report.curve.begin(), report.curve.end(),
                                     [](const CurvePoint& a, const CurvePoint& b) { return a.f1 < b.f1; });
  // max_element returns the first maximum, i.e. the smallest theta.
  report.theta = best->theta;
  report.f1_at_theta = best->f1;
  for (const auto& r : records) report.calibration_ids.push_back(r.id);
  return report;
}

Halves stratified_halves(std::span<const ScoreRecord> records, std::uint64_t seed) {
  require_labels(records);
  Halves halves;
  SplitMix64 rng(seed);
  for (Label label : {Label::normal, Label::anomalous}) {
    std::vector<ScoreRecord> group;
    for (const auto& r : records) {
      if (*r.label == label) group.push_back(r);
    }
    rng.shuffle(std::span<ScoreRecord>(group));
    const std::size_t half = (group.size() + 1) / 2;
    for (std::size_t i = 0; i < group.size(); ++i) {
      (i < half ? halves.calibration : halves.validation).push_back(std::move(group[i]));
    }
  }
  return halves;
}

ThresholdReport calibrate_threshold(std::span<const ScoreRecord> records, std::uint64_t seed) {
  const Halves halves = stratified_halves(records, seed);
  ThresholdReport report = select_threshold(halves.calibration);
  for (const auto& r : halves.validation) report.validation_ids.push_back(r.id);
  if (!halves.validation.empty()) report.validation = evaluate(halves.validation, report.theta);
  return report;
}

// --------------------------------------------------------------- heatmaps ----

ForegroundMask foreground_of(const RoiTensor& roi) {
  const int n = roi.size();
  ForegroundMask m = ForegroundMask::filled(n, n, 0);
  const std::size_t plane = static_cast<std::size_t>(n) * static_cast<std::size_t>(n);
  const auto v = roi.values();
  for (int c = 0; c < roi.channels(); ++c) {
    for (std::size_t p = 0; p < plane; ++p) {
      if (v[static_cast<std::size_t>(c) * plane + p] != 0.0f) m.bits[p] = 1;
    }
  }
  return m;
}

Heatmap heatmap(const RoiTensor& x, std::span<const float> xhat, const ForegroundMask& fruit, double percentile) {
  if (xhat.size() != x.values().size()) throw Error(Errc::ShapeMismatch, "reconstruction shape differs from ROI");
  if (fruit.height != x.size() || fruit.width != x.size()) {
    throw Error(Errc::ShapeMismatch, "fruit mask shape differs from ROI");
  }
  if (!(percentile >= 0.0 && percentile <= 100.0)) throw Error(Errc::InvalidArgument, "percentile must be in [0,100]");
  const std::size_t plane = static_cast<std::size_t>(x.size()) * static_cast<std::size_t>(x.size());
  Heatmap map;
  map.size = x.size();
  map.percentile = percentile;
  map.error.assign(plane, 0.0);
  const auto v = x.values();
  for (int c = 0; c < x.channels(); ++c) {
    const std::size_t base = static_cast<std::size_t>(c) * plane;
    for (std::size_t p = 0; p < plane; ++p) {
      map.error[p] += std::abs(static_cast<double>(v[base + p]) - static_cast<double>(xhat[base + p]));
    }
  }
  for (double& e : map.error) e /= x.channels();

  std::vector<double> inside;
  for (std::size_t p = 0; p < plane; ++p) {
    if (fruit.bits[p]) inside.push_back(map.error[p]);
  }
  if (inside.empty()) throw Error(Errc::EmptyMask, "fruit mask selects no pixels");
  std::sort(inside.begin(), inside.end());
  const double pos = percentile / 100.0 * static_cast<double>(inside.size() - 1);
  const auto i0 = static_cast<std::size_t>(std::floor(pos));
  const std::size_t i1 = std::min(i0 + 1, inside.size() - 1);
  map.threshold = inside[i0] + (pos - static_cast<double>(i0)) * (inside[i1] - inside[i0]);

  map.highlight.assign(plane, 0);
  for (std::size_t p = 0; p < plane; ++p) {
    if (!fruit.bits[p]) continue;
    map.highlight[p] = (percentile == 0.0 || map.error[p] > map.threshold) ? 1 : 0;
  }
  return map;
}

preprocess::GrayImage heatmap_error_image(const Heatmap& map) {
  preprocess::GrayImage img{map.size, map.size, std::vector<std::uint8_t>(map.error.size(), 0)};
  const double max = map.error.empty() ? 0.0 : *std::max_element(map.error.begin(), map.error.end());
  if (max > 0.0) {
    for (std::size_t p = 0; p < map.error.size(); ++p) {
      img.pixels[p] = static_cast<std::uint8_t>(std::lround(255.0 * map.error[p] / max));
    }
  }
  return img;
}

preprocess::GrayImage heatmap_highlight_image(const Heatmap& map) {
  preprocess::GrayImage img{map.size, map.size, std::vector<std::uint8_t>(map.highlight.size(), 0)};
  for (std::size_t p = 0; p < map.highlight.size(); ++p) img.pixels[p] = map.highlight[p] ? 255 : 0;
  return img;
}

ReflectanceReport mean_reflectance_report(std::span<const RoiTensor> originals,
                                          std::span<const std::vector<float>> reconstructions,
                                          std::span<const Label> labels) {
  if (originals.size() != reconstructions.size() || originals.size() != labels.size() || originals.empty()) {
    throw Error(Errc::InvalidArgument, "report needs one reconstruction and label per ROI");
  }
  ReflectanceReport report;
  report.wavelengths = originals.front().wavelengths();
  const auto bands = static_cast<std::size_t>(originals.front().channels());
  for (Label label : {Label::normal, Label::anomalous}) {
    LabelSpectra spectra{label, 0, std::vector<double>(bands, 0.0), std::vector<double>(bands, 0.0)};
    std::size_t pixels = 0;
    for (std::size_t i = 0; i < originals.size(); ++i) {
      if (labels[i] != label) continue;
      const auto& roi = originals[i];
      if (roi.channels() != static_cast<int>(bands) || reconstructions[i].size() != roi.values().size()) {
        throw Error(Errc::ShapeMismatch, "ROIs in a reflectance report must share a shape");
      }
      ++spectra.samples;
      const auto fg = foreground_of(roi);
      const std::size_t plane = fg.bits.size();
      for (std::size_t p = 0; p < plane; ++p) {
        if (!fg.bits[p]) continue;
        ++pixels;
        for (std::size_t b = 0; b < bands; ++b) {
          spectra.truth[b] += roi.values()[b * plane + p];
          spectra.reconstruction[b] += reconstructions[i][b * plane + p];
        }
      }
    }
    if (spectra.samples == 0) continue;
    if (pixels > 0) {
      for (std::size_t b = 0; b < bands; ++b) {
        spectra.truth[b] /= static_cast<double>(pixels);
        spectra.reconstruction[b] /= static_cast<double>(pixels);
      }
    }
    report.per_label.push_back(std::move(spectra));
  }
  return report;
}

// -------------------------------------------------------------- artifacts ----

std::string scores_csv(std::span<const ScoreRecord> records) {
  std::ostringstream out;
  out << "id,recon_loss,regularity,label,status\n";
  for (const auto& r : records) {
    out << r.id << "," << format_number(r.recon_loss) << "," << (r.regularity ? format_number(*r.regularity) : "")
        << "," << (r.label ? to_string(*r.label) : "") << "," << (r.status ? to_string(*r.status) : "") << "\n";
  }
  return out.str();
}

std::vector<ScoreRecord> parse_scores_csv(std::string_view text) {
  std::vector<ScoreRecord> records;
  std::istringstream in{std::string(text)};
  std::string line;
  bool header = true;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (header) {
      header = false;
      if (line.rfind("id,", 0) == 0) continue;
    }
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) fields.push_back(field);
    if (!line.empty() && line.back() == ',') fields.emplace_back();
    if (fields.size() < 2) throw Error(Errc::InvalidArgument, "scores line " + std::to_string(line_no) + " is short");
    ScoreRecord r;
    r.id = fields[0];
    try {
      r.recon_loss = std::stod(fields[1]);
      if (fields.size() > 2 && !fields[2].empty()) r.regularity = std::stod(fields[2]);
    } catch (const std::exception&) {
      throw Error(Errc::InvalidArgument, "scores line " + std::to_string(line_no) + " has a bad number");
    }
    if (fields.size() > 3 && !fields[3].empty()) r.label = parse_label(fields[3]);
    if (fields.size() > 4 && !fields[4].empty()) {
      if (fields[4] == "Normal") r.status = Status::Normal;
      else if (fields[4] == "Anomalous") r.status = Status::Anomalous;
      else throw Error(Errc::InvalidArgument, "unknown status '" + fields[4] + "'");
    }
    records.push_back(std::move(r));
  }
  return records;
}

std::string threshold_report_json(const ThresholdReport& report) {
  using nlohmann::json;
  // Numbers go through format_number so the text is byte-stable and round-trips.
  auto num = [](double v) { return json::parse(format_number(v)); };
  json curve = json::array();
  for (const auto& p : report.curve) {
    curve.push_back(json{{"theta", num(p.theta)}, {"precision", num(p.precision)}, {"recall", num(p.recall)},
                         {"f1", num(p.f1)}});
  }
  json doc{{"theta", num(report.theta)},
           {"f1", num(report.f1_at_theta)},
           {"curve", curve},
           {"calibration_ids", report.calibration_ids},
           {"validation_ids", report.validation_ids}};
  if (report.validation) {
    const auto& m = *report.validation;
    json v{{"tp", m.tp}, {"fp", m.fp}, {"tn", m.tn}, {"fn", m.fn}, {"accuracy", num(m.accuracy)}};
    v["precision"] = m.precision ? num(*m.precision) : json(nullptr);
    v["recall"] = m.recall ? num(*m.recall) : json(nullptr);
    v["f1"] = m.f1 ? num(*m.f1) : json(nullptr);
    doc["validation"] = v;
  } else {
    doc["validation"] = nullptr;
  }
  return doc.dump(2) + "\n";
}

std::string reflectance_csv(const ReflectanceReport& report) {
  std::ostringstream out;
  out << "wavelength";
  for (const auto& s : report.per_label) out << "," << to_string(s.label) << "_truth," << to_string(s.label) << "_recon";
  out << "\n";
  for (std::size_t b = 0; b < report.wavelengths.size(); ++b) {
    out << format_number(report.wavelengths[b]);
    for (const auto& s : report.per_label) out << "," << format_number(s.truth[b]) << "," << format_number(s.reconstruction[b]);
    out << "\n";
  }
  return out.str();
}

}  // namespace splitsense::detect
