#include "splitsense/cli.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "splitsense/band_analysis.hpp"
#include "splitsense/detector.hpp"
#include "splitsense/error.hpp"
#include "splitsense/hsi_io.hpp"
#include "splitsense/rng.hpp"
#include "splitsense/synth.hpp"
#include "splitsense/trainer.hpp"

namespace splitsense::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Data errors that already carry file context.
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

template <typename F>
auto with_path(const fs::path& path, F&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const Error& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
  if (!out) throw DataError("failed writing " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

hsi::Interleave parse_interleave(const std::string& name) {
  if (name == "bsq") return hsi::Interleave::bsq;
  if (name == "bil") return hsi::Interleave::bil;
  throw CLI::ValidationError("--interleave", "expected bsq or bil");
}

// ---------------------------------------------------------------- synth ----

struct SynthArgs {
  int normal = 0;
  int anomalous = 0;
  std::uint64_t seed = 0;
  std::string out;
  std::string config;
};

int run_synth(const SynthArgs& a, std::ostream& out) {
  synth::SynthConfig config;
  if (!a.config.empty()) {
    config = with_path(a.config, [&] { return read_json(a.config).get<synth::SynthConfig>(); });
  }
  config.seed = a.seed;
  const auto manifest = with_path(a.out, [&] { return synth::gen_dataset(config, a.normal, a.anomalous, a.out); });
  out << "wrote " << manifest.entries.size() << " samples to " << a.out << "\n";
  return kExitOk;
}

// ------------------------------------------------------------- calibrate ----

struct CalibrateArgs {
  std::string raw, dark, white, out;
  std::string interleave = "bsq";
};

int run_calibrate(const CalibrateArgs& a, std::ostream& out) {
  auto load = [](const std::string& p) { return with_path(p, [&] { return hsi::load_cube(p); }); };
  const auto raw = load(a.raw);
  const auto dark = load(a.dark);
  const auto white = load(a.white);
  const auto result = with_path(a.raw, [&] { return preprocess::calibrate(raw, dark, white); });
  with_path(a.out, [&] { hsi::save_cube(result.cube, a.out, parse_interleave(a.interleave)); });
  out << "calibrated " << a.raw << " -> " << a.out << " (" << result.degenerate_count << " degenerate elements)\n";
  return kExitOk;
}

// ----------------------------------------------------------- extract-roi ----

struct ExtractArgs {
  std::string annotations, out, labels;
  double lo = 530.0, hi = 550.0;
  int bands = preprocess::RoiTensor::kChannels;
  int size = preprocess::RoiTensor::kSize;
  int rgb_width = 0, rgb_height = 0;
};

int run_extract(const ExtractArgs& a, std::ostream& out) {
  const fs::path ann_path = a.annotations;
  const auto annotations = with_path(ann_path, [&] { return preprocess::read_annotations(ann_path); });
  std::map<std::string, Label> labels;
  if (!a.labels.empty()) {
    const auto manifest = with_path(a.labels, [&] { return synth::read_manifest(a.labels); });
    for (const auto& e : manifest.entries) labels[e.id] = e.label;
  }
  const fs::path base = ann_path.parent_path();
  const fs::path out_dir = a.out;
  const preprocess::RoiOptions options{a.lo, a.hi, a.bands, a.size};
  std::vector<RoiEntry> index;
  for (const auto& ann : annotations) {
    if (!ann.cube_path) throw DataError(ann_path.string() + ": annotation '" + ann.id + "' has no cube_path");
    const fs::path cube_path = base / *ann.cube_path;
    const fs::path mask_path = base / ann.mask_path;
    const auto cube = with_path(cube_path, [&] { return hsi::load_cube(cube_path, hsi::Provenance::calibrated); });
    const auto mask = with_path(mask_path, [&] { return preprocess::load_mask(mask_path); });
    const preprocess::Dims rgb = a.rgb_width > 0 ? preprocess::Dims{a.rgb_height, a.rgb_width}
                                                 : preprocess::Dims{cube.height(), cube.width()};
    const auto roi = with_path(cube_path, [&] { return preprocess::extract_roi(cube, ann.bbox, rgb, mask, options); });
    const std::string rel = ann.id + ".hdr";
    with_path(out_dir / rel, [&] { hsi::save_cube(preprocess::roi_to_cube(roi), out_dir / rel); });
    RoiEntry entry{ann.id, rel, std::nullopt};
    if (auto it = labels.find(ann.id); it != labels.end()) entry.label = it->second;
    index.push_back(std::move(entry));
  }
  write_roi_index(index, out_dir / "rois.json");
  out << "extracted " << index.size() << " ROIs to " << a.out << "\n";
  return kExitOk;
}

// ----------------------------------------------------------------- bands ----

struct BandsArgs {
  std::vector<std::string> normal, anomalous;
  std::string manifest, out;
  int patch_size = 5;
  double width = 20.0;
};

// "cube.hdr:x:y"; the path itself may contain ':'.
bands::Spectrum spectrum_from_spec(const std::string& spec, int patch_size) {
  const auto c2 = spec.rfind(':');
  const auto c1 = c2 == std::string::npos || c2 == 0 ? std::string::npos : spec.rfind(':', c2 - 1);
  if (c1 == std::string::npos) throw CLI::ValidationError("patch", "expected PATH:X:Y, got '" + spec + "'");
  int x = 0, y = 0;
  try {
    x = std::stoi(spec.substr(c1 + 1, c2 - c1 - 1));
    y = std::stoi(spec.substr(c2 + 1));
  } catch (const std::exception&) {
    throw CLI::ValidationError("patch", "bad coordinates in '" + spec + "'");
  }
  const fs::path path = spec.substr(0, c1);
  return with_path(path, [&] {
    const auto cube = hsi::load_cube(path, hsi::Provenance::calibrated);
    return bands::patch_mean_spectrum(cube, {x, y, patch_size});
  });
}

int run_bands(const BandsArgs& a, std::ostream& out) {
  std::vector<bands::Spectrum> normal, anomalous;
  for (const auto& s : a.normal) normal.push_back(spectrum_from_spec(s, a.patch_size));
  for (const auto& s : a.anomalous) anomalous.push_back(spectrum_from_spec(s, a.patch_size));
  if (!a.manifest.empty()) {
    // Synthetic datasets: normal patches at the fruit centre, anomalous ones on the ground-truth crack.
    const fs::path mpath = a.manifest;
    const auto manifest = with_path(mpath, [&] { return synth::read_manifest(mpath); });
    const fs::path base = mpath.parent_path();
    for (const auto& e : manifest.entries) {
      const fs::path region_path = base / (e.crack_path ? *e.crack_path : e.mask_path);
      const auto region = with_path(region_path, [&] { return preprocess::load_mask(region_path); });
      const auto patch = synth::patch_inside(region, a.patch_size);
      if (!patch) continue;
      const fs::path cube_path = base / e.cube_path;
      auto s = with_path(cube_path, [&] {
        return bands::patch_mean_spectrum(hsi::load_cube(cube_path, hsi::Provenance::calibrated), *patch);
      });
      (e.label == Label::normal ? normal : anomalous).push_back(std::move(s));
    }
  }
  if (normal.empty() || anomalous.empty()) {
    throw DataError("bands analyze needs at least one normal and one anomalous patch");
  }
  const auto report = with_path(a.out, [&] { return bands::analyze(normal, anomalous, a.width); });
  write_text(a.out, bands::band_report_csv(report));
  out << bands::range_json(report.range) << "\n";
  return kExitOk;
}

// ----------------------------------------------------------------- train ----

struct TrainArgs {
  std::string rois, out, config, loss_csv, split_out;
  std::optional<std::uint64_t> seed;
  double ratio = 0.8;
  int threads = 0;
  bool verbose = false;
};

std::string split_json(const train::DatasetSplit& split) {
  json doc{{"ratio", split.ratio}, {"seed", split.seed}, {"train", split.train}, {"test", split.test}};
  return doc.dump(2) + "\n";
}

std::set<std::string> test_ids(const fs::path& split_path) {
  const json doc = read_json(split_path);
  try {
    const auto ids = doc.at("test").get<std::vector<std::string>>();
    return {ids.begin(), ids.end()};
  } catch (const json::exception& e) {
    throw DataError(split_path.string() + ": " + e.what());
  }
}

int run_train(const TrainArgs& a, std::ostream& out, std::ostream& err) {
  train::TrainConfig config;
  if (!a.config.empty()) config = with_path(a.config, [&] { return train::load_train_config(a.config); });
  if (a.seed) config.seed = *a.seed;
  with_path(a.config, [&] { config.validate(); });

  auto rois = load_rois(a.rois);
  std::vector<train::LabeledId> items;
  for (const auto& r : rois) {
    if (!r.label) throw DataError(a.rois + ": ROI '" + r.id + "' has no label");
    items.push_back({r.id, *r.label});
  }
  const auto split = with_path(a.rois, [&] { return train::split_dataset(items, a.ratio, config.seed); });
  std::map<std::string, std::size_t> by_id;
  for (std::size_t i = 0; i < rois.size(); ++i) by_id[rois[i].id] = i;
  std::vector<preprocess::RoiTensor> data;
  for (const auto& id : split.train) data.push_back(rois[by_id.at(id)].roi);

  const int every = std::max(1, config.epochs / 20);
  train::ProgressFn progress;
  if (a.verbose) {
    progress = [&err, every, total = config.epochs](const train::EpochStats& s) {
      if (s.epoch % every == 0 || s.epoch + 1 == total) {
        err << "epoch " << s.epoch << " beta " << s.beta << " recon " << s.recon << " kl " << s.kl << "\n";
      }
    };
  }
  const auto ckpt = with_path(a.rois, [&] { return train::train(config, data, progress, a.threads); });
  const fs::path out_dir = a.out;
  with_path(out_dir, [&] { train::save_checkpoint(ckpt, out_dir); });
  write_text(a.loss_csv.empty() ? out_dir / "loss.csv" : fs::path(a.loss_csv), train::loss_history_csv(ckpt.history));
  write_text(a.split_out.empty() ? out_dir / "split.json" : fs::path(a.split_out), split_json(split));
  out << "trained on " << data.size() << " ROIs for " << ckpt.epochs_completed << " epochs -> " << a.out << "\n";
  return kExitOk;
}

// ----------------------------------------------------------------- score ----

struct ScoreArgs {
  std::string checkpoint, rois, split, threshold, out;
  std::vector<std::string> roi_paths;
  std::string eps = "zero";
  std::uint64_t seed = 0;
  std::optional<double> theta;
};

detect::EpsMode parse_eps(const std::string& name) {
  if (name == "zero") return detect::EpsMode::zero;
  if (name == "seeded") return detect::EpsMode::seeded;
  throw CLI::ValidationError("--eps", "expected zero or seeded");
}

std::vector<LoadedRoi> gather_rois(const std::string& index, const std::vector<std::string>& paths,
                                   const std::string& split) {
  std::vector<LoadedRoi> rois;
  if (!index.empty()) rois = load_rois(index);
  for (const auto& p : paths) {
    auto cube = with_path(p, [&] { return hsi::load_cube(p, hsi::Provenance::calibrated); });
    rois.push_back({fs::path(p).stem().string(), std::nullopt, with_path(p, [&] { return preprocess::roi_from_cube(cube); })});
  }
  if (!split.empty()) {
    const auto keep = test_ids(split);
    std::erase_if(rois, [&](const LoadedRoi& r) { return !keep.contains(r.id); });
  }
  if (rois.empty()) throw DataError("no ROIs to process");
  return rois;
}

train::Checkpoint load_ckpt(const std::string& dir) {
  return with_path(dir, [&] { return train::load_checkpoint(dir); });
}

// Seeded eps gets a per-ROI stream so the result does not depend on ROI order.
std::uint64_t roi_seed(std::uint64_t seed, std::size_t index) { return derive_seed(seed, index); }

int run_score(const ScoreArgs& a, std::ostream& out) {
  if (a.rois.empty() && a.roi_paths.empty()) throw CLI::ValidationError("score", "give --rois or --roi");
  const detect::Scorer scorer(load_ckpt(a.checkpoint));
  const auto rois = gather_rois(a.rois, a.roi_paths, a.split);
  std::optional<double> theta = a.theta;
  if (!a.threshold.empty()) {
    const json doc = read_json(a.threshold);
    if (!doc.contains("theta")) throw DataError(a.threshold + ": no theta");
    theta = doc["theta"].get<double>();
  }
  const auto mode = parse_eps(a.eps);
  std::vector<detect::ScoreRecord> records;
  for (std::size_t i = 0; i < rois.size(); ++i) {
    auto rec = with_path(rois[i].id, [&] { return scorer.score(rois[i].roi, rois[i].id, mode, roi_seed(a.seed, i)); });
    rec.label = rois[i].label;
    if (theta) rec.status = detect::classify(rec.recon_loss, *theta);
    records.push_back(std::move(rec));
  }
  records = detect::regularity(std::move(records));
  write_text(a.out, detect::scores_csv(records));
  out << "scored " << records.size() << " ROIs -> " << a.out << "\n";
  return kExitOk;
}

// ------------------------------------------------------------- threshold ----

struct ThresholdArgs {
  std::string scores, config, out;
  std::optional<std::uint64_t> seed;
};

int run_threshold(const ThresholdArgs& a, std::ostream& out) {
  std::uint64_t seed = 0;
  bool stratified = true;
  if (!a.config.empty()) {
    const json doc = read_json(a.config);
    try {
      for (const auto& [key, value] : doc.items()) {
        if (key == "seed") seed = value.get<std::uint64_t>();
        else if (key == "stratified") stratified = value.get<bool>();
        else throw DataError(a.config + ": unknown key '" + key + "'");
      }
    } catch (const json::exception& e) {
      throw DataError(a.config + ": " + e.what());
    }
  }
  if (a.seed) seed = *a.seed;
  const std::string text = read_text(a.scores);
  const auto report = with_path(a.scores, [&] {
    const auto records = detect::parse_scores_csv(text);
    return stratified ? detect::calibrate_threshold(records, seed) : detect::select_threshold(records);
  });
  const std::string doc = detect::threshold_report_json(report);
  if (a.out.empty()) {
    out << doc;
  } else {
    write_text(a.out, doc);
    out << "theta " << format_number(report.theta) << " -> " << a.out << "\n";
  }
  return kExitOk;
}

// ---------------------------------------------------------------- report ----

struct ReportArgs {
  std::string checkpoint, rois, split, out;
  double percentile = 95.0;
  std::string eps = "zero";
  std::uint64_t seed = 0;
};

int run_report(const ReportArgs& a, std::ostream& out) {
  const detect::Scorer scorer(load_ckpt(a.checkpoint));
  const auto rois = gather_rois(a.rois, {}, a.split);
  const auto mode = parse_eps(a.eps);
  const fs::path out_dir = a.out;
  std::vector<preprocess::RoiTensor> originals;
  std::vector<std::vector<float>> recons;
  std::vector<Label> labels;
  for (std::size_t i = 0; i < rois.size(); ++i) {
    const auto& r = rois[i];
    auto xhat = with_path(r.id, [&] { return scorer.reconstruct(r.roi, mode, roi_seed(a.seed, i)); });
    const auto map = with_path(r.id, [&] { return detect::heatmap(r.roi, xhat, detect::foreground_of(r.roi), a.percentile); });
    with_path(out_dir, [&] {
      preprocess::write_pgm(detect::heatmap_error_image(map), out_dir / "heatmaps" / (r.id + "_error.pgm"));
      preprocess::write_pgm(detect::heatmap_highlight_image(map), out_dir / "heatmaps" / (r.id + "_highlight.pgm"));
    });
    if (r.label) {
      originals.push_back(r.roi);
      recons.push_back(std::move(xhat));
      labels.push_back(*r.label);
    }
  }
  if (!originals.empty()) {
    const auto report = detect::mean_reflectance_report(originals, recons, labels);
    write_text(out_dir / "reflectance.csv", detect::reflectance_csv(report));
  }
  out << "wrote heatmaps for " << rois.size() << " ROIs to " << (out_dir / "heatmaps").string() << "\n";
  return kExitOk;
}

}  // namespace

// ------------------------------------------------------------- roi index ----

std::vector<RoiEntry> read_roi_index(const fs::path& path) {
  const json doc = read_json(path);
  try {
    if (doc.at("format") != "splitsense-rois") throw DataError(path.string() + ": not a ROI index");
    std::vector<RoiEntry> entries;
    for (const auto& item : doc.at("rois")) {
      RoiEntry e{item.at("id").get<std::string>(), item.at("cube").get<std::string>(), std::nullopt};
      if (item.contains("label")) e.label = parse_label(item["label"].get<std::string>());
      entries.push_back(std::move(e));
    }
    return entries;
  } catch (const json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  } catch (const Error& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

void write_roi_index(const std::vector<RoiEntry>& entries, const fs::path& path) {
  json rois = json::array();
  for (const auto& e : entries) {
    json item{{"id", e.id}, {"cube", e.cube_path}};
    if (e.label) item["label"] = to_string(*e.label);
    rois.push_back(std::move(item));
  }
  write_text(path, json{{"format", "splitsense-rois"}, {"version", 1}, {"rois", rois}}.dump(2) + "\n");
}

std::vector<LoadedRoi> load_rois(const fs::path& index_path) {
  const auto entries = read_roi_index(index_path);
  std::vector<LoadedRoi> rois;
  rois.reserve(entries.size());
  for (const auto& e : entries) {
    const fs::path p = index_path.parent_path() / e.cube_path;
    auto roi = with_path(p, [&] { return preprocess::roi_from_cube(hsi::load_cube(p, hsi::Provenance::calibrated)); });
    rois.push_back({e.id, e.label, std::move(roi)});
  }
  return rois;
}

// ------------------------------------------------------------------- run ----

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Split detection in hyperspectral tomato images", "splitsense"};
  app.require_subcommand(1);
  app.footer("Environment: SPLITSENSE_THREADS caps worker threads.");

  SynthArgs sa;
  auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic dataset");
  synth_cmd->add_option("--normal", sa.normal, "Normal samples")->required()->check(CLI::NonNegativeNumber);
  synth_cmd->add_option("--anomalous", sa.anomalous, "Split samples")->required()->check(CLI::NonNegativeNumber);
  synth_cmd->add_option("--seed", sa.seed, "Dataset seed");
  synth_cmd->add_option("--out", sa.out, "Output directory")->required();
  synth_cmd->add_option("--config", sa.config, "Generator config JSON")->check(CLI::ExistingFile);

  CalibrateArgs ca;
  auto* cal_cmd = app.add_subcommand("calibrate", "White/dark reference calibration");
  cal_cmd->add_option("--raw", ca.raw, "Raw cube header")->required();
  cal_cmd->add_option("--dark", ca.dark, "Dark reference header")->required();
  cal_cmd->add_option("--white", ca.white, "White reference header")->required();
  cal_cmd->add_option("--out", ca.out, "Output header path")->required();
  cal_cmd->add_option("--interleave", ca.interleave, "bsq or bil")->check(CLI::IsMember({"bsq", "bil"}));

  ExtractArgs ea;
  auto* ext_cmd = app.add_subcommand("extract-roi", "Cut ROI tensors using annotation boxes and masks");
  ext_cmd->add_option("--annotations", ea.annotations, "annotations.json")->required();
  ext_cmd->add_option("--out", ea.out, "Output directory")->required();
  ext_cmd->add_option("--labels", ea.labels, "Synthetic manifest supplying labels");
  ext_cmd->add_option("--lo", ea.lo, "Band range start, nm");
  ext_cmd->add_option("--hi", ea.hi, "Band range end, nm");
  ext_cmd->add_option("--bands", ea.bands, "Bands kept")->check(CLI::PositiveNumber);
  ext_cmd->add_option("--size", ea.size, "Output side length")->check(CLI::PositiveNumber);
  auto* rgb_w = ext_cmd->add_option("--rgb-width", ea.rgb_width, "RGB image width the boxes refer to");
  auto* rgb_h = ext_cmd->add_option("--rgb-height", ea.rgb_height, "RGB image height the boxes refer to");
  rgb_w->needs(rgb_h);
  rgb_h->needs(rgb_w);

  BandsArgs ba;
  auto* bands_cmd = app.add_subcommand("bands", "Spectral band analysis");
  bands_cmd->require_subcommand(1);
  auto* analyze_cmd = bands_cmd->add_subcommand("analyze", "Difference spectrum and recommended range");
  analyze_cmd->add_option("--normal", ba.normal, "Normal patch PATH:X:Y (repeatable)");
  analyze_cmd->add_option("--anomalous", ba.anomalous, "Anomalous patch PATH:X:Y (repeatable)");
  analyze_cmd->add_option("--manifest", ba.manifest, "Synthetic manifest; patches from masks");
  analyze_cmd->add_option("--patch-size", ba.patch_size, "Patch side length")->check(CLI::PositiveNumber);
  analyze_cmd->add_option("--width", ba.width, "Window width, nm")->check(CLI::PositiveNumber);
  analyze_cmd->add_option("--out", ba.out, "CSV output")->required();

  TrainArgs ta;
  auto* train_cmd = app.add_subcommand("train", "Train the VAE on normal ROIs");
  train_cmd->add_option("--rois", ta.rois, "ROI index (rois.json)")->required();
  train_cmd->add_option("--out", ta.out, "Checkpoint directory")->required();
  train_cmd->add_option("--config", ta.config, "Training config JSON");
  train_cmd->add_option("--seed", ta.seed, "Overrides the config seed");
  train_cmd->add_option("--ratio", ta.ratio, "Fraction of normals used for training")->check(CLI::Range(0.0, 1.0));
  train_cmd->add_option("--threads", ta.threads, "Worker threads (0 = SPLITSENSE_THREADS or all cores)");
  train_cmd->add_option("--loss-csv", ta.loss_csv, "Loss history CSV (default <out>/loss.csv)");
  train_cmd->add_option("--split-out", ta.split_out, "Split JSON (default <out>/split.json)");
  train_cmd->add_flag("-v,--verbose", ta.verbose, "Print progress");

  ScoreArgs sc;
  auto* score_cmd = app.add_subcommand("score", "Reconstruction loss per ROI");
  score_cmd->add_option("--checkpoint", sc.checkpoint, "Checkpoint directory")->required();
  score_cmd->add_option("--rois", sc.rois, "ROI index");
  score_cmd->add_option("--roi", sc.roi_paths, "Single ROI cube header (repeatable)");
  score_cmd->add_option("--split", sc.split, "Score only the test ids of this split.json");
  score_cmd->add_option("--threshold", sc.threshold, "Threshold report JSON for status");
  score_cmd->add_option("--theta", sc.theta, "Threshold for status");
  score_cmd->add_option("--eps", sc.eps, "zero or seeded")->check(CLI::IsMember({"zero", "seeded"}));
  score_cmd->add_option("--seed", sc.seed, "Seed for --eps seeded");
  score_cmd->add_option("--out", sc.out, "Scores CSV")->required();

  ThresholdArgs th;
  auto* th_cmd = app.add_subcommand("threshold", "F1-optimal threshold from labeled scores");
  th_cmd->add_option("--scores", th.scores, "Scores CSV")->required();
  th_cmd->add_option("--seed", th.seed, "Seed for the stratified halves");
  th_cmd->add_option("--config", th.config, "JSON with seed and stratified");
  th_cmd->add_option("--out", th.out, "Report JSON (default stdout)");

  ReportArgs ra;
  auto* rep_cmd = app.add_subcommand("report", "Heatmaps and reflectance comparison");
  rep_cmd->add_option("--checkpoint", ra.checkpoint, "Checkpoint directory")->required();
  rep_cmd->add_option("--rois", ra.rois, "ROI index")->required();
  rep_cmd->add_option("--split", ra.split, "Report only the test ids of this split.json");
  rep_cmd->add_option("--percentile", ra.percentile, "Heatmap percentile")->check(CLI::Range(0.0, 100.0));
  rep_cmd->add_option("--eps", ra.eps, "zero or seeded")->check(CLI::IsMember({"zero", "seeded"}));
  rep_cmd->add_option("--seed", ra.seed, "Seed for --eps seeded");
  rep_cmd->add_option("--out", ra.out, "Output directory")->required();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, err, err);
    err << app.help();
    return kExitUsage;
  }

  try {
    if (*synth_cmd) return run_synth(sa, out);
    if (*cal_cmd) return run_calibrate(ca, out);
    if (*ext_cmd) return run_extract(ea, out);
    if (*analyze_cmd) return run_bands(ba, out);
    if (*train_cmd) return run_train(ta, out, err);
    if (*score_cmd) return run_score(sc, out);
    if (*th_cmd) return run_threshold(th, out);
    if (*rep_cmd) return run_report(ra, out);
  } catch (const CLI::ValidationError& e) {
    err << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitData;
  }
  err << app.help();
  return kExitUsage;
}

}  // namespace splitsense::cli
