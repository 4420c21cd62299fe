#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "splitsense/labels.hpp"
#include "splitsense/preprocess.hpp"
#include "splitsense/trainer.hpp"
#include "splitsense/vae_model.hpp"

namespace splitsense::detect {

enum class Status { Normal, Anomalous };
std::string_view to_string(Status status) noexcept;

// zero: z = mu (deterministic). seeded: z = mu + sigma * eps with eps from the seed.
enum class EpsMode { zero, seeded };

struct ScoreRecord {
  std::string id;
  double recon_loss = 0.0;
  std::optional<double> regularity;
  std::optional<Label> label;
  std::optional<Status> status;
};

// Loaded model for repeated scoring; safe to share read-only across threads.
class Scorer {
 public:
  explicit Scorer(train::Checkpoint checkpoint);

  const train::Checkpoint& checkpoint() const noexcept { return ckpt_; }
  std::vector<float> reconstruct(const preprocess::RoiTensor& roi, EpsMode mode = EpsMode::zero,
                                 std::uint64_t seed = 0) const;
  ScoreRecord score(const preprocess::RoiTensor& roi, std::string id = {}, EpsMode mode = EpsMode::zero,
                    std::uint64_t seed = 0) const;

 private:
  void check_shape(const preprocess::RoiTensor& roi) const;

  train::Checkpoint ckpt_;
  vae::VaeModel<float> model_;
};

ScoreRecord score(const train::Checkpoint& checkpoint, const preprocess::RoiTensor& roi, EpsMode mode = EpsMode::zero,
                  std::uint64_t seed = 0);

// Min-max normalised loss over the batch; all zero when max == min.
std::vector<ScoreRecord> regularity(std::vector<ScoreRecord> records);

// Anomalous iff loss > theta.
Status classify(double recon_loss, double theta) noexcept;
inline Status classify(const ScoreRecord& record, double theta) noexcept { return classify(record.recon_loss, theta); }

struct CurvePoint {
  double theta = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

struct Metrics {
  int tp = 0, fp = 0, tn = 0, fn = 0;
  double accuracy = 0.0;
  // Empty when the records hold a single class.
  std::optional<double> precision;
  std::optional<double> recall;
  std::optional<double> f1;
};

// Anomalous is the positive class. Zero denominators give 0.
Metrics evaluate(std::span<const ScoreRecord> records, double theta);

struct ThresholdReport {
  double theta = 0.0;
  double f1_at_theta = 0.0;
  std::vector<CurvePoint> curve;
  std::vector<std::string> calibration_ids;
  std::vector<std::string> validation_ids;
  std::optional<Metrics> validation;
};

// Sweeps every observed loss and every midpoint between adjacent distinct losses;
// returns the F1-maximising threshold, ties to the smallest.
ThresholdReport select_threshold(std::span<const ScoreRecord> records);

struct Halves {
  std::vector<ScoreRecord> calibration;
  std::vector<ScoreRecord> validation;
};

// Per-label seeded shuffle, calibration receives ceil(n/2) of each label.
Halves stratified_halves(std::span<const ScoreRecord> records, std::uint64_t seed);

// Split into halves, select theta on the calibration half and evaluate it on the other.
ThresholdReport calibrate_threshold(std::span<const ScoreRecord> records, std::uint64_t seed);

struct Heatmap {
  int size = 0;
  std::vector<double> error;            // size*size, mean over bands of |x - xhat|
  std::vector<std::uint8_t> highlight;  // size*size, 0/1
  double percentile = 95.0;
  double threshold = 0.0;               // error value at the percentile
};

// `percentile` of in-mask errors with linear interpolation; highlight keeps in-mask
// pixels strictly above it. Percentile 0 selects the whole mask.
Heatmap heatmap(const preprocess::RoiTensor& x, std::span<const float> xhat, const preprocess::ForegroundMask& fruit,
                double percentile = 95.0);

// Error map scaled linearly to 0..255 by its maximum, plus the highlight as 0/255.
preprocess::GrayImage heatmap_error_image(const Heatmap& map);
preprocess::GrayImage heatmap_highlight_image(const Heatmap& map);

// Foreground = pixels non-zero in any band of the original tensor.
preprocess::ForegroundMask foreground_of(const preprocess::RoiTensor& roi);

struct LabelSpectra {
  Label label = Label::normal;
  std::size_t samples = 0;
  std::vector<double> truth;
  std::vector<double> reconstruction;
};

struct ReflectanceReport {
  std::vector<double> wavelengths;
  std::vector<LabelSpectra> per_label;  // one entry per label present, normal first
};

ReflectanceReport mean_reflectance_report(std::span<const preprocess::RoiTensor> originals,
                                          std::span<const std::vector<float>> reconstructions,
                                          std::span<const Label> labels);

// Artifacts.
std::string scores_csv(std::span<const ScoreRecord> records);
std::vector<ScoreRecord> parse_scores_csv(std::string_view text);
std::string threshold_report_json(const ThresholdReport& report);
std::string reflectance_csv(const ReflectanceReport& report);

}  // namespace splitsense::detect
