#pragma once

// Synthetic end-to-end run shared by the acceptance binary: generate, extract
// ROIs, split, train, score the held-out set and pick a threshold.

#include <algorithm>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "splitsense/detector.hpp"
#include "splitsense/rng.hpp"
#include "splitsense/synth.hpp"
#include "splitsense/trainer.hpp"

namespace splitsense::testing {

struct PipelineOptions {
  std::uint64_t seed = 2024;
  int n_normal = 120;
  int n_anomalous = 40;
  int n_train = 100;
  train::TrainConfig train;
  int threads = 0;

  PipelineOptions() {
    train.epochs = 300;
    train.batch_size = 16;
    train.beta_max = 10.0;
  }
};

struct PipelineResult {
  std::vector<detect::ScoreRecord> test_scores;
  detect::ThresholdReport report;
  std::string scores_csv;
  std::string report_json;
  std::vector<train::EpochStats> history;
};

inline PipelineResult run_pipeline(const PipelineOptions& opt, const train::ProgressFn& progress = {}) {
  synth::SynthConfig config;
  config.seed = opt.seed;
  const auto plan = synth::plan_dataset(config, opt.n_normal, opt.n_anomalous);

  std::vector<train::LabeledId> items;
  std::map<std::string, preprocess::RoiTensor> rois;
  for (const auto& e : plan.entries) {
    const auto s = synth::gen_sample(config, e.label, e.seed);
    rois.emplace(e.id, preprocess::extract_roi(s.cube, s.bbox, {s.cube.height(), s.cube.width()}, s.mask));
    items.push_back({e.id, e.label});
  }

  const double ratio = static_cast<double>(opt.n_train) / opt.n_normal;
  const auto split = train::split_dataset(items, ratio, derive_seed(opt.seed, 1));
  std::vector<preprocess::RoiTensor> train_set;
  for (const auto& id : split.train) train_set.push_back(rois.at(id));

  train::TrainConfig tc = opt.train;
  tc.seed = derive_seed(opt.seed, 2);
  const auto ckpt = train::train(tc, train_set, progress, opt.threads);

  std::map<std::string, Label> labels;
  for (const auto& it : items) labels[it.id] = it.label;
  const detect::Scorer scorer(ckpt);
  PipelineResult result;
  for (const auto& id : split.test) {
    auto rec = scorer.score(rois.at(id), id);
    rec.label = labels.at(id);
    result.test_scores.push_back(std::move(rec));
  }
  result.report = detect::calibrate_threshold(result.test_scores, derive_seed(opt.seed, 3));
  for (auto& r : result.test_scores) r.status = detect::classify(r, result.report.theta);
  result.test_scores = detect::regularity(std::move(result.test_scores));
  result.scores_csv = detect::scores_csv(result.test_scores);
  result.report_json = detect::threshold_report_json(result.report);
  result.history = ckpt.history;
  return result;
}

// Linear-interpolated percentile (0..100) of unsorted values.
inline double percentile(std::vector<double> v, double p) {
  std::sort(v.begin(), v.end());
  const double pos = p / 100.0 * static_cast<double>(v.size() - 1);
  const auto i0 = static_cast<std::size_t>(pos);
  const std::size_t i1 = std::min(i0 + 1, v.size() - 1);
  return v[i0] + (pos - static_cast<double>(i0)) * (v[i1] - v[i0]);
}

}  // namespace splitsense::testing
