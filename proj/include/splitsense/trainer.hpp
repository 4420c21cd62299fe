#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "splitsense/format.hpp"
#include "splitsense/labels.hpp"
#include "splitsense/preprocess.hpp"
#include "splitsense/vae_model.hpp"

namespace splitsense::train {

struct TrainConfig {
  int epochs = 2500;
  int batch_size = 32;
  double learning_rate = 1e-3;
  double beta_max = 10.0;
  int latent_dim = 100;
  std::uint64_t seed = 0;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;
  bool reproducible = true;
  // Reduced-scale overrides; empty keeps the 16/32/64/128/256 encoder.
  std::vector<int> channel_widths;
  // How many dihedral variants of each ROI enter training (1 = originals only, max 8).
  int augment = 1;

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

nlohmann::json to_json(const TrainConfig& config);
// Rejects unknown keys and wrongly-typed values.
TrainConfig train_config_from_json(const nlohmann::json& doc);
TrainConfig load_train_config(const std::filesystem::path& path);

nlohmann::json to_json(const vae::VaeConfig& config);
vae::VaeConfig vae_config_from_json(const nlohmann::json& doc);

// Linear KL warm-up over the first half of training, then flat at beta_max.
double beta_schedule(int epoch, int total_epochs, double beta_max);

struct LabeledId {
  std::string id;
  Label label;
};

struct DatasetSplit {
  std::vector<std::string> train;  // normals only
  std::vector<std::string> test;   // held-out normals, then every anomalous item
  double ratio = 0.8;
  std::uint64_t seed = 0;
};

// Normals are shuffled by `seed` and round(ratio * n_normal) of them go to train;
// every anomalous item goes to test.
DatasetSplit split_dataset(std::span<const LabeledId> items, double ratio, std::uint64_t seed);

struct EpochStats {
  int epoch = 0;
  double beta = 0.0;
  double recon = 0.0;  // per-sample means over the epoch
  double kl = 0.0;
  double total = 0.0;

  bool operator==(const EpochStats&) const = default;
};

struct Checkpoint {
  vae::VaeConfig vae;
  vae::VaeParams<float> params;
  TrainConfig train;
  int epochs_completed = 0;
  std::vector<EpochStats> history;
  std::vector<double> wavelengths;
};

using ProgressFn = std::function<void(const EpochStats&)>;

// Worker count: `requested` if positive, else SPLITSENSE_THREADS, else hardware concurrency.
int resolve_threads(int requested = 0);

Checkpoint train(const TrainConfig& config, std::span<const preprocess::RoiTensor> data,
                 const ProgressFn& progress = {}, int threads = 0);

// Checkpoint directory: manifest.json plus tensors/<name>.bin (little-endian float32).
void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& dir);
Checkpoint load_checkpoint(const std::filesystem::path& dir);

// CSV with header "epoch,beta,recon,kl,total".
std::string loss_history_csv(const std::vector<EpochStats>& history);

using splitsense::format_number;

}  // namespace splitsense::train
