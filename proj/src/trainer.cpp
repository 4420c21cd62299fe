#include "splitsense/trainer.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>
#include <thread>

#include <json.hpp>
#include <openssl/evp.h>

#include "splitsense/error.hpp"
#include "splitsense/rng.hpp"

namespace splitsense::train {

using nlohmann::json;
using preprocess::RoiTensor;

namespace {

constexpr const char* kCheckpointFormat = "splitsense-checkpoint";
constexpr int kCheckpointVersion = 1;

// Seed streams fanned out from TrainConfig::seed.
enum Stream : std::uint64_t { kInitStream = 1, kShuffleStream = 2, kEpsStream = 3 };

std::string sha256_hex(const void* data, std::size_t size) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data, size, digest, &len, EVP_sha256(), nullptr) != 1) {
    throw Error(Errc::IoFailure, "SHA-256 computation failed");
  }
  static constexpr char hex[] = "0123456789abcdef";
  std::string out;
  out.reserve(len * 2);
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[digest[i] >> 4];
    out += hex[digest[i] & 0xF];
  }
  return out;
}

}  // namespace

// ---------------------------------------------------------------- config ----

void TrainConfig::validate() const {
  if (epochs < 2) throw Error(Errc::InvalidArgument, "epochs must be >= 2");
  if (batch_size < 1) throw Error(Errc::InvalidArgument, "batch_size must be >= 1");
  if (!(beta_max > 0.0)) throw Error(Errc::InvalidArgument, "beta_max must be positive");
  if (!(learning_rate > 0.0)) throw Error(Errc::InvalidArgument, "learning_rate must be positive");
  if (latent_dim < 1) throw Error(Errc::InvalidArgument, "latent_dim must be >= 1");
  if (augment < 1 || augment > 8) throw Error(Errc::InvalidArgument, "augment must be in [1, 8]");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0 && adam_beta2 >= 0.0 && adam_beta2 < 1.0 && adam_epsilon > 0.0)) {
    throw Error(Errc::InvalidArgument, "invalid Adam moments");
  }
}

json to_json(const TrainConfig& c) {
  return json{{"epochs", c.epochs},
              {"batch_size", c.batch_size},
              {"learning_rate", c.learning_rate},
              {"beta_max", c.beta_max},
              {"latent_dim", c.latent_dim},
              {"seed", c.seed},
              {"adam_beta1", c.adam_beta1},
              {"adam_beta2", c.adam_beta2},
              {"adam_epsilon", c.adam_epsilon},
              {"reproducible", c.reproducible},
              {"channel_widths", c.channel_widths},
              {"augment", c.augment}};
}

TrainConfig train_config_from_json(const json& doc) {
  if (!doc.is_object()) throw Error(Errc::InvalidArgument, "training config must be a JSON object");
  static const std::set<std::string> known{"epochs",     "batch_size", "learning_rate", "beta_max",
                                           "latent_dim", "seed",       "adam_beta1",    "adam_beta2",
                                           "adam_epsilon", "reproducible", "channel_widths", "augment"};
  for (const auto& [key, value] : doc.items()) {
    if (!known.contains(key)) throw Error(Errc::InvalidArgument, "unknown training config key '" + key + "'");
  }
  TrainConfig c;
  try {
    if (doc.contains("epochs")) c.epochs = doc["epochs"].get<int>();
    if (doc.contains("batch_size")) c.batch_size = doc["batch_size"].get<int>();
    if (doc.contains("learning_rate")) c.learning_rate = doc["learning_rate"].get<double>();
    if (doc.contains("beta_max")) c.beta_max = doc["beta_max"].get<double>();
    if (doc.contains("latent_dim")) c.latent_dim = doc["latent_dim"].get<int>();
    if (doc.contains("seed")) c.seed = doc["seed"].get<std::uint64_t>();
    if (doc.contains("adam_beta1")) c.adam_beta1 = doc["adam_beta1"].get<double>();
    if (doc.contains("adam_beta2")) c.adam_beta2 = doc["adam_beta2"].get<double>();
    if (doc.contains("adam_epsilon")) c.adam_epsilon = doc["adam_epsilon"].get<double>();
    if (doc.contains("reproducible")) c.reproducible = doc["reproducible"].get<bool>();
    if (doc.contains("channel_widths")) c.channel_widths = doc["channel_widths"].get<std::vector<int>>();
    if (doc.contains("augment")) c.augment = doc["augment"].get<int>();
  } catch (const json::exception& e) {
    throw Error(Errc::InvalidArgument, std::string("training config: ") + e.what());
  }
  c.validate();
  return c;
}

TrainConfig load_train_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::IoFailure, "cannot open " + path.string());
  json doc;
  try {
    in >> doc;
  } catch (const json::exception& e) {
    throw Error(Errc::InvalidArgument, path.string() + ": " + e.what());
  }
  return train_config_from_json(doc);
}

json to_json(const vae::VaeConfig& c) {
  return json{{"in_channels", c.in_channels}, {"spatial", c.spatial},   {"channel_widths", c.channel_widths},
              {"latent_dim", c.latent_dim},   {"kernel", c.kernel},     {"stride", c.stride},
              {"padding", c.padding},         {"beta", c.beta},
              {"decoder_output_padding", c.decoder_output_padding()}};
}

vae::VaeConfig vae_config_from_json(const json& doc) {
  vae::VaeConfig c;
  c.in_channels = doc.at("in_channels").get<int>();
  c.spatial = doc.at("spatial").get<int>();
  c.channel_widths = doc.at("channel_widths").get<std::vector<int>>();
  c.latent_dim = doc.at("latent_dim").get<int>();
  c.kernel = doc.at("kernel").get<int>();
  c.stride = doc.at("stride").get<int>();
  c.padding = doc.at("padding").get<int>();
  c.beta = doc.at("beta").get<double>();
  c.validate();
  return c;
}

// -------------------------------------------------------------- schedule ----

double beta_schedule(int epoch, int total_epochs, double beta_max) {
  if (total_epochs < 1 || epoch < 0 || epoch > total_epochs) {
    throw Error(Errc::InvalidArgument, "epoch outside [0, T]");
  }
  // t <= T/2 compared as 2t <= T to stay exact for odd T.
  if (2 * static_cast<long long>(epoch) <= total_epochs) {
    return 2.0 * epoch / total_epochs * beta_max;
  }
  return beta_max;
}

DatasetSplit split_dataset(std::span<const LabeledId> items, double ratio, std::uint64_t seed) {
  if (items.empty()) throw Error(Errc::InvalidArgument, "cannot split an empty dataset");
  if (!(ratio >= 0.0 && ratio <= 1.0)) throw Error(Errc::InvalidArgument, "ratio must lie in [0, 1]");
  std::vector<std::string> normals;
  std::vector<std::string> anomalies;
  for (const auto& item : items) (item.label == Label::normal ? normals : anomalies).push_back(item.id);
  if (normals.empty()) throw Error(Errc::NoNormals, "dataset has no normal items to train on");

  SplitMix64 rng(seed);
  rng.shuffle(std::span<std::string>(normals));
  const auto n_train = static_cast<std::size_t>(std::lround(ratio * static_cast<double>(normals.size())));
  DatasetSplit split;
  split.ratio = ratio;
  split.seed = seed;
  split.train.assign(normals.begin(), normals.begin() + static_cast<std::ptrdiff_t>(n_train));
  split.test.assign(normals.begin() + static_cast<std::ptrdiff_t>(n_train), normals.end());
  split.test.insert(split.test.end(), anomalies.begin(), anomalies.end());
  return split;
}

// -------------------------------------------------------------- training ----

int resolve_threads(int requested) {
  if (requested > 0) return requested;
  if (const char* env = std::getenv("SPLITSENSE_THREADS")) {
    const int v = std::atoi(env);
    if (v > 0) return v;
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

namespace {

class Adam {
 public:
  Adam(const vae::VaeParams<float>& shape, const TrainConfig& c)
      : lr_(c.learning_rate), b1_(c.adam_beta1), b2_(c.adam_beta2), eps_(c.adam_epsilon) {
    for (const auto& t : shape.tensors) {
      m_.emplace_back(t.numel(), 0.0f);
      v_.emplace_back(t.numel(), 0.0f);
    }
  }

  void step(vae::VaeParams<float>& params, const vae::VaeParams<float>& grad) {
    ++t_;
    const double c1 = 1.0 - std::pow(b1_, t_);
    const double c2 = 1.0 - std::pow(b2_, t_);
    const auto b1 = static_cast<float>(b1_), b2 = static_cast<float>(b2_);
    const auto step_size = static_cast<float>(lr_ / c1);
    const auto inv_c2 = static_cast<float>(1.0 / c2);
    const auto eps = static_cast<float>(eps_);
    for (std::size_t i = 0; i < params.tensors.size(); ++i) {
      auto& p = params.tensors[i].data;
      const auto& g = grad.tensors[i].data;
      auto& m = m_[i];
      auto& v = v_[i];
      for (std::size_t j = 0; j < p.size(); ++j) {
        m[j] = b1 * m[j] + (1.0f - b1) * g[j];
        v[j] = b2 * v[j] + (1.0f - b2) * g[j] * g[j];
        p[j] -= step_size * m[j] / (std::sqrt(v[j] * inv_c2) + eps);
      }
    }
  }

 private:
  double lr_, b1_, b2_, eps_;
  int t_ = 0;
  std::vector<std::vector<float>> m_, v_;
};

struct Worker {
  vae::Activations<float> acts;
  vae::VaeParams<float> grad;
  vae::SampleResult<float> result;
};

}  // namespace

Checkpoint train(const TrainConfig& config, std::span<const RoiTensor> data, const ProgressFn& progress,
                 int threads) {
  config.validate();
  if (data.empty()) throw Error(Errc::InvalidArgument, "training set is empty");
  const int channels = data.front().channels();
  const int size = data.front().size();
  for (const auto& roi : data) {
    if (roi.channels() != channels || roi.size() != size || roi.wavelengths() != data.front().wavelengths()) {
      throw Error(Errc::ShapeMismatch, "training ROIs differ in shape or wavelengths");
    }
  }

  vae::VaeConfig vcfg;
  vcfg.in_channels = channels;
  vcfg.spatial = size;
  vcfg.latent_dim = config.latent_dim;
  if (!config.channel_widths.empty()) vcfg.channel_widths = config.channel_widths;
  vcfg.validate();

  // Training pool: each ROI followed by its first `augment - 1` dihedral variants.
  std::vector<std::vector<float>> pool;
  pool.reserve(data.size() * static_cast<std::size_t>(config.augment));
  for (const auto& roi : data) {
    if (config.augment == 1) {
      pool.emplace_back(roi.values().begin(), roi.values().end());
      continue;
    }
    const auto variants = preprocess::augment(roi);
    for (int k = 0; k < config.augment; ++k) {
      const auto& v = variants[static_cast<std::size_t>(k)].values();
      pool.emplace_back(v.begin(), v.end());
    }
  }

  Checkpoint ckpt;
  ckpt.vae = vcfg;
  ckpt.train = config;
  ckpt.wavelengths = data.front().wavelengths();
  ckpt.params = vae::init_params(vcfg, derive_seed(config.seed, kInitStream));

  const vae::VaeModel<float> model(vcfg);
  Adam adam(ckpt.params, config);
  SplitMix64 shuffle_rng(derive_seed(config.seed, kShuffleStream));
  SplitMix64 eps_rng(derive_seed(config.seed, kEpsStream));

  const auto S = static_cast<std::size_t>(vcfg.latent_dim);
  const int n_workers = std::max(1, std::min(resolve_threads(threads), config.batch_size));
  std::vector<Worker> workers(static_cast<std::size_t>(n_workers));
  for (auto& w : workers) w.grad = vae::VaeParams<float>::zeros(vcfg);
  auto batch_grad = vae::VaeParams<float>::zeros(vcfg);

  std::vector<std::size_t> order(pool.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const double beta = beta_schedule(epoch, config.epochs, config.beta_max);
    ckpt.vae.beta = beta;
    shuffle_rng.shuffle(std::span<std::size_t>(order));
    double recon_sum = 0.0, kl_sum = 0.0, total_sum = 0.0;

    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
      // eps drawn up front, in sample order, so results do not depend on the worker count.
      std::vector<float> eps((stop - start) * S);
      for (float& e : eps) e = static_cast<float>(eps_rng.normal());

      batch_grad.set_zero();
      for (std::size_t wave = start; wave < stop; wave += static_cast<std::size_t>(n_workers)) {
        const std::size_t wave_end = std::min(stop, wave + static_cast<std::size_t>(n_workers));
        auto run = [&](std::size_t slot) {
          const std::size_t idx = wave + slot;
          const auto& x = pool[order[idx]];
          const std::span<const float> e(eps.data() + (idx - start) * S, S);
          Worker& w = workers[slot];
          w.result = model.forward(ckpt.params, x, e, beta, w.acts);
          model.backward(ckpt.params, x, e, beta, w.acts, w.grad);
        };
        const std::size_t n = wave_end - wave;
        if (n == 1) {
          run(0);
        } else {
          std::vector<std::jthread> pool_threads;
          for (std::size_t slot = 1; slot < n; ++slot) pool_threads.emplace_back(run, slot);
          run(0);
        }
        for (std::size_t slot = 0; slot < n; ++slot) {
          const Worker& w = workers[slot];
          batch_grad.add(w.grad);
          recon_sum += w.result.recon;
          kl_sum += w.result.kl;
          total_sum += w.result.total;
        }
      }
      if (!std::isfinite(total_sum) || !batch_grad.all_finite()) {
        throw Error(Errc::NonFiniteLoss, "non-finite loss or gradient at epoch " + std::to_string(epoch));
      }
      adam.step(ckpt.params, batch_grad);
    }

    const double n = static_cast<double>(order.size());
    EpochStats stats{epoch, beta, recon_sum / n, kl_sum / n, total_sum / n};
    if (!std::isfinite(stats.total)) {
      throw Error(Errc::NonFiniteLoss, "non-finite loss at epoch " + std::to_string(epoch));
    }
    ckpt.history.push_back(stats);
    ckpt.epochs_completed = epoch + 1;
    if (progress) progress(stats);
  }
  return ckpt;
}

// ------------------------------------------------------------ checkpoint ----

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "tensors");
  json tensors = json::array();
  for (const auto& t : ckpt.params.tensors) {
    const std::string rel = "tensors/" + t.name + ".bin";
    const std::size_t bytes = t.data.size() * sizeof(float);
    std::ofstream out(dir / rel, std::ios::binary);
    if (!out) throw Error(Errc::IoFailure, "cannot write " + (dir / rel).string());
    out.write(reinterpret_cast<const char*>(t.data.data()), static_cast<std::streamsize>(bytes));
    if (!out) throw Error(Errc::IoFailure, "short write on " + (dir / rel).string());
    tensors.push_back(json{{"name", t.name},
                           {"shape", t.shape},
                           {"dtype", "float32-le"},
                           {"byte_length", bytes},
                           {"sha256", sha256_hex(t.data.data(), bytes)},
                           {"file", rel}});
  }
  json history = json::array();
  for (const auto& h : ckpt.history) {
    history.push_back(json{{"epoch", h.epoch}, {"beta", h.beta}, {"recon", h.recon}, {"kl", h.kl}, {"total", h.total}});
  }
  json manifest{{"format", kCheckpointFormat},
                {"version", kCheckpointVersion},
                {"vae_config", to_json(ckpt.vae)},
                {"train_config", to_json(ckpt.train)},
                {"epochs_completed", ckpt.epochs_completed},
                {"wavelengths", ckpt.wavelengths},
                {"history", history},
                {"tensors", tensors}};
  std::ofstream out(dir / "manifest.json");
  if (!out) throw Error(Errc::IoFailure, "cannot write " + (dir / "manifest.json").string());
  out << manifest.dump(2) << "\n";
}

Checkpoint load_checkpoint(const std::filesystem::path& dir) {
  const auto manifest_path = dir / "manifest.json";
  std::ifstream in(manifest_path);
  if (!in) throw Error(Errc::IoFailure, "cannot open " + manifest_path.string());
  json manifest;
  try {
    in >> manifest;
  } catch (const json::exception& e) {
    throw Error(Errc::CorruptCheckpoint, manifest_path.string() + ": " + e.what());
  }

  Checkpoint ckpt;
  try {
    if (manifest.at("format").get<std::string>() != kCheckpointFormat ||
        manifest.at("version").get<int>() != kCheckpointVersion) {
      throw Error(Errc::CorruptCheckpoint, "unrecognised checkpoint format in " + manifest_path.string());
    }
    ckpt.vae = vae_config_from_json(manifest.at("vae_config"));
    ckpt.train = train_config_from_json(manifest.at("train_config"));
    ckpt.epochs_completed = manifest.at("epochs_completed").get<int>();
    ckpt.wavelengths = manifest.at("wavelengths").get<std::vector<double>>();
    for (const auto& h : manifest.at("history")) {
      ckpt.history.push_back({h.at("epoch").get<int>(), h.at("beta").get<double>(), h.at("recon").get<double>(),
                              h.at("kl").get<double>(), h.at("total").get<double>()});
    }
    ckpt.params = vae::VaeParams<float>::zeros(ckpt.vae);
    const auto& entries = manifest.at("tensors");
    if (entries.size() != ckpt.params.tensors.size()) {
      throw Error(Errc::CorruptCheckpoint, "tensor count does not match the architecture");
    }
    for (std::size_t i = 0; i < entries.size(); ++i) {
      auto& t = ckpt.params.tensors[i];
      const auto& e = entries[i];
      if (e.at("name").get<std::string>() != t.name || e.at("shape").get<std::vector<int>>() != t.shape ||
          e.at("dtype").get<std::string>() != "float32-le") {
        throw Error(Errc::CorruptCheckpoint, "tensor " + t.name + " does not match the architecture");
      }
      const std::size_t bytes = t.data.size() * sizeof(float);
      if (e.at("byte_length").get<std::size_t>() != bytes) {
        throw Error(Errc::CorruptCheckpoint, "tensor " + t.name + " has the wrong byte length");
      }
      const auto path = dir / e.at("file").get<std::string>();
      std::ifstream tin(path, std::ios::binary | std::ios::ate);
      if (!tin) throw Error(Errc::CorruptCheckpoint, "missing tensor file " + path.string());
      if (static_cast<std::size_t>(tin.tellg()) != bytes) {
        throw Error(Errc::CorruptCheckpoint, "tensor file " + path.string() + " is truncated or oversized");
      }
      tin.seekg(0);
      tin.read(reinterpret_cast<char*>(t.data.data()), static_cast<std::streamsize>(bytes));
      if (!tin) throw Error(Errc::CorruptCheckpoint, "short read on " + path.string());
      if (sha256_hex(t.data.data(), bytes) != e.at("sha256").get<std::string>()) {
        throw Error(Errc::CorruptCheckpoint, "hash mismatch for tensor " + t.name);
      }
    }
  } catch (const json::exception& e) {
    throw Error(Errc::CorruptCheckpoint, manifest_path.string() + ": " + e.what());
  } catch (const Error& e) {
    if (e.code() == Errc::CorruptCheckpoint) throw;
    throw Error(Errc::CorruptCheckpoint, manifest_path.string() + ": " + e.what());
  }
  return ckpt;
}

std::string loss_history_csv(const std::vector<EpochStats>& history) {
  std::ostringstream out;
  out << "epoch,beta,recon,kl,total\n";
  for (const auto& h : history) {
    out << h.epoch << "," << format_number(h.beta) << "," << format_number(h.recon) << "," << format_number(h.kl)
        << "," << format_number(h.total) << "\n";
  }
  return out.str();
}

}  // namespace splitsense::train
