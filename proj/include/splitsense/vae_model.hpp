#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace splitsense::vae {

// Architecture hyperparameters. The defaults reproduce the 16x210x210 network:
// encoder 210->105->53->27->14->7 with widths 16,32,64,128,256, a 12544-wide
// bottleneck, S = 100 latent units and a mirrored transposed-conv decoder.
struct VaeConfig {
  int in_channels = 16;
  int spatial = 210;
  std::vector<int> channel_widths{16, 32, 64, 128, 256};
  int latent_dim = 100;
  int kernel = 3;
  int stride = 2;
  int padding = 1;
  double beta = 0.0;

  void validate() const;
  int depth() const noexcept { return static_cast<int>(channel_widths.size()); }
  // Spatial size entering each encoder layer plus the bottleneck size (depth + 1 entries).
  std::vector<int> encoder_sizes() const;
  // Output padding of each decoder layer, innermost first. Derived so that the
  // decoder exactly mirrors encoder_sizes().
  std::vector<int> decoder_output_padding() const;
  int bottleneck_channels() const noexcept { return channel_widths.back(); }
  int bottleneck_size() const { return encoder_sizes().back(); }
  std::size_t flat_dim() const;
  std::size_t input_numel() const noexcept {
    return static_cast<std::size_t>(in_channels) * static_cast<std::size_t>(spatial) *
           static_cast<std::size_t>(spatial);
  }

  bool operator==(const VaeConfig&) const = default;
};

template <typename T>
struct Tensor {
  std::string name;
  std::vector<int> shape;
  std::vector<T> data;

  std::size_t numel() const noexcept { return data.size(); }
};

// Parameters in a fixed order: for each encoder layer i "enc{i}.weight"
// [Cout, Cin, k, k] and "enc{i}.bias"; then fc_mu, fc_logvar (weight [S, F]),
// fc_decode (weight [F, S]); then for each decoder layer j "dec{j}.weight"
// [Cin, Cout, k, k] and "dec{j}.bias".
template <typename T>
struct VaeParams {
  std::vector<Tensor<T>> tensors;

  static VaeParams zeros(const VaeConfig& config);

  std::size_t enc_weight(int i) const noexcept { return static_cast<std::size_t>(2 * i); }
  std::size_t enc_bias(int i) const noexcept { return static_cast<std::size_t>(2 * i + 1); }
  std::size_t fc_base(int depth) const noexcept { return static_cast<std::size_t>(2 * depth); }
  std::size_t dec_weight(int depth, int j) const noexcept { return static_cast<std::size_t>(2 * depth + 6 + 2 * j); }
  std::size_t dec_bias(int depth, int j) const noexcept { return dec_weight(depth, j) + 1; }

  std::size_t total_numel() const noexcept;
  void set_zero();
  // this += other, tensor by tensor, element order fixed.
  void add(const VaeParams& other);
  bool all_finite() const;

  template <typename U>
  VaeParams<U> cast() const {
    VaeParams<U> out;
    out.tensors.reserve(tensors.size());
    for (const auto& t : tensors) {
      out.tensors.push_back({t.name, t.shape, std::vector<U>(t.data.begin(), t.data.end())});
    }
    return out;
  }
};

// Fan-in used for the uniform initialisation bound sqrt(1/fan_in). Transposed
// convolutions use Cout * k * k, matching the [Cin, Cout, k, k] weight layout.
std::size_t fan_in(const VaeConfig& config, const std::string& tensor_name);

// Kernels ~ U(-sqrt(1/fan_in), +sqrt(1/fan_in)), biases zero; deterministic in seed.
VaeParams<float> init_params(const VaeConfig& config, std::uint64_t seed);

// Row-major batch of equally-shaped samples.
template <typename T>
struct Batch {
  int count = 0;
  std::vector<int> sample_shape;
  std::vector<T> data;

  std::size_t sample_numel() const noexcept;
  std::span<const T> sample(int i) const noexcept {
    return std::span<const T>(data).subspan(static_cast<std::size_t>(i) * sample_numel(), sample_numel());
  }
  std::span<T> sample(int i) noexcept {
    return std::span<T>(data).subspan(static_cast<std::size_t>(i) * sample_numel(), sample_numel());
  }
};

struct LayerShape {
  std::string layer;
  std::vector<int> shape;  // including the batch dimension
};
using ShapeTrace = std::vector<LayerShape>;

template <typename T>
struct Encoded {
  Batch<T> mu;
  Batch<T> logvar;
};

struct LossBreakdown {
  double recon = 0.0;  // summed L1 over every element of every sample
  double kl = 0.0;     // summed over latent units and samples
  double beta = 0.0;
  double total = 0.0;  // recon + beta * kl
  std::vector<double> recon_per_sample;
  std::vector<double> kl_per_sample;
};

// Cached activations of one sample's forward pass, reused by backward().
template <typename T>
struct Activations {
  std::vector<std::vector<T>> enc;  // enc[0] is the input, enc[i + 1] the ReLU output of conv i
  std::vector<T> mu, logvar, z;
  std::vector<T> bottleneck;         // fc_decode output
  std::vector<std::vector<T>> dec;   // dec[j] is the activated output of transposed conv j
};

template <typename T>
struct SampleResult {
  double recon = 0.0;
  double kl = 0.0;
  double total = 0.0;
};

template <typename T>
class VaeModel {
 public:
  explicit VaeModel(VaeConfig config);

  const VaeConfig& config() const noexcept { return config_; }

  Encoded<T> encode(const VaeParams<T>& params, const Batch<T>& x, ShapeTrace* trace = nullptr) const;
  Batch<T> decode(const VaeParams<T>& params, const Batch<T>& z, ShapeTrace* trace = nullptr) const;

  // Single-sample building blocks.
  void encode_sample(const VaeParams<T>& params, std::span<const T> x, Activations<T>& acts,
                     ShapeTrace* trace = nullptr) const;
  void decode_sample(const VaeParams<T>& params, std::span<const T> z, Activations<T>& acts,
                     ShapeTrace* trace = nullptr) const;

  // Forward pass with injected eps, returning recon + beta * kl for one sample.
  SampleResult<T> forward(const VaeParams<T>& params, std::span<const T> x, std::span<const T> eps, double beta,
                          Activations<T>& acts) const;
  // Gradient of forward()'s total with respect to every parameter, written into
  // `grad` (overwritten, not accumulated). `acts` must come from forward().
  void backward(const VaeParams<T>& params, std::span<const T> x, std::span<const T> eps, double beta,
                const Activations<T>& acts, VaeParams<T>& grad) const;

 private:
  VaeConfig config_;
  std::vector<int> sizes_;
  std::vector<int> output_padding_;
};

extern template class VaeModel<float>;
extern template class VaeModel<double>;

// z = mu + exp(0.5 * logvar) * eps, elementwise.
template <typename T>
Batch<T> reparameterize(const Batch<T>& mu, const Batch<T>& logvar, const Batch<T>& eps);

template <typename T>
double recon_l1(std::span<const T> x, std::span<const T> xhat);

template <typename T>
double kl_divergence(std::span<const T> mu, std::span<const T> logvar);

template <typename T>
LossBreakdown loss(const Batch<T>& x, const Batch<T>& xhat, const Batch<T>& mu, const Batch<T>& logvar,
                   double beta);

}  // namespace splitsense::vae
