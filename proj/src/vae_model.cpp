#include "splitsense/vae_model.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Core>

#include "splitsense/error.hpp"
#include "splitsense/rng.hpp"

namespace splitsense::vae {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;
template <typename T>
using VecMap = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>>;
template <typename T>
using ConstVecMap = Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>;

int conv_out(int in, int k, int s, int p) { return (in + 2 * p - k) / s + 1; }

// Geometry shared by a strided convolution and its transpose: the "big" image
// is the convolution input / transposed-convolution output.
struct Geometry {
  int channels;
  int big;
  int small;
  int k, s, p;

  std::size_t rows() const noexcept { return static_cast<std::size_t>(channels * k * k); }
  std::size_t cols() const noexcept { return static_cast<std::size_t>(small) * static_cast<std::size_t>(small); }
};

template <typename T>
void im2col(const T* big, const Geometry& g, T* col) {
  const std::size_t n_cols = g.cols();
  for (int c = 0; c < g.channels; ++c) {
    const T* plane = big + static_cast<std::size_t>(c) * static_cast<std::size_t>(g.big) * static_cast<std::size_t>(g.big);
    for (int ky = 0; ky < g.k; ++ky) {
      for (int kx = 0; kx < g.k; ++kx) {
        T* row = col + static_cast<std::size_t>((c * g.k + ky) * g.k + kx) * n_cols;
        for (int oy = 0; oy < g.small; ++oy) {
          const int iy = oy * g.s - g.p + ky;
          T* out = row + static_cast<std::size_t>(oy) * static_cast<std::size_t>(g.small);
          if (iy < 0 || iy >= g.big) {
            std::fill(out, out + g.small, T(0));
            continue;
          }
          const T* src = plane + static_cast<std::size_t>(iy) * static_cast<std::size_t>(g.big);
          for (int ox = 0; ox < g.small; ++ox) {
            const int ix = ox * g.s - g.p + kx;
            out[ox] = (ix >= 0 && ix < g.big) ? src[ix] : T(0);
          }
        }
      }
    }
  }
}

// big += scatter(col); `big` must be pre-zeroed by the caller.
template <typename T>
void col2im(const T* col, const Geometry& g, T* big) {
  const std::size_t n_cols = g.cols();
  for (int c = 0; c < g.channels; ++c) {
    T* plane = big + static_cast<std::size_t>(c) * static_cast<std::size_t>(g.big) * static_cast<std::size_t>(g.big);
    for (int ky = 0; ky < g.k; ++ky) {
      for (int kx = 0; kx < g.k; ++kx) {
        const T* row = col + static_cast<std::size_t>((c * g.k + ky) * g.k + kx) * n_cols;
        for (int oy = 0; oy < g.small; ++oy) {
          const int iy = oy * g.s - g.p + ky;
          if (iy < 0 || iy >= g.big) continue;
          const T* in = row + static_cast<std::size_t>(oy) * static_cast<std::size_t>(g.small);
          T* dst = plane + static_cast<std::size_t>(iy) * static_cast<std::size_t>(g.big);
          for (int ox = 0; ox < g.small; ++ox) {
            const int ix = ox * g.s - g.p + kx;
            if (ix >= 0 && ix < g.big) dst[ix] += in[ox];
          }
        }
      }
    }
  }
}

template <typename T>
std::vector<T>& scratch(int slot) {
  thread_local std::vector<T> buffers[3];
  return buffers[slot];
}

// Vectorised Eigen kernels on a Map peel scalar head elements depending on the
// address, and packet exp differs from std::exp in the last bit. Transcendentals
// therefore run on an Eigen-allocated (aligned) buffer, reductions in a fixed order.
template <typename T>
void sigmoid_inplace(T* data, std::size_t n, T bias) {
  thread_local Eigen::Array<T, Eigen::Dynamic, 1> buf;
  buf.resize(static_cast<Eigen::Index>(n));
  buf = Eigen::Map<const Eigen::Array<T, Eigen::Dynamic, 1>>(data, static_cast<Eigen::Index>(n)) + bias;
  buf = T(1) / (T(1) + (-buf).exp());
  std::copy(buf.data(), buf.data() + n, data);
}

template <typename T>
T ordered_sum(const T* data, std::size_t n) {
  constexpr std::size_t kLanes = 16;
  T lanes[kLanes] = {};
  std::size_t i = 0;
  for (; i + kLanes <= n; i += kLanes)
    for (std::size_t k = 0; k < kLanes; ++k) lanes[k] += data[i + k];
  T total = T(0);
  for (std::size_t k = 0; k < kLanes; ++k) total += lanes[k];
  for (; i < n; ++i) total += data[i];
  return total;
}

void require_size(std::size_t actual, std::size_t expected, const char* what) {
  if (actual != expected) {
    throw Error(Errc::ShapeMismatch, std::string(what) + ": expected " + std::to_string(expected) +
                                         " elements, got " + std::to_string(actual));
  }
}

}  // namespace

// ---------------------------------------------------------------- config ----

void VaeConfig::validate() const {
  if (in_channels < 1 || spatial < 1 || latent_dim < 1 || channel_widths.empty()) {
    throw Error(Errc::InvalidArgument, "VAE config dimensions must be positive");
  }
  if (kernel < 1 || stride < 1 || padding < 0) throw Error(Errc::InvalidArgument, "bad convolution geometry");
  for (int w : channel_widths) {
    if (w < 1) throw Error(Errc::InvalidArgument, "channel widths must be positive");
  }
  for (int s : encoder_sizes()) {
    if (s < 1) throw Error(Errc::InvalidArgument, "input too small for the encoder depth");
  }
  for (int op : decoder_output_padding()) {
    if (op < 0 || op >= stride) throw Error(Errc::InvalidArgument, "decoder cannot mirror the encoder sizes");
  }
}

std::vector<int> VaeConfig::encoder_sizes() const {
  std::vector<int> sizes{spatial};
  for (std::size_t i = 0; i < channel_widths.size(); ++i) sizes.push_back(conv_out(sizes.back(), kernel, stride, padding));
  return sizes;
}

std::vector<int> VaeConfig::decoder_output_padding() const {
  const auto sizes = encoder_sizes();
  std::vector<int> op;
  for (int j = 0; j < depth(); ++j) {
    const int in = sizes[static_cast<std::size_t>(depth() - j)];
    const int target = sizes[static_cast<std::size_t>(depth() - j - 1)];
    op.push_back(target - ((in - 1) * stride - 2 * padding + kernel));
  }
  return op;
}

std::size_t VaeConfig::flat_dim() const {
  const auto s = static_cast<std::size_t>(bottleneck_size());
  return static_cast<std::size_t>(bottleneck_channels()) * s * s;
}

// ---------------------------------------------------------------- params ----

template <typename T>
VaeParams<T> VaeParams<T>::zeros(const VaeConfig& c) {
  c.validate();
  const int L = c.depth();
  const int k = c.kernel;
  const int F = static_cast<int>(c.flat_dim());
  const int S = c.latent_dim;
  VaeParams<T> p;
  auto add = [&p](std::string name, std::vector<int> shape) {
    std::size_t n = 1;
    for (int d : shape) n *= static_cast<std::size_t>(d);
    p.tensors.push_back({std::move(name), std::move(shape), std::vector<T>(n, T(0))});
  };
  for (int i = 0; i < L; ++i) {
    const int cin = i == 0 ? c.in_channels : c.channel_widths[static_cast<std::size_t>(i - 1)];
    const int cout = c.channel_widths[static_cast<std::size_t>(i)];
    add("enc" + std::to_string(i) + ".weight", {cout, cin, k, k});
    add("enc" + std::to_string(i) + ".bias", {cout});
  }
  add("fc_mu.weight", {S, F});
  add("fc_mu.bias", {S});
  add("fc_logvar.weight", {S, F});
  add("fc_logvar.bias", {S});
  add("fc_decode.weight", {F, S});
  add("fc_decode.bias", {F});
  for (int j = 0; j < L; ++j) {
    const int cin = c.channel_widths[static_cast<std::size_t>(L - 1 - j)];
    const int cout = j == L - 1 ? c.in_channels : c.channel_widths[static_cast<std::size_t>(L - 2 - j)];
    add("dec" + std::to_string(j) + ".weight", {cin, cout, k, k});
    add("dec" + std::to_string(j) + ".bias", {cout});
  }
  return p;
}

template <typename T>
std::size_t VaeParams<T>::total_numel() const noexcept {
  std::size_t n = 0;
  for (const auto& t : tensors) n += t.numel();
  return n;
}

template <typename T>
void VaeParams<T>::set_zero() {
  for (auto& t : tensors) std::fill(t.data.begin(), t.data.end(), T(0));
}

template <typename T>
void VaeParams<T>::add(const VaeParams& other) {
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    auto& dst = tensors[i].data;
    const auto& src = other.tensors[i].data;
    for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += src[j];
  }
}

template <typename T>
bool VaeParams<T>::all_finite() const {
  for (const auto& t : tensors) {
    for (T v : t.data) {
      if (!std::isfinite(v)) return false;
    }
  }
  return true;
}

template struct VaeParams<float>;
template struct VaeParams<double>;

std::size_t fan_in(const VaeConfig& config, const std::string& name) {
  const auto params = VaeParams<float>::zeros(config);
  for (const auto& t : params.tensors) {
    if (t.name != name) continue;
    if (name.starts_with("enc")) return static_cast<std::size_t>(t.shape[1] * t.shape[2] * t.shape[3]);
    if (name.starts_with("dec")) return static_cast<std::size_t>(t.shape[1] * t.shape[2] * t.shape[3]);
    return static_cast<std::size_t>(t.shape[1]);  // fully connected [out, in]
  }
  throw Error(Errc::InvalidArgument, "unknown parameter " + name);
}

VaeParams<float> init_params(const VaeConfig& config, std::uint64_t seed) {
  auto params = VaeParams<float>::zeros(config);
  for (std::size_t i = 0; i < params.tensors.size(); ++i) {
    auto& t = params.tensors[i];
    if (!t.name.ends_with(".weight")) continue;
    const double bound = std::sqrt(1.0 / static_cast<double>(fan_in(config, t.name)));
    SplitMix64 rng(derive_seed(seed, i));
    for (float& v : t.data) {
      // Rounding to float can land a hair outside the bound; clamp to keep the contract.
      v = static_cast<float>(rng.uniform(-bound, bound));
      v = std::clamp(v, static_cast<float>(-bound), static_cast<float>(bound));
    }
  }
  return params;
}

template <typename T>
std::size_t Batch<T>::sample_numel() const noexcept {
  std::size_t n = 1;
  for (int d : sample_shape) n *= static_cast<std::size_t>(d);
  return n;
}

template struct Batch<float>;
template struct Batch<double>;

// ----------------------------------------------------------------- model ----

template <typename T>
VaeModel<T>::VaeModel(VaeConfig config)
    : config_(std::move(config)), sizes_(config_.encoder_sizes()), output_padding_(config_.decoder_output_padding()) {
  config_.validate();
}

template <typename T>
void VaeModel<T>::encode_sample(const VaeParams<T>& params, std::span<const T> x, Activations<T>& acts,
                                ShapeTrace* trace) const {
  const auto& c = config_;
  const int L = c.depth();
  require_size(x.size(), c.input_numel(), "encoder input");
  acts.enc.resize(static_cast<std::size_t>(L + 1));
  acts.enc[0].assign(x.begin(), x.end());
  auto& col = scratch<T>(0);
  for (int i = 0; i < L; ++i) {
    const int cin = i == 0 ? c.in_channels : c.channel_widths[static_cast<std::size_t>(i - 1)];
    const int cout = c.channel_widths[static_cast<std::size_t>(i)];
    const Geometry g{cin, sizes_[static_cast<std::size_t>(i)], sizes_[static_cast<std::size_t>(i + 1)], c.kernel,
                     c.stride, c.padding};
    col.resize(g.rows() * g.cols());
    im2col(acts.enc[static_cast<std::size_t>(i)].data(), g, col.data());
    auto& out = acts.enc[static_cast<std::size_t>(i + 1)];
    out.resize(static_cast<std::size_t>(cout) * g.cols());
    const auto& W = params.tensors[params.enc_weight(i)].data;
    const auto& b = params.tensors[params.enc_bias(i)].data;
    MatMap<T> Y(out.data(), cout, static_cast<Eigen::Index>(g.cols()));
    Y.noalias() = ConstMatMap<T>(W.data(), cout, static_cast<Eigen::Index>(g.rows())) *
                  ConstMatMap<T>(col.data(), static_cast<Eigen::Index>(g.rows()), static_cast<Eigen::Index>(g.cols()));
    for (int r = 0; r < cout; ++r) {
      Y.row(r).array() = (Y.row(r).array() + b[static_cast<std::size_t>(r)]).cwiseMax(T(0));
    }
    if (trace) trace->push_back({"enc" + std::to_string(i), {1, cout, g.small, g.small}});
  }

  const auto F = static_cast<Eigen::Index>(c.flat_dim());
  const auto S = static_cast<Eigen::Index>(c.latent_dim);
  const std::size_t fc = params.fc_base(L);
  ConstVecMap<T> flat(acts.enc.back().data(), F);
  if (trace) trace->push_back({"flatten", {1, static_cast<int>(F)}});
  acts.mu.resize(static_cast<std::size_t>(S));
  acts.logvar.resize(static_cast<std::size_t>(S));
  VecMap<T>(acts.mu.data(), S).noalias() =
      ConstMatMap<T>(params.tensors[fc].data.data(), S, F) * flat + ConstVecMap<T>(params.tensors[fc + 1].data.data(), S);
  VecMap<T>(acts.logvar.data(), S).noalias() = ConstMatMap<T>(params.tensors[fc + 2].data.data(), S, F) * flat +
                                               ConstVecMap<T>(params.tensors[fc + 3].data.data(), S);
  if (trace) {
    trace->push_back({"fc_mu", {1, static_cast<int>(S)}});
    trace->push_back({"fc_logvar", {1, static_cast<int>(S)}});
  }
}

template <typename T>
void VaeModel<T>::decode_sample(const VaeParams<T>& params, std::span<const T> z, Activations<T>& acts,
                                ShapeTrace* trace) const {
  const auto& c = config_;
  const int L = c.depth();
  const auto F = static_cast<Eigen::Index>(c.flat_dim());
  const auto S = static_cast<Eigen::Index>(c.latent_dim);
  require_size(z.size(), static_cast<std::size_t>(S), "decoder input");
  if (acts.z.data() != z.data()) acts.z.assign(z.begin(), z.end());
  const std::size_t fc = params.fc_base(L);
  acts.bottleneck.resize(static_cast<std::size_t>(F));
  VecMap<T>(acts.bottleneck.data(), F).noalias() =
      ConstMatMap<T>(params.tensors[fc + 4].data.data(), F, S) * ConstVecMap<T>(acts.z.data(), S) +
      ConstVecMap<T>(params.tensors[fc + 5].data.data(), F);
  if (trace) {
    trace->push_back({"fc_decode", {1, static_cast<int>(F)}});
    trace->push_back({"unflatten", {1, c.bottleneck_channels(), sizes_.back(), sizes_.back()}});
  }

  acts.dec.resize(static_cast<std::size_t>(L));
  auto& col = scratch<T>(0);
  for (int j = 0; j < L; ++j) {
    const int cin = c.channel_widths[static_cast<std::size_t>(L - 1 - j)];
    const int cout = j == L - 1 ? c.in_channels : c.channel_widths[static_cast<std::size_t>(L - 2 - j)];
    const Geometry g{cout, sizes_[static_cast<std::size_t>(L - 1 - j)], sizes_[static_cast<std::size_t>(L - j)],
                     c.kernel, c.stride, c.padding};
    const T* in = j == 0 ? acts.bottleneck.data() : acts.dec[static_cast<std::size_t>(j - 1)].data();
    col.resize(g.rows() * g.cols());
    const auto& W = params.tensors[params.dec_weight(L, j)].data;
    const auto& b = params.tensors[params.dec_bias(L, j)].data;
    MatMap<T>(col.data(), static_cast<Eigen::Index>(g.rows()), static_cast<Eigen::Index>(g.cols())).noalias() =
        ConstMatMap<T>(W.data(), cin, static_cast<Eigen::Index>(g.rows())).transpose() *
        ConstMatMap<T>(in, cin, static_cast<Eigen::Index>(g.cols()));
    auto& out = acts.dec[static_cast<std::size_t>(j)];
    const std::size_t plane = static_cast<std::size_t>(g.big) * static_cast<std::size_t>(g.big);
    out.assign(static_cast<std::size_t>(cout) * plane, T(0));
    col2im(col.data(), g, out.data());
    const bool last = j == L - 1;
    for (int ch = 0; ch < cout; ++ch) {
      T* v = out.data() + static_cast<std::size_t>(ch) * plane;
      const T bias = b[static_cast<std::size_t>(ch)];
      if (last) {
        sigmoid_inplace(v, plane, bias);
      } else {
        for (std::size_t q = 0; q < plane; ++q) v[q] = std::max(v[q] + bias, T(0));
      }
    }
    if (trace) trace->push_back({"dec" + std::to_string(j), {1, cout, g.big, g.big}});
  }
}

template <typename T>
Encoded<T> VaeModel<T>::encode(const VaeParams<T>& params, const Batch<T>& x, ShapeTrace* trace) const {
  const int S = config_.latent_dim;
  require_size(x.sample_numel(), config_.input_numel(), "encoder input");
  if (x.data.size() != x.sample_numel() * static_cast<std::size_t>(x.count)) {
    throw Error(Errc::ShapeMismatch, "batch data size does not match its count");
  }
  Encoded<T> out{{x.count, {S}, {}}, {x.count, {S}, {}}};
  out.mu.data.resize(static_cast<std::size_t>(x.count * S));
  out.logvar.data.resize(static_cast<std::size_t>(x.count * S));
  Activations<T> acts;
  ShapeTrace local;
  for (int n = 0; n < x.count; ++n) {
    encode_sample(params, x.sample(n), acts, trace && n == 0 ? &local : nullptr);
    std::copy(acts.mu.begin(), acts.mu.end(), out.mu.sample(n).begin());
    std::copy(acts.logvar.begin(), acts.logvar.end(), out.logvar.sample(n).begin());
  }
  if (trace) {
    for (auto& entry : local) {
      entry.shape[0] = x.count;
      trace->push_back(std::move(entry));
    }
  }
  return out;
}

template <typename T>
Batch<T> VaeModel<T>::decode(const VaeParams<T>& params, const Batch<T>& z, ShapeTrace* trace) const {
  require_size(z.sample_numel(), static_cast<std::size_t>(config_.latent_dim), "decoder input");
  if (z.data.size() != z.sample_numel() * static_cast<std::size_t>(z.count)) {
    throw Error(Errc::ShapeMismatch, "batch data size does not match its count");
  }
  Batch<T> out{z.count, {config_.in_channels, config_.spatial, config_.spatial}, {}};
  out.data.resize(config_.input_numel() * static_cast<std::size_t>(z.count));
  Activations<T> acts;
  ShapeTrace local;
  for (int n = 0; n < z.count; ++n) {
    decode_sample(params, z.sample(n), acts, trace && n == 0 ? &local : nullptr);
    std::copy(acts.dec.back().begin(), acts.dec.back().end(), out.sample(n).begin());
  }
  if (trace) {
    for (auto& entry : local) {
      entry.shape[0] = z.count;
      trace->push_back(std::move(entry));
    }
  }
  return out;
}

template <typename T>
SampleResult<T> VaeModel<T>::forward(const VaeParams<T>& params, std::span<const T> x, std::span<const T> eps,
                                     double beta, Activations<T>& acts) const {
  const auto S = static_cast<std::size_t>(config_.latent_dim);
  require_size(eps.size(), S, "eps");
  encode_sample(params, x, acts);
  acts.z.resize(S);
  for (std::size_t i = 0; i < S; ++i) acts.z[i] = acts.mu[i] + std::exp(T(0.5) * acts.logvar[i]) * eps[i];
  decode_sample(params, acts.z, acts);
  SampleResult<T> r;
  r.recon = recon_l1<T>(x, acts.dec.back());
  r.kl = kl_divergence<T>(acts.mu, acts.logvar);
  r.total = r.recon + beta * r.kl;
  return r;
}

template <typename T>
void VaeModel<T>::backward(const VaeParams<T>& params, std::span<const T> x, std::span<const T> eps, double beta,
                           const Activations<T>& acts, VaeParams<T>& grad) const {
  const auto& c = config_;
  const int L = c.depth();
  const auto F = static_cast<Eigen::Index>(c.flat_dim());
  const auto S = static_cast<Eigen::Index>(c.latent_dim);
  const std::size_t fc = params.fc_base(L);
  if (grad.tensors.size() != params.tensors.size()) grad = VaeParams<T>::zeros(c);

  auto& g_out = scratch<T>(1);  // gradient w.r.t. the current layer's activated output
  auto& g_in = scratch<T>(2);
  auto& col = scratch<T>(0);

  // d|x - xhat| / dxhat
  const auto& xhat = acts.dec.back();
  g_out.resize(xhat.size());
  for (std::size_t i = 0; i < xhat.size(); ++i) {
    const T d = xhat[i] - x[i];
    g_out[i] = d > T(0) ? T(1) : (d < T(0) ? T(-1) : T(0));
  }

  for (int j = L - 1; j >= 0; --j) {
    const int cin = c.channel_widths[static_cast<std::size_t>(L - 1 - j)];
    const int cout = j == L - 1 ? c.in_channels : c.channel_widths[static_cast<std::size_t>(L - 2 - j)];
    const Geometry g{cout, sizes_[static_cast<std::size_t>(L - 1 - j)], sizes_[static_cast<std::size_t>(L - j)],
                     c.kernel, c.stride, c.padding};
    const auto& y = acts.dec[static_cast<std::size_t>(j)];
    if (j == L - 1) {
      for (std::size_t i = 0; i < y.size(); ++i) g_out[i] *= y[i] * (T(1) - y[i]);
    } else {
      for (std::size_t i = 0; i < y.size(); ++i) {
        if (!(y[i] > T(0))) g_out[i] = T(0);
      }
    }
    const std::size_t plane = static_cast<std::size_t>(g.big) * static_cast<std::size_t>(g.big);
    auto& db = grad.tensors[grad.dec_bias(L, j)].data;
    for (int ch = 0; ch < cout; ++ch) {
      db[static_cast<std::size_t>(ch)] = ordered_sum(g_out.data() + static_cast<std::size_t>(ch) * plane, plane);
    }
    col.resize(g.rows() * g.cols());
    im2col(g_out.data(), g, col.data());
    const ConstMatMap<T> dcol(col.data(), static_cast<Eigen::Index>(g.rows()), static_cast<Eigen::Index>(g.cols()));
    const T* in = j == 0 ? acts.bottleneck.data() : acts.dec[static_cast<std::size_t>(j - 1)].data();
    const ConstMatMap<T> X(in, cin, static_cast<Eigen::Index>(g.cols()));
    auto& dW = grad.tensors[grad.dec_weight(L, j)].data;
    MatMap<T>(dW.data(), cin, static_cast<Eigen::Index>(g.rows())).noalias() = X * dcol.transpose();
    const auto& W = params.tensors[params.dec_weight(L, j)].data;
    g_in.resize(static_cast<std::size_t>(cin) * g.cols());
    MatMap<T>(g_in.data(), cin, static_cast<Eigen::Index>(g.cols())).noalias() =
        ConstMatMap<T>(W.data(), cin, static_cast<Eigen::Index>(g.rows())) * dcol;
    std::swap(g_out, g_in);
  }

  // g_out now holds d/d(bottleneck); fc_decode has no activation.
  const ConstVecMap<T> g_bottleneck(g_out.data(), F);
  const ConstVecMap<T> z(acts.z.data(), S);
  MatMap<T>(grad.tensors[fc + 4].data.data(), F, S).noalias() = g_bottleneck * z.transpose();
  VecMap<T>(grad.tensors[fc + 5].data.data(), F) = g_bottleneck;
  Eigen::Matrix<T, Eigen::Dynamic, 1> g_z =
      ConstMatMap<T>(params.tensors[fc + 4].data.data(), F, S).transpose() * g_bottleneck;

  Eigen::Matrix<T, Eigen::Dynamic, 1> g_mu(S), g_lv(S);
  const T b = static_cast<T>(beta);
  for (Eigen::Index i = 0; i < S; ++i) {
    const auto ui = static_cast<std::size_t>(i);
    const T mu = acts.mu[ui];
    const T lv = acts.logvar[ui];
    g_mu[i] = g_z[i] + b * mu;
    g_lv[i] = g_z[i] * T(0.5) * std::exp(T(0.5) * lv) * eps[ui] + b * T(0.5) * (std::exp(lv) - T(1));
  }

  const ConstVecMap<T> flat(acts.enc.back().data(), F);
  MatMap<T>(grad.tensors[fc].data.data(), S, F).noalias() = g_mu * flat.transpose();
  VecMap<T>(grad.tensors[fc + 1].data.data(), S) = g_mu;
  MatMap<T>(grad.tensors[fc + 2].data.data(), S, F).noalias() = g_lv * flat.transpose();
  VecMap<T>(grad.tensors[fc + 3].data.data(), S) = g_lv;
  g_out.resize(static_cast<std::size_t>(F));
  VecMap<T> g_flat(g_out.data(), F);
  g_flat.noalias() = ConstMatMap<T>(params.tensors[fc].data.data(), S, F).transpose() * g_mu;
  g_flat.noalias() += ConstMatMap<T>(params.tensors[fc + 2].data.data(), S, F).transpose() * g_lv;

  for (int i = L - 1; i >= 0; --i) {
    const int cin = i == 0 ? c.in_channels : c.channel_widths[static_cast<std::size_t>(i - 1)];
    const int cout = c.channel_widths[static_cast<std::size_t>(i)];
    const Geometry g{cin, sizes_[static_cast<std::size_t>(i)], sizes_[static_cast<std::size_t>(i + 1)], c.kernel,
                     c.stride, c.padding};
    const auto& y = acts.enc[static_cast<std::size_t>(i + 1)];
    for (std::size_t q = 0; q < y.size(); ++q) {
      if (!(y[q] > T(0))) g_out[q] = T(0);
    }
    const auto n_cols = static_cast<Eigen::Index>(g.cols());
    const ConstMatMap<T> dZ(g_out.data(), cout, n_cols);
    auto& db = grad.tensors[grad.enc_bias(i)].data;
    for (int r = 0; r < cout; ++r) {
      db[static_cast<std::size_t>(r)] = ordered_sum(g_out.data() + static_cast<std::size_t>(r) * g.cols(), g.cols());
    }
    col.resize(g.rows() * g.cols());
    im2col(acts.enc[static_cast<std::size_t>(i)].data(), g, col.data());
    auto& dW = grad.tensors[grad.enc_weight(i)].data;
    MatMap<T>(dW.data(), cout, static_cast<Eigen::Index>(g.rows())).noalias() =
        dZ * ConstMatMap<T>(col.data(), static_cast<Eigen::Index>(g.rows()), n_cols).transpose();
    if (i == 0) break;
    const auto& W = params.tensors[params.enc_weight(i)].data;
    MatMap<T>(col.data(), static_cast<Eigen::Index>(g.rows()), n_cols).noalias() =
        ConstMatMap<T>(W.data(), cout, static_cast<Eigen::Index>(g.rows())).transpose() * dZ;
    const std::size_t in_numel =
        static_cast<std::size_t>(cin) * static_cast<std::size_t>(g.big) * static_cast<std::size_t>(g.big);
    g_in.assign(in_numel, T(0));
    col2im(col.data(), g, g_in.data());
    std::swap(g_out, g_in);
  }
}

template class VaeModel<float>;
template class VaeModel<double>;

// ------------------------------------------------------------------ loss ----

template <typename T>
Batch<T> reparameterize(const Batch<T>& mu, const Batch<T>& logvar, const Batch<T>& eps) {
  if (mu.data.size() != logvar.data.size() || mu.data.size() != eps.data.size()) {
    throw Error(Errc::ShapeMismatch, "mu, logvar and eps must have the same shape");
  }
  Batch<T> z{mu.count, mu.sample_shape, std::vector<T>(mu.data.size())};
  for (std::size_t i = 0; i < z.data.size(); ++i) {
    z.data[i] = mu.data[i] + std::exp(T(0.5) * logvar.data[i]) * eps.data[i];
  }
  return z;
}

template <typename T>
double recon_l1(std::span<const T> x, std::span<const T> xhat) {
  require_size(xhat.size(), x.size(), "reconstruction");
  double sum = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) sum += std::abs(static_cast<double>(x[i]) - static_cast<double>(xhat[i]));
  return sum;
}

template <typename T>
double kl_divergence(std::span<const T> mu, std::span<const T> logvar) {
  require_size(logvar.size(), mu.size(), "logvar");
  double sum = 0.0;
  for (std::size_t i = 0; i < mu.size(); ++i) {
    const double m = mu[i];
    const double lv = logvar[i];
    // 1 + lv - e^lv <= 0 always; expm1 keeps tiny |lv| accurate.
    sum += -0.5 * ((lv - std::expm1(lv)) - m * m);
  }
  return sum;
}

template <typename T>
LossBreakdown loss(const Batch<T>& x, const Batch<T>& xhat, const Batch<T>& mu, const Batch<T>& logvar, double beta) {
  if (x.count != xhat.count || x.count != mu.count || x.count != logvar.count) {
    throw Error(Errc::ShapeMismatch, "loss inputs disagree on batch size");
  }
  LossBreakdown out;
  out.beta = beta;
  for (int n = 0; n < x.count; ++n) {
    const double r = recon_l1<T>(x.sample(n), xhat.sample(n));
    const double k = kl_divergence<T>(mu.sample(n), logvar.sample(n));
    out.recon_per_sample.push_back(r);
    out.kl_per_sample.push_back(k);
    out.recon += r;
    out.kl += k;
  }
  out.total = out.recon + beta * out.kl;
  return out;
}

template Batch<float> reparameterize(const Batch<float>&, const Batch<float>&, const Batch<float>&);
template Batch<double> reparameterize(const Batch<double>&, const Batch<double>&, const Batch<double>&);
template double recon_l1<float>(std::span<const float>, std::span<const float>);
template double recon_l1<double>(std::span<const double>, std::span<const double>);
template double kl_divergence<float>(std::span<const float>, std::span<const float>);
template double kl_divergence<double>(std::span<const double>, std::span<const double>);
template LossBreakdown loss(const Batch<float>&, const Batch<float>&, const Batch<float>&, const Batch<float>&,
                            double);
template LossBreakdown loss(const Batch<double>&, const Batch<double>&, const Batch<double>&, const Batch<double>&,
                            double);

}  // namespace splitsense::vae
