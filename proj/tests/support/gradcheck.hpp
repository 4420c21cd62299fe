#pragma once

// Central-difference gradient check of the VAE objective in double precision.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "splitsense/rng.hpp"
#include "splitsense/vae_model.hpp"

namespace splitsense::testing {

struct GradCheckOptions {
  vae::VaeConfig config;
  int coordinates = 120;
  double step = 1e-3;
  double beta = 0.7;
  std::uint64_t seed = 42;

  GradCheckOptions() {
    config.in_channels = 2;
    config.spatial = 8;
    config.channel_widths = {2, 4};
    config.latent_dim = 4;
  }
};

struct GradCheckResult {
  int checked = 0;
  int skipped = 0;  // coordinates whose +-step straddles a ReLU or L1 kink
  double max_rel_error = 0.0;
  std::vector<std::size_t> tensors_touched;
};

namespace detail {

// Which side of every kink the evaluation sits on.
inline std::vector<std::int8_t> kink_signature(const vae::Activations<double>& a, std::span<const double> x) {
  std::vector<std::int8_t> sig;
  for (std::size_t i = 1; i < a.enc.size(); ++i)
    for (double v : a.enc[i]) sig.push_back(v > 0.0);
  for (std::size_t j = 0; j + 1 < a.dec.size(); ++j)
    for (double v : a.dec[j]) sig.push_back(v > 0.0);
  const auto& out = a.dec.back();
  for (std::size_t i = 0; i < out.size(); ++i) sig.push_back(x[i] > out[i] ? 1 : (x[i] < out[i] ? -1 : 0));
  return sig;
}

}  // namespace detail

inline GradCheckResult gradient_check(const GradCheckOptions& opt) {
  const vae::VaeModel<double> model(opt.config);
  SplitMix64 rng(opt.seed);
  auto params = vae::init_params(opt.config, opt.seed).cast<double>();
  // Non-zero biases so every parameter kind carries signal.
  for (auto& t : params.tensors)
    if (t.name.ends_with(".bias"))
      for (double& v : t.data) v = rng.uniform(-0.1, 0.1);

  std::vector<double> x(opt.config.input_numel());
  for (double& v : x) v = rng.uniform(0.05, 0.95);
  std::vector<double> eps(static_cast<std::size_t>(opt.config.latent_dim));
  for (double& v : eps) v = rng.normal();

  vae::Activations<double> acts;
  model.forward(params, x, eps, opt.beta, acts);
  const auto base_sig = detail::kink_signature(acts, x);
  auto grad = vae::VaeParams<double>::zeros(opt.config);
  model.backward(params, x, eps, opt.beta, acts, grad);

  GradCheckResult result;
  // Round-robin over tensors so each one is exercised, random element within.
  std::size_t tensor = 0;
  int attempts = 0;
  while (result.checked < opt.coordinates && attempts < 50 * opt.coordinates) {
    ++attempts;
    auto& t = params.tensors[tensor];
    const std::size_t k = static_cast<std::size_t>(rng.below(t.data.size()));
    const std::size_t which = tensor;
    tensor = (tensor + 1) % params.tensors.size();

    const double saved = t.data[k];
    vae::Activations<double> plus_acts, minus_acts;
    t.data[k] = saved + opt.step;
    const double f_plus = model.forward(params, x, eps, opt.beta, plus_acts).total;
    t.data[k] = saved - opt.step;
    const double f_minus = model.forward(params, x, eps, opt.beta, minus_acts).total;
    t.data[k] = saved;
    if (detail::kink_signature(plus_acts, x) != base_sig || detail::kink_signature(minus_acts, x) != base_sig) {
      ++result.skipped;
      continue;
    }
    const double numeric = (f_plus - f_minus) / (2.0 * opt.step);
    const double analytic = grad.tensors[which].data[k];
    const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
    result.max_rel_error = std::max(result.max_rel_error, std::abs(analytic - numeric) / denom);
    ++result.checked;
    if (std::find(result.tensors_touched.begin(), result.tensors_touched.end(), which) == result.tensors_touched.end())
      result.tensors_touched.push_back(which);
  }
  return result;
}

}  // namespace splitsense::testing
