#include <doctest.h>

#include <cmath>

#include "splitsense/error.hpp"
#include "splitsense/rng.hpp"
#include "splitsense/vae_model.hpp"
#include "support/gradcheck.hpp"

using namespace splitsense;
using namespace splitsense::vae;

namespace {

VaeConfig small_config() {
  VaeConfig c;
  c.in_channels = 3;
  c.spatial = 12;
  c.channel_widths = {4, 6};
  c.latent_dim = 5;
  return c;
}

template <typename T>
Batch<T> random_batch(SplitMix64& rng, int count, std::vector<int> shape, double lo, double hi) {
  Batch<T> b{count, std::move(shape), {}};
  b.data.resize(b.sample_numel() * static_cast<std::size_t>(count));
  for (auto& v : b.data) v = static_cast<T>(rng.uniform(lo, hi));
  return b;
}

}  // namespace

TEST_CASE("default config reproduces the table geometry") {
  const VaeConfig c;
  CHECK(c.encoder_sizes() == std::vector<int>{210, 105, 53, 27, 14, 7});
  CHECK(c.flat_dim() == 12544);
  CHECK(c.decoder_output_padding() == std::vector<int>{1, 0, 0, 0, 1});
  CHECK_NOTHROW(c.validate());
}

TEST_CASE("config validation") {
  VaeConfig c;
  c.channel_widths.clear();
  CHECK_THROWS_AS(c.validate(), Error);
  c = VaeConfig{};
  c.latent_dim = 0;
  CHECK_THROWS_AS(c.validate(), Error);
  c = VaeConfig{};
  c.spatial = 0;
  CHECK_THROWS_AS(c.validate(), Error);
}

TEST_CASE("parameter layout and initialisation") {
  const VaeConfig c;
  const auto p = init_params(c, 7);
  REQUIRE(p.tensors.size() == 2 * 5 + 6 + 2 * 5);
  CHECK(p.tensors[p.enc_weight(0)].name == "enc0.weight");
  CHECK(p.tensors[p.enc_weight(0)].shape == std::vector<int>{16, 16, 3, 3});
  CHECK(p.tensors[p.enc_weight(4)].shape == std::vector<int>{256, 128, 3, 3});
  CHECK(p.tensors[p.fc_base(5)].name == "fc_mu.weight");
  CHECK(p.tensors[p.fc_base(5)].shape == std::vector<int>{100, 12544});
  CHECK(p.tensors[p.fc_base(5) + 2].name == "fc_logvar.weight");
  CHECK(p.tensors[p.fc_base(5) + 4].shape == std::vector<int>{12544, 100});
  CHECK(p.tensors[p.dec_weight(5, 0)].name == "dec0.weight");
  CHECK(p.tensors[p.dec_weight(5, 0)].shape == std::vector<int>{256, 128, 3, 3});
  CHECK(p.tensors[p.dec_weight(5, 4)].shape == std::vector<int>{16, 16, 3, 3});

  CHECK(fan_in(c, "enc1.weight") == 16 * 9);
  CHECK(fan_in(c, "fc_mu.weight") == 12544);
  CHECK(fan_in(c, "fc_decode.weight") == 100);
  CHECK(fan_in(c, "dec0.weight") == 128 * 9);

  for (const auto& t : p.tensors) {
    if (t.name.ends_with(".bias")) {
      for (float v : t.data) CHECK(v == 0.0f);
    } else {
      const double bound = std::sqrt(1.0 / static_cast<double>(fan_in(c, t.name)));
      const auto [lo, hi] = std::minmax_element(t.data.begin(), t.data.end());
      CHECK(*lo >= -bound);
      CHECK(*hi <= bound);
    }
  }
  const auto again = init_params(c, 7);
  for (std::size_t i = 0; i < p.tensors.size(); ++i) CHECK(p.tensors[i].data == again.tensors[i].data);
  CHECK(init_params(c, 8).tensors[0].data != p.tensors[0].data);
}

TEST_CASE("forward shapes follow the table row by row") {
  const VaeConfig c;
  const VaeModel<float> model(c);
  const auto params = init_params(c, 1);
  SplitMix64 rng(2);
  const auto x = random_batch<float>(rng, 2, {16, 210, 210}, 0.0, 1.0);
  ShapeTrace trace;
  const auto enc = model.encode(params, x, &trace);
  const auto xhat = model.decode(params, enc.mu, &trace);
  const std::vector<LayerShape> expected{
      {"enc0", {2, 16, 105, 105}}, {"enc1", {2, 32, 53, 53}},  {"enc2", {2, 64, 27, 27}},
      {"enc3", {2, 128, 14, 14}},  {"enc4", {2, 256, 7, 7}},   {"flatten", {2, 12544}},
      {"fc_mu", {2, 100}},         {"fc_logvar", {2, 100}},    {"fc_decode", {2, 12544}},
      {"unflatten", {2, 256, 7, 7}}, {"dec0", {2, 128, 14, 14}}, {"dec1", {2, 64, 27, 27}},
      {"dec2", {2, 32, 53, 53}},   {"dec3", {2, 16, 105, 105}}, {"dec4", {2, 16, 210, 210}}};
  REQUIRE(trace.size() == expected.size());
  for (std::size_t i = 0; i < expected.size(); ++i) {
    CHECK(trace[i].layer == expected[i].layer);
    CHECK(trace[i].shape == expected[i].shape);
  }
  CHECK(xhat.count == 2);
  for (float v : xhat.data) CHECK((v > 0.0f && v < 1.0f));
}

TEST_CASE("zero parameters give zero latents and a flat 0.5 reconstruction") {
  const auto c = small_config();
  const VaeModel<double> model(c);
  const auto params = VaeParams<double>::zeros(c);
  const Batch<double> x{2, {3, 12, 12}, std::vector<double>(2 * c.input_numel(), 0.0)};
  const auto enc = model.encode(params, x);
  for (double v : enc.mu.data) CHECK(v == 0.0);
  for (double v : enc.logvar.data) CHECK(v == 0.0);
  SplitMix64 rng(1);
  const auto z = random_batch<double>(rng, 2, {5}, -3.0, 3.0);
  for (double v : model.decode(params, z).data) CHECK(v == 0.5);
}

TEST_CASE("encode and decode are deterministic") {
  const auto c = small_config();
  const VaeModel<float> model(c);
  const auto params = init_params(c, 4);
  SplitMix64 rng(6);
  const auto x = random_batch<float>(rng, 2, {3, 12, 12}, 0.0, 1.0);
  const auto a = model.encode(params, x), b = model.encode(params, x);
  CHECK(a.mu.data == b.mu.data);
  CHECK(a.logvar.data == b.logvar.data);
  CHECK(model.decode(params, a.mu).data == model.decode(params, b.mu).data);
}

TEST_CASE("shape errors") {
  const VaeModel<float> model(small_config());
  const auto params = init_params(small_config(), 1);
  SplitMix64 rng(2);
  const auto wrong = random_batch<float>(rng, 1, {3, 11, 11}, 0.0, 1.0);
  CHECK_THROWS_AS(model.encode(params, wrong), Error);
}

TEST_CASE("loss identities") {
  SplitMix64 rng(3);
  std::vector<double> x(50);
  for (auto& v : x) v = rng.uniform();
  CHECK(recon_l1<double>(x, x) == 0.0);
  const std::vector<double> zero(10, 0.0);
  CHECK(kl_divergence<double>(zero, zero) == 0.0);
  const std::vector<double> one{1.0}, v0{0.0};
  CHECK(kl_divergence<double>(one, v0) == 0.5);
  CHECK(kl_divergence<float>(std::vector<float>{1.0f}, std::vector<float>{0.0f}) == 0.5);
  for (int i = 0; i < 1000; ++i) {
    std::vector<double> mu(8), lv(8);
    for (auto& m : mu) m = rng.uniform(-5, 5);
    for (auto& l : lv) l = rng.uniform(-10, 5);
    CHECK(kl_divergence<double>(mu, lv) >= 0.0);
  }
  // Hand values: |0.2 - 0.5| + |0.9 - 0.4| = 0.8; kl(mu=0, V=ln 2) = -0.5 (1 + ln 2 - 2).
  CHECK(recon_l1<double>(std::vector<double>{0.2, 0.9}, std::vector<double>{0.5, 0.4}) == doctest::Approx(0.8));
  CHECK(kl_divergence<double>(std::vector<double>{0.0}, std::vector<double>{std::log(2.0)}) ==
        doctest::Approx(-0.5 * (1.0 + std::log(2.0) - 2.0)));
}

TEST_CASE("batched loss breakdown") {
  SplitMix64 rng(4);
  const auto x = random_batch<double>(rng, 3, {2, 2}, 0.0, 1.0);
  const auto xhat = random_batch<double>(rng, 3, {2, 2}, 0.0, 1.0);
  const auto mu = random_batch<double>(rng, 3, {4}, -1.0, 1.0);
  const auto lv = random_batch<double>(rng, 3, {4}, -1.0, 1.0);
  const auto l = loss(x, xhat, mu, lv, 2.5);
  REQUIRE(l.recon_per_sample.size() == 3);
  double r = 0.0, k = 0.0;
  for (int n = 0; n < 3; ++n) {
    CHECK(l.recon_per_sample[static_cast<std::size_t>(n)] == doctest::Approx(recon_l1<double>(x.sample(n), xhat.sample(n))));
    r += l.recon_per_sample[static_cast<std::size_t>(n)];
    k += l.kl_per_sample[static_cast<std::size_t>(n)];
  }
  CHECK(l.recon == doctest::Approx(r));
  CHECK(l.kl == doctest::Approx(k));
  CHECK(l.beta == 2.5);
  CHECK(l.total == doctest::Approx(r + 2.5 * k));
}

TEST_CASE("reparameterize") {
  SplitMix64 rng(5);
  const auto mu = random_batch<double>(rng, 1, {3}, -2.0, 2.0);
  const Batch<double> lv{1, {3}, {std::log(0.25), 0.0, std::log(4.0)}};
  const Batch<double> zero{1, {3}, {0.0, 0.0, 0.0}};
  CHECK(reparameterize(mu, lv, zero).data == mu.data);
  const Batch<double> hand = reparameterize(Batch<double>{1, {1}, {1.0}}, Batch<double>{1, {1}, {std::log(4.0)}},
                                            Batch<double>{1, {1}, {0.5}});
  CHECK(hand.data[0] == doctest::Approx(2.0));
  const Batch<double> ones{1, {3}, {1.0, 1.0, 1.0}};
  const auto z = reparameterize(mu, lv, ones);
  CHECK(z.data[0] == doctest::Approx(mu.data[0] + 0.5));
  CHECK(z.data[2] == doctest::Approx(mu.data[2] + 2.0));

  // Sample statistics: z ~ N(mu, exp(lv)).
  const int n = 200000;
  double sum = 0.0, sq = 0.0;
  for (int i = 0; i < n; ++i) {
    const Batch<double> eps{1, {3}, {rng.normal(), rng.normal(), rng.normal()}};
    const double v = reparameterize(mu, lv, eps).data[2];
    sum += v;
    sq += v * v;
  }
  const double mean = sum / n, var = sq / n - mean * mean;
  CHECK(std::abs(mean - mu.data[2]) < 3.0 * 2.0 / std::sqrt(n));
  CHECK(std::abs(var - 4.0) < 0.05 * 4.0);
}

TEST_CASE("analytic gradient matches central differences") {
  const auto r = splitsense::testing::gradient_check({});
  CHECK(r.checked >= 100);
  CHECK(r.tensors_touched.size() == init_params(splitsense::testing::GradCheckOptions{}.config, 0).tensors.size());
  CHECK(r.max_rel_error < 1e-4);
}

TEST_CASE("gradient check on an odd spatial size with three layers") {
  splitsense::testing::GradCheckOptions opt;
  opt.config.in_channels = 1;
  opt.config.spatial = 9;
  opt.config.channel_widths = {2, 2, 3};
  opt.config.latent_dim = 3;
  opt.seed = 77;
  const auto r = splitsense::testing::gradient_check(opt);
  CHECK(r.checked >= 100);
  CHECK(r.max_rel_error < 1e-4);
}

TEST_CASE("backward overwrites the gradient and float agrees with double") {
  const auto c = small_config();
  const VaeModel<float> mf(c);
  const VaeModel<double> md(c);
  const auto pf = init_params(c, 9);
  const auto pd = pf.cast<double>();
  SplitMix64 rng(10);
  std::vector<float> xf(c.input_numel());
  for (auto& v : xf) v = static_cast<float>(rng.uniform());
  std::vector<double> xd(xf.begin(), xf.end());
  std::vector<float> ef(5);
  for (auto& v : ef) v = static_cast<float>(rng.normal());
  std::vector<double> ed(ef.begin(), ef.end());

  Activations<float> af;
  Activations<double> ad;
  const auto rf = mf.forward(pf, xf, ef, 1.5, af);
  const auto rd = md.forward(pd, xd, ed, 1.5, ad);
  CHECK(rf.total == doctest::Approx(rd.total).epsilon(1e-5));

  auto g1 = VaeParams<float>::zeros(c);
  mf.backward(pf, xf, ef, 1.5, af, g1);
  auto g2 = g1;
  mf.backward(pf, xf, ef, 1.5, af, g2);
  for (std::size_t i = 0; i < g1.tensors.size(); ++i) CHECK(g1.tensors[i].data == g2.tensors[i].data);
  CHECK(g1.all_finite());
}
