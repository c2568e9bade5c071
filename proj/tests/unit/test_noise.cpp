#include "actionflow/error.hpp"
#include "actionflow/noise.hpp"
#include "stats.hpp"

#include <doctest.h>

#include <cstdio>

using namespace actionflow;
using namespace testing_support;

namespace {

std::vector<double> as_double(const Latent& l) { return {l.data.begin(), l.data.end()}; }

Latent gaussian_latent(int h, int w, int c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n;
  Latent l(h, w, c);
  for (auto& v : l.data) v = static_cast<float>(n(rng));
  return l;
}

}  // namespace

TEST_CASE("fresh carrier is standard normal") {
  const auto s = NoiseState::create(832, 480, 1);
  CHECK(s.carrier.h == 60);
  CHECK(s.carrier.w == 104);
  CHECK(s.carrier.c == 16);
  const auto m = moments(s.carrier.data);
  CHECK(std::abs(m.mean) < 0.01);
  CHECK(std::abs(m.var - 1.0) < 0.02);
  CHECK(ks_pvalue(ks_statistic(as_double(s.carrier)), s.carrier.data.size()) > 0.01);
}

TEST_CASE("KS oracle sanity") {
  // Uniform samples on [-1, 1] are far from normal; normal samples are not.
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(-1, 1);
  std::normal_distribution<double> n;
  std::vector<double> a, b;
  for (int i = 0; i < 20000; ++i) a.push_back(u(rng)), b.push_back(n(rng));
  CHECK(ks_pvalue(ks_statistic(a), a.size()) < 1e-6);
  CHECK(ks_pvalue(ks_statistic(b), b.size()) > 0.01);
  // Known Kolmogorov quantile: P(K > 1.358) = 0.05.
  CHECK(ks_pvalue(1.358 / std::sqrt(1e8), 100000000) == doctest::Approx(0.05).epsilon(0.01));
}

TEST_CASE("zero flow is the exact identity") {
  for (auto mode : {WarpMode::Bilinear, WarpMode::Stochastic}) {
    auto s = NoiseState::create(128, 64, 5, {.mode = mode});
    const auto before = s.carrier.data;
    const std::vector<float> zero(128 * 64 * 2, 0.0f);
    warp_noise(s, zero, 128, 64);
    CHECK(s.carrier.data == before);
    CHECK(s.frame_index == 1);
  }
}

TEST_CASE("one-cell integer shift moves the carrier and refills the vacated column") {
  for (auto mode : {WarpMode::Bilinear, WarpMode::Stochastic}) {
    auto s = NoiseState::create(128, 64, 9, {.mode = mode});
    const Latent before = s.carrier;
    std::vector<float> flow(128 * 64 * 2, 0.0f);
    for (std::size_t i = 0; i < flow.size(); i += 2) flow[i] = 8.0f;
    warp_noise(s, flow, 128, 64);
    for (int y = 0; y < before.h; ++y) {
      for (int x = 1; x < before.w; ++x)
        for (int k = 0; k < before.c; ++k) CHECK(s.carrier.at(y, x, k) == before.at(y, x - 1, k));
      int same = 0;
      for (int k = 0; k < before.c; ++k) same += s.carrier.at(y, 0, k) == before.at(y, 0, k);
      CHECK(same == 0);
    }
  }
}

TEST_CASE("flow shape mismatch raises ShapeError") {
  auto s = NoiseState::create(64, 64, 1);
  const std::vector<float> flow(64 * 32 * 2, 0.0f);
  CHECK_THROWS_AS(warp_noise(s, flow, 64, 32), Error);
  try {
    warp_noise(s, std::vector<float>(10), 64, 64);
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::ShapeError);
  }
}

TEST_CASE("pooled flow is the block mean in latent cells") {
  std::vector<float> flow(16 * 8 * 2);
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 16; ++x) {
      flow[(y * 16 + x) * 2] = static_cast<float>(x);
      flow[(y * 16 + x) * 2 + 1] = static_cast<float>(y);
    }
  const auto p = pool_flow(flow, 16, 8, 8);
  REQUIRE(p.size() == 4);
  CHECK(p[0] == doctest::Approx(3.5 / 8));
  CHECK(p[1] == doctest::Approx(3.5 / 8));
  CHECK(p[2] == doctest::Approx(11.5 / 8));
}

TEST_CASE("single warp of a smooth flow keeps the N(0,1) marginal") {
  for (auto mode : {WarpMode::Bilinear, WarpMode::Stochastic}) {
    auto s = NoiseState::create(832, 480, 13, {.mode = mode});
    warp_noise(s, smooth_flow(832, 480, 12.0, 4), 832, 480);
    const double d = ks_statistic(as_double(s.carrier));
    CHECK(ks_pvalue(d, s.carrier.data.size()) > 0.01);
  }
}

TEST_CASE("stochastic warp stays standard normal across 100 random flows") {
  auto s = NoiseState::create(832, 480, 17);
  for (int f = 1; f <= 100; ++f) {
    warp_noise(s, smooth_flow(832, 480, 12.0, 1000 + f), 832, 480);
    if (f % 10) continue;
    const double p = ks_pvalue(ks_statistic(as_double(s.carrier)), s.carrier.data.size());
    const auto m = moments(s.carrier.data);
    CAPTURE(f);
    CHECK(p > 0.01);
    CHECK(std::abs(m.mean) < 0.01);
    CHECK(std::abs(m.var - 1.0) < 0.02);
  }
}

TEST_CASE("bilinear warp drifts under repeated fractional flow") {
  // Splitting every cell over its neighbours correlates them, so the second
  // renormalisation no longer yields unit variance. Two half-cell shifts give
  // (a + 2b + c) / 2 in the interior, variance 6/4.
  auto s = NoiseState::create(256, 256, 23, {.mode = WarpMode::Bilinear});
  std::vector<float> flow(256 * 256 * 2, 0.0f);
  for (std::size_t i = 0; i < flow.size(); i += 2) flow[i] = 4.0f;
  warp_noise(s, flow, 256, 256);
  warp_noise(s, flow, 256, 256);
  std::vector<float> interior;
  for (int y = 0; y < 32; ++y)
    for (int x = 2; x < 32; ++x)
      for (int k = 0; k < 16; ++k) interior.push_back(s.carrier.at(y, x, k));
  CHECK(moments(interior).var == doctest::Approx(1.5).epsilon(0.05));
}

TEST_CASE("carrier is deterministic for a seed and flow sequence") {
  auto a = NoiseState::create(256, 128, 99), b = NoiseState::create(256, 128, 99);
  for (int f = 0; f < 5; ++f) {
    const auto flow = smooth_flow(256, 128, 10.0, 50 + f);
    warp_noise(a, flow, 256, 128);
    warp_noise(b, flow, 256, 128);
  }
  CHECK(a.carrier.data == b.carrier.data);
  const auto c = NoiseState::create(256, 128, 100);
  CHECK(c.carrier.data != NoiseState::create(256, 128, 99).carrier.data);
}

TEST_CASE("RNG state survives a text round trip") {
  auto a = NoiseState::create(64, 64, 3);
  const auto saved_state = a.rng_state();
  const auto saved_carrier = a.carrier;
  const auto flow = smooth_flow(64, 64, 5.0, 8);
  warp_noise(a, flow, 64, 64);
  auto b = NoiseState::create(64, 64, 777);
  b.carrier = saved_carrier;
  b.restore_rng(saved_state);
  warp_noise(b, flow, 64, 64);
  CHECK(a.carrier.data == b.carrier.data);
  CHECK_THROWS(b.restore_rng("garbage"));
}

TEST_CASE("sdedit_mix endpoints are exact") {
  const auto a = gaussian_latent(6, 8, 16, 1), b = gaussian_latent(6, 8, 16, 2);
  CHECK(sdedit_mix(a, b, 1.0).data == a.data);
  CHECK(sdedit_mix(a, b, 0.0).data == b.data);
}

TEST_CASE("sdedit_mix preserves variance of independent normals") {
  const auto a = gaussian_latent(100, 625, 16, 3), b = gaussian_latent(100, 625, 16, 4);
  for (double alpha : {0.2, 0.5, 0.9}) {
    const auto m = moments(sdedit_mix(a, b, alpha).data);
    CHECK(std::abs(m.var - 1.0) < 0.02);
  }
}

TEST_CASE("sdedit_mix is linear") {
  const auto a = gaussian_latent(4, 5, 16, 5), b = gaussian_latent(4, 5, 16, 6);
  const auto a2 = gaussian_latent(4, 5, 16, 7), b2 = gaussian_latent(4, 5, 16, 8);
  Latent sa(4, 5, 16), sb(4, 5, 16);
  for (std::size_t i = 0; i < sa.data.size(); ++i) sa.data[i] = a.data[i] + a2.data[i], sb.data[i] = b.data[i] + b2.data[i];
  const auto l = sdedit_mix(a, b, 0.5), r = sdedit_mix(a2, b2, 0.5), lr = sdedit_mix(sa, sb, 0.5);
  for (std::size_t i = 0; i < l.data.size(); ++i) CHECK(l.data[i] + r.data[i] == doctest::Approx(lr.data[i]).epsilon(1e-6));
}

TEST_CASE("sdedit_mix argument errors") {
  const auto a = gaussian_latent(4, 5, 16, 5), b = gaussian_latent(4, 6, 16, 6);
  auto code = [](auto&& f) {
    try {
      f();
    } catch (const Error& e) {
      return e.code();
    }
    return ErrorCode::NotFound;
  };
  CHECK(code([&] { sdedit_mix(a, b, 0.5); }) == ErrorCode::ShapeError);
  CHECK(code([&] { sdedit_mix(a, a, 1.5); }) == ErrorCode::InvalidAlpha);
  CHECK(code([&] { sdedit_mix(a, a, -0.1); }) == ErrorCode::InvalidAlpha);
  CHECK(code([&] { sdedit_mix(a, a, std::nan("")); }) == ErrorCode::InvalidAlpha);
}

TEST_CASE("encoder stub") {
  SUBCASE("constant frame encodes to zeros") {
    const std::vector<std::uint8_t> gray(64 * 32 * 3, 128);
    const auto l = encode_preview(gray, 64, 32);
    CHECK(l.h == 4);
    CHECK(l.w == 8);
    CHECK(l.c == 16);
    for (float v : l.data) CHECK(v == 0.0f);
  }
  SUBCASE("cell checkerboard reproduces the pooled pattern") {
    std::vector<std::uint8_t> img(64 * 32 * 3);
    for (int y = 0; y < 32; ++y)
      for (int x = 0; x < 64; ++x)
        for (int c = 0; c < 3; ++c) img[(y * 64 + x) * 3 + c] = ((x / 8 + y / 8) % 2) ? 255 : 0;
    const auto l = encode_preview(img, 64, 32);
    // Pooled values are 0 or 1 in equal numbers: mean 0.5, std 0.5.
    for (int y = 0; y < 4; ++y)
      for (int x = 0; x < 8; ++x)
        for (int k = 0; k < 16; ++k) CHECK(l.at(y, x, k) == doctest::Approx((x + y) % 2 ? 1.0 : -1.0));
  }
  SUBCASE("output shape for a non-multiple frame") {
    const std::vector<std::uint8_t> img(70 * 41 * 3, 7);
    const auto l = encode_preview(img, 70, 41);
    CHECK(l.h == 5);
    CHECK(l.w == 8);
    CHECK(l.data.size() == 5u * 8 * 16);
  }
}

namespace {

struct Inverter final : Generator {
  std::vector<std::uint8_t> generate(const ConditioningFrame& c, const std::string&,
                                     std::span<const std::vector<std::uint8_t>>) override {
    auto out = c.preview;
    for (auto& v : out) v = static_cast<std::uint8_t>(255 - v);
    return out;
  }
  std::string name() const override { return "invert"; }
};

struct Broken final : Generator {
  std::vector<std::uint8_t> generate(const ConditioningFrame&, const std::string&,
                                     std::span<const std::vector<std::uint8_t>>) override {
    throw std::runtime_error("model offline");
  }
  std::string name() const override { return "broken"; }
};

}  // namespace

TEST_CASE("generator stub, plugin substitution and fallback") {
  ConditioningFrame c;
  c.width = 4;
  c.height = 2;
  for (int i = 0; i < 24; ++i) c.preview.push_back(static_cast<std::uint8_t>(i * 10));
  StubGenerator stub;
  CHECK(stub.generate(c, "", {}) == c.preview);

  Inverter inv;
  const auto g = generate_with_fallback(&inv, c, "", {});
  CHECK_FALSE(g.fallback);
  for (std::size_t i = 0; i < c.preview.size(); ++i) CHECK(g.rgb[i] == 255 - c.preview[i]);

  Broken broken;
  const auto f = generate_with_fallback(&broken, c, "", {});
  CHECK(f.fallback);
  CHECK(f.rgb == c.preview);
  CHECK(f.error.find("model offline") != std::string::npos);
}
