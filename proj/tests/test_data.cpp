#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <unordered_set>

#include "fedcyc/data.hpp"

using namespace fedcyc;

namespace {

// Straight double loop over all pairs, diagonal excluded by index test.
double mmd_brute(const std::vector<Tensor>& a, const std::vector<Tensor>& b, double h) {
  auto k = [h](const Tensor& u, const Tensor& v) {
    double s = 0;
    for (std::size_t i = 0; i < u.size(); ++i) s += (double(u[i]) - v[i]) * (double(u[i]) - v[i]);
    return std::exp(-s / (2 * h * h));
  };
  double saa = 0, sbb = 0, sab = 0;
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < a.size(); ++j)
      if (i != j) saa += k(a[i], a[j]);
  for (std::size_t i = 0; i < b.size(); ++i)
    for (std::size_t j = 0; j < b.size(); ++j)
      if (i != j) sbb += k(b[i], b[j]);
  for (const auto& u : a)
    for (const auto& v : b) sab += k(u, v);
  const double m = a.size(), n = b.size();
  return saa / (m * (m - 1)) + sbb / (n * (n - 1)) - 2 * sab / (m * n);
}

std::vector<Tensor> gaussian_points(double mean, std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> d(static_cast<float>(mean), 1.0f);
  std::vector<Tensor> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(Tensor({1}, {d(rng)}));
  return out;
}

bool same(const std::vector<Tensor>& a, const std::vector<Tensor>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (!bitwise_equal(a[i], b[i])) return false;
  return true;
}

}  // namespace

TEST(Data, ProceduralImagesAreInRangeAndShaped) {
  for (std::uint64_t i = 0; i < 50; ++i) {
    auto img = procedural_image(3, 1, i);
    ASSERT_EQ(img.shape(), (Shape{1, 16, 16}));
    for (float v : img.data()) ASSERT_TRUE(v >= 0.0f && v <= 1.0f);
  }
}

TEST(Data, GenerationIsDeterministic) {
  auto a = make_denoise_task(20, 10, 0.1, 7), b = make_denoise_task(20, 10, 0.1, 7);
  EXPECT_TRUE(same(a.x.samples, b.x.samples));
  EXPECT_TRUE(same(a.y.samples, b.y.samples));
  EXPECT_TRUE(same(a.eval.degraded, b.eval.degraded));
  auto c = make_denoise_task(20, 10, 0.1, 8);
  EXPECT_FALSE(same(a.x.samples, c.x.samples));
  auto s1 = make_style_task(5, 2), s2 = make_style_task(5, 2);
  EXPECT_TRUE(same(s1.x.samples, s2.x.samples) && same(s1.y.samples, s2.y.samples));
}

TEST(Data, EvalSetIsDisjointFromTraining) {
  auto d = make_denoise_task(200, 100, 0.1, 11);
  std::unordered_set<std::uint64_t> train;
  for (const auto& t : d.x.samples) train.insert(content_hash(t));
  for (const auto& t : d.y.samples) train.insert(content_hash(t));
  for (std::size_t i = 0; i < d.eval.clean.size(); ++i) {
    EXPECT_FALSE(train.count(content_hash(d.eval.clean[i])));
    EXPECT_FALSE(train.count(content_hash(d.eval.degraded[i])));
  }
  // X and Y are unpaired: no clean X image reappears as the base of Y
  auto zero = make_denoise_task(50, 1, 0.0, 11);
  std::unordered_set<std::uint64_t> xs;
  for (const auto& t : zero.x.samples) xs.insert(content_hash(t));
  for (const auto& t : zero.y.samples) EXPECT_FALSE(xs.count(content_hash(t)));
}

TEST(Data, ZeroNoiseMakesDomainsAlike) {
  auto d = make_denoise_task(40, 4, 0.0, 3);
  for (std::size_t i = 0; i < d.eval.clean.size(); ++i)
    EXPECT_TRUE(bitwise_equal(d.eval.clean[i], d.eval.degraded[i]));
  // an identity translator reconstructs perfectly
  for (const auto& y : d.y.samples) EXPECT_EQ(psnr(y, y), kPsnrCap);
}

TEST(Data, NoisyInputPsnrNearAnalyticValue) {
  auto d = make_denoise_task(1, 200, 0.1, 5);
  double sum = 0;
  for (std::size_t i = 0; i < d.eval.clean.size(); ++i) sum += psnr(d.eval.degraded[i], d.eval.clean[i]);
  EXPECT_NEAR(sum / d.eval.clean.size(), 20.0, 0.5);
}

TEST(Data, SpecValidation) {
  EXPECT_THROW(make_denoise_task(0, 1, 0.1, 1), DataError);
  EXPECT_THROW(make_denoise_task(1, 0, 0.1, 1), DataError);
  EXPECT_THROW(make_denoise_task(1, 1, -0.1, 1), DataError);
  EXPECT_THROW(make_style_task(0, 1), DataError);
  EXPECT_EQ(make_style_task(1, 1).x.samples.size(), 1u);
}

TEST(Metrics, PsnrExamples) {
  auto a = Tensor::full({1, 16, 16}, 0.5f);
  auto b = Tensor::full({1, 16, 16}, 0.6f);
  EXPECT_EQ(psnr(a, a), 99.0);
  EXPECT_NEAR(psnr(a, b), 20.0, 1e-5);
  EXPECT_EQ(psnr(a, b), psnr(b, a));
  EXPECT_THROW(psnr(a, Tensor::zeros({1, 8, 8})), ShapeError);
}

TEST(Metrics, SsimExamples) {
  auto img = procedural_image(1, 1, 0);
  EXPECT_NEAR(ssim(img, img), 1.0, 1e-12);
  // negate about the mean: structure term flips sign
  double m = 0;
  for (float v : img.data()) m += v;
  m /= img.size();
  std::vector<float> neg(img.size());
  for (std::size_t i = 0; i < neg.size(); ++i) neg[i] = static_cast<float>(2 * m - img[i]);
  EXPECT_LE(ssim(img, Tensor(img.shape(), neg)), 0.0);
  EXPECT_THROW(ssim(Tensor::zeros({1, 4, 4}), Tensor::zeros({1, 4, 4})), ShapeError);
  auto other = procedural_image(1, 1, 1);
  const double s = ssim(img, other);
  EXPECT_TRUE(s >= -1.0 && s <= 1.0);
}

TEST(Metrics, MmdMatchesBruteForce) {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    auto a = gaussian_points(0.0, 5 + trial % 7, rng());
    auto b = gaussian_points(trial * 0.3, 4 + trial % 5, rng());
    const double h = median_bandwidth(a, b);
    EXPECT_NEAR(mmd(a, b), mmd_brute(a, b, h), 1e-12);
    EXPECT_NEAR(mmd(a, b, 2.0), mmd_brute(a, b, 2.0), 1e-12);
    EXPECT_NEAR(mmd(a, b), mmd(b, a), 1e-9);
  }
}

TEST(Metrics, MmdExamples) {
  auto a = gaussian_points(0.0, 100, 1);
  EXPECT_LE(mmd(a, a), 1e-6);
  auto b = gaussian_points(10.0, 100, 2);
  EXPECT_GT(mmd(a, b), 0.5);
  EXPECT_THROW(mmd(std::span(a).first(1), b), DataError);
}

TEST(Metrics, StyleDomainsSeparate) {
  auto d = make_style_task(64, 4);
  auto again = make_style_task(64, 5);
  const double between = mmd(d.x.samples, d.y.samples);
  const double within = mmd(d.x.samples, again.x.samples);
  EXPECT_GT(between, 0.1);
  EXPECT_LT(within, between);
}

TEST(Data, FlipIsAnInvolutionPerSample) {
  std::vector<Tensor> s = {procedural_image(1, 1, 0), procedural_image(1, 1, 1)};
  auto batch = make_batch(s);
  std::mt19937_64 r1(3), r2(3);
  auto once = random_flip(batch, r1);
  EXPECT_TRUE(bitwise_equal(random_flip(once, r2), batch));
}

TEST(Data, DatasetFileRoundTrip) {
  auto d = make_denoise_task(6, 2, 0.1, 21);
  const auto path = std::filesystem::temp_directory_path() / "fedcyc_test_dataset.bin";
  save_dataset(d.y, path);
  auto back = load_dataset(path);
  EXPECT_EQ(back.domain, Domain::Y);
  EXPECT_EQ(back.spec.seed, 21u);
  EXPECT_EQ(back.spec.noise_sigma, 0.1);
  EXPECT_TRUE(same(back.samples, d.y.samples));
  // flip one byte
  {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(50);
    f.put('\x5a');
  }
  EXPECT_THROW(load_dataset(path), DataError);
  std::filesystem::remove(path);
  EXPECT_THROW(load_dataset(path), DataError);
}
