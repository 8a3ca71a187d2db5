#include "odvc/metrics.hpp"

#include <gtest/gtest.h>

using namespace odvc;

namespace {

Frame solid(int h, int w, float v) { return Frame(Tensor<float>::constant({3, h, w}, v)); }

Frame noise(int h, int w, std::uint64_t seed) {
  Rng rng(seed);
  Tensor<float> t(3, h, w);
  for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = float(rng.uniform());
  return Frame(std::move(t));
}

}  // namespace

TEST(Psnr, Examples) {
  const Frame a = noise(32, 32, 1);
  EXPECT_EQ(psnr(a, a), kPsnrCap);
  EXPECT_NEAR(psnr(solid(32, 32, 0.2f), solid(32, 32, 0.3f)), 20.0, 0.01);
  EXPECT_NEAR(psnr(solid(32, 32, 0.0f), solid(32, 32, 1.0f)), 0.0, 1e-9);
  EXPECT_THROW(psnr(solid(32, 32, 0), solid(16, 32, 0)), std::invalid_argument);
}

TEST(MsSsim, IdenticalIsOne) {
  const Frame a = noise(176, 176, 2);
  EXPECT_NEAR(msssim(a, a), 1.0, 1e-6);
}

TEST(MsSsim, IndependentNoiseIsLow) {
  EXPECT_LT(msssim(noise(176, 176, 3), noise(176, 176, 4)), 0.5);
}

TEST(MsSsim, Symmetric) {
  const Frame a = noise(176, 192, 5);
  Tensor<float> t = a.pixels();
  for (Eigen::Index i = 0; i < t.size(); i += 3) t.data()[i] = 0.5f * t.data()[i];
  const Frame b(std::move(t));
  EXPECT_EQ(msssim(a, b), msssim(b, a));
  const double v = msssim(a, b);
  EXPECT_GT(v, 0.0);
  EXPECT_LT(v, 1.0);
}

TEST(MsSsim, SmallFramesNeedFewerScales) {
  const Frame a = noise(64, 200, 6);
  try {
    msssim(a, a);
    FAIL() << "expected an error";
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("at most 3 scales"), std::string::npos) << e.what();
  }
  EXPECT_EQ(max_msssim_scales(64, 200), 3);
  EXPECT_EQ(max_msssim_scales(176, 176), 5);
  EXPECT_NEAR(msssim(a, a, 3), 1.0, 1e-6);
}

TEST(MsSsim, MonotoneInNoise) {
  const Frame a = noise(176, 176, 7);
  Rng rng(8);
  double previous = 1.0;
  for (double amp : {0.02, 0.05, 0.1, 0.2}) {
    Tensor<float> t = a.pixels();
    for (Eigen::Index i = 0; i < t.size(); ++i) {
      t.data()[i] = std::clamp(float(t.data()[i] + rng.uniform(-amp, amp)), 0.0f, 1.0f);
    }
    const double v = msssim(a, Frame(std::move(t)));
    EXPECT_LT(v, previous);
    previous = v;
  }
}
