#include <gtest/gtest.h>

#include <random>

#include "mpiforge/mpi.hpp"

using namespace mpiforge;

namespace {

CameraModel small_host(int w = 4, int h = 3) {
  CameraModel c;
  c.intrinsics = make_intrinsics(4, 4, 1.5, 1.0);
  c.width = w;
  c.height = h;
  return c;
}

}  // namespace

TEST(InitPlanes, DepthSpacing) {
  const auto d = init_planes(1.0, 3.0, 3, PlaneSpacing::Depth);
  ASSERT_EQ(d.size(), 3u);
  EXPECT_DOUBLE_EQ(d[0], 1.0);
  EXPECT_DOUBLE_EQ(d[1], 2.0);
  EXPECT_DOUBLE_EQ(d[2], 3.0);
}

TEST(InitPlanes, DisparitySpacing) {
  // linspace(1, 1/3, 3) = (1, 2/3, 1/3), inverted by hand.
  const auto d = init_planes(1.0, 3.0, 3, PlaneSpacing::Disparity);
  EXPECT_DOUBLE_EQ(d[0], 1.0);
  EXPECT_NEAR(d[1], 1.5, 1e-15);
  EXPECT_DOUBLE_EQ(d[2], 3.0);
}

TEST(InitPlanes, TwoPlanesAreTheEndpoints) {
  for (PlaneSpacing s : {PlaneSpacing::Depth, PlaneSpacing::Disparity}) {
    const auto d = init_planes(0.7, 9.0, 2, s);
    EXPECT_EQ(d[0], 0.7);
    EXPECT_EQ(d[1], 9.0);
  }
}

TEST(InitPlanes, RejectsBadRange) {
  try {
    init_planes(3.0, 1.0, 4, PlaneSpacing::Depth);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::InvalidRange);
  }
  EXPECT_THROW(init_planes(2.0, 2.0, 4, PlaneSpacing::Depth), Error);
  EXPECT_THROW(init_planes(-1.0, 2.0, 4, PlaneSpacing::Disparity), Error);
}

TEST(TextureIndex, Examples) {
  EXPECT_EQ(texture_index(0, 192, 12), 0);
  EXPECT_EQ(texture_index(191, 192, 12), 15);
  EXPECT_EQ(texture_index(12, 192, 12), 1);
  EXPECT_EQ(texture_index(11, 192, 12), 0);
}

TEST(TextureIndex, OutOfRange) {
  try {
    texture_index(192, 192, 12);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::OutOfRange);
  }
  EXPECT_THROW(texture_index(-1, 192, 12), Error);
}

TEST(ChannelCount, SharedTextures) {
  EXPECT_EQ(channel_count(192, 12), 240);
  for (int k = 1; k <= 16; ++k) {
    for (int d = k; d <= 64; d += k) EXPECT_EQ(channel_count(d, k), d + 3 * (d / k));
  }
  Mpi m(24, 12, small_host(), init_planes(1, 5, 24, PlaneSpacing::Depth));
  EXPECT_EQ(m.stored_channels(), 30);
  EXPECT_EQ(m.alphas.size(), 24u * 12u);
  EXPECT_EQ(m.textures.size(), 2u * 12u * 3u);
}

TEST(MpiConstruction, Validates) {
  EXPECT_THROW(Mpi(10, 3, small_host(), init_planes(1, 2, 10, PlaneSpacing::Depth)), Error);
  EXPECT_THROW(Mpi(3, 1, small_host(), {1.0, 2.0}), Error);
  EXPECT_THROW(Mpi(3, 1, small_host(), {1.0, 3.0, 2.0}), Error);
  EXPECT_THROW(Mpi(2, 1, small_host(0, 3), {1.0, 2.0}), Error);
}

TEST(RefinedDepths, ZeroResidual) {
  MpiD m(3, 1, small_host(), {1.0, 2.0, 3.0});
  EXPECT_EQ(refined_depths(m), (std::vector<double>{1.0, 2.0, 3.0}));
}

TEST(RefinedDepths, UniformShiftIsKept) {
  MpiD m(3, 1, small_host(), {1.0, 2.0, 3.0});
  m.depth_deltas = {0.1, 0.1, 0.1};
  const auto d = refined_depths(m);
  EXPECT_DOUBLE_EQ(d[0], 1.1);
  EXPECT_DOUBLE_EQ(d[1], 2.1);
  EXPECT_DOUBLE_EQ(d[2], 3.1);
  EXPECT_EQ(m.depth_deltas, (std::vector<double>{0.1, 0.1, 0.1}));
}

TEST(RefinedDepths, CrossingPlaneIsClamped) {
  MpiD m(3, 1, small_host(), {1.0, 2.0, 3.0});
  m.depth_deltas[1] = 1.2;  // proposal 3.2 lies behind plane 3 at 3.0
  const double eps = 1e-4 * (3.0 - 1.0) / 3.0;
  EXPECT_DOUBLE_EQ(m.order_margin(), eps);
  const auto d = refined_depths(m);
  EXPECT_NEAR(d[1], 3.0 - eps, 1e-15);
  EXPECT_EQ(d[2], 3.0);
  EXPECT_NEAR(m.depth_deltas[1], 1.0 - eps, 1e-15) << "projection is written back";
}

TEST(RefinedDepths, NonMutatingViewMatches) {
  MpiD m(3, 1, small_host(), {1.0, 2.0, 3.0});
  m.depth_deltas = {2.5, -0.4, -3.0};
  const auto view = refined_depths_of(m);
  EXPECT_EQ(m.depth_deltas, (std::vector<double>{2.5, -0.4, -3.0}));
  EXPECT_EQ(view, refined_depths(m));
  EXPECT_TRUE(strictly_ascending(view));
}

TEST(RefinedDepths, RandomUpdateStreamsStayOrderedAndIdempotent) {
  std::mt19937_64 rng(3);
  for (int scene = 0; scene < 20; ++scene) {
    const int d = 2 + scene % 9;
    MpiD m(d, 1, small_host(), init_planes(0.5, 4.0, d, PlaneSpacing::Disparity));
    std::normal_distribution<double> step(0.0, 0.2 * (scene % 4 + 1));
    for (int it = 0; it < 500; ++it) {
      for (double& delta : m.depth_deltas) delta += step(rng);
      const auto first = refined_depths(m);
      ASSERT_TRUE(strictly_ascending(first)) << "scene " << scene << " it " << it;
      ASSERT_GT(first.front(), 0.0);
      const auto second = refined_depths(m);
      ASSERT_EQ(first, second) << "scene " << scene << " it " << it;
    }
  }
}

TEST(Exposure, GaugeValidation) {
  ExposureCoeffs e(3);
  EXPECT_NO_THROW(e.validate());
  e[1].gamma = {1.1, 0.9, 1.0};
  EXPECT_NO_THROW(e.validate());
  e[2].gamma[1] = 0.0;
  EXPECT_THROW(e.validate(), Error);
  e[2].gamma[1] = 1.0;
  e[0].beta[0] = 0.01;
  EXPECT_THROW(e.validate(), Error);
}

TEST(MpiCast, RoundTripThroughDouble) {
  Mpi m(4, 2, small_host(), {1.0, 2.0, 3.0, 4.0});
  std::mt19937 rng(5);
  std::uniform_real_distribution<float> u(0.f, 1.f);
  for (float& a : m.alphas) a = u(rng);
  for (float& t : m.textures) t = u(rng);
  const Mpi back = mpi_cast<float>(mpi_cast<double>(m));
  EXPECT_EQ(back.alphas, m.alphas);
  EXPECT_EQ(back.textures, m.textures);
  EXPECT_EQ(back.init_depths, m.init_depths);
}
