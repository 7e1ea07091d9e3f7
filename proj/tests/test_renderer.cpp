#include <gtest/gtest.h>

#include <random>

#include "mpiforge/renderer.hpp"
#include "oracles.hpp"

using namespace mpiforge;

namespace {

ImageD random_image(int w, int h, int c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  ImageD img(w, h, c);
  for (double& v : img.data) v = u(rng);
  return img;
}

ImageD constant_image(int w, int h, int c, double v) {
  ImageD img(w, h, c);
  for (double& x : img.data) x = v;
  return img;
}

}  // namespace

TEST(WarpPlane, IdentityIsExact) {
  const ImageD img = random_image(9, 7, 3, 1);
  EXPECT_EQ(warp_plane(img, Matrix3::Identity(), 9, 7), img);
}

TEST(WarpPlane, IntegerShift) {
  const ImageD img = random_image(6, 4, 1, 2);
  Matrix3 h = Matrix3::Identity();
  h(0, 2) = -1.0;  // output (x, y) samples input (x - 1, y)
  const ImageD out = warp_plane(img, h, 6, 4);
  for (int y = 0; y < 4; ++y) {
    EXPECT_EQ(out.at(0, y, 0), 0.0);
    for (int x = 1; x < 6; ++x) EXPECT_EQ(out.at(x, y, 0), img.at(x - 1, y, 0));
  }
}

TEST(WarpPlane, ScaleOnLinearRamp) {
  const int w = 33, h = 25;
  ImageD ramp(w, h, 1);
  auto f = [](double x, double y) { return 0.01 * x + 0.02 * y + 0.1; };
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) ramp.at(x, y, 0) = f(x, y);
  }
  const double cx = 16, cy = 12;
  // Output pixel p samples the input at c + 0.5 (p - c): a 2x magnification about the centre.
  Matrix3 hm;
  hm << 0.5, 0, 0.5 * cx, 0, 0.5, 0.5 * cy, 0, 0, 1;
  const ImageD out = warp_plane(ramp, hm, w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) EXPECT_NEAR(out.at(x, y, 0), f(cx + 0.5 * (x - cx), cy + 0.5 * (y - cy)), 1e-6);
  }
}

TEST(WarpPlane, SingularHomographyThrows) {
  const ImageD img = random_image(4, 4, 1, 3);
  Matrix3 h = Matrix3::Zero();
  try {
    warp_plane(img, h, 4, 4);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DegeneratePlane);
  }
}

TEST(Composite, OpaqueSinglePlane) {
  const ImageD c = random_image(5, 3, 3, 4);
  const auto out = composite<double>(std::vector<ImageD>{c}, std::vector<ImageD>{constant_image(5, 3, 1, 1.0)});
  EXPECT_EQ(out.color, c);
  EXPECT_EQ(out.alpha, constant_image(5, 3, 1, 1.0));
}

TEST(Composite, TwoLayerOver) {
  const std::vector<ImageD> colors{constant_image(1, 1, 1, 0.2), constant_image(1, 1, 1, 0.8)};
  const std::vector<ImageD> alphas{constant_image(1, 1, 1, 1.0), constant_image(1, 1, 1, 0.5)};
  const auto out = composite(colors, alphas);
  EXPECT_NEAR(out.color.data[0], 0.5, 1e-15);
  EXPECT_NEAR(out.alpha.data[0], 1.0, 1e-15);
}

TEST(Composite, MatchesSumProductOracle) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<ImageD> colors, alphas;
    std::vector<double> c, a;
    for (int i = 0; i < 4; ++i) {
      c.push_back(u(rng));
      a.push_back(u(rng));
      colors.push_back(constant_image(1, 1, 1, c.back()));
      alphas.push_back(constant_image(1, 1, 1, a.back()));
    }
    const auto out = composite(colors, alphas);
    EXPECT_NEAR(out.color.data[0], oracle::eq_sum_product(c, a), 1e-12);
    const std::vector<double> ones(4, 1.0);
    EXPECT_NEAR(out.alpha.data[0], 1.0 - (1 - a[0]) * (1 - a[1]) * (1 - a[2]) * (1 - a[3]), 1e-12);
    EXPECT_NEAR(out.alpha.data[0], oracle::eq_sum_product(ones, a), 1e-12);
  }
}

TEST(Composite, Errors) {
  const std::vector<ImageD> one{constant_image(2, 2, 3, 0.1)};
  const std::vector<ImageD> two{constant_image(2, 2, 1, 0.1), constant_image(2, 2, 1, 0.1)};
  try {
    composite(one, two);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::MismatchedLayerCount);
  }
  try {
    composite(one, std::vector<ImageD>{constant_image(3, 2, 1, 0.1)});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::MismatchedDims);
  }
}

TEST(Composite, OutputBoundedByAccumulatedAlpha) {
  std::mt19937_64 rng(6);
  std::vector<ImageD> colors, alphas;
  for (int i = 0; i < 6; ++i) {
    colors.push_back(random_image(8, 8, 3, 100 + i));
    alphas.push_back(random_image(8, 8, 1, 200 + i));
  }
  const auto out = composite(colors, alphas);
  for (std::size_t p = 0; p < out.alpha.data.size(); ++p) {
    for (int c = 0; c < 3; ++c) {
      double mx = 0.0;
      for (const auto& layer : colors) mx = std::max(mx, layer.data[p * 3 + c]);
      EXPECT_LE(out.color.data[p * 3 + c], out.alpha.data[p] * mx + 1e-14);
    }
    for (const auto& a : alphas) EXPECT_GE(out.alpha.data[p] + 1e-15, a.data[p]);
  }
}

TEST(RenderView, SelfViewEqualsUnwarpedComposite) {
  const auto scene = fixtures::random_render_scene(7);
  const auto& mpi = scene.mpi;
  const auto out = render_view(mpi, mpi.host_camera);
  std::vector<ImageD> colors, alphas;
  for (int i = mpi.planes - 1; i >= 0; --i) {
    ImageD c(mpi.width, mpi.height, 3), a(mpi.width, mpi.height, 1);
    const auto tex = mpi.texture_for_plane(i);
    std::copy(tex.begin(), tex.end(), c.data.begin());
    const auto al = mpi.alpha(i);
    std::copy(al.begin(), al.end(), a.data.begin());
    colors.push_back(std::move(c));
    alphas.push_back(std::move(a));
  }
  const auto ref = composite(colors, alphas);
  EXPECT_EQ(out.color, ref.color);
  EXPECT_EQ(out.alpha, ref.alpha);
  EXPECT_EQ(out.degenerate_planes, 0);
}

TEST(RenderView, LateralShiftMatchesProjection) {
  // One opaque plane carrying a horizontal ramp; identity intrinsics scaled by focal f.
  const double f = 20.0, d = 4.0, b = 0.4;
  CameraModel host;
  host.width = 60;
  host.height = 10;
  host.intrinsics = make_intrinsics(f, f, 30, 5);
  MpiD mpi(1, 1, host, {d});
  for (double& a : mpi.alphas) a = 1.0;
  for (int y = 0; y < host.height; ++y) {
    for (int x = 0; x < host.width; ++x) {
      for (int c = 0; c < 3; ++c) mpi.textures[(y * host.width + x) * 3 + c] = x / 100.0;
    }
  }
  CameraModel target = host;
  target.pose.translation = Vector3(-b, 0, 0);  // centre at host x = +b
  const auto out = render_view(mpi, target);
  // Target pixel x sees host pixel x + f b / d.
  const double shift = f * b / d;
  for (int x = 0; x + shift < host.width - 1; ++x) {
    EXPECT_NEAR(out.color.at(x, 5, 0), (x + shift) / 100.0, 1e-12);
  }
}

TEST(RenderView, MatchesRayPlaneOracle) {
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    const auto scene = fixtures::random_render_scene(seed);
    const Mpi mpi = mpi_cast<float>(scene.mpi);
    for (const auto& cam : scene.targets) {
      const auto out = render_view(mpi, cam);
      const ImageD ref = oracle::ray_plane_render(scene.mpi, cam);
      EXPECT_LT(max_abs_difference(image_cast<double>(out.color), ref), 2.0 / 255.0);
      const auto out_d = render_view(scene.mpi, cam);
      EXPECT_LT(max_abs_difference(out_d.color, ref), 1e-9);
    }
  }
}

TEST(RenderView, DeterministicAcrossThreadCounts) {
  const auto scene = fixtures::random_render_scene(9, 8, 4);
  const Mpi mpi = mpi_cast<float>(scene.mpi);
  const auto one = render_view(mpi, scene.targets[0], {.threads = 1});
  for (int t : {2, 3, 7}) {
    const auto many = render_view(mpi, scene.targets[0], {.threads = t});
    EXPECT_EQ(one.color, many.color);
    EXPECT_EQ(one.alpha, many.alpha);
  }
}

TEST(RenderView, TransparentPlaneLeavesOutputUnchanged) {
  const auto scene = fixtures::random_render_scene(10, 3, 1);
  const MpiD& base = scene.mpi;
  std::vector<double> depths = base.init_depths;
  depths.insert(depths.begin() + 1, 0.5 * (depths[0] + depths[1]));
  MpiD more(4, 1, base.host_camera, depths);
  for (int i = 0, j = 0; i < 4; ++i) {
    if (i == 1) continue;
    std::copy(base.alpha(j).begin(), base.alpha(j).end(), more.alpha(i).begin());
    std::copy(base.texture(j).begin(), base.texture(j).end(), more.texture(i).begin());
    ++j;
  }
  for (double& t : more.texture(1)) t = 0.77;
  for (const auto& cam : scene.targets) {
    const auto a = render_view(base, cam);
    const auto b = render_view(more, cam);
    EXPECT_EQ(a.color, b.color);
    EXPECT_EQ(a.alpha, b.alpha);
  }
}

TEST(RenderView, DegeneratePlaneIsSkipped) {
  CameraModel host;
  host.width = host.height = 8;
  host.intrinsics = make_intrinsics(8, 8, 3.5, 3.5);
  MpiD mpi(2, 1, host, {1.0, 2.0});
  for (double& a : mpi.alphas) a = 1.0;
  for (double& t : mpi.textures) t = 0.5;
  CameraModel target = host;
  target.pose.translation = Vector3(0, 0, -1.0);  // centre on plane 0
  const auto out = render_view(mpi, target);
  EXPECT_EQ(out.degenerate_planes, 1);
  for (double v : out.color.data) EXPECT_TRUE(std::isfinite(v));
}

TEST(RenderDepth, OpaquePlaneCoverage) {
  CameraModel host;
  host.width = host.height = 8;
  host.intrinsics = make_intrinsics(8, 8, 3.5, 3.5);
  MpiD mpi(1, 1, host, {2.0});
  for (int y = 0; y < 8; ++y) {
    for (int x = 0; x < 4; ++x) mpi.alphas[y * 8 + x] = 1.0;
  }
  const ImageD depth = render_depth(mpi, host);
  for (int y = 0; y < 8; ++y) {
    for (int x = 0; x < 8; ++x) EXPECT_EQ(depth.at(x, y, 0), x < 4 ? 2.0 : 0.0);
  }
}

TEST(RenderDepth, FrontOccludesBack) {
  CameraModel host;
  host.width = host.height = 6;
  host.intrinsics = make_intrinsics(6, 6, 2.5, 2.5);
  MpiD mpi(2, 1, host, {1.5, 3.0});
  for (double& a : mpi.alpha(1)) a = 1.0;
  for (int y = 0; y < 3; ++y) {
    for (int x = 0; x < 6; ++x) mpi.alpha(0)[y * 6 + x] = 1.0;
  }
  const ImageD depth = render_depth(mpi, host);
  for (int y = 0; y < 6; ++y) {
    for (int x = 0; x < 6; ++x) EXPECT_EQ(depth.at(x, y, 0), y < 3 ? 1.5 : 3.0);
  }
}

TEST(RenderDepth, SoftAlphasMatchOracle) {
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  CameraModel host;
  host.width = host.height = 1;
  host.intrinsics = make_intrinsics(1, 1, 0, 0);
  for (int trial = 0; trial < 50; ++trial) {
    MpiD mpi(5, 1, host, {1, 2, 3, 4, 5});
    for (double& a : mpi.alphas) a = u(rng);
    std::vector<double> c, a;
    for (int i = 4; i >= 0; --i) {
      c.push_back(mpi.init_depths[i]);
      a.push_back(mpi.alphas[i]);
    }
    EXPECT_NEAR(render_depth(mpi, host).data[0], oracle::eq_sum_product(c, a), 1e-12);
  }
}

TEST(ApplyExposure, Examples) {
  ImageD img = constant_image(1, 1, 3, 0.5);
  EXPECT_EQ(apply_exposure(img, CameraExposure{}), img);
  CameraExposure e;
  e.beta = {0.1, 0.1, 0.1};
  e.gamma = {2, 2, 2};
  EXPECT_EQ(apply_exposure(img, e).data[0], 1.0);
  img = constant_image(1, 1, 3, 0.3);
  e.beta = {-0.1, -0.1, -0.1};
  e.gamma = {0.5, 0.5, 0.5};
  EXPECT_NEAR(apply_exposure(img, e).data[0], 0.1, 1e-15);
  e.gamma[1] = 0.0;
  EXPECT_THROW(apply_exposure(img, e), Error);
}

namespace {

/// Wider than one render tile, odd sizes, dense soft alphas.
fixtures::RenderScene wide_scene(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  CameraModel host;
  host.width = 301;
  host.height = 149;
  host.intrinsics = make_intrinsics(220, 220, 150, 74);
  fixtures::RenderScene s{MpiD(8, 4, host, init_planes(1.5, 9.0, 8, PlaneSpacing::Disparity)), {}};
  for (double& a : s.mpi.alphas) a = u(rng) < 0.2 ? 0.0 : u(rng);
  for (double& t : s.mpi.textures) t = u(rng);

  auto view = [&](int w, int h, double f, const Twist& xi) {
    CameraModel c;
    c.width = w;
    c.height = h;
    c.intrinsics = make_intrinsics(f, f, 0.5 * (w - 1), 0.5 * (h - 1));
    c.pose = se3_exp(xi);
    return c;
  };
  Twist small, roll, none;
  small << 0.01, -0.02, 0.004, 0.06, -0.03, 0.02;
  roll << 0.0, 0.0, 0.25, 0.02, 0.0, 0.0;
  none.setZero();
  s.targets.push_back(view(283, 131, 210, small));  // near-affine runs
  s.targets.push_back(view(283, 131, 210, roll));   // runs straddle source rows
  s.targets.push_back(view(203, 97, 50, none));     // strong minification, gathers
  s.targets.push_back(view(203, 97, 700, small));   // magnification
  return s;
}

struct SimdGuard {
  SimdLevel saved = simd_level();
  ~SimdGuard() { set_simd_level(saved); }
};

}  // namespace

TEST(RenderPrepared, EveryKernelMatchesDoublePath) {
  SimdGuard guard;
  for (std::uint64_t seed : {21u, 22u}) {
    const auto scene = wide_scene(seed);
    const Mpi mpi = mpi_cast<float>(mpi_cast<float>(scene.mpi));
    const MpiD exact = mpi_cast<double>(mpi);
    for (SimdLevel level : {SimdLevel::Scalar, SimdLevel::Avx2, SimdLevel::Avx512}) {
      if (!simd_supported(level)) continue;
      set_simd_level(level);
      const PreparedMpi pm(mpi);
      for (std::size_t k = 0; k < scene.targets.size(); ++k) {
        const auto fast = render_prepared(pm, scene.targets[k]);
        const auto ref = render_view(exact, scene.targets[k]);
        EXPECT_LT(max_abs_difference(image_cast<double>(fast.color), ref.color), 1e-4)
            << simd_level_name(level) << " view " << k;
        EXPECT_LT(max_abs_difference(image_cast<double>(fast.alpha), ref.alpha), 1e-4)
            << simd_level_name(level) << " view " << k;
      }
    }
  }
}

TEST(RenderPrepared, EveryKernelIsThreadDeterministic) {
  SimdGuard guard;
  const auto scene = wide_scene(23);
  const PreparedMpi pm(mpi_cast<float>(scene.mpi));
  for (SimdLevel level : {SimdLevel::Scalar, SimdLevel::Avx2, SimdLevel::Avx512}) {
    if (!simd_supported(level)) continue;
    set_simd_level(level);
    for (const auto& cam : scene.targets) {
      const auto one = render_prepared(pm, cam, {.threads = 1});
      for (int t : {2, 5}) {
        const auto many = render_prepared(pm, cam, {.threads = t});
        EXPECT_EQ(one.color, many.color);
        EXPECT_EQ(one.alpha, many.alpha);
      }
    }
  }
}

TEST(RenderPrepared, UnsupportedLevelFallsBack) {
  SimdGuard guard;
  set_simd_level(SimdLevel::Avx512);
  EXPECT_TRUE(simd_supported(simd_level()));
  set_simd_level(SimdLevel::Scalar);
  EXPECT_EQ(simd_level(), SimdLevel::Scalar);
}
