#include <gtest/gtest.h>

#include "mpiforge/fit.hpp"
#include "mpiforge/synth.hpp"

using namespace mpiforge;

namespace {

SynthSpec small_spec() {
  SynthSpec spec;
  spec.seed = 11;
  spec.width = 40;
  spec.height = 36;
  spec.padding = 8;
  spec.focal = 36.0;
  spec.train_cameras = 4;
  spec.val_cameras = 1;
  spec.baseline = 0.5;
  return spec;
}

/// Views rendered in double precision from the ground truth, so truth has zero loss.
std::vector<FitFrame> exact_frames(const SynthScene& s, bool start_at_truth) {
  FitFrame f{s.truth, {}};
  for (std::size_t i = 0; i < s.cameras.size(); ++i) {
    TrainingView v;
    v.camera_index = static_cast<int>(i);
    v.camera = s.cameras[i];
    v.image = render_view(s.truth, s.cameras[i]).color;
    v.mask = s.masks[i];
    v.validation = s.validation[i];
    v.refine_pose = i != 0;
    f.views.push_back(std::move(v));
  }
  if (!start_at_truth) {
    f.mpi = MpiD(s.truth.planes, s.truth.sharing, s.truth.host_camera, s.truth.init_depths);
    CameraModel host_view = s.cameras[0];
    initialize_from_host_image(f.mpi, f.views[0].image, host_view);
  }
  return {f};
}

}  // namespace

TEST(Fit, GroundTruthIsStationary) {
  const SynthScene s = synth_scene(small_spec());
  FitConfig cfg;
  cfg.iterations = 12;
  cfg.adaptive_depth = true;
  cfg.learn_exposure = true;
  cfg.refine_poses = true;
  const auto r = fit(exact_frames(s, true), ExposureCoeffs(s.cameras.size()), cfg);
  for (const auto& h : r.history) EXPECT_LT(h.loss.total, 1e-24) << "iteration " << h.iteration;
  EXPECT_EQ(r.mpis[0].alphas, s.truth.alphas);
  EXPECT_EQ(r.mpis[0].textures, s.truth.textures);
  EXPECT_EQ(refined_depths_of(r.mpis[0]), s.truth.init_depths);
  for (const auto& e : r.exposure.cameras) EXPECT_TRUE(e.is_identity());
  for (std::size_t v = 0; v < s.cameras.size(); ++v) {
    EXPECT_EQ(r.cameras[0][v].pose.rotation, s.cameras[v].pose.rotation);
    EXPECT_EQ(r.cameras[0][v].pose.translation, s.cameras[v].pose.translation);
  }
}

TEST(Fit, LossDecreasesFromInitialization) {
  const SynthScene s = synth_scene(small_spec());
  FitConfig cfg;
  cfg.iterations = 80;
  const auto r = fit(exact_frames(s, false), ExposureCoeffs(s.cameras.size()), cfg);
  ASSERT_EQ(r.history.size(), 80u);
  EXPECT_LT(r.history.back().loss.total, 0.5 * r.history.front().loss.total);
  ASSERT_TRUE(r.final_psnr_val.has_value());
  for (double a : r.mpis[0].alphas) ASSERT_TRUE(a >= 0.0 && a <= 1.0);
  for (double t : r.mpis[0].textures) ASSERT_TRUE(t >= 0.0 && t <= 1.0);
}

TEST(Fit, BitReproducibleAcrossThreadCounts) {
  const SynthScene s = synth_scene(small_spec());
  FitConfig cfg;
  cfg.iterations = 16;
  cfg.adaptive_depth = true;
  cfg.learn_exposure = true;
  cfg.refine_poses = true;
  std::vector<FitResult> runs;
  for (int threads : {1, 3}) {
    cfg.threads = threads;
    runs.push_back(fit(exact_frames(s, false), ExposureCoeffs(s.cameras.size()), cfg));
  }
  EXPECT_EQ(runs[0].mpis[0].alphas, runs[1].mpis[0].alphas);
  EXPECT_EQ(runs[0].mpis[0].textures, runs[1].mpis[0].textures);
  EXPECT_EQ(runs[0].mpis[0].depth_deltas, runs[1].mpis[0].depth_deltas);
  ASSERT_EQ(runs[0].history.size(), runs[1].history.size());
  for (std::size_t i = 0; i < runs[0].history.size(); ++i) {
    EXPECT_EQ(runs[0].history[i].loss.total, runs[1].history[i].loss.total);
  }
  EXPECT_EQ(runs[0].final_psnr_val, runs[1].final_psnr_val);
}

TEST(Fit, ValidationViewsNeverTrain) {
  const SynthScene s = synth_scene(small_spec());
  FitConfig cfg;
  cfg.iterations = 10;
  auto frames = exact_frames(s, false);
  const auto a = fit(frames, ExposureCoeffs(s.cameras.size()), cfg);
  for (auto& v : frames[0].views) {
    if (v.validation) std::fill(v.image.data.begin(), v.image.data.end(), 0.0);
  }
  const auto b = fit(frames, ExposureCoeffs(s.cameras.size()), cfg);
  EXPECT_EQ(a.mpis[0].alphas, b.mpis[0].alphas);
  ASSERT_TRUE(a.final_psnr_val && b.final_psnr_val);
  EXPECT_NE(*a.final_psnr_val, *b.final_psnr_val);
}

TEST(Fit, RejectsFramesWithoutTrainingViews) {
  const SynthScene s = synth_scene(small_spec());
  auto frames = exact_frames(s, false);
  for (auto& v : frames[0].views) v.validation = true;
  FitConfig cfg;
  cfg.iterations = 1;
  EXPECT_THROW(fit(frames, ExposureCoeffs(s.cameras.size()), cfg), Error);
}
