#include <algorithm>
#include <chrono>
#include <cstdio>
#include <map>
#include <random>

#include "cli_common.hpp"
#include "mpiforge/container.hpp"
#include "mpiforge/gradcheck.hpp"
#include "mpiforge/renderer.hpp"

namespace mpiforge::cli {

namespace {

struct GradcheckArgs {
  bool all = false;
  std::vector<std::string> classes;
  int scenes = 20;
  int planes = 4;
  int size = 8;
  int sharing = 2;
  double step = 1e-5;
  double tol = 1e-4;
  std::string json;
};

int run_gradcheck(const GradcheckArgs& a, const GlobalConfig& g) {
  std::vector<ParamClass> classes;
  if (a.all || a.classes.empty()) {
    classes.assign(kAllParamClasses.begin(), kAllParamClasses.end());
  } else {
    for (const auto& name : a.classes) {
      const auto c = parse_param_class(name);
      if (!c) fail(ErrorCode::InvalidArgument, "unknown parameter class '" + name + "'");
      classes.push_back(*c);
    }
  }
  const auto t0 = std::chrono::steady_clock::now();
  // One report per (class, scene); slots are fixed so the table is independent of the thread count.
  std::vector<GradcheckReport> reports(classes.size() * a.scenes);
  parallel_chunks(static_cast<int>(reports.size()), g.worker_threads(), [&](int b, int e, int) {
    for (int i = b; i < e; ++i) {
      const ParamClass cls = classes[i / a.scenes];
      const auto scene = random_gradcheck_scene(g.seed + static_cast<std::uint64_t>(i % a.scenes), a.planes, a.size, a.sharing);
      reports[i] = finite_diff_check(cls, scene, a.step, a.tol);
    }
  });
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  bool all_pass = true;
  nlohmann::json rows = nlohmann::json::array();
  std::printf("%-13s %7s %12s %8s %8s %7s  %s\n", "class", "scenes", "max_rel_err", "checked", "skipped", "nudged", "result");
  for (std::size_t c = 0; c < classes.size(); ++c) {
    int passed = 0, checked = 0, skipped = 0, nudged = 0;
    double worst = 0.0;
    for (int s = 0; s < a.scenes; ++s) {
      const auto& r = reports[c * a.scenes + s];
      passed += r.pass;
      checked += r.checked;
      skipped += r.skipped;
      nudged += r.nudged;
      worst = std::max(worst, r.max_relative_error);
    }
    const bool ok = passed == a.scenes && checked > 0;
    all_pass = all_pass && ok;
    const std::string name(param_class_name(classes[c]));
    std::printf("%-13s %3d/%-3d %12.3e %8d %8d %7d  %s\n", name.c_str(), passed, a.scenes, worst, checked, skipped,
                nudged, ok ? "PASS" : "FAIL");
    rows.push_back({{"class", name},
                    {"scenes_passed", passed},
                    {"scenes", a.scenes},
                    {"max_relative_error", worst},
                    {"checked", checked},
                    {"skipped", skipped},
                    {"nudged", nudged},
                    {"pass", ok}});
  }
  std::printf("gradcheck %s (%.1f s)\n", all_pass ? "PASS" : "FAIL", seconds);
  if (!a.json.empty()) {
    write_json_file(a.json, {{"tolerance", a.tol}, {"step", a.step}, {"seed", g.seed}, {"classes", rows}, {"pass", all_pass}});
  }
  return all_pass ? 0 : 1;
}

struct BenchArgs {
  int planes = 32;
  int share = 4;
  int width = 640;
  int height = 360;
  int trials = 30;
  int warmup = 3;
  std::string simd = "auto";
  std::string mpi;
  int padding = 0;
  std::string json;
};

/// Dense random layers: about a third of the alphas are zero, the rest uniform.
Mpi bench_scene(const BenchArgs& a, std::uint64_t seed, CameraModel& target) {
  CameraModel view;
  view.width = a.width;
  view.height = a.height;
  const double f = 0.8 * a.width;
  view.intrinsics = make_intrinsics(f, f, 0.5 * (a.width - 1), 0.5 * (a.height - 1));
  Mpi m(a.planes, a.share, view.padded(32), init_planes(1.0, 20.0, a.planes, PlaneSpacing::Disparity));
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  for (auto& x : m.alphas) x = u(rng) < 0.3f ? 0.0f : u(rng);
  for (auto& x : m.textures) x = u(rng);
  target = view;
  Twist xi;
  xi << 0.01, -0.02, 0.005, 0.05, -0.03, 0.02;
  target.pose = se3_exp(xi);
  return m;
}

int run_bench(const BenchArgs& a, const GlobalConfig& g) {
  if (a.simd != "auto") {
    static const std::map<std::string, SimdLevel> levels{
        {"scalar", SimdLevel::Scalar}, {"avx2", SimdLevel::Avx2}, {"avx512", SimdLevel::Avx512}};
    const SimdLevel want = levels.at(a.simd);
    if (!simd_supported(want)) fail(ErrorCode::InvalidArgument, std::string(simd_level_name(want)) + " is not supported here");
    set_simd_level(want);
  }
  CameraModel target;
  Mpi m;
  if (!a.mpi.empty()) {
    m = read_mpi(a.mpi);
    target = unpadded_host(m.host_camera, a.padding);
  } else {
    m = bench_scene(a, g.seed, target);
  }
  RenderOptions ro;
  ro.threads = g.worker_threads();

  using clock = std::chrono::steady_clock;
  const auto tp = clock::now();
  const PreparedMpi pm(m);
  const double prepare_ms = 1e3 * std::chrono::duration<double>(clock::now() - tp).count();
  const MpiD md = g.precision == Precision::F64 ? mpi_cast<double>(m) : MpiD{};
  auto frame = [&] {
    if (g.precision == Precision::F64) return double(render_view(md, target, ro).color.data[0]);
    return double(render_prepared(pm, target, ro).color.data[0]);
  };
  double sink = 0.0;
  for (int i = 0; i < a.warmup; ++i) sink += frame();
  std::vector<double> times;
  for (int i = 0; i < a.trials; ++i) {
    const auto t0 = clock::now();
    sink += frame();
    times.push_back(std::chrono::duration<double>(clock::now() - t0).count());
  }
  std::sort(times.begin(), times.end());
  const double best = times.front(), median = times[times.size() / 2];
  const char* level = g.precision == Precision::F64 ? "generic-f64" : simd_level_name(simd_level());
  std::printf("bench %dx%d D=%d K=%d threads=%d simd=%s\n", target.width, target.height, m.planes, m.sharing,
              ro.threads, level);
  std::printf("fps_best %.2f\nfps_median %.2f\nms_best %.3f\nms_median %.3f\nprepare_ms %.3f\n", 1.0 / best,
              1.0 / median, 1e3 * best, 1e3 * median, prepare_ms);
  spdlog::debug("checksum {}", sink);
  if (!a.json.empty()) {
    write_json_file(a.json, {{"width", target.width},
                             {"height", target.height},
                             {"planes", m.planes},
                             {"sharing", m.sharing},
                             {"threads", ro.threads},
                             {"simd", level},
                             {"trials", a.trials},
                             {"fps_best", 1.0 / best},
                             {"fps_median", 1.0 / median},
                             {"ms_best", 1e3 * best},
                             {"ms_median", 1e3 * median},
                             {"prepare_ms", prepare_ms}});
  }
  return 0;
}

}  // namespace

Command add_gradcheck(CLI::App& root, GlobalConfig& g) {
  auto a = std::make_shared<GradcheckArgs>();
  CLI::App* c = root.add_subcommand("gradcheck", "compare analytic gradients with central differences");
  c->add_flag("--all", a->all, "check every parameter class (default when no --class is given)");
  c->add_option("--class", a->classes, "alphas, textures, depth_deltas, pose_twist, beta or gamma; repeatable")
      ->take_all();
  c->add_option("--scenes", a->scenes, "random scenes per class")->capture_default_str()->check(CLI::PositiveNumber);
  c->add_option("--planes", a->planes, "planes per scene")->capture_default_str()->check(CLI::PositiveNumber);
  c->add_option("--size", a->size, "canvas side, pixels")->capture_default_str()->check(CLI::PositiveNumber);
  c->add_option("--share", a->sharing, "planes per texture")->capture_default_str()->check(CLI::PositiveNumber);
  c->add_option("--step", a->step, "central difference step")->capture_default_str();
  c->add_option("--tol", a->tol, "relative tolerance")->capture_default_str();
  c->add_option("--json", a->json, "write the table as JSON");
  return {c, [a, &g] { return run_gradcheck(*a, g); }};
}

Command add_bench(CLI::App& root, GlobalConfig& g) {
  auto a = std::make_shared<BenchArgs>();
  CLI::App* c = root.add_subcommand("bench", "measure renderer frames per second");
  c->add_option("--planes", a->planes, "D")->capture_default_str()->check(CLI::PositiveNumber);
  c->add_option("--share", a->share, "K")->capture_default_str()->check(CLI::PositiveNumber);
  c->add_option("--width", a->width, "W")->capture_default_str()->check(CLI::PositiveNumber);
  c->add_option("--height", a->height, "H")->capture_default_str()->check(CLI::PositiveNumber);
  c->add_option("--trials", a->trials, "timed frames")->capture_default_str()->check(CLI::PositiveNumber);
  c->add_option("--warmup", a->warmup, "untimed frames first")->capture_default_str()->check(CLI::NonNegativeNumber);
  c->add_option("--simd", a->simd, "kernel: auto, scalar, avx2 or avx512")
      ->check(CLI::IsMember({"auto", "scalar", "avx2", "avx512"}))
      ->capture_default_str();
  c->add_option("--mpi", a->mpi, "benchmark this MPI at its host view instead of a random scene");
  c->add_option("--padding", a->padding, "canvas margin stripped from the host view with --mpi")
      ->check(CLI::NonNegativeNumber);
  c->add_option("--json", a->json, "write the timings as JSON");
  return {c, [a, &g] { return run_bench(*a, g); }};
}

}  // namespace mpiforge::cli
