#include <cmath>
#include <cstdio>

#include "cli_common.hpp"
#include "mpiforge/container.hpp"
#include "mpiforge/dataset.hpp"
#include "mpiforge/png_io.hpp"
#include "mpiforge/renderer.hpp"

namespace mpiforge::cli {

namespace {

struct ViewArgs {
  std::string mpi;
  std::string camera = "host";
  std::string dataset;
  std::size_t frame = 0;
  int padding = 0;
  double val_split = 0.0;
  std::string exposure;
  std::string out;
  std::string report;
  bool depth = false;
};

void add_view_options(CLI::App* c, ViewArgs& a) {
  c->add_option("--mpi", a.mpi, "MPI container")->required();
  c->add_option("--camera", a.camera,
                "camera JSON file, inline twist 'rx,ry,rz,tx,ty,tz' about the host, 'host', a camera id, or "
                "'heldout' (ids and heldout need --dataset)")
      ->capture_default_str();
  c->add_option("--dataset", a.dataset, "manifest for camera ids, held-out views and PSNR");
  c->add_option("--frame", a.frame, "manifest frame used for camera poses and images")->capture_default_str();
  c->add_option("--padding", a.padding, "canvas margin stripped from the host view for 'host' and inline poses")
      ->capture_default_str()
      ->check(CLI::NonNegativeNumber);
}

ImageD render_color(const Mpi& m, const CameraModel& cam, const GlobalConfig& g, int* degenerate) {
  RenderOptions ro;
  ro.threads = g.worker_threads();
  if (g.precision == Precision::F64) {
    auto r = render_view(mpi_cast<double>(m), cam, ro);
    *degenerate = r.degenerate_planes;
    return std::move(r.color);
  }
  auto r = render_view(m, cam, ro);
  *degenerate = r.degenerate_planes;
  return image_cast<double>(r.color);
}

/// Composited depth shown as normalised disparity: nearest plane white, farthest black,
/// empty pixels black.
ImageD depth_visual(const Mpi& m, const CameraModel& cam, const GlobalConfig& g, double& near, double& far) {
  RenderOptions ro;
  ro.threads = g.worker_threads();
  const ImageD d = g.precision == Precision::F64 ? render_depth(mpi_cast<double>(m), cam, ro)
                                                 : image_cast<double>(render_depth(m, cam, ro));
  const auto depths = refined_depths_of(m);
  near = depths.front();
  far = depths.back();
  ImageD out(d.width, d.height, 1);
  const double lo = 1.0 / far, hi = 1.0 / near;
  for (std::size_t i = 0; i < d.data.size(); ++i) {
    const double z = d.data[i];
    if (!(z > 0.0)) continue;
    out.data[i] = hi > lo ? std::clamp((1.0 / z - lo) / (hi - lo), 0.0, 1.0) : 1.0;
  }
  return out;
}

std::vector<std::string> heldout_cameras(const DatasetManifest& m, std::size_t frame, double val_split) {
  std::vector<std::string> ids = m.val_cameras;
  if (ids.empty()) ids = fractional_val_cameras(m, val_split);
  if (ids.empty() && frame < m.frames.size() && m.frames[frame].is_validation()) {
    for (const auto& c : m.cameras) {
      if (c.id != m.host_camera) ids.push_back(c.id);
    }
  }
  if (ids.empty()) fail(ErrorCode::InvalidArgument, "the dataset names no held-out cameras (try --val-split)");
  return ids;
}

struct Target {
  std::string id;  ///< camera id when the view comes from the dataset
  CameraModel camera;
};

std::vector<Target> resolve_targets(const ViewArgs& a, const Mpi& m, const DatasetManifest* man) {
  const CameraModel base = unpadded_host(m.host_camera, a.padding);
  if (a.camera == "host") return {{"", base}};
  if (a.camera == "heldout") {
    if (!man) fail(ErrorCode::InvalidArgument, "--camera heldout needs --dataset");
    std::vector<Target> out;
    for (const auto& id : heldout_cameras(*man, a.frame, a.val_split)) {
      out.push_back({id, parse_camera(id, base, man, a.frame)});
    }
    return out;
  }
  const CameraModel cam = parse_camera(a.camera, base, man, a.frame);
  const bool is_id = man && man->camera_index(a.camera) >= 0;
  return {{is_id ? a.camera : "", cam}};
}

fs::path output_for(const fs::path& out, const Target& t, std::size_t count) {
  if (count == 1 && out.extension() == ".png") return out;
  if (out.extension() == ".png") fail(ErrorCode::InvalidArgument, "several views: --out must be a directory");
  return out / ((t.id.empty() ? std::string("view") : t.id) + ".png");
}

int run_render(const ViewArgs& a, const GlobalConfig& g) {
  const Mpi m = read_mpi(a.mpi);
  std::optional<DatasetManifest> man;
  if (!a.dataset.empty()) man = load_manifest(a.dataset);
  std::optional<nlohmann::json> exposure;
  if (!a.exposure.empty()) exposure = read_json_file(a.exposure);
  const auto targets = resolve_targets(a, m, man ? &*man : nullptr);

  nlohmann::json report = nlohmann::json::array();
  double pooled_sq = 0.0;
  std::size_t pooled_n = 0;
  for (const auto& t : targets) {
    const fs::path path = output_for(a.out, t, targets.size());
    if (a.depth) {
      double near, far;
      write_png_unit(path, depth_visual(m, t.camera, g, near, far));
      continue;
    }
    int degenerate = 0;
    ImageD color = render_color(m, t.camera, g, &degenerate);
    if (degenerate > 0) spdlog::warn("{} plane(s) pass through the camera centre and were skipped", degenerate);
    if (exposure && !t.id.empty()) {
      if (const auto e = exposure_for(*exposure, t.id)) color = apply_exposure(color, *e);
    }
    write_png_unit(path, color);
    if (man && !t.id.empty()) {
      const auto& mf = man->frames.at(a.frame);
      const auto it = mf.images.find(t.id);
      if (it == mf.images.end()) continue;
      const ImageD ref = read_rgb_unit(man->resolve(it->second));
      const double mse = mean_squared_error(color, ref);
      pooled_sq += mse * double(ref.data.size());
      pooled_n += ref.data.size();
      std::printf("psnr %s %.4f\n", t.id.c_str(), psnr_from_mse(mse));
      report.push_back({{"camera", t.id}, {"psnr", psnr_from_mse(mse)}, {"image", path.filename().string()}});
    }
  }
  if (pooled_n > 0) {
    const double pooled = psnr_from_mse(pooled_sq / double(pooled_n));
    std::printf("psnr_pooled %.4f\n", pooled);
    if (!a.report.empty()) write_json_file(a.report, {{"views", report}, {"psnr_pooled", pooled}});
  }
  return 0;
}

struct OrbitArgs {
  ViewArgs view;
  int count = 36;
  double radius = -1.0;
  double focus = -1.0;
};

int run_orbit(const OrbitArgs& o, const GlobalConfig& g) {
  const Mpi m = read_mpi(o.view.mpi);
  const CameraModel base = unpadded_host(m.host_camera, o.view.padding);
  const auto depths = refined_depths_of(m);
  const double focus = o.focus > 0.0 ? o.focus : 0.5 * (depths.front() + depths.back());
  const double radius = o.radius >= 0.0 ? o.radius : 0.05 * depths.front();
  const Matrix3 r_wc = base.pose.rotation.transpose();  // camera axes in world coordinates
  const Vector3 centre = base.center();
  const Vector3 target = centre + focus * r_wc.col(2);

  const fs::path out(o.view.out);
  ensure_dir(out);
  nlohmann::json frames = nlohmann::json::array();
  for (int k = 0; k < o.count; ++k) {
    const double theta = 2.0 * M_PI * k / o.count;
    const Vector3 eye = centre + radius * (std::cos(theta) * r_wc.col(0) + std::sin(theta) * r_wc.col(1));
    CameraModel cam = base;
    cam.pose = look_at(eye, target, r_wc.col(1));
    const std::string name = numbered("frame", static_cast<std::size_t>(k), ".png");
    if (o.view.depth) {
      double near, far;
      write_png_unit(out / name, depth_visual(m, cam, g, near, far));
    } else {
      int degenerate = 0;
      write_png_unit(out / name, render_color(m, cam, g, &degenerate));
    }
    frames.push_back({{"image", name}, {"camera", detail::camera_to_json(cam)}});
  }
  write_json_file(out / "orbit.json", {{"radius", radius}, {"focus", focus}, {"frames", frames}});
  spdlog::info("orbit: {} frames in {}", o.count, out.string());
  return 0;
}

int run_depthmap(const ViewArgs& a, const GlobalConfig& g) {
  const Mpi m = read_mpi(a.mpi);
  std::optional<DatasetManifest> man;
  if (!a.dataset.empty()) man = load_manifest(a.dataset, {.check_files = false});
  const auto targets = resolve_targets(a, m, man ? &*man : nullptr);
  for (const auto& t : targets) {
    const fs::path path = output_for(a.out, t, targets.size());
    double near, far;
    write_png_unit(path, depth_visual(m, t.camera, g, near, far));
    fs::path side = path;
    side.replace_extension(".json");
    write_json_file(side, {{"encoding", "disparity"},
                           {"near", near},
                           {"far", far},
                           {"note", "v = (1/z - 1/far) / (1/near - 1/far); 0 where nothing is composited"}});
  }
  return 0;
}

}  // namespace

Command add_render(CLI::App& root, GlobalConfig& g) {
  auto a = std::make_shared<ViewArgs>();
  CLI::App* c = root.add_subcommand("render", "render an MPI into a camera");
  add_view_options(c, *a);
  c->add_option("--out", a->out, "output PNG, or a directory when several views are rendered")->required();
  c->add_flag("--depth", a->depth, "write the composited depth instead of colour");
  c->add_option("--exposure", a->exposure, "exposure.json from fit, applied to dataset cameras");
  c->add_option("--val-split", a->val_split, "held-out fraction when the dataset names no validation cameras")
      ->check(CLI::Range(0.0, 1.0));
  c->add_option("--report", a->report, "write per-view PSNR as JSON");
  return {c, [a, &g] { return run_render(*a, g); }};
}

Command add_orbit(CLI::App& root, GlobalConfig& g) {
  auto o = std::make_shared<OrbitArgs>();
  CLI::App* c = root.add_subcommand("orbit", "render a circular camera path around the host view");
  c->add_option("--mpi", o->view.mpi, "MPI container")->required();
  c->add_option("--padding", o->view.padding, "canvas margin stripped from the host view")
      ->capture_default_str()
      ->check(CLI::NonNegativeNumber);
  c->add_option("--count", o->count, "frames on the circle")->capture_default_str()->check(CLI::PositiveNumber);
  c->add_option("--radius", o->radius, "circle radius in scene units (default 5% of the nearest depth)");
  c->add_option("--focus", o->focus, "depth of the look-at point (default mid-range)");
  c->add_flag("--depth", o->view.depth, "render depth instead of colour");
  c->add_option("--out", o->view.out, "output directory")->required();
  return {c, [o, &g] { return run_orbit(*o, g); }};
}

Command add_depthmap(CLI::App& root, GlobalConfig& g) {
  auto a = std::make_shared<ViewArgs>();
  CLI::App* c = root.add_subcommand("depthmap", "render the composited plane depth as a PNG plus JSON range");
  add_view_options(c, *a);
  c->add_option("--out", a->out, "output PNG, or a directory when several views are rendered")->required();
  c->add_option("--val-split", a->val_split, "held-out fraction when the dataset names no validation cameras")
      ->check(CLI::Range(0.0, 1.0));
  return {c, [a, &g] { return run_depthmap(*a, g); }};
}

}  // namespace mpiforge::cli
