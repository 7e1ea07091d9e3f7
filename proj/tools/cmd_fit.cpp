#include <chrono>
#include <cmath>
#include <cstdio>
#include <map>

#include "cli_common.hpp"
#include "mpiforge/container.hpp"
#include "mpiforge/dataset.hpp"
#include "mpiforge/fit.hpp"

namespace mpiforge::cli {

namespace {

struct FitArgs {
  std::string dataset;
  std::string frames = "all";
  int planes = kDefaultPlaneCount;
  int share = kDefaultSharingFactor;
  int padding = kDefaultCanvasPadding;
  PlaneSpacing spacing = PlaneSpacing::Disparity;
  int iters = 2000;
  bool adaptive_depth = false;
  bool refine_poses = false;
  bool exposure = false;
  double val_split = 0.0;
  bool auto_split = false;
  double lr_start = 5e-2;
  double lr_end = 5e-3;
  double depth_lr_ratio = kDepthLearningRateRatio;
  std::string init_depths;
  int val_every = 0;
  int log_every = 100;
  bool no_masks = false;
  std::string out;
};

std::string csv_number(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

int run_fit(const FitArgs& a, const GlobalConfig& g) {
  ManifestLoadOptions lo;
  lo.auto_split = a.auto_split;
  const DatasetManifest m = load_manifest(a.dataset, lo);
  DatasetSetup setup;
  setup.planes = a.planes;
  setup.sharing = a.share;
  setup.padding = a.padding;
  setup.spacing = a.spacing;
  setup.frames = parse_frame_range(a.frames, m.frames.size());
  setup.val_split = a.val_split;
  setup.use_masks = !a.no_masks;
  PreparedDataset data = prepare_dataset(m, setup);

  if (!a.init_depths.empty()) {
    const auto d = parse_numbers(a.init_depths, "--init-depths");
    if (static_cast<int>(d.size()) != a.planes) {
      fail(ErrorCode::MismatchedLayerCount, "--init-depths has " + std::to_string(d.size()) + " values for " +
                                                std::to_string(a.planes) + " planes");
    }
    if (!(d.front() > 0.0) || !strictly_ascending(d)) {
      fail(ErrorCode::InvalidRange, "--init-depths must be positive and strictly ascending");
    }
    for (auto& f : data.frames) f.mpi.init_depths = d;
  }

  // Camera id of every view, captured before the frames move into the optimiser.
  std::vector<std::vector<std::string>> view_ids;
  std::size_t validation_views = 0;
  for (const auto& f : data.frames) {
    auto& ids = view_ids.emplace_back();
    for (const auto& v : f.views) {
      ids.push_back(data.exposure_ids[v.camera_index]);
      validation_views += v.validation;
    }
  }
  spdlog::info("fit: {} frame(s), {} exposure camera(s), {} held-out view(s), D={} K={}", data.frames.size(),
               data.exposure_ids.size(), validation_views, a.planes, a.share);

  FitConfig cfg;
  cfg.iterations = a.iters;
  cfg.lr_start = a.lr_start;
  cfg.lr_end = a.lr_end;
  cfg.depth_lr_ratio = a.depth_lr_ratio;
  cfg.adaptive_depth = a.adaptive_depth;
  cfg.learn_exposure = a.exposure;
  cfg.refine_poses = a.refine_poses;
  cfg.threads = g.worker_threads();
  cfg.val_every = a.val_every;
  const int log_every = a.log_every;
  cfg.on_iteration = [log_every, total = a.iters](int it, const LossBreakdown& l) {
    if (log_every > 0 && (it % log_every == 0 || it + 1 == total)) {
      spdlog::info("iteration {:5d}  loss {:.6g}  l2 {:.6g}", it, l.total, l.l2);
    }
  };

  const auto t0 = std::chrono::steady_clock::now();
  const ExposureCoeffs exposure0(data.exposure_ids.size());
  FitResult r = fit(std::move(data.frames), exposure0, cfg);
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  for (const auto& w : r.warnings) spdlog::warn("{}", w);

  const fs::path out(a.out);
  ensure_dir(out);
  nlohmann::json frames = nlohmann::json::array();
  for (std::size_t f = 0; f < r.mpis.size(); ++f) {
    const std::string name = numbered("frame", data.frame_indices[f], ".mpi");
    write_mpi(out / name, mpi_cast<float>(r.mpis[f]));
    frames.push_back({{"manifest_frame", data.frame_indices[f]},
                      {"mpi", name},
                      {"depths", refined_depths_of(r.mpis[f])}});
  }

  std::string csv = "iteration,l2,grad,perceptual,psnr_val\n";
  for (const auto& h : r.history) {
    csv += std::to_string(h.iteration) + "," + csv_number(h.loss.l2) + "," + csv_number(h.loss.grad) + "," +
           csv_number(h.loss.perceptual) + "," + (h.psnr_val ? csv_number(*h.psnr_val) : std::string()) + "\n";
  }
  write_text_file(out / "history.csv", csv);

  nlohmann::json exp = nlohmann::json::object();
  for (std::size_t i = 0; i < data.exposure_ids.size(); ++i) exp[data.exposure_ids[i]] = exposure_to_json(r.exposure[i]);
  write_json_file(out / "exposure.json", exp);

  nlohmann::json cams = nlohmann::json::array();
  for (std::size_t f = 0; f < r.cameras.size(); ++f) {
    nlohmann::json per = nlohmann::json::object();
    for (std::size_t v = 0; v < r.cameras[f].size(); ++v) per[view_ids[f][v]] = detail::camera_to_json(r.cameras[f][v]);
    cams.push_back({{"manifest_frame", data.frame_indices[f]}, {"cameras", per}});
  }
  write_json_file(out / "cameras.json", cams);

  nlohmann::json summary;
  summary["dataset"] = fs::absolute(a.dataset).lexically_normal().string();
  summary["iterations"] = a.iters;
  summary["planes"] = a.planes;
  summary["sharing"] = a.share;
  summary["padding"] = a.padding;
  summary["adaptive_depth"] = a.adaptive_depth;
  summary["learn_exposure"] = a.exposure;
  summary["refine_poses"] = a.refine_poses;
  summary["final_loss"] = r.history.empty() ? 0.0 : r.history.back().loss.total;
  summary["psnr_val"] = r.final_psnr_val ? nlohmann::json(*r.final_psnr_val) : nlohmann::json();
  summary["frames"] = frames;
  summary["warnings"] = r.warnings;
  write_json_file(out / "summary.json", summary);

  spdlog::info("fit finished in {:.1f} s", seconds);
  if (r.final_psnr_val) {
    std::printf("psnr_val %.4f\n", *r.final_psnr_val);
  } else {
    std::printf("psnr_val none\n");
  }
  return 0;
}

}  // namespace

Command add_fit(CLI::App& root, GlobalConfig& g) {
  auto a = std::make_shared<FitArgs>();
  CLI::App* c = root.add_subcommand("fit", "fit MPIs to a multi-view dataset");
  c->add_option("--dataset", a->dataset, "dataset manifest")->required();
  c->add_option("--frames", a->frames, "'all', N or A-B (inclusive)")->capture_default_str();
  c->add_option("--planes", a->planes, "plane count D")->capture_default_str()->check(CLI::PositiveNumber);
  c->add_option("--share", a->share, "planes per shared texture K")->capture_default_str()->check(CLI::PositiveNumber);
  c->add_option("--padding", a->padding, "canvas margin around the host view, pixels")
      ->capture_default_str()
      ->check(CLI::NonNegativeNumber);
  std::map<std::string, PlaneSpacing> spacings{{"depth", PlaneSpacing::Depth}, {"disparity", PlaneSpacing::Disparity}};
  c->add_option("--spacing", a->spacing, "initial plane spacing")
      ->transform(CLI::CheckedTransformer(spacings, CLI::ignore_case))
      ->option_text("depth|disparity (default disparity)");
  c->add_option("--init-depths", a->init_depths, "explicit initial depths, comma separated");
  c->add_option("--iters", a->iters, "iterations")->capture_default_str()->check(CLI::NonNegativeNumber);
  c->add_flag("--adaptive-depth", a->adaptive_depth, "learn per-plane depth residuals");
  c->add_flag("--refine-poses", a->refine_poses, "alternate content steps with background pose steps");
  c->add_flag("--exposure", a->exposure, "learn per-camera exposure");
  c->add_option("--val-split", a->val_split, "fraction of non-host cameras held out when the manifest names none")
      ->capture_default_str()
      ->check(CLI::Range(0.0, 1.0));
  c->add_flag("--auto-split", a->auto_split, "tag every 16th frame as validation when no frame is tagged");
  c->add_option("--lr-start", a->lr_start, "initial learning rate")->capture_default_str();
  c->add_option("--lr-end", a->lr_end, "final learning rate")->capture_default_str();
  c->add_option("--depth-lr-ratio", a->depth_lr_ratio, "depth learning rate relative to content")->capture_default_str();
  c->add_option("--val-every", a->val_every, "validate every N iterations, 0 = at the end")->capture_default_str();
  c->add_option("--log-every", a->log_every, "log every N iterations, 0 = quiet")->capture_default_str();
  c->add_flag("--no-masks", a->no_masks, "ignore foreground masks");
  c->add_option("--out", a->out, "output directory")->required();
  return {c, [a, &g] { return run_fit(*a, g); }};
}

}  // namespace mpiforge::cli
