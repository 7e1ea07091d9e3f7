#include <cstdio>
#include <map>

#include "cli_common.hpp"
#include "mpiforge/container.hpp"
#include "mpiforge/export_web.hpp"
#include "mpiforge/synth.hpp"

namespace mpiforge::cli {

namespace {

struct SynthArgs {
  SynthSpec spec;
  std::string out;
};

int run_synth(SynthArgs a, const GlobalConfig& g) {
  a.spec.seed = g.seed;
  SynthScene s = synth_scene(a.spec);
  write_synth_dataset(a.out, s);
  std::size_t held = 0;
  for (bool v : s.validation) held += v;
  spdlog::info("synth: {} cameras ({} held out), {} planes, written to {}", s.ids.size(), held, s.truth.planes, a.out);
  std::printf("manifest %s\n", (fs::path(a.out) / "manifest.json").string().c_str());
  return 0;
}

struct ExportArgs {
  std::vector<std::string> inputs;
  double fps = 30.0;
  std::string out;
};

int run_export(const ExportArgs& a) {
  std::vector<BundleFrame> frames;
  auto add = [&](const fs::path& mpi, std::optional<double> ts) {
    BundleFrame f{read_mpi(mpi), 0.0};
    f.timestamp = ts.value_or(double(frames.size()) / a.fps);
    frames.push_back(std::move(f));
  };
  for (const auto& in : a.inputs) {
    std::error_code ec;
    if (!fs::is_directory(in, ec)) {
      add(in, std::nullopt);
      continue;
    }
    // A fit output directory: frames in summary order, timestamps from the dataset when it is still readable.
    const fs::path dir(in);
    const nlohmann::json summary = read_json_file(dir / "summary.json");
    std::optional<DatasetManifest> man;
    try {
      man = load_manifest(summary.at("dataset").get<std::string>(), {.check_files = false});
    } catch (const std::exception&) {
      spdlog::debug("export-web: dataset of {} unavailable, timestamps from --fps", in);
    }
    for (const auto& f : summary.at("frames")) {
      std::optional<double> ts;
      const std::size_t mf = f.at("manifest_frame").get<std::size_t>();
      if (man && mf < man->frames.size()) ts = man->frames[mf].timestamp;
      add(dir / f.at("mpi").get<std::string>(), ts);
    }
  }
  export_web(frames, a.out);
  spdlog::info("export-web: {} frame(s) written to {}", frames.size(), a.out);
  return 0;
}

}  // namespace

Command add_synth(CLI::App& root, GlobalConfig& g) {
  auto a = std::make_shared<SynthArgs>();
  SynthSpec& s = a->spec;
  CLI::App* c = root.add_subcommand("synth", "generate a synthetic multi-view dataset with known ground truth");
  c->add_option("--planes", s.planes, "ground-truth planes")->capture_default_str()->check(CLI::PositiveNumber);
  c->add_option("--share", s.sharing, "planes per texture")->capture_default_str()->check(CLI::PositiveNumber);
  c->add_option("--near", s.near, "nearest plane depth")->capture_default_str();
  c->add_option("--far", s.far, "farthest plane depth")->capture_default_str();
  std::map<std::string, TextureKind> kinds{{"smooth", TextureKind::Smooth}, {"checker", TextureKind::Checker}};
  c->add_option("--texture", s.texture, "texture kind")
      ->transform(CLI::CheckedTransformer(kinds, CLI::ignore_case))
      ->option_text("smooth|checker (default smooth)");
  c->add_option("--period-min", s.texture_period_min, "shortest smooth texture wavelength, pixels")->capture_default_str();
  c->add_option("--period-max", s.texture_period_max, "longest smooth texture wavelength, pixels")->capture_default_str();
  c->add_option("--train-cameras", s.train_cameras, "training cameras including the host")->capture_default_str();
  c->add_option("--val-cameras", s.val_cameras, "held-out cameras")->capture_default_str();
  c->add_option("--width", s.width, "image width")->capture_default_str();
  c->add_option("--height", s.height, "image height")->capture_default_str();
  c->add_option("--padding", s.padding, "canvas margin of the ground-truth MPI")->capture_default_str();
  c->add_option("--focal", s.focal, "focal length, pixels")->capture_default_str();
  c->add_option("--baseline", s.baseline, "camera centres lie within this radius of the host")->capture_default_str();
  c->add_flag("--inject-exposure", s.inject_exposure, "apply random exposure to non-host cameras");
  c->add_option("--pose-noise-rotation", s.pose_noise_rotation_deg, "max rotation error of reported poses, degrees")
      ->capture_default_str();
  c->add_option("--pose-noise-translation", s.pose_noise_translation,
                "max translation error of reported poses, fraction of --far")
      ->capture_default_str();
  c->add_option("--out", a->out, "dataset directory")->required();
  return {c, [a, &g] { return run_synth(*a, g); }};
}

Command add_export_web(CLI::App& root, GlobalConfig&) {
  auto a = std::make_shared<ExportArgs>();
  CLI::App* c = root.add_subcommand("export-web", "write a viewer bundle (index.json plus PNG atlases)");
  c->add_option("inputs", a->inputs, "MPI containers or fit output directories, in playback order")->required()->take_all();
  c->add_option("--fps", a->fps, "timestamps for inputs without a dataset")->capture_default_str()->check(CLI::PositiveNumber);
  c->add_option("--out", a->out, "bundle directory")->required();
  return {c, [a] { return run_export(*a); }};
}

}  // namespace mpiforge::cli
