#include <algorithm>
#include <cstdio>
#include <map>

#include "cli_common.hpp"
#include "mpiforge/motion.hpp"
#include "mpiforge/png_io.hpp"

namespace mpiforge::cli {

namespace {

std::vector<KeypointSet> manifest_keypoints(const DatasetManifest& m, const std::string& what) {
  std::vector<KeypointSet> out;
  bool any = false;
  for (const auto& f : m.frames) {
    KeypointSet k = f.keypoints.value_or(KeypointSet{});
    k.timestamp = f.timestamp;
    any = any || f.keypoints.has_value();
    out.push_back(std::move(k));
  }
  if (!any) fail(ErrorCode::SchemaError, what + ": no frame carries keypoints");
  return out;
}

nlohmann::json keypoint_frame_json(const KeypointSet& k) {
  nlohmann::json j = detail::keypoint_set_to_json(k);
  j["timestamp"] = k.timestamp;
  return j;
}

struct RetargetArgs {
  std::string source;
  std::string driving;
  std::string mode = "all";
  int anchor_frame = 0;
  std::string body_tree;
  std::string hand_tree;
  std::string face_metric = "centroid";
  bool literal = false;
  std::string out;
};

int run_retarget(const RetargetArgs& a) {
  const ManifestLoadOptions lo{.check_files = false};
  const auto source = manifest_keypoints(load_manifest(a.source, lo), "--source");
  const auto driving = manifest_keypoints(load_manifest(a.driving, lo), "--driving");

  RetargetOptions opts;
  static const std::map<std::string, unsigned> modes{
      {"face", kRetargetFace}, {"body", kRetargetBody}, {"hands", kRetargetHands}, {"all", kRetargetAll}};
  opts.parts = modes.at(a.mode);
  opts.anchor_frame = a.anchor_frame;
  if (!a.body_tree.empty()) opts.body = load_tree(a.body_tree);
  if (!a.hand_tree.empty()) opts.hand = load_tree(a.hand_tree);
  opts.face_metric = a.face_metric == "raw" ? FaceMetric::Raw : FaceMetric::CentroidAligned;
  opts.literal_max_length = a.literal;
  const RetargetResult r = retarget_sequence(source, driving, opts);

  const fs::path out(a.out);
  ensure_dir(out);
  nlohmann::json index = nlohmann::json::array();
  for (std::size_t f = 0; f < r.frames.size(); ++f) {
    KeypointSet k = r.frames[f];
    k.timestamp = driving[f].timestamp;
    const std::string name = numbered("frame", f, ".json");
    write_json_file(out / name, keypoint_frame_json(k));
    index.push_back({{"file", name}, {"timestamp", k.timestamp}, {"face_nearest", r.face_nearest[f]}});
  }
  write_json_file(out / "retarget.json", {{"mode", a.mode},
                                          {"anchor_frame", a.anchor_frame},
                                          {"degenerate_limbs", r.degenerate_limbs},
                                          {"frames", index}});
  if (r.degenerate_limbs > 0) spdlog::warn("{} zero-length driving limb(s) kept their parent direction", r.degenerate_limbs);
  spdlog::info("retarget: {} frame(s) written to {}", r.frames.size(), out.string());
  return 0;
}

struct RasterizeArgs {
  std::vector<std::string> inputs;
  int width = 0;
  int height = 0;
  double limb_width = 4.0;
  double joint_radius = 3.0;
  std::string out;
};

/// Keypoint sets from a frame JSON, a directory of them, or a manifest with keypoints.
std::vector<std::pair<std::string, KeypointSet>> load_keypoint_inputs(const std::vector<std::string>& inputs,
                                                                      int& width, int& height) {
  std::vector<fs::path> files;
  for (const auto& in : inputs) {
    std::error_code ec;
    if (fs::is_directory(in, ec)) {
      std::vector<fs::path> found;
      for (const auto& e : fs::directory_iterator(in)) {
        if (e.path().extension() == ".json" && e.path().filename() != "retarget.json") found.push_back(e.path());
      }
      std::sort(found.begin(), found.end());
      files.insert(files.end(), found.begin(), found.end());
    } else if (fs::is_regular_file(in, ec)) {
      files.emplace_back(in);
    } else {
      fail(ErrorCode::BadPath, in);
    }
  }
  std::vector<std::pair<std::string, KeypointSet>> out;
  for (const auto& path : files) {
    const nlohmann::json j = read_json_file(path);
    if (j.is_object() && j.contains("frames") && j.contains("cameras")) {
      DatasetManifest m = manifest_from_json(j);
      const int host = m.host_index();
      if (host >= 0 && width == 0 && height == 0) {
        width = m.cameras[host].width;
        height = m.cameras[host].height;
      }
      for (std::size_t f = 0; f < m.frames.size(); ++f) {
        if (!m.frames[f].keypoints) continue;
        out.emplace_back(path.stem().string() + numbered("", f, ""), *m.frames[f].keypoints);
      }
    } else {
      const double ts = j.is_object() && j.contains("timestamp") && j["timestamp"].is_number() ? j["timestamp"].get<double>() : 0.0;
      out.emplace_back(path.stem().string(), detail::keypoint_set_from_json(j, "", ts));
    }
  }
  if (out.empty()) fail(ErrorCode::InvalidArgument, "no keypoints found in the inputs");
  return out;
}

int run_rasterize(const RasterizeArgs& a) {
  int w = a.width, h = a.height;
  const auto sets = load_keypoint_inputs(a.inputs, w, h);
  if (w <= 0 || h <= 0) fail(ErrorCode::InvalidArgument, "--width and --height are required for keypoint files");
  PoseStyle style = default_pose_style();
  style.limb_width = a.limb_width;
  style.joint_radius = a.joint_radius;
  const fs::path out(a.out);
  if (sets.size() == 1 && out.extension() == ".png") {
    write_png(out, rasterize_pose(sets[0].second, w, h, style));
    return 0;
  }
  ensure_dir(out);
  for (const auto& [name, k] : sets) write_png(out / (name + ".png"), rasterize_pose(k, w, h, style));
  spdlog::info("rasterize: {} image(s) written to {}", sets.size(), out.string());
  return 0;
}

}  // namespace

Command add_retarget(CLI::App& root, GlobalConfig&) {
  auto a = std::make_shared<RetargetArgs>();
  CLI::App* c = root.add_subcommand("retarget", "transfer driving keypoints onto the source character");
  c->add_option("--source", a->source, "manifest with the source character's keypoints")->required();
  c->add_option("--driving", a->driving, "manifest with the driving keypoints")->required();
  c->add_option("--mode", a->mode, "parts to transfer")
      ->check(CLI::IsMember({"face", "body", "hands", "all"}))
      ->capture_default_str();
  c->add_option("--anchor-frame", a->anchor_frame, "source frame anchoring the root and the face reference")
      ->capture_default_str();
  c->add_option("--body-tree", a->body_tree, "body skeleton JSON (default built in)");
  c->add_option("--hand-tree", a->hand_tree, "hand skeleton JSON (default built in)");
  c->add_option("--face-metric", a->face_metric, "nearest-face distance")
      ->check(CLI::IsMember({"centroid", "raw"}))
      ->capture_default_str();
  c->add_flag("--literal-max-length", a->literal, "scale each limb by source max over driving max length");
  c->add_option("--out", a->out, "output directory of per-frame keypoint JSON")->required();
  return {c, [a] { return run_retarget(*a); }};
}

Command add_rasterize(CLI::App& root, GlobalConfig&) {
  auto a = std::make_shared<RasterizeArgs>();
  CLI::App* c = root.add_subcommand("rasterize", "draw keypoints as colour-coded skeleton images");
  c->add_option("inputs", a->inputs, "keypoint JSON files, directories of them, or manifests")->required()->take_all();
  c->add_option("--width", a->width, "canvas width (default: host camera of a manifest)");
  c->add_option("--height", a->height, "canvas height");
  c->add_option("--limb-width", a->limb_width, "limb stroke width, pixels")->capture_default_str();
  c->add_option("--joint-radius", a->joint_radius, "joint disc radius, pixels")->capture_default_str();
  c->add_option("--out", a->out, "output PNG for a single set, else a directory")->required();
  return {c, [a] { return run_rasterize(*a); }};
}

}  // namespace mpiforge::cli
