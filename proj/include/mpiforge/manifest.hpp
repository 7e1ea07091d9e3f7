#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mpiforge/errors.hpp"
#include "mpiforge/geometry.hpp"
#include "mpiforge/motion.hpp"

namespace mpiforge {

inline constexpr int kManifestVersion = 1;
inline constexpr int kAutoSplitPeriod = 16;

struct ManifestCamera {
  std::string id;
  Matrix3 intrinsics = Matrix3::Identity();
  int width = 0;
  int height = 0;
  std::vector<RigidTransform> poses;  ///< one static pose, or one per frame

  CameraModel camera(std::size_t frame) const {
    CameraModel c;
    c.intrinsics = intrinsics;
    c.width = width;
    c.height = height;
    c.pose = poses.size() == 1 ? poses[0] : poses.at(frame);
    return c;
  }
};

struct ManifestFrame {
  double timestamp = 0.0;
  std::string split;  ///< "train", "val", or empty (untagged)
  std::map<std::string, std::string> images;  ///< camera id -> path relative to the manifest
  std::map<std::string, std::string> masks;
  std::optional<KeypointSet> keypoints;

  bool is_validation() const { return split == "val"; }
};

struct DatasetManifest {
  int version = kManifestVersion;
  std::vector<ManifestCamera> cameras;
  std::vector<ManifestFrame> frames;
  std::string host_camera;
  double near = 1.0;
  double far = 10.0;
  bool shared_intrinsics = false;
  std::vector<std::string> val_cameras;  ///< cameras held out in every frame
  std::filesystem::path base_dir;        ///< directory relative paths resolve against; not serialised

  int camera_index(const std::string& id) const {
    for (std::size_t i = 0; i < cameras.size(); ++i) {
      if (cameras[i].id == id) return static_cast<int>(i);
    }
    return -1;
  }
  int host_index() const { return camera_index(host_camera); }
  bool is_val_camera(const std::string& id) const {
    return std::find(val_cameras.begin(), val_cameras.end(), id) != val_cameras.end();
  }
  std::filesystem::path resolve(const std::string& rel) const {
    const std::filesystem::path p(rel);
    return p.is_absolute() ? p : base_dir / p;
  }
};

struct ManifestLoadOptions {
  bool check_files = true;
  bool auto_split = false;  ///< tag every 16th frame "val" when no frame carries a split tag
};

namespace detail {

using nlohmann::json;

[[noreturn]] inline void schema_fail(const std::string& pointer, const std::string& what) {
  throw Error(ErrorCode::SchemaError, (pointer.empty() ? "/" : pointer) + ": " + what);
}

inline const json& need(const json& j, const std::string& key, const std::string& ptr) {
  if (!j.is_object()) schema_fail(ptr, "expected an object");
  const auto it = j.find(key);
  if (it == j.end()) schema_fail(ptr + "/" + key, "missing field");
  return *it;
}

inline double need_number(const json& j, const std::string& ptr) {
  if (!j.is_number()) schema_fail(ptr, "expected a number");
  return j.get<double>();
}

inline int need_int(const json& j, const std::string& ptr) {
  if (!j.is_number_integer()) schema_fail(ptr, "expected an integer");
  return j.get<int>();
}

inline std::string need_string(const json& j, const std::string& ptr) {
  if (!j.is_string()) schema_fail(ptr, "expected a string");
  return j.get<std::string>();
}

inline std::vector<double> need_numbers(const json& j, std::size_t n, const std::string& ptr) {
  if (!j.is_array() || j.size() != n) schema_fail(ptr, "expected an array of " + std::to_string(n) + " numbers");
  std::vector<double> v;
  for (std::size_t i = 0; i < n; ++i) v.push_back(need_number(j[i], ptr + "/" + std::to_string(i)));
  return v;
}

inline RigidTransform pose_from_json(const json& j, const std::string& ptr) {
  const auto v = need_numbers(j, 12, ptr);
  RigidTransform t;
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) t.rotation(r, c) = v[r * 4 + c];
    t.translation(r) = v[r * 4 + 3];
  }
  if (!t.is_valid()) schema_fail(ptr, "rotation is not orthonormal with determinant +1");
  return t;
}

inline json pose_to_json(const RigidTransform& t) {
  json a = json::array();
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) a.push_back(t.rotation(r, c));
    a.push_back(t.translation(r));
  }
  return a;
}

inline KeypointList keypoints_from_json(const json& j, const std::string& ptr) {
  if (!j.is_array()) schema_fail(ptr, "expected an array of [x, y, visible]");
  KeypointList out;
  for (std::size_t i = 0; i < j.size(); ++i) {
    const std::string p = ptr + "/" + std::to_string(i);
    if (!j[i].is_array() || (j[i].size() != 2 && j[i].size() != 3)) schema_fail(p, "expected [x, y] or [x, y, visible]");
    Keypoint k;
    k.p = Point2(need_number(j[i][0], p + "/0"), need_number(j[i][1], p + "/1"));
    if (j[i].size() == 3) k.visible = need_number(j[i][2], p + "/2") != 0.0;
    out.push_back(k);
  }
  return out;
}

inline json keypoints_to_json(const KeypointList& l) {
  json a = json::array();
  for (const auto& k : l) a.push_back({k.p.x(), k.p.y(), k.visible ? 1 : 0});
  return a;
}

inline KeypointSet keypoint_set_from_json(const json& j, const std::string& ptr, double timestamp) {
  if (!j.is_object()) schema_fail(ptr, "expected an object");
  KeypointSet k;
  k.timestamp = timestamp;
  const std::pair<const char*, KeypointList*> parts[] = {
      {"face", &k.face}, {"body", &k.body}, {"left_hand", &k.left_hand}, {"right_hand", &k.right_hand}};
  for (const auto& [name, dst] : parts) {
    if (j.contains(name)) *dst = keypoints_from_json(j.at(name), ptr + "/" + name);
  }
  try {
    k.validate();
  } catch (const Error& e) {
    schema_fail(ptr, e.detail());
  }
  return k;
}

inline json keypoint_set_to_json(const KeypointSet& k) {
  json j = json::object();
  if (!k.face.empty()) j["face"] = keypoints_to_json(k.face);
  if (!k.body.empty()) j["body"] = keypoints_to_json(k.body);
  if (!k.left_hand.empty()) j["left_hand"] = keypoints_to_json(k.left_hand);
  if (!k.right_hand.empty()) j["right_hand"] = keypoints_to_json(k.right_hand);
  return j;
}

}  // namespace detail

inline DatasetManifest manifest_from_json(const nlohmann::json& j) {
  using detail::need;
  DatasetManifest m;
  if (!j.is_object()) detail::schema_fail("", "expected an object");
  m.version = detail::need_int(need(j, "version", ""), "/version");
  if (m.version != kManifestVersion) detail::schema_fail("/version", "unsupported manifest version");
  m.host_camera = detail::need_string(need(j, "host_camera", ""), "/host_camera");
  m.near = detail::need_number(need(j, "near", ""), "/near");
  m.far = detail::need_number(need(j, "far", ""), "/far");
  if (!(m.near > 0.0) || !(m.far > m.near)) detail::schema_fail("/far", "require 0 < near < far");
  if (j.contains("shared_intrinsics")) {
    if (!j["shared_intrinsics"].is_boolean()) detail::schema_fail("/shared_intrinsics", "expected a boolean");
    m.shared_intrinsics = j["shared_intrinsics"].get<bool>();
  }

  const auto& frames = need(j, "frames", "");
  if (!frames.is_array() || frames.empty()) detail::schema_fail("/frames", "expected a non-empty array");
  const auto& cams = need(j, "cameras", "");
  if (!cams.is_array() || cams.empty()) detail::schema_fail("/cameras", "expected a non-empty array");

  std::set<std::string> ids;
  for (std::size_t i = 0; i < cams.size(); ++i) {
    const std::string ptr = "/cameras/" + std::to_string(i);
    ManifestCamera c;
    c.id = detail::need_string(need(cams[i], "id", ptr), ptr + "/id");
    if (!ids.insert(c.id).second) detail::schema_fail(ptr + "/id", "duplicate camera id '" + c.id + "'");
    const auto k = detail::need_numbers(need(cams[i], "intrinsics", ptr), 9, ptr + "/intrinsics");
    for (int r = 0; r < 3; ++r) {
      for (int col = 0; col < 3; ++col) c.intrinsics(r, col) = k[r * 3 + col];
    }
    c.width = detail::need_int(need(cams[i], "width", ptr), ptr + "/width");
    c.height = detail::need_int(need(cams[i], "height", ptr), ptr + "/height");
    const bool has_pose = cams[i].contains("pose"), has_poses = cams[i].contains("poses");
    if (has_pose == has_poses) detail::schema_fail(ptr, "exactly one of 'pose' or 'poses' is required");
    if (has_pose) {
      c.poses.push_back(detail::pose_from_json(cams[i]["pose"], ptr + "/pose"));
    } else {
      const auto& ps = cams[i]["poses"];
      if (!ps.is_array() || ps.size() != frames.size()) {
        detail::schema_fail(ptr + "/poses", "expected one pose per frame");
      }
      for (std::size_t f = 0; f < ps.size(); ++f) {
        c.poses.push_back(detail::pose_from_json(ps[f], ptr + "/poses/" + std::to_string(f)));
      }
    }
    try {
      c.camera(0).validate();
    } catch (const Error& e) {
      detail::schema_fail(ptr, e.detail());
    }
    m.cameras.push_back(std::move(c));
  }
  if (m.host_index() < 0) detail::schema_fail("/host_camera", "unknown camera '" + m.host_camera + "'");
  if (m.shared_intrinsics) {
    for (std::size_t i = 1; i < m.cameras.size(); ++i) {
      if (m.cameras[i].intrinsics != m.cameras[0].intrinsics) {
        detail::schema_fail("/cameras/" + std::to_string(i) + "/intrinsics", "differs from shared intrinsics");
      }
    }
  }
  if (j.contains("val_cameras")) {
    const auto& vc = j["val_cameras"];
    if (!vc.is_array()) detail::schema_fail("/val_cameras", "expected an array");
    for (std::size_t i = 0; i < vc.size(); ++i) {
      const std::string id = detail::need_string(vc[i], "/val_cameras/" + std::to_string(i));
      if (!ids.count(id)) detail::schema_fail("/val_cameras/" + std::to_string(i), "unknown camera '" + id + "'");
      m.val_cameras.push_back(id);
    }
  }

  for (std::size_t f = 0; f < frames.size(); ++f) {
    const std::string ptr = "/frames/" + std::to_string(f);
    const auto& fr = frames[f];
    ManifestFrame out;
    out.timestamp = detail::need_number(need(fr, "timestamp", ptr), ptr + "/timestamp");
    if (fr.contains("split")) {
      out.split = detail::need_string(fr["split"], ptr + "/split");
      if (out.split != "train" && out.split != "val") detail::schema_fail(ptr + "/split", "expected 'train' or 'val'");
    }
    auto read_paths = [&](const char* key, std::map<std::string, std::string>& dst) {
      if (!fr.contains(key)) return;
      const auto& obj = fr[key];
      if (!obj.is_object()) detail::schema_fail(ptr + "/" + key, "expected an object keyed by camera id");
      for (auto it = obj.begin(); it != obj.end(); ++it) {
        const std::string p = ptr + "/" + key + "/" + it.key();
        if (!ids.count(it.key())) detail::schema_fail(p, "unknown camera '" + it.key() + "'");
        dst[it.key()] = detail::need_string(it.value(), p);
      }
    };
    read_paths("images", out.images);
    read_paths("masks", out.masks);
    if (fr.contains("keypoints")) out.keypoints = detail::keypoint_set_from_json(fr["keypoints"], ptr + "/keypoints", out.timestamp);
    m.frames.push_back(std::move(out));
  }
  return m;
}

inline nlohmann::json manifest_to_json(const DatasetManifest& m) {
  nlohmann::json j;
  j["version"] = m.version;
  j["host_camera"] = m.host_camera;
  j["near"] = m.near;
  j["far"] = m.far;
  j["shared_intrinsics"] = m.shared_intrinsics;
  if (!m.val_cameras.empty()) j["val_cameras"] = m.val_cameras;
  nlohmann::json cams = nlohmann::json::array();
  for (const auto& c : m.cameras) {
    nlohmann::json cj;
    cj["id"] = c.id;
    nlohmann::json k = nlohmann::json::array();
    for (int r = 0; r < 3; ++r) {
      for (int col = 0; col < 3; ++col) k.push_back(c.intrinsics(r, col));
    }
    cj["intrinsics"] = k;
    cj["width"] = c.width;
    cj["height"] = c.height;
    if (c.poses.size() == 1) {
      cj["pose"] = detail::pose_to_json(c.poses[0]);
    } else {
      nlohmann::json ps = nlohmann::json::array();
      for (const auto& p : c.poses) ps.push_back(detail::pose_to_json(p));
      cj["poses"] = ps;
    }
    cams.push_back(cj);
  }
  j["cameras"] = cams;
  nlohmann::json frames = nlohmann::json::array();
  for (const auto& f : m.frames) {
    nlohmann::json fj;
    fj["timestamp"] = f.timestamp;
    if (!f.split.empty()) fj["split"] = f.split;
    if (!f.images.empty()) fj["images"] = f.images;
    if (!f.masks.empty()) fj["masks"] = f.masks;
    if (f.keypoints) fj["keypoints"] = detail::keypoint_set_to_json(*f.keypoints);
    frames.push_back(fj);
  }
  j["frames"] = frames;
  return j;
}

/// Paths of image and mask files the manifest references but that do not exist.
inline std::vector<std::string> missing_files(const DatasetManifest& m) {
  std::vector<std::string> missing;
  for (const auto& f : m.frames) {
    for (const auto* group : {&f.images, &f.masks}) {
      for (const auto& [id, rel] : *group) {
        std::error_code ec;
        if (!std::filesystem::is_regular_file(m.resolve(rel), ec)) missing.push_back(m.resolve(rel).string());
      }
    }
  }
  return missing;
}

/// Tag frame i as validation when (i + 1) is a multiple of `period`, the rest as training.
inline void apply_auto_split(DatasetManifest& m, int period = kAutoSplitPeriod) {
  for (std::size_t i = 0; i < m.frames.size(); ++i) {
    m.frames[i].split = ((i + 1) % static_cast<std::size_t>(period) == 0) ? "val" : "train";
  }
}

inline DatasetManifest load_manifest(const std::filesystem::path& path, const ManifestLoadOptions& opts = {}) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::BadPath, path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::SchemaError, std::string("/: ") + e.what());
  }
  DatasetManifest m = manifest_from_json(j);
  m.base_dir = path.has_parent_path() ? path.parent_path() : std::filesystem::path(".");
  if (opts.check_files) {
    const auto missing = missing_files(m);
    if (!missing.empty()) {
      std::string list;
      for (const auto& p : missing) list += (list.empty() ? "" : ", ") + p;
      throw Error(ErrorCode::MissingFile, list);
    }
  }
  if (opts.auto_split) {
    const bool tagged = std::any_of(m.frames.begin(), m.frames.end(), [](const auto& f) { return !f.split.empty(); });
    if (!tagged) apply_auto_split(m);
  }
  return m;
}

/// Canonical JSON: sorted keys, two-space indent, shortest round-trip numbers.
inline std::string manifest_to_string(const DatasetManifest& m) { return manifest_to_json(m).dump(2) + "\n"; }

inline void save_manifest(const std::filesystem::path& path, const DatasetManifest& m) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  out << manifest_to_string(m);
}

}  // namespace mpiforge
