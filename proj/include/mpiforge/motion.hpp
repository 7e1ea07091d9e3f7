#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "mpiforge/errors.hpp"
#include "mpiforge/image.hpp"

namespace mpiforge {

using Point2 = Eigen::Vector2d;

inline constexpr int kFacePoints = 468;
inline constexpr int kBodyPoints = 33;
inline constexpr int kHandPoints = 21;
inline constexpr double kDegenerateLimbEps = 1e-6;

struct Keypoint {
  Point2 p = Point2::Zero();
  bool visible = true;
  friend bool operator==(const Keypoint&, const Keypoint&) = default;
};

using KeypointList = std::vector<Keypoint>;

/// Landmarks of one frame. A part left empty was not detected.
struct KeypointSet {
  double timestamp = 0.0;
  KeypointList face, body, left_hand, right_hand;
  friend bool operator==(const KeypointSet&, const KeypointSet&) = default;

  void validate() const {
    auto check = [](const KeypointList& l, std::size_t n, const char* part) {
      if (!l.empty() && l.size() != n) {
        throw Error(ErrorCode::SizeMismatch, std::string(part) + " has " + std::to_string(l.size()) +
                                                 " points, expected " + std::to_string(n));
      }
      for (const auto& k : l) {
        if (!k.p.allFinite()) throw Error(ErrorCode::InvalidArgument, std::string(part) + " has a non-finite point");
      }
    };
    check(face, kFacePoints, "face");
    check(body, kBodyPoints, "body");
    check(left_hand, kHandPoints, "left_hand");
    check(right_hand, kHandPoints, "right_hand");
  }
};

/// Rooted tree over keypoint indices. The root is the mean of `root_points` (the shoulder
/// midpoint for bodies, the wrist itself for hands); edges whose parent is kVirtualRoot hang
/// from that midpoint.
struct SkeletonTree {
  static constexpr int kVirtualRoot = -1;
  int point_count = 0;
  std::vector<int> root_points;
  std::vector<std::pair<int, int>> edges;  ///< (parent, child)

  bool virtual_root() const { return root_points.size() != 1; }

  /// Throws InvalidArgument unless the edges form a tree spanning every point from the root.
  void validate() const {
    if (point_count <= 0 || root_points.empty()) throw Error(ErrorCode::InvalidArgument, "empty skeleton");
    for (int r : root_points) {
      if (r < 0 || r >= point_count) throw Error(ErrorCode::InvalidArgument, "root index out of range");
    }
    std::vector<int> parent(point_count, -2);
    if (!virtual_root()) parent[root_points[0]] = kVirtualRoot;
    for (const auto& [p, c] : edges) {
      if (c < 0 || c >= point_count || p < kVirtualRoot || p >= point_count) {
        throw Error(ErrorCode::InvalidArgument, "edge index out of range");
      }
      if (p == kVirtualRoot && !virtual_root()) throw Error(ErrorCode::InvalidArgument, "virtual edge without virtual root");
      if (parent[c] != -2) throw Error(ErrorCode::InvalidArgument, "point " + std::to_string(c) + " has two parents");
      parent[c] = p;
    }
    const auto order = bfs_order();
    if (order.size() != edges.size() || static_cast<int>(order.size()) + (virtual_root() ? 0 : 1) != point_count) {
      throw Error(ErrorCode::InvalidArgument, "edges do not form a tree spanning all points");
    }
  }

  /// Edge indices in breadth-first order from the root.
  std::vector<int> bfs_order() const {
    std::vector<int> order;
    std::vector<char> seen(edges.size(), 0);
    std::deque<int> frontier;
    frontier.push_back(virtual_root() ? kVirtualRoot : root_points[0]);
    while (!frontier.empty()) {
      const int node = frontier.front();
      frontier.pop_front();
      for (std::size_t e = 0; e < edges.size(); ++e) {
        if (edges[e].first == node && !seen[e]) {
          seen[e] = 1;
          order.push_back(static_cast<int>(e));
          frontier.push_back(edges[e].second);
        }
      }
    }
    return order;
  }

  std::optional<Point2> root_position(const KeypointList& pts) const {
    Point2 acc = Point2::Zero();
    for (int r : root_points) {
      if (r >= static_cast<int>(pts.size()) || !pts[r].visible) return std::nullopt;
      acc += pts[r].p;
    }
    return acc / double(root_points.size());
  }

  /// Position of an edge's parent endpoint, or nullopt when not visible.
  std::optional<Point2> parent_position(const KeypointList& pts, int edge) const {
    const int p = edges[edge].first;
    if (p == kVirtualRoot) return root_position(pts);
    if (p >= static_cast<int>(pts.size()) || !pts[p].visible) return std::nullopt;
    return pts[p].p;
  }
};

/// Default 33-landmark body topology: the shoulder midpoint feeds both shoulders, arms run
/// shoulder-elbow-wrist into the three hand markers, legs run from each shoulder through hip,
/// knee, ankle into heel and foot index, and the face markers hang off the nose, which hangs off
/// the left shoulder.
inline SkeletonTree default_body_tree() {
  SkeletonTree t;
  t.point_count = kBodyPoints;
  t.root_points = {11, 12};
  t.edges = {{-1, 11}, {-1, 12},
             {11, 13}, {13, 15}, {15, 17}, {15, 19}, {15, 21},
             {12, 14}, {14, 16}, {16, 18}, {16, 20}, {16, 22},
             {11, 23}, {23, 25}, {25, 27}, {27, 29}, {27, 31},
             {12, 24}, {24, 26}, {26, 28}, {28, 30}, {28, 32},
             {11, 0},  {0, 1},   {1, 2},   {2, 3},   {3, 7},
             {0, 4},   {4, 5},   {5, 6},   {6, 8},   {0, 9},   {0, 10}};
  return t;
}

/// Default 21-landmark hand: wrist 0 with five four-joint fingers.
inline SkeletonTree default_hand_tree() {
  SkeletonTree t;
  t.point_count = kHandPoints;
  t.root_points = {0};
  for (int finger = 0; finger < 5; ++finger) {
    const int base = 1 + 4 * finger;
    t.edges.emplace_back(0, base);
    for (int j = 0; j < 3; ++j) t.edges.emplace_back(base + j, base + j + 1);
  }
  return t;
}

inline nlohmann::json tree_to_json(const SkeletonTree& t) {
  nlohmann::json j;
  j["point_count"] = t.point_count;
  j["root_points"] = t.root_points;
  nlohmann::json edges = nlohmann::json::array();
  for (const auto& [p, c] : t.edges) edges.push_back({p, c});
  j["edges"] = edges;
  return j;
}

inline SkeletonTree tree_from_json(const nlohmann::json& j) {
  SkeletonTree t;
  try {
    t.point_count = j.at("point_count").get<int>();
    t.root_points = j.at("root_points").get<std::vector<int>>();
    for (const auto& e : j.at("edges")) t.edges.emplace_back(e.at(0).get<int>(), e.at(1).get<int>());
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::SchemaError, std::string("skeleton tree: ") + e.what());
  }
  t.validate();
  return t;
}

inline SkeletonTree load_tree(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::MissingFile, path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::SchemaError, path.string() + ": " + e.what());
  }
  return tree_from_json(j);
}

/// Per-edge maximum length over the frames where both endpoints are visible.
inline std::vector<double> limb_lengths(const std::vector<KeypointList>& frames, const SkeletonTree& tree) {
  std::vector<double> len(tree.edges.size(), -1.0);
  for (const auto& pts : frames) {
    for (std::size_t e = 0; e < tree.edges.size(); ++e) {
      const int c = tree.edges[e].second;
      if (c >= static_cast<int>(pts.size()) || !pts[c].visible) continue;
      const auto parent = tree.parent_position(pts, static_cast<int>(e));
      if (!parent) continue;
      len[e] = std::max(len[e], (pts[c].p - *parent).norm());
    }
  }
  for (std::size_t e = 0; e < len.size(); ++e) {
    if (len[e] < 0.0) {
      throw Error(ErrorCode::NeverVisible, "edge " + std::to_string(e) + " (" + std::to_string(tree.edges[e].first) +
                                               "-" + std::to_string(tree.edges[e].second) + ") never visible");
    }
  }
  return len;
}

struct TransferOptions {
  /// Scale the driving limb vector by source / per-sequence driving maximum instead of
  /// normalising it per frame; requires `driving_lengths`.
  bool literal_max_length = false;
  std::vector<double> driving_lengths;
};

struct TransferResult {
  KeypointList points;
  std::vector<char> degenerate;  ///< per edge: driving limb too short or not visible
};

/// Breadth-first retargeting: each child is placed at its transferred parent plus the driving
/// limb direction scaled to the source limb length. The root lands on `anchor`.
inline TransferResult transfer_tree(const KeypointList& driving, const std::vector<double>& source_lengths,
                                    const SkeletonTree& tree, const Point2& anchor, const TransferOptions& opts = {}) {
  if (static_cast<int>(driving.size()) != tree.point_count) {
    throw Error(ErrorCode::SizeMismatch, "driving pose does not match the skeleton");
  }
  if (source_lengths.size() != tree.edges.size()) throw Error(ErrorCode::SizeMismatch, "one length per edge required");
  if (opts.literal_max_length && opts.driving_lengths.size() != tree.edges.size()) {
    throw Error(ErrorCode::SizeMismatch, "literal mode needs one driving length per edge");
  }
  const auto droot = tree.root_position(driving);
  if (!droot) throw Error(ErrorCode::InvalidArgument, "driving root not visible");

  TransferResult out;
  out.points = driving;
  out.degenerate.assign(tree.edges.size(), 0);
  std::vector<char> placed(tree.point_count, 0);
  if (!tree.virtual_root()) {
    out.points[tree.root_points[0]].p = anchor;
    placed[tree.root_points[0]] = 1;
  }
  for (int e : tree.bfs_order()) {
    const auto [p, c] = tree.edges[e];
    const Point2 tp = p == SkeletonTree::kVirtualRoot ? *droot : driving[p].p;
    const Point2 new_parent = p == SkeletonTree::kVirtualRoot ? anchor : out.points[p].p;
    const bool parent_ok = p == SkeletonTree::kVirtualRoot || (driving[p].visible && placed[p]);
    const Point2 dir = driving[c].p - tp;
    const double n = dir.norm();
    if (!parent_ok || !driving[c].visible || n < kDegenerateLimbEps) {
      out.points[c].p = new_parent;
      out.degenerate[e] = 1;
      placed[c] = parent_ok && driving[c].visible;
      continue;
    }
    const double scale = opts.literal_max_length ? source_lengths[e] / opts.driving_lengths[e] : source_lengths[e] / n;
    // An unmoved parent with unit scale reproduces the driving point bit for bit.
    out.points[c].p = (scale == 1.0 && new_parent == tp) ? driving[c].p : Point2(new_parent + dir * scale);
    placed[c] = 1;
  }
  return out;
}

inline TransferResult transfer_body(const KeypointList& driving, const std::vector<double>& source_lengths,
                                    const SkeletonTree& tree, const Point2& root_anchor,
                                    const TransferOptions& opts = {}) {
  return transfer_tree(driving, source_lengths, tree, root_anchor, opts);
}

inline TransferResult transfer_hand(const KeypointList& driving, const std::vector<double>& source_lengths,
                                    const SkeletonTree& tree, const Point2& wrist_anchor,
                                    const TransferOptions& opts = {}) {
  return transfer_tree(driving, source_lengths, tree, wrist_anchor, opts);
}

enum class FaceMetric { CentroidAligned, Raw };

/// Mean squared distance over points visible in both sets, optionally after removing each
/// set's centroid (over those same points).
inline double face_distance(const KeypointList& a, const KeypointList& b, FaceMetric metric) {
  if (a.size() != b.size()) throw Error(ErrorCode::SizeMismatch, "face landmark counts differ");
  Point2 ca = Point2::Zero(), cb = Point2::Zero();
  std::size_t n = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!a[i].visible || !b[i].visible) continue;
    ca += a[i].p;
    cb += b[i].p;
    ++n;
  }
  if (n == 0) return std::numeric_limits<double>::infinity();
  if (metric == FaceMetric::CentroidAligned) {
    ca /= double(n);
    cb /= double(n);
  } else {
    ca.setZero();
    cb.setZero();
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!a[i].visible || !b[i].visible) continue;
    acc += ((a[i].p - ca) - (b[i].p - cb)).squaredNorm();
  }
  return acc / double(n);
}

struct FaceTransfer {
  KeypointList points;
  int nearest_frame = -1;  ///< index of t' in the driving sequence
};

/// Offset transfer s + t - t', with t' the driving frame closest to the source reference s.
inline FaceTransfer transfer_face(const KeypointList& source_ref, const std::vector<KeypointList>& driving_sequence,
                                  const KeypointList& driving_current, FaceMetric metric = FaceMetric::CentroidAligned) {
  if (driving_sequence.empty()) throw Error(ErrorCode::InvalidArgument, "empty driving sequence");
  if (driving_current.size() != source_ref.size()) throw Error(ErrorCode::SizeMismatch, "face landmark counts differ");
  FaceTransfer out;
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t f = 0; f < driving_sequence.size(); ++f) {
    const double d = face_distance(source_ref, driving_sequence[f], metric);
    if (d < best) {
      best = d;
      out.nearest_frame = static_cast<int>(f);
    }
  }
  if (out.nearest_frame < 0) out.nearest_frame = 0;
  const KeypointList& tp = driving_sequence[out.nearest_frame];
  out.points = source_ref;
  for (std::size_t i = 0; i < out.points.size(); ++i) {
    out.points[i].p = source_ref[i].p + driving_current[i].p - tp[i].p;
    out.points[i].visible = source_ref[i].visible && driving_current[i].visible && tp[i].visible;
  }
  return out;
}

// Sequences -----------------------------------------------------------------------------------

inline constexpr int kLeftWrist = 15;   ///< body landmark feeding the left hand tree
inline constexpr int kRightWrist = 16;

enum RetargetParts : unsigned { kRetargetFace = 1, kRetargetBody = 2, kRetargetHands = 4, kRetargetAll = 7 };

struct RetargetOptions {
  unsigned parts = kRetargetAll;
  int anchor_frame = 0;  ///< source frame giving the face reference and the body root anchor
  SkeletonTree body = default_body_tree();
  SkeletonTree hand = default_hand_tree();
  FaceMetric face_metric = FaceMetric::CentroidAligned;
  bool literal_max_length = false;
};

struct RetargetResult {
  std::vector<KeypointSet> frames;  ///< one per driving frame; parts not requested stay empty
  int degenerate_limbs = 0;
  std::vector<int> face_nearest;  ///< t' index per driving frame, -1 without a face
};

namespace detail {

inline std::vector<KeypointList> part_frames(const std::vector<KeypointSet>& seq, KeypointList KeypointSet::*part) {
  std::vector<KeypointList> out;
  for (const auto& k : seq) {
    if (!(k.*part).empty()) out.push_back(k.*part);
  }
  return out;
}

}  // namespace detail

/// Retarget a driving sequence onto the source character. Limb lengths are the per-edge maxima
/// over the source frames; the body root is anchored at the source root of `anchor_frame`, and
/// each hand hangs from the transferred body wrist.
inline RetargetResult retarget_sequence(const std::vector<KeypointSet>& source, const std::vector<KeypointSet>& driving,
                                        const RetargetOptions& opts = {}) {
  if (source.empty() || driving.empty()) throw Error(ErrorCode::InvalidArgument, "empty keypoint sequence");
  if (opts.anchor_frame < 0 || opts.anchor_frame >= static_cast<int>(source.size())) {
    throw Error(ErrorCode::OutOfRange, "anchor frame " + std::to_string(opts.anchor_frame) + " outside the source");
  }
  const KeypointSet& ref = source[opts.anchor_frame];
  const bool want_body = opts.parts & kRetargetBody, want_hands = opts.parts & kRetargetHands;
  const bool want_face = opts.parts & kRetargetFace;

  std::vector<double> body_src, body_drv, hand_src[2], hand_drv[2];
  Point2 root_anchor = Point2::Zero();
  if (want_body || want_hands) {
    body_src = limb_lengths(detail::part_frames(source, &KeypointSet::body), opts.body);
    if (opts.literal_max_length) body_drv = limb_lengths(detail::part_frames(driving, &KeypointSet::body), opts.body);
    const auto root = opts.body.root_position(ref.body);
    if (!root) throw Error(ErrorCode::NeverVisible, "source body root not visible in the anchor frame");
    root_anchor = *root;
  }
  KeypointList KeypointSet::*hands[2] = {&KeypointSet::left_hand, &KeypointSet::right_hand};
  if (want_hands) {
    // A hand the source never shows is left out rather than treated as an error.
    for (int h = 0; h < 2; ++h) {
      const auto src = detail::part_frames(source, hands[h]);
      if (src.empty()) continue;
      hand_src[h] = limb_lengths(src, opts.hand);
      if (opts.literal_max_length) hand_drv[h] = limb_lengths(detail::part_frames(driving, hands[h]), opts.hand);
    }
  }
  std::vector<KeypointList> faces;
  if (want_face) {
    if (ref.face.empty()) throw Error(ErrorCode::NeverVisible, "source anchor frame has no face");
    faces = detail::part_frames(driving, &KeypointSet::face);
  }

  RetargetResult out;
  for (const auto& d : driving) {
    KeypointSet k;
    k.timestamp = d.timestamp;
    int nearest = -1;
    if ((want_body || want_hands) && !d.body.empty()) {
      TransferOptions to{opts.literal_max_length, body_drv};
      const TransferResult body = transfer_body(d.body, body_src, opts.body, root_anchor, to);
      if (want_body) {
        k.body = body.points;
        out.degenerate_limbs += static_cast<int>(std::count(body.degenerate.begin(), body.degenerate.end(), char{1}));
      }
      if (want_hands) {
        const int wrists[2] = {kLeftWrist, kRightWrist};
        for (int h = 0; h < 2; ++h) {
          if ((d.*hands[h]).empty() || hand_src[h].empty()) continue;
          TransferOptions th{opts.literal_max_length, hand_drv[h]};
          const TransferResult hand = transfer_hand(d.*hands[h], hand_src[h], opts.hand, body.points[wrists[h]].p, th);
          k.*hands[h] = hand.points;
          out.degenerate_limbs += static_cast<int>(std::count(hand.degenerate.begin(), hand.degenerate.end(), char{1}));
        }
      }
    }
    if (want_face && !d.face.empty()) {
      const FaceTransfer f = transfer_face(ref.face, faces, d.face, opts.face_metric);
      k.face = f.points;
      nearest = f.nearest_frame;
    }
    out.face_nearest.push_back(nearest);
    out.frames.push_back(std::move(k));
  }
  return out;
}

// Rasterisation -----------------------------------------------------------------------------

using Rgb8 = std::array<std::uint8_t, 3>;

struct PoseStyle {
  SkeletonTree body = default_body_tree();
  SkeletonTree hand = default_hand_tree();
  std::vector<Rgb8> body_edge_colors;  ///< cycled over body edges
  Rgb8 left_hand_color{255, 160, 0};
  Rgb8 right_hand_color{0, 160, 255};
  Rgb8 face_color{255, 255, 255};
  Rgb8 joint_color{255, 0, 0};
  double limb_width = 4.0;
  double joint_radius = 3.0;
  double face_radius = 1.0;
};

inline PoseStyle default_pose_style() {
  PoseStyle s;
  s.body_edge_colors = {{255, 0, 0},   {255, 85, 0},  {255, 170, 0}, {255, 255, 0}, {170, 255, 0},
                        {85, 255, 0},  {0, 255, 0},   {0, 255, 85},  {0, 255, 170}, {0, 255, 255},
                        {0, 170, 255}, {0, 85, 255},  {0, 0, 255},   {85, 0, 255},  {170, 0, 255},
                        {255, 0, 255}, {255, 0, 170}, {255, 0, 85}};
  return s;
}

namespace detail {

inline void paint(ImageT<std::uint8_t>& img, int x, int y, const Rgb8& c) {
  for (int k = 0; k < 3; ++k) img.at(x, y, k) = c[k];
}

inline void draw_disc(ImageT<std::uint8_t>& img, const Point2& p, double r, const Rgb8& c) {
  const int x0 = std::max(0, static_cast<int>(std::floor(p.x() - r)));
  const int x1 = std::min(img.width - 1, static_cast<int>(std::ceil(p.x() + r)));
  const int y0 = std::max(0, static_cast<int>(std::floor(p.y() - r)));
  const int y1 = std::min(img.height - 1, static_cast<int>(std::ceil(p.y() + r)));
  for (int y = y0; y <= y1; ++y) {
    for (int x = x0; x <= x1; ++x) {
      if ((Point2(x, y) - p).squaredNorm() <= r * r) paint(img, x, y, c);
    }
  }
}

inline void draw_segment(ImageT<std::uint8_t>& img, const Point2& a, const Point2& b, double width, const Rgb8& c) {
  const double r = 0.5 * width;
  const int x0 = std::max(0, static_cast<int>(std::floor(std::min(a.x(), b.x()) - r)));
  const int x1 = std::min(img.width - 1, static_cast<int>(std::ceil(std::max(a.x(), b.x()) + r)));
  const int y0 = std::max(0, static_cast<int>(std::floor(std::min(a.y(), b.y()) - r)));
  const int y1 = std::min(img.height - 1, static_cast<int>(std::ceil(std::max(a.y(), b.y()) + r)));
  const Point2 ab = b - a;
  const double len2 = ab.squaredNorm();
  for (int y = y0; y <= y1; ++y) {
    for (int x = x0; x <= x1; ++x) {
      const Point2 q(x, y);
      const double t = len2 > 0.0 ? std::clamp((q - a).dot(ab) / len2, 0.0, 1.0) : 0.0;
      if ((q - (a + t * ab)).squaredNorm() <= r * r) paint(img, x, y, c);
    }
  }
}

inline void draw_tree(ImageT<std::uint8_t>& img, const KeypointList& pts, const SkeletonTree& tree,
                      const std::vector<Rgb8>& colors, const PoseStyle& style) {
  if (static_cast<int>(pts.size()) != tree.point_count) return;
  for (std::size_t e = 0; e < tree.edges.size(); ++e) {
    const int c = tree.edges[e].second;
    const auto parent = tree.parent_position(pts, static_cast<int>(e));
    if (!parent || !pts[c].visible) continue;
    draw_segment(img, *parent, pts[c].p, style.limb_width, colors[e % colors.size()]);
  }
  for (const auto& k : pts) {
    if (k.visible) draw_disc(img, k.p, style.joint_radius, style.joint_color);
  }
}

}  // namespace detail

/// Draw limbs, joints and face points onto a black RGB canvas. Pure function of its inputs.
inline ImageT<std::uint8_t> rasterize_pose(const KeypointSet& kps, int width, int height,
                                           const PoseStyle& style = default_pose_style()) {
  if (width <= 0 || height <= 0) throw Error(ErrorCode::InvalidArgument, "canvas must be positive");
  ImageT<std::uint8_t> img(width, height, 3);
  const std::vector<Rgb8> body_colors =
      style.body_edge_colors.empty() ? std::vector<Rgb8>{{255, 255, 255}} : style.body_edge_colors;
  detail::draw_tree(img, kps.body, style.body, body_colors, style);
  detail::draw_tree(img, kps.left_hand, style.hand, {style.left_hand_color}, style);
  detail::draw_tree(img, kps.right_hand, style.hand, {style.right_hand_color}, style);
  for (const auto& k : kps.face) {
    if (k.visible) detail::draw_disc(img, k.p, style.face_radius, style.face_color);
  }
  return img;
}

}  // namespace mpiforge
