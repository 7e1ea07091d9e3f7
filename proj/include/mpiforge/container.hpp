#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <vector>

#include "mpiforge/errors.hpp"
#include "mpiforge/geometry.hpp"
#include "mpiforge/mpi.hpp"

namespace mpiforge {

inline constexpr char kContainerMagic[4] = {'M', 'P', 'I', 'F'};
inline constexpr std::uint32_t kContainerVersion = 1;
inline constexpr std::size_t kContainerHeaderBytes = 4 + 4 * 5;

namespace detail {

class ByteWriter {
 public:
  std::vector<std::uint8_t> bytes;

  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) bytes.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> b) : b_(b) {}

  std::size_t remaining() const { return b_.size() - pos_; }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(b_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t(b_[pos_ + i]) << (8 * i);
    pos_ += 8;
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  double f64() { return std::bit_cast<double>(u64()); }
  void raw(void* dst, std::size_t n) {
    need(n);
    std::memcpy(dst, b_.data() + pos_, n);
    pos_ += n;
  }

 private:
  void need(std::size_t n) const {
    if (remaining() < n) throw Error(ErrorCode::TruncatedPayload, "container ends early");
  }
  std::span<const std::uint8_t> b_;
  std::size_t pos_ = 0;
};

}  // namespace detail

/// Serialise to the MPIF v1 layout. Depths are stored refined; residuals are folded in.
inline std::vector<std::uint8_t> encode_mpi(const Mpi& mpi) {
  detail::ByteWriter w;
  for (char c : kContainerMagic) w.bytes.push_back(static_cast<std::uint8_t>(c));
  w.u32(kContainerVersion);
  w.u32(static_cast<std::uint32_t>(mpi.planes));
  w.u32(static_cast<std::uint32_t>(mpi.sharing));
  w.u32(static_cast<std::uint32_t>(mpi.height));
  w.u32(static_cast<std::uint32_t>(mpi.width));
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) w.f64(mpi.host_camera.intrinsics(r, c));
  }
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) w.f64(mpi.host_camera.pose.rotation(r, c));
    w.f64(mpi.host_camera.pose.translation(r));
  }
  for (double d : refined_depths_of(mpi)) w.f64(d);
  w.bytes.reserve(w.bytes.size() + 4 * (mpi.alphas.size() + mpi.textures.size()));
  for (float a : mpi.alphas) w.f32(a);
  for (float t : mpi.textures) w.f32(t);
  return std::move(w.bytes);
}

/// Parse a container; sizes are checked against the buffer before anything is allocated.
inline Mpi decode_mpi(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4) throw Error(ErrorCode::TruncatedPayload, "container shorter than its magic");
  if (std::memcmp(bytes.data(), kContainerMagic, 4) != 0) throw Error(ErrorCode::BadMagic, "not an MPIF container");
  detail::ByteReader r(bytes.subspan(4));
  const std::uint32_t version = r.u32();
  if (version != kContainerVersion) {
    throw Error(ErrorCode::VersionUnsupported, "container version " + std::to_string(version));
  }
  const std::uint64_t d = r.u32(), k = r.u32(), h = r.u32(), w = r.u32();
  if (d == 0 || k == 0 || d % k != 0 || w == 0 || h == 0 || d > (1u << 16) || w > (1u << 16) || h > (1u << 16)) {
    throw Error(ErrorCode::CorruptPayload, "invalid header dimensions");
  }
  const std::uint64_t plane = w * h;
  const std::uint64_t payload = 8 * (9 + 12 + d) + 4 * (d * plane + (d / k) * plane * 3);
  if (r.remaining() < payload) throw Error(ErrorCode::TruncatedPayload, "payload shorter than the header declares");
  if (r.remaining() > payload) throw Error(ErrorCode::CorruptPayload, "trailing bytes after payload");

  CameraModel host;
  host.width = static_cast<int>(w);
  host.height = static_cast<int>(h);
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) host.intrinsics(i, j) = r.f64();
  }
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) host.pose.rotation(i, j) = r.f64();
    host.pose.translation(i) = r.f64();
  }
  if (!host.intrinsics.allFinite() || !host.pose.rotation.allFinite() || !host.pose.translation.allFinite()) {
    throw Error(ErrorCode::CorruptPayload, "non-finite host camera");
  }
  try {
    host.validate();
  } catch (const Error& e) {
    throw Error(ErrorCode::CorruptPayload, "host camera: " + e.detail());
  }
  std::vector<double> depths(d);
  for (double& v : depths) v = r.f64();
  for (std::size_t i = 0; i < depths.size(); ++i) {
    if (!std::isfinite(depths[i]) || !(depths[i] > 0.0) || (i > 0 && !(depths[i] > depths[i - 1]))) {
      throw Error(ErrorCode::CorruptPayload, "depths must be finite, positive and strictly ascending");
    }
  }
  Mpi mpi(static_cast<int>(d), static_cast<int>(k), host, std::move(depths));
  if constexpr (std::endian::native == std::endian::little) {
    r.raw(mpi.alphas.data(), mpi.alphas.size() * 4);
    r.raw(mpi.textures.data(), mpi.textures.size() * 4);
  } else {
    for (float& a : mpi.alphas) a = r.f32();
    for (float& t : mpi.textures) t = r.f32();
  }
  for (float a : mpi.alphas) {
    if (!std::isfinite(a)) throw Error(ErrorCode::CorruptPayload, "non-finite alpha");
  }
  for (float t : mpi.textures) {
    if (!std::isfinite(t)) throw Error(ErrorCode::CorruptPayload, "non-finite texture");
  }
  return mpi;
}

inline void write_mpi(const std::filesystem::path& path, const Mpi& mpi) {
  const auto bytes = encode_mpi(mpi);
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, "cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::IoError, "write failed: " + path.string());
}

inline Mpi read_mpi(const std::filesystem::path& path) {
  std::error_code ec;
  if (!std::filesystem::is_regular_file(path, ec)) throw Error(ErrorCode::BadPath, path.string());
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_mpi(bytes);
}

}  // namespace mpiforge
