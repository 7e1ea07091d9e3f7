#pragma once

#include <png.h>

#include <cstdint>
#include <filesystem>
#include <string>

#include "mpiforge/errors.hpp"
#include "mpiforge/image.hpp"

namespace mpiforge {

namespace detail {

inline png_uint_32 png_format_for(int channels) {
  switch (channels) {
    case 1: return PNG_FORMAT_GRAY;
    case 2: return PNG_FORMAT_GA;
    case 3: return PNG_FORMAT_RGB;
    case 4: return PNG_FORMAT_RGBA;
    default: throw Error(ErrorCode::InvalidArgument, "PNG supports 1 to 4 channels");
  }
}

}  // namespace detail

/// 8-bit PNG read; the channel count follows the file (gray, gray+alpha, RGB or RGBA).
inline ImageT<std::uint8_t> read_png(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw Error(ErrorCode::MissingFile, path.string());
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.string().c_str())) {
    throw Error(ErrorCode::IoError, path.string() + ": " + img.message);
  }
  img.format &= ~(PNG_FORMAT_FLAG_LINEAR | PNG_FORMAT_FLAG_COLORMAP | PNG_FORMAT_FLAG_BGR | PNG_FORMAT_FLAG_AFIRST);
  const int channels = static_cast<int>(PNG_IMAGE_SAMPLE_CHANNELS(img.format));
  ImageT<std::uint8_t> out(static_cast<int>(img.width), static_cast<int>(img.height), channels);
  if (!png_image_finish_read(&img, nullptr, out.data.data(), 0, nullptr)) {
    const std::string msg = img.message;
    png_image_free(&img);
    throw Error(ErrorCode::IoError, path.string() + ": " + msg);
  }
  return out;
}

inline void write_png(const std::filesystem::path& path, const ImageT<std::uint8_t>& image) {
  if (image.width <= 0 || image.height <= 0) throw Error(ErrorCode::InvalidArgument, "empty image");
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
  }
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(image.width);
  img.height = static_cast<png_uint_32>(image.height);
  img.format = detail::png_format_for(image.channels);
  if (!png_image_write_to_file(&img, path.string().c_str(), 0, image.data.data(), 0, nullptr)) {
    throw Error(ErrorCode::IoError, path.string() + ": " + img.message);
  }
}

/// Unit-range image to 8-bit PNG (values clamped, rounded to nearest).
template <typename T>
void write_png_unit(const std::filesystem::path& path, const ImageT<T>& image) {
  write_png(path, quantize(image));
}

inline Mask read_mask_png(const std::filesystem::path& path) {
  const ImageT<std::uint8_t> raw = read_png(path);
  Mask m(raw.width, raw.height, 1);
  for (std::size_t p = 0; p < m.data.size(); ++p) m.data[p] = raw.data[p * raw.channels] >= 128 ? 1 : 0;
  return m;
}

inline void write_mask_png(const std::filesystem::path& path, const Mask& mask) {
  ImageT<std::uint8_t> out(mask.width, mask.height, 1);
  for (std::size_t p = 0; p < out.data.size(); ++p) out.data[p] = mask.data[p] ? 255 : 0;
  write_png(path, out);
}

/// Read a colour image as RGB in [0, 1]; gray inputs are replicated, alpha is dropped.
inline ImageD read_rgb_unit(const std::filesystem::path& path) {
  const ImageT<std::uint8_t> raw = read_png(path);
  ImageD out(raw.width, raw.height, 3);
  const bool gray = raw.channels < 3;
  for (std::size_t p = 0; p < out.pixel_count(); ++p) {
    for (int c = 0; c < 3; ++c) out.data[p * 3 + c] = raw.data[p * raw.channels + (gray ? 0 : c)] / 255.0;
  }
  return out;
}

}  // namespace mpiforge
