#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "mpiforge/errors.hpp"

namespace mpiforge {

/// Interleaved, row-major image: value (x, y, c) lives at ((y * width + x) * channels + c).
template <typename T>
struct ImageT {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<T> data;

  ImageT() = default;
  ImageT(int w, int h, int c, T fill = T(0))
      : width(w), height(h), channels(c), data(static_cast<std::size_t>(w) * h * c, fill) {
    if (w < 0 || h < 0 || c <= 0) {
      throw Error(ErrorCode::InvalidArgument, "image dimensions must be non-negative");
    }
  }

  std::size_t pixel_count() const noexcept { return static_cast<std::size_t>(width) * height; }
  std::size_t index(int x, int y, int c = 0) const noexcept {
    return (static_cast<std::size_t>(y) * width + x) * channels + c;
  }
  T& at(int x, int y, int c = 0) noexcept { return data[index(x, y, c)]; }
  const T& at(int x, int y, int c = 0) const noexcept { return data[index(x, y, c)]; }

  bool same_shape(const ImageT& other) const noexcept {
    return width == other.width && height == other.height && channels == other.channels;
  }

  friend bool operator==(const ImageT&, const ImageT&) = default;
};

using Image = ImageT<float>;
using ImageD = ImageT<double>;
/// Binary foreground mask, one channel, nonzero = foreground.
using Mask = ImageT<std::uint8_t>;

template <typename To, typename From>
ImageT<To> image_cast(const ImageT<From>& src) {
  ImageT<To> out;
  out.width = src.width;
  out.height = src.height;
  out.channels = src.channels;
  out.data.assign(src.data.begin(), src.data.end());
  return out;
}

/// Round to the nearest 8-bit level, saturating outside [0, 1].
inline std::uint8_t quantize_unit(double v) noexcept {
  if (!(v > 0.0)) return 0;
  if (v >= 1.0) return 255;
  return static_cast<std::uint8_t>(std::lround(v * 255.0));
}

template <typename T>
ImageT<std::uint8_t> quantize(const ImageT<T>& img) {
  ImageT<std::uint8_t> out(img.width, img.height, img.channels);
  for (std::size_t i = 0; i < img.data.size(); ++i) out.data[i] = quantize_unit(img.data[i]);
  return out;
}

template <typename T>
ImageT<T> dequantize(const ImageT<std::uint8_t>& img) {
  ImageT<T> out(img.width, img.height, img.channels);
  for (std::size_t i = 0; i < img.data.size(); ++i) out.data[i] = T(img.data[i]) / T(255);
  return out;
}

template <typename A, typename B>
double mean_squared_error(const ImageT<A>& a, const ImageT<B>& b) {
  if (!(a.width == b.width && a.height == b.height && a.channels == b.channels)) {
    throw Error(ErrorCode::SizeMismatch, "mse operands differ in shape");
  }
  if (a.data.empty()) return 0.0;
  double sum = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    const double d = double(a.data[i]) - double(b.data[i]);
    sum += d * d;
  }
  return sum / double(a.data.size());
}

inline double psnr_from_mse(double mse) {
  if (mse <= 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(1.0 / mse);
}

template <typename A, typename B>
double psnr(const ImageT<A>& a, const ImageT<B>& b) {
  return psnr_from_mse(mean_squared_error(a, b));
}

template <typename A, typename B>
double max_abs_difference(const ImageT<A>& a, const ImageT<B>& b) {
  if (!(a.width == b.width && a.height == b.height && a.channels == b.channels)) {
    throw Error(ErrorCode::SizeMismatch, "operands differ in shape");
  }
  double m = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    m = std::max(m, std::abs(double(a.data[i]) - double(b.data[i])));
  }
  return m;
}

}  // namespace mpiforge
