#pragma once

#include <algorithm>
#include <array>
#include <atomic>
#include <cstddef>
#include <span>
#include <type_traits>
#include <vector>

#if defined(__GNUC__) && defined(__x86_64__)
#include <immintrin.h>
#endif

#include "mpiforge/errors.hpp"
#include "mpiforge/geometry.hpp"
#include "mpiforge/image.hpp"
#include "mpiforge/mpi.hpp"
#include "mpiforge/parallel.hpp"

namespace mpiforge {

template <typename T>
struct RenderedImageT {
  ImageT<T> color;  ///< 3 channels
  ImageT<T> alpha;  ///< accumulated opacity, 1 channel
  int degenerate_planes = 0;
};

using RenderedImage = RenderedImageT<float>;
using RenderedImageD = RenderedImageT<double>;

struct RenderOptions {
  int threads = 1;
};

namespace detail {

template <typename T>
inline T clamp01(T v) noexcept {
  return v < T(0) ? T(0) : (v > T(1) ? T(1) : v);
}

/// Over-operator step for back-to-front accumulation: acc <- acc * (1 - a) + c * a.
template <typename T>
inline T over(T acc, T c, T a) noexcept {
  return acc * (T(1) - a) + c * a;
}

/// Bilinear footprint of a sample at (u, v); integer coordinates are pixel centres.
template <typename T>
struct Footprint {
  int x0 = 0;
  int y0 = 0;
  T fx = 0;
  T fy = 0;
  bool interior = false;
};

/// False when the footprint misses the w x h grid entirely.
template <typename T>
inline bool footprint(T u, T v, int w, int h, Footprint<T>& fp) noexcept {
  if (!(u > T(-1)) || !(v > T(-1)) || !(u < T(w)) || !(v < T(h))) return false;
  const int xi = static_cast<int>(u + T(1)) - 1;
  const int yi = static_cast<int>(v + T(1)) - 1;
  fp.x0 = xi;
  fp.y0 = yi;
  fp.fx = u - T(xi);
  fp.fy = v - T(yi);
  fp.interior = xi >= 0 && yi >= 0 && xi + 1 < w && yi + 1 < h;
  return true;
}

/// Read the four taps of channel c (zero outside the grid, optionally clamped to [0, 1]).
template <typename T, bool Clamp>
inline void taps(const T* src, int w, int h, int channels, int c, const Footprint<T>& fp,
                 T& a00, T& a10, T& a01, T& a11) noexcept {
  auto fetch = [&](int x, int y) -> T {
    const T v = src[(static_cast<std::size_t>(y) * w + x) * channels + c];
    return Clamp ? clamp01(v) : v;
  };
  if (fp.interior) {
    a00 = fetch(fp.x0, fp.y0);
    a10 = fetch(fp.x0 + 1, fp.y0);
    a01 = fetch(fp.x0, fp.y0 + 1);
    a11 = fetch(fp.x0 + 1, fp.y0 + 1);
    return;
  }
  const bool x0in = fp.x0 >= 0, x1in = fp.x0 + 1 < w;
  const bool y0in = fp.y0 >= 0, y1in = fp.y0 + 1 < h;
  a00 = (x0in && y0in) ? fetch(fp.x0, fp.y0) : T(0);
  a10 = (x1in && y0in) ? fetch(fp.x0 + 1, fp.y0) : T(0);
  a01 = (x0in && y1in) ? fetch(fp.x0, fp.y0 + 1) : T(0);
  a11 = (x1in && y1in) ? fetch(fp.x0 + 1, fp.y0 + 1) : T(0);
}

template <typename T>
inline T lerp2(T a00, T a10, T a01, T a11, T fx, T fy) noexcept {
  const T top = a00 + fx * (a10 - a00);
  const T bot = a01 + fx * (a11 - a01);
  return top + fy * (bot - top);
}

template <typename T, bool Clamp>
inline T sample(const T* src, int w, int h, int channels, int c, const Footprint<T>& fp) noexcept {
  T a00, a10, a01, a11;
  taps<T, Clamp>(src, w, h, channels, c, fp, a00, a10, a01, a11);
  return lerp2(a00, a10, a01, a11, fp.fx, fp.fy);
}

template <typename T>
struct PlaneWarp {
  bool valid = false;
  T h[9]{};
};

template <typename T>
PlaneWarp<T> make_plane_warp(const CameraModel& host, const CameraModel& target, double depth) {
  PlaneWarp<T> pw;
  try {
    const Matrix3 h = plane_homography_raw(host, target, depth);
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) pw.h[r * 3 + c] = static_cast<T>(h(r, c));
    }
    pw.valid = true;
  } catch (const Error& e) {
    if (e.code() != ErrorCode::DegeneratePlane) throw;
  }
  return pw;
}

/// Map target pixel (x, y) through the plane warp; false if the plane is behind the ray.
template <typename T>
inline bool project(const PlaneWarp<T>& pw, T x, T y, T& u, T& v) noexcept {
  const T* h = pw.h;
  const T w = h[6] * x + h[7] * y + h[8];
  if (!(w > T(0))) return false;
  const T inv = T(1) / w;
  u = (h[0] * x + h[1] * y + h[2]) * inv;
  v = (h[3] * x + h[4] * y + h[5]) * inv;
  return true;
}

/// Shared back-to-front kernel. With Textured the colour comes from the plane's RGB texture;
/// otherwise every plane contributes its constant `plane_values[i]` into a 1-channel output.
template <typename T, bool Textured>
void render_rows(const MpiT<T>& mpi, const std::vector<PlaneWarp<T>>& warps,
                 const std::vector<double>& plane_values, int out_w, int y_begin, int y_end,
                 ImageT<T>& color, ImageT<T>& alpha) {
  constexpr int C = Textured ? 3 : 1;
  const int W = mpi.width, H = mpi.height;
  for (int y = y_begin; y < y_end; ++y) {
    T* crow = color.data.data() + static_cast<std::size_t>(y) * out_w * C;
    T* arow = alpha.data.data() + static_cast<std::size_t>(y) * out_w;
    for (int i = mpi.planes - 1; i >= 0; --i) {
      const PlaneWarp<T>& pw = warps[i];
      if (!pw.valid) continue;
      const T* a_src = mpi.alphas.data() + mpi.plane_size() * i;
      const T* c_src = Textured ? mpi.texture_for_plane(i).data() : nullptr;
      const T constant = static_cast<T>(Textured ? 0.0 : plane_values[i]);
      const T fy_pix = static_cast<T>(y);
      for (int x = 0; x < out_w; ++x) {
        T u, v;
        if (!project(pw, static_cast<T>(x), fy_pix, u, v)) continue;
        Footprint<T> fp;
        if (!footprint(u, v, W, H, fp)) continue;
        const T a = sample<T, true>(a_src, W, H, 1, 0, fp);
        if (a == T(0)) continue;
        if constexpr (Textured) {
          for (int ch = 0; ch < 3; ++ch) {
            const T c = sample<T, true>(c_src, W, H, 3, ch, fp);
            crow[x * 3 + ch] = over(crow[x * 3 + ch], c, a);
          }
        } else {
          crow[x] = over(crow[x], constant, a);
        }
        arow[x] = over(arow[x], T(1), a);
      }
    }
  }
}

}  // namespace detail

/// Inverse-warp `layer` into an out_w x out_h image: output pixel p samples the layer at H * p
/// with bilinear interpolation; samples off the layer (or behind the plane) are zero.
template <typename T>
ImageT<T> warp_plane(const ImageT<T>& layer, const Matrix3& homography, int out_w, int out_h) {
  if (!homography.allFinite() || std::abs(homography.determinant()) < kDegeneratePlaneEps) {
    throw Error(ErrorCode::DegeneratePlane, "homography is singular");
  }
  ImageT<T> out(out_w, out_h, layer.channels);
  detail::PlaneWarp<T> pw;
  pw.valid = true;
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) pw.h[r * 3 + c] = static_cast<T>(homography(r, c));
  }
  for (int y = 0; y < out_h; ++y) {
    for (int x = 0; x < out_w; ++x) {
      T u, v;
      if (!detail::project(pw, T(x), T(y), u, v)) continue;
      detail::Footprint<T> fp;
      if (!detail::footprint(u, v, layer.width, layer.height, fp)) continue;
      for (int c = 0; c < layer.channels; ++c) {
        out.at(x, y, c) = detail::sample<T, false>(layer.data.data(), layer.width, layer.height, layer.channels, c, fp);
      }
    }
  }
  return out;
}

/// Back-to-front over-compositing of already-warped layers, ordered back (index 0) to front.
/// Colours may have any channel count; alphas are single channel.
template <typename T>
RenderedImageT<T> composite(std::span<const ImageT<T>> colors, std::span<const ImageT<T>> alphas) {
  if (colors.size() != alphas.size()) {
    throw Error(ErrorCode::MismatchedLayerCount, "colour and alpha layer counts differ");
  }
  RenderedImageT<T> out;
  if (colors.empty()) return out;
  const int w = colors[0].width, h = colors[0].height, ch = colors[0].channels;
  for (std::size_t i = 0; i < colors.size(); ++i) {
    if (colors[i].width != w || colors[i].height != h || colors[i].channels != ch ||
        alphas[i].width != w || alphas[i].height != h || alphas[i].channels != 1) {
      throw Error(ErrorCode::MismatchedDims, "layer " + std::to_string(i) + " has mismatched dimensions");
    }
  }
  out.color = ImageT<T>(w, h, ch);
  out.alpha = ImageT<T>(w, h, 1);
  for (std::size_t i = 0; i < colors.size(); ++i) {
    for (std::size_t p = 0; p < out.alpha.data.size(); ++p) {
      const T a = alphas[i].data[p];
      if (a == T(0)) continue;
      for (int c = 0; c < ch; ++c) {
        T& acc = out.color.data[p * ch + c];
        acc = detail::over(acc, colors[i].data[p * ch + c], a);
      }
      out.alpha.data[p] = detail::over(out.alpha.data[p], T(1), a);
    }
  }
  return out;
}

template <typename T>
RenderedImageT<T> composite(const std::vector<ImageT<T>>& colors, const std::vector<ImageT<T>>& alphas) {
  return composite(std::span<const ImageT<T>>(colors), std::span<const ImageT<T>>(alphas));
}

enum class SimdLevel { Scalar, Avx2, Avx512 };

inline const char* simd_level_name(SimdLevel l) {
  switch (l) {
    case SimdLevel::Avx512: return "avx512";
    case SimdLevel::Avx2: return "avx2";
    case SimdLevel::Scalar: break;
  }
  return "scalar";
}

inline bool simd_supported(SimdLevel l) {
#if defined(__GNUC__) && defined(__x86_64__)
  if (l == SimdLevel::Avx512) return __builtin_cpu_supports("avx512f");
  if (l == SimdLevel::Avx2) return __builtin_cpu_supports("avx2");
#else
  if (l != SimdLevel::Scalar) return false;
#endif
  return true;
}

inline SimdLevel best_simd_level() {
  if (simd_supported(SimdLevel::Avx512)) return SimdLevel::Avx512;
  if (simd_supported(SimdLevel::Avx2)) return SimdLevel::Avx2;
  return SimdLevel::Scalar;
}

/// Float layers pre-clamped to [0, 1] with a one-texel zero border, so the sampling loop needs
/// neither bounds tests nor clamps. Textures are stored as three planar channels. Each layer
/// carries a few spare texels at its end so vector kernels may load whole windows past the last
/// row. Build once per MPI snapshot and reuse for every view.
struct PreparedMpi {
  static constexpr int kTail = 32;

  int planes = 0;
  int sharing = 1;
  int width = 0;
  int height = 0;
  int stride = 0;  ///< width + 2
  std::vector<float> alpha;
  std::vector<float> rgb;
  std::vector<double> depths;
  CameraModel host_camera;

  PreparedMpi() = default;
  explicit PreparedMpi(const Mpi& m)
      : planes(m.planes), sharing(m.sharing), width(m.width), height(m.height), stride(m.width + 2),
        depths(refined_depths_of(m)), host_camera(m.host_camera) {
    const std::size_t ps = layer_size();
    alpha.assign(ps * planes, 0.0f);
    rgb.assign(ps * 3 * m.texture_count(), 0.0f);
    for (int i = 0; i < planes; ++i) {
      const auto src = m.alpha(i);
      float* dst = alpha.data() + ps * i;
      for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
          dst[static_cast<std::size_t>(y + 1) * stride + x + 1] = detail::clamp01(src[static_cast<std::size_t>(y) * width + x]);
        }
      }
    }
    for (int t = 0; t < m.texture_count(); ++t) {
      const auto src = m.texture(t);
      for (int c = 0; c < 3; ++c) {
        float* dst = rgb.data() + ps * (3 * t + c);
        for (int y = 0; y < height; ++y) {
          for (int x = 0; x < width; ++x) {
            dst[static_cast<std::size_t>(y + 1) * stride + x + 1] =
                detail::clamp01(src[(static_cast<std::size_t>(y) * width + x) * 3 + c]);
          }
        }
      }
    }
  }

  std::size_t layer_size() const { return static_cast<std::size_t>(stride) * (height + 2) + kTail; }
  const float* alpha_layer(int plane) const { return alpha.data() + layer_size() * plane; }
  /// Red channel of the plane's texture; green and blue follow at layer_size() offsets.
  const float* texture_layer(int plane) const {
    return rgb.data() + layer_size() * 3 * texture_index(plane, planes, sharing);
  }
};

namespace detail {

/// Planar accumulators for one output row.
struct RowAccum {
  float* r;
  float* g;
  float* b;
  float* a;
};

/// Scalar sample of one plane at target pixel (x, y); the vector kernels repeat these exact
/// float operations lane by lane.
inline void prepared_pixel(const PreparedMpi& pm, const float* h, const float* al, const float* tx, int x, float yf,
                           const RowAccum& acc) noexcept {
  const float xf = static_cast<float>(x);
  const float w = h[6] * xf + h[7] * yf + h[8];
  if (!(w > 0.0f)) return;
  const float inv = 1.0f / w;
  const float u = (h[0] * xf + h[1] * yf + h[2]) * inv;
  const float v = (h[3] * xf + h[4] * yf + h[5]) * inv;
  if (!(u > -1.0f) || !(v > -1.0f) || !(u < float(pm.width)) || !(v < float(pm.height))) return;
  const int xi = static_cast<int>(u + 1.0f) - 1;
  const int yi = static_cast<int>(v + 1.0f) - 1;
  const float fx = u - float(xi), fy = v - float(yi);
  const std::size_t p = static_cast<std::size_t>(yi + 1) * pm.stride + (xi + 1);
  const std::size_t q = p + pm.stride;
  const float a = lerp2(al[p], al[p + 1], al[q], al[q + 1], fx, fy);
  if (a == 0.0f) return;
  float* out[3] = {acc.r, acc.g, acc.b};
  for (int c = 0; c < 3; ++c) {
    const float* tc = tx + pm.layer_size() * c;
    const float col = lerp2(tc[p], tc[p + 1], tc[q], tc[q + 1], fx, fy);
    out[c][x] = over(out[c][x], col, a);
  }
  acc.a[x] = over(acc.a[x], 1.0f, a);
}

#if defined(__GNUC__) && defined(__x86_64__)
#define MPIFORGE_HAVE_SIMD_KERNELS 1

__attribute__((target("avx2"))) inline __m256 lerp8(__m256 fx, __m256 fy, __m256 a00, __m256 a10, __m256 a01,
                                                     __m256 a11) noexcept {
  const __m256 top = _mm256_add_ps(a00, _mm256_mul_ps(fx, _mm256_sub_ps(a10, a00)));
  const __m256 bot = _mm256_add_ps(a01, _mm256_mul_ps(fx, _mm256_sub_ps(a11, a01)));
  return _mm256_add_ps(top, _mm256_mul_ps(fy, _mm256_sub_ps(bot, top)));
}

/// Eight pixels per step; lanes that miss the plane or see zero alpha blend with a = 0, which
/// leaves the accumulators unchanged exactly as the scalar early exit does. Returns the first
/// column left for the scalar tail.
__attribute__((target("avx2"))) inline int prepared_span_avx2(const PreparedMpi& pm, const float* h, int plane, int y, int x_begin,
                                                       int x_end, const RowAccum& acc) {
  const float yf = static_cast<float>(y);
  const __m256 lane = _mm256_setr_ps(0, 1, 2, 3, 4, 5, 6, 7);
  const __m256 one = _mm256_set1_ps(1.0f), minus_one = _mm256_set1_ps(-1.0f), zero = _mm256_setzero_ps();
  const __m256 wmax = _mm256_set1_ps(float(pm.width)), hmax = _mm256_set1_ps(float(pm.height));
  const __m256i ione = _mm256_set1_epi32(1), istride = _mm256_set1_epi32(pm.stride);
  const int vec_end = x_begin + (x_end - x_begin) / 8 * 8;
  const float* al = pm.alpha_layer(plane);
  const float* tx = pm.texture_layer(plane);
  const __m256 h0 = _mm256_set1_ps(h[0]), h3 = _mm256_set1_ps(h[3]), h6 = _mm256_set1_ps(h[6]);
  const __m256 h1y = _mm256_set1_ps(h[1] * yf), h4y = _mm256_set1_ps(h[4] * yf), h7y = _mm256_set1_ps(h[7] * yf);
  const __m256 h2 = _mm256_set1_ps(h[2]), h5 = _mm256_set1_ps(h[5]), h8 = _mm256_set1_ps(h[8]);
  for (int x = x_begin; x < vec_end; x += 8) {
    const __m256 xf = _mm256_add_ps(_mm256_set1_ps(float(x)), lane);
    const __m256 w = _mm256_add_ps(_mm256_add_ps(_mm256_mul_ps(h6, xf), h7y), h8);
    __m256 ok = _mm256_cmp_ps(w, zero, _CMP_GT_OQ);
    if (_mm256_movemask_ps(ok) == 0) continue;
    const __m256 inv = _mm256_div_ps(one, w);
    const __m256 u = _mm256_mul_ps(_mm256_add_ps(_mm256_add_ps(_mm256_mul_ps(h0, xf), h1y), h2), inv);
    const __m256 v = _mm256_mul_ps(_mm256_add_ps(_mm256_add_ps(_mm256_mul_ps(h3, xf), h4y), h5), inv);
    ok = _mm256_and_ps(ok, _mm256_and_ps(_mm256_cmp_ps(u, minus_one, _CMP_GT_OQ), _mm256_cmp_ps(v, minus_one, _CMP_GT_OQ)));
    ok = _mm256_and_ps(ok, _mm256_and_ps(_mm256_cmp_ps(u, wmax, _CMP_LT_OQ), _mm256_cmp_ps(v, hmax, _CMP_LT_OQ)));
    if (_mm256_movemask_ps(ok) == 0) continue;
    const __m256 us = _mm256_and_ps(u, ok), vs = _mm256_and_ps(v, ok);
    const __m256i xi = _mm256_sub_epi32(_mm256_cvttps_epi32(_mm256_add_ps(us, one)), ione);
    const __m256i yi = _mm256_sub_epi32(_mm256_cvttps_epi32(_mm256_add_ps(vs, one)), ione);
    const __m256 fx = _mm256_sub_ps(us, _mm256_cvtepi32_ps(xi));
    const __m256 fy = _mm256_sub_ps(vs, _mm256_cvtepi32_ps(yi));
    const __m256i p = _mm256_and_si256(
        _mm256_add_epi32(_mm256_mullo_epi32(_mm256_add_epi32(yi, ione), istride), _mm256_add_epi32(xi, ione)),
        _mm256_castps_si256(ok));
    const __m256i q = _mm256_add_epi32(p, istride);
    __m256 a = lerp8(fx, fy, _mm256_i32gather_ps(al, p, 4), _mm256_i32gather_ps(al + 1, p, 4),
                     _mm256_i32gather_ps(al, q, 4), _mm256_i32gather_ps(al + 1, q, 4));
    a = _mm256_and_ps(a, ok);
    if (_mm256_movemask_ps(_mm256_cmp_ps(a, zero, _CMP_NEQ_UQ)) == 0) continue;
    const __m256 keep = _mm256_sub_ps(one, a);
    float* out[3] = {acc.r, acc.g, acc.b};
    for (int c = 0; c < 3; ++c) {
      const float* tc = tx + pm.layer_size() * c;
      const __m256 col = lerp8(fx, fy, _mm256_i32gather_ps(tc, p, 4), _mm256_i32gather_ps(tc + 1, p, 4),
                               _mm256_i32gather_ps(tc, q, 4), _mm256_i32gather_ps(tc + 1, q, 4));
      _mm256_storeu_ps(out[c] + x, _mm256_add_ps(_mm256_mul_ps(_mm256_loadu_ps(out[c] + x), keep), _mm256_mul_ps(col, a)));
    }
    _mm256_storeu_ps(acc.a + x, _mm256_add_ps(_mm256_mul_ps(_mm256_loadu_ps(acc.a + x), keep), a));
  }
  return vec_end;
}

__attribute__((target("avx512f"))) inline __m512 lerp16(__m512 fx, __m512 fy, __m512 a00, __m512 a10, __m512 a01,
                                                        __m512 a11) noexcept {
  const __m512 top = _mm512_add_ps(a00, _mm512_mul_ps(fx, _mm512_sub_ps(a10, a00)));
  const __m512 bot = _mm512_add_ps(a01, _mm512_mul_ps(fx, _mm512_sub_ps(a11, a01)));
  return _mm512_add_ps(top, _mm512_mul_ps(fy, _mm512_sub_ps(bot, top)));
}

__attribute__((target("avx512f"))) inline int lane_of(__m512i v, int l) noexcept {
  return _mm_cvtsi128_si32(_mm512_castsi512_si128(_mm512_permutexvar_epi32(_mm512_set1_epi32(l), v)));
}

/// Four bilinear taps for sixteen lanes, from window loads plus permutes or from gathers.
/// Window rows start at texel r0; lanes in `lower` read one row further down.
__attribute__((target("avx512f"))) inline void taps16(const float* layer, __mmask16 m, bool windowed, __mmask16 lower,
                                                      std::size_t r0, std::size_t stride, __m512i rel, __m512i rel1,
                                                      __m512i p, __m512i q, __m512 (&t)[4]) noexcept {
  if (windowed) {
    const float* w0 = layer + r0;
    const float* w1 = w0 + stride;
    const __m512 lo0 = _mm512_loadu_ps(w0), hi0 = _mm512_loadu_ps(w0 + 16);
    const __m512 lo1 = _mm512_loadu_ps(w1), hi1 = _mm512_loadu_ps(w1 + 16);
    t[0] = _mm512_maskz_permutex2var_ps(m, lo0, rel, hi0);
    t[1] = _mm512_maskz_permutex2var_ps(m, lo0, rel1, hi0);
    t[2] = _mm512_maskz_permutex2var_ps(m, lo1, rel, hi1);
    t[3] = _mm512_maskz_permutex2var_ps(m, lo1, rel1, hi1);
    if (lower) {
      const float* w2 = w1 + stride;
      const __m512 lo2 = _mm512_loadu_ps(w2), hi2 = _mm512_loadu_ps(w2 + 16);
      const __m512 b0 = _mm512_permutex2var_ps(lo2, rel, hi2), b1 = _mm512_permutex2var_ps(lo2, rel1, hi2);
      const __mmask16 down = lower & m;
      t[0] = _mm512_mask_mov_ps(t[0], down, t[2]);
      t[1] = _mm512_mask_mov_ps(t[1], down, t[3]);
      t[2] = _mm512_mask_mov_ps(t[2], down, b0);
      t[3] = _mm512_mask_mov_ps(t[3], down, b1);
    }
    return;
  }
  const __m512 zero = _mm512_setzero_ps();
  t[0] = _mm512_mask_i32gather_ps(zero, m, p, layer, 4);
  t[1] = _mm512_mask_i32gather_ps(zero, m, p, layer + 1, 4);
  t[2] = _mm512_mask_i32gather_ps(zero, m, q, layer, 4);
  t[3] = _mm512_mask_i32gather_ps(zero, m, q, layer + 1, 4);
}

/// Sixteen-lane variant; dead lanes are masked out of the gathers and the blend.
__attribute__((target("avx512f"))) inline int prepared_span_avx512(const PreparedMpi& pm, const float* h, int plane, int y, int x_begin,
                                                       int x_end, const RowAccum& acc) {
  const float yf = static_cast<float>(y);
  const __m512 lane = _mm512_setr_ps(0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15);
  const __m512 one = _mm512_set1_ps(1.0f), minus_one = _mm512_set1_ps(-1.0f), zero = _mm512_setzero_ps();
  const __m512 wmax = _mm512_set1_ps(float(pm.width)), hmax = _mm512_set1_ps(float(pm.height));
  const __m512i ione = _mm512_set1_epi32(1), istride = _mm512_set1_epi32(pm.stride);
  const int vec_end = x_begin + (x_end - x_begin) / 16 * 16;
  const float* al = pm.alpha_layer(plane);
  const float* tx = pm.texture_layer(plane);
  const __m512 h0 = _mm512_set1_ps(h[0]), h3 = _mm512_set1_ps(h[3]), h6 = _mm512_set1_ps(h[6]);
  const __m512 h1y = _mm512_set1_ps(h[1] * yf), h4y = _mm512_set1_ps(h[4] * yf), h7y = _mm512_set1_ps(h[7] * yf);
  const __m512 h2 = _mm512_set1_ps(h[2]), h5 = _mm512_set1_ps(h[5]), h8 = _mm512_set1_ps(h[8]);
  for (int x = x_begin; x < vec_end; x += 16) {
    const __m512 xf = _mm512_add_ps(_mm512_set1_ps(float(x)), lane);
    const __m512 w = _mm512_add_ps(_mm512_add_ps(_mm512_mul_ps(h6, xf), h7y), h8);
    __mmask16 ok = _mm512_cmp_ps_mask(w, zero, _CMP_GT_OQ);
    if (ok == 0) continue;
    const __m512 inv = _mm512_div_ps(one, w);
    const __m512 u = _mm512_mul_ps(_mm512_add_ps(_mm512_add_ps(_mm512_mul_ps(h0, xf), h1y), h2), inv);
    const __m512 v = _mm512_mul_ps(_mm512_add_ps(_mm512_add_ps(_mm512_mul_ps(h3, xf), h4y), h5), inv);
    ok = _mm512_mask_cmp_ps_mask(ok, u, minus_one, _CMP_GT_OQ);
    ok = _mm512_mask_cmp_ps_mask(ok, v, minus_one, _CMP_GT_OQ);
    ok = _mm512_mask_cmp_ps_mask(ok, u, wmax, _CMP_LT_OQ);
    ok = _mm512_mask_cmp_ps_mask(ok, v, hmax, _CMP_LT_OQ);
    if (ok == 0) continue;
    const __m512i xi = _mm512_sub_epi32(_mm512_cvttps_epi32(_mm512_maskz_add_ps(ok, u, one)), ione);
    const __m512i yi = _mm512_sub_epi32(_mm512_cvttps_epi32(_mm512_maskz_add_ps(ok, v, one)), ione);
    const __m512 fx = _mm512_sub_ps(u, _mm512_cvtepi32_ps(xi));
    const __m512 fy = _mm512_sub_ps(v, _mm512_cvtepi32_ps(yi));
    const __m512i col_idx = _mm512_add_epi32(xi, ione);
    const __m512i row_idx = _mm512_add_epi32(yi, ione);
    // Near-affine warps keep a 16-pixel run on one source row pair inside a 32-texel window;
    // then two-source permutes from plain loads replace the gathers.
    const int first = __builtin_ctz(ok), last = 31 - __builtin_clz(ok);
    const int c_first = lane_of(col_idx, first), c_last = lane_of(col_idx, last);
    const int r_first = lane_of(row_idx, first), r_last = lane_of(row_idx, last);
    const int base = std::max(0, std::min(c_first, c_last) - 1);
    const int row_base = std::min(r_first, r_last);
    const __m512i rel = _mm512_sub_epi32(col_idx, _mm512_set1_epi32(base));
    const __m512i rrel = _mm512_sub_epi32(row_idx, _mm512_set1_epi32(row_base));
    const bool windowed = _mm512_mask_cmpgt_epu32_mask(ok, rel, _mm512_set1_epi32(30)) == 0 &&
                          _mm512_mask_cmpgt_epu32_mask(ok, rrel, ione) == 0;
    // Lanes one source row further down, when the run straddles a row boundary.
    const __mmask16 lower = _mm512_mask_cmpeq_epi32_mask(ok, rrel, ione);
    const __m512i rel1 = _mm512_add_epi32(rel, ione);
    const std::size_t r0 = static_cast<std::size_t>(row_base) * pm.stride + base;
    const __m512i p = _mm512_add_epi32(_mm512_mullo_epi32(row_idx, istride), col_idx);
    const __m512i q = _mm512_add_epi32(p, istride);
    __m512 taps[4];
    taps16(al, ok, windowed, lower, r0, pm.stride, rel, rel1, p, q, taps);
    const __m512 a = lerp16(fx, fy, taps[0], taps[1], taps[2], taps[3]);
    const __mmask16 live = _mm512_mask_cmp_ps_mask(ok, a, zero, _CMP_NEQ_UQ);
    if (live == 0) continue;
    const __m512 keep = _mm512_sub_ps(one, a);
    float* out[3] = {acc.r, acc.g, acc.b};
    for (int c = 0; c < 3; ++c) {
      const float* tc = tx + pm.layer_size() * c;
      taps16(tc, live, windowed, lower, r0, pm.stride, rel, rel1, p, q, taps);
      const __m512 col = lerp16(fx, fy, taps[0], taps[1], taps[2], taps[3]);
      const __m512 prev = _mm512_loadu_ps(out[c] + x);
      _mm512_storeu_ps(out[c] + x,
                       _mm512_mask_add_ps(prev, live, _mm512_mul_ps(prev, keep), _mm512_mul_ps(col, a)));
    }
    const __m512 pa = _mm512_loadu_ps(acc.a + x);
    _mm512_storeu_ps(acc.a + x, _mm512_mask_add_ps(pa, live, _mm512_mul_ps(pa, keep), a));
  }
  return vec_end;
}

#endif

inline std::atomic<SimdLevel>& simd_level_slot() {
  static std::atomic<SimdLevel> level{best_simd_level()};
  return level;
}

/// Composite one plane over columns [x_begin, x_end) of output row y.
inline void prepared_span(const PreparedMpi& pm, const float* h, int plane, int y, int x_begin, int x_end,
                          const RowAccum& acc) {
  int done = x_begin;
#ifdef MPIFORGE_HAVE_SIMD_KERNELS
  switch (simd_level_slot().load(std::memory_order_relaxed)) {
    case SimdLevel::Avx512: done = prepared_span_avx512(pm, h, plane, y, x_begin, x_end, acc); break;
    case SimdLevel::Avx2: done = prepared_span_avx2(pm, h, plane, y, x_begin, x_end, acc); break;
    case SimdLevel::Scalar: break;
  }
#endif
  const float* al = pm.alpha_layer(plane);
  const float* tx = pm.texture_layer(plane);
  for (int x = done; x < x_end; ++x) prepared_pixel(pm, h, al, tx, x, static_cast<float>(y), acc);
}

}  // namespace detail

/// Kernel used by render_prepared; defaults to the widest one the CPU supports.
inline SimdLevel simd_level() { return detail::simd_level_slot().load(); }

/// Select the vector kernel; unsupported levels fall back to the best supported one below.
inline void set_simd_level(SimdLevel l) {
  while (!simd_supported(l)) l = static_cast<SimdLevel>(static_cast<int>(l) - 1);
  detail::simd_level_slot().store(l);
}

/// Fast float rendering of a prepared snapshot. Results equal render_view on the source Mpi up
/// to the order of float operations inside the vector kernel.
inline RenderedImage render_prepared(const PreparedMpi& pm, const CameraModel& target, const RenderOptions& opts = {}) {
  target.validate();
  std::vector<detail::PlaneWarp<float>> warps(pm.planes);
  RenderedImage out;
  for (int i = 0; i < pm.planes; ++i) {
    warps[i] = detail::make_plane_warp<float>(pm.host_camera, target, pm.depths[i]);
    if (!warps[i].valid) ++out.degenerate_planes;
  }
  const int W = target.width;
  out.color = Image(W, target.height, 3);
  out.alpha = Image(W, target.height, 1);
  // Tiles of kTileRows x kTileCols keep each plane's source window cache resident while all
  // planes are composited over the tile.
  constexpr int kTileRows = 8, kTileCols = 128;
  const int blocks = (target.height + kTileRows - 1) / kTileRows;
  parallel_chunks(blocks, resolve_threads(opts.threads), [&](int bb, int be, int) {
    std::vector<float> buf(4 * static_cast<std::size_t>(kTileRows) * kTileCols);
    for (int blk = bb; blk < be; ++blk) {
      const int y0 = blk * kTileRows, y1 = std::min(target.height, y0 + kTileRows);
      for (int x0 = 0; x0 < W; x0 += kTileCols) {
        const int x1 = std::min(W, x0 + kTileCols);
        std::fill(buf.begin(), buf.end(), 0.0f);
        // Accumulators are indexed by absolute column, hence the -x0 shift.
        auto row_acc = [&](int y) {
          float* r = buf.data() + static_cast<std::size_t>(y - y0) * 4 * kTileCols - x0;
          return detail::RowAccum{r, r + kTileCols, r + 2 * kTileCols, r + 3 * kTileCols};
        };
        for (int i = pm.planes - 1; i >= 0; --i) {
          if (!warps[i].valid) continue;
          for (int y = y0; y < y1; ++y) detail::prepared_span(pm, warps[i].h, i, y, x0, x1, row_acc(y));
        }
        for (int y = y0; y < y1; ++y) {
          const detail::RowAccum acc = row_acc(y);
          float* crow = out.color.data.data() + static_cast<std::size_t>(y) * W * 3;
          float* arow = out.alpha.data.data() + static_cast<std::size_t>(y) * W;
          for (int x = x0; x < x1; ++x) {
            crow[x * 3] = acc.r[x];
            crow[x * 3 + 1] = acc.g[x];
            crow[x * 3 + 2] = acc.b[x];
            arow[x] = acc.a[x];
          }
        }
      }
    }
  });
  return out;
}

/// Render the MPI into `target`: warp every plane at its refined depth and composite
/// back-to-front. Planes that pass through the target centre are skipped and counted.
/// Output is bit-identical for any thread count.
template <typename T>
RenderedImageT<T> render_view(const MpiT<T>& mpi, const CameraModel& target, const RenderOptions& opts = {}) {
  if constexpr (std::is_same_v<T, float>) {
    return render_prepared(PreparedMpi(mpi), target, opts);
  }
  target.validate();
  const std::vector<double> depths = refined_depths_of(mpi);
  std::vector<detail::PlaneWarp<T>> warps(mpi.planes);
  RenderedImageT<T> out;
  for (int i = 0; i < mpi.planes; ++i) {
    warps[i] = detail::make_plane_warp<T>(mpi.host_camera, target, depths[i]);
    if (!warps[i].valid) ++out.degenerate_planes;
  }
  out.color = ImageT<T>(target.width, target.height, 3);
  out.alpha = ImageT<T>(target.width, target.height, 1);
  parallel_chunks(target.height, resolve_threads(opts.threads), [&](int b, int e, int) {
    detail::render_rows<T, true>(mpi, warps, depths, target.width, b, e, out.color, out.alpha);
  });
  return out;
}

/// Depth visualisation: the same compositing with each plane's colour replaced by its refined depth.
template <typename T>
ImageT<T> render_depth(const MpiT<T>& mpi, const CameraModel& target, const RenderOptions& opts = {},
                       int* degenerate_planes = nullptr) {
  target.validate();
  const std::vector<double> depths = refined_depths_of(mpi);
  std::vector<detail::PlaneWarp<T>> warps(mpi.planes);
  int degenerate = 0;
  for (int i = 0; i < mpi.planes; ++i) {
    warps[i] = detail::make_plane_warp<T>(mpi.host_camera, target, depths[i]);
    if (!warps[i].valid) ++degenerate;
  }
  if (degenerate_planes) *degenerate_planes = degenerate;
  ImageT<T> depth(target.width, target.height, 1);
  ImageT<T> alpha(target.width, target.height, 1);
  parallel_chunks(target.height, resolve_threads(opts.threads), [&](int b, int e, int) {
    detail::render_rows<T, false>(mpi, warps, depths, target.width, b, e, depth, alpha);
  });
  return depth;
}

/// Channelwise clamp((pixel + beta) * gamma) on a 3-channel image.
template <typename T>
ImageT<T> apply_exposure(const ImageT<T>& image, const CameraExposure& exposure) {
  if (image.channels != 3) throw Error(ErrorCode::MismatchedDims, "exposure expects 3 channels");
  for (double g : exposure.gamma) {
    if (!(g > 0.0)) throw Error(ErrorCode::InvalidArgument, "exposure gamma must be positive");
  }
  ImageT<T> out = image;
  for (std::size_t p = 0; p < image.pixel_count(); ++p) {
    for (int c = 0; c < 3; ++c) {
      T& v = out.data[p * 3 + c];
      v = detail::clamp01(static_cast<T>((double(v) + exposure.beta[c]) * exposure.gamma[c]));
    }
  }
  return out;
}

template <typename T>
RenderedImageT<T> apply_exposure(const RenderedImageT<T>& image, const CameraExposure& exposure) {
  RenderedImageT<T> out = image;
  out.color = apply_exposure(image.color, exposure);
  return out;
}

}  // namespace mpiforge
