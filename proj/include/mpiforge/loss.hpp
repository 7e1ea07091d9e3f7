#pragma once

#include <cmath>
#include <memory>
#include <vector>

#include "mpiforge/errors.hpp"
#include "mpiforge/image.hpp"

namespace mpiforge {

/// Maps an image to a list of feature maps; the perceptual term is the mean L1 distance between
/// the feature maps of the rendering and of the ground truth, summed over maps. Implementations
/// must also provide the vector-Jacobian product so the term is differentiable.
class FeatureExtractor {
 public:
  virtual ~FeatureExtractor() = default;
  virtual std::vector<ImageD> features(const ImageD& image) const = 0;
  virtual ImageD backward(const ImageD& image, const std::vector<ImageD>& feature_grads) const = 0;
};

/// 2x2 average-pooling pyramid. Level 0 is the image itself.
class AveragePoolPyramid final : public FeatureExtractor {
 public:
  explicit AveragePoolPyramid(int levels = 3) : levels_(levels) {}

  std::vector<ImageD> features(const ImageD& image) const override {
    std::vector<ImageD> out{image};
    for (int l = 1; l < levels_; ++l) {
      const ImageD& prev = out.back();
      if (prev.width < 2 || prev.height < 2) break;
      ImageD next(prev.width / 2, prev.height / 2, prev.channels);
      for (int y = 0; y < next.height; ++y) {
        for (int x = 0; x < next.width; ++x) {
          for (int c = 0; c < prev.channels; ++c) {
            next.at(x, y, c) = 0.25 * (prev.at(2 * x, 2 * y, c) + prev.at(2 * x + 1, 2 * y, c) +
                                       prev.at(2 * x, 2 * y + 1, c) + prev.at(2 * x + 1, 2 * y + 1, c));
          }
        }
      }
      out.push_back(std::move(next));
    }
    return out;
  }

  ImageD backward(const ImageD& image, const std::vector<ImageD>& grads) const override {
    // Walk the pyramid from the coarsest level down, pushing gradients to the finer level.
    std::vector<ImageD> acc = grads;
    for (std::size_t l = acc.size(); l-- > 1;) {
      ImageD& fine = acc[l - 1];
      const ImageD& coarse = acc[l];
      for (int y = 0; y < coarse.height; ++y) {
        for (int x = 0; x < coarse.width; ++x) {
          for (int c = 0; c < coarse.channels; ++c) {
            const double g = 0.25 * coarse.at(x, y, c);
            fine.at(2 * x, 2 * y, c) += g;
            fine.at(2 * x + 1, 2 * y, c) += g;
            fine.at(2 * x, 2 * y + 1, c) += g;
            fine.at(2 * x + 1, 2 * y + 1, c) += g;
          }
        }
      }
    }
    if (acc.empty()) return ImageD(image.width, image.height, image.channels);
    return acc[0];
  }

 private:
  int levels_;
};

struct LossConfig {
  double lambda_grad = 1.0;
  double lambda_perceptual = 0.0;
  double foreground_weight = 10.0;
  std::shared_ptr<const FeatureExtractor> extractor;  ///< null disables the perceptual term
};

/// Full: foreground pixels weigh `foreground_weight`, the rest 1.
/// Background: foreground pixels are excluded outright (weight 0).
enum class LossRegion { Full, Background };

struct LossBreakdown {
  double l2 = 0.0;
  double grad = 0.0;
  double perceptual = 0.0;
  double total = 0.0;
  double lambda_grad = 1.0;
  double lambda_perceptual = 0.0;
  double foreground_weight = 10.0;
};

namespace detail {

inline std::vector<double> pixel_weights(int w, int h, const Mask* mask, const LossConfig& cfg, LossRegion region) {
  std::vector<double> wts(static_cast<std::size_t>(w) * h, 1.0);
  if (!mask) return wts;
  if (mask->width != w || mask->height != h || mask->channels != 1) {
    throw Error(ErrorCode::SizeMismatch, "mask does not match image size");
  }
  const double fg = region == LossRegion::Full ? cfg.foreground_weight : 0.0;
  for (std::size_t i = 0; i < wts.size(); ++i) {
    if (mask->data[i] != 0) wts[i] = fg;
  }
  return wts;
}

}  // namespace detail

/// Pixel weight w(p) normalises every term by the total weight:
///   l2   = sum_p w(p) * |r(p) - t(p)|^2 / sum_p w(p)
///   grad = same over forward differences along x, plus along y; a difference pair weighs the
///          smaller of its two pixel weights.
/// When `d_rendered` is non-null it receives d total / d rendered.
inline LossBreakdown compute_loss(const ImageD& rendered, const ImageD& truth, const Mask* mask,
                                  const LossConfig& cfg, LossRegion region = LossRegion::Full,
                                  ImageD* d_rendered = nullptr) {
  if (!rendered.same_shape(truth)) throw Error(ErrorCode::SizeMismatch, "rendered and truth differ in shape");
  const int w = rendered.width, h = rendered.height, ch = rendered.channels;
  const std::vector<double> wts = detail::pixel_weights(w, h, mask, cfg, region);

  LossBreakdown out;
  out.lambda_grad = cfg.lambda_grad;
  out.lambda_perceptual = cfg.lambda_perceptual;
  out.foreground_weight = cfg.foreground_weight;
  if (d_rendered) *d_rendered = ImageD(w, h, ch);

  double wsum = 0.0;
  for (double v : wts) wsum += v;
  if (wsum > 0.0) {
    double acc = 0.0;
    for (std::size_t p = 0; p < wts.size(); ++p) {
      if (wts[p] == 0.0) continue;
      for (int c = 0; c < ch; ++c) {
        const double d = rendered.data[p * ch + c] - truth.data[p * ch + c];
        acc += wts[p] * d * d;
        if (d_rendered) d_rendered->data[p * ch + c] += 2.0 * wts[p] * d / wsum;
      }
    }
    out.l2 = acc / wsum;
  }

  auto gradient_term = [&](int dx, int dy) {
    double pair_wsum = 0.0;
    for (int y = 0; y + dy < h; ++y) {
      for (int x = 0; x + dx < w; ++x) {
        pair_wsum += std::min(wts[y * w + x], wts[(y + dy) * w + x + dx]);
      }
    }
    if (pair_wsum <= 0.0) return 0.0;
    double acc = 0.0;
    const double scale = cfg.lambda_grad / pair_wsum;
    for (int y = 0; y + dy < h; ++y) {
      for (int x = 0; x + dx < w; ++x) {
        const std::size_t p = static_cast<std::size_t>(y) * w + x;
        const std::size_t q = static_cast<std::size_t>(y + dy) * w + x + dx;
        const double pw = std::min(wts[p], wts[q]);
        if (pw == 0.0) continue;
        for (int c = 0; c < ch; ++c) {
          const double d = (rendered.data[q * ch + c] - rendered.data[p * ch + c]) -
                           (truth.data[q * ch + c] - truth.data[p * ch + c]);
          acc += pw * d * d;
          if (d_rendered) {
            const double g = 2.0 * pw * d * scale;
            d_rendered->data[q * ch + c] += g;
            d_rendered->data[p * ch + c] -= g;
          }
        }
      }
    }
    return acc / pair_wsum;
  };
  out.grad = gradient_term(1, 0) + gradient_term(0, 1);

  if (cfg.extractor && cfg.lambda_perceptual != 0.0) {
    ImageD r = rendered, t = truth;
    if (region == LossRegion::Background && mask) {
      for (std::size_t p = 0; p < wts.size(); ++p) {
        if (wts[p] != 0.0) continue;
        for (int c = 0; c < ch; ++c) {
          r.data[p * ch + c] = 0.0;
          t.data[p * ch + c] = 0.0;
        }
      }
    }
    const auto fr = cfg.extractor->features(r);
    const auto ft = cfg.extractor->features(t);
    if (fr.size() != ft.size()) throw Error(ErrorCode::SizeMismatch, "feature pyramids differ");
    std::vector<ImageD> fgrads;
    for (std::size_t l = 0; l < fr.size(); ++l) {
      if (!fr[l].same_shape(ft[l])) throw Error(ErrorCode::SizeMismatch, "feature maps differ");
      ImageD g(fr[l].width, fr[l].height, fr[l].channels);
      const double n = double(fr[l].data.size());
      double acc = 0.0;
      for (std::size_t i = 0; i < fr[l].data.size(); ++i) {
        const double d = fr[l].data[i] - ft[l].data[i];
        acc += std::abs(d);
        g.data[i] = cfg.lambda_perceptual * (d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0)) / n;
      }
      if (n > 0) out.perceptual += acc / n;
      fgrads.push_back(std::move(g));
    }
    if (d_rendered) {
      ImageD gi = cfg.extractor->backward(r, fgrads);
      for (std::size_t p = 0; p < wts.size(); ++p) {
        if (region == LossRegion::Background && mask && wts[p] == 0.0) continue;
        for (int c = 0; c < ch; ++c) d_rendered->data[p * ch + c] += gi.data[p * ch + c];
      }
    }
  }

  out.total = out.l2 + cfg.lambda_grad * out.grad + cfg.lambda_perceptual * out.perceptual;
  if (!std::isfinite(out.total)) throw Error(ErrorCode::NonFiniteLoss, "loss evaluated to a non-finite value");
  return out;
}

}  // namespace mpiforge
