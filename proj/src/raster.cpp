#include "mopr/raster.hpp"

#include <array>
#include <cmath>

namespace mopr {

namespace {
constexpr int kBlurRadius = 3;  // (7,7) kernel

std::array<float, 7> blur_kernel(double sigma) {
  std::array<float, 7> k{};
  double sum = 0.0;
  for (int i = -kBlurRadius; i <= kBlurRadius; ++i) {
    const double v = std::exp(-0.5 * (i * i) / (sigma * sigma));
    k[i + kBlurRadius] = float(v);
    sum += v;
  }
  for (auto& v : k) v = float(v / sum);
  return k;
}
}  // namespace

Rect nonzero_bbox(const ImageU8& img) {
  Rect r{img.width, img.height, 0, 0};
  bool any = false;
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      if (img.at(x, y)) {
        any = true;
        r.x0 = std::min(r.x0, x);
        r.y0 = std::min(r.y0, y);
        r.x1 = std::max(r.x1, x + 1);
        r.y1 = std::max(r.y1, y + 1);
      }
  return any ? r : Rect{};
}

ImageF gaussian_blur7(const ImageU8& img, double sigma, const Rect& roi) {
  const auto k = blur_kernel(sigma);
  ImageF out(img.width, img.height, 0.f);
  if (roi.empty()) return out;
  const Rect r = roi.expanded(kBlurRadius, img.width, img.height);
  // Horizontal pass over the ROI expanded once more so the vertical pass sees
  // every contributing row.
  const Rect rh = r.expanded(kBlurRadius, img.width, img.height);
  ImageF tmp(img.width, img.height, 0.f);
  for (int y = rh.y0; y < rh.y1; ++y)
    for (int x = rh.x0; x < rh.x1; ++x) {
      float acc = 0.f;
      for (int i = -kBlurRadius; i <= kBlurRadius; ++i) {
        const int xx = x + i;
        if (xx >= 0 && xx < img.width && img.at(xx, y)) acc += k[i + kBlurRadius];
      }
      tmp.at(x, y) = acc;
    }
  for (int y = r.y0; y < r.y1; ++y)
    for (int x = r.x0; x < r.x1; ++x) {
      float acc = 0.f;
      for (int i = -kBlurRadius; i <= kBlurRadius; ++i) {
        const int yy = y + i;
        if (yy >= 0 && yy < img.height) acc += k[i + kBlurRadius] * tmp.at(x, yy);
      }
      out.at(x, y) = acc;
    }
  return out;
}

ImageF gaussian_blur7(const ImageU8& img, double sigma) {
  return gaussian_blur7(img, sigma, Rect::full(img.width, img.height));
}

ImageF gradient_orientation(const ImageF& img, const Rect& roi) {
  ImageF out(img.width, img.height, 0.f);
  const Rect r = roi.expanded(1, img.width, img.height);
  auto px = [&](int x, int y) -> float {
    x = std::clamp(x, 0, img.width - 1);
    y = std::clamp(y, 0, img.height - 1);
    return img.at(x, y);
  };
  constexpr float kTwoPi = 6.283185307179586f;
  for (int y = r.y0; y < r.y1; ++y)
    for (int x = r.x0; x < r.x1; ++x) {
      const float gx = (px(x + 1, y - 1) + 2 * px(x + 1, y) + px(x + 1, y + 1)) -
                       (px(x - 1, y - 1) + 2 * px(x - 1, y) + px(x - 1, y + 1));
      const float gy = (px(x - 1, y + 1) + 2 * px(x, y + 1) + px(x + 1, y + 1)) -
                       (px(x - 1, y - 1) + 2 * px(x, y - 1) + px(x + 1, y - 1));
      float o = std::atan2(gy, gx);
      if (o < 0.f) o += kTwoPi;
      out.at(x, y) = o;
    }
  return out;
}

ImageU8 binarize(const ImageF& img, float threshold) {
  ImageU8 out(img.width, img.height, 0);
  for (std::size_t i = 0; i < img.data.size(); ++i) out.data[i] = img.data[i] > threshold ? 1 : 0;
  return out;
}

ImageU8 dilate(const ImageU8& mask, int radius) {
  if (radius <= 0) return mask;
  ImageU8 out(mask.width, mask.height, 0);
  const Rect bb = nonzero_bbox(mask);
  if (bb.empty()) return out;
  const Rect r = bb.expanded(radius, mask.width, mask.height);
  // Two-pass Chebyshev dilation (rows then columns).
  ImageU8 tmp(mask.width, mask.height, 0);
  for (int y = bb.y0; y < bb.y1; ++y)
    for (int x = r.x0; x < r.x1; ++x) {
      std::uint8_t v = 0;
      for (int i = -radius; i <= radius && !v; ++i) {
        const int xx = x + i;
        if (xx >= 0 && xx < mask.width && mask.at(xx, y)) v = 1;
      }
      tmp.at(x, y) = v;
    }
  for (int y = r.y0; y < r.y1; ++y)
    for (int x = r.x0; x < r.x1; ++x) {
      std::uint8_t v = 0;
      for (int i = -radius; i <= radius && !v; ++i) {
        const int yy = y + i;
        if (yy >= 0 && yy < mask.height && tmp.at(x, yy)) v = 1;
      }
      out.at(x, y) = v;
    }
  return out;
}

ImageU8 mask_contour(const ImageU8& mask) {
  ImageU8 out(mask.width, mask.height, 0);
  const Rect bb = nonzero_bbox(mask);
  for (int y = bb.y0; y < bb.y1; ++y)
    for (int x = bb.x0; x < bb.x1; ++x) {
      if (!mask.at(x, y)) continue;
      const bool border = x == 0 || y == 0 || x == mask.width - 1 || y == mask.height - 1;
      if (border || !mask.at(x - 1, y) || !mask.at(x + 1, y) || !mask.at(x, y - 1) || !mask.at(x, y + 1))
        out.at(x, y) = 1;
    }
  return out;
}

bool masks_intersect(const ImageU8& a, const ImageU8& b) {
  for (std::size_t i = 0; i < a.data.size(); ++i)
    if (a.data[i] && b.data[i]) return true;
  return false;
}

std::size_t count_nonzero(const ImageU8& img) {
  std::size_t n = 0;
  for (auto v : img.data) n += v ? 1 : 0;
  return n;
}

}  // namespace mopr
