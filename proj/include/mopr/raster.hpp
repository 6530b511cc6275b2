#pragma once

#include <algorithm>
#include <cstdint>
#include <vector>

namespace mopr {

// Integer pixel rectangle, half-open on the max side.
struct Rect {
  int x0 = 0, y0 = 0, x1 = 0, y1 = 0;

  int width() const { return x1 - x0; }
  int height() const { return y1 - y0; }
  bool empty() const { return x1 <= x0 || y1 <= y0; }

  Rect expanded(int m, int img_w, int img_h) const {
    return Rect{std::max(0, x0 - m), std::max(0, y0 - m), std::min(img_w, x1 + m), std::min(img_h, y1 + m)};
  }
  static Rect full(int w, int h) { return Rect{0, 0, w, h}; }
  static Rect join(const Rect& a, const Rect& b) {
    if (a.empty()) return b;
    if (b.empty()) return a;
    return Rect{std::min(a.x0, b.x0), std::min(a.y0, b.y0), std::max(a.x1, b.x1), std::max(a.y1, b.y1)};
  }
};

template <typename T>
struct Image {
  int width = 0;
  int height = 0;
  std::vector<T> data;

  Image() = default;
  Image(int w, int h, T fill = T{}) : width(w), height(h), data(std::size_t(w) * h, fill) {}

  T& at(int x, int y) { return data[std::size_t(y) * width + x]; }
  const T& at(int x, int y) const { return data[std::size_t(y) * width + x]; }
  bool inside(int x, int y) const { return x >= 0 && x < width && y >= 0 && y < height; }
  void fill(T v) { std::fill(data.begin(), data.end(), v); }
  bool same_shape(const Image& o) const { return width == o.width && height == o.height; }
};

using ImageF = Image<float>;
using ImageU8 = Image<std::uint8_t>;
using ImageI32 = Image<std::int32_t>;

// Bounding box of nonzero pixels; empty rect when the image is all zero.
Rect nonzero_bbox(const ImageU8& img);

// Separable Gaussian blur with a fixed (7,7) kernel. Only pixels inside `roi`
// (expanded by the kernel radius internally) are produced; the rest stay 0.
ImageF gaussian_blur7(const ImageU8& img, double sigma, const Rect& roi);
ImageF gaussian_blur7(const ImageU8& img, double sigma);

// Sobel gradient orientation of `img` in [0, 2*pi). atan2(0,0) yields 0.
ImageF gradient_orientation(const ImageF& img, const Rect& roi);

// blurred-support mask: blur(img) > eps.
ImageU8 binarize(const ImageF& img, float threshold);

// Chebyshev dilation by radius r (square structuring element).
ImageU8 dilate(const ImageU8& mask, int radius);

// Pixels of `mask` with at least one 4-neighbour outside the mask.
// Image-border pixels of the mask count as contour.
ImageU8 mask_contour(const ImageU8& mask);

bool masks_intersect(const ImageU8& a, const ImageU8& b);

std::size_t count_nonzero(const ImageU8& img);

}  // namespace mopr
