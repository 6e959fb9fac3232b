#include <cmath>

#include "dgmix/data.hpp"
#include "dgmix/errors.hpp"

namespace dgmix {

Tensor rotate_image(const Tensor& image, double angle_deg) {
  detail::require_rank(image, 3, "rotate_image", "image");
  if (image.extent(0) != 1) {
    throw ShapeError("rotate_image: expected single-channel image, got " + shape_str(image.shape));
  }
  if (angle_deg == 0.0) return image;

  const std::size_t h = image.extent(1), w = image.extent(2);
  const double cy = (static_cast<double>(h) - 1.0) / 2.0;
  const double cx = (static_cast<double>(w) - 1.0) / 2.0;
  const double rad = angle_deg * M_PI / 180.0;
  const double c = std::cos(rad), s = std::sin(rad);

  Tensor out({1, h, w});
  const double* src = image.ptr();
  double* dst = out.ptr();
  for (std::size_t r = 0; r < h; ++r) {
    const double dy = static_cast<double>(r) - cy;
    for (std::size_t col = 0; col < w; ++col) {
      const double dx = static_cast<double>(col) - cx;
      // inverse map: rotate the destination offset clockwise to find the source
      const double sx = c * dx - s * dy + cx;
      const double sy = s * dx + c * dy + cy;
      const double fx = std::floor(sx), fy = std::floor(sy);
      const double ax = sx - fx, ay = sy - fy;
      const long x0 = static_cast<long>(fx), y0 = static_cast<long>(fy);

      auto at = [&](long y, long x) -> double {
        if (y < 0 || x < 0 || y >= static_cast<long>(h) || x >= static_cast<long>(w)) return 0.0;
        return src[static_cast<std::size_t>(y) * w + static_cast<std::size_t>(x)];
      };
      const double top = (1.0 - ax) * at(y0, x0) + ax * at(y0, x0 + 1);
      const double bot = (1.0 - ax) * at(y0 + 1, x0) + ax * at(y0 + 1, x0 + 1);
      dst[r * w + col] = (1.0 - ay) * top + ay * bot;
    }
  }
  return out;
}

}  // namespace dgmix
