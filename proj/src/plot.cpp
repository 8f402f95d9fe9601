#include "made/plot.hpp"

#include <algorithm>
#include <cmath>

namespace made {

namespace {

void put_pixel(Image& img, int x, int y, const std::array<std::uint8_t, 3>& c) {
  if (x < 0 || y < 0 || x >= img.width || y >= img.height) return;
  for (int k = 0; k < 3; ++k) img.at(y, x, k) = c[static_cast<std::size_t>(k)];
}

void draw_line(Image& img, int x0, int y0, int x1, int y1, const std::array<std::uint8_t, 3>& c) {
  const int dx = std::abs(x1 - x0), sx = x0 < x1 ? 1 : -1;
  const int dy = -std::abs(y1 - y0), sy = y0 < y1 ? 1 : -1;
  int err = dx + dy;
  while (true) {
    put_pixel(img, x0, y0, c);
    if (x0 == x1 && y0 == y1) break;
    const int e2 = 2 * err;
    if (e2 >= dy) { err += dy; x0 += sx; }
    if (e2 <= dx) { err += dx; y0 += sy; }
  }
}

}  // namespace

Image line_chart(const std::vector<Series>& series, double y_min, double y_max, int width, int height) {
  Image img(height, width, 255);
  const int left = 30, right = width - 15, top = 15, bottom = height - 25;
  const std::array<std::uint8_t, 3> black{0, 0, 0}, grid{220, 220, 220};

  double x_min = 0, x_max = 1;
  bool any = false;
  for (const auto& s : series) {
    for (double x : s.x) {
      if (!any) { x_min = x_max = x; any = true; }
      x_min = std::min(x_min, x);
      x_max = std::max(x_max, x);
    }
  }
  if (x_max - x_min < 1e-12) { x_min -= 0.5; x_max += 0.5; }
  if (y_max - y_min < 1e-12) y_max = y_min + 1.0;

  auto px = [&](double x) { return left + static_cast<int>(std::lround((x - x_min) / (x_max - x_min) * (right - left))); };
  auto py = [&](double y) { return bottom - static_cast<int>(std::lround((y - y_min) / (y_max - y_min) * (bottom - top))); };

  for (int q = 1; q <= 4; ++q) {
    const int y = py(y_min + (y_max - y_min) * q / 4.0);
    draw_line(img, left, y, right, y, grid);
  }
  draw_line(img, left, bottom, right, bottom, black);
  draw_line(img, left, top, left, bottom, black);

  for (const auto& s : series) {
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      const int x = px(s.x[i]), y = py(s.y[i]);
      if (i > 0) draw_line(img, px(s.x[i - 1]), py(s.y[i - 1]), x, y, s.color);
      for (int oy = -2; oy <= 2; ++oy) {
        for (int ox = -2; ox <= 2; ++ox) put_pixel(img, x + ox, y + oy, s.color);
      }
    }
  }
  return img;
}

}  // namespace made
