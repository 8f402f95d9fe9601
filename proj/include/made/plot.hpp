#pragma once

#include <array>
#include <string>
#include <vector>

#include "made/image.hpp"

namespace made {

struct Series {
  std::vector<double> x;
  std::vector<double> y;
  std::array<std::uint8_t, 3> color;
};

/// Minimal raster line chart: axes, horizontal grid at quarters of the y
/// range, one polyline with square markers per series.
Image line_chart(const std::vector<Series>& series, double y_min, double y_max, int width = 360, int height = 240);

}  // namespace made
