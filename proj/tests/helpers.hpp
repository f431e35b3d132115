#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include <gridcast/gridcast.hpp>

namespace gridcast::testing {

/// Planar rectangle (metres from the grid origin) as a geographic polygon.
inline GeoPolygon rect(const GridSpec& spec, double x0, double y0, double x1, double y1) {
  GeoPolygon p;
  p.rings.push_back({unproject({x0, y0}, spec), unproject({x1, y0}, spec), unproject({x1, y1}, spec),
                     unproject({x0, y1}, spec)});
  return p;
}

inline GridSpec square_grid(int rows, int cols, double side = 447.21359549995793) {
  GridSpec s;
  s.origin_lat = 40.0;
  s.origin_lon = -75.0;
  s.cell_side_m = side;
  s.n_rows = rows;
  s.n_cols = cols;
  s.centroid_lat = 40.0;
  return s;
}

/// Frames whose crime channel comes from `crime(block, r, c)` and whose other
/// channels hold a deterministic pattern.
template <typename CrimeFn>
FrameSet synthetic_frames(int n_blocks, int rows, int cols, CrimeFn crime) {
  FrameSet fs;
  fs.spec = square_grid(rows, cols);
  fs.mask = SpatialMask::all(fs.spec);
  for (int b = 0; b < n_blocks; ++b) {
    Frame f;
    f.block_index = b;
    f.n_rows = rows;
    f.n_cols = cols;
    f.values.assign(static_cast<std::size_t>(rows) * cols * kChannelCount, 0.0f);
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < cols; ++c) {
        f.at(r, c, kCrimeChannel) = crime(b, r, c) ? 1.0f : 0.0f;
        for (int ch = 1; ch < kChannelCount; ++ch) f.at(r, c, ch) = static_cast<float>((b + r * 3 + c * 7 + ch) % 11);
      }
    fs.frames.push_back(std::move(f));
  }
  return fs;
}

}  // namespace gridcast::testing
