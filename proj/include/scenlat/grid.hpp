#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "scenlat/scenario.hpp"

namespace scenlat {

struct GridConfig {
  int d_t = 13;
  int d_x = 30;  // lateral cells
  int d_y = 30;  // longitudinal cells
  int n_c = 2;   // occupancy, longitudinal velocity
  double rate_hz = 2.5;
  double lateral_extent = 15.0;
  double longitudinal_extent = 60.0;
  double velocity_scale = 40.0;  // v_lon is divided by this before rasterizing
  int kernel_size = 5;
  double kernel_sigma = 1.0;

  double cell_width() const { return lateral_extent / d_x; }
  double cell_length() const { return longitudinal_extent / d_y; }

  // (lateral, longitudinal) cell of the ego, i.e. of position (0, 0).
  struct Cell {
    int col;
    int row;
  };
  Cell ego_cell() const;

  void validate() const;  // throws std::invalid_argument
};

// Dense (d_t, d_x, d_y, n_c) array, row-major in that order.
struct SpatioTemporalGrid {
  int d_t = 0, d_x = 0, d_y = 0, n_c = 0;
  std::vector<double> values;

  SpatioTemporalGrid() = default;
  SpatioTemporalGrid(int t, int x, int y, int c)
      : d_t(t), d_x(x), d_y(y), n_c(c), values(static_cast<std::size_t>(t) * x * y * c, 0.0) {}
  explicit SpatioTemporalGrid(const GridConfig& cfg)
      : SpatioTemporalGrid(cfg.d_t, cfg.d_x, cfg.d_y, cfg.n_c) {}

  std::size_t index(int t, int x, int y, int c) const {
    return ((static_cast<std::size_t>(t) * d_x + x) * d_y + y) * n_c + c;
  }
  double& at(int t, int x, int y, int c) { return values[index(t, x, y, c)]; }
  double at(int t, int x, int y, int c) const { return values[index(t, x, y, c)]; }
  std::size_t size() const { return values.size(); }
  bool same_shape(const SpatioTemporalGrid& o) const {
    return d_t == o.d_t && d_x == o.d_x && d_y == o.d_y && n_c == o.n_c;
  }
  std::string shape_string() const;
};

inline constexpr int kOccupancyChannel = 0;
inline constexpr int kVelocityChannel = 1;

struct RasterStats {
  int dropped = 0;  // participant-frames outside the grid extent
};

// Cell index along one axis, or -1 when the coordinate is outside the extent.
int cell_index(double coord, double extent, int cells);

SpatioTemporalGrid rasterize(const Scenario& s, const GridConfig& cfg, RasterStats* stats = nullptr);

// Normalized size x size Gaussian, row-major.
std::vector<double> gaussian_kernel(int size, double sigma);

// Per-frame Gaussian blur of the occupancy channel with replicate padding.
SpatioTemporalGrid smooth_target(const SpatioTemporalGrid& g, const GridConfig& cfg);

// Sum of squared differences over all four axes. Throws on shape mismatch.
double grid_loss(const SpatioTemporalGrid& x, const SpatioTemporalGrid& x_hat);

// Debug dump: header line "d_t d_x d_y n_c" then values in (t, x, y, c) order.
void write_grid_text(const std::string& path, const SpatioTemporalGrid& g);

}  // namespace scenlat
