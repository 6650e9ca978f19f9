#include "scenlat/grid.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <stdexcept>

namespace scenlat {

GridConfig::Cell GridConfig::ego_cell() const {
  return {cell_index(0.0, lateral_extent, d_x), cell_index(0.0, longitudinal_extent, d_y)};
}

void GridConfig::validate() const {
  if (d_t < 1 || d_x < 1 || d_y < 1) throw std::invalid_argument("grid: cell counts must be positive");
  if (n_c != 2) throw std::invalid_argument("grid: n_c must be 2 (occupancy, velocity)");
  if (!(rate_hz > 0.0)) throw std::invalid_argument("grid: rate_hz must be > 0");
  if (!(lateral_extent > 0.0) || !(longitudinal_extent > 0.0))
    throw std::invalid_argument("grid: extents must be positive");
  if (!(velocity_scale > 0.0)) throw std::invalid_argument("grid: velocity_scale must be > 0");
  if (kernel_size < 1 || kernel_size % 2 == 0) throw std::invalid_argument("grid: kernel_size must be odd");
  if (!(kernel_sigma > 0.0)) throw std::invalid_argument("grid: kernel_sigma must be > 0");
  const Cell ego = ego_cell();
  if (ego.col < 0 || ego.row < 0) throw std::invalid_argument("grid: ego cell out of bounds");
}

std::string SpatioTemporalGrid::shape_string() const {
  return "(" + std::to_string(d_t) + "," + std::to_string(d_x) + "," + std::to_string(d_y) + "," +
         std::to_string(n_c) + ")";
}

int cell_index(double coord, double extent, int cells) {
  const double shifted = coord + extent / 2.0;
  if (shifted < 0.0 || shifted > extent) return -1;
  const auto idx = static_cast<int>(std::round(shifted / (extent / cells)));
  return std::clamp(idx, 0, cells - 1);
}

SpatioTemporalGrid rasterize(const Scenario& s, const GridConfig& cfg, RasterStats* stats) {
  SpatioTemporalGrid g(cfg);
  ResampleOptions opt;
  opt.frame_count = cfg.d_t;
  opt.rate_hz = cfg.rate_hz;
  opt.n_max = std::max<int>(1, static_cast<int>(s.trajectories.size()));
  const auto frames = resample_to_frames(s, opt);

  int dropped = 0;
  for (const auto& fs : frames) {
    // elements arrive nearest-first, so the first writer of a cell is the closest
    for (int i = 0; i < fs.capacity(); ++i) {
      if (!fs.mask[static_cast<std::size_t>(i)]) continue;
      const auto& f = fs.elements[static_cast<std::size_t>(i)];
      const int col = cell_index(f[0], cfg.lateral_extent, cfg.d_x);
      const int row = cell_index(f[1], cfg.longitudinal_extent, cfg.d_y);
      if (col < 0 || row < 0) {
        ++dropped;
        continue;
      }
      double& occ = g.at(fs.frame_index, col, row, kOccupancyChannel);
      if (occ != 0.0) continue;
      occ = 1.0;
      g.at(fs.frame_index, col, row, kVelocityChannel) = f[2] / cfg.velocity_scale;
    }
  }
  if (stats) stats->dropped = dropped;
  return g;
}

std::vector<double> gaussian_kernel(int size, double sigma) {
  std::vector<double> k(static_cast<std::size_t>(size) * size);
  const int r = size / 2;
  double sum = 0.0;
  for (int i = -r; i <= r; ++i)
    for (int j = -r; j <= r; ++j) {
      const double v = std::exp(-(i * i + j * j) / (2.0 * sigma * sigma));
      k[static_cast<std::size_t>((i + r) * size + (j + r))] = v;
      sum += v;
    }
  for (double& v : k) v /= sum;
  return k;
}

SpatioTemporalGrid smooth_target(const SpatioTemporalGrid& g, const GridConfig& cfg) {
  SpatioTemporalGrid out = g;
  const auto kernel = gaussian_kernel(cfg.kernel_size, cfg.kernel_sigma);
  const int r = cfg.kernel_size / 2;
  for (int t = 0; t < g.d_t; ++t) {
    for (int x = 0; x < g.d_x; ++x) {
      for (int y = 0; y < g.d_y; ++y) {
        double acc = 0.0;
        for (int i = -r; i <= r; ++i) {
          const int xx = std::clamp(x + i, 0, g.d_x - 1);
          for (int j = -r; j <= r; ++j) {
            const int yy = std::clamp(y + j, 0, g.d_y - 1);
            acc += kernel[static_cast<std::size_t>((i + r) * cfg.kernel_size + (j + r))] *
                   g.at(t, xx, yy, kOccupancyChannel);
          }
        }
        out.at(t, x, y, kOccupancyChannel) = acc;
      }
    }
  }
  return out;
}

double grid_loss(const SpatioTemporalGrid& x, const SpatioTemporalGrid& x_hat) {
  if (!x.same_shape(x_hat))
    throw std::invalid_argument("grid_loss: shape mismatch, expected " + x.shape_string() + " got " +
                                x_hat.shape_string());
  double sum = 0.0;
  for (std::size_t i = 0; i < x.values.size(); ++i) {
    const double d = x.values[i] - x_hat.values[i];
    sum += d * d;
  }
  return sum;
}

void write_grid_text(const std::string& path, const SpatioTemporalGrid& g) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write grid dump " + path);
  out << g.d_t << ' ' << g.d_x << ' ' << g.d_y << ' ' << g.n_c << '\n' << std::setprecision(17);
  for (std::size_t i = 0; i < g.values.size(); ++i) out << g.values[i] << (i + 1 == g.values.size() ? '\n' : ' ');
}

}  // namespace scenlat
