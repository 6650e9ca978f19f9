#pragma once

#include <string>
#include <vector>

#include "scenlat/latent.hpp"
#include "scenlat/scenario.hpp"

namespace scenlat {

// 2D scatter of the first two projected coordinates, one color per group.
std::string pca_scatter_svg(const Matrix& points2d, const std::vector<int>& groups,
                            const std::vector<std::string>& group_names, const std::string& title);

struct TrajectoryPlotOptions {
  double lateral_extent = 15.0;       // meters shown across
  double longitudinal_extent = 60.0;  // meters shown along the driving direction
  int width_px = 240;
};

// Bird's-eye view of one scenario: the ego as a fixed triangle at the origin
// and every participant sample as a dot whose shade darkens with time.
std::string trajectory_svg(const Scenario& s, const TrajectoryPlotOptions& opt = {});

}  // namespace scenlat
