#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace scenlat {

// Coordinates are ego-relative: the ego sits at (0, 0) facing +y.
// x is lateral (positive = left), y is longitudinal (positive = ahead).
struct TrajectorySample {
  double t = 0.0;
  double x = 0.0;
  double y = 0.0;
  double v_lon = 0.0;  // ground-relative, m/s
  std::optional<double> v_lat;

  bool operator==(const TrajectorySample&) const = default;
};

struct Trajectory {
  std::string participant_id;
  std::vector<TrajectorySample> samples;

  bool operator==(const Trajectory&) const = default;
};

enum class ClassLabel : int {
  EgoOvertakes = 0,
  LeadingVehicleAhead = 1,
  EgoBeingOvertaken = 2,
};

inline constexpr int kNumClasses = 3;

std::string_view class_name(ClassLabel c);
std::optional<ClassLabel> parse_class_name(std::string_view name);

struct Scenario {
  std::string scenario_id;
  double duration = 5.0;
  std::vector<Trajectory> trajectories;
  std::optional<ClassLabel> label;

  bool operator==(const Scenario&) const = default;
};

struct Violation {
  std::string code;     // stable machine-readable tag
  std::string message;  // human-readable detail
};

struct ValidationReport {
  std::vector<Violation> violations;

  bool ok() const { return violations.empty(); }
  bool has(std::string_view code) const;
};

// Never throws; lists every violated invariant.
ValidationReport validate_scenario(const Scenario& s);

using Feature = std::array<double, 3>;  // (x, y, v_lon)

// Fixed-capacity set of participant features at one frame. Valid elements are
// packed first, ordered by distance to the ego; the rest hold zeros.
struct FrameSet {
  int frame_index = 0;
  std::vector<Feature> elements;
  std::vector<std::uint8_t> mask;

  int capacity() const { return static_cast<int>(elements.size()); }
  int count() const;
};

struct ResampleOptions {
  int frame_count = 13;
  double rate_hz = 2.5;
  int n_max = 3;
};

// Linear interpolation at frame times k / rate_hz. Participants whose samples
// do not cover a frame time are absent from that frame. When more than n_max
// participants are present only the n_max closest to the ego are kept (ties
// broken by participant_id).
std::vector<FrameSet> resample_to_frames(const Scenario& s, const ResampleOptions& opt);

// Interpolated (x, y, v_lon) of one trajectory at time t, or nullopt when t is
// outside the trajectory's time span.
std::optional<Feature> interpolate(const Trajectory& tr, double t);

}  // namespace scenlat
