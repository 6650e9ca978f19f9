#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "scenlat/scenario.hpp"

namespace scenlat {

// The three labeled classes plus unlabeled background traffic.
enum class ScenarioKind : int {
  EgoOvertakes = 0,
  LeadingVehicleAhead = 1,
  EgoBeingOvertaken = 2,
  RandomTraffic = 3,
};

inline constexpr int kNumKinds = 4;

std::optional<ClassLabel> label_of(ScenarioKind k);
std::string_view kind_name(ScenarioKind k);

struct SpeedRange {
  double lo = 0.0;
  double hi = 0.0;
};

struct GeneratorConfig {
  std::uint64_t rng_seed = 0;
  // proportions over {EgoOvertakes, LeadingVehicleAhead, EgoBeingOvertaken, RandomTraffic}
  std::array<double, kNumKinds> class_mix{0.25, 0.25, 0.25, 0.25};
  double lane_width = 3.5;
  double noise_std = 0.15;
  double duration = 5.0;
  double sample_rate_hz = 5.0;
  // Passing follows a keep-right rule: the vehicle ego overtakes is in the
  // right lane, a vehicle overtaking ego uses the left lane. When false the
  // passing lane is drawn from {right, own, left}.
  bool keep_right = false;

  SpeedRange ego_speed{25.0, 35.0};        // ground speed of the ego
  SpeedRange overtake_rel_speed{5.0, 10.0};  // |relative speed| while passing
  double leading_rel_speed_max = 0.5;
  SpeedRange leading_gap{8.0, 25.0};
  SpeedRange random_rel_speed{-3.0, 3.0};
  double random_extent_y = 28.0;
  int random_max_participants = 3;

  // Throws std::invalid_argument naming the offending field.
  void validate() const;
};

// The paper-observed label imbalance (about 75/16/9) with no background traffic.
GeneratorConfig imbalanced_labeled_config(std::uint64_t seed);

// Deterministic in (kind, cfg, seed). cfg.rng_seed is not consulted here.
Scenario generate_scenario(ScenarioKind kind, const GeneratorConfig& cfg, std::uint64_t seed);

struct DatasetSummary {
  std::size_t total = 0;
  std::array<std::size_t, kNumKinds> per_kind{};
};

// Scenario i draws its kind and kinematics from a stream derived from
// (cfg.rng_seed, i), so the result does not depend on generation order.
std::vector<Scenario> generate_scenarios(const GeneratorConfig& cfg, std::size_t count,
                                         const std::string& id_prefix = "s");
DatasetSummary summarize(const std::vector<Scenario>& scenarios);
DatasetSummary generate_dataset(const GeneratorConfig& cfg, std::size_t count,
                                const std::filesystem::path& out_path,
                                const std::string& id_prefix = "s");

struct LabelerConfig {
  double lane_width = 3.5;
  double pass_threshold = 5.0;   // |y| that must be crossed on both sides
  double lead_max_range = 30.0;  // y in (0, lead_max_range]
  double lead_max_drift = 3.0;   // |y_end - y_start| < lead_max_drift
  int frame_count = 13;
  double rate_hz = 2.5;
};

// Rule-based three-class labeler. Returns nullopt (unlabeled) when no rule
// fires or both overtaking rules fire.
std::optional<ClassLabel> auto_label(const Scenario& s, const LabelerConfig& cfg = {});

}  // namespace scenlat
