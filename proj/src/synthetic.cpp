#include "scenlat/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

#include "scenlat/rng.hpp"
#include "scenlat/scenario_io.hpp"

namespace scenlat {

std::optional<ClassLabel> label_of(ScenarioKind k) {
  if (k == ScenarioKind::RandomTraffic) return std::nullopt;
  return static_cast<ClassLabel>(static_cast<int>(k));
}

std::string_view kind_name(ScenarioKind k) {
  if (k == ScenarioKind::RandomTraffic) return "RandomTraffic";
  return class_name(*label_of(k));
}

void GeneratorConfig::validate() const {
  double sum = 0.0;
  for (double p : class_mix) {
    if (!(p >= 0.0)) throw std::invalid_argument("class_mix: proportions must be non-negative");
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-6) throw std::invalid_argument("class_mix: proportions must sum to 1");
  if (!(lane_width > 0.0)) throw std::invalid_argument("lane_width must be > 0");
  if (!(noise_std >= 0.0)) throw std::invalid_argument("noise_std must be >= 0");
  if (!(duration > 0.0)) throw std::invalid_argument("duration must be > 0");
  if (!(sample_rate_hz > 0.0)) throw std::invalid_argument("sample_rate_hz must be > 0");
  auto check_range = [](const SpeedRange& r, const char* name) {
    if (!(r.lo <= r.hi)) throw std::invalid_argument(std::string(name) + ": lo must be <= hi");
  };
  check_range(ego_speed, "ego_speed");
  check_range(overtake_rel_speed, "overtake_rel_speed");
  check_range(leading_gap, "leading_gap");
  check_range(random_rel_speed, "random_rel_speed");
  if (overtake_rel_speed.lo <= 0.0) throw std::invalid_argument("overtake_rel_speed must be positive");
  // the passing vehicle has to cross from beyond +15.5 m to beyond -5.5 m
  if (duration <= 0.5 || overtake_rel_speed.lo * (duration - 0.5) < 21.0)
    throw std::invalid_argument("overtake_rel_speed too low to complete a pass within the window");
  if (!(leading_rel_speed_max >= 0.0)) throw std::invalid_argument("leading_rel_speed_max must be >= 0");
  if (random_max_participants < 1) throw std::invalid_argument("random_max_participants must be >= 1");
}

GeneratorConfig imbalanced_labeled_config(std::uint64_t seed) {
  GeneratorConfig cfg;
  cfg.rng_seed = seed;
  cfg.class_mix = {0.75, 0.16, 0.09, 0.0};
  return cfg;
}

namespace {

struct Motion {
  double x0, y0, v_rel;
};

Trajectory drive(const std::string& id, const Motion& m, double ego_speed, const GeneratorConfig& cfg,
                 Rng& rng) {
  Trajectory tr;
  tr.participant_id = id;
  const int n = static_cast<int>(std::lround(cfg.duration * cfg.sample_rate_hz));
  tr.samples.reserve(static_cast<std::size_t>(n + 1));
  for (int k = 0; k <= n; ++k) {
    const double t = static_cast<double>(k) / cfg.sample_rate_hz;
    TrajectorySample s;
    s.t = t;
    s.x = m.x0 + cfg.noise_std * rng.normal();
    s.y = m.y0 + m.v_rel * t + cfg.noise_std * rng.normal();
    s.v_lon = ego_speed + m.v_rel;
    tr.samples.push_back(s);
  }
  return tr;
}

double lane_offset(int lane, const GeneratorConfig& cfg) { return lane * cfg.lane_width; }

}  // namespace

Scenario generate_scenario(ScenarioKind kind, const GeneratorConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  Scenario s;
  s.scenario_id = "gen-" + std::to_string(seed);
  s.duration = cfg.duration;
  s.label = label_of(kind);

  const double ego_speed = rng.uniform(cfg.ego_speed.lo, cfg.ego_speed.hi);
  switch (kind) {
    case ScenarioKind::EgoOvertakes:
    case ScenarioKind::EgoBeingOvertaken: {
      int lane = static_cast<int>(rng.below(3)) - 1;
      if (cfg.keep_right) lane = kind == ScenarioKind::EgoOvertakes ? -1 : 1;
      const double speed = rng.uniform(cfg.overtake_rel_speed.lo, cfg.overtake_rel_speed.hi);
      // Distance covered half a second before the window closes, so the
      // crossing is complete on any frame grid that stops short of the end.
      const double travel = speed * (cfg.duration - 0.5);
      // start beyond +15.5 m, end beyond -5.5 m (mirrored for being overtaken)
      const double start = rng.uniform(15.5, travel - 5.5);
      Motion m{lane_offset(lane, cfg), start, -speed};
      if (kind == ScenarioKind::EgoBeingOvertaken) m = {m.x0, -start, speed};
      s.trajectories.push_back(drive("p0", m, ego_speed, cfg, rng));
      break;
    }
    case ScenarioKind::LeadingVehicleAhead: {
      const double gap = rng.uniform(cfg.leading_gap.lo, cfg.leading_gap.hi);
      const double v_rel = rng.uniform(-cfg.leading_rel_speed_max, cfg.leading_rel_speed_max);
      s.trajectories.push_back(drive("p0", {0.0, gap, v_rel}, ego_speed, cfg, rng));
      break;
    }
    case ScenarioKind::RandomTraffic: {
      const int count = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(cfg.random_max_participants)));
      for (int i = 0; i < count; ++i) {
        const int lane = static_cast<int>(rng.below(3)) - 1;
        const double y0 = rng.uniform(-cfg.random_extent_y, cfg.random_extent_y);
        const double v_rel = rng.uniform(cfg.random_rel_speed.lo, cfg.random_rel_speed.hi);
        s.trajectories.push_back(
            drive("p" + std::to_string(i), {lane_offset(lane, cfg), y0, v_rel}, ego_speed, cfg, rng));
      }
      break;
    }
  }
  return s;
}

std::vector<Scenario> generate_scenarios(const GeneratorConfig& cfg, std::size_t count,
                                         const std::string& id_prefix) {
  cfg.validate();
  std::vector<double> cumulative(kNumKinds);
  std::partial_sum(cfg.class_mix.begin(), cfg.class_mix.end(), cumulative.begin());

  std::vector<Scenario> out(count);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(count); ++i) {
    const auto idx = static_cast<std::uint64_t>(i);
    Rng pick(derive_seed(cfg.rng_seed, idx, 0));
    const double u = pick.uniform01() * cumulative.back();
    int kind = kNumKinds - 1;
    for (std::size_t k = 0; k < kNumKinds; ++k) {
      if (cfg.class_mix[k] > 0.0 && u < cumulative[k]) {
        kind = static_cast<int>(k);
        break;
      }
    }
    Scenario s = generate_scenario(static_cast<ScenarioKind>(kind), cfg, derive_seed(cfg.rng_seed, idx, 1));
    s.scenario_id = id_prefix + std::to_string(i);
    out[static_cast<std::size_t>(i)] = std::move(s);
  }
  return out;
}

DatasetSummary summarize(const std::vector<Scenario>& scenarios) {
  DatasetSummary sum;
  sum.total = scenarios.size();
  for (const auto& s : scenarios) {
    const int k = s.label ? static_cast<int>(*s.label) : static_cast<int>(ScenarioKind::RandomTraffic);
    ++sum.per_kind[static_cast<std::size_t>(k)];
  }
  return sum;
}

DatasetSummary generate_dataset(const GeneratorConfig& cfg, std::size_t count,
                                const std::filesystem::path& out_path, const std::string& id_prefix) {
  if (count < 1) throw std::invalid_argument("count must be >= 1");
  auto scenarios = generate_scenarios(cfg, count, id_prefix);
  write_scenarios(out_path, scenarios);
  return summarize(scenarios);
}

std::optional<ClassLabel> auto_label(const Scenario& s, const LabelerConfig& cfg) {
  bool overtakes = false;
  bool overtaken = false;
  bool leading = false;

  std::vector<double> ys;
  for (const auto& tr : s.trajectories) {
    ys.clear();
    bool always_lead_zone = true;
    for (int k = 0; k < cfg.frame_count; ++k) {
      auto f = interpolate(tr, static_cast<double>(k) / cfg.rate_hz);
      if (!f) {
        always_lead_zone = false;
        continue;
      }
      const double x = (*f)[0];
      const double y = (*f)[1];
      ys.push_back(y);
      if (!(std::abs(x) < cfg.lane_width / 2.0 && y > 0.0 && y <= cfg.lead_max_range))
        always_lead_zone = false;
    }
    if (ys.empty()) continue;

    // a crossing needs the far side reached after the near side
    bool seen_ahead = false;
    bool seen_behind = false;
    for (double y : ys) {
      if (seen_ahead && y < -cfg.pass_threshold) overtakes = true;
      if (seen_behind && y > cfg.pass_threshold) overtaken = true;
      if (y > cfg.pass_threshold) seen_ahead = true;
      if (y < -cfg.pass_threshold) seen_behind = true;
    }
    if (always_lead_zone && std::abs(ys.back() - ys.front()) < cfg.lead_max_drift) leading = true;
  }

  if (overtakes && overtaken) return std::nullopt;
  if (overtakes) return ClassLabel::EgoOvertakes;
  if (overtaken) return ClassLabel::EgoBeingOvertaken;
  if (leading) return ClassLabel::LeadingVehicleAhead;
  return std::nullopt;
}

}  // namespace scenlat
