#include "scenlat/scenario.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_set>

namespace scenlat {

namespace {

constexpr double kTimeTol = 1e-9;

bool finite(const TrajectorySample& s) {
  return std::isfinite(s.t) && std::isfinite(s.x) && std::isfinite(s.y) &&
         std::isfinite(s.v_lon) && (!s.v_lat || std::isfinite(*s.v_lat));
}

}  // namespace

std::string_view class_name(ClassLabel c) {
  switch (c) {
    case ClassLabel::EgoOvertakes:
      return "EgoOvertakes";
    case ClassLabel::LeadingVehicleAhead:
      return "LeadingVehicleAhead";
    case ClassLabel::EgoBeingOvertaken:
      return "EgoBeingOvertaken";
  }
  return "?";
}

std::optional<ClassLabel> parse_class_name(std::string_view name) {
  for (int i = 0; i < kNumClasses; ++i) {
    auto c = static_cast<ClassLabel>(i);
    if (class_name(c) == name) return c;
  }
  return std::nullopt;
}

bool ValidationReport::has(std::string_view code) const {
  return std::any_of(violations.begin(), violations.end(),
                     [&](const Violation& v) { return v.code == code; });
}

ValidationReport validate_scenario(const Scenario& s) {
  ValidationReport report;
  auto add = [&](std::string code, std::string msg) {
    report.violations.push_back({std::move(code), std::move(msg)});
  };

  if (!std::isfinite(s.duration) || s.duration <= 0.0)
    add("bad duration", "duration must be positive and finite");
  if (s.trajectories.empty()) add("no participants", "scenario has no trajectories");

  std::unordered_set<std::string> seen;
  for (const auto& tr : s.trajectories) {
    const std::string who = "participant '" + tr.participant_id + "'";
    if (!seen.insert(tr.participant_id).second)
      add("duplicate participant", who + " appears more than once");
    if (tr.samples.empty()) {
      add("empty trajectory", who + " has no samples");
      continue;
    }
    for (std::size_t i = 0; i < tr.samples.size(); ++i) {
      const auto& smp = tr.samples[i];
      if (!finite(smp)) add("non-finite value", who + " sample " + std::to_string(i));
      if (smp.t < 0.0 || smp.t > s.duration + kTimeTol)
        add("timestamp out of window",
            who + " sample " + std::to_string(i) + " at t=" + std::to_string(smp.t));
      if (i > 0 && !(smp.t > tr.samples[i - 1].t))
        add("non-increasing timestamps", who + " sample " + std::to_string(i));
    }
  }
  return report;
}

int FrameSet::count() const {
  return static_cast<int>(std::count(mask.begin(), mask.end(), std::uint8_t{1}));
}

std::optional<Feature> interpolate(const Trajectory& tr, double t) {
  const auto& s = tr.samples;
  if (s.empty() || t < s.front().t - kTimeTol || t > s.back().t + kTimeTol) return std::nullopt;
  auto it = std::lower_bound(s.begin(), s.end(), t,
                             [](const TrajectorySample& a, double v) { return a.t < v; });
  if (it == s.end()) it = std::prev(s.end());
  if (it->t == t || it == s.begin()) return Feature{it->x, it->y, it->v_lon};
  const auto& hi = *it;
  const auto& lo = *std::prev(it);
  if (std::abs(t - hi.t) <= kTimeTol) return Feature{hi.x, hi.y, hi.v_lon};
  const double a = (t - lo.t) / (hi.t - lo.t);
  return Feature{lo.x + a * (hi.x - lo.x), lo.y + a * (hi.y - lo.y),
                 lo.v_lon + a * (hi.v_lon - lo.v_lon)};
}

std::vector<FrameSet> resample_to_frames(const Scenario& s, const ResampleOptions& opt) {
  if (opt.frame_count < 1) throw std::invalid_argument("frame_count must be >= 1");
  if (!(opt.rate_hz > 0.0)) throw std::invalid_argument("rate_hz must be > 0");
  if (opt.n_max < 1) throw std::invalid_argument("n_max must be >= 1");
  const double last = static_cast<double>(opt.frame_count - 1) / opt.rate_hz;
  if (last > s.duration + kTimeTol) throw std::invalid_argument("window exceeds duration");

  struct Present {
    double dist;
    const std::string* id;
    Feature f;
  };

  std::vector<FrameSet> frames(static_cast<std::size_t>(opt.frame_count));
  std::vector<Present> present;
  for (int k = 0; k < opt.frame_count; ++k) {
    const double t = static_cast<double>(k) / opt.rate_hz;
    present.clear();
    for (const auto& tr : s.trajectories) {
      if (auto f = interpolate(tr, t))
        present.push_back({std::hypot((*f)[0], (*f)[1]), &tr.participant_id, *f});
    }
    std::sort(present.begin(), present.end(), [](const Present& a, const Present& b) {
      if (a.dist != b.dist) return a.dist < b.dist;
      return *a.id < *b.id;
    });

    FrameSet& fs = frames[static_cast<std::size_t>(k)];
    fs.frame_index = k;
    fs.elements.assign(static_cast<std::size_t>(opt.n_max), Feature{0.0, 0.0, 0.0});
    fs.mask.assign(static_cast<std::size_t>(opt.n_max), 0);
    const std::size_t keep = std::min(present.size(), static_cast<std::size_t>(opt.n_max));
    for (std::size_t i = 0; i < keep; ++i) {
      fs.elements[i] = present[i].f;
      fs.mask[i] = 1;
    }
  }
  return frames;
}

}  // namespace scenlat
