#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <sstream>

#include "scenlat/rng.hpp"
#include "scenlat/scenario.hpp"
#include "scenlat/scenario_io.hpp"

using namespace scenlat;

namespace {

Trajectory constant(const std::string& id, double x, double y, double v, double t0 = 0.0, double t1 = 5.0) {
  return {id, {{t0, x, y, v, std::nullopt}, {t1, x, y, v, std::nullopt}}};
}

Scenario single(Trajectory tr) {
  Scenario s;
  s.scenario_id = "s";
  s.trajectories.push_back(std::move(tr));
  return s;
}

Scenario random_scenario(Rng& rng, int index) {
  Scenario s;
  s.scenario_id = "r" + std::to_string(index);
  s.duration = 5.0;
  const int n = 1 + static_cast<int>(rng.below(4));
  for (int p = 0; p < n; ++p) {
    Trajectory tr;
    tr.participant_id = "p" + std::to_string(p);
    double t = rng.uniform(0.0, 1.0);
    while (t <= 5.0) {
      TrajectorySample smp{t, rng.uniform(-7.0, 7.0), rng.uniform(-30.0, 30.0), rng.uniform(10.0, 40.0), std::nullopt};
      if (rng.below(2) == 0) smp.v_lat = rng.uniform(-1.0, 1.0);
      tr.samples.push_back(smp);
      t += rng.uniform(0.05, 0.6);
    }
    if (tr.samples.empty()) tr.samples.push_back({5.0, 0.0, 10.0, 30.0, std::nullopt});
    s.trajectories.push_back(tr);
  }
  if (rng.below(2) == 0) s.label = static_cast<ClassLabel>(rng.below(3));
  return s;
}

}  // namespace

TEST_CASE("validation reports every violated invariant") {
  CHECK(validate_scenario(single(constant("a", 1.0, 10.0, 30.0))).ok());

  Scenario empty;
  empty.scenario_id = "e";
  auto r = validate_scenario(empty);
  CHECK_FALSE(r.ok());
  CHECK(r.has("no participants"));

  Scenario rep = single({"a", {{0.0, 0, 1, 2, {}}, {0.4, 0, 1, 2, {}}, {0.4, 0, 1, 2, {}}}});
  CHECK(validate_scenario(rep).has("non-increasing timestamps"));

  Scenario late = single(constant("a", 0, 0, 0, 0.0, 6.0));
  CHECK(validate_scenario(late).has("timestamp out of window"));

  Scenario nan = single(constant("a", std::nan(""), 0, 0));
  CHECK(validate_scenario(nan).has("non-finite value"));

  // several problems at once are all listed
  Scenario many = single({"a", {}});
  many.duration = -1.0;
  auto rm = validate_scenario(many);
  CHECK(rm.has("bad duration"));
  CHECK(rm.has("empty trajectory"));
}

TEST_CASE("resampling: constant participant, coverage and closest-n") {
  ResampleOptions opt;  // 13 frames at 2.5 Hz, n_max 3
  auto frames = resample_to_frames(single(constant("a", 2.0, 10.0, 30.0)), opt);
  REQUIRE(frames.size() == 13u);
  for (int k = 0; k < 13; ++k) {
    CHECK(frames[static_cast<std::size_t>(k)].frame_index == k);
    CHECK(frames[static_cast<std::size_t>(k)].count() == 1);
    CHECK(frames[static_cast<std::size_t>(k)].elements[0] == Feature{2.0, 10.0, 30.0});
    CHECK(frames[static_cast<std::size_t>(k)].mask[0] == 1);
  }

  auto short_lived = resample_to_frames(single(constant("a", 0.0, 5.0, 1.0, 0.0, 1.0)), opt);
  CHECK(short_lived[2].count() == 1);  // t = 0.8
  CHECK(short_lived[5].count() == 0);  // t = 2.0
  CHECK(short_lived[5].elements[0] == Feature{0.0, 0.0, 0.0});

  Scenario four;
  four.scenario_id = "four";
  for (int i = 0; i < 4; ++i) four.trajectories.push_back(constant("p" + std::to_string(i), 0.0, 5.0 * (4 - i), 1.0));
  auto f4 = resample_to_frames(four, opt);
  for (const auto& f : f4) {
    REQUIRE(f.count() == 3);
    // packed by distance: 5, 10, 15; the 20 m participant is gone
    CHECK(f.elements[0][1] == 5.0);
    CHECK(f.elements[1][1] == 10.0);
    CHECK(f.elements[2][1] == 15.0);
  }
}

TEST_CASE("resampling: ties keep the lower participant id, window beyond duration is an error") {
  Scenario s;
  s.scenario_id = "tie";
  s.trajectories.push_back(constant("b", 0.0, 10.0, 2.0));
  s.trajectories.push_back(constant("a", 0.0, -10.0, 1.0));
  ResampleOptions opt;
  opt.n_max = 1;
  auto f = resample_to_frames(s, opt);
  CHECK(f[0].elements[0][2] == 1.0);  // participant "a"

  ResampleOptions too_long;
  too_long.frame_count = 14;  // last frame at 5.2 s
  CHECK_THROWS_WITH_AS(resample_to_frames(s, too_long), "window exceeds duration", std::invalid_argument);
}

TEST_CASE("resampling properties on random scenarios") {
  Rng rng(3);
  for (int i = 0; i < 200; ++i) {
    const Scenario s = random_scenario(rng, i);
    REQUIRE(validate_scenario(s).ok());
    ResampleOptions opt;
    opt.n_max = 1 + static_cast<int>(rng.below(4));
    const auto frames = resample_to_frames(s, opt);
    CHECK(frames.size() == static_cast<std::size_t>(opt.frame_count));
    for (const auto& f : frames) {
      CHECK(f.count() <= opt.n_max);
      CHECK(f.capacity() == opt.n_max);
      int valid = 0;
      for (int j = 0; j < f.capacity(); ++j) {
        if (f.mask[static_cast<std::size_t>(j)]) {
          CHECK(j == valid);  // valid slots packed first
          ++valid;
        } else {
          CHECK(f.elements[static_cast<std::size_t>(j)] == Feature{0.0, 0.0, 0.0});
        }
      }
    }
    // interpolation reproduces the samples themselves
    for (const auto& tr : s.trajectories)
      for (const auto& smp : tr.samples) {
        const auto v = interpolate(tr, smp.t);
        REQUIRE(v.has_value());
        CHECK(std::abs((*v)[0] - smp.x) < 1e-9);
        CHECK(std::abs((*v)[1] - smp.y) < 1e-9);
        CHECK(std::abs((*v)[2] - smp.v_lon) < 1e-9);
      }
  }
}

TEST_CASE("interpolation is linear between samples and absent outside") {
  Trajectory tr{"a", {{1.0, 0.0, 0.0, 10.0, {}}, {2.0, 2.0, -4.0, 20.0, {}}}};
  const auto mid = interpolate(tr, 1.25);
  REQUIRE(mid.has_value());
  CHECK((*mid)[0] == doctest::Approx(0.5));
  CHECK((*mid)[1] == doctest::Approx(-1.0));
  CHECK((*mid)[2] == doctest::Approx(12.5));
  CHECK_FALSE(interpolate(tr, 0.5).has_value());
  CHECK_FALSE(interpolate(tr, 2.5).has_value());
}

TEST_CASE("scenario files round-trip and report malformed lines") {
  Rng rng(11);
  std::vector<Scenario> all;
  for (int i = 0; i < 50; ++i) all.push_back(random_scenario(rng, i));
  std::stringstream buf;
  write_scenarios(buf, all);
  const auto back = read_scenarios(buf);
  REQUIRE(back.size() == all.size());
  for (std::size_t i = 0; i < all.size(); ++i) CHECK(back[i] == all[i]);

  std::stringstream empty;
  CHECK(read_scenarios(empty).empty());

  std::stringstream missing;
  missing << scenario_to_line(all[0]) << "\n" << R"({"scenario_id": "x", "duration": 5.0})" << "\n";
  try {
    read_scenarios(missing);
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(e.line() == 2);
    CHECK(std::string(e.what()).find("trajectories") != std::string::npos);
  }

  std::stringstream dup;
  dup << scenario_to_line(all[0]) << "\n" << scenario_to_line(all[0]) << "\n";
  CHECK_THROWS_AS(read_scenarios(dup), ParseError);

  std::stringstream bad_label;
  bad_label << R"({"scenario_id":"x","duration":5,"trajectories":[{"participant_id":"a","samples":[[0,1,2,3]]}],"label":"Nope"})"
            << "\n";
  CHECK_THROWS_AS(read_scenarios(bad_label), ParseError);
}

TEST_CASE("class names parse back") {
  for (int c = 0; c < kNumClasses; ++c) {
    const auto label = static_cast<ClassLabel>(c);
    CHECK(parse_class_name(class_name(label)) == label);
  }
  CHECK_FALSE(parse_class_name("Overtake").has_value());
}
