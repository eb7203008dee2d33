#include "furrow/world.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numbers>

#include "furrow/error.hpp"
#include "furrow/random.hpp"

namespace furrow {
namespace {

constexpr double kPi = std::numbers::pi;

FieldSpec PerfectGrid() {
  FieldSpec f;
  f.num_rows = 3;
  f.row_length = 10.0;
  f.stalk_spacing = 0.25;
  f.jitter_sigma = 0.0;
  f.missing_prob = 0.0;
  return f;
}

StalkMap EmptyMap() {
  FieldSpec f;
  return StalkMap({}, Bounds{0, 0, 10, 4}, f);
}

// Brute-force references with no spatial index.
std::optional<double> BruteRay(const StalkMap& map, Vec2 o, Vec2 d,
                               double max_range) {
  std::optional<double> best;
  for (const auto& s : map.stalks()) {
    auto t = ray_disc_distance(o, d, s.center, s.radius);
    if (t && (!best || *t < *best)) best = t;
  }
  if (best && *best <= max_range) return best;
  return std::nullopt;
}

TEST(FieldSpecTest, ValidationNamesTheField) {
  FieldSpec f;
  f.num_rows = 2;
  try {
    f.validate();
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("num_rows"), std::string::npos);
  }
  f = FieldSpec{};
  f.missing_prob = 1.0;
  EXPECT_THROW(generate_field(f), ValidationError);
  f = FieldSpec{};
  f.row_pitch = 0.03;
  EXPECT_THROW(f.validate(), ValidationError);
}

TEST(GenerateFieldTest, ZeroNoiseGivesPerfectGrid) {
  const auto map = generate_field(PerfectGrid());
  ASSERT_EQ(map.stalks().size(), 3u * 41u);
  for (std::size_t i = 0; i < map.stalks().size(); ++i) {
    const auto& s = map.stalks()[i];
    EXPECT_EQ(s.row_index, static_cast<int>(i / 41));
    EXPECT_DOUBLE_EQ(s.center.x, 0.25 * static_cast<double>(i % 41));
    EXPECT_DOUBLE_EQ(s.center.y, 0.76 * s.row_index);
  }
}

TEST(GenerateFieldTest, SameSeedIsBitIdentical) {
  FieldSpec f = PerfectGrid();
  f.jitter_sigma = 0.02;
  f.missing_prob = 0.1;
  f.seed = 99;
  EXPECT_EQ(generate_field(f), generate_field(f));
  f.seed = 100;
  FieldSpec g = f;
  g.seed = 99;
  EXPECT_FALSE(generate_field(f) == generate_field(g));
}

TEST(GenerateFieldTest, MatchesIndependentPlacementRules) {
  FieldSpec f;
  f.missing_prob = 0.1;
  f.seed = 7;
  const auto map = generate_field(f);

  // Re-implementation of the placement rules: per row, per slot, one uniform
  // drop draw, then x and y jitter (clamped to 2 sigma) for kept stalks.
  std::mt19937_64 rng(7);
  std::vector<Vec2> expected;
  for (int row = 0; row < f.num_rows; ++row) {
    for (int j = 0; j <= 40; ++j) {
      if (std::uniform_real_distribution<double>(0, 1)(rng) < 0.1) continue;
      double jx = 0.02 * std::normal_distribution<double>(0, 1)(rng);
      double jy = 0.02 * std::normal_distribution<double>(0, 1)(rng);
      jx = std::min(std::max(jx, -0.04), 0.04);
      jy = std::min(std::max(jy, -0.04), 0.04);
      expected.push_back({j * 0.25 + jx, row * 0.76 + jy});
    }
  }
  ASSERT_EQ(map.stalks().size(), expected.size());
  EXPECT_LT(expected.size(), 6u * 41u);
  for (std::size_t i = 0; i < expected.size(); ++i) {
    EXPECT_EQ(map.stalks()[i].center.x, expected[i].x);
    EXPECT_EQ(map.stalks()[i].center.y, expected[i].y);
  }
  for (const auto& s : map.stalks()) EXPECT_TRUE(map.bounds().contains(s.center));
}

TEST(StalkMapTest, QueryDiscMatchesLinearScan) {
  FieldSpec f;
  f.seed = 3;
  const auto map = generate_field(f);
  Rng rng(11);
  for (int k = 0; k < 1000; ++k) {
    const Vec2 c{uniform(rng, -1, 12), uniform(rng, -1, 5)};
    const double r = uniform(rng, 0.0, 0.8);
    std::vector<std::size_t> expected;
    for (std::size_t i = 0; i < map.stalks().size(); ++i) {
      const auto& s = map.stalks()[i];
      if (std::hypot(s.center.x - c.x, s.center.y - c.y) <= s.radius + r - 1e-12)
        expected.push_back(i);
    }
    auto got = map.query_disc(c, r);
    // Boundary-tangent cases can differ by rounding; exclude them.
    for (auto i : expected)
      EXPECT_TRUE(std::binary_search(got.begin(), got.end(), i));
    for (auto i : got) {
      const auto& s = map.stalks()[i];
      EXPECT_LE(std::hypot(s.center.x - c.x, s.center.y - c.y),
                s.radius + r + 1e-12);
    }
  }
}

TEST(LaneTest, LaneGeometry) {
  const auto map = generate_field(PerfectGrid());
  EXPECT_EQ(map.num_lanes(), 2);
  EXPECT_DOUBLE_EQ(map.lane_center_y(1), 1.5 * 0.76);
  EXPECT_DOUBLE_EQ(map.lane_end_x(0), 10.0);
  EXPECT_EQ(map.lane_at(0.5).value(), 0);
  EXPECT_EQ(map.lane_at(1.0).value(), 1);
  EXPECT_FALSE(map.lane_at(-0.1).has_value());
  EXPECT_FALSE(map.lane_at(1.6).has_value());
}

// ---------------------------------------------------------------------------

TEST(WrapAngleTest, HalfOpenInterval) {
  EXPECT_DOUBLE_EQ(wrap_angle(kPi), kPi);
  EXPECT_DOUBLE_EQ(wrap_angle(-kPi), kPi);
  EXPECT_NEAR(wrap_angle(3 * kPi / 2), -kPi / 2, 1e-15);
  EXPECT_NEAR(wrap_angle(-5 * kPi / 2), -kPi / 2, 1e-15);
}

TEST(StepDynamicsTest, RestIsFixedPoint) {
  RobotSpec spec;
  const RobotState s{{1.0, 2.0, 0.5}, 0.0, 0.0};
  EXPECT_EQ(step_dynamics(s, {0.0, 0.0}, spec), s);
}

TEST(StepDynamicsTest, StraightLineStep) {
  RobotSpec spec;
  spec.dt = 0.1;
  const auto next = step_dynamics({{0, 0, 0}, 1.0, 0.0}, {1.0, 0.0}, spec);
  EXPECT_DOUBLE_EQ(next.pose.x, 0.1);
  EXPECT_DOUBLE_EQ(next.pose.y, 0.0);
  EXPECT_DOUBLE_EQ(next.pose.theta, 0.0);
}

TEST(StepDynamicsTest, FullRotationReturnsToStartHeading) {
  RobotSpec spec;
  spec.alpha_max = 1e9;
  spec.dt = 2.0 * kPi / 100.0;  // 100 steps of 1 rad/s cover 2 pi exactly
  RobotState s{{0.0, 0.0, 0.3}, 0.0, 0.0};
  for (int i = 0; i < 100; ++i) s = step_dynamics(s, {0.0, 1.0}, spec);
  EXPECT_NEAR(wrap_angle(s.pose.theta - 0.3), 0.0, 1e-9);
  EXPECT_EQ(s.pose.x, 0.0);
  EXPECT_EQ(s.pose.y, 0.0);
}

TEST(StepDynamicsTest, RateLimitsAndClamps) {
  RobotSpec spec;  // accel 1.0, alpha 3.0, dt 0.1
  auto s = step_dynamics({}, {5.0, -9.0}, spec);
  EXPECT_DOUBLE_EQ(s.v, 0.1);
  EXPECT_NEAR(s.omega, -0.3, 1e-15);
  for (int i = 0; i < 50; ++i) s = step_dynamics(s, {5.0, -9.0}, spec);
  EXPECT_DOUBLE_EQ(s.v, spec.v_max);
  EXPECT_DOUBLE_EQ(s.omega, -spec.omega_max);
}

TEST(StepDynamicsTest, NonFiniteCommandThrows) {
  EXPECT_THROW(step_dynamics({}, {NAN, 0.0}, RobotSpec{}), ValidationError);
  EXPECT_THROW(step_dynamics({}, {0.0, INFINITY}, RobotSpec{}), ValidationError);
}

TEST(StepDynamicsTest, PropertyBoundsWrapAndDeterminism) {
  RobotSpec spec;
  Rng rng(5);
  RobotState a{{0, 0, 0}, 0, 0};
  RobotState b = a;
  for (int i = 0; i < 5000; ++i) {
    const VelocityCommand cmd{uniform(rng, -3, 3), uniform(rng, -6, 6)};
    const RobotState next = step_dynamics(a, cmd, spec);
    const double disp = std::hypot(next.pose.x - a.pose.x, next.pose.y - a.pose.y);
    EXPECT_LE(disp, spec.v_max * spec.dt + 1e-12);
    EXPECT_LE(std::abs(next.v), spec.v_max);
    EXPECT_LE(std::abs(next.omega), spec.omega_max);
    EXPECT_GT(next.pose.theta, -kPi);
    EXPECT_LE(next.pose.theta, kPi);
    a = next;
    b = step_dynamics(b, cmd, spec);
    ASSERT_EQ(a, b);
  }
}

// ---------------------------------------------------------------------------

TEST(CastRaysTest, EmptyMapIsAllClear) {
  const auto cfg = RayScanConfig::defaults();
  const auto scan = cast_rays(EmptyMap(), {5, 2, 0.3}, cfg);
  ASSERT_EQ(scan.distances.size(), 51u);
  for (double d : scan.distances) EXPECT_EQ(d, 1.0);
}

TEST(CastRaysTest, SingleStalkDeadAhead) {
  FieldSpec f;
  StalkMap map({Stalk{{1.0, 0.0}, 0.05, 0}}, Bounds{-1, -1, 2, 1}, f);
  RayScanConfig cfg = RayScanConfig::defaults();
  cfg.max_range = 2.0;
  const auto scan = cast_rays(map, {0, 0, 0}, cfg);
  EXPECT_NEAR(scan.distances[8], 0.475, 1e-15);  // center ray of front head
  EXPECT_EQ(scan.distances[0], 1.0);
}

TEST(CastRaysTest, HeadMajorOrderingAscendingOffsets) {
  FieldSpec f;
  // Stalk straight to the left: hit by the middle ray of the left head only.
  StalkMap map({Stalk{{0.0, 1.0}, 0.05, 0}}, Bounds{-1, -1, 1, 2}, f);
  const auto scan = cast_rays(map, {0, 0, 0}, RayScanConfig::defaults());
  for (std::size_t i = 0; i < scan.distances.size(); ++i)
    EXPECT_EQ(scan.distances[i] < 1.0, i == 17 + 8) << i;
}

TEST(CastRaysTest, MatchesBruteForceOnRandomScenes) {
  const auto cfg = RayScanConfig::defaults();
  Rng rng(21);
  int hits = 0;
  for (int scene = 0; scene < 25; ++scene) {
    FieldSpec f;
    f.seed = 1000 + scene;
    const auto map = generate_field(f);
    for (int k = 0; k < 40; ++k) {
      const Pose p{uniform(rng, -1.5, 12), uniform(rng, -1, 4.5),
                   uniform(rng, -kPi, kPi)};
      const auto scan = cast_rays(map, p, cfg);
      std::size_t r = 0;
      for (const auto& head : cfg.heads) {
        for (int j = 0; j < head.n_rays; ++j, ++r) {
          const double offset = -head.fan_halfwidth +
                                2.0 * head.fan_halfwidth * j / (head.n_rays - 1);
          const double a = p.theta + head.mount_angle + offset;
          const auto ref = BruteRay(map, {p.x, p.y}, {std::cos(a), std::sin(a)},
                                    cfg.max_range);
          const double expected = ref ? *ref / cfg.max_range : 1.0;
          ASSERT_EQ(scan.distances[r], expected);
          hits += ref.has_value();
        }
      }
    }
  }
  EXPECT_GT(hits, 1000);
}

// ---------------------------------------------------------------------------

TEST(CollisionTest, EmptyLaneIsOk) {
  const auto map = generate_field(FieldSpec{});
  EXPECT_TRUE(check_collision(map, {5.0, map.lane_center_y(1), 0}, RobotSpec{}).is_ok());
}

TEST(CollisionTest, CenterOnStalkCollides) {
  const auto map = generate_field(FieldSpec{});
  const auto& s = map.stalks()[10];
  const auto status = check_collision(map, {s.center.x, s.center.y, 0}, RobotSpec{});
  EXPECT_EQ(status, SimStatus::collided(10));
}

TEST(CollisionTest, OutOfBoundsBeyondMargin) {
  const auto map = generate_field(FieldSpec{});
  const double x = map.bounds().max_x + kOutOfBoundsMargin + 0.01;
  EXPECT_EQ(check_collision(map, {x, 1.0, 0}, RobotSpec{}).kind,
            SimStatus::Kind::kOutOfBounds);
  EXPECT_TRUE(check_collision(map, {x - 0.02, 1.0, 0}, RobotSpec{}).is_ok());
}

TEST(CollisionTest, MatchesLinearScan) {
  RobotSpec spec;
  Rng rng(8);
  for (int scene = 0; scene < 10; ++scene) {
    FieldSpec f;
    f.seed = 50 + scene;
    const auto map = generate_field(f);
    for (int k = 0; k < 100; ++k) {
      const Pose p{uniform(rng, -3, 13), uniform(rng, -3, 7), 0.0};
      std::optional<std::size_t> nearest;
      double best = INFINITY;
      for (std::size_t i = 0; i < map.stalks().size(); ++i) {
        const auto& s = map.stalks()[i];
        const double dx = s.center.x - p.x, dy = s.center.y - p.y;
        const double d2 = dx * dx + dy * dy;
        const double r = spec.collision_radius + s.radius;
        if (d2 < r * r && d2 < best) {
          best = d2;
          nearest = i;
        }
      }
      SimStatus expected = SimStatus::ok();
      if (nearest)
        expected = SimStatus::collided(*nearest);
      else if (!map.bounds().contains({p.x, p.y}, kOutOfBoundsMargin))
        expected = SimStatus::out_of_bounds();
      ASSERT_EQ(check_collision(map, p, spec), expected);
    }
  }
}

TEST(SimStatusTest, TextRoundTrip) {
  for (auto s : {SimStatus::ok(), SimStatus::collided(42), SimStatus::out_of_bounds()})
    EXPECT_EQ(SimStatus::parse(s.to_string()), s);
  EXPECT_THROW(SimStatus::parse("crashed"), ValidationError);
}

// ---------------------------------------------------------------------------

RayScanConfig FiveRayHeads() {
  RayScanConfig cfg = RayScanConfig::defaults();
  for (auto& h : cfg.heads) h.n_rays = 5;
  return cfg;
}

TEST(ObservationTest, SingleFrameLayout) {
  RobotSpec spec;
  const auto cfg = FiveRayHeads();
  ObservationFrame f{cast_rays(EmptyMap(), {1, 1, 0}, cfg), 0.0, 0.0};
  const auto obs = assemble_observation(std::span(&f, 1), 1, spec);
  ASSERT_EQ(obs.size(), 17u);
  EXPECT_EQ(obs[15], 0.0);
  EXPECT_EQ(obs[16], 0.0);
}

TEST(ObservationTest, AllClearAtFullSpeed) {
  RobotSpec spec;
  ObservationFrame f{cast_rays(EmptyMap(), {1, 1, 0}, FiveRayHeads()),
                     spec.v_max, 0.0};
  const auto obs = assemble_observation(std::span(&f, 1), 1, spec);
  for (int i = 0; i < 15; ++i) EXPECT_EQ(obs[i], 1.0);
  EXPECT_EQ(obs[15], 1.0);
}

TEST(ObservationTest, TwoFramesConcatenateOldestFirst) {
  RobotSpec spec;
  const auto map = generate_field(FieldSpec{});
  const auto cfg = FiveRayHeads();
  std::vector<ObservationFrame> frames{
      {cast_rays(map, {9.0, 1.14, 0.0}, cfg), 0.4, -0.5},
      {cast_rays(map, {9.1, 1.14, 0.1}, cfg), 0.5, 1.0}};
  const auto obs = assemble_observation(frames, 2, spec);
  std::vector<double> manual;
  for (const auto& f : frames) {
    const auto one = assemble_observation(std::span(&f, 1), 1, spec);
    manual.insert(manual.end(), one.begin(), one.end());
  }
  EXPECT_EQ(obs, manual);
  EXPECT_EQ(obs.size(), observation_dim(2, 15));
}

TEST(ObservationTest, WrongFrameCountThrows) {
  RobotSpec spec;
  ObservationFrame f{RayScan{{1.0, 1.0, 1.0}}, 0, 0};
  EXPECT_THROW(assemble_observation(std::span(&f, 1), 2, spec), ValidationError);
}

TEST(ObservationTest, HistoryBootstrapsWithFirstFrame) {
  RobotSpec spec;
  ObservationHistory h(3, spec);
  h.push({RayScan{{0.5}}, 0.2, 0.0});
  auto obs = h.observation();
  ASSERT_EQ(obs.size(), 9u);
  EXPECT_EQ(obs[0], 0.5);
  EXPECT_EQ(obs[6], 0.5);
  h.push({RayScan{{0.25}}, 0.0, 0.0});
  obs = h.observation();
  EXPECT_EQ(obs[3], 0.5);
  EXPECT_EQ(obs[6], 0.25);
}

}  // namespace
}  // namespace furrow
