#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>

#include "furrow/dataset_io.hpp"
#include "furrow/demonstrator.hpp"
#include "furrow/error.hpp"

using namespace furrow;

namespace {

constexpr double kPi = std::numbers::pi;

FieldSpec clean_field(std::uint64_t seed = 0) {
  FieldSpec f;
  f.jitter_sigma = 0.0;
  f.missing_prob = 0.0;
  f.seed = seed;
  return f;
}

World make_world(const FieldSpec& f) {
  return World{generate_field(f), RobotSpec{}, RayScanConfig::defaults(), 2};
}

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() /
         (name + "_" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()));
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

}  // namespace

TEST(ReferencePath, EndpointsSkipOneLane) {
  const StalkMap map = generate_field(clean_field());
  const ReferencePath p = plan_row_skip_path(map, 1);
  const Waypoint& a = p.waypoints.front();
  const Waypoint& b = p.waypoints.back();
  EXPECT_NEAR(b.y - a.y, 2 * 0.76, 1e-9);
  EXPECT_NEAR(a.heading, 0.0, 1e-12);
  EXPECT_NEAR(std::abs(wrap_angle(b.heading - kPi)), 0.0, 1e-9);
  EXPECT_EQ(p.target_lane, 3);
}

TEST(ReferencePath, ArclengthMatchesPolylineAndSegments) {
  const StalkMap map = generate_field(clean_field());
  PathOptions opts;
  const ReferencePath p = plan_row_skip_path(map, 1, opts);
  // independent: fine numeric integration of the nominal shape
  const double straight_out = opts.exit_back + opts.headland_offset;
  const double straight_in = opts.headland_offset + opts.entry_depth;
  double arc = 0.0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    const double t0 = -kPi / 2 + kPi * i / n, t1 = -kPi / 2 + kPi * (i + 1) / n;
    arc += std::hypot(0.76 * (std::cos(t1) - std::cos(t0)),
                      0.76 * (std::sin(t1) - std::sin(t0)));
  }
  const double expected = straight_out + arc + straight_in;
  EXPECT_NEAR(p.length(), expected, 0.01 * expected);
  EXPECT_NEAR(p.exit_length + p.arc_length + p.entry_length, p.length(), 1e-9);
  for (std::size_t i = 1; i < p.waypoints.size(); ++i)
    ASSERT_GT(p.waypoints[i].s, p.waypoints[i - 1].s);
}

TEST(ReferencePath, RejectsLaneWithoutSkipTarget) {
  const StalkMap map = generate_field(clean_field());
  EXPECT_THROW(plan_row_skip_path(map, 3), ValidationError);
  EXPECT_THROW(plan_row_skip_path(map, -1), ValidationError);
}

TEST(Pursuit, StraightSegmentGivesZeroTurnRate) {
  const StalkMap map = generate_field(clean_field());
  const ReferencePath p = plan_row_skip_path(map, 1);
  RobotState s{p.waypoints.front().x, p.waypoints.front().y, 0.0};
  s.pose = {p.waypoints.front().x, p.waypoints.front().y, 0.0};
  const PursuitOutput out = pursuit_control(s, p, {}, RobotSpec{});
  EXPECT_FALSE(out.done);
  EXPECT_NEAR(out.cmd.omega, 0.0, 1e-9);
  EXPECT_NEAR(out.cmd.v, 0.6, 1e-9);
}

TEST(Pursuit, TargetOnLeftTurnsLeft) {
  const StalkMap map = generate_field(clean_field());
  const ReferencePath p = plan_row_skip_path(map, 1);
  RobotState s;
  s.pose = {p.waypoints.front().x, p.waypoints.front().y - 0.1, 0.0};
  EXPECT_GT(pursuit_control(s, p, {}, RobotSpec{}).cmd.omega, 0.0);
  s.pose.y = p.waypoints.front().y + 0.1;
  EXPECT_LT(pursuit_control(s, p, {}, RobotSpec{}).cmd.omega, 0.0);
}

TEST(Pursuit, ArcCurvatureNearPathCurvature) {
  const StalkMap map = generate_field(clean_field());
  const ReferencePath p = plan_row_skip_path(map, 1);
  const Waypoint mid = p.at(p.exit_length + 0.5 * p.arc_length);
  RobotState s;
  s.pose = {mid.x, mid.y, mid.heading};
  const PursuitOutput out = pursuit_control(s, p, {}, RobotSpec{});
  const double kappa = out.cmd.omega / out.cmd.v;
  EXPECT_NEAR(kappa, 1.0 / 0.76, 0.15 / 0.76);
}

TEST(Pursuit, DoneAtPathEnd) {
  const StalkMap map = generate_field(clean_field());
  const ReferencePath p = plan_row_skip_path(map, 1);
  RobotState s;
  s.pose = {p.waypoints.back().x, p.waypoints.back().y, kPi};
  EXPECT_TRUE(pursuit_control(s, p, {}, RobotSpec{}).done);
}

TEST(GenerateDemo, NominalEndsInTargetLaneFacingBack) {
  const World w = make_world(clean_field());
  const ReferencePath p = plan_row_skip_path(w.map, 1);
  const Pose start = nominal_start(w.map, 1, StartClass::kEndOfRow);
  const Demonstration d = generate_demo(w, p, start, std::nullopt, 5);
  ASSERT_FALSE(d.steps.empty());
  for (const auto& st : d.steps) ASSERT_TRUE(st.status.is_ok());
  const RobotState last = step_dynamics(d.steps.back().state, d.steps.back().act, w.robot);
  EXPECT_EQ(w.map.lane_at(last.pose.y), std::optional<int>(3));
  EXPECT_LT(std::abs(wrap_angle(last.pose.theta - kPi)), 10.0 * kPi / 180.0);
  EXPECT_EQ(d.steps.front().obs.size(), observation_dim(2, 51));
  EXPECT_EQ(d.meta.start_lane, 1);
  EXPECT_EQ(d.meta.target_lane, 3);
  EXPECT_FALSE(d.meta.recovery);
}

TEST(GenerateDemo, DeterministicForSeed) {
  const World w = make_world(clean_field(3));
  const ReferencePath p = plan_row_skip_path(w.map, 1);
  const Pose start = nominal_start(w.map, 1, StartClass::kEndOfRow);
  const RecoverySpec r;
  const Demonstration a = generate_demo(w, p, start, r, 77);
  const Demonstration b = generate_demo(w, p, start, r, 77);
  EXPECT_EQ(demonstration_line(a), demonstration_line(b));
}

TEST(GenerateDemo, PerturbationSaturatesTurnRateAndRecovers) {
  const World w = make_world(clean_field());
  const ReferencePath p = plan_row_skip_path(w.map, 1);
  const Pose start = nominal_start(w.map, 1, StartClass::kEndOfRow);
  RecoverySpec r;
  r.onset_fraction = 0.4;
  r.direction = -1;
  const Demonstration d = generate_demo(w, p, start, r, 9);
  EXPECT_TRUE(d.meta.recovery);
  int saturated = 0;
  for (const auto& st : d.steps)
    if (st.act.omega == -w.robot.omega_max && st.act.v == 0.6) ++saturated;
  EXPECT_EQ(saturated, 5);
  for (const auto& st : d.steps) ASSERT_TRUE(st.status.is_ok());
  const RobotState last = step_dynamics(d.steps.back().state, d.steps.back().act, w.robot);
  EXPECT_EQ(w.map.lane_at(last.pose.y), std::optional<int>(3));
}

TEST(GenerateDemo, CollidingStartIsRejected) {
  const World w = make_world(clean_field());
  const ReferencePath p = plan_row_skip_path(w.map, 1);
  const Pose on_row{5.0, 0.76, 0.0};
  EXPECT_THROW(generate_demo(w, p, on_row, std::nullopt, 0), ValidationError);
}

TEST(GenerateDemo, TimeoutCarriesPartialDemo) {
  const World w = make_world(clean_field());
  const ReferencePath p = plan_row_skip_path(w.map, 1);
  DemoOptions o;
  o.timeout_s = 1.0;
  try {
    generate_demo(w, p, nominal_start(w.map, 1, StartClass::kBeforeEnd), std::nullopt, 0, o);
    FAIL() << "expected timeout";
  } catch (const DemoTimeout& e) {
    EXPECT_EQ(e.partial().steps.size(), 10u);
  }
}

TEST(GenerateDemo, ReplayReproducesStates) {
  const World w = make_world(clean_field(11));
  const ReferencePath p = plan_row_skip_path(w.map, 1);
  const Demonstration d = generate_demo(
      w, p, nominal_start(w.map, 1, StartClass::kHeadingOffset), RecoverySpec{}, 4);
  EXPECT_TRUE(replay_matches(d, w.robot));
  Demonstration bad = d;
  bad.steps[3].act.omega += 0.1;
  EXPECT_FALSE(replay_matches(bad, w.robot));
}

TEST(Demonstrator, SucceedsOnFiftyNoisyFields) {
  FieldSpec f;  // default jitter and gaps
  for (std::uint64_t seed = 1000; seed < 1050; ++seed) {
    f.seed = seed;
    const World w = make_world(f);
    const ReferencePath p = plan_row_skip_path(w.map, 1);
    const Demonstration d = generate_demo(
        w, p, nominal_start(w.map, 1, StartClass::kEndOfRow), std::nullopt, seed);
    for (const auto& st : d.steps) ASSERT_TRUE(st.status.is_ok()) << "seed " << seed;
    const RobotState last = step_dynamics(d.steps.back().state, d.steps.back().act, w.robot);
    ASSERT_EQ(w.map.lane_at(last.pose.y), std::optional<int>(3)) << "seed " << seed;
  }
}

TEST(StartClasses, NominalPoses) {
  const StalkMap map = generate_field(clean_field());
  const double end = map.lane_end_x(1), y = map.lane_center_y(1);
  EXPECT_EQ(nominal_start(map, 1, StartClass::kEndOfRow), (Pose{end, y, 0.0}));
  EXPECT_EQ(nominal_start(map, 1, StartClass::kBeforeEnd), (Pose{end - 1.5, y, 0.0}));
  EXPECT_NEAR(nominal_start(map, 1, StartClass::kLateralOffset).y, y + 0.1, 1e-12);
  EXPECT_NEAR(nominal_start(map, 1, StartClass::kHeadingOffset).theta, 10 * kPi / 180, 1e-12);
  for (auto c : {StartClass::kEndOfRow, StartClass::kBeforeEnd,
                 StartClass::kLateralOffset, StartClass::kHeadingOffset})
    EXPECT_EQ(parse_start_class(to_string(c)), c);
  EXPECT_THROW(parse_start_class("sideways"), ValidationError);
}

TEST(Collect, SingleDemo) {
  CollectOptions o;
  const Dataset ds = collect_dataset(1, 42, 0.0, o);
  ASSERT_EQ(ds.demos.size(), 1u);
  EXPECT_EQ(ds.header.obs_dim, observation_dim(2, 51));
  EXPECT_EQ(ds.demos[0].meta.field.seed, demo_field_seed(42, 0));
}

TEST(Collect, RecoveryCountIsCeilOfMix) {
  CollectOptions o;
  const Dataset ds = collect_dataset(7, 5, 0.3, o);
  int rec = 0;
  for (const auto& d : ds.demos) rec += d.meta.recovery;
  EXPECT_EQ(rec, 3);  // ceil(2.1)
  EXPECT_THROW(collect_dataset(3, 5, 1.5, o), ValidationError);
}

TEST(Collect, FileIsByteIdenticalAcrossRuns) {
  CollectOptions o;
  const auto a = temp_path("collect_a.jsonl"), b = temp_path("collect_b.jsonl");
  write_dataset(a, collect_dataset(3, 8, 0.34, o));
  write_dataset(b, collect_dataset(3, 8, 0.34, o));
  EXPECT_EQ(slurp(a), slurp(b));
  std::filesystem::remove(a);
  std::filesystem::remove(b);
}

TEST(DatasetIo, RoundTripPreservesEverything) {
  CollectOptions o;
  const Dataset ds = collect_dataset(2, 1, 0.5, o);
  const auto path = temp_path("roundtrip.jsonl");
  write_dataset(path, ds);
  std::vector<std::string> warnings;
  const Dataset back = read_dataset(path, &warnings);
  EXPECT_TRUE(warnings.empty());
  ASSERT_EQ(back.demos.size(), 2u);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_EQ(demonstration_line(back.demos[i]), demonstration_line(ds.demos[i]));
    EXPECT_TRUE(replay_matches(back.demos[i], back.header.robot));
  }
  std::filesystem::remove(path);
}

TEST(DatasetIo, SchemaErrorsNameFileAndLine) {
  const auto path = temp_path("broken.jsonl");
  CollectOptions o;
  const Dataset ds = collect_dataset(1, 1, 0.0, o);
  {
    std::ofstream out(path);
    out << dataset_header_line(ds.header) << "\n" << "{\"meta\": 3}\n";
  }
  try {
    read_dataset(path);
    FAIL() << "expected a schema error";
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find(path.string() + ":2"), std::string::npos) << e.what();
  }
  std::filesystem::remove(path);
  EXPECT_THROW(read_dataset(temp_path("does_not_exist.jsonl")), ValidationError);
}

TEST(DatasetIo, WarnsOnActionsBeyondLimits) {
  CollectOptions o;
  Dataset ds = collect_dataset(1, 2, 0.0, o);
  ds.demos[0].steps[0].act.v = 5.0;
  const auto path = temp_path("limits.jsonl");
  write_dataset(path, ds);
  std::vector<std::string> warnings;
  read_dataset(path, &warnings);
  EXPECT_FALSE(warnings.empty());
  std::filesystem::remove(path);
}

TEST(DatasetIo, MergeRejectsMismatchedLayout) {
  CollectOptions o;
  Dataset a = collect_dataset(1, 1, 0.0, o);
  Dataset b = collect_dataset(1, 2, 0.0, o);
  EXPECT_EQ(merge_datasets({a, b}).demos.size(), 2u);
  b.header.n_obs = 3;
  EXPECT_THROW(merge_datasets({a, b}), ValidationError);
}
