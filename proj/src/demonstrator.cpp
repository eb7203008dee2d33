#include "furrow/demonstrator.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numbers>
#include <numeric>

#include "furrow/digest.hpp"
#include "furrow/random.hpp"

namespace furrow {

namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kDeg = kPi / 180.0;

void append_segment(ReferencePath& path, Vec2 from, Vec2 to, double heading,
                    SegmentKind kind, double spacing, bool skip_first) {
  const double len = std::hypot(to.x - from.x, to.y - from.y);
  const int n = std::max(1, static_cast<int>(std::ceil(len / spacing)));
  for (int i = skip_first ? 1 : 0; i <= n; ++i) {
    const double f = static_cast<double>(i) / n;
    path.waypoints.push_back({from.x + f * (to.x - from.x),
                              from.y + f * (to.y - from.y), heading, 0.0, kind});
  }
}

}  // namespace

std::size_t ReferencePath::closest_index(double x, double y) const {
  std::size_t best = 0;
  double best_d2 = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < waypoints.size(); ++i) {
    const double dx = waypoints[i].x - x;
    const double dy = waypoints[i].y - y;
    const double d2 = dx * dx + dy * dy;
    if (d2 < best_d2) {
      best_d2 = d2;
      best = i;
    }
  }
  return best;
}

Waypoint ReferencePath::at(double s) const {
  if (waypoints.empty()) throw ValidationError("empty reference path");
  if (s <= waypoints.front().s) return waypoints.front();
  if (s >= waypoints.back().s) return waypoints.back();
  auto it = std::upper_bound(
      waypoints.begin(), waypoints.end(), s,
      [](double v, const Waypoint& w) { return v < w.s; });
  const Waypoint& b = *it;
  const Waypoint& a = *(it - 1);
  const double f = (s - a.s) / (b.s - a.s);
  Waypoint w = a;
  w.x = a.x + f * (b.x - a.x);
  w.y = a.y + f * (b.y - a.y);
  w.heading = a.heading + f * wrap_angle(b.heading - a.heading);
  w.s = s;
  return w;
}

ReferencePath plan_row_skip_path(const StalkMap& map, int start_lane,
                                 const PathOptions& opts) {
  const int target_lane = start_lane + 2;
  if (start_lane < 0 || target_lane >= map.num_lanes())
    throw ValidationError("start_lane " + std::to_string(start_lane) +
                          " out of range: lanes " + std::to_string(start_lane) +
                          " and " + std::to_string(target_lane) +
                          " must exist (field has " +
                          std::to_string(map.num_lanes()) + " lanes)");

  const double radius = map.spec().row_pitch;
  const double row_end = map.lane_end_x(start_lane);
  const double x_turn = row_end + opts.headland_offset;
  const double y_start = map.lane_center_y(start_lane);
  const double y_target = y_start + 2.0 * radius;
  const double x_entry_end = map.lane_end_x(target_lane) - opts.entry_depth;

  ReferencePath path;
  path.start_lane = start_lane;
  path.target_lane = target_lane;

  append_segment(path, {row_end - opts.exit_back, y_start}, {x_turn, y_start},
                 0.0, SegmentKind::kExit, opts.spacing, false);

  const Vec2 center{x_turn, y_start + radius};
  const int n_arc = std::max(
      2, static_cast<int>(std::ceil(kPi * radius / opts.spacing)));
  for (int i = 1; i <= n_arc; ++i) {
    const double phi = -kPi / 2 + kPi * i / n_arc;
    path.waypoints.push_back({center.x + radius * std::cos(phi),
                              center.y + radius * std::sin(phi),
                              wrap_angle(phi + kPi / 2), 0.0,
                              SegmentKind::kTurnArc});
  }
  // Pin the arc end exactly onto the target centerline.
  path.waypoints.back().x = x_turn;
  path.waypoints.back().y = y_target;
  path.waypoints.back().heading = kPi;

  append_segment(path, {x_turn, y_target}, {x_entry_end, y_target}, kPi,
                 SegmentKind::kEntry, opts.spacing, true);

  double s = 0.0;
  for (std::size_t i = 1; i < path.waypoints.size(); ++i) {
    const auto& a = path.waypoints[i - 1];
    const auto& b = path.waypoints[i];
    s += std::hypot(b.x - a.x, b.y - a.y);
    path.waypoints[i].s = s;
  }
  // Segment lengths measured along the polyline so they sum to length().
  double arc_start = 0.0, arc_end = 0.0;
  for (const auto& w : path.waypoints) {
    if (w.kind == SegmentKind::kExit) arc_start = w.s;
    if (w.kind == SegmentKind::kTurnArc) arc_end = w.s;
  }
  path.exit_length = arc_start;
  path.arc_length = arc_end - arc_start;
  path.entry_length = path.length() - arc_end;
  return path;
}

PursuitOutput pursuit_control(const RobotState& state, const ReferencePath& path,
                              const PursuitParams& params,
                              const RobotSpec& robot) {
  if (path.waypoints.empty()) throw ValidationError("empty reference path");
  const auto& pose = state.pose;
  const auto& end = path.waypoints.back();
  if (std::hypot(end.x - pose.x, end.y - pose.y) < params.done_tolerance)
    return {{0.0, 0.0}, true};

  const std::size_t i = path.closest_index(pose.x, pose.y);
  const Waypoint target = path.at(path.waypoints[i].s + params.lookahead);
  const double alpha =
      wrap_angle(std::atan2(target.y - pose.y, target.x - pose.x) - pose.theta);
  const double omega = 2.0 * params.v_ref * std::sin(alpha) / params.lookahead;
  const double v = params.v_ref * std::max(0.3, std::cos(alpha));
  return {{std::clamp(v, -robot.v_max, robot.v_max),
           std::clamp(omega, -robot.omega_max, robot.omega_max)},
          false};
}

std::string to_string(DemoSource s) {
  switch (s) {
    case DemoSource::kTeleop: return "teleop";
    case DemoSource::kPolicy: return "policy";
    default: return "privileged";
  }
}

DemoSource parse_demo_source(const std::string& s) {
  if (s == "privileged") return DemoSource::kPrivileged;
  if (s == "teleop") return DemoSource::kTeleop;
  if (s == "policy") return DemoSource::kPolicy;
  throw ValidationError("unknown demonstration source '" + s + "'");
}

std::string field_digest(const FieldSpec& f) {
  char buf[512];
  std::snprintf(buf, sizeof buf, "%d|%.17g|%.17g|%.17g|%.17g|%.17g|%.17g|%llu",
                f.num_rows, f.row_pitch, f.row_length, f.stalk_spacing,
                f.stalk_radius, f.jitter_sigma, f.missing_prob,
                static_cast<unsigned long long>(f.seed));
  return sha1_hex(buf).substr(0, 16);
}

Demonstration generate_demo(const World& world, const ReferencePath& path,
                            const Pose& init,
                            const std::optional<RecoverySpec>& perturb,
                            std::uint64_t seed, const DemoOptions& opts) {
  if (!check_collision(world.map, init, world.robot).is_ok())
    throw ValidationError("generate_demo: initial pose is not collision-free");

  Demonstration demo;
  demo.meta.seed = seed;
  demo.meta.field = world.map.spec();
  demo.meta.field_digest = field_digest(world.map.spec());
  demo.meta.start = RobotState{init, 0.0, 0.0};
  demo.meta.source = DemoSource::kPrivileged;
  demo.meta.recovery = perturb.has_value();
  demo.meta.start_lane = path.start_lane;
  demo.meta.target_lane = path.target_lane;

  Rng rng(seed);
  double onset_s = std::numeric_limits<double>::infinity();
  int direction = 1;
  if (perturb) {
    const double frac =
        perturb->onset_fraction.value_or(uniform(rng, 0.2, 0.6));
    const int dir_draw = uniform(rng, 0.0, 1.0) < 0.5 ? -1 : 1;
    direction = perturb->direction.value_or(dir_draw);
    onset_s = path.exit_length + frac * path.arc_length;
  }
  int override_left = 0;
  bool triggered = false;

  const auto max_steps =
      static_cast<std::size_t>(std::llround(opts.timeout_s / world.robot.dt));
  ObservationHistory history(world.n_obs, world.robot);
  RobotState state = demo.meta.start;
  while (true) {
    if (demo.steps.size() >= max_steps)
      throw DemoTimeout("generate_demo: controller timed out after " +
                            std::to_string(max_steps) + " steps (seed " +
                            std::to_string(seed) + ")",
                        std::move(demo));
    const SimStatus status = check_collision(world.map, state.pose, world.robot);
    history.push(world.perceive(state));
    const PursuitOutput ctl = pursuit_control(state, path, opts.pursuit, world.robot);
    if (ctl.done) break;

    VelocityCommand cmd = ctl.cmd;
    if (perturb && !triggered) {
      const double progress =
          path.waypoints[path.closest_index(state.pose.x, state.pose.y)].s;
      if (progress >= onset_s) {
        triggered = true;
        override_left = perturb->steps;
      }
    }
    if (override_left > 0) {
      cmd = {std::clamp(opts.pursuit.v_ref, -world.robot.v_max, world.robot.v_max),
             direction * world.robot.omega_max};
      --override_left;
    }
    demo.steps.push_back({history.observation(), cmd, state, status});
    state = step_dynamics(state, cmd, world.robot);
  }
  return demo;
}

std::string to_string(StartClass c) {
  switch (c) {
    case StartClass::kEndOfRow:
      return "end_of_row";
    case StartClass::kBeforeEnd:
      return "before_end";
    case StartClass::kLateralOffset:
      return "lateral_offset";
    case StartClass::kHeadingOffset:
      return "heading_offset";
  }
  return "end_of_row";
}

StartClass parse_start_class(const std::string& s) {
  for (auto c : {StartClass::kEndOfRow, StartClass::kBeforeEnd,
                 StartClass::kLateralOffset, StartClass::kHeadingOffset})
    if (to_string(c) == s) return c;
  throw ValidationError("unknown start class '" + s + "'");
}

Pose nominal_start(const StalkMap& map, int lane, StartClass cls) {
  Pose p{map.lane_end_x(lane), map.lane_center_y(lane), 0.0};
  switch (cls) {
    case StartClass::kEndOfRow:
      break;
    case StartClass::kBeforeEnd:
      p.x -= 1.5;
      break;
    case StartClass::kLateralOffset:
      p.y += 0.1;
      break;
    case StartClass::kHeadingOffset:
      p.theta = 10.0 * kDeg;
      break;
  }
  return p;
}

std::uint64_t demo_field_seed(std::uint64_t base_seed, std::size_t i) {
  return mix_seed(base_seed, i);
}

Dataset collect_dataset(std::size_t n, std::uint64_t base_seed, double mix,
                        const CollectOptions& opts) {
  if (n < 1) throw ValidationError("collect_dataset: n must be >= 1");
  if (!(mix >= 0.0 && mix <= 1.0))
    throw ValidationError("collect_dataset: mix must be in [0, 1]");
  opts.robot.validate();
  opts.rays.validate();

  const auto n_recovery = static_cast<std::size_t>(std::ceil(mix * n - 1e-12));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng pick(mix_seed(base_seed, 0xC0FFEEULL));
  std::shuffle(order.begin(), order.end(), pick);
  std::vector<bool> recovery(n, false);
  for (std::size_t k = 0; k < n_recovery; ++k) recovery[order[k]] = true;

  Dataset ds;
  ds.header.n_obs = opts.n_obs;
  ds.header.rays = opts.rays;
  ds.header.robot = opts.robot;
  ds.header.obs_dim = observation_dim(opts.n_obs, opts.rays.total_rays());
  ds.demos.reserve(n);

  for (std::size_t i = 0; i < n; ++i) {
    FieldSpec field = opts.field;
    field.seed = demo_field_seed(base_seed, i);
    try {
      World world{generate_field(field), opts.robot, opts.rays, opts.n_obs};
      const ReferencePath path =
          plan_row_skip_path(world.map, opts.start_lane, opts.path);
      Rng jitter(mix_seed(field.seed, 1));
      Pose init = nominal_start(world.map, opts.start_lane, StartClass::kEndOfRow);
      init.x += uniform(jitter, -opts.jitter_longitudinal, opts.jitter_longitudinal);
      init.y += uniform(jitter, -opts.jitter_lateral, opts.jitter_lateral);
      init.theta = wrap_angle(
          init.theta + kDeg * uniform(jitter, -opts.jitter_heading_deg,
                                      opts.jitter_heading_deg));
      std::optional<RecoverySpec> perturb;
      if (recovery[i]) perturb = RecoverySpec{opts.recovery_steps, {}, {}};
      ds.demos.push_back(generate_demo(world, path, init, perturb,
                                       mix_seed(field.seed, 2), opts.demo));
    } catch (const std::exception& e) {
      throw RuntimeFailure("demonstration " + std::to_string(i) + " (field seed " +
                           std::to_string(field.seed) + ") failed: " + e.what());
    }
  }
  return ds;
}

bool replay_matches(const Demonstration& demo, const RobotSpec& robot) {
  RobotState state = demo.meta.start;
  for (const auto& step : demo.steps) {
    if (!(step.state == state)) return false;
    state = step_dynamics(state, step.act, robot);
  }
  return true;
}

}  // namespace furrow
