#include "furrow/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>

#include "furrow/error.hpp"
#include "json_codec.hpp"

namespace furrow {

std::vector<VelocityCommand> DiffusionPolicy::plan(const PolicyInput& in, Rng& rng) {
  const Eigen::VectorXd obs = ckpt_.norm.normalize_obs(in.obs);
  const ActionChunk a = reverse_sample(
      ckpt_.params, std::span<const double>(obs.data(), obs.size()),
      ckpt_.schedule, rng);
  const ActionChunk phys = ckpt_.norm.denormalize(a);
  std::vector<VelocityCommand> out(static_cast<std::size_t>(phys.rows()));
  for (Eigen::Index i = 0; i < phys.rows(); ++i)
    out[static_cast<std::size_t>(i)] = {phys(i, 0), phys(i, 1)};
  return out;
}

std::vector<VelocityCommand> DemonstratorPolicy::plan(const PolicyInput& in, Rng&) {
  std::vector<VelocityCommand> out;
  out.reserve(static_cast<std::size_t>(horizon_));
  RobotState s = in.state;
  bool done = false;
  for (int i = 0; i < horizon_; ++i) {
    VelocityCommand cmd{};
    if (!done) {
      const PursuitOutput p = pursuit_control(s, path_, params_, robot_);
      done = p.done;
      if (!done) cmd = p.cmd;
    }
    out.push_back(cmd);
    s = step_dynamics(s, cmd, robot_);
  }
  return out;
}

std::vector<VelocityCommand> ReplayPolicy::plan(const PolicyInput& in, Rng&) {
  std::vector<VelocityCommand> out(static_cast<std::size_t>(horizon_));
  for (std::size_t i = 0; i < out.size(); ++i) {
    const std::size_t k = in.step + i;
    if (k < actions_.size()) out[i] = actions_[k];
  }
  return out;
}

std::string to_string(Outcome o) {
  switch (o) {
    case Outcome::kSuccess: return "success";
    case Outcome::kCollision: return "collision";
    case Outcome::kTimeout: return "timeout";
    case Outcome::kWrongLane: return "wrong_lane";
    case Outcome::kOutOfBounds: return "out_of_bounds";
  }
  return "?";
}

bool entered_lane(const StalkMap& map, const RobotState& s, int lane,
                  const SuccessCriteria& c) {
  if (lane < 0 || lane >= map.num_lanes()) return false;
  const double lateral = std::abs(s.pose.y - map.lane_center_y(lane));
  if (lateral > c.lateral_fraction * map.spec().row_pitch) return false;
  const double heading = std::abs(wrap_angle(s.pose.theta - std::numbers::pi));
  if (heading > c.heading_tolerance_deg * std::numbers::pi / 180.0) return false;
  return map.lane_end_x(lane) - s.pose.x >= c.min_penetration;
}

namespace {

constexpr int kMetricsSchemaVersion = 1;
constexpr int kPlotSchemaVersion = 1;

std::optional<Outcome> decisive(const StalkMap& map, const RobotState& s,
                                const SimStatus& status, int target,
                                const SuccessCriteria& c) {
  if (status.kind == SimStatus::Kind::kCollided) return Outcome::kCollision;
  if (status.kind == SimStatus::Kind::kOutOfBounds) return Outcome::kOutOfBounds;
  if (entered_lane(map, s, target, c)) return Outcome::kSuccess;
  for (int k = 0; k < map.num_lanes(); ++k)
    if (k != target && entered_lane(map, s, k, c)) return Outcome::kWrongLane;
  return std::nullopt;
}

}  // namespace

Outcome judge_success(const std::vector<RobotState>& trajectory,
                      const std::vector<SimStatus>& statuses,
                      const StalkMap& map, int target_lane,
                      const SuccessCriteria& c) {
  if (trajectory.size() != statuses.size())
    throw ValidationError("judge_success: trajectory has " +
                          std::to_string(trajectory.size()) + " states but " +
                          std::to_string(statuses.size()) + " statuses");
  for (std::size_t i = 0; i < trajectory.size(); ++i)
    if (auto o = decisive(map, trajectory[i], statuses[i], target_lane, c)) return *o;
  return Outcome::kTimeout;
}

RolloutResult rollout(Policy& policy, const World& world, int target_lane,
                      const Pose& init, const RolloutOptions& opts, Rng& rng) {
  const std::size_t dim = observation_dim(world.n_obs, world.rays.total_rays());
  if (policy.obs_dim() != 0 && policy.obs_dim() != dim)
    throw ValidationError("policy expects observation dimension " +
                          std::to_string(policy.obs_dim()) +
                          " but the world produces " + std::to_string(dim));
  if (opts.exec_horizon < 1 || opts.exec_horizon > policy.horizon())
    throw ValidationError("exec_horizon must be in [1, " +
                          std::to_string(policy.horizon()) + "], got " +
                          std::to_string(opts.exec_horizon));
  if (opts.max_steps < 0)
    throw ValidationError("max_steps must be non-negative");

  RolloutResult r;
  RobotState state{init, 0.0, 0.0};
  r.trajectory.push_back(state);
  r.statuses.push_back(check_collision(world.map, state.pose, world.robot));
  if (auto o = decisive(world.map, state, r.statuses.back(), target_lane, opts.success)) {
    r.outcome = *o;
    return r;
  }

  ObservationHistory history(world.n_obs, world.robot);
  history.push(world.perceive(state));
  std::size_t steps = 0;
  const auto max_steps = static_cast<std::size_t>(opts.max_steps);
  while (steps < max_steps) {
    const ObservationVector obs = history.observation();
    std::vector<VelocityCommand> chunk = policy.plan({obs, state, steps}, rng);
    if (chunk.size() < static_cast<std::size_t>(opts.exec_horizon))
      throw RuntimeFailure("policy returned " + std::to_string(chunk.size()) +
                           " commands, fewer than exec_horizon");
    r.replan_steps.push_back(steps);
    if (opts.record_chunks) r.chunks.push_back(chunk);

    for (int j = 0; j < opts.exec_horizon && steps < max_steps; ++j) {
      const ObservationVector here = j == 0 ? obs : history.observation();
      r.observations.push_back(here);
      r.actions.push_back(chunk[static_cast<std::size_t>(j)]);
      state = step_dynamics(state, chunk[static_cast<std::size_t>(j)], world.robot);
      ++steps;
      r.trajectory.push_back(state);
      r.statuses.push_back(check_collision(world.map, state.pose, world.robot));
      if (auto o = decisive(world.map, state, r.statuses.back(), target_lane,
                            opts.success)) {
        r.outcome = *o;
        return r;
      }
      history.push(world.perceive(state));
    }
  }
  r.outcome = Outcome::kTimeout;
  return r;
}

Demonstration rollout_to_demonstration(const RolloutResult& r, const World& world,
                                       int start_lane, int target_lane,
                                       std::uint64_t seed) {
  Demonstration d;
  d.meta.seed = seed;
  d.meta.field = world.map.spec();
  d.meta.field_digest = field_digest(world.map.spec());
  d.meta.start = r.trajectory.front();
  d.meta.source = DemoSource::kPolicy;
  d.meta.start_lane = start_lane;
  d.meta.target_lane = target_lane;
  for (std::size_t k = 0; k < r.actions.size(); ++k)
    d.steps.push_back({r.observations[k], r.actions[k], r.trajectory[k], r.statuses[k]});
  return d;
}

ScenarioGrid make_scenario_grid(const FieldSpec& field_template, int start_lane,
                                std::uint64_t first_seed, int n_seeds,
                                const std::vector<StartClass>& classes) {
  if (n_seeds < 1) throw ValidationError("scenario grid needs at least one seed");
  if (classes.empty()) throw ValidationError("scenario grid needs at least one start class");
  ScenarioGrid g;
  for (int i = 0; i < n_seeds; ++i) {
    FieldSpec spec = field_template;
    spec.seed = first_seed + static_cast<std::uint64_t>(i);
    const StalkMap map = generate_field(spec);
    if (start_lane < 0 || start_lane + 2 >= map.num_lanes())
      throw ValidationError("start lane " + std::to_string(start_lane) +
                            " has no lane two to its left");
    for (StartClass c : classes)
      g.scenarios.push_back({spec.seed, c, nominal_start(map, start_lane, c),
                             start_lane, start_lane + 2});
  }
  return g;
}

const ClassMetrics* MetricsReport::find(StartClass c) const {
  const std::string name = to_string(c);
  for (const auto& m : per_class)
    if (m.name == name) return &m;
  return nullptr;
}

MetricsReport compute_metrics(const std::vector<RolloutResult>& results,
                              const ScenarioGrid& grid,
                              const std::vector<StalkMap>& maps) {
  if (results.empty()) throw ValidationError("no rollouts to summarize");
  if (results.size() != grid.scenarios.size() || maps.size() != results.size())
    throw ValidationError("results, scenarios and maps differ in length");

  MetricsReport m;
  m.episodes = static_cast<int>(results.size());
  int succ = 0, coll = 0;
  double xte_sum = 0.0, head_sum = 0.0, len_sum = 0.0;
  for (std::size_t i = 0; i < results.size(); ++i) {
    const RolloutResult& r = results[i];
    const Scenario& sc = grid.scenarios[i];
    const StalkMap& map = maps[i];
    const std::string name = to_string(sc.start_class);
    auto it = std::find_if(m.per_class.begin(), m.per_class.end(),
                           [&](const ClassMetrics& c) { return c.name == name; });
    if (it == m.per_class.end()) {
      m.per_class.push_back({name});
      it = std::prev(m.per_class.end());
    }
    ++it->episodes;
    if (r.outcome == Outcome::kSuccess) ++it->successes, ++succ;
    if (r.outcome == Outcome::kCollision) ++it->collisions, ++coll;

    const double center = map.lane_center_y(sc.target_lane);
    const double half = 0.5 * map.spec().row_pitch;
    const double end_x = map.lane_end_x(sc.target_lane);
    for (std::size_t k = 0; k < r.trajectory.size(); ++k) {
      const Pose& p = r.trajectory[k].pose;
      if (k > 0) len_sum += std::hypot(p.x - r.trajectory[k - 1].pose.x,
                                       p.y - r.trajectory[k - 1].pose.y);
      const double e = std::abs(p.y - center);
      if (p.x <= end_x && e <= half) {
        xte_sum += e;
        m.max_cross_track = std::max(m.max_cross_track, e);
        ++m.cross_track_samples;
      }
    }
    head_sum += std::abs(wrap_angle(r.trajectory.back().pose.theta - std::numbers::pi));
  }
  for (auto& c : m.per_class)
    c.success_rate = static_cast<double>(c.successes) / c.episodes;
  m.success_rate = static_cast<double>(succ) / m.episodes;
  m.collision_rate = static_cast<double>(coll) / m.episodes;
  m.mean_cross_track = m.cross_track_samples ? xte_sum / m.cross_track_samples : 0.0;
  m.mean_final_heading_error = head_sum / m.episodes;
  m.mean_path_length = len_sum / m.episodes;
  return m;
}

std::string metrics_text(const MetricsReport& m) {
  std::ostringstream o;
  char line[160];
  std::snprintf(line, sizeof line, "%-16s %8s %9s %10s %8s\n", "class", "episodes",
                "successes", "collisions", "rate");
  o << line;
  for (const auto& c : m.per_class) {
    std::snprintf(line, sizeof line, "%-16s %8d %9d %10d %8.3f\n", c.name.c_str(),
                  c.episodes, c.successes, c.collisions, c.success_rate);
    o << line;
  }
  std::snprintf(line, sizeof line, "%-16s %8d %9s %10s %8.3f\n", "all", m.episodes, "",
                "", m.success_rate);
  o << line;
  std::snprintf(line, sizeof line, "collision rate          %.4f\n", m.collision_rate);
  o << line;
  std::snprintf(line, sizeof line, "cross-track mean/max    %.4f / %.4f m (%ld samples)\n",
                m.mean_cross_track, m.max_cross_track, m.cross_track_samples);
  o << line;
  std::snprintf(line, sizeof line, "final heading error     %.2f deg\n",
                m.mean_final_heading_error * 180.0 / std::numbers::pi);
  o << line;
  std::snprintf(line, sizeof line, "mean path length        %.3f m\n", m.mean_path_length);
  o << line;
  return o.str();
}

std::string metrics_json(const MetricsReport& m, const std::string& config_digest) {
  json classes = json::array();
  for (const auto& c : m.per_class)
    classes.push_back({{"class", c.name},
                       {"episodes", c.episodes},
                       {"successes", c.successes},
                       {"collisions", c.collisions},
                       {"success_rate", c.success_rate}});
  json j = {{"kind", "furrow.metrics"},
            {"schema_version", kMetricsSchemaVersion},
            {"config_digest", config_digest},
            {"episodes", m.episodes},
            {"success_rate", m.success_rate},
            {"collision_rate", m.collision_rate},
            {"mean_cross_track", m.mean_cross_track},
            {"max_cross_track", m.max_cross_track},
            {"cross_track_samples", m.cross_track_samples},
            {"mean_final_heading_error", m.mean_final_heading_error},
            {"mean_path_length", m.mean_path_length},
            {"per_class", classes}};
  return j.dump(2) + "\n";
}

namespace {

const char* kPalette[] = {"#1f77b4", "#d62728", "#9467bd", "#ff7f0e", "#17becf",
                          "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#000000"};

std::string color_for(std::size_t i) {
  constexpr std::size_t n = sizeof kPalette / sizeof kPalette[0];
  if (i < n) return kPalette[i];
  // golden-angle hues beyond the fixed palette keep colors distinct
  char buf[48];
  std::snprintf(buf, sizeof buf, "hsl(%d,70%%,40%%)",
                static_cast<int>(std::fmod(static_cast<double>(i) * 137.508, 360.0)));
  return buf;
}

}  // namespace

std::string birdseye_svg(const std::vector<std::vector<Pose>>& tracks,
                         const StalkMap& map, double scale,
                         const std::string& config_digest) {
  if (tracks.empty()) throw ValidationError("no trajectories to plot");
  for (const auto& t : tracks)
    if (t.empty()) throw ValidationError("cannot plot an empty trajectory");

  Bounds b = map.bounds();
  for (const auto& t : tracks)
    for (const Pose& p : t) {
      b.min_x = std::min(b.min_x, p.x);
      b.max_x = std::max(b.max_x, p.x);
      b.min_y = std::min(b.min_y, p.y);
      b.max_y = std::max(b.max_y, p.y);
    }
  const double pad = 0.5;
  b.min_x -= pad, b.min_y -= pad, b.max_x += pad, b.max_y += pad;
  const double w = (b.max_x - b.min_x) * scale;
  const double h = (b.max_y - b.min_y) * scale;
  // SVG y grows downward; flip so +y (left of travel) is up
  auto sx = [&](double x) { return (x - b.min_x) * scale; };
  auto sy = [&](double y) { return (b.max_y - y) * scale; };

  std::ostringstream o;
  char buf[256];
  std::snprintf(buf, sizeof buf,
                "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"%.1f\" height=\"%.1f\" "
                "viewBox=\"0 0 %.1f %.1f\">\n",
                w, h, w, h);
  o << buf;
  if (!config_digest.empty())
    o << "<metadata>"
      << json{{"kind", "furrow.birdseye"}, {"schema_version", kPlotSchemaVersion},
              {"config_digest", config_digest}}
             .dump()
      << "</metadata>\n";
  o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";

  const FieldSpec& f = map.spec();
  for (int i = 0; i < f.num_rows; ++i) {
    std::snprintf(buf, sizeof buf,
                  "<line x1=\"%.2f\" y1=\"%.2f\" x2=\"%.2f\" y2=\"%.2f\" "
                  "stroke=\"#2ca02c\" stroke-width=\"3\"/>\n",
                  sx(0.0), sy(i * f.row_pitch), sx(f.row_length), sy(i * f.row_pitch));
    o << buf;
  }
  for (std::size_t i = 0; i < tracks.size(); ++i) {
    const auto& t = tracks[i];
    const std::string c = color_for(i);
    o << "<polyline fill=\"none\" stroke=\"" << c << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t k = 0; k < t.size(); ++k) {
      std::snprintf(buf, sizeof buf, "%s%.2f,%.2f", k ? " " : "", sx(t[k].x), sy(t[k].y));
      o << buf;
    }
    o << "\"/>\n";
    std::snprintf(buf, sizeof buf, "<circle cx=\"%.2f\" cy=\"%.2f\" r=\"4\" fill=\"%s\"/>\n",
                  sx(t.front().x), sy(t.front().y), c.c_str());
    o << buf;
    const double ex = sx(t.back().x), ey = sy(t.back().y), r = 4.0;
    std::snprintf(buf, sizeof buf,
                  "<path d=\"M%.2f %.2f L%.2f %.2f M%.2f %.2f L%.2f %.2f\" "
                  "stroke=\"%s\" stroke-width=\"2\"/>\n",
                  ex - r, ey - r, ex + r, ey + r, ex - r, ey + r, ex + r, ey - r, c.c_str());
    o << buf;
  }
  o << "</svg>\n";
  return o.str();
}

void export_birdseye(const std::vector<std::vector<Pose>>& tracks,
                     const StalkMap& map, const std::filesystem::path& path,
                     const std::string& config_digest) {
  const std::string svg = birdseye_svg(tracks, map, 50.0, config_digest);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw RuntimeFailure("cannot write " + path.string());
  out << svg;
  if (!out) throw RuntimeFailure("failed writing " + path.string());
}

std::vector<Pose> track_of(const RolloutResult& r) {
  std::vector<Pose> t;
  t.reserve(r.trajectory.size());
  for (const auto& s : r.trajectory) t.push_back(s.pose);
  return t;
}

}  // namespace furrow
