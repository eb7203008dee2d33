#include "furrow/world.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "furrow/error.hpp"
#include "furrow/random.hpp"

namespace furrow {

namespace {

void require(bool ok, const char* field, const char* what) {
  if (!ok) throw ValidationError(std::string(field) + ": " + what);
}

bool finite_positive(double x) { return std::isfinite(x) && x > 0.0; }

int stalks_per_row(const FieldSpec& spec) {
  return static_cast<int>(
             std::floor(spec.row_length / spec.stalk_spacing + 1e-9)) +
         1;
}

}  // namespace

void FieldSpec::validate() const {
  require(num_rows >= 3, "num_rows", "must be >= 3");
  require(finite_positive(row_pitch), "row_pitch", "must be > 0");
  require(finite_positive(row_length), "row_length", "must be > 0");
  require(finite_positive(stalk_spacing), "stalk_spacing", "must be > 0");
  require(finite_positive(stalk_radius), "stalk_radius", "must be > 0");
  require(std::isfinite(jitter_sigma) && jitter_sigma >= 0.0, "jitter_sigma",
          "must be >= 0");
  require(std::isfinite(missing_prob) && missing_prob >= 0.0 &&
              missing_prob < 1.0,
          "missing_prob", "must be in [0, 1)");
  require(row_pitch > 2.0 * stalk_radius, "row_pitch",
          "must exceed twice stalk_radius");
}

void RobotSpec::validate() const {
  require(finite_positive(collision_radius), "collision_radius", "must be > 0");
  require(finite_positive(v_max), "v_max", "must be > 0");
  require(finite_positive(omega_max), "omega_max", "must be > 0");
  require(finite_positive(accel_max), "accel_max", "must be > 0");
  require(finite_positive(alpha_max), "alpha_max", "must be > 0");
  require(finite_positive(dt) && dt <= 0.5, "dt", "must be in (0, 0.5]");
}

RayScanConfig RayScanConfig::defaults() {
  constexpr double kDeg = std::numbers::pi / 180.0;
  RayScanConfig cfg;
  cfg.heads = {RayHead{0.0, 30.0 * kDeg, 17},
               RayHead{90.0 * kDeg, 45.0 * kDeg, 17},
               RayHead{-90.0 * kDeg, 45.0 * kDeg, 17}};
  cfg.max_range = 3.0;
  return cfg;
}

int RayScanConfig::total_rays() const {
  int n = 0;
  for (const auto& h : heads) n += h.n_rays;
  return n;
}

void RayScanConfig::validate() const {
  for (const auto& h : heads) {
    require(h.n_rays >= 3, "rays.n_rays", "must be >= 3 per head");
    require(std::isfinite(h.mount_angle), "rays.mount_angle", "must be finite");
    require(std::isfinite(h.fan_halfwidth) && h.fan_halfwidth >= 0.0,
            "rays.fan_halfwidth", "must be >= 0");
  }
  require(finite_positive(max_range), "rays.max_range", "must be > 0");
}

// ---------------------------------------------------------------------------
// Field generation

StalkMap generate_field(const FieldSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  const int per_row = stalks_per_row(spec);
  const double clamp = 2.0 * spec.jitter_sigma;

  std::vector<Stalk> stalks;
  stalks.reserve(static_cast<std::size_t>(per_row * spec.num_rows));
  for (int row = 0; row < spec.num_rows; ++row) {
    for (int j = 0; j < per_row; ++j) {
      const double u = uniform(rng, 0.0, 1.0);
      if (u < spec.missing_prob) continue;
      const double jx =
          std::clamp(spec.jitter_sigma * standard_normal(rng), -clamp, clamp);
      const double jy =
          std::clamp(spec.jitter_sigma * standard_normal(rng), -clamp, clamp);
      stalks.push_back(Stalk{{j * spec.stalk_spacing + jx,
                              row * spec.row_pitch + jy},
                             spec.stalk_radius,
                             row});
    }
  }

  const double pad = clamp + spec.stalk_radius;
  Bounds bounds{-pad, -pad, (per_row - 1) * spec.stalk_spacing + pad,
                (spec.num_rows - 1) * spec.row_pitch + pad};
  return StalkMap(std::move(stalks), bounds, spec);
}

// ---------------------------------------------------------------------------
// StalkMap

StalkMap::StalkMap(std::vector<Stalk> stalks, Bounds bounds, FieldSpec spec,
                   double cell_size)
    : stalks_(std::move(stalks)),
      bounds_(bounds),
      spec_(spec),
      cell_(cell_size) {
  origin_x_ = bounds_.min_x - cell_;
  origin_y_ = bounds_.min_y - cell_;
  nx_ = static_cast<int>(
            std::ceil((bounds_.max_x - bounds_.min_x) / cell_)) + 3;
  ny_ = static_cast<int>(
            std::ceil((bounds_.max_y - bounds_.min_y) / cell_)) + 3;
  cells_.assign(static_cast<std::size_t>(nx_) * static_cast<std::size_t>(ny_),
                {});
  for (std::size_t i = 0; i < stalks_.size(); ++i) {
    const auto& s = stalks_[i];
    const int x0 = cell_x(s.center.x - s.radius);
    const int x1 = cell_x(s.center.x + s.radius);
    const int y0 = cell_y(s.center.y - s.radius);
    const int y1 = cell_y(s.center.y + s.radius);
    for (int cy = y0; cy <= y1; ++cy)
      for (int cx = x0; cx <= x1; ++cx) cells_[cell_index(cx, cy)].push_back(i);
  }
}

int StalkMap::cell_x(double x) const {
  return std::clamp(static_cast<int>(std::floor((x - origin_x_) / cell_)), 0,
                    nx_ - 1);
}

int StalkMap::cell_y(double y) const {
  return std::clamp(static_cast<int>(std::floor((y - origin_y_) / cell_)), 0,
                    ny_ - 1);
}

std::vector<std::size_t> StalkMap::query_disc(Vec2 center,
                                              double radius) const {
  std::vector<std::size_t> out;
  if (cells_.empty()) return out;
  const int x0 = cell_x(center.x - radius);
  const int x1 = cell_x(center.x + radius);
  const int y0 = cell_y(center.y - radius);
  const int y1 = cell_y(center.y + radius);
  for (int cy = y0; cy <= y1; ++cy) {
    for (int cx = x0; cx <= x1; ++cx) {
      for (std::size_t i : cells_[cell_index(cx, cy)]) {
        const auto& s = stalks_[i];
        const double dx = s.center.x - center.x;
        const double dy = s.center.y - center.y;
        const double reach = s.radius + radius;
        if (dx * dx + dy * dy <= reach * reach) out.push_back(i);
      }
    }
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

std::optional<double> StalkMap::raycast(Vec2 origin, Vec2 dir,
                                        double max_range) const {
  if (cells_.empty() || stalks_.empty()) return std::nullopt;
  constexpr double kInf = std::numeric_limits<double>::infinity();

  // Clip the ray against the grid rectangle (slab test).
  const double gx0 = origin_x_, gx1 = origin_x_ + nx_ * cell_;
  const double gy0 = origin_y_, gy1 = origin_y_ + ny_ * cell_;
  double t_enter = 0.0;
  double t_exit = max_range;
  auto slab = [&](double o, double d, double lo, double hi) {
    if (d == 0.0) return o >= lo && o <= hi;
    double ta = (lo - o) / d;
    double tb = (hi - o) / d;
    if (ta > tb) std::swap(ta, tb);
    t_enter = std::max(t_enter, ta);
    t_exit = std::min(t_exit, tb);
    return t_enter <= t_exit;
  };
  if (!slab(origin.x, dir.x, gx0, gx1) || !slab(origin.y, dir.y, gy0, gy1))
    return std::nullopt;

  const double px = origin.x + dir.x * t_enter;
  const double py = origin.y + dir.y * t_enter;
  int cx = cell_x(px);
  int cy = cell_y(py);
  const int step_x = dir.x > 0.0 ? 1 : -1;
  const int step_y = dir.y > 0.0 ? 1 : -1;
  const double delta_x = dir.x != 0.0 ? cell_ / std::abs(dir.x) : kInf;
  const double delta_y = dir.y != 0.0 ? cell_ / std::abs(dir.y) : kInf;
  double next_x =
      dir.x != 0.0
          ? (origin_x_ + (cx + (step_x > 0 ? 1 : 0)) * cell_ - origin.x) / dir.x
          : kInf;
  double next_y =
      dir.y != 0.0
          ? (origin_y_ + (cy + (step_y > 0 ? 1 : 0)) * cell_ - origin.y) / dir.y
          : kInf;

  double best = kInf;
  while (true) {
    for (std::size_t i : cells_[cell_index(cx, cy)]) {
      const auto& s = stalks_[i];
      if (auto t = ray_disc_distance(origin, dir, s.center, s.radius))
        best = std::min(best, *t);
    }
    const double cell_exit = std::min(next_x, next_y);
    // Small slack keeps boundary-grazing hits in later cells in play.
    if (best < cell_exit - 1e-9 || cell_exit > t_exit) break;
    if (next_x < next_y) {
      cx += step_x;
      next_x += delta_x;
      if (cx < 0 || cx >= nx_) break;
    } else {
      cy += step_y;
      next_y += delta_y;
      if (cy < 0 || cy >= ny_) break;
    }
  }
  if (best <= max_range) return best;
  return std::nullopt;
}

double StalkMap::lane_end_x(int lane) const {
  double end = -std::numeric_limits<double>::infinity();
  for (const auto& s : stalks_)
    if (s.row_index == lane || s.row_index == lane + 1)
      end = std::max(end, s.center.x);
  if (!std::isfinite(end)) end = spec_.row_length;
  return end;
}

std::optional<int> StalkMap::lane_at(double y) const {
  const double k = std::floor(y / spec_.row_pitch);
  if (k < 0 || k >= num_lanes()) return std::nullopt;
  return static_cast<int>(k);
}

// ---------------------------------------------------------------------------
// Geometry and kinematics

std::optional<double> ray_disc_distance(Vec2 origin, Vec2 dir, Vec2 center,
                                        double radius) {
  const double fx = origin.x - center.x;
  const double fy = origin.y - center.y;
  const double b = fx * dir.x + fy * dir.y;
  const double c = fx * fx + fy * fy - radius * radius;
  if (c <= 0.0) return 0.0;
  if (b > 0.0) return std::nullopt;  // disc is behind the origin
  const double disc = b * b - c;
  if (disc < 0.0) return std::nullopt;
  return -b - std::sqrt(disc);
}

double wrap_angle(double a) {
  double r = std::remainder(a, 2.0 * std::numbers::pi);
  if (r <= -std::numbers::pi) r += 2.0 * std::numbers::pi;
  return r;
}

RobotState step_dynamics(const RobotState& state, VelocityCommand cmd,
                         const RobotSpec& spec) {
  if (!std::isfinite(cmd.v) || !std::isfinite(cmd.omega))
    throw ValidationError("step_dynamics: non-finite command");
  const double v_target = std::clamp(cmd.v, -spec.v_max, spec.v_max);
  const double w_target = std::clamp(cmd.omega, -spec.omega_max, spec.omega_max);
  const double dv_max = spec.accel_max * spec.dt;
  const double dw_max = spec.alpha_max * spec.dt;

  RobotState next;
  next.v = state.v + std::clamp(v_target - state.v, -dv_max, dv_max);
  next.omega = state.omega + std::clamp(w_target - state.omega, -dw_max, dw_max);
  next.pose.x = state.pose.x + next.v * std::cos(state.pose.theta) * spec.dt;
  next.pose.y = state.pose.y + next.v * std::sin(state.pose.theta) * spec.dt;
  next.pose.theta = wrap_angle(state.pose.theta + next.omega * spec.dt);
  return next;
}

// ---------------------------------------------------------------------------
// Perception and collision

RayScan cast_rays(const StalkMap& map, const Pose& pose,
                  const RayScanConfig& cfg) {
  RayScan scan;
  scan.distances.reserve(static_cast<std::size_t>(cfg.total_rays()));
  const Vec2 origin{pose.x, pose.y};
  for (const auto& head : cfg.heads) {
    for (int k = 0; k < head.n_rays; ++k) {
      const double offset =
          -head.fan_halfwidth +
          2.0 * head.fan_halfwidth * k / static_cast<double>(head.n_rays - 1);
      const double a = pose.theta + head.mount_angle + offset;
      const Vec2 dir{std::cos(a), std::sin(a)};
      const auto hit = map.raycast(origin, dir, cfg.max_range);
      scan.distances.push_back(hit ? *hit / cfg.max_range : 1.0);
    }
  }
  return scan;
}

SimStatus check_collision(const StalkMap& map, const Pose& pose,
                          const RobotSpec& spec) {
  const Vec2 c{pose.x, pose.y};
  std::optional<std::size_t> nearest;
  double nearest_d2 = std::numeric_limits<double>::infinity();
  for (std::size_t i : map.query_disc(c, spec.collision_radius)) {
    const auto& s = map.stalks()[i];
    const double dx = s.center.x - c.x;
    const double dy = s.center.y - c.y;
    const double d2 = dx * dx + dy * dy;
    const double r = spec.collision_radius + s.radius;
    if (d2 < r * r && d2 < nearest_d2) {
      nearest = i;
      nearest_d2 = d2;
    }
  }
  if (nearest) return SimStatus::collided(*nearest);
  if (!map.bounds().contains(c, kOutOfBoundsMargin))
    return SimStatus::out_of_bounds();
  return SimStatus::ok();
}

std::string SimStatus::to_string() const {
  switch (kind) {
    case Kind::kOk:
      return "ok";
    case Kind::kCollided:
      return "collided:" + std::to_string(stalk);
    case Kind::kOutOfBounds:
      return "out_of_bounds";
  }
  return "ok";
}

SimStatus SimStatus::parse(const std::string& text) {
  if (text == "ok") return ok();
  if (text == "out_of_bounds") return out_of_bounds();
  constexpr std::string_view kPrefix = "collided:";
  if (text.starts_with(kPrefix)) {
    try {
      return collided(std::stoul(text.substr(kPrefix.size())));
    } catch (const std::exception&) {
    }
  }
  throw ValidationError("unknown status '" + text + "'");
}

// ---------------------------------------------------------------------------
// Observations

ObservationVector assemble_observation(std::span<const ObservationFrame> history,
                                       int n_obs, const RobotSpec& spec) {
  if (n_obs < 1 || history.size() != static_cast<std::size_t>(n_obs))
    throw ValidationError("assemble_observation: expected " +
                          std::to_string(n_obs) + " frames, got " +
                          std::to_string(history.size()));
  const std::size_t rays = history.front().scan.distances.size();
  ObservationVector out;
  out.reserve(history.size() * (rays + 2));
  for (const auto& f : history) {
    if (f.scan.distances.size() != rays)
      throw ValidationError("assemble_observation: ray count mismatch");
    out.insert(out.end(), f.scan.distances.begin(), f.scan.distances.end());
    out.push_back(f.v / spec.v_max);
    out.push_back(f.omega / spec.omega_max);
  }
  return out;
}

void ObservationHistory::push(ObservationFrame frame) {
  if (frames_.empty()) {
    for (int i = 0; i < n_obs_; ++i) frames_.push_back(frame);
    return;
  }
  frames_.pop_front();
  frames_.push_back(std::move(frame));
}

ObservationVector ObservationHistory::observation() const {
  std::vector<ObservationFrame> frames(frames_.begin(), frames_.end());
  return assemble_observation(frames, n_obs_, spec_);
}

}  // namespace furrow
