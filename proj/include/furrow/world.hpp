#pragma once

// Deterministic 2D cornfield: procedural stalk placement, rate-limited
// unicycle kinematics, ray-fan perception and disc collision tests.

#include <array>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace furrow {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  friend bool operator==(const Vec2&, const Vec2&) = default;
};

/// Parameters of a procedurally generated field. Plant row i lies on
/// y = i * row_pitch and spans x in [0, row_length].
struct FieldSpec {
  int num_rows = 6;
  double row_pitch = 0.76;
  double row_length = 10.0;
  double stalk_spacing = 0.25;
  double stalk_radius = 0.02;
  double jitter_sigma = 0.02;
  double missing_prob = 0.05;
  std::uint64_t seed = 0;

  /// Throws ValidationError naming the first offending field.
  void validate() const;
};

struct Stalk {
  Vec2 center;
  double radius = 0.0;
  int row_index = 0;

  friend bool operator==(const Stalk&, const Stalk&) = default;
};

struct Bounds {
  double min_x = 0.0;
  double min_y = 0.0;
  double max_x = 0.0;
  double max_y = 0.0;

  bool contains(Vec2 p, double inflate = 0.0) const {
    return p.x >= min_x - inflate && p.x <= max_x + inflate &&
           p.y >= min_y - inflate && p.y <= max_y + inflate;
  }
  friend bool operator==(const Bounds&, const Bounds&) = default;
};

/// Immutable set of stalk discs with a uniform-grid index. Each stalk is
/// binned into every cell its disc's bounding box touches, so a cell lists
/// all stalks that can intersect it.
class StalkMap {
 public:
  StalkMap() = default;
  StalkMap(std::vector<Stalk> stalks, Bounds bounds, FieldSpec spec,
           double cell_size = 0.5);

  const std::vector<Stalk>& stalks() const { return stalks_; }
  const Bounds& bounds() const { return bounds_; }
  const FieldSpec& spec() const { return spec_; }

  /// Indices (ascending) of stalks whose disc intersects the query disc.
  std::vector<std::size_t> query_disc(Vec2 center, double radius) const;

  /// Distance along a unit direction to the nearest stalk surface, if any
  /// lies within max_range. Walks grid cells in ray order.
  std::optional<double> raycast(Vec2 origin, Vec2 dir, double max_range) const;

  // Lane k is the gap between plant rows k and k+1.
  int num_lanes() const { return spec_.num_rows - 1; }
  double lane_center_y(int lane) const {
    return (lane + 0.5) * spec_.row_pitch;
  }
  /// Largest x over the stalks of the two rows bounding the lane.
  double lane_end_x(int lane) const;
  /// Smallest lane index whose band |y - center| <= pitch/2 contains y, or
  /// nullopt when y is outside every lane.
  std::optional<int> lane_at(double y) const;

  friend bool operator==(const StalkMap& a, const StalkMap& b) {
    return a.stalks_ == b.stalks_ && a.bounds_ == b.bounds_;
  }

 private:
  std::size_t cell_index(int cx, int cy) const {
    return static_cast<std::size_t>(cy) * static_cast<std::size_t>(nx_) +
           static_cast<std::size_t>(cx);
  }
  int cell_x(double x) const;
  int cell_y(double y) const;

  std::vector<Stalk> stalks_;
  Bounds bounds_;
  FieldSpec spec_;
  double cell_ = 0.5;
  double origin_x_ = 0.0;
  double origin_y_ = 0.0;
  int nx_ = 0;
  int ny_ = 0;
  std::vector<std::vector<std::size_t>> cells_;
};

StalkMap generate_field(const FieldSpec& spec);

/// Ray–disc intersection distance along unit dir; 0 when origin is inside.
std::optional<double> ray_disc_distance(Vec2 origin, Vec2 dir, Vec2 center,
                                        double radius);

/// Wraps an angle into (-pi, pi].
double wrap_angle(double a);

struct Pose {
  double x = 0.0;
  double y = 0.0;
  double theta = 0.0;

  friend bool operator==(const Pose&, const Pose&) = default;
};

struct RobotState {
  Pose pose;
  double v = 0.0;
  double omega = 0.0;

  friend bool operator==(const RobotState&, const RobotState&) = default;
};

struct RobotSpec {
  double collision_radius = 0.15;
  double v_max = 1.0;
  double omega_max = 2.0;
  double accel_max = 1.0;
  double alpha_max = 3.0;
  double dt = 0.1;

  void validate() const;
};

struct VelocityCommand {
  double v = 0.0;
  double omega = 0.0;

  friend bool operator==(const VelocityCommand&, const VelocityCommand&) =
      default;
};

/// One control period of the rate-limited unicycle.
RobotState step_dynamics(const RobotState& state, VelocityCommand cmd,
                         const RobotSpec& spec);

struct RayHead {
  double mount_angle = 0.0;
  double fan_halfwidth = 0.0;
  int n_rays = 17;
};

struct RayScanConfig {
  std::array<RayHead, 3> heads{};
  double max_range = 3.0;

  static RayScanConfig defaults();
  int total_rays() const;
  void validate() const;
};

/// Normalized hit distances, head-major then by fan offset ascending.
struct RayScan {
  std::vector<double> distances;

  friend bool operator==(const RayScan&, const RayScan&) = default;
};

RayScan cast_rays(const StalkMap& map, const Pose& pose,
                  const RayScanConfig& cfg);

struct SimStatus {
  enum class Kind { kOk, kCollided, kOutOfBounds };
  Kind kind = Kind::kOk;
  std::size_t stalk = 0;  // valid when kind == kCollided

  static SimStatus ok() { return {}; }
  static SimStatus collided(std::size_t i) { return {Kind::kCollided, i}; }
  static SimStatus out_of_bounds() { return {Kind::kOutOfBounds, 0}; }

  bool is_ok() const { return kind == Kind::kOk; }
  /// "ok", "collided:<index>" or "out_of_bounds".
  std::string to_string() const;
  static SimStatus parse(const std::string& text);

  friend bool operator==(const SimStatus&, const SimStatus&) = default;
};

/// Margin by which the map bounds are inflated before a pose counts as
/// out of bounds.
inline constexpr double kOutOfBoundsMargin = 2.0;

SimStatus check_collision(const StalkMap& map, const Pose& pose,
                          const RobotSpec& spec);

using ObservationVector = std::vector<double>;

/// One perception frame: ray scan plus realized velocities.
struct ObservationFrame {
  RayScan scan;
  double v = 0.0;
  double omega = 0.0;
};

/// Flattens exactly n_obs frames (oldest first) into
/// [rays..., v/v_max, omega/omega_max] per frame.
ObservationVector assemble_observation(std::span<const ObservationFrame> history,
                                       int n_obs, const RobotSpec& spec);

inline std::size_t observation_dim(int n_obs, int total_rays) {
  return static_cast<std::size_t>(n_obs) *
         (static_cast<std::size_t>(total_rays) + 2);
}

/// Rolling window of the last n_obs frames; the first pushed frame fills
/// the whole window.
class ObservationHistory {
 public:
  ObservationHistory(int n_obs, RobotSpec spec) : n_obs_(n_obs), spec_(spec) {}

  void push(ObservationFrame frame);
  void clear() { frames_.clear(); }
  bool empty() const { return frames_.empty(); }
  ObservationVector observation() const;

 private:
  int n_obs_;
  RobotSpec spec_;
  std::deque<ObservationFrame> frames_;
};

/// Everything a closed-loop rollout needs to perceive and move.
struct World {
  StalkMap map;
  RobotSpec robot;
  RayScanConfig rays;
  int n_obs = 2;

  ObservationFrame perceive(const RobotState& s) const {
    return {cast_rays(map, s.pose, rays), s.v, s.omega};
  }
};

}  // namespace furrow
