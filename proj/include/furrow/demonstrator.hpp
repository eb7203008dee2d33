#pragma once

// Privileged expert for the left row-skip turn: reference path planning,
// pure-pursuit tracking, perturbation-and-recovery rollouts and dataset
// collection.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "furrow/error.hpp"
#include "furrow/world.hpp"

namespace furrow {

enum class SegmentKind { kExit, kTurnArc, kEntry };

struct Waypoint {
  double x = 0.0;
  double y = 0.0;
  double heading = 0.0;
  double s = 0.0;  // cumulative arclength
  SegmentKind kind = SegmentKind::kExit;
};

struct ReferencePath {
  std::vector<Waypoint> waypoints;
  int start_lane = 0;
  int target_lane = 0;
  double exit_length = 0.0;
  double arc_length = 0.0;
  double entry_length = 0.0;

  double length() const { return waypoints.empty() ? 0.0 : waypoints.back().s; }
  std::size_t closest_index(double x, double y) const;
  /// Linear interpolation at arclength s, clamped to the path ends.
  Waypoint at(double s) const;
};

/// Path-shape knobs. The turn is a left semicircle of radius row_pitch
/// starting headland_offset past the last stalk of the start lane.
struct PathOptions {
  double headland_offset = 1.0;
  double exit_back = 3.0;       // exit segment starts this far before row end
  double entry_depth = 2.5;     // entry segment ends this far inside the rows
  double spacing = 0.02;        // waypoint spacing
};

ReferencePath plan_row_skip_path(const StalkMap& map, int start_lane,
                                 const PathOptions& opts = {});

struct PursuitParams {
  double lookahead = 0.5;
  double v_ref = 0.6;
  double done_tolerance = 0.1;
};

struct PursuitOutput {
  VelocityCommand cmd;
  bool done = false;
};

PursuitOutput pursuit_control(const RobotState& state, const ReferencePath& path,
                              const PursuitParams& params,
                              const RobotSpec& robot);

/// Seeded action override injected mid-turn.
struct RecoverySpec {
  int steps = 5;
  /// Fraction of the turn arc after which the override starts. When unset,
  /// drawn uniformly from [0.2, 0.6] using the demo seed.
  std::optional<double> onset_fraction;
  /// +1 turns harder left, -1 swings right; drawn from the seed when unset.
  std::optional<int> direction;
};

// kPolicy marks exported evaluation rollouts.
enum class DemoSource { kPrivileged, kTeleop, kPolicy };

std::string to_string(DemoSource s);
DemoSource parse_demo_source(const std::string& s);

struct DemoStep {
  ObservationVector obs;
  VelocityCommand act;
  RobotState state;
  SimStatus status;
};

struct DemoMeta {
  std::uint64_t seed = 0;
  FieldSpec field;
  std::string field_digest;
  RobotState start;
  DemoSource source = DemoSource::kPrivileged;
  bool recovery = false;
  int start_lane = 0;
  int target_lane = 0;
};

/// Observation-action trajectory. Step k records the state the action was
/// chosen in, the observation built there, and that state's status.
struct Demonstration {
  DemoMeta meta;
  std::vector<DemoStep> steps;
};

/// Controller timeout; carries whatever was recorded.
class DemoTimeout : public RuntimeFailure {
 public:
  DemoTimeout(const std::string& what, Demonstration partial)
      : RuntimeFailure(what), partial_(std::move(partial)) {}
  const Demonstration& partial() const { return partial_; }

 private:
  Demonstration partial_;
};

struct DemoOptions {
  PursuitParams pursuit;
  double timeout_s = 60.0;
};

Demonstration generate_demo(const World& world, const ReferencePath& path,
                            const Pose& init,
                            const std::optional<RecoverySpec>& perturb,
                            std::uint64_t seed, const DemoOptions& opts = {});

/// Hex digest identifying a field spec (all parameters and seed).
std::string field_digest(const FieldSpec& spec);

/// Start-pose classes used by demos and evaluation.
enum class StartClass { kEndOfRow, kBeforeEnd, kLateralOffset, kHeadingOffset };

std::string to_string(StartClass c);
StartClass parse_start_class(const std::string& s);

/// Nominal start pose of a class: lane centerline, heading +x, at the lane's
/// row end (before_end: 1.5 m earlier; offset classes shift laterally by
/// 0.1 m or rotate by 10 degrees).
Pose nominal_start(const StalkMap& map, int lane, StartClass cls);

struct CollectOptions {
  FieldSpec field;  // template; seed replaced per demonstration
  RobotSpec robot;
  RayScanConfig rays = RayScanConfig::defaults();
  int n_obs = 2;
  int start_lane = 1;
  double jitter_longitudinal = 0.5;
  double jitter_lateral = 0.1;
  double jitter_heading_deg = 10.0;
  int recovery_steps = 5;
  DemoOptions demo;
  PathOptions path;
};

struct DatasetHeader {
  int schema_version = 1;
  int n_obs = 2;
  RayScanConfig rays = RayScanConfig::defaults();
  RobotSpec robot;
  std::size_t obs_dim = 0;
  std::string config_digest;
};

struct Dataset {
  DatasetHeader header;
  std::vector<Demonstration> demos;
};

/// Field seed of the i-th demonstration collected with base_seed.
std::uint64_t demo_field_seed(std::uint64_t base_seed, std::size_t i);

/// n demonstrations over distinct seeded fields; ceil(mix * n) of them,
/// chosen by a seeded shuffle, carry a recovery perturbation.
Dataset collect_dataset(std::size_t n, std::uint64_t base_seed, double mix,
                        const CollectOptions& opts);

/// Re-simulates the recorded actions from meta.start; true iff every
/// recorded state is reproduced bit-exactly.
bool replay_matches(const Demonstration& demo, const RobotSpec& robot);

}  // namespace furrow
