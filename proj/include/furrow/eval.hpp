#pragma once

// Closed-loop receding-horizon evaluation: policies, rollouts, outcome
// judgement, metric aggregation.

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "furrow/demonstrator.hpp"
#include "furrow/trainer.hpp"
#include "furrow/world.hpp"

namespace furrow {

/// What a policy sees when asked for a new chunk.
struct PolicyInput {
  const ObservationVector& obs;
  const RobotState& state;  // privileged; learned policies ignore it
  std::size_t step;         // environment steps elapsed so far
};

/// Produces a chunk of physical (v, omega) commands per query.
class Policy {
 public:
  virtual ~Policy() = default;
  virtual int horizon() const = 0;
  /// Observation dimension the policy expects, or 0 when it does not care.
  virtual std::size_t obs_dim() const { return 0; }
  virtual std::vector<VelocityCommand> plan(const PolicyInput& in, Rng& rng) = 0;
};

/// Diffusion policy: one reverse_sample per query, denormalized.
class DiffusionPolicy : public Policy {
 public:
  explicit DiffusionPolicy(Checkpoint ckpt) : ckpt_(std::move(ckpt)) {}
  int horizon() const override { return ckpt_.horizon(); }
  std::size_t obs_dim() const override {
    return static_cast<std::size_t>(ckpt_.obs_dim());
  }
  std::vector<VelocityCommand> plan(const PolicyInput& in, Rng& rng) override;
  const Checkpoint& checkpoint() const { return ckpt_; }

 private:
  Checkpoint ckpt_;
};

/// The privileged pure-pursuit expert, answering each query by rolling its
/// own controller forward through the (deterministic) dynamics.
class DemonstratorPolicy : public Policy {
 public:
  DemonstratorPolicy(ReferencePath path, PursuitParams params, RobotSpec robot,
                     int horizon = 16)
      : path_(std::move(path)), params_(params), robot_(robot), horizon_(horizon) {}
  int horizon() const override { return horizon_; }
  std::vector<VelocityCommand> plan(const PolicyInput& in, Rng& rng) override;

 private:
  ReferencePath path_;
  PursuitParams params_;
  RobotSpec robot_;
  int horizon_;
};

/// Plays back a fixed action list by environment step; zeros past the end.
class ReplayPolicy : public Policy {
 public:
  ReplayPolicy(std::vector<VelocityCommand> actions, int horizon = 16)
      : actions_(std::move(actions)), horizon_(horizon) {}
  int horizon() const override { return horizon_; }
  std::vector<VelocityCommand> plan(const PolicyInput& in, Rng& rng) override;

 private:
  std::vector<VelocityCommand> actions_;
  int horizon_;
};

class ZeroPolicy : public Policy {
 public:
  explicit ZeroPolicy(int horizon = 16) : horizon_(horizon) {}
  int horizon() const override { return horizon_; }
  std::vector<VelocityCommand> plan(const PolicyInput&, Rng&) override {
    return std::vector<VelocityCommand>(static_cast<std::size_t>(horizon_));
  }

 private:
  int horizon_;
};

enum class Outcome { kSuccess, kCollision, kTimeout, kWrongLane, kOutOfBounds };

std::string to_string(Outcome o);

/// Thresholds of the lane-entry test.
struct SuccessCriteria {
  double lateral_fraction = 0.15;  // of row_pitch
  double heading_tolerance_deg = 20.0;
  double min_penetration = 1.0;    // meters past the lane's row end
};

/// True when the state sits inside `lane` heading back along -x.
bool entered_lane(const StalkMap& map, const RobotState& s, int lane,
                  const SuccessCriteria& c = {});

/// First decisive event along the trajectory: a recorded collision or
/// out-of-bounds status, entry into the target lane (Success) or into any
/// other lane (WrongLane); Timeout when none occurs.
Outcome judge_success(const std::vector<RobotState>& trajectory,
                      const std::vector<SimStatus>& statuses,
                      const StalkMap& map, int target_lane,
                      const SuccessCriteria& c = {});

struct RolloutResult {
  std::vector<RobotState> trajectory;  // initial state plus one per step
  std::vector<SimStatus> statuses;     // aligned with trajectory
  std::vector<VelocityCommand> actions;
  std::vector<ObservationVector> observations;  // per executed step
  std::vector<std::size_t> replan_steps;        // step index of each query
  std::vector<std::vector<VelocityCommand>> chunks;  // when requested
  Outcome outcome = Outcome::kTimeout;
};

struct RolloutOptions {
  int exec_horizon = 8;
  int max_steps = 400;
  bool record_chunks = false;
  SuccessCriteria success;
};

/// Receding-horizon closed loop: observe, query a chunk, execute its first
/// exec_horizon commands (checking collisions each step), replan. Stops on
/// any decisive outcome or after max_steps.
RolloutResult rollout(Policy& policy, const World& world, int target_lane,
                      const Pose& init, const RolloutOptions& opts, Rng& rng);

/// Packs a rollout into the shared demonstration record layout.
Demonstration rollout_to_demonstration(const RolloutResult& r, const World& world,
                                       int start_lane, int target_lane,
                                       std::uint64_t seed);

// ---------------------------------------------------------------------------

struct Scenario {
  std::uint64_t field_seed = 0;
  StartClass start_class = StartClass::kEndOfRow;
  Pose start;
  int start_lane = 1;
  int target_lane = 3;
};

struct ScenarioGrid {
  std::vector<Scenario> scenarios;
};

/// One scenario per (seed, class), seeds consecutive from first_seed.
ScenarioGrid make_scenario_grid(const FieldSpec& field_template, int start_lane,
                                std::uint64_t first_seed, int n_seeds,
                                const std::vector<StartClass>& classes);

struct ClassMetrics {
  std::string name;
  int episodes = 0;
  int successes = 0;
  int collisions = 0;
  double success_rate = 0.0;
};

struct MetricsReport {
  std::vector<ClassMetrics> per_class;
  int episodes = 0;
  double success_rate = 0.0;
  double collision_rate = 0.0;
  double mean_cross_track = 0.0;
  double max_cross_track = 0.0;
  long cross_track_samples = 0;
  double mean_final_heading_error = 0.0;
  double mean_path_length = 0.0;

  const ClassMetrics* find(StartClass c) const;
};

/// Cross-track error is taken over states inside the target lane past its
/// row end, i.e. after entry.
MetricsReport compute_metrics(const std::vector<RolloutResult>& results,
                              const ScenarioGrid& grid,
                              const std::vector<StalkMap>& maps);

std::string metrics_text(const MetricsReport& m);
std::string metrics_json(const MetricsReport& m, const std::string& config_digest);

// ---------------------------------------------------------------------------

/// Bird's-eye SVG: green row lines, one colored polyline per track, a dot at
/// each start and a cross at each end. 1 m maps to `scale` user units.
/// A non-empty digest is embedded in a <metadata> element.
std::string birdseye_svg(const std::vector<std::vector<Pose>>& tracks,
                         const StalkMap& map, double scale = 50.0,
                         const std::string& config_digest = {});

void export_birdseye(const std::vector<std::vector<Pose>>& tracks,
                     const StalkMap& map, const std::filesystem::path& path,
                     const std::string& config_digest);

std::vector<Pose> track_of(const RolloutResult& r);

}  // namespace furrow
