#pragma once

// Run configuration: one merged tree with defaults, an optional JSON file and
// dotted key=value overrides. Its content digest is stamped into every
// artifact.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "furrow/demonstrator.hpp"
#include "furrow/trainer.hpp"
#include "furrow/world.hpp"

namespace furrow {

struct DemoConfig {
  int start_lane = 1;
  double mix = 0.2;
  int recovery_steps = 5;
  double jitter_longitudinal = 0.5;
  double jitter_lateral = 0.1;
  double jitter_heading_deg = 10.0;
  double lookahead = 0.5;
  double v_ref = 0.6;
  double timeout_s = 60.0;
};

struct EvalConfig {
  int exec_horizon = 8;
  int max_steps = 400;
  int n_seeds = 20;
  // Held out from collection, whose field seeds are hashed from base seeds.
  std::uint64_t first_seed = 1000000;
  std::vector<StartClass> classes{StartClass::kEndOfRow, StartClass::kBeforeEnd};
  std::uint64_t sample_seed = 0;
};

struct TeleopConfig {
  std::string host = "127.0.0.1";
  int port = 8765;
  double tick_hz = 20.0;
  double hold_s = 0.5;  // how long a missing command is repeated
  std::string out_dir = "teleop_demos";
  std::uint64_t field_seed = 0;
};

struct RunConfig {
  FieldSpec field;
  RobotSpec robot;
  RayScanConfig rays = RayScanConfig::defaults();
  int n_obs = 2;
  DemoConfig demos;
  DiffusionConfig diffusion;
  TrainConfig training;
  EvalConfig eval;
  TeleopConfig teleop;

  /// Canonical JSON text of the full tree (sorted keys, 2-space indent).
  std::string to_text() const;
  /// content_digest of to_text().
  std::string digest() const;
  void validate() const;

  CollectOptions collect_options() const;
  World world(std::uint64_t field_seed) const;
};

/// Defaults, then `file` if non-empty, then each "dotted.key=value"
/// override in order. Values parse as JSON, falling back to a bare string.
/// Unknown keys and ill-typed values throw ValidationError.
RunConfig load_config(const std::filesystem::path& file,
                      const std::vector<std::string>& overrides = {});

RunConfig config_from_text(const std::string& text);

}  // namespace furrow
