#pragma once

// Server-authoritative teleoperation: the simulation and recorder state
// machine (transport-free), driven one tick at a time.

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "furrow/config.hpp"
#include "furrow/demonstrator.hpp"

namespace furrow {

class TeleopSim {
 public:
  TeleopSim(const RunConfig& cfg, std::filesystem::path out_dir);

  /// Handles one client message. Returns replies for the sender only.
  /// Commands from non-drivers are refused with an error reply.
  std::vector<std::string> handle_message(const std::string& text, bool from_driver);

  /// A new driver starts its own seq numbering; the old command is dropped.
  void driver_changed();

  /// Advances the world exactly one dt and returns the state broadcast.
  std::string tick();

  long tick_count() const { return tick_; }
  bool recording() const { return recording_; }
  std::size_t recorded_steps() const { return buffer_.steps.size(); }
  const RobotState& state() const { return state_; }
  const World& world() const { return world_; }
  /// Ticks a stale command is repeated before falling back to zero.
  int hold_ticks() const { return hold_ticks_; }

  /// State message for the current (not yet stepped) tick.
  std::string state_message() const;

 private:
  std::vector<std::string> handle_record(const std::string& action);
  std::vector<std::string> reset(const std::string& scenario);
  void begin_buffer();

  RunConfig cfg_;
  std::filesystem::path out_dir_;
  World world_;
  StartClass start_class_ = StartClass::kEndOfRow;
  RobotState state_;
  ObservationHistory history_;
  VelocityCommand last_cmd_;
  long last_seq_ = -1;
  int ticks_since_cmd_ = 0;
  int hold_ticks_ = 0;
  long tick_ = 0;
  bool recording_ = false;
  Demonstration buffer_;
  int saved_ = 0;
};

std::string error_message(const std::string& what);

}  // namespace furrow
