#pragma once

// WebSocket host for TeleopSim. One io thread runs the fixed-rate tick timer
// and every connection, so the simulation has a single mutator. The first
// connected client drives; later ones observe and are promoted in order.

#include <filesystem>
#include <memory>
#include <optional>

#include "furrow/config.hpp"

namespace furrow {

class TeleopServer {
 public:
  /// Stops by itself after max_ticks ticks when given.
  TeleopServer(const RunConfig& cfg, std::filesystem::path out_dir,
               std::optional<long> max_ticks = std::nullopt);
  ~TeleopServer();
  TeleopServer(const TeleopServer&) = delete;
  TeleopServer& operator=(const TeleopServer&) = delete;

  /// Binds cfg.teleop.host:port (0 picks a free port), starts the io thread
  /// and returns the bound port. Throws RuntimeFailure when binding fails.
  unsigned short start();
  /// Blocks until the server stops.
  void wait();
  void stop();
  long ticks() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace furrow
