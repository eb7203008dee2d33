#include "furrow/teleop.hpp"

#include <cmath>
#include <cstdio>

#include "furrow/dataset_io.hpp"
#include "json_codec.hpp"

namespace furrow {

std::string error_message(const std::string& what) {
  return json{{"type", "error"}, {"message", what}}.dump();
}

TeleopSim::TeleopSim(const RunConfig& cfg, std::filesystem::path out_dir)
    : cfg_(cfg),
      out_dir_(std::move(out_dir)),
      world_(cfg.world(cfg.teleop.field_seed)),
      history_(cfg.n_obs, cfg.robot) {
  hold_ticks_ = static_cast<int>(std::floor(cfg.teleop.hold_s * cfg.teleop.tick_hz + 1e-9));
  ticks_since_cmd_ = hold_ticks_ + 1;
  state_ = {nominal_start(world_.map, cfg_.demos.start_lane, start_class_), 0.0, 0.0};
  history_.push(world_.perceive(state_));
}

std::string TeleopSim::state_message() const {
  const RayScan scan = cast_rays(world_.map, state_.pose, world_.rays);
  return json{{"type", "state"},
              {"tick", tick_},
              {"pose", {state_.pose.x, state_.pose.y, state_.pose.theta}},
              {"vel", {state_.v, state_.omega}},
              {"scan", scan.distances},
              {"status", check_collision(world_.map, state_.pose, world_.robot).to_string()},
              {"recording", recording_}}
      .dump();
}

std::string TeleopSim::tick() {
  VelocityCommand cmd{};
  // the fresh tick plus at most hold_ticks repeats
  if (ticks_since_cmd_ <= hold_ticks_) cmd = last_cmd_;
  ++ticks_since_cmd_;

  if (recording_) {
    DemoStep step;
    step.obs = history_.observation();
    step.act = cmd;
    step.state = state_;
    step.status = check_collision(world_.map, state_.pose, world_.robot);
    buffer_.steps.push_back(std::move(step));
  }
  state_ = step_dynamics(state_, cmd, world_.robot);
  history_.push(world_.perceive(state_));
  ++tick_;
  return state_message();
}

std::vector<std::string> TeleopSim::handle_message(const std::string& text, bool from_driver) {
  json msg;
  try {
    msg = json::parse(text);
  } catch (const json::parse_error&) {
    return {error_message("message is not valid JSON")};
  }
  if (!msg.is_object() || !msg.contains("type") || !msg["type"].is_string())
    return {error_message("message needs a string 'type'")};
  const std::string type = msg["type"];
  if (!from_driver) return {error_message("only the driver may send '" + type + "'")};

  try {
    if (type == "cmd") {
      const long seq = msg.at("seq").get<long>();
      const double v = msg.at("v").get<double>();
      const double w = msg.at("w").get<double>();
      if (!std::isfinite(v) || !std::isfinite(w)) return {error_message("non-finite command")};
      if (seq <= last_seq_) return {};  // stale or duplicate
      last_seq_ = seq;
      const RobotSpec& r = world_.robot;
      last_cmd_ = {std::clamp(v, -r.v_max, r.v_max), std::clamp(w, -r.omega_max, r.omega_max)};
      ticks_since_cmd_ = 0;
      return {};
    }
    if (type == "record") return handle_record(msg.at("action").get<std::string>());
    if (type == "reset") return reset(msg.at("scenario").get<std::string>());
  } catch (const json::exception& e) {
    return {error_message(std::string("malformed '") + type + "' message: " + e.what())};
  }
  return {error_message("unknown message type '" + type + "'")};
}

void TeleopSim::driver_changed() {
  last_seq_ = -1;
  last_cmd_ = {};
  ticks_since_cmd_ = hold_ticks_ + 1;
}

void TeleopSim::begin_buffer() {
  buffer_ = {};
  buffer_.meta.seed = world_.map.spec().seed;
  buffer_.meta.field = world_.map.spec();
  buffer_.meta.field_digest = field_digest(world_.map.spec());
  buffer_.meta.start = state_;
  buffer_.meta.source = DemoSource::kTeleop;
  buffer_.meta.start_lane = cfg_.demos.start_lane;
  buffer_.meta.target_lane = cfg_.demos.start_lane + 2;
}

std::vector<std::string> TeleopSim::handle_record(const std::string& action) {
  if (action == "start") {
    // restarting after a stop begins afresh so steps stay contiguous
    if (!recording_) {
      begin_buffer();
      recording_ = true;
    }
    return {};
  }
  if (action == "stop") {
    recording_ = false;
    return {};
  }
  if (action == "discard") {
    recording_ = false;
    buffer_ = {};
    return {};
  }
  if (action == "save") {
    if (buffer_.steps.empty()) return {error_message("nothing recorded; save rejected")};
    recording_ = false;
    Dataset ds;
    ds.header.n_obs = cfg_.n_obs;
    ds.header.rays = cfg_.rays;
    ds.header.robot = cfg_.robot;
    ds.header.obs_dim = observation_dim(cfg_.n_obs, cfg_.rays.total_rays());
    ds.header.config_digest = cfg_.digest();
    ds.demos.push_back(std::move(buffer_));
    buffer_ = {};
    std::error_code ec;
    std::filesystem::create_directories(out_dir_, ec);
    std::filesystem::path path;
    do {
      char name[64];
      std::snprintf(name, sizeof name, "teleop_%04d.jsonl", saved_++);
      path = out_dir_ / name;
    } while (std::filesystem::exists(path));
    try {
      write_dataset(path, ds);
    } catch (const std::exception& e) {
      return {error_message(e.what())};
    }
    return {json{{"type", "saved"},
                 {"path", path.string()},
                 {"steps", ds.demos.front().steps.size()}}
                .dump()};
  }
  return {error_message("unknown record action '" + action + "'")};
}

// Scenario names a start class, optionally with a field seed: "before_end@7".
std::vector<std::string> TeleopSim::reset(const std::string& scenario) {
  std::string cls = scenario;
  std::optional<std::uint64_t> seed;
  if (const auto at = scenario.find('@'); at != std::string::npos) {
    cls = scenario.substr(0, at);
    try {
      std::size_t used = 0;
      seed = std::stoull(scenario.substr(at + 1), &used);
      if (used != scenario.size() - at - 1) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      return {error_message("bad field seed in scenario '" + scenario + "'")};
    }
  }
  try {
    start_class_ = parse_start_class(cls);
  } catch (const ValidationError& e) {
    return {error_message(e.what())};
  }
  if (seed) world_ = cfg_.world(*seed);
  state_ = {nominal_start(world_.map, cfg_.demos.start_lane, start_class_), 0.0, 0.0};
  history_.clear();
  history_.push(world_.perceive(state_));
  last_cmd_ = {};
  ticks_since_cmd_ = hold_ticks_ + 1;
  // a recording cannot span a teleport
  recording_ = false;
  buffer_ = {};
  return {};
}

}  // namespace furrow
