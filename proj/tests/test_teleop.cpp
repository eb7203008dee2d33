#include <gtest/gtest.h>

#include <boost/asio.hpp>
#include <boost/beast.hpp>
#include <boost/beast/websocket.hpp>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <json.hpp>

#include "furrow/dataset_io.hpp"
#include "furrow/pipeline.hpp"
#include "furrow/teleop.hpp"
#include "furrow/teleop_server.hpp"

using namespace furrow;
using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("furrow_teleop_" + name);
  fs::remove_all(p);
  return p;
}

std::string cmd(long seq, double v, double w) {
  return json{{"type", "cmd"}, {"seq", seq}, {"v", v}, {"w", w}}.dump();
}

std::string record(const std::string& action) {
  return json{{"type", "record"}, {"action", action}}.dump();
}

json only_reply(const std::vector<std::string>& replies) {
  EXPECT_EQ(replies.size(), 1u);
  return replies.empty() ? json() : json::parse(replies.front());
}

}  // namespace

TEST(TeleopSim, HoldRepeatsCommandThenStops) {
  RunConfig cfg;  // 20 Hz, 0.5 s hold
  TeleopSim sim(cfg, scratch("hold"));
  ASSERT_EQ(sim.hold_ticks(), 10);
  sim.handle_message(record("start"), true);
  EXPECT_TRUE(sim.handle_message(cmd(1, 0.3, 0.2), true).empty());
  for (int i = 0; i < 14; ++i) sim.tick();
  ASSERT_EQ(sim.recorded_steps(), 14u);
  const json saved = only_reply(sim.handle_message(record("save"), true));
  const Dataset ds = read_dataset(saved["path"].get<std::string>());
  const auto& steps = ds.demos.front().steps;
  for (int i = 0; i < 14; ++i) {
    const bool held = i <= 10;  // fresh tick plus ten repeats
    EXPECT_EQ(steps[i].act.v, held ? 0.3 : 0.0) << i;
    EXPECT_EQ(steps[i].act.omega, held ? 0.2 : 0.0) << i;
  }
}

TEST(TeleopSim, ClampsAndIgnoresStaleSequenceNumbers) {
  RunConfig cfg;
  TeleopSim sim(cfg, scratch("clamp"));
  sim.handle_message(record("start"), true);
  sim.handle_message(cmd(5, 100.0, -100.0), true);
  sim.tick();
  sim.handle_message(cmd(4, 0.1, 0.1), true);  // older than 5
  sim.handle_message(cmd(5, 0.1, 0.1), true);  // duplicate
  sim.tick();
  sim.handle_message(cmd(6, 0.1, 0.1), true);
  sim.tick();
  const json saved = only_reply(sim.handle_message(record("save"), true));
  const Dataset ds = read_dataset(saved["path"].get<std::string>());
  const auto& s = ds.demos.front().steps;
  EXPECT_EQ(s[0].act.v, cfg.robot.v_max);
  EXPECT_EQ(s[0].act.omega, -cfg.robot.omega_max);
  EXPECT_EQ(s[1].act.v, cfg.robot.v_max);
  EXPECT_EQ(s[2].act.v, 0.1);
}

TEST(TeleopSim, EachTickAdvancesOneStepAndRecordsOneStep) {
  RunConfig cfg;
  TeleopSim sim(cfg, scratch("tick"));
  const RobotState s0 = sim.state();
  sim.handle_message(cmd(0, 0.4, 0.0), true);
  const json st = json::parse(sim.tick());
  const RobotState s1 = step_dynamics(s0, {0.4, 0.0}, cfg.robot);
  EXPECT_EQ(st["tick"], 1);
  EXPECT_DOUBLE_EQ(st["pose"][0].get<double>(), s1.pose.x);
  EXPECT_DOUBLE_EQ(st["vel"][0].get<double>(), s1.v);
  EXPECT_EQ(st["scan"].size(), static_cast<std::size_t>(cfg.rays.total_rays()));
  EXPECT_EQ(st["status"], "ok");
  EXPECT_EQ(st["recording"], false);
  EXPECT_EQ(sim.recorded_steps(), 0u);

  sim.handle_message(record("start"), true);
  for (int i = 0; i < 7; ++i) sim.tick();
  EXPECT_EQ(sim.recorded_steps(), 7u);
  sim.handle_message(record("stop"), true);
  sim.tick();
  EXPECT_EQ(sim.recorded_steps(), 7u);
  EXPECT_EQ(sim.tick_count(), 9);
}

TEST(TeleopSim, SaveWithoutStepsIsRejected) {
  const fs::path out = scratch("empty");
  RunConfig cfg;
  TeleopSim sim(cfg, out);
  json r = only_reply(sim.handle_message(record("save"), true));
  EXPECT_EQ(r["type"], "error");
  sim.handle_message(record("start"), true);
  r = only_reply(sim.handle_message(record("save"), true));
  EXPECT_EQ(r["type"], "error");
  EXPECT_FALSE(fs::exists(out) && !fs::is_empty(out));
}

TEST(TeleopSim, DiscardDropsTheBuffer) {
  RunConfig cfg;
  TeleopSim sim(cfg, scratch("discard"));
  sim.handle_message(record("start"), true);
  sim.tick();
  sim.handle_message(record("discard"), true);
  EXPECT_FALSE(sim.recording());
  EXPECT_EQ(sim.recorded_steps(), 0u);
  EXPECT_EQ(only_reply(sim.handle_message(record("save"), true))["type"], "error");
}

TEST(TeleopSim, ObserversAndBadMessagesGetErrors) {
  RunConfig cfg;
  TeleopSim sim(cfg, scratch("errors"));
  EXPECT_EQ(only_reply(sim.handle_message(cmd(1, 0.5, 0.0), false))["type"], "error");
  sim.tick();
  EXPECT_EQ(sim.state().v, 0.0);  // the observer's command was not applied
  for (const char* bad : {"nope", "[]", "{\"type\": 3}", "{\"type\":\"fly\"}",
                          "{\"type\":\"cmd\",\"v\":1}", "{\"type\":\"record\",\"action\":\"pause\"}",
                          "{\"type\":\"reset\",\"scenario\":\"sideways\"}",
                          "{\"type\":\"reset\",\"scenario\":\"before_end@x\"}"})
    EXPECT_EQ(only_reply(sim.handle_message(bad, true))["type"], "error") << bad;
}

TEST(TeleopSim, ResetMovesToScenarioAndDropsRecording) {
  RunConfig cfg;
  TeleopSim sim(cfg, scratch("reset"));
  sim.handle_message(record("start"), true);
  sim.tick();
  EXPECT_TRUE(sim.handle_message(R"({"type":"reset","scenario":"before_end@42"})", true).empty());
  EXPECT_FALSE(sim.recording());
  EXPECT_EQ(sim.recorded_steps(), 0u);
  EXPECT_EQ(sim.world().map.spec().seed, 42u);
  const Pose want = nominal_start(sim.world().map, cfg.demos.start_lane, StartClass::kBeforeEnd);
  EXPECT_EQ(sim.state().pose.x, want.x);
  EXPECT_EQ(sim.state().pose.y, want.y);
  EXPECT_EQ(sim.state().v, 0.0);
}

TEST(TeleopSim, DriverChangeDropsHeldCommandAndSeq) {
  RunConfig cfg;
  TeleopSim sim(cfg, scratch("driver"));
  sim.handle_message(cmd(50, 0.5, 0.0), true);
  sim.driver_changed();
  sim.handle_message(record("start"), true);
  sim.tick();
  sim.handle_message(cmd(0, 0.2, 0.0), true);  // new driver restarts at 0
  sim.tick();
  const json saved = only_reply(sim.handle_message(record("save"), true));
  const auto& s = read_dataset(saved["path"].get<std::string>()).demos.front().steps;
  EXPECT_EQ(s[0].act.v, 0.0);
  EXPECT_EQ(s[1].act.v, 0.2);
}

// A teleop file must be valid training data alongside collected demos.
TEST(TeleopSim, SavedDemoReplaysAndTrains) {
  const fs::path out = scratch("train");
  RunConfig cfg;
  TeleopSim sim(cfg, out);
  sim.handle_message(record("start"), true);
  long seq = 0;
  for (int i = 0; i < 120; ++i) {
    if (i % 4 == 0) sim.handle_message(cmd(seq++, 0.5, 0.3 * std::sin(i * 0.05)), true);
    sim.tick();
  }
  const json saved = only_reply(sim.handle_message(record("save"), true));
  EXPECT_EQ(saved["type"], "saved");
  EXPECT_EQ(saved["steps"], 120);
  EXPECT_EQ(fs::path(saved["path"].get<std::string>()).filename(), "teleop_0000.jsonl");

  std::vector<std::string> warnings;
  const Dataset teleop = read_dataset(saved["path"].get<std::string>(), &warnings);
  EXPECT_TRUE(warnings.empty()) << warnings.front();
  ASSERT_EQ(teleop.demos.size(), 1u);
  EXPECT_EQ(teleop.demos.front().meta.source, DemoSource::kTeleop);
  EXPECT_TRUE(replay_matches(teleop.demos.front(), teleop.header.robot));

  write_dataset(out / "collected.jsonl", collect_demos(cfg, 2, 3, 0.0));
  RunConfig tiny = load_config({}, {"diffusion.hidden=[16]", "diffusion.steps=5", "training.epochs=1"});
  const Dataset both = load_datasets({out / "collected.jsonl", saved["path"].get<std::string>()}, &warnings);
  EXPECT_EQ(both.demos.size(), 3u);
  const FitResult r = train_policy(tiny, both, nullptr, &warnings);
  EXPECT_TRUE(std::isfinite(r.epoch_loss.back()));
}

namespace {

namespace asio = boost::asio;
namespace beast = boost::beast;
namespace ws = beast::websocket;
using tcp = asio::ip::tcp;

struct Client {
  asio::io_context io;
  ws::stream<tcp::socket> s{io};

  explicit Client(unsigned short port) {
    tcp::resolver resolver(io);
    asio::connect(s.next_layer(), resolver.resolve("127.0.0.1", std::to_string(port)));
    s.handshake("127.0.0.1", "/");
  }
  json read() {
    beast::flat_buffer b;
    s.read(b);
    return json::parse(beast::buffers_to_string(b.data()));
  }
  // Reads until a message of the given type arrives.
  json read_type(const std::string& type) {
    for (int i = 0; i < 1000; ++i) {
      json m = read();
      if (m["type"] == type) return m;
    }
    ADD_FAILURE() << "no '" << type << "' message";
    return {};
  }
  void write(const std::string& text) { s.write(asio::buffer(text)); }
};

}  // namespace

TEST(TeleopServer, DriverObserverRecordAndSave) {
  const fs::path out = scratch("server");
  RunConfig cfg = load_config({}, {"teleop.port=0", "teleop.tick_hz=200"});
  TeleopServer server(cfg, out);
  const unsigned short port = server.start();

  Client driver(port);
  EXPECT_EQ(driver.read()["role"], "driver");
  EXPECT_EQ(driver.read()["type"], "state");
  Client observer(port);
  EXPECT_EQ(observer.read_type("role")["role"], "observer");

  observer.write(cmd(0, 0.5, 0.0));
  EXPECT_EQ(observer.read_type("error")["type"], "error");

  driver.write(record("start"));
  long seq = 0;
  long first_tick = -1, last_tick = -1;
  for (int i = 0; i < 40; ++i) {
    driver.write(cmd(seq++, 0.4, 0.1));
    const json st = driver.read_type("state");
    if (first_tick < 0) first_tick = st["tick"];
    EXPECT_GE(st["tick"].get<long>(), last_tick);
    last_tick = st["tick"];
  }
  const json obs_state = observer.read_type("state");
  EXPECT_EQ(obs_state["scan"].size(), static_cast<std::size_t>(cfg.rays.total_rays()));

  driver.write(record("save"));
  const json saved = driver.read_type("saved");
  ASSERT_TRUE(saved.contains("path"));
  EXPECT_GT(saved["steps"].get<long>(), 0);
  std::vector<std::string> warnings;
  const Dataset ds = read_dataset(saved["path"].get<std::string>(), &warnings);
  EXPECT_TRUE(warnings.empty());
  EXPECT_EQ(ds.demos.front().steps.size(), saved["steps"].get<std::size_t>());
  EXPECT_TRUE(replay_matches(ds.demos.front(), ds.header.robot));

  // the observer takes over when the driver leaves
  driver.s.close(ws::close_code::normal);
  EXPECT_EQ(observer.read_type("role")["role"], "driver");

  server.stop();
  server.wait();
  EXPECT_GT(server.ticks(), 0);
}

TEST(TeleopServer, StopsAfterMaxTicksAndAnswersPlainHttp) {
  RunConfig cfg = load_config({}, {"teleop.port=0", "teleop.tick_hz=500"});
  TeleopServer server(cfg, scratch("maxticks"), 50);
  const unsigned short port = server.start();
  {
    asio::io_context io;
    tcp::socket sock(io);
    asio::connect(sock, tcp::resolver(io).resolve("127.0.0.1", std::to_string(port)));
    beast::http::request<beast::http::empty_body> req{beast::http::verb::get, "/", 11};
    beast::http::write(sock, req);
    beast::flat_buffer b;
    beast::http::response<beast::http::string_body> res;
    beast::http::read(sock, b, res);
    EXPECT_EQ(res.result_int(), 200);
  }
  const auto t0 = std::chrono::steady_clock::now();
  server.wait();
  EXPECT_EQ(server.ticks(), 50);
  EXPECT_LT(std::chrono::steady_clock::now() - t0, std::chrono::seconds(5));
}

TEST(TeleopServer, BindFailureIsReported) {
  RunConfig cfg = load_config({}, {"teleop.port=0"});
  TeleopServer a(cfg, scratch("bind_a"));
  const unsigned short port = a.start();
  RunConfig taken = load_config({}, {"teleop.port=" + std::to_string(port)});
  TeleopServer b(taken, scratch("bind_b"));
  EXPECT_THROW(b.start(), RuntimeFailure);
  RunConfig bad = load_config({}, {"teleop.host=\"not-an-ip\"", "teleop.port=0"});
  TeleopServer c(bad, scratch("bind_c"));
  EXPECT_THROW(c.start(), ValidationError);
}
