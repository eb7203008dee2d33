#include "furrow/config.hpp"

#include <fstream>
#include <sstream>

#include "furrow/digest.hpp"
#include "json_codec.hpp"

namespace furrow {

namespace {

json to_tree(const RunConfig& c) {
  json classes = json::array();
  for (auto k : c.eval.classes) classes.push_back(to_string(k));
  return {
      {"field", field_to_json(c.field)},
      {"robot", robot_to_json(c.robot)},
      {"rays", rays_to_json(c.rays)},
      {"observation", {{"n_obs", c.n_obs}}},
      {"demos",
       {{"start_lane", c.demos.start_lane},
        {"mix", c.demos.mix},
        {"recovery_steps", c.demos.recovery_steps},
        {"jitter_longitudinal", c.demos.jitter_longitudinal},
        {"jitter_lateral", c.demos.jitter_lateral},
        {"jitter_heading_deg", c.demos.jitter_heading_deg},
        {"lookahead", c.demos.lookahead},
        {"v_ref", c.demos.v_ref},
        {"timeout_s", c.demos.timeout_s}}},
      {"diffusion",
       {{"steps", c.diffusion.steps},
        {"beta_min", c.diffusion.beta_min},
        {"beta_max", c.diffusion.beta_max},
        {"horizon", c.diffusion.horizon},
        {"hidden", c.diffusion.hidden},
        {"time_dim", c.diffusion.time_dim}}},
      {"training",
       {{"epochs", c.training.epochs},
        {"batch_size", c.training.batch_size},
        {"learning_rate", c.training.learning_rate},
        {"final_learning_rate", c.training.final_learning_rate},
        {"seed", c.training.seed},
        {"ema_decay", c.training.ema_decay},
        {"chunk_stride", c.training.chunk_stride}}},
      {"eval",
       {{"exec_horizon", c.eval.exec_horizon},
        {"max_steps", c.eval.max_steps},
        {"n_seeds", c.eval.n_seeds},
        {"first_seed", c.eval.first_seed},
        {"classes", classes},
        {"sample_seed", c.eval.sample_seed}}},
      {"teleop",
       {{"host", c.teleop.host},
        {"port", c.teleop.port},
        {"tick_hz", c.teleop.tick_hz},
        {"hold_s", c.teleop.hold_s},
        {"out_dir", c.teleop.out_dir},
        {"field_seed", c.teleop.field_seed}}},
  };
}

RunConfig from_tree(const json& t) {
  RunConfig c;
  c.field = field_from_json(t.at("field"));
  c.robot = robot_from_json(t.at("robot"));
  c.rays = rays_from_json(t.at("rays"));
  c.n_obs = t.at("observation").at("n_obs").get<int>();

  const json& d = t.at("demos");
  c.demos.start_lane = d.at("start_lane").get<int>();
  c.demos.mix = d.at("mix").get<double>();
  c.demos.recovery_steps = d.at("recovery_steps").get<int>();
  c.demos.jitter_longitudinal = d.at("jitter_longitudinal").get<double>();
  c.demos.jitter_lateral = d.at("jitter_lateral").get<double>();
  c.demos.jitter_heading_deg = d.at("jitter_heading_deg").get<double>();
  c.demos.lookahead = d.at("lookahead").get<double>();
  c.demos.v_ref = d.at("v_ref").get<double>();
  c.demos.timeout_s = d.at("timeout_s").get<double>();

  const json& m = t.at("diffusion");
  c.diffusion.steps = m.at("steps").get<int>();
  c.diffusion.beta_min = m.at("beta_min").get<double>();
  c.diffusion.beta_max = m.at("beta_max").get<double>();
  c.diffusion.horizon = m.at("horizon").get<int>();
  c.diffusion.hidden = m.at("hidden").get<std::vector<int>>();
  c.diffusion.time_dim = m.at("time_dim").get<int>();

  const json& tr = t.at("training");
  c.training.epochs = tr.at("epochs").get<int>();
  c.training.batch_size = tr.at("batch_size").get<int>();
  c.training.learning_rate = tr.at("learning_rate").get<double>();
  c.training.final_learning_rate = tr.at("final_learning_rate").get<double>();
  c.training.seed = tr.at("seed").get<std::uint64_t>();
  c.training.ema_decay = tr.at("ema_decay").get<double>();
  c.training.chunk_stride = tr.at("chunk_stride").get<int>();

  const json& e = t.at("eval");
  c.eval.exec_horizon = e.at("exec_horizon").get<int>();
  c.eval.max_steps = e.at("max_steps").get<int>();
  c.eval.n_seeds = e.at("n_seeds").get<int>();
  c.eval.first_seed = e.at("first_seed").get<std::uint64_t>();
  c.eval.classes.clear();
  for (const auto& k : e.at("classes")) c.eval.classes.push_back(parse_start_class(k.get<std::string>()));
  c.eval.sample_seed = e.at("sample_seed").get<std::uint64_t>();

  const json& p = t.at("teleop");
  c.teleop.host = p.at("host").get<std::string>();
  c.teleop.port = p.at("port").get<int>();
  c.teleop.tick_hz = p.at("tick_hz").get<double>();
  c.teleop.hold_s = p.at("hold_s").get<double>();
  c.teleop.out_dir = p.at("out_dir").get<std::string>();
  c.teleop.field_seed = p.at("field_seed").get<std::uint64_t>();
  return c;
}

// Objects merge key by key; anything else replaces. Keys must already exist.
void merge_into(json& base, const json& patch, const std::string& where) {
  if (!patch.is_object()) {
    base = patch;
    return;
  }
  if (!base.is_object())
    throw ValidationError("config key '" + where + "' is not a section");
  for (auto it = patch.begin(); it != patch.end(); ++it) {
    const std::string key = where.empty() ? it.key() : where + "." + it.key();
    if (!base.contains(it.key())) throw ValidationError("unknown config key '" + key + "'");
    merge_into(base[it.key()], it.value(), key);
  }
}

json parse_override_value(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::parse_error&) {
    return text;
  }
}

RunConfig finish(const json& tree) {
  RunConfig c;
  try {
    c = from_tree(tree);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("config: ") + e.what());
  }
  c.validate();
  return c;
}

}  // namespace

std::string RunConfig::to_text() const { return to_tree(*this).dump(2) + "\n"; }

std::string RunConfig::digest() const { return content_digest(to_text()); }

void RunConfig::validate() const {
  field.validate();
  robot.validate();
  rays.validate();
  training.validate();
  if (n_obs < 1) throw ValidationError("observation.n_obs must be >= 1");
  if (demos.start_lane < 0 || demos.start_lane + 2 >= field.num_rows - 1)
    throw ValidationError("demos.start_lane must leave a lane two to its left");
  if (!(demos.mix >= 0.0 && demos.mix <= 1.0))
    throw ValidationError("demos.mix must be in [0, 1]");
  if (demos.recovery_steps < 1) throw ValidationError("demos.recovery_steps must be >= 1");
  if (!(demos.v_ref > 0.0 && demos.v_ref <= robot.v_max))
    throw ValidationError("demos.v_ref must be in (0, robot.v_max]");
  if (!(demos.lookahead > 0.0)) throw ValidationError("demos.lookahead must be positive");
  if (!(demos.timeout_s > 0.0)) throw ValidationError("demos.timeout_s must be positive");
  if (diffusion.steps < 1) throw ValidationError("diffusion.steps must be >= 1");
  if (diffusion.horizon < 1) throw ValidationError("diffusion.horizon must be >= 1");
  if (diffusion.time_dim < 2 || diffusion.time_dim % 2)
    throw ValidationError("diffusion.time_dim must be an even number >= 2");
  for (int h : diffusion.hidden)
    if (h < 1) throw ValidationError("diffusion.hidden widths must be >= 1");
  if (!(diffusion.beta_min > 0.0 && diffusion.beta_min <= diffusion.beta_max &&
        diffusion.beta_max < 1.0))
    throw ValidationError("diffusion betas must satisfy 0 < beta_min <= beta_max < 1");
  if (eval.exec_horizon < 1 || eval.exec_horizon > diffusion.horizon)
    throw ValidationError("eval.exec_horizon must be in [1, diffusion.horizon]");
  if (eval.max_steps < 1) throw ValidationError("eval.max_steps must be >= 1");
  if (eval.n_seeds < 1) throw ValidationError("eval.n_seeds must be >= 1");
  if (eval.classes.empty()) throw ValidationError("eval.classes must not be empty");
  if (teleop.port < 0 || teleop.port > 65535)
    throw ValidationError("teleop.port must be in [0, 65535]");
  if (!(teleop.tick_hz > 0.0)) throw ValidationError("teleop.tick_hz must be positive");
  if (!(teleop.hold_s >= 0.0)) throw ValidationError("teleop.hold_s must be >= 0");
}

CollectOptions RunConfig::collect_options() const {
  CollectOptions o;
  o.field = field;
  o.robot = robot;
  o.rays = rays;
  o.n_obs = n_obs;
  o.start_lane = demos.start_lane;
  o.jitter_longitudinal = demos.jitter_longitudinal;
  o.jitter_lateral = demos.jitter_lateral;
  o.jitter_heading_deg = demos.jitter_heading_deg;
  o.recovery_steps = demos.recovery_steps;
  o.demo.pursuit.lookahead = demos.lookahead;
  o.demo.pursuit.v_ref = demos.v_ref;
  o.demo.timeout_s = demos.timeout_s;
  return o;
}

World RunConfig::world(std::uint64_t field_seed) const {
  FieldSpec f = field;
  f.seed = field_seed;
  return World{generate_field(f), robot, rays, n_obs};
}

RunConfig config_from_text(const std::string& text) {
  json tree = to_tree(RunConfig{});
  json patch;
  try {
    patch = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ValidationError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!patch.is_object()) throw ValidationError("config must be a JSON object");
  merge_into(tree, patch, "");
  return finish(tree);
}

RunConfig load_config(const std::filesystem::path& file,
                      const std::vector<std::string>& overrides) {
  json tree = to_tree(RunConfig{});
  if (!file.empty()) {
    std::ifstream in(file);
    if (!in) throw ValidationError("cannot read config file " + file.string());
    std::ostringstream s;
    s << in.rdbuf();
    json patch;
    try {
      patch = json::parse(s.str());
    } catch (const json::parse_error& e) {
      throw ValidationError(file.string() + ": not valid JSON: " + e.what());
    }
    if (!patch.is_object()) throw ValidationError(file.string() + ": must hold a JSON object");
    merge_into(tree, patch, "");
  }
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos || eq == 0)
      throw ValidationError("override '" + o + "' must look like key=value");
    const std::string key = o.substr(0, eq);
    json patch = parse_override_value(o.substr(eq + 1));
    // build {"a":{"b":value}} from "a.b"
    std::vector<std::string> parts;
    std::stringstream ks(key);
    for (std::string p; std::getline(ks, p, '.');) parts.push_back(p);
    for (auto it = parts.rbegin(); it != parts.rend(); ++it) patch = json{{*it, patch}};
    merge_into(tree, patch, "");
  }
  return finish(tree);
}

}  // namespace furrow
