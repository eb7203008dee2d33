#pragma once

// nlohmann/json adapters for the value types that appear in files.

#include <json.hpp>

#include "furrow/demonstrator.hpp"
#include "furrow/error.hpp"

namespace furrow {

using json = nlohmann::json;

inline json state_to_json(const RobotState& s) {
  return json::array({s.pose.x, s.pose.y, s.pose.theta, s.v, s.omega});
}

inline RobotState state_from_json(const json& j) {
  if (!j.is_array() || j.size() != 5)
    throw ValidationError("state must be [x, y, theta, v, omega]");
  return {{j[0].get<double>(), j[1].get<double>(), j[2].get<double>()},
          j[3].get<double>(),
          j[4].get<double>()};
}

inline json field_to_json(const FieldSpec& f) {
  return {{"num_rows", f.num_rows},         {"row_pitch", f.row_pitch},
          {"row_length", f.row_length},     {"stalk_spacing", f.stalk_spacing},
          {"stalk_radius", f.stalk_radius}, {"jitter_sigma", f.jitter_sigma},
          {"missing_prob", f.missing_prob}, {"seed", f.seed}};
}

inline FieldSpec field_from_json(const json& j) {
  FieldSpec f;
  f.num_rows = j.at("num_rows").get<int>();
  f.row_pitch = j.at("row_pitch").get<double>();
  f.row_length = j.at("row_length").get<double>();
  f.stalk_spacing = j.at("stalk_spacing").get<double>();
  f.stalk_radius = j.at("stalk_radius").get<double>();
  f.jitter_sigma = j.at("jitter_sigma").get<double>();
  f.missing_prob = j.at("missing_prob").get<double>();
  f.seed = j.at("seed").get<std::uint64_t>();
  return f;
}

inline json robot_to_json(const RobotSpec& r) {
  return {{"collision_radius", r.collision_radius},
          {"v_max", r.v_max},
          {"omega_max", r.omega_max},
          {"accel_max", r.accel_max},
          {"alpha_max", r.alpha_max},
          {"dt", r.dt}};
}

inline RobotSpec robot_from_json(const json& j) {
  RobotSpec r;
  r.collision_radius = j.at("collision_radius").get<double>();
  r.v_max = j.at("v_max").get<double>();
  r.omega_max = j.at("omega_max").get<double>();
  r.accel_max = j.at("accel_max").get<double>();
  r.alpha_max = j.at("alpha_max").get<double>();
  r.dt = j.at("dt").get<double>();
  return r;
}

inline json rays_to_json(const RayScanConfig& c) {
  json heads = json::array();
  for (const auto& h : c.heads)
    heads.push_back({{"mount_angle", h.mount_angle},
                     {"fan_halfwidth", h.fan_halfwidth},
                     {"n_rays", h.n_rays}});
  return {{"heads", heads}, {"max_range", c.max_range}};
}

inline RayScanConfig rays_from_json(const json& j) {
  RayScanConfig c;
  const auto& heads = j.at("heads");
  if (!heads.is_array() || heads.size() != c.heads.size())
    throw ValidationError("rays.heads must list exactly 3 heads");
  for (std::size_t i = 0; i < c.heads.size(); ++i) {
    c.heads[i].mount_angle = heads[i].at("mount_angle").get<double>();
    c.heads[i].fan_halfwidth = heads[i].at("fan_halfwidth").get<double>();
    c.heads[i].n_rays = heads[i].at("n_rays").get<int>();
  }
  c.max_range = j.at("max_range").get<double>();
  return c;
}

}  // namespace furrow
