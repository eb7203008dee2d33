#include "furrow/dataset_io.hpp"

#include <cmath>
#include <fstream>

#include "json_codec.hpp"

namespace furrow {

namespace {

constexpr const char* kDatasetKind = "furrow.dataset";

json header_to_json(const DatasetHeader& h) {
  return {{"schema_version", h.schema_version},
          {"kind", kDatasetKind},
          {"n_obs", h.n_obs},
          {"obs_dim", h.obs_dim},
          {"rays", rays_to_json(h.rays)},
          {"robot", robot_to_json(h.robot)},
          {"config_digest", h.config_digest}};
}

DatasetHeader header_from_json(const json& j) {
  if (j.value("kind", "") != kDatasetKind)
    throw ValidationError("not a dataset file (kind != furrow.dataset)");
  DatasetHeader h;
  h.schema_version = j.at("schema_version").get<int>();
  if (h.schema_version != kDatasetSchemaVersion)
    throw ValidationError("unsupported dataset schema_version " +
                          std::to_string(h.schema_version));
  h.n_obs = j.at("n_obs").get<int>();
  h.obs_dim = j.at("obs_dim").get<std::size_t>();
  h.rays = rays_from_json(j.at("rays"));
  h.robot = robot_from_json(j.at("robot"));
  h.config_digest = j.value("config_digest", "");
  if (h.obs_dim != observation_dim(h.n_obs, h.rays.total_rays()))
    throw ValidationError("obs_dim inconsistent with n_obs and ray layout");
  return h;
}

json demo_to_json(const Demonstration& d) {
  json steps = json::array();
  for (const auto& s : d.steps) {
    steps.push_back({{"obs", s.obs},
                     {"act", json::array({s.act.v, s.act.omega})},
                     {"state", state_to_json(s.state)},
                     {"status", s.status.to_string()}});
  }
  json meta = {{"seed", d.meta.seed},
               {"field", field_to_json(d.meta.field)},
               {"field_digest", d.meta.field_digest},
               {"start", state_to_json(d.meta.start)},
               {"source", to_string(d.meta.source)},
               {"recovery", d.meta.recovery},
               {"start_lane", d.meta.start_lane},
               {"target_lane", d.meta.target_lane}};
  return {{"meta", std::move(meta)}, {"steps", std::move(steps)}};
}

Demonstration demo_from_json(const json& j, std::size_t obs_dim) {
  Demonstration d;
  const auto& m = j.at("meta");
  d.meta.seed = m.at("seed").get<std::uint64_t>();
  d.meta.field = field_from_json(m.at("field"));
  d.meta.field_digest = m.at("field_digest").get<std::string>();
  d.meta.start = state_from_json(m.at("start"));
  d.meta.source = parse_demo_source(m.at("source").get<std::string>());
  d.meta.recovery = m.at("recovery").get<bool>();
  d.meta.start_lane = m.at("start_lane").get<int>();
  d.meta.target_lane = m.at("target_lane").get<int>();

  const auto& steps = j.at("steps");
  if (!steps.is_array() || steps.empty())
    throw ValidationError("demonstration has no steps");
  d.steps.reserve(steps.size());
  for (const auto& s : steps) {
    DemoStep step;
    step.obs = s.at("obs").get<std::vector<double>>();
    if (step.obs.size() != obs_dim)
      throw ValidationError("observation has " + std::to_string(step.obs.size()) +
                            " entries, header says " + std::to_string(obs_dim));
    const auto& act = s.at("act");
    if (!act.is_array() || act.size() != 2)
      throw ValidationError("act must be [v, w]");
    step.act = {act[0].get<double>(), act[1].get<double>()};
    step.state = state_from_json(s.at("state"));
    step.status = SimStatus::parse(s.at("status").get<std::string>());
    d.steps.push_back(std::move(step));
  }
  return d;
}

}  // namespace

std::string dataset_header_line(const DatasetHeader& header) {
  return header_to_json(header).dump();
}

std::string demonstration_line(const Demonstration& demo) {
  return demo_to_json(demo).dump();
}

void write_dataset(const std::filesystem::path& path, const Dataset& ds) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw RuntimeFailure("cannot write " + path.string());
  DatasetHeader header = ds.header;
  header.schema_version = kDatasetSchemaVersion;
  out << dataset_header_line(header) << '\n';
  for (const auto& d : ds.demos) out << demonstration_line(d) << '\n';
  if (!out) throw RuntimeFailure("write failed for " + path.string());
}

Dataset read_dataset(const std::filesystem::path& path,
                     std::vector<std::string>* warnings) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open dataset " + path.string());

  Dataset ds;
  std::string line;
  std::size_t line_no = 0;
  auto fail = [&](const std::string& what) -> ValidationError {
    return ValidationError(path.string() + ":" + std::to_string(line_no) + ": " +
                           what);
  };
  auto warn = [&](const std::string& what) {
    if (warnings)
      warnings->push_back(path.string() + ":" + std::to_string(line_no) + ": " +
                          what);
  };

  bool have_header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      if (!have_header) {
        ds.header = header_from_json(j);
        have_header = true;
        continue;
      }
      Demonstration d = demo_from_json(j, ds.header.obs_dim);
      const auto& r = ds.header.robot;
      for (const auto& s : d.steps) {
        if (!std::isfinite(s.act.v) || !std::isfinite(s.act.omega))
          throw ValidationError("non-finite action");
        if (std::abs(s.act.v) > r.v_max || std::abs(s.act.omega) > r.omega_max) {
          warn("action outside robot limits");
          break;
        }
      }
      if (!replay_matches(d, r)) warn("recorded states do not replay exactly");
      ds.demos.push_back(std::move(d));
    } catch (const ValidationError& e) {
      throw fail(e.what());
    } catch (const json::exception& e) {
      throw fail(e.what());
    }
  }
  if (!have_header) throw fail("missing header line");
  return ds;
}

Dataset merge_datasets(std::vector<Dataset> parts) {
  if (parts.empty()) throw ValidationError("merge_datasets: nothing to merge");
  Dataset out = std::move(parts.front());
  for (std::size_t i = 1; i < parts.size(); ++i) {
    const auto& h = parts[i].header;
    if (h.obs_dim != out.header.obs_dim || h.n_obs != out.header.n_obs)
      throw ValidationError("merge_datasets: observation layouts differ");
    for (auto& d : parts[i].demos) out.demos.push_back(std::move(d));
  }
  return out;
}

}  // namespace furrow
