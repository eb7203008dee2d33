#include "furrow/cli.hpp"

#include <CLI11.hpp>
#include <fstream>
#include <iostream>
#include <json.hpp>

#include "furrow/dataset_io.hpp"
#include "furrow/error.hpp"
#include "furrow/pipeline.hpp"
#include "furrow/teleop_server.hpp"

namespace furrow {

namespace {

using json = nlohmann::json;

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw RuntimeFailure("cannot write " + path.string());
  out << text;
  if (!out) throw RuntimeFailure("failed writing " + path.string());
}

std::string field_text(const StalkMap& map, const std::string& digest) {
  const FieldSpec& f = map.spec();
  json stalks = json::array();
  for (const auto& s : map.stalks())
    stalks.push_back({s.center.x, s.center.y, s.radius, s.row_index});
  const Bounds& b = map.bounds();
  return json{{"kind", "furrow.field"},
              {"schema_version", 1},
              {"config_digest", digest},
              {"field",
               {{"num_rows", f.num_rows},
                {"row_pitch", f.row_pitch},
                {"row_length", f.row_length},
                {"stalk_spacing", f.stalk_spacing},
                {"stalk_radius", f.stalk_radius},
                {"jitter_sigma", f.jitter_sigma},
                {"missing_prob", f.missing_prob},
                {"seed", f.seed}}},
              {"field_digest", field_digest(f)},
              {"bounds", {b.min_x, b.min_y, b.max_x, b.max_y}},
              {"stalks", stalks}}
             .dump() +
         "\n";
}

// Tracks of dataset-format trajectories, each closed with the state its
// last action leads to.
std::vector<std::vector<Pose>> tracks_of(const Dataset& ds, std::size_t limit) {
  std::vector<std::vector<Pose>> tracks;
  for (const auto& d : ds.demos) {
    if (tracks.size() >= limit) break;
    std::vector<Pose> t;
    for (const auto& s : d.steps) t.push_back(s.state.pose);
    t.push_back(step_dynamics(d.steps.back().state, d.steps.back().act, ds.header.robot).pose);
    tracks.push_back(std::move(t));
  }
  return tracks;
}

struct Options {
  std::string config;
  std::vector<std::string> overrides;

  std::uint64_t seed = 0;
  bool seed_set = false;
  std::size_t n = 0;
  double mix = -1.0;
  std::string out, log, report, trajectories, plot, checkpoint;
  std::vector<std::string> data;
  bool demonstrator = false;
  std::size_t limit = 0;

  std::string host;
  int port = -1;
  double tick_hz = 0.0;
  std::string out_dir;
  long max_ticks = 0;
};

}  // namespace

int run_command(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"furrow: diffusion-policy workbench for the row-skip headland turn", "furrow"};
  app.require_subcommand(1);
  app.fallthrough();
  Options o;
  app.add_option("--config", o.config, "JSON config file merged over the defaults");
  app.add_option("--set", o.overrides, "override a config key, e.g. --set training.epochs=50")
      ->take_all();

  auto* field = app.add_subcommand("field", "procedural fields")->require_subcommand(1);
  auto* field_gen = field->add_subcommand("gen", "generate a field and write it as JSON");
  field_gen->add_option("--seed", o.seed, "field seed (default: field.seed)");
  field_gen->add_option("--out", o.out, "output file")->required();

  auto* demos = app.add_subcommand("demos", "demonstrations")->require_subcommand(1);
  auto* collect = demos->add_subcommand("collect", "collect privileged demonstrations");
  collect->add_option("--n", o.n, "number of demonstrations")->required();
  collect->add_option("--seed", o.seed, "base seed");
  collect->add_option("--mix", o.mix, "fraction with recovery perturbations (default: demos.mix)");
  collect->add_option("--out", o.out, "output dataset file")->required();

  auto* train = app.add_subcommand("train", "fit a diffusion policy");
  train->add_option("--data", o.data, "dataset file(s)")->required()->take_all();
  train->add_option("--out", o.out, "checkpoint file")->required();
  train->add_option("--log", o.log, "training log (one JSON record per epoch)");

  auto* eval = app.add_subcommand("eval", "closed-loop evaluation over the scenario grid");
  auto* ck = eval->add_option("--checkpoint", o.checkpoint, "trained checkpoint");
  auto* dm = eval->add_flag("--demonstrator", o.demonstrator, "evaluate the privileged expert");
  ck->excludes(dm);
  eval->add_option("--out", o.out, "metrics record (JSON)")->required();
  eval->add_option("--report", o.report, "text report (default: printed)");
  eval->add_option("--trajectories", o.trajectories, "rollouts in dataset format");
  eval->add_option("--plot", o.plot, "bird's-eye SVG of all rollouts");

  auto* plot = app.add_subcommand("plot", "bird's-eye SVG of dataset-format trajectories");
  plot->add_option("--trajectories", o.trajectories, "dataset or rollout file")->required();
  plot->add_option("--out", o.out, "SVG file")->required();
  plot->add_option("--limit", o.limit, "plot at most this many trajectories");

  auto* teleop = app.add_subcommand("teleop", "human teleoperation")->require_subcommand(1);
  auto* serve = teleop->add_subcommand("serve", "run the WebSocket teleop server");
  serve->add_option("--host", o.host, "bind address (default: teleop.host)");
  serve->add_option("--port", o.port, "port, 0 for any (default: teleop.port)");
  serve->add_option("--tick-hz", o.tick_hz, "simulation tick rate (default: teleop.tick_hz)");
  serve->add_option("--out-dir", o.out_dir, "where saved demonstrations go");
  serve->add_option("--max-ticks", o.max_ticks, "exit after this many ticks");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      out << app.help();
      return kExitOk;
    }
    err << "error: " << e.what() << "\n\n" << app.help();
    return kExitValidation;
  }

  try {
    const RunConfig cfg = load_config(o.config, o.overrides);
    const std::string digest = cfg.digest();

    if (field_gen->parsed()) {
      FieldSpec spec = cfg.field;
      if (field_gen->count("--seed")) spec.seed = o.seed;
      write_text(o.out, field_text(generate_field(spec), digest));
      out << "wrote field " << o.out << "\n";
    } else if (collect->parsed()) {
      const double mix = collect->count("--mix") ? o.mix : cfg.demos.mix;
      const Dataset ds = collect_demos(cfg, o.n, o.seed, mix);
      write_dataset(o.out, ds);
      std::size_t rec = 0;
      for (const auto& d : ds.demos) rec += d.meta.recovery;
      out << "wrote " << ds.demos.size() << " demonstrations (" << rec << " recovery) to "
          << o.out << "\n";
    } else if (train->parsed()) {
      std::vector<std::string> warnings;
      std::vector<std::filesystem::path> paths(o.data.begin(), o.data.end());
      const Dataset ds = load_datasets(paths, &warnings);
      std::ofstream log;
      if (!o.log.empty()) {
        log.open(o.log, std::ios::binary);
        if (!log) throw RuntimeFailure("cannot write " + o.log);
      }
      const FitResult r = train_policy(
          cfg, ds,
          [&](const TrainLogRecord& rec) {
            if (log.is_open()) log << train_log_line(rec) << "\n" << std::flush;
          },
          &warnings);
      for (const auto& w : warnings) err << "warning: " << w << "\n";
      save_checkpoint(o.out, r.checkpoint);
      out << "trained " << r.epoch_loss.size() << " epochs, final loss " << r.epoch_loss.back()
          << ", wrote " << o.out << "\n";
    } else if (eval->parsed()) {
      if (o.checkpoint.empty() && !o.demonstrator)
        throw ValidationError("eval needs --checkpoint or --demonstrator");
      PolicyFactory factory;
      if (o.demonstrator) {
        factory = demonstrator_policy_factory(cfg);
      } else {
        const Checkpoint ckpt = load_checkpoint(o.checkpoint);
        const std::size_t dim = observation_dim(cfg.n_obs, cfg.rays.total_rays());
        if (static_cast<std::size_t>(ckpt.obs_dim()) != dim)
          throw ValidationError("checkpoint expects observation dimension " +
                                std::to_string(ckpt.obs_dim()) + " but the config gives " +
                                std::to_string(dim));
        if (cfg.eval.exec_horizon > ckpt.horizon())
          throw ValidationError("eval.exec_horizon exceeds the checkpoint's horizon");
        factory = diffusion_policy_factory(ckpt);
      }
      const EvalRun run = evaluate_policy(cfg, factory);
      write_text(o.out, metrics_json(run.metrics, digest));
      const std::string text = metrics_text(run.metrics);
      if (o.report.empty())
        out << text;
      else
        write_text(o.report, text);
      if (!o.trajectories.empty()) write_dataset(o.trajectories, rollouts_as_dataset(cfg, run));
      if (!o.plot.empty()) {
        std::vector<std::vector<Pose>> tracks;
        for (const auto& r : run.results) tracks.push_back(track_of(r));
        export_birdseye(tracks, run.maps.front(), o.plot, digest);
      }
    } else if (plot->parsed()) {
      const Dataset ds = read_dataset(o.trajectories);
      const std::size_t limit = o.limit ? o.limit : ds.demos.size();
      const StalkMap map = generate_field(ds.demos.front().meta.field);
      export_birdseye(tracks_of(ds, limit), map, o.out, digest);
      out << "wrote " << o.out << "\n";
    } else if (serve->parsed()) {
      RunConfig c = cfg;
      if (!o.host.empty()) c.teleop.host = o.host;
      if (o.port >= 0) c.teleop.port = o.port;
      if (o.tick_hz > 0.0) c.teleop.tick_hz = o.tick_hz;
      if (!o.out_dir.empty()) c.teleop.out_dir = o.out_dir;
      c.validate();
      TeleopServer server(c, c.teleop.out_dir,
                          o.max_ticks > 0 ? std::optional<long>(o.max_ticks) : std::nullopt);
      const unsigned short port = server.start();
      out << "teleop server listening on ws://" << c.teleop.host << ":" << port << " at "
          << c.teleop.tick_hz << " Hz" << std::endl;
      server.wait();
    }
    return kExitOk;
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    err << "failed: " << e.what() << "\n";
    return kExitRuntime;
  }
}

}  // namespace furrow
