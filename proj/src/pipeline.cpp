#include "furrow/pipeline.hpp"

#include <cstdio>

#include "furrow/dataset_io.hpp"
#include "json_codec.hpp"

namespace furrow {

Dataset collect_demos(const RunConfig& cfg, std::size_t n, std::uint64_t seed, double mix) {
  if (n == 0) throw ValidationError("--n must be at least 1");
  Dataset ds = collect_dataset(n, seed, mix, cfg.collect_options());
  ds.header.config_digest = cfg.digest();
  return ds;
}

Dataset load_datasets(const std::vector<std::filesystem::path>& paths,
                      std::vector<std::string>* warnings) {
  if (paths.empty()) throw ValidationError("no dataset files given");
  std::vector<Dataset> parts;
  for (const auto& p : paths) parts.push_back(read_dataset(p, warnings));
  return merge_datasets(std::move(parts));
}

FitResult train_policy(const RunConfig& cfg, const Dataset& data,
                       const std::function<void(const TrainLogRecord&)>& log,
                       std::vector<std::string>* warnings) {
  const ChunkedDataset chunks =
      normalize_dataset(data, cfg.diffusion.horizon, cfg.training.chunk_stride);
  if (warnings)
    warnings->insert(warnings->end(), chunks.norm.warnings.begin(), chunks.norm.warnings.end());
  FitResult r = fit(chunks, cfg.diffusion, cfg.training, log);
  r.checkpoint.config_digest = cfg.digest();
  return r;
}

std::string train_log_line(const TrainLogRecord& r) {
  return json{{"epoch", r.epoch},
              {"step", r.step},
              {"loss", r.loss},
              {"lr", r.lr},
              {"wall_time", r.wall_time}}
      .dump();
}

PolicyFactory diffusion_policy_factory(const Checkpoint& ckpt) {
  return [ckpt](const World&, const Scenario&) -> std::unique_ptr<Policy> {
    return std::make_unique<DiffusionPolicy>(ckpt);
  };
}

PolicyFactory demonstrator_policy_factory(const RunConfig& cfg) {
  PursuitParams pp;
  pp.lookahead = cfg.demos.lookahead;
  pp.v_ref = cfg.demos.v_ref;
  const int horizon = cfg.diffusion.horizon;
  return [pp, horizon](const World& w, const Scenario& sc) -> std::unique_ptr<Policy> {
    return std::make_unique<DemonstratorPolicy>(plan_row_skip_path(w.map, sc.start_lane), pp,
                                                w.robot, horizon);
  };
}

EvalRun evaluate_policy(const RunConfig& cfg, const PolicyFactory& make_policy) {
  EvalRun run;
  run.grid = make_scenario_grid(cfg.field, cfg.demos.start_lane, cfg.eval.first_seed,
                                cfg.eval.n_seeds, cfg.eval.classes);
  RolloutOptions opts;
  opts.exec_horizon = cfg.eval.exec_horizon;
  opts.max_steps = cfg.eval.max_steps;
  for (std::size_t i = 0; i < run.grid.scenarios.size(); ++i) {
    const Scenario& sc = run.grid.scenarios[i];
    const World world = cfg.world(sc.field_seed);
    std::unique_ptr<Policy> policy = make_policy(world, sc);
    Rng rng(mix_seed(cfg.eval.sample_seed, i));
    run.results.push_back(rollout(*policy, world, sc.target_lane, sc.start, opts, rng));
    run.maps.push_back(world.map);
  }
  run.metrics = compute_metrics(run.results, run.grid, run.maps);
  return run;
}

Dataset rollouts_as_dataset(const RunConfig& cfg, const EvalRun& run) {
  Dataset ds;
  ds.header.n_obs = cfg.n_obs;
  ds.header.rays = cfg.rays;
  ds.header.robot = cfg.robot;
  ds.header.obs_dim = observation_dim(cfg.n_obs, cfg.rays.total_rays());
  ds.header.config_digest = cfg.digest();
  for (std::size_t i = 0; i < run.results.size(); ++i) {
    if (run.results[i].actions.empty()) continue;  // nothing to replay
    const Scenario& sc = run.grid.scenarios[i];
    World w{run.maps[i], cfg.robot, cfg.rays, cfg.n_obs};
    ds.demos.push_back(rollout_to_demonstration(run.results[i], w, sc.start_lane,
                                                sc.target_lane, sc.field_seed));
  }
  return ds;
}

}  // namespace furrow
