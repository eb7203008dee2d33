#pragma once

// Config-driven steps shared by the command-line tool and the acceptance
// runner: collect, train, evaluate.

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "furrow/config.hpp"
#include "furrow/eval.hpp"

namespace furrow {

/// Collects with cfg's field/robot/ray/demo settings, stamping the digest.
Dataset collect_demos(const RunConfig& cfg, std::size_t n, std::uint64_t seed, double mix);

/// Reads and merges dataset files; loader warnings are appended.
Dataset load_datasets(const std::vector<std::filesystem::path>& paths,
                      std::vector<std::string>* warnings = nullptr);

/// Chunks, normalizes and fits; the checkpoint carries cfg's digest.
FitResult train_policy(const RunConfig& cfg, const Dataset& data,
                       const std::function<void(const TrainLogRecord&)>& log = {},
                       std::vector<std::string>* warnings = nullptr);

std::string train_log_line(const TrainLogRecord& r);

using PolicyFactory =
    std::function<std::unique_ptr<Policy>(const World& world, const Scenario& sc)>;

PolicyFactory diffusion_policy_factory(const Checkpoint& ckpt);
PolicyFactory demonstrator_policy_factory(const RunConfig& cfg);

struct EvalRun {
  ScenarioGrid grid;
  std::vector<StalkMap> maps;
  std::vector<RolloutResult> results;
  MetricsReport metrics;
};

/// Rolls out every scenario of cfg.eval; scenario i samples with its own
/// stream derived from eval.sample_seed, so results do not depend on order.
EvalRun evaluate_policy(const RunConfig& cfg, const PolicyFactory& make_policy);

/// All rollouts as demonstration records (source "policy").
Dataset rollouts_as_dataset(const RunConfig& cfg, const EvalRun& run);

}  // namespace furrow
