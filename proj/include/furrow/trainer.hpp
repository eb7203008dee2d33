#pragma once

// Dataset chunking and normalization, the optimization loop, self-describing
// checkpoints and finite-difference gradient verification.

#include <Eigen/Core>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "furrow/demonstrator.hpp"
#include "furrow/diffusion.hpp"

namespace furrow {

/// Per-dimension affine map of the dataset's [min, max] onto [-1, 1]:
/// normalized = (x - center) / scale. Zero-range dimensions get scale 1.
struct NormStats {
  Eigen::Vector2d action_center = Eigen::Vector2d::Zero();
  Eigen::Vector2d action_scale = Eigen::Vector2d::Ones();
  Eigen::VectorXd obs_center;
  Eigen::VectorXd obs_scale;
  std::vector<std::string> warnings;  // one per degenerate dimension

  /// Flattened chunks (2H x N, rows alternate v and omega).
  Eigen::MatrixXd normalize_actions(const Eigen::MatrixXd& flat) const;
  Eigen::MatrixXd denormalize_actions(const Eigen::MatrixXd& flat) const;
  ActionChunk denormalize(const ActionChunk& chunk) const;
  Eigen::VectorXd normalize_obs(std::span<const double> obs) const;
};

NormStats compute_norm_stats(const Eigen::MatrixXd& obs,
                             const Eigen::MatrixXd& actions);

struct DiffusionConfig {
  int steps = 50;  // T
  double beta_min = 1e-4;
  // 0.02 would leave alpha_bar(T) near 0.6 at T = 50, far from the N(0, I)
  // the sampler starts from.
  double beta_max = 0.2;
  int horizon = 16;
  std::vector<int> hidden{256, 256, 256};
  int time_dim = 16;
};

struct TrainConfig {
  int epochs = 500;
  int batch_size = 64;
  double learning_rate = 1e-3;
  double final_learning_rate = 1e-5;
  std::uint64_t seed = 0;
  double ema_decay = 0.995;
  int chunk_stride = 4;

  void validate() const;
};

/// Sliding-window training pairs with normalized observations and chunks.
struct ChunkedDataset {
  DatasetHeader header;
  int horizon = 0;
  Eigen::MatrixXd obs;      // d_obs x N, normalized
  Eigen::MatrixXd actions;  // 2H x N, normalized
  NormStats norm;

  Eigen::Index size() const { return actions.cols(); }
};

/// Windows start at 0, stride, 2 * stride, ... while inside the demo; a
/// window running past the end repeats the demo's final action.
std::size_t window_count(std::size_t demo_length, int stride);

ChunkedDataset normalize_dataset(const Dataset& raw, int horizon, int stride);

struct Checkpoint {
  DenoiserParams params;
  NormStats norm;
  NoiseSchedule schedule;
  int n_obs = 0;
  RayScanConfig rays;
  RobotSpec robot;
  std::string config_digest;

  int horizon() const { return params.layout().horizon; }
  int obs_dim() const { return params.layout().obs_dim; }
};

inline constexpr int kCheckpointSchemaVersion = 1;

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);
std::string checkpoint_text(const Checkpoint& ckpt);

struct TrainLogRecord {
  int epoch = 0;
  long step = 0;
  double loss = 0.0;
  double lr = 0.0;
  double wall_time = 0.0;
};

struct FitResult {
  Checkpoint checkpoint;
  std::vector<double> epoch_loss;
};

/// Adam with cosine learning-rate decay over seeded shuffled mini-batches;
/// the checkpoint holds an exponential moving average of the parameters.
/// Deterministic for a fixed seed.
FitResult fit(const ChunkedDataset& data, const DiffusionConfig& model,
              const TrainConfig& cfg,
              const std::function<void(const TrainLogRecord&)>& log = {});

/// Worst |analytic - numeric| / max(|analytic|, |numeric|, 1e-6) over all
/// coordinates, using central differences of f with step h.
double max_relative_gradient_error(
    const std::function<double(const Eigen::VectorXd&)>& f,
    const Eigen::VectorXd& x, const Eigen::VectorXd& analytic, double h);

/// Checks loss_and_gradient against central differences at a fixed draw.
double finite_diff_gradcheck(const DenoiserParams& params, const Batch& batch,
                             const NoiseSchedule& sched, const NoiseDraw& draw,
                             double h);

}  // namespace furrow
