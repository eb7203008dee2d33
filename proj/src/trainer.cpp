#include "furrow/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>

#include "json_codec.hpp"

namespace furrow {

// ---------------------------------------------------------------------------
// Normalization

namespace {

void range_to_affine(double lo, double hi, double& center, double& scale,
                     bool& degenerate) {
  center = 0.5 * (lo + hi);
  scale = 0.5 * (hi - lo);
  degenerate = !(scale > 0.0);
  if (degenerate) scale = 1.0;
}

}  // namespace

NormStats compute_norm_stats(const Eigen::MatrixXd& obs,
                             const Eigen::MatrixXd& actions) {
  if (actions.cols() == 0) throw ValidationError("norm stats: no samples");
  NormStats n;
  const char* names[2] = {"v", "omega"};
  for (int d = 0; d < 2; ++d) {
    double lo = INFINITY, hi = -INFINITY;
    for (Eigen::Index r = d; r < actions.rows(); r += 2) {
      lo = std::min(lo, actions.row(r).minCoeff());
      hi = std::max(hi, actions.row(r).maxCoeff());
    }
    bool degenerate = false;
    range_to_affine(lo, hi, n.action_center[d], n.action_scale[d], degenerate);
    if (degenerate)
      n.warnings.push_back(std::string("action dimension '") + names[d] +
                           "' has zero range; scale forced to 1");
  }
  n.obs_center.resize(obs.rows());
  n.obs_scale.resize(obs.rows());
  int degenerate_obs = 0;
  for (Eigen::Index r = 0; r < obs.rows(); ++r) {
    bool degenerate = false;
    range_to_affine(obs.row(r).minCoeff(), obs.row(r).maxCoeff(), n.obs_center[r],
                    n.obs_scale[r], degenerate);
    degenerate_obs += degenerate;
  }
  if (degenerate_obs > 0)
    n.warnings.push_back(std::to_string(degenerate_obs) +
                         " observation dimensions have zero range; scale "
                         "forced to 1");
  return n;
}

Eigen::MatrixXd NormStats::normalize_actions(const Eigen::MatrixXd& flat) const {
  Eigen::MatrixXd out(flat.rows(), flat.cols());
  for (Eigen::Index r = 0; r < flat.rows(); ++r)
    out.row(r) = (flat.row(r).array() - action_center[r % 2]) / action_scale[r % 2];
  return out;
}

Eigen::MatrixXd NormStats::denormalize_actions(const Eigen::MatrixXd& flat) const {
  Eigen::MatrixXd out(flat.rows(), flat.cols());
  for (Eigen::Index r = 0; r < flat.rows(); ++r)
    out.row(r) = flat.row(r).array() * action_scale[r % 2] + action_center[r % 2];
  return out;
}

ActionChunk NormStats::denormalize(const ActionChunk& chunk) const {
  ActionChunk out(chunk.rows(), 2);
  for (Eigen::Index i = 0; i < chunk.rows(); ++i)
    for (int d = 0; d < 2; ++d)
      out(i, d) = chunk(i, d) * action_scale[d] + action_center[d];
  return out;
}

Eigen::VectorXd NormStats::normalize_obs(std::span<const double> obs) const {
  if (static_cast<Eigen::Index>(obs.size()) != obs_center.size())
    throw ValidationError("observation has " + std::to_string(obs.size()) +
                          " entries, normalizer expects " +
                          std::to_string(obs_center.size()));
  Eigen::VectorXd out(obs_center.size());
  for (Eigen::Index i = 0; i < out.size(); ++i)
    out[i] = (obs[static_cast<std::size_t>(i)] - obs_center[i]) / obs_scale[i];
  return out;
}

std::size_t window_count(std::size_t demo_length, int stride) {
  if (stride < 1) throw ValidationError("chunk_stride must be >= 1");
  const auto s = static_cast<std::size_t>(stride);
  return (demo_length + s - 1) / s;
}

ChunkedDataset normalize_dataset(const Dataset& raw, int horizon, int stride) {
  if (raw.demos.empty()) throw ValidationError("dataset is empty");
  if (horizon < 1) throw ValidationError("horizon must be >= 1");
  const std::size_t dim = raw.header.obs_dim;
  std::size_t total = 0;
  for (const auto& d : raw.demos) {
    if (d.steps.empty()) throw ValidationError("demonstration without steps");
    total += window_count(d.steps.size(), stride);
  }

  Eigen::MatrixXd obs(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(total));
  Eigen::MatrixXd act(2 * horizon, static_cast<Eigen::Index>(total));
  Eigen::Index col = 0;
  for (const auto& d : raw.demos) {
    const std::size_t n = d.steps.size();
    for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(stride)) {
      const auto& o = d.steps[start].obs;
      if (o.size() != dim)
        throw ValidationError("observation dimension differs from header");
      obs.col(col) = Eigen::Map<const Eigen::VectorXd>(o.data(), static_cast<Eigen::Index>(dim));
      for (int k = 0; k < horizon; ++k) {
        const auto& a = d.steps[std::min(start + static_cast<std::size_t>(k), n - 1)].act;
        act(2 * k, col) = a.v;
        act(2 * k + 1, col) = a.omega;
      }
      ++col;
    }
  }

  ChunkedDataset out;
  out.header = raw.header;
  out.horizon = horizon;
  out.norm = compute_norm_stats(obs, act);
  out.actions = out.norm.normalize_actions(act);
  out.obs.resize(obs.rows(), obs.cols());
  for (Eigen::Index r = 0; r < obs.rows(); ++r)
    out.obs.row(r) = (obs.row(r).array() - out.norm.obs_center[r]) / out.norm.obs_scale[r];
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

json vec_to_json(const Eigen::VectorXd& v) {
  return std::vector<double>(v.data(), v.data() + v.size());
}

Eigen::VectorXd vec_from_json(const json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

}  // namespace

std::string checkpoint_text(const Checkpoint& c) {
  const auto& L = c.params.layout();
  json layers = json::array();
  const auto w = L.widths();
  for (std::size_t l = 1; l < w.size(); ++l)
    layers.push_back({{"out", w[l]}, {"in", w[l - 1]}});
  json j = {
      {"schema_version", kCheckpointSchemaVersion},
      {"kind", "furrow.checkpoint"},
      {"config_digest", c.config_digest},
      {"layout",
       {{"horizon", L.horizon},
        {"obs_dim", L.obs_dim},
        {"time_dim", L.time_dim},
        {"hidden", L.hidden},
        {"activation", "silu"}}},
      {"layers", layers},
      {"params", vec_to_json(c.params.values())},
      {"norm",
       {{"action_center", vec_to_json(c.norm.action_center)},
        {"action_scale", vec_to_json(c.norm.action_scale)},
        {"obs_center", vec_to_json(c.norm.obs_center)},
        {"obs_scale", vec_to_json(c.norm.obs_scale)}}},
      {"schedule",
       {{"T", c.schedule.T},
        {"beta_min", c.schedule.beta_min},
        {"beta_max", c.schedule.beta_max},
        {"kind", "linear"}}},
      {"observation",
       {{"n_obs", c.n_obs},
        {"obs_dim", L.obs_dim},
        {"rays", rays_to_json(c.rays)},
        {"robot", robot_to_json(c.robot)}}}};
  return j.dump();
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw RuntimeFailure("cannot write " + path.string());
  out << checkpoint_text(ckpt) << '\n';
  if (!out) throw RuntimeFailure("write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open checkpoint " + path.string());
  try {
    const json j = json::parse(in);
    if (j.value("kind", "") != "furrow.checkpoint")
      throw ValidationError("not a checkpoint file");
    if (j.at("schema_version").get<int>() != kCheckpointSchemaVersion)
      throw ValidationError("unsupported checkpoint schema_version");
    DenoiserLayout L;
    const auto& lj = j.at("layout");
    L.horizon = lj.at("horizon").get<int>();
    L.obs_dim = lj.at("obs_dim").get<int>();
    L.time_dim = lj.at("time_dim").get<int>();
    L.hidden = lj.at("hidden").get<std::vector<int>>();
    Checkpoint c;
    c.params = DenoiserParams(L);
    const Eigen::VectorXd theta = vec_from_json(j.at("params"));
    if (theta.size() != c.params.values().size())
      throw ValidationError("parameter count does not match layout");
    c.params.values() = theta;
    const auto& nj = j.at("norm");
    c.norm.action_center = vec_from_json(nj.at("action_center"));
    c.norm.action_scale = vec_from_json(nj.at("action_scale"));
    c.norm.obs_center = vec_from_json(nj.at("obs_center"));
    c.norm.obs_scale = vec_from_json(nj.at("obs_scale"));
    if (c.norm.obs_center.size() != L.obs_dim || c.norm.obs_scale.size() != L.obs_dim)
      throw ValidationError("normalizer size does not match obs_dim");
    const auto& sj = j.at("schedule");
    c.schedule = build_schedule(sj.at("T").get<int>(), sj.at("beta_min").get<double>(),
                                sj.at("beta_max").get<double>());
    const auto& oj = j.at("observation");
    c.n_obs = oj.at("n_obs").get<int>();
    c.rays = rays_from_json(oj.at("rays"));
    c.robot = robot_from_json(oj.at("robot"));
    c.config_digest = j.value("config_digest", "");
    return c;
  } catch (const json::exception& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Optimization

void TrainConfig::validate() const {
  if (epochs < 1) throw ValidationError("training.epochs must be >= 1");
  if (batch_size < 1) throw ValidationError("training.batch_size must be >= 1");
  if (!(learning_rate > 0.0 && learning_rate < 1.0))
    throw ValidationError("training.learning_rate must be in (0, 1)");
  if (!(final_learning_rate > 0.0 && final_learning_rate <= learning_rate))
    throw ValidationError("training.final_learning_rate must be in (0, learning_rate]");
  if (!(ema_decay >= 0.0 && ema_decay < 1.0))
    throw ValidationError("training.ema_decay must be in [0, 1)");
  if (chunk_stride < 1) throw ValidationError("training.chunk_stride must be >= 1");
}

FitResult fit(const ChunkedDataset& data, const DiffusionConfig& model,
              const TrainConfig& cfg,
              const std::function<void(const TrainLogRecord&)>& log) {
  cfg.validate();
  if (data.size() == 0) throw ValidationError("fit: dataset is empty");
  if (data.horizon != model.horizon)
    throw ValidationError("fit: dataset horizon differs from model horizon");

  DenoiserLayout layout;
  layout.horizon = model.horizon;
  layout.obs_dim = static_cast<int>(data.obs.rows());
  layout.time_dim = model.time_dim;
  layout.hidden = model.hidden;

  Checkpoint ckpt;
  ckpt.schedule = build_schedule(model.steps, model.beta_min, model.beta_max);
  ckpt.params = init_denoiser(layout, mix_seed(cfg.seed, 1));
  ckpt.norm = data.norm;
  ckpt.n_obs = data.header.n_obs;
  ckpt.rays = data.header.rays;
  ckpt.robot = data.header.robot;

  DenoiserParams& params = ckpt.params;
  Eigen::VectorXd ema = params.values();
  Eigen::VectorXd m = Eigen::VectorXd::Zero(ema.size());
  Eigen::VectorXd v = Eigen::VectorXd::Zero(ema.size());
  constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;

  const Eigen::Index n = data.size();
  const Eigen::Index bs = std::min<Eigen::Index>(cfg.batch_size, n);
  const long batches_per_epoch = static_cast<long>((n + bs - 1) / bs);
  const long total_steps = batches_per_epoch * cfg.epochs;

  Rng shuffle_rng(mix_seed(cfg.seed, 2));
  Rng noise_rng(mix_seed(cfg.seed, 3));
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});

  FitResult result;
  const auto t0 = std::chrono::steady_clock::now();
  long step = 0;
  Batch batch;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double loss_sum = 0.0;
    double lr = cfg.learning_rate;
    for (long b = 0; b < batches_per_epoch; ++b) {
      const Eigen::Index lo = b * bs;
      const Eigen::Index count = std::min<Eigen::Index>(bs, n - lo);
      batch.obs.resize(data.obs.rows(), count);
      batch.actions.resize(data.actions.rows(), count);
      for (Eigen::Index k = 0; k < count; ++k) {
        const Eigen::Index src = order[static_cast<std::size_t>(lo + k)];
        batch.obs.col(k) = data.obs.col(src);
        batch.actions.col(k) = data.actions.col(src);
      }

      LossAndGrad lg;
      try {
        lg = training_loss(params, batch, ckpt.schedule, noise_rng);
      } catch (const NonFiniteLoss& e) {
        throw RuntimeFailure("non-finite loss at epoch " + std::to_string(epoch) +
                             ", batch " + std::to_string(b) + ", item " +
                             std::to_string(e.item()));
      }
      loss_sum += lg.loss;

      ++step;
      const double progress = static_cast<double>(step - 1) / std::max(1L, total_steps - 1);
      lr = cfg.final_learning_rate +
           0.5 * (cfg.learning_rate - cfg.final_learning_rate) *
               (1.0 + std::cos(std::numbers::pi * progress));
      m = kBeta1 * m + (1.0 - kBeta1) * lg.grad;
      v = kBeta2 * v + (1.0 - kBeta2) * lg.grad.cwiseAbs2();
      const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(step));
      const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(step));
      params.values().array() -=
          lr * (m.array() / c1) / ((v.array() / c2).sqrt() + kEps);

      // Warm-up decay so early averages are not dominated by the init.
      const double decay = std::min(
          cfg.ema_decay, (1.0 + static_cast<double>(step)) / (10.0 + static_cast<double>(step)));
      ema = decay * ema + (1.0 - decay) * params.values();
    }
    const double mean_loss = loss_sum / static_cast<double>(batches_per_epoch);
    result.epoch_loss.push_back(mean_loss);
    if (log) {
      const double wall =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      log({epoch, step, mean_loss, lr, wall});
    }
  }
  params.values() = ema;
  result.checkpoint = std::move(ckpt);
  return result;
}

// ---------------------------------------------------------------------------
// Gradient verification

double max_relative_gradient_error(
    const std::function<double(const Eigen::VectorXd&)>& f,
    const Eigen::VectorXd& x, const Eigen::VectorXd& analytic, double h) {
  if (analytic.size() != x.size())
    throw ValidationError("gradcheck: gradient size mismatch");
  Eigen::VectorXd probe = x;
  double worst = 0.0;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    probe[i] = x[i] + h;
    const double up = f(probe);
    probe[i] = x[i] - h;
    const double down = f(probe);
    probe[i] = x[i];
    const double numeric = (up - down) / (2.0 * h);
    const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-6});
    worst = std::max(worst, std::abs(analytic[i] - numeric) / denom);
  }
  return worst;
}

double finite_diff_gradcheck(const DenoiserParams& params, const Batch& batch,
                             const NoiseSchedule& sched, const NoiseDraw& draw,
                             double h) {
  const auto analytic = loss_and_gradient(params, batch, draw, sched);
  DenoiserParams probe = params;
  return max_relative_gradient_error(
      [&](const Eigen::VectorXd& theta) {
        probe.values() = theta;
        return loss_only(probe, batch, draw, sched);
      },
      params.values(), analytic.grad, h);
}

}  // namespace furrow
