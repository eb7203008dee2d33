#pragma once

// Conditional DDPM over action chunks with an epsilon-predicting MLP.
//
// Timesteps are 1-based throughout (t = 1..T); schedule arrays are stored
// 0-based, so beta(t) reads beta[t - 1].

#include <Eigen/Core>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <numbers>
#include <span>
#include <vector>

#include "furrow/error.hpp"
#include "furrow/random.hpp"

namespace furrow {

/// H x 2 chunk of (v, omega) rows in normalized units. Row-major, so
/// data() is the flattened (v0, w0, v1, w1, ...) sequence.
using ActionChunk = Eigen::Matrix<double, Eigen::Dynamic, 2, Eigen::RowMajor>;

struct NoiseSchedule {
  int T = 0;
  double beta_min = 0.0;
  double beta_max = 0.0;
  std::vector<double> beta;
  std::vector<double> alpha;
  std::vector<double> alpha_bar;
  std::vector<double> posterior_var;

  double beta_at(int t) const { return beta[idx(t)]; }
  double alpha_at(int t) const { return alpha[idx(t)]; }
  double alpha_bar_at(int t) const { return alpha_bar[idx(t)]; }
  /// alpha_bar(t - 1), with alpha_bar(0) = 1.
  double alpha_bar_prev(int t) const { return t == 1 ? 1.0 : alpha_bar[idx(t - 1)]; }
  double posterior_var_at(int t) const { return posterior_var[idx(t)]; }

  void check_step(int t) const {
    if (t < 1 || t > T)
      throw ValidationError("diffusion step " + std::to_string(t) +
                            " outside [1, " + std::to_string(T) + "]");
  }

 private:
  std::size_t idx(int t) const { return static_cast<std::size_t>(t - 1); }
};

/// Linear beta schedule from beta_min (t = 1) to beta_max (t = T).
NoiseSchedule build_schedule(int T, double beta_min, double beta_max);

/// Closed-form q(a_t | a_0): sqrt(abar_t) a0 + sqrt(1 - abar_t) eps.
ActionChunk forward_noise(const ActionChunk& a0, int t, const ActionChunk& eps,
                          const NoiseSchedule& sched);

/// Mean of p(a_{t-1} | a_t) reconstructed from predicted noise.
ActionChunk denoise_mean(const ActionChunk& eps_hat, const ActionChunk& a_t,
                         int t, const NoiseSchedule& sched);

/// Mean of the forward posterior q(a_{t-1} | a_t, a_0).
ActionChunk posterior_mean(const ActionChunk& a0, const ActionChunk& a_t, int t,
                           const NoiseSchedule& sched);

ActionChunk standard_normal_chunk(int horizon, Rng& rng);

// ---------------------------------------------------------------------------
// Denoiser network

struct DenoiserLayout {
  int horizon = 16;
  int obs_dim = 0;
  int time_dim = 16;
  std::vector<int> hidden{256, 256, 256};

  int action_dim() const { return 2 * horizon; }
  int input_dim() const { return action_dim() + obs_dim + time_dim; }
  /// Layer widths from input to output.
  std::vector<int> widths() const;
  std::size_t param_count() const;
};

/// Fully connected SiLU network stored as one flat parameter vector:
/// per layer, an out x in column-major weight block followed by the bias.
class DenoiserParams {
 public:
  DenoiserParams() = default;
  explicit DenoiserParams(DenoiserLayout layout);

  const DenoiserLayout& layout() const { return layout_; }
  std::size_t num_layers() const { return offsets_.size(); }

  Eigen::VectorXd& values() { return theta_; }
  const Eigen::VectorXd& values() const { return theta_; }

  Eigen::Map<const Eigen::MatrixXd> weight(std::size_t l) const;
  Eigen::Map<Eigen::MatrixXd> weight(std::size_t l);
  Eigen::Map<const Eigen::VectorXd> bias(std::size_t l) const;
  Eigen::Map<Eigen::VectorXd> bias(std::size_t l);

 private:
  DenoiserLayout layout_;
  std::vector<int> widths_;
  std::vector<std::size_t> offsets_;
  Eigen::VectorXd theta_;
};

/// Uniform(+-sqrt(6 / (fan_in + fan_out))) weights, zero biases.
DenoiserParams init_denoiser(const DenoiserLayout& layout, std::uint64_t seed);

/// [sin(t f_0..f_{k-1}), cos(t f_0..f_{k-1})], f_i = 10000^(-i/k), k = dim/2.
Eigen::VectorXd sinusoidal_embedding(int t, int dim);

/// Network outputs for a batch. Columns are items: actions is
/// (2H x B), obs is (d_obs x B).
Eigen::MatrixXd predict_noise_batch(const DenoiserParams& params,
                                    const Eigen::MatrixXd& noisy_actions,
                                    const Eigen::MatrixXd& obs,
                                    std::span<const int> steps);

ActionChunk predict_noise(const DenoiserParams& params, const ActionChunk& a_t,
                          std::span<const double> obs, int t);

// ---------------------------------------------------------------------------
// Training objective

/// Training items as columns: obs (d_obs x B), actions (2H x B) holding
/// flattened normalized chunks.
struct Batch {
  Eigen::MatrixXd obs;
  Eigen::MatrixXd actions;

  Eigen::Index size() const { return actions.cols(); }
};

/// Per-item diffusion step and noise used for one loss evaluation.
struct NoiseDraw {
  std::vector<int> steps;
  Eigen::MatrixXd eps;  // 2H x B
};

NoiseDraw sample_noise_draw(const Batch& batch, const NoiseSchedule& sched,
                            Rng& rng);

struct LossAndGrad {
  double loss = 0.0;
  Eigen::VectorXd grad;
};

/// Thrown when an item's loss is NaN or infinite.
class NonFiniteLoss : public RuntimeFailure {
 public:
  NonFiniteLoss(Eigen::Index item)
      : RuntimeFailure("non-finite loss at batch item " + std::to_string(item)),
        item_(item) {}
  Eigen::Index item() const { return item_; }

 private:
  Eigen::Index item_;
};

/// Mean squared error between eps and the prediction on the noised
/// actions, with its reverse-mode gradient w.r.t. every parameter.
LossAndGrad loss_and_gradient(const DenoiserParams& params, const Batch& batch,
                              const NoiseDraw& draw, const NoiseSchedule& sched);

double loss_only(const DenoiserParams& params, const Batch& batch,
                 const NoiseDraw& draw, const NoiseSchedule& sched);

/// Samples (t, eps) per item from rng, then evaluates loss_and_gradient.
LossAndGrad training_loss(const DenoiserParams& params, const Batch& batch,
                          const NoiseSchedule& sched, Rng& rng);

// ---------------------------------------------------------------------------
// Sampling and diagnostics

template <class P>
concept NoisePredictor =
    requires(const P& p, const ActionChunk& a, std::span<const double> o, int t) {
      { p(a, o, t) } -> std::convertible_to<ActionChunk>;
    };

/// Binds a parameter set as a NoisePredictor.
struct NetworkPredictor {
  const DenoiserParams* params;
  ActionChunk operator()(const ActionChunk& a, std::span<const double> o,
                         int t) const {
    return predict_noise(*params, a, o, t);
  }
};

/// Ancestral sampling from a_T ~ N(0, I) down to a_0. The final sample is
/// clipped to [-1, 1] unless clip is false.
template <NoisePredictor P>
ActionChunk reverse_sample(const P& predict, std::span<const double> obs,
                           const NoiseSchedule& sched, int horizon, Rng& rng,
                           bool clip = true) {
  ActionChunk a = standard_normal_chunk(horizon, rng);
  for (int t = sched.T; t >= 1; --t) {
    const ActionChunk eps_hat = predict(a, obs, t);
    ActionChunk next = denoise_mean(eps_hat, a, t, sched);
    if (t > 1)
      next += std::sqrt(sched.posterior_var_at(t)) *
              standard_normal_chunk(horizon, rng);
    a = std::move(next);
  }
  if (clip) a = a.cwiseMax(-1.0).cwiseMin(1.0);
  return a;
}

inline ActionChunk reverse_sample(const DenoiserParams& params,
                                  std::span<const double> obs,
                                  const NoiseSchedule& sched, Rng& rng,
                                  bool clip = true) {
  return reverse_sample(NetworkPredictor{&params}, obs, sched,
                        params.layout().horizon, rng, clip);
}

/// Variational-bound terms: kl[t - 2] estimates
/// KL(q(a_{t-1} | a_t, a_0) || p(a_{t-1} | a_t)) for t = 2..T, and the
/// t = 1 reconstruction log-likelihood log N(a_0; mu(a_1), beta_1 I).
struct ElboTerms {
  std::vector<double> kl;
  double reconstruction = 0.0;

  double total_kl() const {
    double s = 0.0;
    for (double k : kl) s += k;
    return s;
  }
};

/// Closed-form KL between isotropic Gaussians sharing variance `var`.
inline double equal_variance_kl(const ActionChunk& mean_q,
                                const ActionChunk& mean_p, double var) {
  return (mean_q - mean_p).squaredNorm() / (2.0 * var);
}

template <NoisePredictor P>
ElboTerms elbo_diagnostic(const P& predict, std::span<const double> obs,
                          const ActionChunk& a0, const NoiseSchedule& sched,
                          int n_samples, Rng& rng) {
  if (n_samples < 1) throw ValidationError("elbo_diagnostic: n_samples < 1");
  const int horizon = static_cast<int>(a0.rows());
  ElboTerms out;
  out.kl.assign(static_cast<std::size_t>(std::max(0, sched.T - 1)), 0.0);
  for (int t = 2; t <= sched.T; ++t) {
    double acc = 0.0;
    for (int n = 0; n < n_samples; ++n) {
      const ActionChunk a_t =
          forward_noise(a0, t, standard_normal_chunk(horizon, rng), sched);
      const ActionChunk mu_q = posterior_mean(a0, a_t, t, sched);
      const ActionChunk mu_p = denoise_mean(predict(a_t, obs, t), a_t, t, sched);
      acc += equal_variance_kl(mu_q, mu_p, sched.posterior_var_at(t));
    }
    out.kl[static_cast<std::size_t>(t - 2)] = acc / n_samples;
  }
  const double var1 = sched.beta_at(1);
  const double dim = static_cast<double>(a0.size());
  double rec = 0.0;
  for (int n = 0; n < n_samples; ++n) {
    const ActionChunk a1 =
        forward_noise(a0, 1, standard_normal_chunk(horizon, rng), sched);
    const ActionChunk mu = denoise_mean(predict(a1, obs, 1), a1, 1, sched);
    rec += -0.5 * dim * std::log(2.0 * std::numbers::pi * var1) -
           (a0 - mu).squaredNorm() / (2.0 * var1);
  }
  out.reconstruction = rec / n_samples;
  return out;
}

}  // namespace furrow
