#include "furrow/diffusion.hpp"

#include <cmath>

namespace furrow {

NoiseSchedule build_schedule(int T, double beta_min, double beta_max) {
  if (T < 1) throw ValidationError("schedule: T must be >= 1");
  if (!(beta_min > 0.0 && beta_min <= beta_max && beta_max < 1.0))
    throw ValidationError("schedule: need 0 < beta_min <= beta_max < 1");
  NoiseSchedule s;
  s.T = T;
  s.beta_min = beta_min;
  s.beta_max = beta_max;
  const auto n = static_cast<std::size_t>(T);
  s.beta.resize(n);
  s.alpha.resize(n);
  s.alpha_bar.resize(n);
  s.posterior_var.resize(n);
  double prod = 1.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double f = T == 1 ? 0.0 : static_cast<double>(i) / (T - 1);
    s.beta[i] = beta_min + f * (beta_max - beta_min);
    s.alpha[i] = 1.0 - s.beta[i];
    const double prev = prod;
    prod *= s.alpha[i];
    s.alpha_bar[i] = prod;
    s.posterior_var[i] = s.beta[i] * (1.0 - prev) / (1.0 - prod);
  }
  return s;
}

ActionChunk forward_noise(const ActionChunk& a0, int t, const ActionChunk& eps,
                          const NoiseSchedule& sched) {
  sched.check_step(t);
  if (a0.rows() != eps.rows())
    throw ValidationError("forward_noise: a0 and eps shapes differ");
  const double ab = sched.alpha_bar_at(t);
  return std::sqrt(ab) * a0 + std::sqrt(1.0 - ab) * eps;
}

ActionChunk denoise_mean(const ActionChunk& eps_hat, const ActionChunk& a_t,
                         int t, const NoiseSchedule& sched) {
  sched.check_step(t);
  if (a_t.rows() != eps_hat.rows())
    throw ValidationError("denoise_mean: shapes differ");
  const double coef = sched.beta_at(t) / std::sqrt(1.0 - sched.alpha_bar_at(t));
  return (a_t - coef * eps_hat) / std::sqrt(sched.alpha_at(t));
}

ActionChunk posterior_mean(const ActionChunk& a0, const ActionChunk& a_t, int t,
                           const NoiseSchedule& sched) {
  sched.check_step(t);
  const double ab = sched.alpha_bar_at(t);
  const double ab_prev = sched.alpha_bar_prev(t);
  const double c0 = std::sqrt(ab_prev) * sched.beta_at(t) / (1.0 - ab);
  const double ct = std::sqrt(sched.alpha_at(t)) * (1.0 - ab_prev) / (1.0 - ab);
  return c0 * a0 + ct * a_t;
}

ActionChunk standard_normal_chunk(int horizon, Rng& rng) {
  ActionChunk z(horizon, 2);
  for (Eigen::Index i = 0; i < z.size(); ++i) z.data()[i] = standard_normal(rng);
  return z;
}

// ---------------------------------------------------------------------------

std::vector<int> DenoiserLayout::widths() const {
  std::vector<int> w;
  w.push_back(input_dim());
  for (int h : hidden) w.push_back(h);
  w.push_back(action_dim());
  return w;
}

std::size_t DenoiserLayout::param_count() const {
  const auto w = widths();
  std::size_t n = 0;
  for (std::size_t l = 1; l < w.size(); ++l)
    n += static_cast<std::size_t>(w[l]) * static_cast<std::size_t>(w[l - 1] + 1);
  return n;
}

DenoiserParams::DenoiserParams(DenoiserLayout layout)
    : layout_(std::move(layout)), widths_(layout_.widths()) {
  if (layout_.horizon < 1 || layout_.obs_dim < 0 || layout_.time_dim < 0 ||
      layout_.time_dim % 2 != 0)
    throw ValidationError("denoiser layout: invalid dimensions");
  for (int h : layout_.hidden)
    if (h < 1) throw ValidationError("denoiser layout: hidden width < 1");
  std::size_t off = 0;
  for (std::size_t l = 1; l < widths_.size(); ++l) {
    offsets_.push_back(off);
    off += static_cast<std::size_t>(widths_[l]) *
           static_cast<std::size_t>(widths_[l - 1] + 1);
  }
  theta_ = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(off));
}

Eigen::Map<const Eigen::MatrixXd> DenoiserParams::weight(std::size_t l) const {
  return {theta_.data() + offsets_[l], widths_[l + 1], widths_[l]};
}

Eigen::Map<Eigen::MatrixXd> DenoiserParams::weight(std::size_t l) {
  return {theta_.data() + offsets_[l], widths_[l + 1], widths_[l]};
}

Eigen::Map<const Eigen::VectorXd> DenoiserParams::bias(std::size_t l) const {
  return {theta_.data() + offsets_[l] +
              static_cast<std::size_t>(widths_[l + 1]) * widths_[l],
          widths_[l + 1]};
}

Eigen::Map<Eigen::VectorXd> DenoiserParams::bias(std::size_t l) {
  return {theta_.data() + offsets_[l] +
              static_cast<std::size_t>(widths_[l + 1]) * widths_[l],
          widths_[l + 1]};
}

DenoiserParams init_denoiser(const DenoiserLayout& layout, std::uint64_t seed) {
  DenoiserParams p(layout);
  Rng rng(seed);
  for (std::size_t l = 0; l < p.num_layers(); ++l) {
    auto w = p.weight(l);
    const double limit = std::sqrt(6.0 / static_cast<double>(w.rows() + w.cols()));
    for (Eigen::Index i = 0; i < w.size(); ++i)
      w.data()[i] = uniform(rng, -limit, limit);
    p.bias(l).setZero();
  }
  return p;
}

Eigen::VectorXd sinusoidal_embedding(int t, int dim) {
  Eigen::VectorXd e(dim);
  const int half = dim / 2;
  for (int i = 0; i < half; ++i) {
    const double freq = std::exp(-std::log(10000.0) * i / half);
    e[i] = std::sin(t * freq);
    e[i + half] = std::cos(t * freq);
  }
  return e;
}

namespace {

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

struct ForwardCache {
  std::vector<Eigen::MatrixXd> inputs;  // inputs[l] feeds layer l
  std::vector<Eigen::MatrixXd> pre;     // pre-activations of hidden layers
};

Eigen::MatrixXd assemble_input(const DenoiserParams& params,
                               const Eigen::MatrixXd& noisy_actions,
                               const Eigen::MatrixXd& obs,
                               std::span<const int> steps) {
  const auto& L = params.layout();
  const Eigen::Index B = noisy_actions.cols();
  if (noisy_actions.rows() != L.action_dim() || obs.rows() != L.obs_dim ||
      obs.cols() != B || static_cast<Eigen::Index>(steps.size()) != B)
    throw ValidationError("denoiser: input shape mismatch (actions " +
                          std::to_string(noisy_actions.rows()) + "x" +
                          std::to_string(B) + ", obs " +
                          std::to_string(obs.rows()) + "x" +
                          std::to_string(obs.cols()) + ", expected " +
                          std::to_string(L.action_dim()) + " and " +
                          std::to_string(L.obs_dim) + ")");
  Eigen::MatrixXd x(L.input_dim(), B);
  x.topRows(L.action_dim()) = noisy_actions;
  x.middleRows(L.action_dim(), L.obs_dim) = obs;
  for (Eigen::Index b = 0; b < B; ++b)
    x.col(b).tail(L.time_dim) = sinusoidal_embedding(steps[b], L.time_dim);
  return x;
}

Eigen::MatrixXd forward(const DenoiserParams& params, Eigen::MatrixXd x,
                        ForwardCache* cache) {
  const std::size_t n = params.num_layers();
  for (std::size_t l = 0; l < n; ++l) {
    Eigen::MatrixXd z = params.weight(l) * x;
    z.colwise() += params.bias(l);
    if (cache) cache->inputs.push_back(std::move(x));
    if (l + 1 == n) return z;
    x = z.unaryExpr([](double v) { return v * sigmoid(v); });
    if (cache) cache->pre.push_back(std::move(z));
  }
  return x;
}

Eigen::MatrixXd noised_actions(const Batch& batch, const NoiseDraw& draw,
                               const NoiseSchedule& sched) {
  if (draw.eps.rows() != batch.actions.rows() ||
      draw.eps.cols() != batch.actions.cols() ||
      static_cast<Eigen::Index>(draw.steps.size()) != batch.size())
    throw ValidationError("noise draw does not match batch shape");
  Eigen::MatrixXd a_t(batch.actions.rows(), batch.actions.cols());
  for (Eigen::Index b = 0; b < batch.size(); ++b) {
    const int t = draw.steps[static_cast<std::size_t>(b)];
    sched.check_step(t);
    const double ab = sched.alpha_bar_at(t);
    a_t.col(b) = std::sqrt(ab) * batch.actions.col(b) +
                 std::sqrt(1.0 - ab) * draw.eps.col(b);
  }
  return a_t;
}

void check_finite(const Eigen::MatrixXd& residual) {
  for (Eigen::Index b = 0; b < residual.cols(); ++b)
    if (!std::isfinite(residual.col(b).squaredNorm())) throw NonFiniteLoss(b);
}

}  // namespace

Eigen::MatrixXd predict_noise_batch(const DenoiserParams& params,
                                    const Eigen::MatrixXd& noisy_actions,
                                    const Eigen::MatrixXd& obs,
                                    std::span<const int> steps) {
  return forward(params, assemble_input(params, noisy_actions, obs, steps),
                 nullptr);
}

ActionChunk predict_noise(const DenoiserParams& params, const ActionChunk& a_t,
                          std::span<const double> obs, int t) {
  const auto& L = params.layout();
  if (a_t.rows() != L.horizon)
    throw ValidationError("predict_noise: chunk horizon mismatch");
  const Eigen::MatrixXd a =
      Eigen::Map<const Eigen::VectorXd>(a_t.data(), a_t.size());
  const Eigen::MatrixXd o = Eigen::Map<const Eigen::VectorXd>(
      obs.data(), static_cast<Eigen::Index>(obs.size()));
  const int steps[1] = {t};
  const Eigen::MatrixXd out = predict_noise_batch(params, a, o, steps);
  ActionChunk eps(L.horizon, 2);
  Eigen::Map<Eigen::VectorXd>(eps.data(), eps.size()) = out.col(0);
  return eps;
}

NoiseDraw sample_noise_draw(const Batch& batch, const NoiseSchedule& sched,
                            Rng& rng) {
  NoiseDraw d;
  d.steps.resize(static_cast<std::size_t>(batch.size()));
  d.eps.resize(batch.actions.rows(), batch.actions.cols());
  for (Eigen::Index b = 0; b < batch.size(); ++b) {
    d.steps[static_cast<std::size_t>(b)] =
        static_cast<int>(uniform_int(rng, 1, sched.T));
    for (Eigen::Index r = 0; r < d.eps.rows(); ++r)
      d.eps(r, b) = standard_normal(rng);
  }
  return d;
}

double loss_only(const DenoiserParams& params, const Batch& batch,
                 const NoiseDraw& draw, const NoiseSchedule& sched) {
  if (batch.size() < 1) throw ValidationError("loss: empty batch");
  const Eigen::MatrixXd out = predict_noise_batch(
      params, noised_actions(batch, draw, sched), batch.obs, draw.steps);
  const Eigen::MatrixXd residual = out - draw.eps;
  check_finite(residual);
  return residual.squaredNorm() / static_cast<double>(residual.size());
}

LossAndGrad loss_and_gradient(const DenoiserParams& params, const Batch& batch,
                              const NoiseDraw& draw, const NoiseSchedule& sched) {
  if (batch.size() < 1) throw ValidationError("loss: empty batch");
  ForwardCache cache;
  const Eigen::MatrixXd out = forward(
      params,
      assemble_input(params, noised_actions(batch, draw, sched), batch.obs,
                     draw.steps),
      &cache);
  const Eigen::MatrixXd residual = out - draw.eps;
  check_finite(residual);
  const double n = static_cast<double>(residual.size());

  LossAndGrad r;
  r.loss = residual.squaredNorm() / n;
  r.grad = Eigen::VectorXd::Zero(params.values().size());
  DenoiserParams grad_view(params.layout());  // same offsets, used as a view
  grad_view.values().swap(r.grad);

  Eigen::MatrixXd delta = (2.0 / n) * residual;
  for (std::size_t l = params.num_layers(); l-- > 0;) {
    grad_view.weight(l).noalias() = delta * cache.inputs[l].transpose();
    grad_view.bias(l) = delta.rowwise().sum();
    if (l == 0) break;
    Eigen::MatrixXd back = params.weight(l).transpose() * delta;
    const Eigen::MatrixXd& z = cache.pre[l - 1];
    delta = back.cwiseProduct(z.unaryExpr([](double v) {
      const double s = sigmoid(v);
      return s * (1.0 + v * (1.0 - s));
    }));
  }
  grad_view.values().swap(r.grad);
  return r;
}

LossAndGrad training_loss(const DenoiserParams& params, const Batch& batch,
                          const NoiseSchedule& sched, Rng& rng) {
  return loss_and_gradient(params, batch, sample_noise_draw(batch, sched, rng),
                           sched);
}

}  // namespace furrow
