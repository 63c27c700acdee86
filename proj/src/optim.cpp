#include "enclab/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace enclab {

double lr_schedule(int64_t step, int64_t total_steps, const TrainPlan& plan) {
  if (step < 0) throw std::invalid_argument("lr_schedule: step must be >= 0");
  const double peak = plan.peak_lr;
  const double floor = plan.floor_fraction * peak;
  const double warmup = static_cast<double>(plan.warmup_steps);
  const double decay_end = plan.decay_fraction * static_cast<double>(total_steps);

  if (step < plan.warmup_steps) {
    return peak * static_cast<double>(step) / warmup;
  }
  if (static_cast<double>(step) < decay_end) {
    const double progress =
        (static_cast<double>(step) - warmup) / (decay_end - warmup);
    if (plan.scheduler == SchedulerKind::Linear)
      return floor + (peak - floor) * (1.0 - progress);
    return floor + (peak - floor) * 0.5 * (1.0 + std::cos(M_PI * progress));
  }
  return floor;
}

double clip_grad_norm(const std::vector<std::span<float>>& grads,
                      double max_norm) {
  if (max_norm <= 0) throw std::invalid_argument("clip_grad_norm: max_norm must be > 0");
  double sq = 0.0;
  for (const auto& g : grads)
    for (float v : g) sq += double(v) * v;
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const double scale = max_norm / norm;
    for (const auto& g : grads)
      for (float& v : g) v = static_cast<float>(v * scale);
  }
  return norm;
}

double clip_grad_norm(std::vector<ParamEntry>& params, double max_norm) {
  std::vector<std::span<float>> grads;
  grads.reserve(params.size());
  for (auto& e : params) {
    auto* node = e.tensor.node();
    if (node->grad.empty()) continue;
    grads.emplace_back(node->grad);
  }
  return clip_grad_norm(grads, max_norm);
}

AdamOptimizer::AdamOptimizer(const TrainPlan& plan,
                             const std::vector<ParamEntry>& params)
    : beta1_(plan.beta1),
      beta2_(plan.beta2),
      eps_(plan.eps),
      weight_decay_(plan.weight_decay),
      kind_(plan.optimizer) {
  m_.reserve(params.size());
  v_.reserve(params.size());
  for (const auto& e : params) {
    m_.emplace_back(static_cast<size_t>(e.tensor.numel()), 0.0f);
    v_.emplace_back(static_cast<size_t>(e.tensor.numel()), 0.0f);
  }
}

void AdamOptimizer::step(std::vector<ParamEntry>& params, double lr) {
  if (params.size() != m_.size())
    throw std::runtime_error("optimizer: parameter registry changed size");
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, double(t_));
  const double bc2 = 1.0 - std::pow(beta2_, double(t_));

  for (size_t p = 0; p < params.size(); ++p) {
    auto* node = params[p].tensor.node();
    if (node->grad.empty()) continue;  // parameter untouched this step
    float* theta = node->data.data();
    const float* grad = node->grad.data();
    std::vector<float>& m = m_[p];
    std::vector<float>& v = v_[p];
    const bool decay =
        kind_ == OptimizerKind::AdamW && params[p].weight_decay;
    const int64_t n = node->numel();
    for (int64_t i = 0; i < n; ++i) {
      const double g = grad[i];
      const double mi = beta1_ * double(m[i]) + (1.0 - beta1_) * g;
      const double vi = beta2_ * double(v[i]) + (1.0 - beta2_) * g * g;
      m[i] = static_cast<float>(mi);
      v[i] = static_cast<float>(vi);
      const double mhat = double(m[i]) / bc1;
      const double vhat = double(v[i]) / bc2;
      double update = mhat / (std::sqrt(vhat) + eps_);
      if (decay) update += weight_decay_ * double(theta[i]);
      theta[i] = static_cast<float>(double(theta[i]) - lr * update);
    }
  }
}

void AdamOptimizer::restore_state(size_t index, std::vector<float> m,
                                  std::vector<float> v) {
  if (index >= m_.size() || m.size() != m_[index].size() ||
      v.size() != v_[index].size())
    throw std::runtime_error("optimizer: state restore shape mismatch");
  m_[index] = std::move(m);
  v_[index] = std::move(v);
}

}  // namespace enclab
