#include "sonarmatch/optim.hpp"

#include <cmath>

#include "sonarmatch/error.hpp"

namespace sonarmatch {

std::string to_string(OptimizerKind k) { return k == OptimizerKind::Adadelta ? "adadelta" : "nadam"; }

OptimizerKind optimizer_from_string(const std::string& s) {
  if (s == "adadelta" || s == "Adadelta") return OptimizerKind::Adadelta;
  if (s == "nadam" || s == "Nadam") return OptimizerKind::Nadam;
  throw ConfigError("unknown optimizer '" + s + "'");
}

Adadelta::Adadelta(double learning_rate, double rho, double epsilon)
    : lr_(learning_rate), rho_(rho), eps_(epsilon) {
  if (!(learning_rate >= 0.0)) throw ConfigError("learning rate must be >= 0");
}

void Adadelta::step(ParameterStore& params) {
  for (auto& [name, p] : params) {
    if (!p.trainable) continue;
    auto& ag = accum_grad_[name];
    auto& au = accum_update_[name];
    if (ag.empty()) {
      ag.assign(p.value.size(), 0.0f);
      au.assign(p.value.size(), 0.0f);
    }
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double g = p.grad[i];
      const double a = rho_ * ag[i] + (1.0 - rho_) * g * g;
      const double update = g * std::sqrt(au[i] + eps_) / std::sqrt(a + eps_);
      ag[i] = static_cast<float>(a);
      au[i] = static_cast<float>(rho_ * au[i] + (1.0 - rho_) * update * update);
      p.value[i] = static_cast<float>(p.value[i] - lr_ * update);
    }
  }
}

Nadam::Nadam(double learning_rate, double beta1, double beta2, double epsilon, double schedule_decay)
    : lr_(learning_rate), beta1_(beta1), beta2_(beta2), eps_(epsilon), decay_(schedule_decay) {
  if (!(learning_rate >= 0.0)) throw ConfigError("learning rate must be >= 0");
}

void Nadam::step(ParameterStore& params) {
  ++t_;
  const double t = static_cast<double>(t_);
  const double mu_t = beta1_ * (1.0 - 0.5 * std::pow(0.96, t * decay_));
  const double mu_next = beta1_ * (1.0 - 0.5 * std::pow(0.96, (t + 1.0) * decay_));
  m_schedule_ *= mu_t;
  const double schedule_next = m_schedule_ * mu_next;
  for (auto& [name, p] : params) {
    if (!p.trainable) continue;
    auto& m = m_[name];
    auto& v = v_[name];
    if (m.empty()) {
      m.assign(p.value.size(), 0.0f);
      v.assign(p.value.size(), 0.0f);
    }
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double g = p.grad[i];
      const double g_prime = g / (1.0 - m_schedule_);
      const double m_t = beta1_ * m[i] + (1.0 - beta1_) * g;
      const double m_prime = m_t / (1.0 - schedule_next);
      const double v_t = beta2_ * v[i] + (1.0 - beta2_) * g * g;
      const double v_prime = v_t / (1.0 - std::pow(beta2_, t));
      const double m_bar = (1.0 - mu_t) * g_prime + mu_next * m_prime;
      m[i] = static_cast<float>(m_t);
      v[i] = static_cast<float>(v_t);
      p.value[i] = static_cast<float>(p.value[i] - lr_ * m_bar / (std::sqrt(v_prime) + eps_));
    }
  }
}

std::unique_ptr<Optimizer> make_optimizer(OptimizerKind kind, double learning_rate) {
  if (kind == OptimizerKind::Adadelta) return std::make_unique<Adadelta>(learning_rate);
  return std::make_unique<Nadam>(learning_rate);
}

}  // namespace sonarmatch
