#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "sonarmatch/engine.hpp"

namespace sonarmatch {

enum class OptimizerKind { Adadelta, Nadam };

std::string to_string(OptimizerKind k);
OptimizerKind optimizer_from_string(const std::string& s);

/// Applies one update per call to every trainable parameter, using the
/// gradients currently stored in the parameters.
class Optimizer {
 public:
  virtual ~Optimizer() = default;
  virtual void step(ParameterStore& params) = 0;
};

/// Adadelta with decay rho and epsilon; the learning rate scales the step.
class Adadelta final : public Optimizer {
 public:
  explicit Adadelta(double learning_rate, double rho = 0.95, double epsilon = 1e-7);
  void step(ParameterStore& params) override;

 private:
  double lr_, rho_, eps_;
  std::map<std::string, std::vector<float>> accum_grad_, accum_update_;
};

/// Nesterov Adam with the momentum-cache schedule.
class Nadam final : public Optimizer {
 public:
  explicit Nadam(double learning_rate, double beta1 = 0.9, double beta2 = 0.999,
                 double epsilon = 1e-7, double schedule_decay = 0.004);
  void step(ParameterStore& params) override;

 private:
  double lr_, beta1_, beta2_, eps_, decay_;
  long long t_ = 0;
  double m_schedule_ = 1.0;
  std::map<std::string, std::vector<float>> m_, v_;
};

std::unique_ptr<Optimizer> make_optimizer(OptimizerKind kind, double learning_rate);

}  // namespace sonarmatch
