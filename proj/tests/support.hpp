#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include <unistd.h>

#include "sonarmatch/engine.hpp"
#include "sonarmatch/netgraph.hpp"

namespace testing_support {

using namespace sonarmatch;

inline LayerNode input(const std::string& id, Shape s) {
  LayerNode n{id, LayerKind::Input, {}, {}};
  n.attrs.input = s;
  return n;
}

inline LayerNode conv(const std::string& id, const std::string& in, int filters, int kernel, int stride = 1,
                      Padding pad = Padding::Same) {
  LayerNode n{id, LayerKind::Conv2D, {}, {in}};
  n.attrs.filters = filters;
  n.attrs.kernel = kernel;
  n.attrs.stride = stride;
  n.attrs.padding = pad;
  return n;
}

inline LayerNode dense(const std::string& id, const std::string& in, int units) {
  LayerNode n{id, LayerKind::Dense, {}, {in}};
  n.attrs.units = units;
  return n;
}

inline LayerNode unary(const std::string& id, LayerKind k, const std::string& in) { return {id, k, {}, {in}}; }

inline LayerNode pool(const std::string& id, LayerKind k, const std::string& in, int p) {
  LayerNode n{id, k, {}, {in}};
  n.attrs.pool = p;
  return n;
}

inline LayerNode dropout(const std::string& id, const std::string& in, double rate) {
  LayerNode n{id, LayerKind::Dropout, {}, {in}};
  n.attrs.rate = rate;
  return n;
}

inline Tensor random_tensor(int batch, Shape s, std::uint64_t seed, float lo = -1.0f, float hi = 1.0f) {
  Tensor t(batch, s);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(lo, hi);
  for (auto& v : t.data) v = u(rng);
  return t;
}

/// Scalar objective sum_k <w_k, out_k> with fixed random weights.
struct LinearProbe {
  std::vector<Tensor> weights;

  LinearProbe(Network& net, const std::vector<Tensor>& inputs, Mode mode, std::uint64_t seed) {
    const auto outs = net.forward(inputs, mode, 7);
    for (std::size_t k = 0; k < outs.size(); ++k) weights.push_back(random_tensor(outs[k]->batch, outs[k]->shape, seed + k));
  }

  double value(Network& net, const std::vector<Tensor>& inputs, Mode mode) const {
    const auto outs = net.forward(inputs, mode, 7);
    double v = 0.0;
    for (std::size_t k = 0; k < outs.size(); ++k)
      for (std::size_t i = 0; i < outs[k]->data.size(); ++i) v += static_cast<double>(outs[k]->data[i]) * weights[k].data[i];
    return v;
  }
};

struct GradCheck {
  double worst = 0.0;
  std::string where;
  int checked = 0;
};

/// Compares analytic parameter gradients with central differences on up to
/// `per_param` elements of every trainable tensor.
inline GradCheck check_param_grads(Network& net, const std::vector<Tensor>& inputs, Mode mode, int per_param = 6,
                                   double h = 1e-2, double atol = 2e-3, double rtol = 2e-2) {
  LinearProbe probe(net, inputs, mode, 99);
  net.zero_grad();
  net.forward(inputs, mode, 7);
  net.backward(probe.weights);
  GradCheck r;
  std::mt19937_64 rng(5);
  for (auto& [name, p] : net.parameters()) {
    if (!p.trainable) continue;
    std::uniform_int_distribution<std::size_t> pick(0, p.value.size() - 1);
    const auto saved = p.value;
    for (int k = 0; k < per_param; ++k) {
      const std::size_t i = pick(rng);
      const float orig = p.value[i];
      p.value[i] = static_cast<float>(orig + h);
      const double up = probe.value(net, inputs, mode);
      p.value[i] = static_cast<float>(orig - h);
      const double down = probe.value(net, inputs, mode);
      p.value = saved;
      const double numeric = (up - down) / (2 * h);
      const double analytic = p.grad[i];
      const double err = std::abs(numeric - analytic) / (atol + rtol * std::max(std::abs(numeric), std::abs(analytic)));
      ++r.checked;
      if (err > r.worst) {
        r.worst = err;
        r.where = name + "[" + std::to_string(i) + "] analytic=" + std::to_string(analytic) +
                  " numeric=" + std::to_string(numeric);
      }
    }
  }
  return r;
}

inline std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("sonarmatch_test_" + name + "_" + std::to_string(::getpid()));
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace testing_support
