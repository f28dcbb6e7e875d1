#include "sonarmatch/engine.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "sonarmatch/error.hpp"
#include "sonarmatch/rng.hpp"

namespace sonarmatch {

namespace {

using RowMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMatrix>;
using ConstMatMap = Eigen::Map<const RowMatrix>;

float strided_sum(const float* p, std::int64_t n, std::int64_t stride) {
  float acc = 0.0f;
  for (std::int64_t i = 0; i < n; ++i) acc += p[i * stride];
  return acc;
}

struct ConvGeometry {
  int channels, height, width;
  int kernel, stride;
  int out_h, out_w;
  int pad_top, pad_left;

  int patch_rows() const { return channels * kernel * kernel; }
  int positions() const { return out_h * out_w; }
  bool is_identity() const { return kernel == 1 && stride == 1 && pad_top == 0 && pad_left == 0; }
};

ConvGeometry conv_geometry(const Shape& in, const Shape& out, const LayerAttrs& a) {
  ConvGeometry g{in.channels, in.height, in.width, a.kernel, a.stride, out.height, out.width, 0, 0};
  if (a.padding == Padding::Same) {
    const int pad_h = std::max((out.height - 1) * a.stride + a.kernel - in.height, 0);
    const int pad_w = std::max((out.width - 1) * a.stride + a.kernel - in.width, 0);
    g.pad_top = pad_h / 2;
    g.pad_left = pad_w / 2;
  }
  return g;
}

void im2col(const float* x, const ConvGeometry& g, float* col) {
  const int k = g.kernel;
  const int positions = g.positions();
  for (int c = 0; c < g.channels; ++c) {
    const float* xc = x + static_cast<std::size_t>(c) * g.height * g.width;
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        float* row = col + (static_cast<std::size_t>(c) * k * k + ki * k + kj) * positions;
        for (int oh = 0; oh < g.out_h; ++oh) {
          const int ih = oh * g.stride - g.pad_top + ki;
          float* dst = row + static_cast<std::size_t>(oh) * g.out_w;
          if (ih < 0 || ih >= g.height) {
            std::fill(dst, dst + g.out_w, 0.0f);
            continue;
          }
          const float* src = xc + static_cast<std::size_t>(ih) * g.width;
          if (g.stride == 1) {
            const int off = kj - g.pad_left;
            const int lo = std::max(0, -off);
            const int hi = std::min(g.out_w, g.width - off);
            std::fill(dst, dst + std::max(lo, 0), 0.0f);
            if (hi > lo) std::copy(src + lo + off, src + hi + off, dst + lo);
            if (hi < g.out_w) std::fill(dst + std::max(hi, lo), dst + g.out_w, 0.0f);
          } else {
            for (int ow = 0; ow < g.out_w; ++ow) {
              const int iw = ow * g.stride - g.pad_left + kj;
              dst[ow] = (iw >= 0 && iw < g.width) ? src[iw] : 0.0f;
            }
          }
        }
      }
    }
  }
}

void col2im(const float* col, const ConvGeometry& g, float* dx) {
  const int k = g.kernel;
  const int positions = g.positions();
  for (int c = 0; c < g.channels; ++c) {
    float* xc = dx + static_cast<std::size_t>(c) * g.height * g.width;
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        const float* row = col + (static_cast<std::size_t>(c) * k * k + ki * k + kj) * positions;
        for (int oh = 0; oh < g.out_h; ++oh) {
          const int ih = oh * g.stride - g.pad_top + ki;
          if (ih < 0 || ih >= g.height) continue;
          const float* src = row + static_cast<std::size_t>(oh) * g.out_w;
          float* dst = xc + static_cast<std::size_t>(ih) * g.width;
          for (int ow = 0; ow < g.out_w; ++ow) {
            const int iw = ow * g.stride - g.pad_left + kj;
            if (iw >= 0 && iw < g.width) dst[iw] += src[ow];
          }
        }
      }
    }
  }
}

float dropout_uniform(std::uint64_t seed, std::size_t node, std::uint64_t sample, std::size_t element) {
  const std::uint64_t h = splitmix64(splitmix64(splitmix64(seed ^ (node * 0x9E3779B97F4A7C15ULL)) ^ sample) ^ element);
  return static_cast<float>(hash_to_unit(h));
}

float sigmoid(float x) {
  if (x >= 0.0f) return 1.0f / (1.0f + std::exp(-x));
  const float e = std::exp(x);
  return e / (1.0f + e);
}

void truncated_normal(Rng& rng, double stddev, std::vector<float>& out) {
  std::normal_distribution<double> n(0.0, 1.0);
  for (auto& v : out) {
    double z = n(rng);
    while (std::abs(z) > 2.0) z = n(rng);
    v = static_cast<float>(z * stddev);
  }
}

}  // namespace

Network::Network(LayerGraph graph) : graph_(std::move(graph)) {
  shapes_ = infer_shapes(graph_);
  order_ = graph_.topological_order();
  for (const auto& spec : parameter_specs(graph_)) {
    Parameter p;
    p.shape = spec.shape;
    p.value.assign(static_cast<std::size_t>(spec.size()), 0.0f);
    p.grad.assign(static_cast<std::size_t>(spec.size()), 0.0f);
    p.trainable = spec.trainable;
    params_.emplace(spec.name, std::move(p));
  }
  bind_parameters();
  initialize(0);
}

Network::Network(const Network& other)
    : graph_(other.graph_),
      shapes_(other.shapes_),
      order_(other.order_),
      params_(other.params_) {
  bind_parameters();
}

Network& Network::operator=(const Network& other) {
  if (this != &other) {
    graph_ = other.graph_;
    shapes_ = other.shapes_;
    order_ = other.order_;
    params_ = other.params_;
    acts_.clear();
    caches_.clear();
    bind_parameters();
  }
  return *this;
}

void Network::bind_parameters() {
  steps_.clear();
  slot_of_.clear();
  for (std::size_t i = 0; i < order_.size(); ++i) slot_of_[order_[i]] = i;
  for (std::size_t i = 0; i < order_.size(); ++i) {
    Step s;
    s.node = &graph_.node(order_[i]);
    s.index = i;
    for (const auto& in : s.node->inputs) s.inputs.push_back(slot_of_.at(in));
    const auto owner = graph_.parameter_owner(s.node->id);
    auto find = [&](const char* role) -> Parameter* {
      auto it = params_.find(owner + "/" + role);
      return it == params_.end() ? nullptr : &it->second;
    };
    s.kernel = find("kernel");
    s.bias = find("bias");
    s.gamma = find("gamma");
    s.beta = find("beta");
    s.moving_mean = find("moving_mean");
    s.moving_var = find("moving_variance");
    steps_.push_back(s);
  }
}

void Network::initialize(std::uint64_t seed) {
  Rng rng(derive_seed(seed, streams::kInit));
  for (const auto& spec : parameter_specs(graph_)) {
    auto& p = params_.at(spec.name);
    std::fill(p.grad.begin(), p.grad.end(), 0.0f);
    if (spec.role == "kernel") {
      const double fan_sum = static_cast<double>(spec.fan_in + spec.fan_out);
      switch (spec.init) {
        case Initializer::GlorotUniform: {
          const double limit = std::sqrt(6.0 / fan_sum);
          std::uniform_real_distribution<double> u(-limit, limit);
          for (auto& v : p.value) v = static_cast<float>(u(rng));
          break;
        }
        case Initializer::GlorotNormal:
          // Truncated at 2 sigma; the constant restores the intended variance.
          truncated_normal(rng, std::sqrt(2.0 / fan_sum) / 0.87962566103423978, p.value);
          break;
        case Initializer::RandomNormal: {
          std::normal_distribution<double> n(0.0, 0.05);
          for (auto& v : p.value) v = static_cast<float>(n(rng));
          break;
        }
      }
    } else if (spec.role == "gamma" || spec.role == "moving_variance") {
      std::fill(p.value.begin(), p.value.end(), 1.0f);
    } else {
      std::fill(p.value.begin(), p.value.end(), 0.0f);
    }
  }
}

void Network::assign_values(const ParameterStore& values) {
  if (values.size() != params_.size()) throw DataError("parameter store does not match the network");
  for (auto& [name, p] : params_) {
    auto it = values.find(name);
    if (it == values.end()) throw DataError("missing parameter '" + name + "'");
    if (it->second.shape != p.shape || it->second.value.size() != p.value.size())
      throw DataError("parameter '" + name + "' has the wrong shape");
    p.value = it->second.value;
  }
}

void Network::zero_grad() {
  for (auto& [name, p] : params_) std::fill(p.grad.begin(), p.grad.end(), 0.0f);
}

void Network::release() {
  acts_.clear();
  caches_.clear();
}

std::int64_t Network::trainable_count() const {
  std::int64_t n = 0;
  for (const auto& [name, p] : params_)
    if (p.trainable) n += static_cast<std::int64_t>(p.value.size());
  return n;
}

std::vector<const Tensor*> Network::forward(std::span<const Tensor> inputs, Mode mode,
                                            std::uint64_t dropout_seed, std::uint64_t sample_offset) {
  const auto input_ids = graph_.input_ids();
  if (inputs.size() != input_ids.size())
    throw ConfigError("network expects " + std::to_string(input_ids.size()) + " inputs, got " +
                      std::to_string(inputs.size()));
  const int batch = inputs.empty() ? 0 : inputs[0].batch;
  if (batch <= 0) throw ConfigError("empty input batch");

  acts_.assign(steps_.size(), Tensor{});
  caches_.assign(steps_.size(), Cache{});
  last_mode_ = mode;
  last_seed_ = dropout_seed;
  last_offset_ = sample_offset;

  std::size_t next_input = 0;
  for (auto& step : steps_) {
    const auto& n = *step.node;
    const auto& a = n.attrs;
    const Shape out_shape = shapes_.at(n.id);
    Tensor& y = acts_[step.index];
    auto in = [&](std::size_t k) -> const Tensor& { return acts_[step.inputs[k]]; };

    switch (n.kind) {
      case LayerKind::Input: {
        const Tensor& src = inputs[next_input++];
        if (src.batch != batch || !(src.shape == out_shape) ||
            src.data.size() != static_cast<std::size_t>(batch) * out_shape.size())
          throw ConfigError("input '" + n.id + "' expects shape " + to_string(out_shape) +
                            ", got " + to_string(src.shape));
        y = src;
        break;
      }
      case LayerKind::Conv2D: {
        const Tensor& x = in(0);
        y = Tensor(batch, out_shape);
        const auto g = conv_geometry(x.shape, out_shape, a);
        ConstMatMap w(step.kernel->value.data(), a.filters, g.patch_rows());
        std::vector<float> col;
        if (!g.is_identity()) col.resize(static_cast<std::size_t>(g.patch_rows()) * g.positions());
        for (int s = 0; s < batch; ++s) {
          const float* src = x.sample(s);
          if (!g.is_identity()) {
            im2col(src, g, col.data());
            src = col.data();
          }
          MatMap out(y.sample(s), a.filters, g.positions());
          out.noalias() = w * ConstMatMap(src, g.patch_rows(), g.positions());
          if (step.bias) {
            for (int f = 0; f < a.filters; ++f) out.row(f).array() += step.bias->value[f];
          }
        }
        break;
      }
      case LayerKind::Dense: {
        const Tensor& x = in(0);
        y = Tensor(batch, out_shape);
        const int fan_in = x.shape.channels;
        MatMap out(y.data.data(), batch, a.units);
        out.noalias() = ConstMatMap(x.data.data(), batch, fan_in) *
                        ConstMatMap(step.kernel->value.data(), fan_in, a.units);
        if (step.bias) {
          for (int s = 0; s < batch; ++s)
            for (int u = 0; u < a.units; ++u) out(s, u) += step.bias->value[u];
        }
        break;
      }
      case LayerKind::BatchNorm: {
        const Tensor& x = in(0);
        y = Tensor(batch, out_shape);
        const int c = x.shape.channels;
        const std::size_t hw = static_cast<std::size_t>(x.shape.height) * x.shape.width;
        const double m = static_cast<double>(batch) * static_cast<double>(hw);
        auto& cache = caches_[step.index];
        cache.inv_std.assign(c, 0.0f);
        const bool batch_stats = mode == Mode::Train;
        if (batch_stats) cache.xhat.assign(x.data.size(), 0.0f);
        for (int ch = 0; ch < c; ++ch) {
          float mean = 0.0f;
          float var = 0.0f;
          if (batch_stats) {
            double sum = 0.0;
            for (int s = 0; s < batch; ++s) {
              const float* p = x.sample(s) + ch * hw;
              for (std::size_t i = 0; i < hw; ++i) sum += p[i];
            }
            const double mu = sum / m;
            double sq = 0.0;
            for (int s = 0; s < batch; ++s) {
              const float* p = x.sample(s) + ch * hw;
              for (std::size_t i = 0; i < hw; ++i) sq += (p[i] - mu) * (p[i] - mu);
            }
            mean = static_cast<float>(mu);
            var = static_cast<float>(sq / m);
            auto& mm = step.moving_mean->value[ch];
            auto& mv = step.moving_var->value[ch];
            mm = kBatchNormMomentum * mm + (1.0f - kBatchNormMomentum) * mean;
            mv = kBatchNormMomentum * mv + (1.0f - kBatchNormMomentum) * var;
          } else {
            mean = step.moving_mean->value[ch];
            var = step.moving_var->value[ch];
          }
          const float inv = 1.0f / std::sqrt(var + kBatchNormEpsilon);
          cache.inv_std[ch] = inv;
          const float gamma = step.gamma->value[ch];
          const float beta = step.beta->value[ch];
          for (int s = 0; s < batch; ++s) {
            const std::size_t base = static_cast<std::size_t>(s) * x.per_sample() + ch * hw;
            for (std::size_t i = 0; i < hw; ++i) {
              const float xh = (x.data[base + i] - mean) * inv;
              if (batch_stats) cache.xhat[base + i] = xh;
              y.data[base + i] = gamma * xh + beta;
            }
          }
        }
        break;
      }
      case LayerKind::ReLU: {
        y = in(0);
        for (auto& v : y.data) v = v > 0.0f ? v : 0.0f;
        break;
      }
      case LayerKind::Sigmoid: {
        y = in(0);
        for (auto& v : y.data) v = sigmoid(v);
        break;
      }
      case LayerKind::Dropout: {
        y = in(0);
        const bool active = (mode == Mode::Train || mode == Mode::McDropout) && a.rate > 0.0;
        if (active) {
          const float rate = static_cast<float>(a.rate);
          const float scale = 1.0f / (1.0f - rate);
          const std::size_t per = y.per_sample();
          for (int s = 0; s < batch; ++s) {
            float* p = y.sample(s);
            for (std::size_t i = 0; i < per; ++i)
              p[i] = dropout_uniform(dropout_seed, step.index, sample_offset + s, i) < rate
                         ? 0.0f
                         : p[i] * scale;
          }
        }
        break;
      }
      case LayerKind::AvgPool:
      case LayerKind::MaxPool: {
        const Tensor& x = in(0);
        y = Tensor(batch, out_shape);
        const int p = a.pool;
        const bool is_max = n.kind == LayerKind::MaxPool;
        auto& cache = caches_[step.index];
        if (is_max) cache.argmax.assign(y.data.size(), 0);
        const float inv_area = 1.0f / static_cast<float>(p * p);
        for (int s = 0; s < batch; ++s) {
          for (int ch = 0; ch < out_shape.channels; ++ch) {
            const float* xc = x.sample(s) + static_cast<std::size_t>(ch) * x.shape.height * x.shape.width;
            float* yc = y.sample(s) + static_cast<std::size_t>(ch) * out_shape.height * out_shape.width;
            for (int oh = 0; oh < out_shape.height; ++oh) {
              for (int ow = 0; ow < out_shape.width; ++ow) {
                float acc = is_max ? -std::numeric_limits<float>::infinity() : 0.0f;
                std::uint32_t best = 0;
                for (int i = 0; i < p; ++i) {
                  for (int j = 0; j < p; ++j) {
                    const std::uint32_t idx =
                        static_cast<std::uint32_t>((oh * p + i) * x.shape.width + ow * p + j);
                    const float v = xc[idx];
                    if (is_max) {
                      if (v > acc) {
                        acc = v;
                        best = idx;
                      }
                    } else {
                      acc += v;
                    }
                  }
                }
                const std::size_t o = static_cast<std::size_t>(oh) * out_shape.width + ow;
                if (is_max) {
                  yc[o] = acc;
                  cache.argmax[static_cast<std::size_t>(s) * y.per_sample() +
                               static_cast<std::size_t>(ch) * out_shape.height * out_shape.width + o] = best;
                } else {
                  yc[o] = acc * inv_area;
                }
              }
            }
          }
        }
        break;
      }
      case LayerKind::GlobalAvgPool:
      case LayerKind::GlobalMaxPool: {
        const Tensor& x = in(0);
        y = Tensor(batch, out_shape);
        const std::size_t hw = static_cast<std::size_t>(x.shape.height) * x.shape.width;
        const bool is_max = n.kind == LayerKind::GlobalMaxPool;
        auto& cache = caches_[step.index];
        if (is_max) cache.argmax.assign(y.data.size(), 0);
        for (int s = 0; s < batch; ++s) {
          for (int ch = 0; ch < x.shape.channels; ++ch) {
            const float* p = x.sample(s) + ch * hw;
            if (is_max) {
              const auto it = std::max_element(p, p + hw);
              y.sample(s)[ch] = *it;
              cache.argmax[static_cast<std::size_t>(s) * x.shape.channels + ch] =
                  static_cast<std::uint32_t>(it - p);
            } else {
              double sum = 0.0;
              for (std::size_t i = 0; i < hw; ++i) sum += p[i];
              y.sample(s)[ch] = static_cast<float>(sum / static_cast<double>(hw));
            }
          }
        }
        break;
      }
      case LayerKind::Flatten: {
        y = in(0);
        y.shape = out_shape;
        break;
      }
      case LayerKind::Concat: {
        y = Tensor(batch, out_shape);
        for (int s = 0; s < batch; ++s) {
          float* dst = y.sample(s);
          for (std::size_t k = 0; k < step.inputs.size(); ++k) {
            const Tensor& x = in(k);
            std::copy(x.sample(s), x.sample(s) + x.per_sample(), dst);
            dst += x.per_sample();
          }
        }
        break;
      }
    }
  }

  std::vector<const Tensor*> outs;
  for (const auto& o : graph_.outputs) outs.push_back(&acts_[slot_of_.at(o)]);
  return outs;
}

void Network::backward(std::span<const Tensor> output_grads) {
  if (acts_.empty()) throw ConfigError("backward called without a cached forward pass");
  if (output_grads.size() != graph_.outputs.size())
    throw ConfigError("backward needs one gradient per output");
  const int batch = acts_.front().batch;
  std::vector<Tensor> grads(steps_.size());
  for (std::size_t k = 0; k < graph_.outputs.size(); ++k) {
    const auto slot = slot_of_.at(graph_.outputs[k]);
    const auto& g = output_grads[k];
    if (g.data.size() != acts_[slot].data.size()) throw ConfigError("output gradient has wrong size");
    if (grads[slot].data.empty()) {
      grads[slot] = g;
    } else {
      for (std::size_t i = 0; i < g.data.size(); ++i) grads[slot].data[i] += g.data[i];
    }
  }
  // Returns the gradient buffer of an input slot, allocating zeros on first use.
  auto grad_of = [&](std::size_t slot) -> Tensor& {
    Tensor& g = grads[slot];
    if (g.data.empty()) g = Tensor(batch, acts_[slot].shape);
    return g;
  };

  for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) {
    auto& step = *it;
    Tensor& dy = grads[step.index];
    if (dy.data.empty()) continue;
    const auto& n = *step.node;
    const auto& a = n.attrs;
    const Tensor& y = acts_[step.index];

    switch (n.kind) {
      case LayerKind::Input:
        break;
      case LayerKind::Conv2D: {
        const Tensor& x = acts_[step.inputs[0]];
        Tensor& dx = grad_of(step.inputs[0]);
        const auto g = conv_geometry(x.shape, y.shape, a);
        ConstMatMap w(step.kernel->value.data(), a.filters, g.patch_rows());
        MatMap dw(step.kernel->grad.data(), a.filters, g.patch_rows());
        std::vector<float> col;
        std::vector<float> dcol(static_cast<std::size_t>(g.patch_rows()) * g.positions());
        if (!g.is_identity()) col.resize(dcol.size());
        for (int s = 0; s < batch; ++s) {
          ConstMatMap dys(dy.sample(s), a.filters, g.positions());
          const float* src = x.sample(s);
          if (!g.is_identity()) {
            im2col(src, g, col.data());
            src = col.data();
          }
          dw.noalias() += dys * ConstMatMap(src, g.patch_rows(), g.positions()).transpose();
          if (step.bias) {
            for (int f = 0; f < a.filters; ++f)
              step.bias->grad[f] += strided_sum(dy.sample(s) + static_cast<std::size_t>(f) * g.positions(), g.positions(), 1);
          }
          if (g.is_identity()) {
            MatMap dxs(dx.sample(s), g.patch_rows(), g.positions());
            dxs.noalias() += w.transpose() * dys;
          } else {
            MatMap dc(dcol.data(), g.patch_rows(), g.positions());
            dc.noalias() = w.transpose() * dys;
            col2im(dcol.data(), g, dx.sample(s));
          }
        }
        break;
      }
      case LayerKind::Dense: {
        const Tensor& x = acts_[step.inputs[0]];
        Tensor& dx = grad_of(step.inputs[0]);
        const int fan_in = x.shape.channels;
        ConstMatMap dym(dy.data.data(), batch, a.units);
        MatMap(step.kernel->grad.data(), fan_in, a.units).noalias() +=
            ConstMatMap(x.data.data(), batch, fan_in).transpose() * dym;
        if (step.bias) {
          for (int u = 0; u < a.units; ++u) step.bias->grad[u] += strided_sum(dy.data.data() + u, batch, a.units);
        }
        MatMap(dx.data.data(), batch, fan_in).noalias() +=
            dym * ConstMatMap(step.kernel->value.data(), fan_in, a.units).transpose();
        break;
      }
      case LayerKind::BatchNorm: {
        const Tensor& x = acts_[step.inputs[0]];
        Tensor& dx = grad_of(step.inputs[0]);
        const auto& cache = caches_[step.index];
        const int c = x.shape.channels;
        const std::size_t hw = static_cast<std::size_t>(x.shape.height) * x.shape.width;
        const double m = static_cast<double>(batch) * static_cast<double>(hw);
        const bool batch_stats = last_mode_ == Mode::Train;
        for (int ch = 0; ch < c; ++ch) {
          const float gamma = step.gamma->value[ch];
          const float inv = cache.inv_std[ch];
          const float mean = batch_stats ? 0.0f : step.moving_mean->value[ch];
          double sum_dy = 0.0;
          double sum_dy_xhat = 0.0;
          for (int s = 0; s < batch; ++s) {
            const std::size_t base = static_cast<std::size_t>(s) * x.per_sample() + ch * hw;
            for (std::size_t i = 0; i < hw; ++i) {
              const float xh = batch_stats ? cache.xhat[base + i] : (x.data[base + i] - mean) * inv;
              sum_dy += dy.data[base + i];
              sum_dy_xhat += static_cast<double>(dy.data[base + i]) * xh;
            }
          }
          step.gamma->grad[ch] += static_cast<float>(sum_dy_xhat);
          step.beta->grad[ch] += static_cast<float>(sum_dy);
          for (int s = 0; s < batch; ++s) {
            const std::size_t base = static_cast<std::size_t>(s) * x.per_sample() + ch * hw;
            for (std::size_t i = 0; i < hw; ++i) {
              if (batch_stats) {
                const float xh = cache.xhat[base + i];
                dx.data[base + i] += static_cast<float>(
                    gamma * inv / m * (m * dy.data[base + i] - sum_dy - xh * sum_dy_xhat));
              } else {
                dx.data[base + i] += dy.data[base + i] * gamma * inv;
              }
            }
          }
        }
        break;
      }
      case LayerKind::ReLU: {
        Tensor& dx = grad_of(step.inputs[0]);
        for (std::size_t i = 0; i < dy.data.size(); ++i)
          if (y.data[i] > 0.0f) dx.data[i] += dy.data[i];
        break;
      }
      case LayerKind::Sigmoid: {
        Tensor& dx = grad_of(step.inputs[0]);
        for (std::size_t i = 0; i < dy.data.size(); ++i)
          dx.data[i] += dy.data[i] * y.data[i] * (1.0f - y.data[i]);
        break;
      }
      case LayerKind::Dropout: {
        Tensor& dx = grad_of(step.inputs[0]);
        const bool active = (last_mode_ == Mode::Train || last_mode_ == Mode::McDropout) && a.rate > 0.0;
        if (!active) {
          for (std::size_t i = 0; i < dy.data.size(); ++i) dx.data[i] += dy.data[i];
          break;
        }
        const float rate = static_cast<float>(a.rate);
        const float scale = 1.0f / (1.0f - rate);
        const std::size_t per = dy.per_sample();
        for (int s = 0; s < batch; ++s) {
          for (std::size_t i = 0; i < per; ++i) {
            if (dropout_uniform(last_seed_, step.index, last_offset_ + s, i) >= rate)
              dx.data[static_cast<std::size_t>(s) * per + i] += dy.data[static_cast<std::size_t>(s) * per + i] * scale;
          }
        }
        break;
      }
      case LayerKind::AvgPool:
      case LayerKind::MaxPool: {
        const Tensor& x = acts_[step.inputs[0]];
        Tensor& dx = grad_of(step.inputs[0]);
        const int p = a.pool;
        const bool is_max = n.kind == LayerKind::MaxPool;
        const auto& cache = caches_[step.index];
        const float inv_area = 1.0f / static_cast<float>(p * p);
        const std::size_t in_hw = static_cast<std::size_t>(x.shape.height) * x.shape.width;
        const std::size_t out_hw = static_cast<std::size_t>(y.shape.height) * y.shape.width;
        for (int s = 0; s < batch; ++s) {
          for (int ch = 0; ch < y.shape.channels; ++ch) {
            float* dxc = dx.sample(s) + ch * in_hw;
            const float* dyc = dy.sample(s) + ch * out_hw;
            for (int oh = 0; oh < y.shape.height; ++oh) {
              for (int ow = 0; ow < y.shape.width; ++ow) {
                const std::size_t o = static_cast<std::size_t>(oh) * y.shape.width + ow;
                if (is_max) {
                  dxc[cache.argmax[static_cast<std::size_t>(s) * y.per_sample() + ch * out_hw + o]] += dyc[o];
                } else {
                  const float gv = dyc[o] * inv_area;
                  for (int i = 0; i < p; ++i)
                    for (int j = 0; j < p; ++j)
                      dxc[(oh * p + i) * x.shape.width + ow * p + j] += gv;
                }
              }
            }
          }
        }
        break;
      }
      case LayerKind::GlobalAvgPool:
      case LayerKind::GlobalMaxPool: {
        const Tensor& x = acts_[step.inputs[0]];
        Tensor& dx = grad_of(step.inputs[0]);
        const std::size_t hw = static_cast<std::size_t>(x.shape.height) * x.shape.width;
        const bool is_max = n.kind == LayerKind::GlobalMaxPool;
        const auto& cache = caches_[step.index];
        for (int s = 0; s < batch; ++s) {
          for (int ch = 0; ch < x.shape.channels; ++ch) {
            const float g = dy.sample(s)[ch];
            float* d = dx.sample(s) + ch * hw;
            if (is_max) {
              d[cache.argmax[static_cast<std::size_t>(s) * x.shape.channels + ch]] += g;
            } else {
              const float gv = g / static_cast<float>(hw);
              for (std::size_t i = 0; i < hw; ++i) d[i] += gv;
            }
          }
        }
        break;
      }
      case LayerKind::Flatten: {
        Tensor& dx = grad_of(step.inputs[0]);
        for (std::size_t i = 0; i < dy.data.size(); ++i) dx.data[i] += dy.data[i];
        break;
      }
      case LayerKind::Concat: {
        for (int s = 0; s < batch; ++s) {
          const float* src = dy.sample(s);
          for (std::size_t k = 0; k < step.inputs.size(); ++k) {
            Tensor& dx = grad_of(step.inputs[k]);
            const std::size_t per = dx.per_sample();
            float* d = dx.sample(s);
            for (std::size_t i = 0; i < per; ++i) d[i] += src[i];
            src += per;
          }
        }
        break;
      }
    }
    // This node's gradient is fully consumed.
    Tensor{}.data.swap(dy.data);
  }
}

}  // namespace sonarmatch
