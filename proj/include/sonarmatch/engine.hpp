#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "sonarmatch/netgraph.hpp"

namespace sonarmatch {

/// Batch of activations in NCHW layout (flat shapes use C only).
struct Tensor {
  int batch = 0;
  Shape shape;
  std::vector<float> data;

  Tensor() = default;
  Tensor(int batch, Shape shape) : batch(batch), shape(shape), data(static_cast<std::size_t>(batch) * shape.size(), 0.0f) {}

  std::size_t per_sample() const noexcept { return static_cast<std::size_t>(shape.size()); }
  float* sample(int n) noexcept { return data.data() + static_cast<std::size_t>(n) * per_sample(); }
  const float* sample(int n) const noexcept { return data.data() + static_cast<std::size_t>(n) * per_sample(); }
};

struct Parameter {
  std::vector<int> shape;
  std::vector<float> value;
  std::vector<float> grad;
  bool trainable = true;
};

/// Named tensor store; names are "<canonical node id>/<role>".
using ParameterStore = std::map<std::string, Parameter>;

/// Train: dropout on, BatchNorm on batch statistics (and updates running
/// statistics). Inference: dropout off, running statistics. McDropout:
/// dropout on, running statistics.
enum class Mode { Train, Inference, McDropout };

/// BatchNorm constants (running-average momentum and variance epsilon).
inline constexpr float kBatchNormMomentum = 0.99f;
inline constexpr float kBatchNormEpsilon = 1e-3f;

/// Executes a LayerGraph: forward, reverse-mode gradients, parameter storage.
/// Parameters of shared-group members are one tensor, so sharing is exact.
class Network {
 public:
  explicit Network(LayerGraph graph);

  const LayerGraph& graph() const noexcept { return graph_; }
  const std::map<std::string, Shape>& shapes() const noexcept { return shapes_; }
  ParameterStore& parameters() noexcept { return params_; }
  const ParameterStore& parameters() const noexcept { return params_; }

  /// Initialises every parameter from its spec's initializer.
  void initialize(std::uint64_t seed);

  /// `inputs` follow graph().input_ids(). Returns the outputs in
  /// graph().outputs order; the pointers stay valid until the next forward.
  /// Dropout masks are a pure function of (dropout_seed, node, sample_offset
  /// + sample, element).
  std::vector<const Tensor*> forward(std::span<const Tensor> inputs, Mode mode,
                                     std::uint64_t dropout_seed = 0,
                                     std::uint64_t sample_offset = 0);

  /// Back-propagates gradients of a scalar objective w.r.t. the outputs of
  /// the last forward pass; parameter gradients accumulate into
  /// Parameter::grad.
  void backward(std::span<const Tensor> output_grads);

  /// Copies values from a store with identical names and shapes.
  void assign_values(const ParameterStore& values);

  void zero_grad();
  /// Drops cached activations.
  void release();

  std::int64_t trainable_count() const;

 private:
  struct Step {
    const LayerNode* node = nullptr;
    std::size_t index = 0;
    std::vector<std::size_t> inputs;
    Parameter* kernel = nullptr;
    Parameter* bias = nullptr;
    Parameter* gamma = nullptr;
    Parameter* beta = nullptr;
    Parameter* moving_mean = nullptr;
    Parameter* moving_var = nullptr;
  };

  struct Cache {
    std::vector<float> inv_std;       // BatchNorm
    std::vector<float> xhat;          // BatchNorm
    std::vector<std::uint32_t> argmax;  // MaxPool / GlobalMaxPool
  };

  void bind_parameters();

  LayerGraph graph_;
  std::map<std::string, Shape> shapes_;
  std::vector<std::string> order_;
  std::vector<Step> steps_;
  std::map<std::string, std::size_t> slot_of_;
  ParameterStore params_;

  std::vector<Tensor> acts_;
  std::vector<Cache> caches_;
  Mode last_mode_ = Mode::Inference;
  std::uint64_t last_seed_ = 0;
  std::uint64_t last_offset_ = 0;

 public:
  Network(const Network& other);
  Network& operator=(const Network& other);
  Network(Network&&) noexcept = default;
  Network& operator=(Network&&) noexcept = default;
};

}  // namespace sonarmatch
