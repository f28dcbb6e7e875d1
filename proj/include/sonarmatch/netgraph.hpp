#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

namespace sonarmatch {

enum class LayerKind {
  Input,
  Conv2D,
  Dense,
  BatchNorm,
  ReLU,
  Sigmoid,
  Dropout,
  AvgPool,
  MaxPool,
  GlobalAvgPool,
  GlobalMaxPool,
  Flatten,
  Concat,
};

enum class Padding { Same, Valid };

/// Weight initialiser for Conv2D/Dense kernels. Biases start at zero.
enum class Initializer { GlorotUniform, GlorotNormal, RandomNormal };

std::string to_string(LayerKind k);
std::string to_string(Padding p);
std::string to_string(Initializer i);

/// Activation shape of one sample: spatial (channels, height, width) or a
/// flat feature vector (units).
struct Shape {
  int channels = 0;
  int height = 1;
  int width = 1;
  bool spatial = true;

  static Shape image(int c, int h, int w) { return {c, h, w, true}; }
  static Shape flat(int units) { return {units, 1, 1, false}; }
  std::int64_t size() const noexcept {
    return static_cast<std::int64_t>(channels) * height * width;
  }
  friend bool operator==(const Shape&, const Shape&) = default;
};

std::string to_string(const Shape& s);

struct LayerAttrs {
  int filters = 0;   // Conv2D
  int kernel = 0;    // Conv2D
  int stride = 1;    // Conv2D
  Padding padding = Padding::Same;
  bool use_bias = true;                          // Conv2D, Dense
  Initializer init = Initializer::GlorotUniform;  // Conv2D, Dense
  int units = 0;     // Dense
  double rate = 0;   // Dropout drop probability
  int pool = 0;      // AvgPool/MaxPool window == stride
  Shape input;       // Input

  friend bool operator==(const LayerAttrs&, const LayerAttrs&) = default;
};

struct LayerNode {
  std::string id;
  LayerKind kind = LayerKind::Input;
  LayerAttrs attrs;
  std::vector<std::string> inputs;
};

/// Kind-specific description of a learnable (or running-statistic) tensor.
struct ParamSpec {
  std::string name;        // "<owner node id>/<role>"
  std::string owner;       // canonical node id (first member of a shared group)
  std::vector<int> shape;  // Conv kernel (F, C, k, k); Dense kernel (in, out)
  bool trainable = true;
  Initializer init = Initializer::GlorotUniform;
  std::string role;  // kernel | bias | gamma | beta | moving_mean | moving_variance
  std::int64_t fan_in = 0;
  std::int64_t fan_out = 0;

  std::int64_t size() const noexcept {
    std::int64_t n = 1;
    for (int d : shape) n *= d;
    return n;
  }
};

/// Backend-independent layer graph. Node order is free; evaluation order is
/// derived by topological sort. Input nodes appear in `inputs()` in the
/// order they were added; `outputs` names one node per head.
class LayerGraph {
 public:
  std::vector<LayerNode> nodes;
  std::vector<std::string> outputs;
  std::vector<std::vector<std::string>> shared_groups;

  LayerGraph& add(LayerNode node);

  const LayerNode& node(const std::string& id) const;
  bool contains(const std::string& id) const;
  std::vector<std::string> input_ids() const;
  std::vector<Shape> input_shapes() const;

  /// Node ids in a deterministic topological order (Kahn, ties by insertion).
  /// Throws ConfigError on cycles or unresolved inputs.
  std::vector<std::string> topological_order() const;

  /// Checks attribute completeness, acyclicity, outputs, and shared groups.
  void validate() const;

  /// Node id whose parameters `id` uses (itself unless in a shared group).
  std::string parameter_owner(const std::string& id) const;
};

/// Standard shape rules; "same" conv keeps ceil(dim/stride), pooling floors.
/// Throws ConfigError on mismatched Concat inputs or a spatial size of 0.
std::map<std::string, Shape> infer_shapes(const LayerGraph& g);

/// Parameter tensors in deterministic order, one entry per canonical owner.
std::vector<ParamSpec> parameter_specs(const LayerGraph& g);

/// Conv2D k*k*in*filters (+filters bias); Dense in*out (+out); BatchNorm
/// 2*channels (+2*channels running statistics when include_non_trainable).
/// Shared groups are counted once.
std::int64_t count_params(const LayerGraph& g, bool include_non_trainable = false);

/// in_ch + layers * growth.
int dense_block_out_channels(int in_ch, int layers, int growth);

/// floor(in_ch * compression), at least 1. compression must be in (0,1].
int transition_out_channels(int in_ch, double compression);

/// True when some Dropout node has a positive rate.
bool has_active_dropout(const LayerGraph& g);

/// Copy of `g` with every Dropout rate replaced.
LayerGraph with_dropout_rate(const LayerGraph& g, double rate);

void to_json(nlohmann::json& j, const Shape& s);
void from_json(const nlohmann::json& j, Shape& s);
void to_json(nlohmann::json& j, const LayerNode& n);
void from_json(const nlohmann::json& j, LayerNode& n);
void to_json(nlohmann::json& j, const LayerGraph& g);
void from_json(const nlohmann::json& j, LayerGraph& g);

}  // namespace sonarmatch
