#include "sonarmatch/architectures.hpp"

#include <set>

#include "sonarmatch/error.hpp"

namespace sonarmatch {

namespace {

class GraphBuilder {
 public:
  explicit GraphBuilder(LayerGraph& g) : g_(g) {}

  std::string input(const std::string& id, Shape s) {
    LayerNode n{id, LayerKind::Input, {}, {}};
    n.attrs.input = s;
    return push(std::move(n));
  }
  std::string conv(const std::string& id, const std::string& in, int filters, int kernel,
                   Initializer init = Initializer::GlorotUniform) {
    LayerNode n{id, LayerKind::Conv2D, {}, {in}};
    n.attrs.filters = filters;
    n.attrs.kernel = kernel;
    n.attrs.padding = Padding::Same;
    n.attrs.init = init;
    return push(std::move(n));
  }
  std::string dense(const std::string& id, const std::string& in, int units,
                    Initializer init = Initializer::GlorotUniform) {
    LayerNode n{id, LayerKind::Dense, {}, {in}};
    n.attrs.units = units;
    n.attrs.init = init;
    return push(std::move(n));
  }
  std::string dropout(const std::string& id, const std::string& in, double rate) {
    LayerNode n{id, LayerKind::Dropout, {}, {in}};
    n.attrs.rate = rate;
    return push(std::move(n));
  }
  std::string pool(const std::string& id, const std::string& in, LayerKind kind, int size) {
    LayerNode n{id, kind, {}, {in}};
    n.attrs.pool = size;
    return push(std::move(n));
  }
  std::string simple(const std::string& id, LayerKind kind, std::vector<std::string> inputs) {
    return push(LayerNode{id, kind, {}, std::move(inputs)});
  }

 private:
  std::string push(LayerNode n) {
    auto id = n.id;
    g_.add(std::move(n));
    return id;
  }
  LayerGraph& g_;
};

struct DenseNetTrunk {
  std::vector<int> block_layers;
  int growth = 12;
  int initial_filters = 32;
  int initial_kernel = 3;
  int transition_kernel = 1;
  double dropout = 0.0;
  double compression = 0.5;
  bool bottleneck = false;
};

struct TrunkOut {
  std::string last;
  int channels = 0;
};

// conv0 -> [dense block -> transition]* -> dense block -> BN -> ReLU.
// Composite layer: BN -> ReLU -> (Conv1x1 4g -> BN -> ReLU ->) Conv3x3 g -> Dropout.
TrunkOut densenet_trunk(GraphBuilder& b, const std::string& p, const std::string& input,
                        const DenseNetTrunk& t) {
  if (t.block_layers.empty()) throw ConfigError("DenseNet needs at least one dense block");
  std::string x = b.conv(p + "conv0", input, t.initial_filters, t.initial_kernel);
  int channels = t.initial_filters;
  for (std::size_t blk = 0; blk < t.block_layers.size(); ++blk) {
    const auto bp = p + "block" + std::to_string(blk + 1) + "/";
    if (t.block_layers[blk] < 0) throw ConfigError("dense block layer count must be >= 0");
    for (int l = 0; l < t.block_layers[blk]; ++l) {
      const auto lp = bp + "layer" + std::to_string(l + 1) + "/";
      std::string y = b.simple(lp + "bn", LayerKind::BatchNorm, {x});
      y = b.simple(lp + "relu", LayerKind::ReLU, {y});
      if (t.bottleneck) {
        y = b.conv(lp + "conv1x1", y, 4 * t.growth, 1);
        y = b.simple(lp + "bn2", LayerKind::BatchNorm, {y});
        y = b.simple(lp + "relu2", LayerKind::ReLU, {y});
      }
      y = b.conv(lp + "conv", y, t.growth, 3);
      if (t.dropout > 0.0) y = b.dropout(lp + "drop", y, t.dropout);
      x = b.simple(lp + "concat", LayerKind::Concat, {x, y});
      channels += t.growth;
    }
    if (blk + 1 < t.block_layers.size()) {
      const auto tp = p + "transition" + std::to_string(blk + 1) + "/";
      const int out = transition_out_channels(channels, t.compression);
      x = b.simple(tp + "bn", LayerKind::BatchNorm, {x});
      x = b.simple(tp + "relu", LayerKind::ReLU, {x});
      x = b.conv(tp + "conv", x, out, t.transition_kernel);
      x = b.pool(tp + "pool", x, LayerKind::AvgPool, 2);
      channels = out;
    }
  }
  x = b.simple(p + "final/bn", LayerKind::BatchNorm, {x});
  x = b.simple(p + "final/relu", LayerKind::ReLU, {x});
  return {x, channels};
}

// Pairs every node under prefix `a` with its twin under prefix `b`.
void share_branches(LayerGraph& g, const std::string& a, const std::string& b) {
  for (const auto& n : g.nodes) {
    if (n.kind == LayerKind::Input || n.id.rfind(a, 0) != 0) continue;
    const auto twin = b + n.id.substr(a.size());
    if (g.contains(twin)) g.shared_groups.push_back({n.id, twin});
  }
}

void require_positive(int v, const char* what) {
  if (v < 1) throw ConfigError(std::string(what) + " must be >= 1");
}

void require_rate(double v, const char* what) {
  if (!(v >= 0.0 && v < 1.0)) throw ConfigError(std::string(what) + " must lie in [0,1)");
}

template <class Config>
Config strict_parse(const nlohmann::json& j, ArchId arch) {
  if (!j.is_object()) throw ConfigError("model config must be a JSON object");
  const nlohmann::json defaults = Config{};
  for (const auto& [key, value] : j.items()) {
    if (!defaults.contains(key))
      throw ConfigError("unknown " + to_string(arch) + " config field '" + key + "'");
  }
  nlohmann::json merged = defaults;
  merged.update(j);
  try {
    return merged.get<Config>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad ") + to_string(arch) + " config: " + e.what());
  }
}

std::string pooling_name(PoolingKind p) { return p == PoolingKind::Avg ? "avg" : "max"; }

PoolingKind pooling_from(const std::string& s) {
  if (s == "avg") return PoolingKind::Avg;
  if (s == "max") return PoolingKind::Max;
  throw ConfigError("pooling must be 'avg' or 'max'");
}

std::string trunk_pooling_name(TrunkPooling p) { return p == TrunkPooling::Flatten ? "flatten" : "avg"; }

TrunkPooling trunk_pooling_from(const std::string& s) {
  if (s == "flatten") return TrunkPooling::Flatten;
  if (s == "avg") return TrunkPooling::Avg;
  throw ConfigError("trunk_pooling must be 'flatten' or 'avg'");
}

}  // namespace

std::string to_string(ArchId a) {
  switch (a) {
    case ArchId::DTC:
      return "DTC";
    case ArchId::DS:
      return "DS";
    case ArchId::VGG_CL:
      return "VGG_CL";
  }
  return "?";
}

ArchId arch_from_string(const std::string& s) {
  if (s == "DTC") return ArchId::DTC;
  if (s == "DS") return ArchId::DS;
  if (s == "VGG_CL") return ArchId::VGG_CL;
  throw ConfigError("unknown architecture id '" + s + "' (expected DTC, DS or VGG_CL)");
}

std::string to_string(OutputSemantics s) {
  return s == OutputSemantics::MatchProbability ? "MatchProbability" : "EmbeddingDistance";
}

ModelSpec build_dtc(const DtcConfig& c) {
  require_positive(c.growth, "growth");
  require_positive(c.initial_filters, "initial_filters");
  require_positive(c.initial_kernel, "initial_kernel");
  require_positive(c.transition_kernel, "transition_kernel");
  require_rate(c.dropout, "dropout");
  ModelSpec spec;
  spec.arch = ArchId::DTC;
  spec.output_semantics = OutputSemantics::MatchProbability;
  spec.label_orientation = LabelOrientation::MatchIsOne;
  spec.config = c;
  GraphBuilder b(spec.graph);
  const auto in = b.input("input", Shape::image(2, c.input_height, c.input_width));
  DenseNetTrunk t{c.block_layers, c.growth, c.initial_filters, c.initial_kernel,
                  c.transition_kernel, c.dropout, c.compression, c.bottleneck};
  const auto trunk = densenet_trunk(b, "", in, t);
  const auto pooled = b.simple("pool", c.pooling == PoolingKind::Avg ? LayerKind::GlobalAvgPool
                                                                      : LayerKind::GlobalMaxPool,
                               {trunk.last});
  const auto logit = b.dense("fc", pooled, 1);
  spec.graph.outputs = {b.simple("prob", LayerKind::Sigmoid, {logit})};
  infer_shapes(spec.graph);
  return spec;
}

ModelSpec build_ds(const DsConfig& c) {
  require_positive(c.growth, "growth");
  require_positive(c.initial_filters, "initial_filters");
  require_positive(c.fc_units, "fc_units");
  require_positive(c.final_pool, "final_pool");
  require_rate(c.densenet_dropout, "densenet_dropout");
  require_rate(c.fc_dropout, "fc_dropout");
  ModelSpec spec;
  spec.arch = ArchId::DS;
  spec.output_semantics = OutputSemantics::MatchProbability;
  spec.label_orientation = LabelOrientation::MatchIsOne;
  spec.config = c;
  GraphBuilder b(spec.graph);
  DenseNetTrunk t{c.block_layers, c.growth, c.initial_filters, c.initial_kernel,
                  c.transition_kernel, c.densenet_dropout, c.compression, c.bottleneck};
  std::vector<std::string> features;
  for (const char* side : {"a", "b"}) {
    const std::string p = std::string(side) + "/";
    const auto in = b.input(std::string("input_") + side, Shape::image(1, c.input_height, c.input_width));
    const auto trunk = densenet_trunk(b, p, in, t);
    if (c.trunk_pooling == TrunkPooling::Flatten) {
      auto x = trunk.last;
      if (c.final_pool > 1) x = b.pool(p + "final/pool", x, LayerKind::AvgPool, c.final_pool);
      features.push_back(b.simple(p + "flatten", LayerKind::Flatten, {x}));
    } else {
      features.push_back(b.simple(p + "gap", LayerKind::GlobalAvgPool, {trunk.last}));
    }
  }
  share_branches(spec.graph, "a/", "b/");
  auto x = b.simple("merge", LayerKind::Concat, features);
  x = b.dense("fc1", x, c.fc_units);
  x = b.simple("fc1/relu", LayerKind::ReLU, {x});
  if (c.fc_dropout > 0.0) x = b.dropout("fc1/drop", x, c.fc_dropout);
  x = b.dense("fc2", x, 1);
  spec.graph.outputs = {b.simple("prob", LayerKind::Sigmoid, {x})};
  infer_shapes(spec.graph);
  return spec;
}

ModelSpec build_vgg_siamese(const VggClConfig& c) {
  require_positive(c.base_filters, "base_filters");
  require_positive(c.kernel, "kernel");
  require_positive(c.fc_layers, "fc_layers");
  require_positive(c.embedding_units, "embedding_units");
  require_rate(c.dropout, "dropout");
  if (c.conv_blocks.empty()) throw ConfigError("conv_blocks must not be empty");
  if (!(c.margin > 0.0)) throw ConfigError("contrastive margin must be > 0");
  ModelSpec spec;
  spec.arch = ArchId::VGG_CL;
  spec.output_semantics = OutputSemantics::EmbeddingDistance;
  spec.label_orientation = LabelOrientation::MatchIsZero;
  spec.margin = c.margin;
  spec.config = c;
  GraphBuilder b(spec.graph);
  for (const char* side : {"a", "b"}) {
    const std::string p = std::string(side) + "/";
    auto x = b.input(std::string("input_") + side, Shape::image(1, c.input_height, c.input_width));
    int filters = c.base_filters;
    for (std::size_t blk = 0; blk < c.conv_blocks.size(); ++blk) {
      require_positive(c.conv_blocks[blk], "conv_blocks entries");
      const auto bp = p + "block" + std::to_string(blk + 1) + "/";
      for (int k = 0; k < c.conv_blocks[blk]; ++k) {
        const auto cp = bp + "conv" + std::to_string(k + 1);
        x = b.conv(cp, x, filters, c.kernel, Initializer::RandomNormal);
        if (c.batch_norm) x = b.simple(cp + "/bn", LayerKind::BatchNorm, {x});
        x = b.simple(cp + "/relu", LayerKind::ReLU, {x});
      }
      x = b.pool(bp + "pool", x, LayerKind::MaxPool, 2);
      filters = std::min(filters * 2, c.base_filters * 8);
    }
    x = b.simple(p + "flatten", LayerKind::Flatten, {x});
    for (int k = 1; k < c.fc_layers; ++k) {
      const auto fp = p + "fc" + std::to_string(k);
      x = b.dense(fp, x, c.embedding_units, Initializer::GlorotNormal);
      x = b.simple(fp + "/relu", LayerKind::ReLU, {x});
      if (c.dropout > 0.0) x = b.dropout(fp + "/drop", x, c.dropout);
    }
    x = b.dense(p + "embedding", x, c.embedding_units, Initializer::GlorotNormal);
    if (c.dropout > 0.0) x = b.dropout(p + "embedding/drop", x, c.dropout);
    spec.graph.outputs.push_back(x);
  }
  share_branches(spec.graph, "a/", "b/");
  infer_shapes(spec.graph);
  return spec;
}

ModelSpec build_model(ArchId arch, const nlohmann::json& config) {
  const auto& cfg = config.is_null() ? nlohmann::json::object() : config;
  switch (arch) {
    case ArchId::DTC:
      return build_dtc(strict_parse<DtcConfig>(cfg, arch));
    case ArchId::DS:
      return build_ds(strict_parse<DsConfig>(cfg, arch));
    case ArchId::VGG_CL:
      return build_vgg_siamese(strict_parse<VggClConfig>(cfg, arch));
  }
  throw ConfigError("unknown architecture");
}

nlohmann::json default_config(ArchId arch) {
  switch (arch) {
    case ArchId::DTC:
      return DtcConfig{};
    case ArchId::DS:
      return DsConfig{};
    case ArchId::VGG_CL:
      return VggClConfig{};
  }
  return {};
}

void to_json(nlohmann::json& j, const DtcConfig& c) {
  j = {{"block_layers", c.block_layers}, {"growth", c.growth},
       {"initial_filters", c.initial_filters}, {"dropout", c.dropout},
       {"compression", c.compression}, {"bottleneck", c.bottleneck},
       {"pooling", pooling_name(c.pooling)}, {"input_height", c.input_height},
       {"input_width", c.input_width}, {"initial_kernel", c.initial_kernel},
       {"transition_kernel", c.transition_kernel}};
}

void from_json(const nlohmann::json& j, DtcConfig& c) {
  c.block_layers = j.at("block_layers").get<std::vector<int>>();
  c.growth = j.at("growth").get<int>();
  c.initial_filters = j.at("initial_filters").get<int>();
  c.dropout = j.at("dropout").get<double>();
  c.compression = j.at("compression").get<double>();
  c.bottleneck = j.at("bottleneck").get<bool>();
  c.pooling = pooling_from(j.at("pooling").get<std::string>());
  c.input_height = j.at("input_height").get<int>();
  c.input_width = j.at("input_width").get<int>();
  c.initial_kernel = j.at("initial_kernel").get<int>();
  c.transition_kernel = j.at("transition_kernel").get<int>();
}

void to_json(nlohmann::json& j, const DsConfig& c) {
  j = {{"block_layers", c.block_layers}, {"growth", c.growth},
       {"initial_filters", c.initial_filters}, {"densenet_dropout", c.densenet_dropout},
       {"compression", c.compression}, {"bottleneck", c.bottleneck},
       {"trunk_pooling", trunk_pooling_name(c.trunk_pooling)}, {"fc_units", c.fc_units},
       {"fc_dropout", c.fc_dropout}, {"input_height", c.input_height},
       {"input_width", c.input_width}, {"initial_kernel", c.initial_kernel},
       {"transition_kernel", c.transition_kernel}, {"final_pool", c.final_pool}};
}

void from_json(const nlohmann::json& j, DsConfig& c) {
  c.block_layers = j.at("block_layers").get<std::vector<int>>();
  c.growth = j.at("growth").get<int>();
  c.initial_filters = j.at("initial_filters").get<int>();
  c.densenet_dropout = j.at("densenet_dropout").get<double>();
  c.compression = j.at("compression").get<double>();
  c.bottleneck = j.at("bottleneck").get<bool>();
  c.trunk_pooling = trunk_pooling_from(j.at("trunk_pooling").get<std::string>());
  c.fc_units = j.at("fc_units").get<int>();
  c.fc_dropout = j.at("fc_dropout").get<double>();
  c.input_height = j.at("input_height").get<int>();
  c.input_width = j.at("input_width").get<int>();
  c.initial_kernel = j.at("initial_kernel").get<int>();
  c.transition_kernel = j.at("transition_kernel").get<int>();
  c.final_pool = j.at("final_pool").get<int>();
}

void to_json(nlohmann::json& j, const VggClConfig& c) {
  j = {{"base_filters", c.base_filters}, {"kernel", c.kernel},
       {"fc_layers", c.fc_layers}, {"embedding_units", c.embedding_units},
       {"batch_norm", c.batch_norm}, {"dropout", c.dropout},
       {"conv_blocks", c.conv_blocks}, {"input_height", c.input_height},
       {"input_width", c.input_width}, {"margin", c.margin}};
}

void from_json(const nlohmann::json& j, VggClConfig& c) {
  c.base_filters = j.at("base_filters").get<int>();
  c.kernel = j.at("kernel").get<int>();
  c.fc_layers = j.at("fc_layers").get<int>();
  c.embedding_units = j.at("embedding_units").get<int>();
  c.batch_norm = j.at("batch_norm").get<bool>();
  c.dropout = j.at("dropout").get<double>();
  c.conv_blocks = j.at("conv_blocks").get<std::vector<int>>();
  c.input_height = j.at("input_height").get<int>();
  c.input_width = j.at("input_width").get<int>();
  c.margin = j.at("margin").get<double>();
}

}  // namespace sonarmatch
