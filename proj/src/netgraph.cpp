#include "sonarmatch/netgraph.hpp"

#include <algorithm>
#include <cmath>
#include <queue>
#include <set>
#include <unordered_map>

#include "sonarmatch/error.hpp"

namespace sonarmatch {

namespace {

const std::vector<std::pair<LayerKind, const char*>>& kind_names() {
  static const std::vector<std::pair<LayerKind, const char*>> names = {
      {LayerKind::Input, "Input"},
      {LayerKind::Conv2D, "Conv2D"},
      {LayerKind::Dense, "Dense"},
      {LayerKind::BatchNorm, "BatchNorm"},
      {LayerKind::ReLU, "ReLU"},
      {LayerKind::Sigmoid, "Sigmoid"},
      {LayerKind::Dropout, "Dropout"},
      {LayerKind::AvgPool, "AvgPool"},
      {LayerKind::MaxPool, "MaxPool"},
      {LayerKind::GlobalAvgPool, "GlobalAvgPool"},
      {LayerKind::GlobalMaxPool, "GlobalMaxPool"},
      {LayerKind::Flatten, "Flatten"},
      {LayerKind::Concat, "Concat"},
  };
  return names;
}

LayerKind kind_from_string(const std::string& s) {
  for (const auto& [k, n] : kind_names())
    if (s == n) return k;
  throw ConfigError("unknown layer kind: " + s);
}

Padding padding_from_string(const std::string& s) {
  if (s == "same") return Padding::Same;
  if (s == "valid") return Padding::Valid;
  throw ConfigError("unknown padding: " + s);
}

Initializer initializer_from_string(const std::string& s) {
  if (s == "glorot_uniform") return Initializer::GlorotUniform;
  if (s == "glorot_normal") return Initializer::GlorotNormal;
  if (s == "random_normal") return Initializer::RandomNormal;
  throw ConfigError("unknown initializer: " + s);
}

std::size_t expected_inputs(LayerKind k) {
  switch (k) {
    case LayerKind::Input:
      return 0;
    case LayerKind::Concat:
      return 2;  // at least
    default:
      return 1;
  }
}

void check_attrs(const LayerNode& n) {
  const auto& a = n.attrs;
  auto fail = [&](const std::string& why) {
    throw ConfigError("node '" + n.id + "' (" + to_string(n.kind) + "): " + why);
  };
  switch (n.kind) {
    case LayerKind::Input:
      if (a.input.channels < 1 || a.input.height < 1 || a.input.width < 1)
        fail("input shape must be positive");
      break;
    case LayerKind::Conv2D:
      if (a.filters < 1) fail("filters must be >= 1");
      if (a.kernel < 1) fail("kernel must be >= 1");
      if (a.stride < 1) fail("stride must be >= 1");
      break;
    case LayerKind::Dense:
      if (a.units < 1) fail("units must be >= 1");
      break;
    case LayerKind::Dropout:
      if (!(a.rate >= 0.0 && a.rate < 1.0)) fail("dropout rate must lie in [0,1)");
      break;
    case LayerKind::AvgPool:
    case LayerKind::MaxPool:
      if (a.pool < 1) fail("pool size must be >= 1");
      break;
    default:
      break;
  }
  const auto want = expected_inputs(n.kind);
  if (n.kind == LayerKind::Concat ? n.inputs.size() < want : n.inputs.size() != want)
    fail("wrong number of inputs (" + std::to_string(n.inputs.size()) + ")");
}

}  // namespace

std::string to_string(LayerKind k) {
  for (const auto& [kind, name] : kind_names())
    if (kind == k) return name;
  return "?";
}

std::string to_string(Padding p) { return p == Padding::Same ? "same" : "valid"; }

std::string to_string(Initializer i) {
  switch (i) {
    case Initializer::GlorotUniform:
      return "glorot_uniform";
    case Initializer::GlorotNormal:
      return "glorot_normal";
    case Initializer::RandomNormal:
      return "random_normal";
  }
  return "?";
}

std::string to_string(const Shape& s) {
  if (!s.spatial) return "(" + std::to_string(s.channels) + ")";
  return "(" + std::to_string(s.channels) + "," + std::to_string(s.height) + "," +
         std::to_string(s.width) + ")";
}

LayerGraph& LayerGraph::add(LayerNode node) {
  nodes.push_back(std::move(node));
  return *this;
}

const LayerNode& LayerGraph::node(const std::string& id) const {
  for (const auto& n : nodes)
    if (n.id == id) return n;
  throw ConfigError("no node named '" + id + "'");
}

bool LayerGraph::contains(const std::string& id) const {
  return std::any_of(nodes.begin(), nodes.end(), [&](const LayerNode& n) { return n.id == id; });
}

std::vector<std::string> LayerGraph::input_ids() const {
  std::vector<std::string> ids;
  for (const auto& n : nodes)
    if (n.kind == LayerKind::Input) ids.push_back(n.id);
  return ids;
}

std::vector<Shape> LayerGraph::input_shapes() const {
  std::vector<Shape> shapes;
  for (const auto& n : nodes)
    if (n.kind == LayerKind::Input) shapes.push_back(n.attrs.input);
  return shapes;
}

std::vector<std::string> LayerGraph::topological_order() const {
  std::unordered_map<std::string, std::size_t> pos;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    if (!pos.emplace(nodes[i].id, i).second)
      throw ConfigError("duplicate node id '" + nodes[i].id + "'");
  }
  std::vector<std::size_t> indegree(nodes.size(), 0);
  std::vector<std::vector<std::size_t>> consumers(nodes.size());
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    for (const auto& in : nodes[i].inputs) {
      auto it = pos.find(in);
      if (it == pos.end())
        throw ConfigError("node '" + nodes[i].id + "' has unresolved input '" + in + "'");
      consumers[it->second].push_back(i);
      ++indegree[i];
    }
  }
  std::priority_queue<std::size_t, std::vector<std::size_t>, std::greater<>> ready;
  for (std::size_t i = 0; i < nodes.size(); ++i)
    if (indegree[i] == 0) ready.push(i);
  std::vector<std::string> order;
  order.reserve(nodes.size());
  while (!ready.empty()) {
    const auto i = ready.top();
    ready.pop();
    order.push_back(nodes[i].id);
    for (auto c : consumers[i])
      if (--indegree[c] == 0) ready.push(c);
  }
  if (order.size() != nodes.size()) throw ConfigError("layer graph contains a cycle");
  return order;
}

void LayerGraph::validate() const {
  if (nodes.empty()) throw ConfigError("layer graph is empty");
  for (const auto& n : nodes) check_attrs(n);
  topological_order();
  if (outputs.empty()) throw ConfigError("layer graph has no output node");
  std::set<std::string> seen;
  for (const auto& o : outputs) {
    if (!contains(o)) throw ConfigError("output node '" + o + "' does not exist");
    if (!seen.insert(o).second) throw ConfigError("output node '" + o + "' listed twice");
  }
  std::set<std::string> grouped;
  for (const auto& group : shared_groups) {
    if (group.size() < 2) throw ConfigError("shared group needs at least two members");
    const auto& first = node(group.front());
    for (const auto& id : group) {
      const auto& n = node(id);
      if (n.kind != first.kind || !(n.attrs == first.attrs))
        throw ConfigError("shared group members '" + first.id + "' and '" + id +
                          "' differ in kind or attributes");
      if (!grouped.insert(id).second)
        throw ConfigError("node '" + id + "' belongs to more than one shared group");
    }
  }
}

std::string LayerGraph::parameter_owner(const std::string& id) const {
  for (const auto& group : shared_groups)
    if (std::find(group.begin(), group.end(), id) != group.end()) return group.front();
  return id;
}

std::map<std::string, Shape> infer_shapes(const LayerGraph& g) {
  g.validate();
  std::map<std::string, Shape> shapes;
  for (const auto& id : g.topological_order()) {
    const auto& n = g.node(id);
    auto fail = [&](const std::string& why) {
      throw ConfigError("shape error at '" + n.id + "': " + why);
    };
    auto in = [&](std::size_t k) { return shapes.at(n.inputs[k]); };
    Shape out;
    switch (n.kind) {
      case LayerKind::Input:
        out = n.attrs.input;
        if (!out.spatial && (out.height != 1 || out.width != 1)) fail("flat input must have height = width = 1");
        break;
      case LayerKind::Conv2D: {
        const auto s = in(0);
        if (!s.spatial) fail("Conv2D needs a spatial input");
        const auto& a = n.attrs;
        int h = 0;
        int w = 0;
        if (a.padding == Padding::Same) {
          h = (s.height + a.stride - 1) / a.stride;
          w = (s.width + a.stride - 1) / a.stride;
        } else {
          h = s.height >= a.kernel ? (s.height - a.kernel) / a.stride + 1 : 0;
          w = s.width >= a.kernel ? (s.width - a.kernel) / a.stride + 1 : 0;
        }
        if (h <= 0 || w <= 0) fail("spatial size reaches 0");
        out = Shape::image(a.filters, h, w);
        break;
      }
      case LayerKind::Dense: {
        const auto s = in(0);
        if (s.spatial) fail("Dense needs a flat input (insert Flatten or global pooling)");
        out = Shape::flat(n.attrs.units);
        break;
      }
      case LayerKind::BatchNorm:
      case LayerKind::ReLU:
      case LayerKind::Sigmoid:
      case LayerKind::Dropout:
        out = in(0);
        break;
      case LayerKind::AvgPool:
      case LayerKind::MaxPool: {
        const auto s = in(0);
        if (!s.spatial) fail("pooling needs a spatial input");
        out = Shape::image(s.channels, s.height / n.attrs.pool, s.width / n.attrs.pool);
        if (out.height <= 0 || out.width <= 0) fail("spatial size reaches 0");
        break;
      }
      case LayerKind::GlobalAvgPool:
      case LayerKind::GlobalMaxPool: {
        const auto s = in(0);
        if (!s.spatial) fail("global pooling needs a spatial input");
        out = Shape::flat(s.channels);
        break;
      }
      case LayerKind::Flatten: {
        const auto s = in(0);
        out = Shape::flat(static_cast<int>(s.size()));
        break;
      }
      case LayerKind::Concat: {
        const auto first = in(0);
        out = first;
        for (std::size_t k = 1; k < n.inputs.size(); ++k) {
          const auto s = in(k);
          if (s.spatial != first.spatial || s.height != first.height || s.width != first.width)
            fail("Concat inputs " + to_string(first) + " and " + to_string(s) + " do not match");
          out.channels += s.channels;
        }
        break;
      }
    }
    shapes.emplace(id, out);
  }
  for (const auto& group : g.shared_groups) {
    const auto& first = g.node(group.front());
    for (const auto& id : group) {
      const auto& n = g.node(id);
      for (std::size_t k = 0; k < n.inputs.size(); ++k) {
        if (!(shapes.at(n.inputs[k]) == shapes.at(first.inputs[k])))
          throw ConfigError("shared group members '" + first.id + "' and '" + id +
                            "' see different input shapes");
      }
    }
  }
  return shapes;
}

std::vector<ParamSpec> parameter_specs(const LayerGraph& g) {
  const auto shapes = infer_shapes(g);
  std::vector<ParamSpec> specs;
  std::set<std::string> owners_done;
  for (const auto& id : g.topological_order()) {
    const auto& n = g.node(id);
    const auto owner = g.parameter_owner(id);
    if (!owners_done.insert(owner).second) continue;
    const auto& a = n.attrs;
    auto add = [&](const std::string& role, std::vector<int> shape, bool trainable,
                   std::int64_t fan_in = 0, std::int64_t fan_out = 0) {
      ParamSpec p;
      p.name = owner + "/" + role;
      p.owner = owner;
      p.shape = std::move(shape);
      p.trainable = trainable;
      p.init = a.init;
      p.role = role;
      p.fan_in = fan_in;
      p.fan_out = fan_out;
      specs.push_back(std::move(p));
    };
    switch (n.kind) {
      case LayerKind::Conv2D: {
        const int cin = shapes.at(n.inputs[0]).channels;
        const std::int64_t rf = static_cast<std::int64_t>(a.kernel) * a.kernel;
        add("kernel", {a.filters, cin, a.kernel, a.kernel}, true, rf * cin, rf * a.filters);
        if (a.use_bias) add("bias", {a.filters}, true);
        break;
      }
      case LayerKind::Dense: {
        const int in = shapes.at(n.inputs[0]).channels;
        add("kernel", {in, a.units}, true, in, a.units);
        if (a.use_bias) add("bias", {a.units}, true);
        break;
      }
      case LayerKind::BatchNorm: {
        const int c = shapes.at(n.inputs[0]).channels;
        add("gamma", {c}, true);
        add("beta", {c}, true);
        add("moving_mean", {c}, false);
        add("moving_variance", {c}, false);
        break;
      }
      default:
        break;
    }
  }
  return specs;
}

std::int64_t count_params(const LayerGraph& g, bool include_non_trainable) {
  std::int64_t total = 0;
  for (const auto& p : parameter_specs(g))
    if (p.trainable || include_non_trainable) total += p.size();
  return total;
}

int dense_block_out_channels(int in_ch, int layers, int growth) { return in_ch + layers * growth; }

int transition_out_channels(int in_ch, double compression) {
  if (!(compression > 0.0 && compression <= 1.0))
    throw ConfigError("compression must lie in (0,1]");
  return std::max(1, static_cast<int>(std::floor(in_ch * compression + 1e-9)));
}

bool has_active_dropout(const LayerGraph& g) {
  return std::any_of(g.nodes.begin(), g.nodes.end(), [](const LayerNode& n) {
    return n.kind == LayerKind::Dropout && n.attrs.rate > 0.0;
  });
}

LayerGraph with_dropout_rate(const LayerGraph& g, double rate) {
  LayerGraph out = g;
  for (auto& n : out.nodes)
    if (n.kind == LayerKind::Dropout) n.attrs.rate = rate;
  return out;
}

void to_json(nlohmann::json& j, const Shape& s) {
  if (s.spatial)
    j = nlohmann::json::array({s.channels, s.height, s.width});
  else
    j = nlohmann::json::array({s.channels});
}

void from_json(const nlohmann::json& j, Shape& s) {
  const auto v = j.get<std::vector<int>>();
  if (v.size() == 3)
    s = Shape::image(v[0], v[1], v[2]);
  else if (v.size() == 1)
    s = Shape::flat(v[0]);
  else
    throw ConfigError("shape must have 1 or 3 entries");
}

void to_json(nlohmann::json& j, const LayerNode& n) {
  const auto& a = n.attrs;
  j = nlohmann::json{{"id", n.id}, {"kind", to_string(n.kind)}, {"inputs", n.inputs}};
  switch (n.kind) {
    case LayerKind::Input:
      j["shape"] = a.input;
      break;
    case LayerKind::Conv2D:
      j["filters"] = a.filters;
      j["kernel"] = a.kernel;
      j["stride"] = a.stride;
      j["padding"] = to_string(a.padding);
      j["use_bias"] = a.use_bias;
      j["init"] = to_string(a.init);
      break;
    case LayerKind::Dense:
      j["units"] = a.units;
      j["use_bias"] = a.use_bias;
      j["init"] = to_string(a.init);
      break;
    case LayerKind::Dropout:
      j["rate"] = a.rate;
      break;
    case LayerKind::AvgPool:
    case LayerKind::MaxPool:
      j["pool"] = a.pool;
      break;
    default:
      break;
  }
}

void from_json(const nlohmann::json& j, LayerNode& n) {
  n = LayerNode{};
  n.id = j.at("id").get<std::string>();
  n.kind = kind_from_string(j.at("kind").get<std::string>());
  n.inputs = j.value("inputs", std::vector<std::string>{});
  auto& a = n.attrs;
  if (j.contains("shape")) a.input = j.at("shape").get<Shape>();
  a.filters = j.value("filters", 0);
  a.kernel = j.value("kernel", 0);
  a.stride = j.value("stride", 1);
  a.padding = padding_from_string(j.value("padding", std::string("same")));
  a.use_bias = j.value("use_bias", true);
  a.init = initializer_from_string(j.value("init", std::string("glorot_uniform")));
  a.units = j.value("units", 0);
  a.rate = j.value("rate", 0.0);
  a.pool = j.value("pool", 0);
}

void to_json(nlohmann::json& j, const LayerGraph& g) {
  j = nlohmann::json{{"nodes", g.nodes}, {"outputs", g.outputs}, {"shared_groups", g.shared_groups}};
}

void from_json(const nlohmann::json& j, LayerGraph& g) {
  g = LayerGraph{};
  g.nodes = j.at("nodes").get<std::vector<LayerNode>>();
  g.outputs = j.at("outputs").get<std::vector<std::string>>();
  g.shared_groups = j.value("shared_groups", std::vector<std::vector<std::string>>{});
}

}  // namespace sonarmatch
