#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "sonarmatch/dataset.hpp"
#include "sonarmatch/netgraph.hpp"

namespace sonarmatch {

enum class ArchId { DTC, DS, VGG_CL };
enum class OutputSemantics { MatchProbability, EmbeddingDistance };
enum class PoolingKind { Avg, Max };
enum class TrunkPooling { Flatten, Avg };

std::string to_string(ArchId a);
ArchId arch_from_string(const std::string& s);
std::string to_string(OutputSemantics s);

/// DenseNet two-channel matcher. With initial_kernel 5 and transition_kernel 3
/// the 96x96 model has 51,285 trainable parameters.
struct DtcConfig {
  std::vector<int> block_layers = {2, 2, 2};
  int growth = 12;
  int initial_filters = 32;
  double dropout = 0.2;
  double compression = 0.5;
  bool bottleneck = false;
  PoolingKind pooling = PoolingKind::Avg;
  int input_height = kDefaultPatchSize;
  int input_width = kDefaultPatchSize;
  int initial_kernel = 5;
  int transition_kernel = 3;

  friend bool operator==(const DtcConfig&, const DtcConfig&) = default;
};

/// DenseNet siamese matcher (shared branches, concat -> FC head).
/// `final_pool` is the average-pooling window applied to each branch's last
/// dense block before flattening (4 turns 48x48 into 12x12 at 96x96 input).
struct DsConfig {
  std::vector<int> block_layers = {2, 2};
  int growth = 30;
  int initial_filters = 16;
  double densenet_dropout = 0.4;
  double compression = 0.3;
  bool bottleneck = false;
  TrunkPooling trunk_pooling = TrunkPooling::Flatten;
  int fc_units = 512;
  double fc_dropout = 0.7;
  int input_height = kDefaultPatchSize;
  int input_width = kDefaultPatchSize;
  int initial_kernel = 3;
  int transition_kernel = 1;
  int final_pool = 4;

  friend bool operator==(const DsConfig&, const DsConfig&) = default;
};

/// VGG siamese embedding trained with contrastive loss. `conv_blocks` holds
/// the number of 3x3 convolutions per block; filters double per block from
/// base_filters up to 8 * base_filters, each block ends in 2x2 max pooling.
struct VggClConfig {
  int base_filters = 16;
  int kernel = 3;
  int fc_layers = 1;
  int embedding_units = 2048;
  bool batch_norm = false;
  double dropout = 0.6;
  std::vector<int> conv_blocks = {2, 2, 3, 3, 3};
  int input_height = kDefaultPatchSize;
  int input_width = kDefaultPatchSize;
  double margin = 1.0;

  friend bool operator==(const VggClConfig&, const VggClConfig&) = default;
};

struct ModelSpec {
  ArchId arch = ArchId::DTC;
  LayerGraph graph;
  OutputSemantics output_semantics = OutputSemantics::MatchProbability;
  /// Label convention the model's loss consumes.
  LabelOrientation label_orientation = LabelOrientation::MatchIsOne;
  /// Contrastive margin (VGG_CL only).
  double margin = 1.0;
  /// Architecture config the graph was built from.
  nlohmann::json config;
};

ModelSpec build_dtc(const DtcConfig& c);
ModelSpec build_ds(const DsConfig& c);
ModelSpec build_vgg_siamese(const VggClConfig& c);

/// Builds from an arch id and a (possibly partial) JSON config; missing
/// fields take the defaults. Unknown fields are rejected.
ModelSpec build_model(ArchId arch, const nlohmann::json& config = nlohmann::json::object());

/// Full default config for an architecture, as JSON.
nlohmann::json default_config(ArchId arch);

void to_json(nlohmann::json& j, const DtcConfig& c);
void from_json(const nlohmann::json& j, DtcConfig& c);
void to_json(nlohmann::json& j, const DsConfig& c);
void from_json(const nlohmann::json& j, DsConfig& c);
void to_json(nlohmann::json& j, const VggClConfig& c);
void from_json(const nlohmann::json& j, VggClConfig& c);

}  // namespace sonarmatch
