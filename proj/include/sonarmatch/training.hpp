#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "sonarmatch/architectures.hpp"
#include "sonarmatch/dataset.hpp"
#include "sonarmatch/model.hpp"
#include "sonarmatch/optim.hpp"

namespace sonarmatch {

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double val_auc = 0.0;

  friend bool operator==(const EpochRecord&, const EpochRecord&) = default;
};

struct TrainConfig {
  OptimizerKind optimizer = OptimizerKind::Adadelta;
  double learning_rate = 0.03;
  int batch_size = 128;
  int max_epochs = 60;
  int early_stop_patience = 10;
  std::uint64_t seed = 0;
  double validation_fraction = 0.1;
  /// Called after every epoch (not serialized).
  std::function<void(const EpochRecord&)> on_epoch;

  /// Throws ConfigError. Learning rate 0 is accepted so that a frozen run
  /// can be checked.
  void validate() const;
};

/// Default optimizer, learning rate and batch size per architecture.
TrainConfig default_train_config(ArchId arch);

void to_json(nlohmann::json& j, const TrainConfig& c);
/// Missing fields keep the values already in `c`; unknown fields throw.
void update_from_json(const nlohmann::json& j, TrainConfig& c);

struct TrainedModel {
  Model model;
  std::vector<EpochRecord> history;
  int best_epoch = -1;
  TrainConfig config;
  /// Orientation of the labels the model was trained on.
  LabelOrientation orientation = LabelOrientation::MatchIsOne;

  const ModelSpec& spec() const noexcept { return model.spec(); }
};

/// Trains on `data` (any orientation; it is restated in the orientation the
/// model's loss expects). A validation split is held out, the model with the
/// best validation AUC is restored, and training stops after
/// early_stop_patience epochs without improvement. Non-finite loss throws
/// NumericError.
TrainedModel train(const ModelSpec& spec, const PairDataset& data, const TrainConfig& cfg);

inline constexpr int kCheckpointVersion = 1;

/// Checkpoint directory: manifest.json plus one tensor file per parameter.
void save_checkpoint(const TrainedModel& m, const std::filesystem::path& dir);
/// Throws DataError on version mismatch, checksum failure, or tensors that
/// disagree with the graph.
TrainedModel load_checkpoint(const std::filesystem::path& dir);

/// Tensor file: "SMT1", u32 rank, u32 dims, f32 data (little-endian), then
/// the CRC-32 of everything before it.
void write_tensor_file(const std::filesystem::path& path, const std::vector<int>& shape,
                       const std::vector<float>& data);
std::pair<std::vector<int>, std::vector<float>> read_tensor_file(const std::filesystem::path& path);

/// Per-hyper-parameter value lists ("values": [...]) or ranges
/// ({"min": a, "max": b, "log": bool, "integer": bool}). Keys name either a
/// TrainConfig field (optimizer, learning_rate, batch_size) or an
/// architecture config field.
struct SearchSpace {
  nlohmann::json params = nlohmann::json::object();
  int n_runs = 10;

  void validate(ArchId arch) const;
};

SearchSpace search_space_from_json(const nlohmann::json& j);

struct SearchRun {
  int run = 0;
  nlohmann::json arch_config;
  nlohmann::json train_config;
  double val_auc = 0.0;
  int best_epoch = -1;
  bool diverged = false;
  std::string message;
};

struct SearchResult {
  SearchRun best;
  /// Sorted by validation AUC (descending), diverged runs last.
  std::vector<SearchRun> leaderboard;
};

/// Draws n_runs settings uniformly (distinct while the space allows it),
/// trains each, ranks by validation AUC. Throws NumericError if every run
/// diverges.
SearchResult hyperparameter_search(ArchId arch, const SearchSpace& space, const PairDataset& data,
                                   const TrainConfig& base, std::uint64_t seed,
                                   const nlohmann::json& base_arch_config = nlohmann::json::object());

/// Only the sampling step of the search.
std::vector<std::pair<nlohmann::json, nlohmann::json>> sample_search_configs(
    ArchId arch, const SearchSpace& space, std::uint64_t seed);

void write_leaderboard(const SearchResult& r, const std::filesystem::path& path);

}  // namespace sonarmatch
