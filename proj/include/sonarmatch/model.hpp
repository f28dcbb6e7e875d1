#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "sonarmatch/architectures.hpp"
#include "sonarmatch/dataset.hpp"
#include "sonarmatch/engine.hpp"

namespace sonarmatch {

/// A ModelSpec bound to an executable network.
class Model {
 public:
  explicit Model(ModelSpec spec);

  const ModelSpec& spec() const noexcept { return spec_; }
  Network& network() noexcept { return net_; }
  const Network& network() const noexcept { return net_; }

  /// Input tensors for the given rows: the two-channel model stacks a and b
  /// as channels, siamese models take one tensor per branch.
  std::vector<Tensor> make_inputs(const PairDataset& d, std::span<const std::size_t> rows) const;

  /// One raw score per pair in dataset order: match probability or
  /// embedding distance, per spec().output_semantics.
  std::vector<double> predict(const PairDataset& d, Mode mode = Mode::Inference,
                              std::uint64_t dropout_seed = 0, std::size_t chunk = 64);

  /// Forward in training mode on `rows`, accumulates parameter gradients of
  /// the mean batch loss and returns that loss. Labels are read in the
  /// dataset's orientation, which must equal spec().label_orientation.
  double train_step(const PairDataset& d, std::span<const std::size_t> rows,
                    std::uint64_t dropout_seed);

  /// Mean loss on `rows` without touching gradients.
  double loss(const PairDataset& d, std::span<const std::size_t> rows, Mode mode = Mode::Inference,
              std::uint64_t dropout_seed = 0);

  /// Throws ConfigError when patch dimensions differ from the model input.
  void check_input(const PairDataset& d) const;

 private:
  double objective(const std::vector<const Tensor*>& outs, const PairDataset& d,
                   std::span<const std::size_t> rows, std::vector<Tensor>* grads) const;

  ModelSpec spec_;
  Network net_;
};

}  // namespace sonarmatch
