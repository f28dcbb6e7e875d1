#include "sonarmatch/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "sonarmatch/error.hpp"
#include "sonarmatch/losses.hpp"

namespace sonarmatch {

Model::Model(ModelSpec spec) : spec_(std::move(spec)), net_(spec_.graph) {}

void Model::check_input(const PairDataset& d) const {
  const auto ids = net_.graph().input_ids();
  const Shape s = net_.shapes().at(ids.front());
  if (d.height() != s.height || d.width() != s.width)
    throw ConfigError("patch size " + std::to_string(d.height()) + "x" + std::to_string(d.width()) +
                      " does not match model input " + std::to_string(s.height) + "x" +
                      std::to_string(s.width));
}

std::vector<Tensor> Model::make_inputs(const PairDataset& d, std::span<const std::size_t> rows) const {
  check_input(d);
  const auto ids = net_.graph().input_ids();
  const int batch = static_cast<int>(rows.size());
  std::vector<Tensor> inputs;
  for (const auto& id : ids) inputs.emplace_back(batch, net_.shapes().at(id));
  const std::size_t hw = static_cast<std::size_t>(d.height()) * d.width();
  for (int s = 0; s < batch; ++s) {
    const auto& pair = d.pairs[rows[s]];
    const auto a = pair.a.pixels();
    const auto b = pair.b.pixels();
    if (inputs.size() == 1) {
      std::copy(a.begin(), a.end(), inputs[0].sample(s));
      std::copy(b.begin(), b.end(), inputs[0].sample(s) + hw);
    } else {
      std::copy(a.begin(), a.end(), inputs[0].sample(s));
      std::copy(b.begin(), b.end(), inputs[1].sample(s));
    }
  }
  return inputs;
}

namespace {

std::vector<double> scores_from(const std::vector<const Tensor*>& outs, OutputSemantics sem) {
  const int batch = outs.front()->batch;
  std::vector<double> scores(batch);
  for (int s = 0; s < batch; ++s) {
    if (sem == OutputSemantics::MatchProbability) {
      scores[s] = outs.front()->sample(s)[0];
    } else {
      const auto n = outs[0]->per_sample();
      scores[s] = euclidean_distance<float>({outs[0]->sample(s), n}, {outs[1]->sample(s), n});
    }
  }
  return scores;
}

}  // namespace

std::vector<double> Model::predict(const PairDataset& d, Mode mode, std::uint64_t dropout_seed,
                                   std::size_t chunk) {
  if (chunk == 0) throw ConfigError("chunk size must be >= 1");
  if (mode == Mode::Train) throw ConfigError("predict does not run in training mode");
  std::vector<double> out;
  out.reserve(d.size());
  for (std::size_t start = 0; start < d.size(); start += chunk) {
    const std::size_t stop = std::min(d.size(), start + chunk);
    std::vector<std::size_t> rows(stop - start);
    std::iota(rows.begin(), rows.end(), start);
    const auto inputs = make_inputs(d, rows);
    const auto outs = net_.forward(inputs, mode, dropout_seed, start);
    const auto s = scores_from(outs, spec_.output_semantics);
    out.insert(out.end(), s.begin(), s.end());
  }
  net_.release();
  return out;
}

double Model::objective(const std::vector<const Tensor*>& outs, const PairDataset& d,
                        std::span<const std::size_t> rows, std::vector<Tensor>* grads) const {
  const int batch = static_cast<int>(rows.size());
  double total = 0.0;
  if (spec_.output_semantics == OutputSemantics::MatchProbability) {
    if (grads) grads->emplace_back(batch, outs[0]->shape);
    for (int s = 0; s < batch; ++s) {
      const int y = d.pairs[rows[s]].label;
      const double p = outs[0]->sample(s)[0];
      total += binary_cross_entropy(p, y);
      if (grads) (*grads)[0].sample(s)[0] = static_cast<float>(binary_cross_entropy_grad(p, y) / batch);
    }
  } else {
    const ContrastiveConfig cfg{spec_.margin};
    const auto n = outs[0]->per_sample();
    if (grads) {
      grads->emplace_back(batch, outs[0]->shape);
      grads->emplace_back(batch, outs[1]->shape);
    }
    std::vector<double> e1(n), e2(n), g(n);
    for (int s = 0; s < batch; ++s) {
      const int y = d.pairs[rows[s]].label;
      std::copy(outs[0]->sample(s), outs[0]->sample(s) + n, e1.begin());
      std::copy(outs[1]->sample(s), outs[1]->sample(s) + n, e2.begin());
      const double dist = euclidean_distance<double>(e1, e2);
      total += contrastive_loss(dist, y, cfg);
      if (grads) {
        const double dl = contrastive_loss_grad(dist, y, cfg) / batch;
        euclidean_distance_grad<double>(e1, e2, g);
        for (std::size_t i = 0; i < n; ++i) {
          (*grads)[0].sample(s)[i] = static_cast<float>(dl * g[i]);
          (*grads)[1].sample(s)[i] = static_cast<float>(-dl * g[i]);
        }
      }
    }
  }
  return total / batch;
}

double Model::train_step(const PairDataset& d, std::span<const std::size_t> rows,
                         std::uint64_t dropout_seed) {
  if (d.orientation != spec_.label_orientation)
    throw ConfigError("training labels are " + to_string(d.orientation) + " but the model expects " +
                      to_string(spec_.label_orientation));
  const auto inputs = make_inputs(d, rows);
  const auto outs = net_.forward(inputs, Mode::Train, dropout_seed, 0);
  std::vector<Tensor> grads;
  const double l = objective(outs, d, rows, &grads);
  net_.backward(grads);
  net_.release();
  return l;
}

double Model::loss(const PairDataset& d, std::span<const std::size_t> rows, Mode mode,
                   std::uint64_t dropout_seed) {
  if (d.orientation != spec_.label_orientation)
    throw ConfigError("labels are " + to_string(d.orientation) + " but the model expects " +
                      to_string(spec_.label_orientation));
  const auto inputs = make_inputs(d, rows);
  const auto outs = net_.forward(inputs, mode, dropout_seed, 0);
  return objective(outs, d, rows, nullptr);
}

}  // namespace sonarmatch
