#include "sonarmatch/training.hpp"

#include <cmath>
#include <limits>

#include "sonarmatch/error.hpp"
#include "sonarmatch/evaluation.hpp"
#include "sonarmatch/rng.hpp"

namespace sonarmatch {

void TrainConfig::validate() const {
  if (!std::isfinite(learning_rate) || learning_rate < 0.0)
    throw ConfigError("learning_rate must be a finite value >= 0");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (max_epochs < 0) throw ConfigError("max_epochs must be >= 0");
  if (early_stop_patience < 0) throw ConfigError("early_stop_patience must be >= 0");
  if (!(validation_fraction >= 0.0 && validation_fraction < 1.0))
    throw ConfigError("validation_fraction must be in [0, 1)");
}

TrainConfig default_train_config(ArchId arch) {
  TrainConfig c;
  switch (arch) {
    case ArchId::DTC:
      c.optimizer = OptimizerKind::Adadelta;
      c.learning_rate = 0.03;
      c.batch_size = 128;
      break;
    case ArchId::DS:
      c.optimizer = OptimizerKind::Adadelta;
      c.learning_rate = 0.07;
      c.batch_size = 64;
      break;
    case ArchId::VGG_CL:
      c.optimizer = OptimizerKind::Nadam;
      c.learning_rate = 0.0002;
      c.batch_size = 256;
      break;
  }
  return c;
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"optimizer", to_string(c.optimizer)},
       {"learning_rate", c.learning_rate},
       {"batch_size", c.batch_size},
       {"max_epochs", c.max_epochs},
       {"early_stop_patience", c.early_stop_patience},
       {"seed", c.seed},
       {"validation_fraction", c.validation_fraction}};
}

void update_from_json(const nlohmann::json& j, TrainConfig& c) {
  if (!j.is_object()) throw ConfigError("train config must be a JSON object");
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "optimizer") c.optimizer = optimizer_from_string(v.get<std::string>());
      else if (key == "learning_rate") c.learning_rate = v.get<double>();
      else if (key == "batch_size") c.batch_size = v.get<int>();
      else if (key == "max_epochs") c.max_epochs = v.get<int>();
      else if (key == "early_stop_patience") c.early_stop_patience = v.get<int>();
      else if (key == "seed") c.seed = v.get<std::uint64_t>();
      else if (key == "validation_fraction") c.validation_fraction = v.get<double>();
      else throw ConfigError("unknown train config field '" + key + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad train config: ") + e.what());
  }
}

namespace {

/// Validation AUC, or NaN when the validation set holds one class only.
double validation_auc(Model& model, const PairDataset& val) {
  if (val.empty()) return std::numeric_limits<double>::quiet_NaN();
  const auto m = val.match_count();
  if (m == 0 || m == val.size()) return std::numeric_limits<double>::quiet_NaN();
  const auto scores = model.predict(val);
  for (double s : scores)
    if (!std::isfinite(s)) throw NumericError("non-finite validation score");
  return auc_trapezoid(make_score_set(val, scores, orientation_for(model.spec().output_semantics))).auc;
}

}  // namespace

TrainedModel train(const ModelSpec& spec, const PairDataset& data, const TrainConfig& cfg) {
  cfg.validate();
  if (data.empty()) throw DataError("training set is empty");

  TrainedModel out{Model(spec), {}, -1, cfg, spec.label_orientation};
  out.config.on_epoch = nullptr;
  Model& model = out.model;
  model.check_input(data);
  model.network().initialize(cfg.seed);

  const PairDataset oriented = with_orientation(data, spec.label_orientation);
  PairDataset train_part, val_part;
  if (cfg.validation_fraction > 0.0 && oriented.size() >= 2) {
    std::tie(train_part, val_part) = split_validation(oriented, cfg.validation_fraction, cfg.seed);
  } else {
    train_part = oriented;
  }

  auto optimizer = make_optimizer(cfg.optimizer, cfg.learning_rate);
  const std::uint64_t dropout_root = derive_seed(cfg.seed, streams::kDropout);

  double best_metric = -std::numeric_limits<double>::infinity();
  ParameterStore best_params;
  int since_best = 0;
  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    const auto plan = batches(train_part, static_cast<std::size_t>(cfg.batch_size), true, cfg.seed,
                              static_cast<std::uint64_t>(epoch));
    const std::uint64_t epoch_seed = derive_seed(dropout_root, static_cast<std::uint64_t>(epoch));
    double loss_sum = 0.0;
    for (std::size_t b = 0; b < plan.size(); ++b) {
      model.network().zero_grad();
      const double l = model.train_step(train_part, plan[b], derive_seed(epoch_seed, b));
      if (!std::isfinite(l))
        throw NumericError("training diverged: loss is " + std::to_string(l) + " at epoch " +
                           std::to_string(epoch) + ", batch " + std::to_string(b));
      optimizer->step(model.network().parameters());
      loss_sum += l * static_cast<double>(plan[b].size());
    }
    EpochRecord rec{epoch, loss_sum / static_cast<double>(train_part.size()), validation_auc(model, val_part)};
    out.history.push_back(rec);
    if (cfg.on_epoch) cfg.on_epoch(rec);

    const double metric = std::isnan(rec.val_auc) ? -rec.train_loss : rec.val_auc;
    if (metric > best_metric) {
      best_metric = metric;
      best_params = model.network().parameters();
      out.best_epoch = epoch;
      since_best = 0;
    } else if (cfg.early_stop_patience > 0 && ++since_best >= cfg.early_stop_patience) {
      break;
    }
  }
  if (out.best_epoch >= 0) model.network().assign_values(best_params);
  model.network().zero_grad();
  return out;
}

}  // namespace sonarmatch
