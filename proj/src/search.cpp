#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <random>
#include <set>

#include "sonarmatch/error.hpp"
#include "sonarmatch/rng.hpp"
#include "sonarmatch/training.hpp"

namespace sonarmatch {

namespace {

const std::set<std::string> kTrainKeys = {"optimizer", "learning_rate", "batch_size"};

bool is_range(const nlohmann::json& v) { return v.is_object() && v.contains("min"); }

const nlohmann::json& values_of(const nlohmann::json& v) { return v.is_array() ? v : v.at("values"); }

nlohmann::json draw(const nlohmann::json& v, Rng& rng) {
  if (!is_range(v)) {
    const auto& vals = values_of(v);
    std::uniform_int_distribution<std::size_t> pick(0, vals.size() - 1);
    return vals[pick(rng)];
  }
  const bool integer = v.value("integer", false);
  const bool log = v.value("log", false);
  if (integer) {
    std::uniform_int_distribution<long long> u(v.at("min").get<long long>(), v.at("max").get<long long>());
    return u(rng);
  }
  const double lo = v.at("min").get<double>();
  const double hi = v.at("max").get<double>();
  if (log) {
    std::uniform_real_distribution<double> u(std::log(lo), std::log(hi));
    return std::exp(u(rng));
  }
  std::uniform_real_distribution<double> u(lo, hi);
  return u(rng);
}

}  // namespace

SearchSpace search_space_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("search space must be a JSON object");
  SearchSpace s;
  for (const auto& [key, v] : j.items()) {
    if (key == "n_runs") {
      if (!v.is_number_integer()) throw ConfigError("n_runs must be an integer");
      s.n_runs = v.get<int>();
    } else if (key == "params") {
      s.params = v;
    } else {
      throw ConfigError("unknown search space field '" + key + "'");
    }
  }
  return s;
}

void SearchSpace::validate(ArchId arch) const {
  if (n_runs < 1) throw ConfigError("n_runs must be >= 1");
  if (!params.is_object() || params.empty()) throw ConfigError("search space has no parameters");
  const auto defaults = default_config(arch);
  for (const auto& [key, v] : params.items()) {
    if (!kTrainKeys.count(key) && !defaults.contains(key))
      throw ConfigError("search parameter '" + key + "' is not a field of " + to_string(arch) +
                        " or of the train config");
    if (is_range(v)) {
      if (!v.contains("max") || !v.at("min").is_number() || !v.at("max").is_number())
        throw ConfigError("range for '" + key + "' needs numeric min and max");
      if (v.at("min").get<double>() > v.at("max").get<double>())
        throw ConfigError("range for '" + key + "' has min > max");
      if (v.value("log", false) && !(v.at("min").get<double>() > 0.0))
        throw ConfigError("log range for '" + key + "' needs min > 0");
      for (const auto& [k, _] : v.items())
        if (k != "min" && k != "max" && k != "log" && k != "integer")
          throw ConfigError("unknown range field '" + k + "' for '" + key + "'");
    } else if (v.is_array() || (v.is_object() && v.contains("values"))) {
      if (values_of(v).empty() || !values_of(v).is_array())
        throw ConfigError("value list for '" + key + "' is empty");
    } else {
      throw ConfigError("search parameter '" + key + "' must be a value list or a range");
    }
  }
  // Every candidate value must build.
  for (const auto& [key, v] : params.items()) {
    if (kTrainKeys.count(key)) {
      if (!is_range(v))
        for (const auto& val : values_of(v)) {
          TrainConfig c;
          update_from_json({{key, val}}, c);
          if (key != "learning_rate") c.validate();
          else if (!(c.learning_rate > 0.0)) throw ConfigError("learning_rate candidates must be > 0");
        }
      continue;
    }
    if (!is_range(v))
      for (const auto& val : values_of(v)) {
        auto cfg = defaults;
        cfg[key] = val;
        build_model(arch, cfg);
      }
  }
}

std::vector<std::pair<nlohmann::json, nlohmann::json>> sample_search_configs(ArchId arch, const SearchSpace& space,
                                                                             std::uint64_t seed) {
  space.validate(arch);
  Rng rng(derive_seed(seed, streams::kSearch));
  std::vector<nlohmann::json> picks;

  bool finite = true;
  double combos = 1.0;
  for (const auto& [key, v] : space.params.items()) {
    if (is_range(v)) {
      finite = false;
      break;
    }
    combos *= static_cast<double>(values_of(v).size());
  }
  if (finite && combos <= static_cast<double>(space.n_runs)) {
    picks.push_back(nlohmann::json::object());
    for (const auto& [key, v] : space.params.items()) {
      std::vector<nlohmann::json> next;
      for (const auto& p : picks)
        for (const auto& val : values_of(v)) {
          auto q = p;
          q[key] = val;
          next.push_back(q);
        }
      picks = std::move(next);
    }
    std::shuffle(picks.begin(), picks.end(), rng);
  } else {
    std::set<std::string> seen;
    const int max_attempts = 1000 * space.n_runs;
    for (int attempt = 0; attempt < max_attempts && static_cast<int>(picks.size()) < space.n_runs; ++attempt) {
      nlohmann::json p = nlohmann::json::object();
      for (const auto& [key, v] : space.params.items()) p[key] = draw(v, rng);
      if (seen.insert(p.dump()).second) picks.push_back(p);
    }
  }

  std::vector<std::pair<nlohmann::json, nlohmann::json>> out;
  for (const auto& p : picks) {
    nlohmann::json arch_cfg = nlohmann::json::object();
    nlohmann::json train_cfg = nlohmann::json::object();
    for (const auto& [key, val] : p.items()) (kTrainKeys.count(key) ? train_cfg : arch_cfg)[key] = val;
    out.emplace_back(arch_cfg, train_cfg);
  }
  return out;
}

SearchResult hyperparameter_search(ArchId arch, const SearchSpace& space, const PairDataset& data,
                                   const TrainConfig& base, std::uint64_t seed,
                                   const nlohmann::json& base_arch_config) {
  base.validate();
  const auto configs = sample_search_configs(arch, space, seed);
  SearchResult result;
  for (std::size_t run = 0; run < configs.size(); ++run) {
    SearchRun r;
    r.run = static_cast<int>(run);
    nlohmann::json arch_cfg = base_arch_config.is_object() ? base_arch_config : nlohmann::json::object();
    arch_cfg.update(configs[run].first);
    r.arch_config = arch_cfg;
    TrainConfig cfg = base;
    update_from_json(configs[run].second, cfg);
    cfg.seed = derive_seed(derive_seed(seed, streams::kTrial), run);
    r.train_config = cfg;
    try {
      const auto trained = train(build_model(arch, arch_cfg), data, cfg);
      r.best_epoch = trained.best_epoch;
      r.val_auc = r.best_epoch >= 0 ? trained.history[r.best_epoch].val_auc
                                    : std::numeric_limits<double>::quiet_NaN();
    } catch (const NumericError& e) {
      r.diverged = true;
      r.val_auc = std::numeric_limits<double>::quiet_NaN();
      r.message = e.what();
    }
    result.leaderboard.push_back(std::move(r));
  }
  auto key = [](const SearchRun& r) {
    return r.diverged || std::isnan(r.val_auc) ? -std::numeric_limits<double>::infinity() : r.val_auc;
  };
  std::stable_sort(result.leaderboard.begin(), result.leaderboard.end(), [&](const SearchRun& a, const SearchRun& b) {
    if (a.diverged != b.diverged) return !a.diverged;
    return key(a) > key(b);
  });
  if (std::all_of(result.leaderboard.begin(), result.leaderboard.end(), [](const SearchRun& r) { return r.diverged; }))
    throw NumericError("all " + std::to_string(result.leaderboard.size()) + " search runs diverged");
  result.best = result.leaderboard.front();
  return result;
}

void write_leaderboard(const SearchResult& r, const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw DataError("cannot write leaderboard " + path.string());
  auto quote = [](const std::string& s) {
    std::string q = "\"";
    for (char c : s) q += c == '"' ? std::string("\"\"") : std::string(1, c);
    return q + "\"";
  };
  f << "rank,run,val_auc,best_epoch,diverged,arch_config,train_config\n";
  f.precision(10);
  for (std::size_t i = 0; i < r.leaderboard.size(); ++i) {
    const auto& s = r.leaderboard[i];
    f << i + 1 << ',' << s.run << ',';
    if (std::isnan(s.val_auc)) f << "nan";
    else f << s.val_auc;
    f << ',' << s.best_epoch << ',' << (s.diverged ? 1 : 0) << ',' << quote(s.arch_config.dump()) << ','
      << quote(s.train_config.dump()) << '\n';
  }
  if (!f) throw DataError("leaderboard write failed for " + path.string());
}

}  // namespace sonarmatch
