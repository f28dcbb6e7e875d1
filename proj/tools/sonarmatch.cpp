// Command-line front-end: prepare, train, evaluate, mcdropout, ensemble, hpsearch.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>

#include "sonarmatch/archive.hpp"
#include "sonarmatch/ensemble.hpp"
#include "sonarmatch/error.hpp"
#include "sonarmatch/rng.hpp"
#include "sonarmatch/evaluation.hpp"
#include "sonarmatch/training.hpp"
#include "sonarmatch/uncertainty.hpp"

namespace fs = std::filesystem;
using namespace sonarmatch;
using nlohmann::json;

namespace {

constexpr const char* kDataDirEnv = "SONARMATCH_DATA_DIR";

/// Relative paths that do not exist under the working directory are looked
/// up under $SONARMATCH_DATA_DIR.
fs::path resolve_data(const std::string& p) {
  fs::path path(p);
  if (path.is_absolute() || fs::exists(path)) return path;
  if (const char* dir = std::getenv(kDataDirEnv)) {
    const fs::path alt = fs::path(dir) / path;
    if (fs::exists(alt)) return alt;
  }
  return path;
}

bool is_archive(const fs::path& p) {
  const auto ext = p.extension().string();
  return ext == ".h5" || ext == ".hdf5" || ext == ".hdf" || ext == ".mat";
}

/// "file" or "file:split" for archives.
struct DataRef {
  fs::path path;
  std::string split;
};

DataRef parse_data_ref(const std::string& spec, const std::string& default_split) {
  DataRef r;
  const auto colon = spec.rfind(':');
  if (colon != std::string::npos && colon > 1) {
    r.path = resolve_data(spec.substr(0, colon));
    r.split = spec.substr(colon + 1);
  } else {
    r.path = resolve_data(spec);
    r.split = default_split;
  }
  if (!fs::exists(r.path)) throw DataError("data file not found: " + r.path.string());
  return r;
}

PairDataset load(const DataRef& r) {
  if (is_archive(r.path)) return load_dataset(r.path, DatasetFormat::PublishedArchive, r.split);
  return load_dataset(r.path, DatasetFormat::RawBinary);
}

json read_json(const fs::path& p) {
  std::ifstream f(p);
  if (!f) throw ConfigError("cannot read " + p.string());
  try {
    return json::parse(f);
  } catch (const json::exception& e) {
    throw ConfigError("malformed JSON in " + p.string() + ": " + e.what());
  }
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream f(p, std::ios::trunc);
  if (!f) throw DataError("cannot write " + p.string());
  f << text;
}

std::string fmt(double v, int digits = 6) {
  std::ostringstream o;
  o.setf(std::ios::fixed);
  o.precision(digits);
  o << v;
  return o.str();
}

/// Everything a training run needs, validated before any output is written.
struct ExperimentConfig {
  ArchId arch = ArchId::DTC;
  json model = json::object();
  TrainConfig train;
  std::string train_data;
  std::string test_data;
  fs::path output_dir = "run";
  std::uint64_t seed = 0;
};

ExperimentConfig parse_experiment(const json& j) {
  if (!j.is_object()) throw ConfigError("experiment config must be a JSON object");
  ExperimentConfig c;
  if (!j.contains("architecture")) throw ConfigError("experiment config needs 'architecture'");
  try {
    c.arch = arch_from_string(j.at("architecture").get<std::string>());
    c.train = default_train_config(c.arch);
    for (const auto& [key, v] : j.items()) {
      if (key == "architecture") continue;
      if (key == "model") c.model = v;
      else if (key == "train") {
        if (v.contains("seed")) throw ConfigError("set the seed once, at the top level of the experiment config");
        update_from_json(v, c.train);
      } else if (key == "train_data") c.train_data = v.get<std::string>();
      else if (key == "test_data") c.test_data = v.get<std::string>();
      else if (key == "output_dir") c.output_dir = v.get<std::string>();
      else if (key == "seed") c.seed = v.get<std::uint64_t>();
      else throw ConfigError("unknown experiment config field '" + key + "'");
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad experiment config: ") + e.what());
  }
  return c;
}

/// Input size defaults to the patch size of the data unless set explicitly.
json with_input_size(json model, const PairDataset& d) {
  if (!model.is_object()) throw ConfigError("model config must be a JSON object");
  if (!model.contains("input_height")) model["input_height"] = d.height();
  if (!model.contains("input_width")) model["input_width"] = d.width();
  return model;
}

void check_output_dir(const fs::path& dir) {
  if (dir.empty()) throw ConfigError("output directory must not be empty");
  if (fs::exists(dir) && !fs::is_directory(dir)) throw ConfigError(dir.string() + " exists and is not a directory");
}

void make_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw DataError("cannot create " + dir.string() + ": " + ec.message());
}

// ---------------------------------------------------------------------------

struct PrepareArgs {
  std::string in;
  std::string out;
  std::vector<std::string> splits;
  std::size_t synthetic = 0;
  std::size_t synthetic_test = 0;
  int size = kDefaultPatchSize;
  std::uint64_t seed = 0;
};

int cmd_prepare(const PrepareArgs& a) {
  const fs::path out(a.out);
  check_output_dir(out);
  std::vector<std::pair<std::string, PairDataset>> parts;
  if (a.synthetic > 0) {
    if (!a.in.empty()) throw ConfigError("--in and --synthetic are exclusive");
    if (a.size < 4) throw ConfigError("--size must be >= 4");
    parts.emplace_back("train", make_synthetic_pairs(a.synthetic, a.size, a.size, derive_seed(a.seed, 1), "train"));
    const std::size_t n_test = a.synthetic_test > 0 ? a.synthetic_test : std::max<std::size_t>(2, a.synthetic / 5);
    parts.emplace_back("test", make_synthetic_pairs(n_test, a.size, a.size, derive_seed(a.seed, 2), "test"));
  } else {
    if (a.in.empty()) throw ConfigError("prepare needs --in or --synthetic");
    const fs::path in = resolve_data(a.in);
    if (!fs::exists(in)) throw DataError("input archive not found: " + in.string());
    auto splits = a.splits;
    if (splits.empty()) splits = archive_splits(in);
    if (splits.empty()) splits = {""};
    for (const auto& s : splits) {
      auto d = load_dataset(in, DatasetFormat::PublishedArchive, s);
      parts.emplace_back(s.empty() ? "all" : s, std::move(d));
    }
  }
  make_dir(out);
  std::string line;
  for (const auto& [name, d] : parts) {
    save_raw(d, out / (name + ".smp"));
    if (!line.empty()) line += ' ';
    line += name + "=" + std::to_string(d.size());
  }
  std::cout << line << '\n';
  return 0;
}

// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string config;
  std::optional<std::string> arch, train_data, out, optimizer;
  std::optional<std::uint64_t> seed;
  std::optional<int> epochs, batch_size, patience;
  std::optional<double> lr, validation_fraction;
};

ExperimentConfig experiment_from(const TrainArgs& a) {
  json j = a.config.empty() ? json::object() : read_json(a.config);
  if (a.arch) j["architecture"] = *a.arch;
  if (a.train_data) j["train_data"] = *a.train_data;
  if (a.out) j["output_dir"] = *a.out;
  if (a.seed) j["seed"] = *a.seed;
  json& t = j["train"];
  if (t.is_null()) t = json::object();
  if (a.optimizer) t["optimizer"] = *a.optimizer;
  if (a.epochs) t["max_epochs"] = *a.epochs;
  if (a.batch_size) t["batch_size"] = *a.batch_size;
  if (a.patience) t["early_stop_patience"] = *a.patience;
  if (a.lr) t["learning_rate"] = *a.lr;
  if (a.validation_fraction) t["validation_fraction"] = *a.validation_fraction;
  auto c = parse_experiment(j);
  c.train.seed = c.seed;
  c.train.validate();
  if (!(c.train.learning_rate > 0.0)) throw ConfigError("learning_rate must be > 0");
  if (c.train_data.empty()) throw ConfigError("no training data given (train_data / --train-data)");
  check_output_dir(c.output_dir);
  return c;
}

int cmd_train(const TrainArgs& a) {
  const auto cfg = experiment_from(a);
  build_model(cfg.arch, cfg.model);
  const auto data = load(parse_data_ref(cfg.train_data, "train"));
  validate_dataset(data);
  const ModelSpec spec = build_model(cfg.arch, with_input_size(cfg.model, data));
  TrainConfig tc = cfg.train;
  tc.on_epoch = [](const EpochRecord& r) {
    std::cerr << "epoch " << r.epoch << " loss " << fmt(r.train_loss) << " val_auc "
              << (std::isnan(r.val_auc) ? std::string("nan") : fmt(r.val_auc)) << '\n';
  };
  Model(spec).check_input(data);

  const auto trained = train(spec, data, tc);
  make_dir(cfg.output_dir);
  save_checkpoint(trained, cfg.output_dir / "checkpoint");
  std::ostringstream h;
  h << "epoch,train_loss,val_auc\n";
  h.precision(10);
  for (const auto& r : trained.history) h << r.epoch << ',' << r.train_loss << ',' << r.val_auc << '\n';
  write_text(cfg.output_dir / "history.csv", h.str());
  std::cout << "arch=" << to_string(cfg.arch) << " params=" << count_params(spec.graph)
            << " best_epoch=" << trained.best_epoch << " orientation=" << to_string(trained.orientation)
            << " checkpoint=" << (cfg.output_dir / "checkpoint").string() << '\n';
  return 0;
}

// ---------------------------------------------------------------------------

struct EvaluateArgs {
  std::vector<std::string> checkpoints;
  std::vector<std::string> names;
  std::string test;
  std::string out;
};

int cmd_evaluate(const EvaluateArgs& a) {
  if (a.checkpoints.empty()) throw ConfigError("evaluate needs at least one --checkpoint");
  if (!a.names.empty() && a.names.size() != a.checkpoints.size())
    throw ConfigError("--name must be given once per checkpoint");
  check_output_dir(a.out);
  const auto test = load(parse_data_ref(a.test, "test"));
  validate_dataset(test);
  const auto m = test.match_count();
  if (m == 0 || m == test.size()) throw DataError("test set holds a single class; AUC is undefined");

  std::vector<TrainedModel> models;
  std::vector<std::string> names;
  for (std::size_t i = 0; i < a.checkpoints.size(); ++i) {
    models.push_back(load_checkpoint(a.checkpoints[i]));
    models.back().model.check_input(test);
    names.push_back(a.names.empty() ? to_string(models.back().spec().arch) : a.names[i]);
  }
  std::set<std::string> unique(names.begin(), names.end());
  if (unique.size() != names.size()) throw ConfigError("model names must be distinct (use --name)");

  make_dir(a.out);
  std::vector<ReportEntry> entries;
  std::vector<ScoreSet> sets;
  const fs::path out(a.out);
  for (std::size_t i = 0; i < models.size(); ++i) {
    const auto s = score_dataset(models[i].model, test);
    write_scores(s, out / ("scores_" + names[i] + ".csv"));
    const auto roc = auc_trapezoid(s);
    const double oracle = auc_pairwise_oracle(s);
    const auto params = count_params(models[i].spec().graph);
    std::cout << names[i] << " auc=" << fmt(roc.auc, 6) << " auc_pairwise=" << fmt(oracle, 6) << " params=" << params
              << '\n';
    entries.push_back({names[i], roc, params});
    sets.push_back(s);
  }
  emit_report(entries, out);
  write_score_table(names, sets, out / "predictions.csv");
  return 0;
}

// ---------------------------------------------------------------------------

struct McArgs {
  std::string checkpoint, test, out;
  int passes = 20;
  std::size_t k = 10;
  std::uint64_t seed = 0;
  unsigned threads = 1;
  bool force_zero = false;
};

int cmd_mcdropout(const McArgs& a) {
  if (a.passes < 2) throw ConfigError("-T must be >= 2 (got " + std::to_string(a.passes) + ")");
  check_output_dir(a.out);
  auto trained = load_checkpoint(a.checkpoint);
  const auto test = load(parse_data_ref(a.test, "test"));
  validate_dataset(test);
  trained.model.check_input(test);
  McOptions opt;
  opt.passes = a.passes;
  opt.seed = a.seed;
  opt.threads = a.threads;
  const Model model = a.force_zero ? with_dropout(trained.model, 0.0) : trained.model;
  opt.allow_zero_rate = a.force_zero;
  const auto r = mc_dropout_scores(model, test, opt);

  make_dir(a.out);
  const fs::path out(a.out);
  write_mc_csv(r, out / "mc_dropout.csv");
  const auto hi = rank_by_std(r, a.k, RankDirection::Highest);
  const auto lo = rank_by_std(r, a.k, RankDirection::Lowest);
  if (!hi.empty()) {
    write_thumbnails(test, hi, out / "highest_std.png");
    write_thumbnails(test, lo, out / "lowest_std.png");
  }
  std::size_t positive = 0;
  for (const auto& e : r.entries) positive += e.std > 0.0;
  std::cout << "pairs=" << r.entries.size() << " passes=" << a.passes << " std_positive=" << positive << '\n';
  std::cout << "highest_std:";
  for (auto i : hi) std::cout << ' ' << i;
  std::cout << "\nlowest_std:";
  for (auto i : lo) std::cout << ' ' << i;
  std::cout << '\n';
  return 0;
}

// ---------------------------------------------------------------------------

struct EnsembleArgs {
  std::vector<std::string> scores;
  std::vector<double> weights;
  std::string out;
};

int cmd_ensemble(const EnsembleArgs& a) {
  if (a.scores.size() < 2) throw ConfigError("ensemble needs at least two --scores files");
  if (!a.weights.empty() && a.weights.size() != a.scores.size())
    throw ConfigError("--weights must list one weight per score file");
  if (!a.out.empty() && fs::is_directory(a.out)) throw ConfigError("--out must be a file path");
  std::vector<ScoreSet> members;
  for (const auto& p : a.scores) members.push_back(read_scores(resolve_data(p)));
  const auto avg = ensemble_average(members, a.weights);
  for (std::size_t i = 0; i < members.size(); ++i)
    std::cout << "member " << a.scores[i] << " auc=" << fmt(auc_trapezoid(members[i]).auc) << '\n';
  std::cout << "ensemble auc=" << fmt(auc_trapezoid(avg).auc) << '\n';
  if (!a.out.empty()) write_scores(avg, a.out);
  return 0;
}

// ---------------------------------------------------------------------------

struct SearchArgs {
  std::string arch, space, train_data, out, config;
  std::uint64_t seed = 0;
  std::optional<int> epochs, n_runs;
};

int cmd_hpsearch(const SearchArgs& a) {
  const ArchId arch = arch_from_string(a.arch);
  SearchSpace space = search_space_from_json(read_json(a.space));
  if (a.n_runs) space.n_runs = *a.n_runs;
  space.validate(arch);
  TrainConfig base = default_train_config(arch);
  json model = json::object();
  if (!a.config.empty()) {
    const json j = read_json(a.config);
    if (j.contains("train")) update_from_json(j.at("train"), base);
    if (j.contains("model")) model = j.at("model");
  }
  if (a.epochs) base.max_epochs = *a.epochs;
  base.seed = a.seed;
  base.validate();
  build_model(arch, model);
  check_output_dir(a.out);
  const auto data = load(parse_data_ref(a.train_data, "train"));
  validate_dataset(data);

  model = with_input_size(model, data);
  build_model(arch, model);
  const auto r = hyperparameter_search(arch, space, data, base, a.seed, model);
  make_dir(a.out);
  write_leaderboard(r, fs::path(a.out) / "leaderboard.csv");
  json best = {{"architecture", to_string(arch)}, {"model", r.best.arch_config}, {"train", r.best.train_config},
               {"val_auc", r.best.val_auc}};
  best["train"].erase("seed");
  write_text(fs::path(a.out) / "best.json", best.dump(2) + "\n");
  std::cout << "runs=" << r.leaderboard.size() << " best_run=" << r.best.run << " val_auc=" << fmt(r.best.val_auc)
            << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sonar patch matching: training, evaluation, MC-Dropout and ensembles"};
  app.require_subcommand(1);

  PrepareArgs prep;
  auto* p = app.add_subcommand("prepare", "Convert an HDF5 archive (or synthesize pairs) to raw pair files");
  p->add_option("--in", prep.in, "HDF5 archive");
  p->add_option("--out", prep.out, "Output directory")->required();
  p->add_option("--split", prep.splits, "Splits to convert (default: all found)");
  p->add_option("--synthetic", prep.synthetic, "Generate this many synthetic training pairs instead");
  p->add_option("--synthetic-test", prep.synthetic_test, "Synthetic test pairs (default: a fifth of --synthetic)");
  p->add_option("--size", prep.size, "Synthetic patch size");
  p->add_option("--seed", prep.seed, "Seed for synthetic data");

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Train a model and write a checkpoint");
  t->add_option("--config", tr.config, "Experiment config (JSON)");
  t->add_option("--arch", tr.arch, "DTC, DS or VGG_CL");
  t->add_option("--train-data", tr.train_data, "Training pairs (raw file, or archive[:split])");
  t->add_option("--out", tr.out, "Output directory");
  t->add_option("--seed", tr.seed);
  t->add_option("--optimizer", tr.optimizer, "adadelta or nadam");
  t->add_option("--lr", tr.lr);
  t->add_option("--batch-size", tr.batch_size);
  t->add_option("--epochs", tr.epochs);
  t->add_option("--patience", tr.patience);
  t->add_option("--validation-fraction", tr.validation_fraction);

  EvaluateArgs ev;
  auto* e = app.add_subcommand("evaluate", "Score checkpoints on a test set and write ROC reports");
  e->add_option("--checkpoint", ev.checkpoints, "Checkpoint directory (repeatable)")->required();
  e->add_option("--name", ev.names, "Display name per checkpoint");
  e->add_option("--test", ev.test, "Test pairs")->required();
  e->add_option("--out", ev.out, "Report directory")->required();

  McArgs mc;
  auto* m = app.add_subcommand("mcdropout", "MC-Dropout mean/std per test pair");
  m->add_option("--checkpoint", mc.checkpoint)->required();
  m->add_option("--test", mc.test)->required();
  m->add_option("--out", mc.out)->required();
  m->add_option("-T,--passes", mc.passes, "Stochastic forward passes");
  m->add_option("-k,--top", mc.k, "Pairs to list/draw at each end of the std ranking");
  m->add_option("--seed", mc.seed);
  m->add_option("--threads", mc.threads, "Worker threads (0 = all cores)");
  m->add_flag("--force-zero-dropout", mc.force_zero, "Set every dropout rate to 0 (diagnostic)");

  EnsembleArgs en;
  auto* n = app.add_subcommand("ensemble", "Average probability score files");
  n->add_option("--scores", en.scores, "Score CSV (repeatable)")->required();
  n->add_option("--weights", en.weights, "Optional weights, one per score file");
  n->add_option("--out", en.out, "Write the averaged scores here");

  SearchArgs hs;
  auto* h = app.add_subcommand("hpsearch", "Random hyper-parameter search");
  h->add_option("--arch", hs.arch)->required();
  h->add_option("--space", hs.space, "Search space (JSON)")->required();
  h->add_option("--train-data", hs.train_data)->required();
  h->add_option("--out", hs.out)->required();
  h->add_option("--config", hs.config, "Base experiment config (model/train sections)");
  h->add_option("--seed", hs.seed);
  h->add_option("--epochs", hs.epochs);
  h->add_option("--runs", hs.n_runs);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    return app.exit(err) == 0 ? 0 : 1;
  }

  try {
    if (*p) return cmd_prepare(prep);
    if (*t) return cmd_train(tr);
    if (*e) return cmd_evaluate(ev);
    if (*m) return cmd_mcdropout(mc);
    if (*n) return cmd_ensemble(en);
    if (*h) return cmd_hpsearch(hs);
  } catch (const Error& err) {
    std::cerr << "error: " << err.what() << '\n';
    return err.exit_code();
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << '\n';
    return 2;
  }
  return 1;
}
