#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "sonarmatch/archive.hpp"
#include "sonarmatch/ensemble.hpp"
#include "sonarmatch/error.hpp"
#include "sonarmatch/evaluation.hpp"
#include "sonarmatch/losses.hpp"
#include "sonarmatch/training.hpp"
#include "sonarmatch/uncertainty.hpp"

using namespace sonarmatch;
namespace fs = std::filesystem;

namespace {

constexpr int kSkip = 77;

enum class Outcome { Pass, Fail, Skip };

struct Verdict {
  Outcome outcome;
  std::string detail;
};

Verdict pass_if(bool ok, std::string detail) { return {ok ? Outcome::Pass : Outcome::Fail, std::move(detail)}; }

class Stopwatch {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// ---------------------------------------------------------------- data

struct SplitD {
  PairDataset train, test;
  std::string source;
};

std::optional<SplitD> find_split_d() {
  const char* env = std::getenv("SONARMATCH_DATA_DIR");
  if (!env || !*env || !fs::is_directory(env)) return std::nullopt;
  const fs::path dir(env);
  if (fs::exists(dir / "train.smp") && fs::exists(dir / "test.smp"))
    return SplitD{load_dataset(dir / "train.smp", DatasetFormat::RawBinary),
                  load_dataset(dir / "test.smp", DatasetFormat::RawBinary), (dir / "*.smp").string()};
  std::vector<fs::path> candidates;
  for (const auto& e : fs::directory_iterator(dir)) {
    const auto ext = e.path().extension().string();
    if (ext == ".h5" || ext == ".hdf5" || ext == ".hdf" || ext == ".mat") candidates.push_back(e.path());
  }
  std::sort(candidates.begin(), candidates.end());
  for (const auto& p : candidates) {
    try {
      const auto splits = archive_splits(p);
      if (std::count(splits.begin(), splits.end(), "train") && std::count(splits.begin(), splits.end(), "test"))
        return SplitD{load_dataset(p, DatasetFormat::PublishedArchive, "train"),
                      load_dataset(p, DatasetFormat::PublishedArchive, "test"), p.string()};
    } catch (const DataError&) {
    }
  }
  return std::nullopt;
}

fs::path output_dir() {
  const char* env = std::getenv("SONARMATCH_ACCEPTANCE_OUT");
  return env && *env ? fs::path(env) : fs::current_path() / "acceptance_out";
}

PairDataset stratified_subset(const PairDataset& d, std::size_t n, std::uint64_t seed) {
  if (n >= d.size()) return d;
  return split_validation(d, static_cast<double>(n) / static_cast<double>(d.size()), seed).second;
}

void write_history(const TrainedModel& t, const fs::path& path) {
  fs::create_directories(path.parent_path());
  std::FILE* f = std::fopen(path.c_str(), "w");
  if (!f) return;
  std::fprintf(f, "epoch,train_loss,val_auc\n");
  for (const auto& e : t.history) std::fprintf(f, "%d,%.9g,%.9g\n", e.epoch, e.train_loss, e.val_auc);
  std::fclose(f);
}

double test_auc(const TrainedModel& t, const PairDataset& test) {
  Model m = t.model;
  return auc_trapezoid(score_dataset(m, test)).auc;
}

// ---------------------------------------------------------------- 1

Verdict criterion1() {
  Stopwatch clock;
  std::vector<std::string> bad;
  if (contrastive_loss(0.5, 0) != 0.125) bad.push_back("L(0.5,Y=0)");
  if (contrastive_loss(1.5, 1) != 0.0) bad.push_back("L(1.5,Y=1)");
  if (contrastive_loss(0.4, 1) != 0.18) bad.push_back("L(0.4,Y=1)");

  std::mt19937_64 rng(1);
  std::normal_distribution<double> n(0, 1);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> a(1 + trial % 64), b(a.size());
    for (auto& v : a) v = n(rng);
    for (auto& v : b) v = n(rng);
    const double ab = euclidean_distance<double>(a, b), ba = euclidean_distance<double>(b, a);
    if (ab != ba) bad.push_back("distance asymmetric");
    if (euclidean_distance<double>(a, a) != 0.0) bad.push_back("distance(x,x) != 0");
    if (bad.size() > 5) break;
  }

  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto d = make_synthetic_pairs(40, 8, 8, seed);
    if (seed % 2) d = flip_labels(d);
    const auto twice = flip_labels(flip_labels(d));
    bool same = twice.orientation == d.orientation && twice.size() == d.size();
    for (std::size_t i = 0; same && i < d.size(); ++i)
      same = twice.pairs[i].label == d.pairs[i].label && twice.pairs[i].a == d.pairs[i].a &&
             twice.pairs[i].b == d.pairs[i].b && twice.pairs[i].index == d.pairs[i].index;
    if (!same) bad.push_back("flip not an involution");
  }
  const double secs = clock.seconds();
  if (secs >= 1.0) bad.push_back("runtime");
  std::string detail = fmt("L=0.125/0/0.18 exact, distance symmetric and zero on x=x, flip involution; %.3f s", secs);
  for (const auto& b : bad) detail += "; broken: " + b;
  return pass_if(bad.empty(), detail);
}

// ---------------------------------------------------------------- 2

double brute_force_auc(const std::vector<double>& pos, const std::vector<double>& neg) {
  double wins = 0;
  for (double p : pos)
    for (double q : neg) wins += p > q ? 1.0 : (p == q ? 0.5 : 0.0);
  return wins / (static_cast<double>(pos.size()) * static_cast<double>(neg.size()));
}

Verdict criterion2() {
  Stopwatch clock;
  std::mt19937_64 rng(20240601);
  double worst = 0, worst_lib = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const int n = std::uniform_int_distribution<int>(2, 200)(rng);
    ScoreSet s;
    s.orientation = trial % 3 == 0 ? ScoreOrientation::LowerIsMatch : ScoreOrientation::HigherIsMatch;
    const int levels = trial % 3 == 2 ? 0 : std::uniform_int_distribution<int>(1, 12)(rng);
    std::uniform_real_distribution<double> u(0, 1);
    std::bernoulli_distribution coin(std::uniform_real_distribution<double>(0.1, 0.9)(rng));
    for (int i = 0; i < n; ++i) {
      const double v = levels ? std::floor(u(rng) * levels) / levels : u(rng);
      auto label = static_cast<std::uint8_t>(i == 0 ? 1 : i == 1 ? 0 : coin(rng));
      s.entries.push_back({i, v, label});
    }
    std::vector<double> pos, neg;
    for (const auto& e : s.entries) {
      const double canon = s.orientation == ScoreOrientation::LowerIsMatch ? -e.score : e.score;
      (e.label ? pos : neg).push_back(canon);
    }
    const double trap = auc_trapezoid(s).auc;
    worst = std::max(worst, std::abs(trap - brute_force_auc(pos, neg)));
    worst_lib = std::max(worst_lib, std::abs(trap - auc_pairwise_oracle(s)));
  }
  const double secs = clock.seconds();
  return pass_if(worst <= 1e-9 && worst_lib <= 1e-9 && secs < 30,
                 fmt("1000 sets (n=2..200, ties): max |trapezoid - Mann-Whitney| = %.3g (library oracle %.3g); %.2f s",
                     worst, worst_lib, secs));
}

// ---------------------------------------------------------------- 3

// Relative error with a 1e-6 floor on the scale.
double rel_err(double a, double n) { return std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1e-6}); }

struct FinalLayerCheck {
  double worst = 0;
  int probes = 0;
  std::string where;
};

FinalLayerCheck final_layer_check(ArchId arch, float h) {
  nlohmann::json cfg = {{"input_height", 32}, {"input_width", 32}};
  Model m(build_model(arch, cfg));
  m.network().initialize(11);
  auto data = with_orientation(make_synthetic_pairs(4, 32, 32, 5), m.spec().label_orientation);
  const std::vector<std::size_t> rows{0, 1, 2, 3};
  constexpr std::uint64_t kMaskSeed = 3;
  m.network().zero_grad();
  m.train_step(data, rows, kMaskSeed);

  std::string final_node;
  const auto& g = m.network().graph();
  for (const auto& n : g.nodes)
    if (n.kind == LayerKind::Dense) final_node = n.id;
  for (const auto& group : g.shared_groups)
    if (std::find(group.begin(), group.end(), final_node) != group.end()) final_node = group.front();
  FinalLayerCheck out;
  for (const char* role : {"/kernel", "/bias"}) {
    auto it = m.network().parameters().find(final_node + role);
    if (it == m.network().parameters().end()) continue;
    auto& p = it->second;
    const auto grad = p.grad;
    const std::size_t step = std::max<std::size_t>(1, p.value.size() / 12);
    for (std::size_t i = 0; i < p.value.size(); i += step) {
      const float orig = p.value[i];
      p.value[i] = orig + h;
      const double up = m.loss(data, rows, Mode::Train, kMaskSeed);
      p.value[i] = orig - h;
      const double down = m.loss(data, rows, Mode::Train, kMaskSeed);
      p.value[i] = orig;
      const double numeric = (up - down) / (2.0 * static_cast<double>(h));
      const double e = rel_err(grad[i], numeric);
      ++out.probes;
      if (e > out.worst) {
        out.worst = e;
        out.where = it->first + fmt("[%zu] analytic %.6g numeric %.6g", i, static_cast<double>(grad[i]), numeric);
      }
    }
  }
  return out;
}

Verdict criterion3() {
  Stopwatch clock;
  double worst_contrastive = 0, worst_bce = 0;
  for (double d : {0.1, 0.5, 0.9, 1.5})
    for (int y : {0, 1}) {
      const double h = 1e-5;
      const double numeric = (contrastive_loss(d + h, y) - contrastive_loss(d - h, y)) / (2 * h);
      worst_contrastive = std::max(worst_contrastive, rel_err(contrastive_loss_grad(d, y), numeric));
    }
  for (double p : {0.05, 0.2, 0.5, 0.8, 0.95})
    for (int y : {0, 1}) {
      const double h = 1e-6;
      const double numeric = (binary_cross_entropy(p + h, y) - binary_cross_entropy(p - h, y)) / (2 * h);
      worst_bce = std::max(worst_bce, rel_err(binary_cross_entropy_grad(p, y), numeric));
    }
  const auto bce_net = final_layer_check(ArchId::DTC, 1e-2f);
  const auto con_net = final_layer_check(ArchId::VGG_CL, 1e-3f);
  const double secs = clock.seconds();
  const bool ok = worst_contrastive <= 1e-6 && worst_bce <= 1e-6 && bce_net.worst <= 1e-3 &&
                  con_net.worst <= 1e-3 && bce_net.probes > 0 && con_net.probes > 0 && secs < 10;
  std::string detail = fmt(
      "double: contrastive %.2e, BCE %.2e; single (4-pair batch, final layer): BCE/DTC %.2e over %d probes (h=1e-2), "
      "contrastive/VGG_CL %.2e over %d probes (h=1e-3); %.2f s",
      worst_contrastive, worst_bce, bce_net.worst, bce_net.probes, con_net.worst, con_net.probes, secs);
  if (!ok) detail += "; worst " + bce_net.where + " / " + con_net.where;
  return pass_if(ok, detail);
}

// ---------------------------------------------------------------- 4

struct CountTarget {
  ArchId arch;
  std::int64_t target;
};

Verdict count_line(const CountTarget& t) {
  const auto spec = build_model(t.arch);
  const auto count = count_params(spec.graph);
  const auto allocated = Network(spec.graph).trainable_count();
  if (allocated != count)
    return {Outcome::Fail, fmt("%s graph count %lld but %lld trainable values allocated", to_string(t.arch).c_str(),
                               static_cast<long long>(count), static_cast<long long>(allocated))};
  const double rel = static_cast<double>(count - t.target) / static_cast<double>(t.target);
  return pass_if(std::abs(rel) <= 0.10, fmt("%s %lld vs %lld (%+.2f%%)", to_string(t.arch).c_str(),
                                            static_cast<long long>(count), static_cast<long long>(t.target),
                                            100.0 * rel));
}

const std::map<std::string, CountTarget> kCountTargets = {
    {"dtc", {ArchId::DTC, 51430}}, {"ds", {ArchId::DS, 16725485}}, {"vgg", {ArchId::VGG_CL, 3281840}}};

Verdict criterion4(const std::string& which) {
  Stopwatch clock;
  std::vector<std::string> keys;
  if (which.empty())
    keys = {"dtc", "ds", "vgg"};
  else if (kCountTargets.count(which))
    keys = {which};
  else
    throw ConfigError("criterion 4 takes dtc, ds or vgg");
  bool ok = true;
  std::string detail;
  for (const auto& k : keys) {
    const auto v = count_line(kCountTargets.at(k));
    ok = ok && v.outcome == Outcome::Pass;
    detail += (detail.empty() ? "" : ", ") + v.detail;
  }
  const double secs = clock.seconds();
  return pass_if(ok && secs < 1.0, detail + fmt("; tolerance 10%%; %.3f s", secs));
}

// ---------------------------------------------------------------- 5

Verdict criterion5() {
  Stopwatch clock;
  std::mt19937_64 rng(55);
  int draws = 0, checked = 0;
  std::string broken;
  for (; draws < 200 && broken.empty(); ++draws) {
    const int in = std::uniform_int_distribution<int>(1, 64)(rng);
    const int layers = std::uniform_int_distribution<int>(1, 6)(rng);
    const int growth = std::uniform_int_distribution<int>(1, 40)(rng);
    const int twentieths = std::uniform_int_distribution<int>(1, 20)(rng);
    const double compression = twentieths / 20.0;
    const int blocks = std::uniform_int_distribution<int>(2, 3)(rng);

    DtcConfig c;
    c.initial_filters = in;
    c.block_layers.assign(blocks, layers);
    c.growth = growth;
    c.compression = compression;
    c.bottleneck = draws % 2;
    c.input_height = c.input_width = 16;
    const auto shapes = infer_shapes(build_dtc(c).graph);

    int expected_in = in;
    for (int b = 1; b <= blocks; ++b) {
      const int block_out = expected_in + layers * growth;
      const auto concat = "block" + std::to_string(b) + "/layer" + std::to_string(layers) + "/concat";
      if (shapes.at(concat).channels != block_out) broken = concat;
      if (dense_block_out_channels(expected_in, layers, growth) != block_out) broken = "dense_block_out_channels";
      ++checked;
      if (b == blocks) break;
      const int trans_out = std::max(1, block_out * twentieths / 20);
      const auto pool = "transition" + std::to_string(b) + "/pool";
      if (shapes.at(pool).channels != trans_out) broken = pool;
      if (transition_out_channels(block_out, compression) != trans_out) broken = "transition_out_channels";
      ++checked;
      expected_in = trans_out;
    }
    if (!broken.empty())
      broken += fmt(" (in=%d layers=%d growth=%d compression=%.2f)", in, layers, growth, compression);
  }
  const double secs = clock.seconds();
  return pass_if(broken.empty() && draws == 200 && secs < 1.0,
                 fmt("%d random draws, %d block/transition outputs match in+L*g and floor(c*theta); %.3f s", draws,
                     checked, secs) +
                     (broken.empty() ? "" : "; mismatch at " + broken));
}

// ---------------------------------------------------------------- 6

Verdict criterion6() {
  const auto data = find_split_d();
  if (!data) return {Outcome::Skip, "split-D archive not found under SONARMATCH_DATA_DIR"};
  Stopwatch clock;
  const auto train_sub = stratified_subset(data->train, 2000, 6);
  const auto test_sub = stratified_subset(data->test, 2000, 7);
  ModelSpec spec = build_model(ArchId::DTC, {{"input_height", train_sub.height()}, {"input_width", train_sub.width()}});
  TrainConfig cfg = default_train_config(ArchId::DTC);
  cfg.max_epochs = 5;
  cfg.early_stop_patience = 0;
  cfg.seed = 6;
  const auto t = train(spec, train_sub, cfg);
  write_history(t, output_dir() / "criterion6_history.csv");
  const double auc = test_auc(t, test_sub);
  std::vector<double> ma;
  for (std::size_t i = 2; i < t.history.size(); ++i)
    ma.push_back((t.history[i - 2].train_loss + t.history[i - 1].train_loss + t.history[i].train_loss) / 3);
  bool decreasing = ma.size() == 3;
  for (std::size_t i = 1; i < ma.size(); ++i) decreasing = decreasing && ma[i] < ma[i - 1];
  const double secs = clock.seconds();
  std::string curve;
  for (double v : ma) curve += fmt(" %.4f", v);
  return pass_if(auc >= 0.75 && decreasing && secs <= 900,
                 fmt("DTC 5 epochs on %zu pairs: subset-test AUC %.4f (>= 0.75), 3-epoch moving-average loss", train_sub.size(),
                     auc) +
                     curve + (decreasing ? " strictly decreasing" : " NOT strictly decreasing") +
                     fmt("; %.0f s", secs));
}

// ---------------------------------------------------------------- 7

const std::map<ArchId, double> kReproThreshold = {
    {ArchId::DTC, 0.93}, {ArchId::VGG_CL, 0.92}, {ArchId::DS, 0.89}};

Verdict criterion7() {
  const char* full = std::getenv("SONARMATCH_FULL_REPRO");
  if (!full || std::string(full) != "1") return {Outcome::Skip, "full-dataset training is opt-in (SONARMATCH_FULL_REPRO=1)"};
  const auto data = find_split_d();
  if (!data) return {Outcome::Skip, "split-D archive not found under SONARMATCH_DATA_DIR"};
  bool ok = true;
  std::string detail;
  for (ArchId arch : {ArchId::DTC, ArchId::VGG_CL, ArchId::DS}) {
    const auto spec = build_model(arch);
    auto cfg = default_train_config(arch);
    cfg.seed = 7;
    const auto t = train(spec, data->train, cfg);
    const auto dir = output_dir() / ("criterion7_" + to_string(arch));
    save_checkpoint(t, dir);
    write_history(t, dir / "history.csv");
    const double auc = test_auc(t, data->test);
    ok = ok && auc >= kReproThreshold.at(arch);
    detail += fmt("%s%s AUC %.4f (>= %.2f, curve in %s)", detail.empty() ? "" : ", ", to_string(arch).c_str(), auc,
                  kReproThreshold.at(arch), (dir / "history.csv").c_str());
  }
  return pass_if(ok, detail);
}

// ---------------------------------------------------------------- 8

Verdict criterion8() {
  const auto dtc_dir = output_dir() / "criterion7_DTC";
  const auto ds_dir = output_dir() / "criterion7_DS";
  if (!fs::exists(dtc_dir / "manifest.json") || !fs::exists(ds_dir / "manifest.json"))
    return {Outcome::Skip, "needs the criterion-7 DTC and DS checkpoints"};
  const auto data = find_split_d();
  if (!data) return {Outcome::Skip, "split-D archive not found under SONARMATCH_DATA_DIR"};
  auto dtc = load_checkpoint(dtc_dir);
  auto ds = load_checkpoint(ds_dir);
  const std::vector<ScoreSet> members{score_dataset(dtc.model, data->test), score_dataset(ds.model, data->test)};
  const double a = auc_trapezoid(members[0]).auc, b = auc_trapezoid(members[1]).auc;
  const double e = auc_trapezoid(ensemble_average(members)).auc;
  return pass_if(e >= std::min(a, b), fmt("DTC %.4f, DS %.4f, ensemble %.4f (>= min asserted; >= max %s, not asserted)",
                                          a, b, e, e >= std::max(a, b) ? "holds" : "does not hold"));
}

// ---------------------------------------------------------------- 9

Verdict criterion9() {
  Stopwatch clock;
  PairDataset train_set, test_set;
  std::string source;
  TrainConfig cfg = default_train_config(ArchId::DTC);
  cfg.early_stop_patience = 0;
  cfg.seed = 9;
  if (auto data = find_split_d()) {
    train_set = stratified_subset(data->train, 2000, 9);
    test_set = data->test;
    cfg.max_epochs = 5;
    source = "split D";
  } else {
    train_set = make_synthetic_pairs(400, 32, 32, 90, "train");
    test_set = make_synthetic_pairs(200, 32, 32, 91, "test");
    cfg.max_epochs = 4;
    cfg.learning_rate = 1.0;
    cfg.batch_size = 32;
    source = "synthetic stand-in (no split-D archive)";
  }
  const auto spec = build_model(ArchId::DTC, {{"input_height", train_set.height()}, {"input_width", train_set.width()}});
  const auto trained = train(spec, train_set, cfg);

  McOptions opt;
  opt.passes = 20;
  opt.seed = 9;
  const auto serial = mc_dropout_samples(trained.model, test_set, opt);
  opt.threads = 4;
  const bool bit_exact = mc_dropout_samples(trained.model, test_set, opt) == serial;
  const auto r = summarize_samples(serial, test_set, orientation_for(trained.spec().output_semantics));
  std::size_t positive = 0;
  for (const auto& e : r.entries) positive += e.std > 0.0;
  const double frac = static_cast<double>(positive) / static_cast<double>(r.entries.size());

  McOptions zero;
  zero.passes = 20;
  zero.seed = 9;
  zero.allow_zero_rate = true;
  const auto z = mc_dropout_scores(with_dropout(trained.model, 0.0), test_set, zero);
  const bool all_zero = std::all_of(z.entries.begin(), z.entries.end(), [](const McEntry& e) { return e.std == 0.0; });
  const double secs = clock.seconds();
  return pass_if(frac >= 0.99 && all_zero && bit_exact,
                 fmt("%s, T=20 over %zu test pairs: std>0 for %.2f%% (>= 99%%); p=0 gives std 0: %s; "
                     "4 threads vs serial bit-exact: %s; %.1f s",
                     source.c_str(), r.entries.size(), 100.0 * frac, all_zero ? "yes" : "no",
                     bit_exact ? "yes" : "no", secs));
}

// ---------------------------------------------------------------- driver

int report(const std::string& label, const Verdict& v) {
  const char* word = v.outcome == Outcome::Pass ? "PASS" : v.outcome == Outcome::Fail ? "FAIL" : "SKIP";
  std::printf("%s: %s - %s\n", label.c_str(), word, v.detail.c_str());
  std::fflush(stdout);
  return v.outcome == Outcome::Pass ? 0 : v.outcome == Outcome::Fail ? 1 : kSkip;
}

Verdict guarded(const std::function<Verdict()>& f) {
  try {
    return f();
  } catch (const std::exception& e) {
    return {Outcome::Fail, std::string("error: ") + e.what()};
  }
}

}  // namespace

int main(int argc, char** argv) {
  const std::map<int, std::function<Verdict(const std::string&)>> criteria = {
      {1, [](const std::string&) { return criterion1(); }},
      {2, [](const std::string&) { return criterion2(); }},
      {3, [](const std::string&) { return criterion3(); }},
      {4, [](const std::string& w) { return criterion4(w); }},
      {5, [](const std::string&) { return criterion5(); }},
      {6, [](const std::string&) { return criterion6(); }},
      {7, [](const std::string&) { return criterion7(); }},
      {8, [](const std::string&) { return criterion8(); }},
      {9, [](const std::string&) { return criterion9(); }},
  };
  if (argc > 1) {
    const int id = std::atoi(argv[1]);
    const std::string which = argc > 2 ? argv[2] : "";
    if (!criteria.count(id)) {
      std::fprintf(stderr, "usage: %s [criterion 1-9 [variant]]\n", argv[0]);
      return 2;
    }
    std::string label = "criterion " + std::to_string(id);
    if (!which.empty()) label += " [" + which + "]";
    return report(label, guarded([&] { return criteria.at(id)(which); }));
  }
  int worst = 0;
  for (const auto& [id, run] : criteria) {
    const int code = report("criterion " + std::to_string(id), guarded([&] { return run(""); }));
    if (code == 1) worst = 1;
  }
  return worst;
}
