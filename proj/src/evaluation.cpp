#include "sonarmatch/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "sonarmatch/error.hpp"
#include "sonarmatch/model.hpp"

namespace sonarmatch {

std::string to_string(ScoreOrientation o) {
  return o == ScoreOrientation::HigherIsMatch ? "higher_is_match" : "lower_is_match";
}

ScoreOrientation score_orientation_from_string(const std::string& s) {
  if (s == "higher_is_match") return ScoreOrientation::HigherIsMatch;
  if (s == "lower_is_match") return ScoreOrientation::LowerIsMatch;
  throw DataError("unknown score orientation '" + s + "'");
}

ScoreOrientation orientation_for(OutputSemantics s) {
  return s == OutputSemantics::MatchProbability ? ScoreOrientation::HigherIsMatch : ScoreOrientation::LowerIsMatch;
}

ScoreSet make_score_set(const PairDataset& d, std::span<const double> scores, ScoreOrientation o) {
  if (scores.size() != d.size())
    throw ConfigError("got " + std::to_string(scores.size()) + " scores for " + std::to_string(d.size()) + " pairs");
  ScoreSet s;
  s.orientation = o;
  s.labels = d.orientation;
  s.entries.reserve(d.size());
  for (std::size_t i = 0; i < d.size(); ++i) s.entries.push_back({d.pairs[i].index, scores[i], d.pairs[i].label});
  return s;
}

ScoreSet score_dataset(Model& m, const PairDataset& d) {
  const auto scores = m.predict(d, Mode::Inference);
  return make_score_set(d, scores, orientation_for(m.spec().output_semantics));
}

ScoreSet canonicalize(const ScoreSet& s) {
  ScoreSet out = s;
  for (auto& e : out.entries) {
    if (s.orientation == ScoreOrientation::LowerIsMatch) e.score = -e.score;
    if (s.labels == LabelOrientation::MatchIsZero) e.label = static_cast<std::uint8_t>(1 - e.label);
  }
  out.orientation = ScoreOrientation::HigherIsMatch;
  out.labels = LabelOrientation::MatchIsOne;
  return out;
}

namespace {

std::pair<std::size_t, std::size_t> class_counts(const ScoreSet& c) {
  std::size_t pos = 0, neg = 0;
  for (const auto& e : c.entries) {
    if (e.label > 1) throw DataError("score label outside {0,1}");
    if (!std::isfinite(e.score)) throw NumericError("non-finite score for pair " + std::to_string(e.index));
    (e.label == 1 ? pos : neg)++;
  }
  if (pos == 0 || neg == 0) throw DataError("AUC needs both matching and non-matching pairs");
  return {pos, neg};
}

}  // namespace

RocResult auc_trapezoid(const ScoreSet& s) {
  const ScoreSet c = canonicalize(s);
  const auto [pos, neg] = class_counts(c);
  std::vector<ScoreEntry> sorted = c.entries;
  std::sort(sorted.begin(), sorted.end(), [](const ScoreEntry& a, const ScoreEntry& b) { return a.score > b.score; });

  RocResult r;
  r.points.push_back({0.0, 0.0});
  // Twice the area in units of one (match, non-match) cell; exact in integers.
  unsigned long long area2 = 0;
  std::size_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < sorted.size();) {
    std::size_t j = i, dtp = 0, dfp = 0;
    while (j < sorted.size() && sorted[j].score == sorted[i].score) {
      (sorted[j].label == 1 ? dtp : dfp)++;
      ++j;
    }
    area2 += static_cast<unsigned long long>(dfp) * (2 * tp + dtp);
    tp += dtp;
    fp += dfp;
    r.points.push_back({static_cast<double>(fp) / static_cast<double>(neg),
                        static_cast<double>(tp) / static_cast<double>(pos)});
    i = j;
  }
  r.auc = static_cast<double>(area2) / (2.0 * static_cast<double>(pos) * static_cast<double>(neg));
  return r;
}

double auc_pairwise_oracle(const ScoreSet& s) {
  const ScoreSet c = canonicalize(s);
  const auto [pos, neg] = class_counts(c);
  unsigned long long twice_wins = 0;
  for (const auto& p : c.entries) {
    if (p.label != 1) continue;
    for (const auto& n : c.entries) {
      if (n.label != 0) continue;
      if (p.score > n.score) twice_wins += 2;
      else if (p.score == n.score) twice_wins += 1;
    }
  }
  return static_cast<double>(twice_wins) / (2.0 * static_cast<double>(pos) * static_cast<double>(neg));
}

void write_scores(const ScoreSet& s, const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw DataError("cannot write " + path.string());
  f << "# orientation=" << to_string(s.orientation) << " labels=" << to_string(s.labels) << '\n';
  f << "index,label,score\n";
  f.precision(17);
  for (const auto& e : s.entries) f << e.index << ',' << static_cast<int>(e.label) << ',' << e.score << '\n';
  if (!f) throw DataError("write failed for " + path.string());
}

ScoreSet read_scores(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw DataError("cannot read score file " + path.string());
  ScoreSet s;
  std::string line;
  bool header = false;
  std::size_t lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line[0] == '#') {
      std::istringstream in(line.substr(1));
      std::string tok;
      while (in >> tok) {
        const auto eq = tok.find('=');
        if (eq == std::string::npos) continue;
        const auto key = tok.substr(0, eq), val = tok.substr(eq + 1);
        if (key == "orientation") s.orientation = score_orientation_from_string(val);
        else if (key == "labels") s.labels = label_orientation_from_string(val);
      }
      continue;
    }
    if (!header) {
      if (line != "index,label,score") throw DataError(path.string() + ": expected header index,label,score");
      header = true;
      continue;
    }
    std::istringstream in(line);
    std::string a, b, c;
    if (!std::getline(in, a, ',') || !std::getline(in, b, ',') || !std::getline(in, c))
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": expected 3 columns");
    try {
      std::size_t used = 0;
      ScoreEntry e;
      e.index = std::stoll(a, &used);
      if (used != a.size()) throw std::invalid_argument(a);
      const int label = std::stoi(b, &used);
      if (used != b.size() || (label != 0 && label != 1)) throw std::invalid_argument(b);
      e.label = static_cast<std::uint8_t>(label);
      e.score = std::stod(c, &used);
      if (used != c.size()) throw std::invalid_argument(c);
      s.entries.push_back(e);
    } catch (const std::logic_error&) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": malformed row '" + line + "'");
    }
  }
  if (!header) throw DataError(path.string() + ": missing header");
  return s;
}

void write_score_table(std::span<const std::string> names, std::span<const ScoreSet> sets,
                       const std::filesystem::path& path) {
  if (names.size() != sets.size() || sets.empty()) throw ConfigError("need one name per score set");
  std::vector<ScoreSet> canon;
  for (const auto& s : sets) canon.push_back(canonicalize(s));
  for (const auto& c : canon) {
    if (c.size() != canon[0].size()) throw DataError("score sets differ in length");
    for (std::size_t i = 0; i < c.size(); ++i)
      if (c.entries[i].index != canon[0].entries[i].index || c.entries[i].label != canon[0].entries[i].label)
        throw DataError("score sets differ in pair indices or labels");
  }
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw DataError("cannot write " + path.string());
  f << "index,label";
  for (const auto& n : names) f << ',' << n;
  f << '\n';
  f.precision(17);
  for (std::size_t i = 0; i < canon[0].size(); ++i) {
    f << canon[0].entries[i].index << ',' << static_cast<int>(canon[0].entries[i].label);
    for (const auto& c : canon) f << ',' << c.entries[i].score;
    f << '\n';
  }
  if (!f) throw DataError("write failed for " + path.string());
}

}  // namespace sonarmatch
