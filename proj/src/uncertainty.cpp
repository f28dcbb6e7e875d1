#include "sonarmatch/uncertainty.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <thread>

#include "sonarmatch/error.hpp"
#include "sonarmatch/rng.hpp"

namespace sonarmatch {

std::uint64_t mc_pass_seed(std::uint64_t seed, int pass) {
  return derive_seed(derive_seed(seed, streams::kMcDropout), static_cast<std::uint64_t>(pass));
}

std::vector<std::vector<double>> mc_dropout_samples(const Model& m, const PairDataset& d, const McOptions& opt) {
  if (opt.passes < 2) throw ConfigError("MC-Dropout needs at least 2 passes, got " + std::to_string(opt.passes));
  if (!opt.allow_zero_rate && !has_active_dropout(m.spec().graph))
    throw ConfigError("model has no dropout with rate > 0; MC-Dropout std would be 0");
  m.check_input(d);
  if (d.empty()) throw DataError("MC-Dropout on an empty dataset");

  unsigned threads = opt.threads == 0 ? std::max(1u, std::thread::hardware_concurrency()) : opt.threads;
  threads = std::min<unsigned>(threads, static_cast<unsigned>(opt.passes));
  std::vector<std::vector<double>> samples(opt.passes);
  auto run = [&](unsigned worker) {
    Model local = m;
    for (int t = static_cast<int>(worker); t < opt.passes; t += static_cast<int>(threads)) {
      const auto seed = opt.fixed_pass_seed ? *opt.fixed_pass_seed : mc_pass_seed(opt.seed, t);
      samples[t] = local.predict(d, Mode::McDropout, seed);
    }
  };
  if (threads == 1) {
    run(0);
  } else {
    std::vector<std::exception_ptr> errors(threads);
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < threads; ++w)
      pool.emplace_back([&, w] {
        try {
          run(w);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    for (auto& th : pool) th.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }
  return samples;
}

McResult summarize_samples(const std::vector<std::vector<double>>& samples, const PairDataset& d,
                           ScoreOrientation orientation) {
  if (samples.size() < 2) throw ConfigError("need at least 2 samples per pair");
  McResult r;
  r.orientation = orientation;
  const std::size_t T = samples.size();
  std::vector<double> xs(T);
  for (std::size_t i = 0; i < d.size(); ++i) {
    for (std::size_t t = 0; t < T; ++t) {
      if (samples[t].size() != d.size()) throw ConfigError("sample row length mismatch");
      xs[t] = samples[t][i];
    }
    // Summing in sorted order makes the result independent of pass order.
    std::sort(xs.begin(), xs.end());
    double sum = 0.0;
    for (double x : xs) sum += x;
    const double mean = std::clamp(sum / static_cast<double>(T), xs.front(), xs.back());
    double sq = 0.0;
    for (double x : xs) sq += (x - mean) * (x - mean);
    if (!std::isfinite(mean) || !std::isfinite(sq)) throw NumericError("non-finite MC-Dropout sample");
    r.entries.push_back({d.pairs[i].index, mean, std::sqrt(sq / static_cast<double>(T)), static_cast<int>(T)});
  }
  return r;
}

McResult mc_dropout_scores(const Model& m, const PairDataset& d, const McOptions& opt) {
  return summarize_samples(mc_dropout_samples(m, d, opt), d, orientation_for(m.spec().output_semantics));
}

Model with_dropout(const Model& m, double rate) {
  ModelSpec spec = m.spec();
  spec.graph = with_dropout_rate(spec.graph, rate);
  Model out(spec);
  out.network().assign_values(m.network().parameters());
  return out;
}

std::vector<std::int64_t> rank_by_std(const McResult& r, std::size_t k, RankDirection dir) {
  std::vector<McEntry> sorted = r.entries;
  std::stable_sort(sorted.begin(), sorted.end(), [dir](const McEntry& a, const McEntry& b) {
    if (a.std != b.std) return dir == RankDirection::Highest ? a.std > b.std : a.std < b.std;
    return a.index < b.index;
  });
  k = std::min(k, sorted.size());
  std::vector<std::int64_t> out;
  for (std::size_t i = 0; i < k; ++i) out.push_back(sorted[i].index);
  return out;
}

void write_mc_csv(const McResult& r, const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw DataError("cannot write " + path.string());
  f << "index,mean,std\n";
  f.precision(17);
  for (const auto& e : r.entries) f << e.index << ',' << e.mean << ',' << e.std << '\n';
  if (!f) throw DataError("write failed for " + path.string());
}

void write_thumbnails(const PairDataset& d, std::span<const std::int64_t> indices, const std::filesystem::path& path) {
  if (indices.empty()) throw ConfigError("no pairs to draw");
  std::map<std::int64_t, std::size_t> row_of;
  for (std::size_t i = 0; i < d.size(); ++i) row_of[d.pairs[i].index] = i;
  const int h = d.height(), w = d.width(), gap = 4;
  const int width = 2 * w + 3 * gap;
  const int height = static_cast<int>(indices.size()) * (h + gap) + gap;
  std::vector<png_byte> img(static_cast<std::size_t>(width) * height, 255);
  for (std::size_t k = 0; k < indices.size(); ++k) {
    auto it = row_of.find(indices[k]);
    if (it == row_of.end()) throw DataError("pair index " + std::to_string(indices[k]) + " not in dataset");
    const auto& pair = d.pairs[it->second];
    const int y0 = gap + static_cast<int>(k) * (h + gap);
    int x0 = gap;
    for (const Patch* p : {&pair.a, &pair.b}) {
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
          img[static_cast<std::size_t>(y0 + y) * width + x0 + x] =
              static_cast<png_byte>(std::lround(std::clamp(p->at(y, x), 0.0f, 1.0f) * 255.0f));
      x0 += w + gap;
    }
  }

  FILE* fp = std::fopen(path.string().c_str(), "wb");
  if (!fp) throw DataError("cannot write " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
    throw DataError("PNG encoding failed for " + path.string());
  }
  png_init_io(png, fp);
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 8, PNG_COLOR_TYPE_GRAY,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < height; ++y) png_write_row(png, img.data() + static_cast<std::size_t>(y) * width);
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  std::fclose(fp);
}

}  // namespace sonarmatch
