#include <algorithm>
#include <cmath>
#include <random>

#include "sonarmatch/dataset.hpp"
#include "sonarmatch/error.hpp"
#include "sonarmatch/rng.hpp"

namespace sonarmatch {

namespace {

struct ObjectParams {
  bool present = true;
  double cx = 0, cy = 0;      // centre, pixels
  double rx = 0, ry = 0;      // semi-axes
  double angle = 0;
  double intensity = 0;
  double shadow_length = 0;   // along +row (away from the sensor)
  int shape = 0;              // 0 ellipse, 1 box, 2 ring
};

ObjectParams random_object(Rng& rng, int h, int w) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  ObjectParams o;
  o.cx = w * (0.3 + 0.4 * u(rng));
  o.cy = h * (0.3 + 0.4 * u(rng));
  o.rx = w * (0.08 + 0.17 * u(rng));
  o.ry = h * (0.05 + 0.15 * u(rng));
  o.angle = u(rng) * 3.14159265358979;
  o.intensity = 0.55 + 0.4 * u(rng);
  o.shadow_length = h * (0.1 + 0.3 * u(rng));
  o.shape = static_cast<int>(u(rng) * 3.0) % 3;
  return o;
}

bool inside(const ObjectParams& o, double x, double y) {
  const double c = std::cos(o.angle);
  const double s = std::sin(o.angle);
  const double dx = x - o.cx;
  const double dy = y - o.cy;
  const double u = (c * dx + s * dy) / o.rx;
  const double v = (-s * dx + c * dy) / o.ry;
  switch (o.shape) {
    case 1:
      return std::abs(u) <= 1.0 && std::abs(v) <= 1.0;
    case 2: {
      const double r = u * u + v * v;
      return r <= 1.0 && r >= 0.35;
    }
    default:
      return u * u + v * v <= 1.0;
  }
}

std::vector<float> render(const ObjectParams& o, int h, int w, double shift_x, double shift_y,
                          double gain, Rng& rng) {
  // Multiplicative speckle (exponential intensity) over a range-dependent
  // background, the object return, and a shadow cast down-range.
  std::exponential_distribution<double> speckle(1.0);
  std::vector<float> px(static_cast<std::size_t>(h) * w);
  ObjectParams moved = o;
  moved.cx += shift_x;
  moved.cy += shift_y;
  for (int r = 0; r < h; ++r) {
    const double background = 0.12 + 0.08 * static_cast<double>(r) / h;
    for (int c = 0; c < w; ++c) {
      double level = background;
      if (moved.present) {
        if (inside(moved, c, r)) {
          level = moved.intensity * gain;
        } else if (inside(moved, c, r - std::min(moved.shadow_length, moved.ry * 3.0)) &&
                   r > moved.cy) {
          level = 0.02;
        }
      }
      const double v = level * (0.6 + 0.4 * speckle(rng));
      px[static_cast<std::size_t>(r) * w + c] = static_cast<float>(std::clamp(v, 0.0, 1.0));
    }
  }
  return px;
}

}  // namespace

PairDataset make_synthetic_pairs(std::size_t count, int height, int width, std::uint64_t seed,
                                 const std::string& split_name) {
  if (height <= 0 || width <= 0) throw ConfigError("synthetic patch size must be positive");
  Rng rng(derive_seed(seed, streams::kSynthetic));
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const std::size_t matches = count / 2;

  PairDataset d;
  d.split_name = split_name;
  d.orientation = LabelOrientation::MatchIsOne;
  d.pairs.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const bool match = i < matches;
    ObjectParams first = random_object(rng, height, width);
    if (!match && u(rng) < 0.2) first.present = false;
    ObjectParams second = first;
    if (!match) {
      second = random_object(rng, height, width);
      if (first.present && u(rng) < 0.25) second.present = false;
    }
    const double jitter = 0.04 * std::min(height, width);
    PatchPair p;
    p.a = Patch(height, width, render(first, height, width, 0.0, 0.0, 1.0, rng));
    p.b = Patch(height, width,
                render(second, height, width, jitter * (2 * u(rng) - 1), jitter * (2 * u(rng) - 1),
                       0.85 + 0.3 * u(rng), rng));
    p.label = match ? 1 : 0;
    d.pairs.push_back(std::move(p));
  }
  // Interleave matches and non-matches deterministically.
  std::shuffle(d.pairs.begin(), d.pairs.end(), rng);
  for (std::size_t i = 0; i < d.pairs.size(); ++i) d.pairs[i].index = static_cast<std::int64_t>(i);
  return d;
}

}  // namespace sonarmatch
