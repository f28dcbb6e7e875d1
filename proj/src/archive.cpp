#include "sonarmatch/archive.hpp"

#include <hdf5.h>

#include <algorithm>
#include <cmath>
#include <optional>
#include <utility>

#include "archive_reader.hpp"
#include "sonarmatch/error.hpp"

namespace sonarmatch {

namespace {

// RAII owner for an hid_t with its matching close function.
class Handle {
 public:
  using Closer = herr_t (*)(hid_t);
  Handle() = default;
  Handle(hid_t id, Closer closer) : id_(id), closer_(closer) {}
  Handle(const Handle&) = delete;
  Handle& operator=(const Handle&) = delete;
  Handle(Handle&& o) noexcept : id_(std::exchange(o.id_, H5I_INVALID_HID)), closer_(o.closer_) {}
  Handle& operator=(Handle&& o) noexcept {
    reset();
    id_ = std::exchange(o.id_, H5I_INVALID_HID);
    closer_ = o.closer_;
    return *this;
  }
  ~Handle() { reset(); }

  hid_t get() const noexcept { return id_; }
  bool valid() const noexcept { return id_ >= 0; }

 private:
  void reset() {
    if (id_ >= 0 && closer_) closer_(id_);
    id_ = H5I_INVALID_HID;
  }
  hid_t id_ = H5I_INVALID_HID;
  Closer closer_ = nullptr;
};

struct SilenceHdf5 {
  SilenceHdf5() {
    H5Eget_auto2(H5E_DEFAULT, &func, &data);
    H5Eset_auto2(H5E_DEFAULT, nullptr, nullptr);
  }
  ~SilenceHdf5() { H5Eset_auto2(H5E_DEFAULT, func, data); }
  H5E_auto2_t func = nullptr;
  void* data = nullptr;
};

bool link_exists(hid_t loc, const std::string& name) {
  return H5Lexists(loc, name.c_str(), H5P_DEFAULT) > 0;
}

bool is_group(hid_t loc, const std::string& name) {
  if (!link_exists(loc, name)) return false;
  H5O_info_t info;
#if H5_VERSION_GE(1, 12, 0)
  if (H5Oget_info_by_name3(loc, name.c_str(), &info, H5O_INFO_BASIC, H5P_DEFAULT) < 0) return false;
#else
  if (H5Oget_info_by_name(loc, name.c_str(), &info, H5P_DEFAULT) < 0) return false;
#endif
  return info.type == H5O_TYPE_GROUP;
}

std::vector<std::string> candidates(std::initializer_list<const char*> bases, const std::string& split) {
  std::vector<std::string> out;
  for (const char* b : bases) out.emplace_back(b);
  if (!split.empty())
    for (const char* b : bases) out.push_back(std::string(b) + "_" + split);
  return out;
}

std::optional<std::string> first_existing(hid_t loc, const std::vector<std::string>& names) {
  for (const auto& n : names)
    if (link_exists(loc, n) && !is_group(loc, n)) return n;
  return std::nullopt;
}

struct ArrayInfo {
  Handle dset;
  std::vector<hsize_t> dims;
  bool integer = false;
};

ArrayInfo open_array(hid_t loc, const std::string& name) {
  ArrayInfo a;
  a.dset = Handle(H5Dopen2(loc, name.c_str(), H5P_DEFAULT), H5Dclose);
  if (!a.dset.valid()) throw DataError("cannot open archive dataset '" + name + "'");
  Handle space(H5Dget_space(a.dset.get()), H5Sclose);
  const int rank = H5Sget_simple_extent_ndims(space.get());
  if (rank <= 0) throw DataError("archive dataset '" + name + "' has no extent");
  a.dims.resize(static_cast<std::size_t>(rank));
  H5Sget_simple_extent_dims(space.get(), a.dims.data(), nullptr);
  Handle type(H5Dget_type(a.dset.get()), H5Tclose);
  const auto cls = H5Tget_class(type.get());
  if (cls != H5T_INTEGER && cls != H5T_FLOAT)
    throw DataError("archive dataset '" + name + "' is not numeric");
  a.integer = cls == H5T_INTEGER;
  return a;
}

// Reads rows [row0, row0+rows) of the leading axis as floats.
std::vector<float> read_rows(const ArrayInfo& a, hsize_t row0, hsize_t rows) {
  Handle file_space(H5Dget_space(a.dset.get()), H5Sclose);
  std::vector<hsize_t> start(a.dims.size(), 0);
  std::vector<hsize_t> count = a.dims;
  start[0] = row0;
  count[0] = rows;
  H5Sselect_hyperslab(file_space.get(), H5S_SELECT_SET, start.data(), nullptr, count.data(), nullptr);
  hsize_t total = 1;
  for (auto c : count) total *= c;
  Handle mem_space(H5Screate_simple(1, &total, nullptr), H5Sclose);
  std::vector<float> out(total);
  if (H5Dread(a.dset.get(), H5T_NATIVE_FLOAT, mem_space.get(), file_space.get(), H5P_DEFAULT,
              out.data()) < 0)
    throw DataError("failed reading archive data");
  return out;
}

enum class Layout { PairsFirst, PairsLast, Single };

struct PatchSource {
  ArrayInfo array;
  Layout layout;
  hsize_t height = 0;
  hsize_t width = 0;
};

PatchSource describe_pairs(ArrayInfo a, const std::string& name) {
  if (a.dims.size() != 4) throw DataError("paired patch array '" + name + "' must be rank 4");
  PatchSource s{std::move(a), Layout::PairsFirst};
  const auto& d = s.array.dims;
  if (d[1] == 2) {
    s.layout = Layout::PairsFirst;
    s.height = d[2];
    s.width = d[3];
  } else if (d[3] == 2) {
    s.layout = Layout::PairsLast;
    s.height = d[1];
    s.width = d[2];
  } else {
    throw DataError("paired patch array '" + name + "' has no axis of length 2");
  }
  return s;
}

PatchSource describe_single(ArrayInfo a, const std::string& name) {
  PatchSource s{std::move(a), Layout::Single};
  const auto& dims = s.array.dims;
  if (dims.size() == 3) {
    s.height = dims[1];
    s.width = dims[2];
  } else if (dims.size() == 4 && dims[1] == 1) {
    s.height = dims[2];
    s.width = dims[3];
  } else if (dims.size() == 4 && dims[3] == 1) {
    s.height = dims[1];
    s.width = dims[2];
  } else {
    throw DataError("patch array '" + name + "' must be (N,H,W), (N,1,H,W) or (N,H,W,1)");
  }
  return s;
}

float max_value(const ArrayInfo& a) {
  constexpr hsize_t kChunk = 512;
  float m = 0.0f;
  for (hsize_t r = 0; r < a.dims[0]; r += kChunk) {
    const auto rows = std::min(kChunk, a.dims[0] - r);
    for (float v : read_rows(a, r, rows)) m = std::max(m, v);
  }
  return m;
}

}  // namespace

namespace detail {

PairDataset read_archive(const std::filesystem::path& path, const std::string& split) {
  SilenceHdf5 quiet;
  if (H5Fis_hdf5(path.c_str()) <= 0) throw DataError("not an HDF5 archive: " + path.string());
  Handle file(H5Fopen(path.c_str(), H5F_ACC_RDONLY, H5P_DEFAULT), H5Fclose);
  if (!file.valid()) throw DataError("cannot open archive: " + path.string());

  Handle group;
  hid_t loc = file.get();
  if (!split.empty() && is_group(file.get(), split)) {
    group = Handle(H5Gopen2(file.get(), split.c_str(), H5P_DEFAULT), H5Gclose);
    loc = group.get();
  }

  std::vector<PatchSource> sources;
  if (auto name = first_existing(loc, candidates({"X", "x", "patches", "data", "pairs"}, split))) {
    sources.push_back(describe_pairs(open_array(loc, *name), *name));
  } else {
    const std::vector<std::pair<const char*, const char*>> pairs = {
        {"X1", "X2"}, {"x1", "x2"}, {"a", "b"}, {"left", "right"}, {"patch_a", "patch_b"}};
    for (const auto& [na, nb] : pairs) {
      auto a = first_existing(loc, candidates({na}, split));
      auto b = first_existing(loc, candidates({nb}, split));
      if (a && b) {
        sources.push_back(describe_single(open_array(loc, *a), *a));
        sources.push_back(describe_single(open_array(loc, *b), *b));
        break;
      }
    }
  }
  if (sources.empty())
    throw DataError("malformed archive: no patch arrays found in " + path.string() +
                    (split.empty() ? "" : " for split '" + split + "'"));
  auto label_name = first_existing(loc, candidates({"Y", "y", "labels", "label"}, split));
  if (!label_name) throw DataError("malformed archive: no label array found in " + path.string());
  ArrayInfo labels = open_array(loc, *label_name);
  if (labels.dims.size() > 2 || (labels.dims.size() == 2 && labels.dims[1] != 1))
    throw DataError("label array must be (N) or (N,1)");

  const hsize_t n = sources.front().array.dims[0];
  for (const auto& s : sources) {
    if (s.array.dims[0] != n) throw DataError("patch arrays disagree on pair count");
    if (s.height != sources.front().height || s.width != sources.front().width)
      throw DataError("inconsistent patch dimensions between patch arrays");
  }
  if (labels.dims[0] != n) throw DataError("label count does not match pair count");

  std::vector<float> scale(sources.size(), 1.0f);
  for (std::size_t i = 0; i < sources.size(); ++i) {
    const auto& a = sources[i].array;
    if (a.integer || max_value(a) > 1.0f) scale[i] = 1.0f / 255.0f;
  }

  const auto label_values = read_rows(labels, 0, n);
  const int h = static_cast<int>(sources.front().height);
  const int w = static_cast<int>(sources.front().width);
  const std::size_t hw = static_cast<std::size_t>(h) * w;

  PairDataset d;
  d.split_name = split.empty() ? path.stem().string() : split;
  d.orientation = LabelOrientation::MatchIsOne;
  d.pairs.resize(n);

  constexpr hsize_t kChunk = 512;
  for (hsize_t r0 = 0; r0 < n; r0 += kChunk) {
    const auto rows = std::min(kChunk, n - r0);
    std::vector<std::vector<float>> blocks;
    for (const auto& s : sources) blocks.push_back(read_rows(s.array, r0, rows));
    for (hsize_t r = 0; r < rows; ++r) {
      std::vector<float> pa(hw);
      std::vector<float> pb(hw);
      if (sources.size() == 2) {
        for (std::size_t k = 0; k < hw; ++k) {
          pa[k] = blocks[0][r * hw + k] * scale[0];
          pb[k] = blocks[1][r * hw + k] * scale[1];
        }
      } else if (sources[0].layout == Layout::PairsFirst) {
        const float* base = blocks[0].data() + r * 2 * hw;
        for (std::size_t k = 0; k < hw; ++k) {
          pa[k] = base[k] * scale[0];
          pb[k] = base[hw + k] * scale[0];
        }
      } else {
        const float* base = blocks[0].data() + r * 2 * hw;
        for (std::size_t k = 0; k < hw; ++k) {
          pa[k] = base[2 * k] * scale[0];
          pb[k] = base[2 * k + 1] * scale[0];
        }
      }
      const double y = label_values[r0 + r];
      if (y != 0.0 && y != 1.0)
        throw DataError("label outside {0,1} at pair " + std::to_string(r0 + r));
      auto& p = d.pairs[r0 + r];
      p.a = Patch(h, w, std::move(pa));
      p.b = Patch(h, w, std::move(pb));
      p.label = static_cast<std::uint8_t>(y);
      p.index = static_cast<std::int64_t>(r0 + r);
    }
  }
  return d;
}

}  // namespace detail

std::vector<std::string> archive_splits(const std::filesystem::path& path) {
  SilenceHdf5 quiet;
  if (!std::filesystem::exists(path)) throw DataError("archive not found: " + path.string());
  if (H5Fis_hdf5(path.c_str()) <= 0) throw DataError("not an HDF5 archive: " + path.string());
  Handle file(H5Fopen(path.c_str(), H5F_ACC_RDONLY, H5P_DEFAULT), H5Fclose);
  if (!file.valid()) throw DataError("cannot open archive: " + path.string());
  std::vector<std::string> out;
  for (const char* s : {"train", "test", "validation", "val"}) {
    const std::string split(s);
    if (is_group(file.get(), split)) {
      out.push_back(split);
      continue;
    }
    for (const char* base : {"X", "x", "patches", "data", "pairs", "X1", "a", "left"}) {
      if (link_exists(file.get(), std::string(base) + "_" + split)) {
        out.push_back(split);
        break;
      }
    }
  }
  return out;
}

void save_archive(const PairDataset& d, const std::filesystem::path& path, const std::string& split) {
  if (d.empty()) throw DataError("refusing to write an empty split");
  SilenceHdf5 quiet;
  Handle file;
  if (std::filesystem::exists(path))
    file = Handle(H5Fopen(path.c_str(), H5F_ACC_RDWR, H5P_DEFAULT), H5Fclose);
  else
    file = Handle(H5Fcreate(path.c_str(), H5F_ACC_TRUNC, H5P_DEFAULT, H5P_DEFAULT), H5Fclose);
  if (!file.valid()) throw DataError("cannot write archive: " + path.string());
  Handle group(H5Gcreate2(file.get(), split.c_str(), H5P_DEFAULT, H5P_DEFAULT, H5P_DEFAULT),
               H5Gclose);
  if (!group.valid()) throw DataError("cannot create split group '" + split + "'");

  const hsize_t n = d.size();
  const hsize_t h = static_cast<hsize_t>(d.height());
  const hsize_t w = static_cast<hsize_t>(d.width());
  std::vector<std::uint8_t> x(n * 2 * h * w);
  std::vector<std::uint8_t> y(n);
  for (hsize_t i = 0; i < n; ++i) {
    const auto& p = d.pairs[i];
    const auto pa = p.a.pixels();
    const auto pb = p.b.pixels();
    for (hsize_t k = 0; k < h * w; ++k) {
      x[(i * 2) * h * w + k] = static_cast<std::uint8_t>(std::lround(pa[k] * 255.0f));
      x[(i * 2 + 1) * h * w + k] = static_cast<std::uint8_t>(std::lround(pb[k] * 255.0f));
    }
    y[i] = d.canonical_label(i);
  }
  const hsize_t xdims[4] = {n, 2, h, w};
  Handle xspace(H5Screate_simple(4, xdims, nullptr), H5Sclose);
  Handle xset(H5Dcreate2(group.get(), "X", H5T_NATIVE_UINT8, xspace.get(), H5P_DEFAULT, H5P_DEFAULT,
                         H5P_DEFAULT),
              H5Dclose);
  Handle yspace(H5Screate_simple(1, &n, nullptr), H5Sclose);
  Handle yset(H5Dcreate2(group.get(), "Y", H5T_NATIVE_UINT8, yspace.get(), H5P_DEFAULT, H5P_DEFAULT,
                         H5P_DEFAULT),
              H5Dclose);
  if (!xset.valid() || !yset.valid() ||
      H5Dwrite(xset.get(), H5T_NATIVE_UINT8, H5S_ALL, H5S_ALL, H5P_DEFAULT, x.data()) < 0 ||
      H5Dwrite(yset.get(), H5T_NATIVE_UINT8, H5S_ALL, H5S_ALL, H5P_DEFAULT, y.data()) < 0)
    throw DataError("failed writing archive split '" + split + "'");
}

}  // namespace sonarmatch
