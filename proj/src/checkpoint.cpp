#include <zlib.h>

#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <set>

#include "sonarmatch/error.hpp"
#include "sonarmatch/training.hpp"

namespace sonarmatch {

namespace fs = std::filesystem;

namespace {

constexpr char kTensorMagic[4] = {'S', 'M', 'T', '1'};

void put_u32(std::string& buf, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

std::uint32_t crc_of(const std::string& bytes, std::size_t n) {
  uLong crc = crc32(0L, Z_NULL, 0);
  return static_cast<std::uint32_t>(
      crc32(crc, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(n)));
}

std::string tensor_file_name(const std::string& param) {
  std::string f = param;
  for (auto& c : f)
    if (c == '/') c = '.';
  return f + ".smt";
}

nlohmann::json history_json(const std::vector<EpochRecord>& h) {
  auto arr = nlohmann::json::array();
  for (const auto& r : h) {
    nlohmann::json e = {{"epoch", r.epoch}, {"train_loss", r.train_loss}};
    e["val_auc"] = std::isnan(r.val_auc) ? nlohmann::json(nullptr) : nlohmann::json(r.val_auc);
    arr.push_back(e);
  }
  return arr;
}

std::vector<EpochRecord> history_from(const nlohmann::json& arr) {
  std::vector<EpochRecord> h;
  for (const auto& e : arr) {
    EpochRecord r;
    r.epoch = e.at("epoch").get<int>();
    r.train_loss = e.at("train_loss").get<double>();
    r.val_auc = e.at("val_auc").is_null() ? std::numeric_limits<double>::quiet_NaN()
                                          : e.at("val_auc").get<double>();
    h.push_back(r);
  }
  return h;
}

}  // namespace

void write_tensor_file(const fs::path& path, const std::vector<int>& shape, const std::vector<float>& data) {
  std::string buf(kTensorMagic, 4);
  put_u32(buf, static_cast<std::uint32_t>(shape.size()));
  std::size_t n = 1;
  for (int d : shape) {
    put_u32(buf, static_cast<std::uint32_t>(d));
    n *= static_cast<std::size_t>(d);
  }
  if (n != data.size()) throw ConfigError("tensor data does not match its shape");
  for (float v : data) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32(buf, bits);
  }
  put_u32(buf, crc_of(buf, buf.size()));
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot write " + path.string());
  f.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!f) throw DataError("write failed for " + path.string());
}

std::pair<std::vector<int>, std::vector<float>> read_tensor_file(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot read tensor file " + path.string());
  std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  const auto* p = reinterpret_cast<const unsigned char*>(buf.data());
  if (buf.size() < 12) throw DataError("tensor file truncated: " + path.string());
  const std::uint32_t stored = get_u32(p + buf.size() - 4);
  if (crc_of(buf, buf.size() - 4) != stored) throw DataError("checksum mismatch in " + path.string());
  if (std::memcmp(buf.data(), kTensorMagic, 4) != 0) throw DataError("bad tensor magic in " + path.string());
  const std::uint32_t rank = get_u32(p + 4);
  if (rank > 8 || buf.size() < 12 + 4ull * rank) throw DataError("bad tensor header in " + path.string());
  std::vector<int> shape(rank);
  std::size_t n = 1;
  for (std::uint32_t i = 0; i < rank; ++i) {
    shape[i] = static_cast<int>(get_u32(p + 8 + 4 * i));
    n *= static_cast<std::size_t>(shape[i]);
  }
  const std::size_t offset = 8 + 4ull * rank;
  if (buf.size() != offset + 4 * n + 4) throw DataError("tensor size mismatch in " + path.string());
  std::vector<float> data(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint32_t bits = get_u32(p + offset + 4 * i);
    std::memcpy(&data[i], &bits, 4);
  }
  return {shape, data};
}

void save_checkpoint(const TrainedModel& m, const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw DataError("cannot create checkpoint directory " + dir.string() + ": " + ec.message());

  nlohmann::json manifest;
  manifest["format_version"] = kCheckpointVersion;
  manifest["arch_id"] = to_string(m.spec().arch);
  manifest["config"] = m.spec().config;
  manifest["graph"] = m.spec().graph;
  manifest["output_semantics"] = to_string(m.spec().output_semantics);
  manifest["margin"] = m.spec().margin;
  manifest["orientation"] = to_string(m.orientation);
  manifest["seed"] = m.config.seed;
  manifest["train_config"] = m.config;
  manifest["history"] = history_json(m.history);
  manifest["best_epoch"] = m.best_epoch;
  auto tensors = nlohmann::json::array();
  for (const auto& [name, p] : m.model.network().parameters()) {
    const auto file = tensor_file_name(name);
    write_tensor_file(dir / file, p.shape, p.value);
    tensors.push_back({{"name", name}, {"file", file}, {"shape", p.shape}, {"trainable", p.trainable}});
  }
  manifest["tensors"] = tensors;
  std::ofstream f(dir / "manifest.json", std::ios::trunc);
  if (!f) throw DataError("cannot write manifest in " + dir.string());
  f << manifest.dump(2) << '\n';
  if (!f) throw DataError("manifest write failed in " + dir.string());
}

TrainedModel load_checkpoint(const fs::path& dir) {
  const auto manifest_path = dir / "manifest.json";
  std::ifstream f(manifest_path);
  if (!f) throw DataError("no checkpoint manifest at " + manifest_path.string());
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(f);
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed manifest " + manifest_path.string() + ": " + e.what());
  }
  try {
    const int version = manifest.at("format_version").get<int>();
    if (version != kCheckpointVersion)
      throw DataError("checkpoint format version " + std::to_string(version) + " is not supported (expected " +
                      std::to_string(kCheckpointVersion) + ")");
    const ArchId arch = arch_from_string(manifest.at("arch_id").get<std::string>());
    ModelSpec spec = build_model(arch, manifest.at("config"));
    if (nlohmann::json(spec.graph) != manifest.at("graph"))
      throw DataError("checkpoint graph does not match its arch_id and config");

    TrainConfig cfg = default_train_config(arch);
    update_from_json(manifest.at("train_config"), cfg);
    TrainedModel m{Model(spec), history_from(manifest.at("history")), manifest.at("best_epoch").get<int>(), cfg,
                   label_orientation_from_string(manifest.at("orientation").get<std::string>())};

    auto& params = m.model.network().parameters();
    std::set<std::string> seen;
    for (const auto& t : manifest.at("tensors")) {
      const auto name = t.at("name").get<std::string>();
      auto it = params.find(name);
      if (it == params.end())
        throw DataError("checkpoint tensor '" + name + "' is not a parameter of " + to_string(arch));
      auto [shape, data] = read_tensor_file(dir / t.at("file").get<std::string>());
      if (shape != it->second.shape) throw DataError("tensor '" + name + "' has the wrong shape");
      it->second.value = std::move(data);
      seen.insert(name);
    }
    if (seen.size() != params.size()) throw DataError("checkpoint is missing parameters of " + to_string(arch));
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed manifest " + manifest_path.string() + ": " + e.what());
  } catch (const ConfigError& e) {
    throw DataError(std::string("invalid checkpoint manifest: ") + e.what());
  }
}

}  // namespace sonarmatch
