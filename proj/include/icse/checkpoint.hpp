#pragma once

// Checkpoint container: fixed magic, a JSON header carrying the model config,
// the standardizer and a tensor manifest (names + shapes), followed by the
// raw little-endian f64 blobs in manifest order. Round trips are bit-exact.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "icse/model.hpp"
#include "icse/standardize.hpp"

namespace icse {

inline constexpr std::uint32_t kCheckpointFormatVersion = 1;
inline constexpr char kCheckpointMagic[8] = {'I', 'C', 'S', 'E',
                                             'C', 'K', 'P', 'T'};

class checkpoint_error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline nlohmann::json model_config_to_json(const ModelConfig& cfg) {
  return nlohmann::json{
      {"n_layers", cfg.n_layers}, {"n_heads", cfg.n_heads},
      {"n_ctx", cfg.n_ctx},       {"d_filter", cfg.d_filter},
      {"n_u", cfg.n_u},           {"n_y", cfg.n_y},
      {"n_x", cfg.n_x},           {"dropout", cfg.dropout}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig cfg;
  cfg.n_layers = j.at("n_layers").get<int>();
  cfg.n_heads = j.at("n_heads").get<int>();
  cfg.n_ctx = j.at("n_ctx").get<int>();
  cfg.d_filter = j.at("d_filter").get<int>();
  cfg.n_u = j.at("n_u").get<int>();
  cfg.n_y = j.at("n_y").get<int>();
  cfg.n_x = j.at("n_x").get<int>();
  cfg.dropout = j.at("dropout").get<double>();
  cfg.validate();
  return cfg;
}

inline nlohmann::json standardizer_to_json(const Standardizer& s) {
  return nlohmann::json{{"u_mean", s.u_mean}, {"u_std", s.u_std},
                        {"y_mean", s.y_mean}, {"y_std", s.y_std},
                        {"x_mean", s.x_mean}, {"x_std", s.x_std}};
}

inline Standardizer standardizer_from_json(const nlohmann::json& j) {
  Standardizer s;
  s.u_mean = j.at("u_mean").get<std::array<double, 2>>();
  s.u_std = j.at("u_std").get<std::array<double, 2>>();
  s.y_mean = j.at("y_mean").get<double>();
  s.y_std = j.at("y_std").get<double>();
  s.x_mean = j.at("x_mean").get<std::array<double, 2>>();
  s.x_std = j.at("x_std").get<std::array<double, 2>>();
  s.validate();
  return s;
}

struct Checkpoint {
  ModelConfig config;
  Standardizer standardizer;
  ModelWeights weights;
};

inline void save_checkpoint(const std::filesystem::path& path,
                            const Checkpoint& ckpt) {
  nlohmann::json manifest = nlohmann::json::array();
  for_each_tensor(ckpt.weights, [&](const std::string& name, const Tensor& t) {
    manifest.push_back({{"name", name}, {"shape", t.shape}});
  });
  const nlohmann::json header = {
      {"format_version", kCheckpointFormatVersion},
      {"config", model_config_to_json(ckpt.config)},
      {"standardizer", standardizer_to_json(ckpt.standardizer)},
      {"tensors", manifest}};
  const std::string header_str = header.dump();

  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw checkpoint_error("cannot open " + tmp.string());
    out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
    const std::uint32_t version = kCheckpointFormatVersion;
    out.write(reinterpret_cast<const char*>(&version), sizeof(version));
    const std::uint64_t header_len = header_str.size();
    out.write(reinterpret_cast<const char*>(&header_len), sizeof(header_len));
    out.write(header_str.data(), static_cast<std::streamsize>(header_str.size()));
    for_each_tensor(ckpt.weights, [&](const std::string&, const Tensor& t) {
      out.write(reinterpret_cast<const char*>(t.data.data()),
                static_cast<std::streamsize>(sizeof(double) * t.size()));
    });
    out.flush();
    if (!out) throw checkpoint_error("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw checkpoint_error("cannot open " + path.string());

  auto read_exact = [&](void* p, std::size_t n, const char* what) {
    in.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (in.gcount() != static_cast<std::streamsize>(n)) {
      throw checkpoint_error(std::string("truncated checkpoint while reading ") +
                             what + " in " + path.string());
    }
  };

  char magic[8];
  read_exact(magic, sizeof(magic), "magic");
  if (std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) {
    throw checkpoint_error("not a checkpoint file: " + path.string());
  }
  std::uint32_t version = 0;
  read_exact(&version, sizeof(version), "version");
  if (version != kCheckpointFormatVersion) {
    throw checkpoint_error("unsupported checkpoint version " +
                           std::to_string(version));
  }
  std::uint64_t header_len = 0;
  read_exact(&header_len, sizeof(header_len), "header length");
  if (header_len > (1ull << 24)) {
    throw checkpoint_error("implausible header length in " + path.string());
  }
  std::string header_str(header_len, '\0');
  read_exact(header_str.data(), header_len, "header");

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(header_str);
  } catch (const nlohmann::json::exception& e) {
    throw checkpoint_error(std::string("corrupt checkpoint header: ") + e.what());
  }

  Checkpoint ckpt;
  try {
    ckpt.config = model_config_from_json(header.at("config"));
    ckpt.standardizer = standardizer_from_json(header.at("standardizer"));
  } catch (const nlohmann::json::exception& e) {
    throw checkpoint_error(std::string("corrupt checkpoint header: ") + e.what());
  }
  ckpt.weights = make_weights<double>(ckpt.config);

  const nlohmann::json& manifest = header.at("tensors");
  std::size_t idx = 0;
  for_each_tensor(ckpt.weights, [&](const std::string& name, Tensor& t) {
    if (idx >= manifest.size()) {
      throw checkpoint_error("tensor manifest too short in " + path.string());
    }
    const nlohmann::json& entry = manifest.at(idx++);
    if (entry.at("name").get<std::string>() != name ||
        entry.at("shape").get<std::vector<std::size_t>>() != t.shape) {
      throw checkpoint_error("tensor layout mismatch at '" + name + "' in " +
                             path.string());
    }
    read_exact(t.data.data(), sizeof(double) * t.size(), name.c_str());
  });
  if (idx != manifest.size()) {
    throw checkpoint_error("tensor manifest too long in " + path.string());
  }
  return ckpt;
}

}  // namespace icse
