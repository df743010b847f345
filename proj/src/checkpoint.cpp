#include "megan/checkpoint.hpp"

#include "megan/errors.hpp"

#include <nlohmann/json.hpp>

#include <cstring>
#include <filesystem>
#include <fstream>

using json = nlohmann::ordered_json;

namespace megan {

const Mat<float>& Checkpoint::get(const std::string& name) const {
  auto it = tensors.find(name);
  if (it == tensors.end()) throw ConfigMismatchError("checkpoint missing tensor " + name);
  return it->second;
}

void Checkpoint::save(const std::string& path) const {
  json header;
  header["format_version"] = 1;
  header["kind"] = kind;
  header["config"] = config_json;
  header["extras"] = extras;
  json dir = json::array();
  for (const auto& [name, t] : tensors) {
    json entry;
    entry["name"] = name;
    entry["rows"] = t.rows();
    entry["cols"] = t.cols();
    dir.push_back(std::move(entry));
  }
  header["tensors"] = std::move(dir);
  const std::string header_str = header.dump();

  std::filesystem::path p(path);
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write checkpoint " + path);
  f.write(kMagic, 8);
  const std::uint64_t len = header_str.size();
  f.write(reinterpret_cast<const char*>(&len), sizeof(len));
  f.write(header_str.data(), static_cast<std::streamsize>(header_str.size()));
  for (const auto& [name, t] : tensors)
    f.write(reinterpret_cast<const char*>(t.data()),
            static_cast<std::streamsize>(sizeof(float) * t.size()));
  if (!f) throw std::runtime_error("short write to checkpoint " + path);
}

Checkpoint Checkpoint::load(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CorruptionError("cannot open checkpoint " + path);
  char magic[8];
  f.read(magic, 8);
  if (!f || std::memcmp(magic, kMagic, 8) != 0) throw CorruptionError("bad checkpoint magic in " + path);
  std::uint64_t len = 0;
  f.read(reinterpret_cast<char*>(&len), sizeof(len));
  if (!f || len == 0 || len > (1u << 26)) throw CorruptionError("bad checkpoint header length");
  std::string header_str(len, '\0');
  f.read(header_str.data(), static_cast<std::streamsize>(len));
  if (!f) throw CorruptionError("truncated checkpoint header");

  json header;
  try {
    header = json::parse(header_str);
  } catch (const json::exception& e) {
    throw CorruptionError(std::string("unparseable checkpoint header: ") + e.what());
  }
  if (header.at("format_version").get<int>() != 1) throw CorruptionError("unsupported checkpoint version");

  Checkpoint ckpt;
  ckpt.kind = header.at("kind").get<std::string>();
  ckpt.config_json = header.at("config").get<std::string>();
  ckpt.extras = header.at("extras").get<std::map<std::string, std::string>>();
  for (const auto& entry : header.at("tensors")) {
    const auto name = entry.at("name").get<std::string>();
    const auto rows = entry.at("rows").get<Eigen::Index>();
    const auto cols = entry.at("cols").get<Eigen::Index>();
    Mat<float> t(rows, cols);
    f.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(sizeof(float) * t.size()));
    if (!f) throw CorruptionError("truncated checkpoint tensor " + name);
    ckpt.tensors.emplace(name, std::move(t));
  }
  return ckpt;
}

void Checkpoint::expect(const std::string& expected_kind, const std::string& expected_config) const {
  if (kind != expected_kind)
    throw ConfigMismatchError("checkpoint kind '" + kind + "' does not match expected '" + expected_kind + "'");
  if (config_json != expected_config)
    throw ConfigMismatchError("checkpoint config mismatch: stored " + config_json + ", expected " +
                              expected_config);
}

}  // namespace megan
