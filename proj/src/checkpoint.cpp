#include "sanet/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <vector>

namespace fs = std::filesystem;

namespace sanet {

namespace {

constexpr const char* kFormat = "sanet-checkpoint-v1";

void put_le32(std::vector<unsigned char>& out, uint32_t v) {
  out.push_back((unsigned char)(v & 0xff));
  out.push_back((unsigned char)((v >> 8) & 0xff));
  out.push_back((unsigned char)((v >> 16) & 0xff));
  out.push_back((unsigned char)((v >> 24) & 0xff));
}

uint32_t get_le32(const unsigned char* p) {
  return (uint32_t)p[0] | ((uint32_t)p[1] << 8) | ((uint32_t)p[2] << 16) | ((uint32_t)p[3] << 24);
}

}  // namespace

void save_checkpoint(const std::string& manifest_path, const SANetConfig& cfg,
                     const ParamStore& params) {
  fs::path mpath(manifest_path);
  std::string blob_name = mpath.stem().string() + ".bin";

  nlohmann::ordered_json manifest;
  manifest["format"] = kFormat;
  manifest["blob"] = blob_name;
  to_json(manifest["model"], cfg);
  manifest["params"] = nlohmann::ordered_json::array();

  std::vector<unsigned char> blob;
  int64_t offset = 0;
  for (const auto& p : params.all()) {
    manifest["params"].push_back(nlohmann::ordered_json{{"name", p.name},
                                                        {"shape", p.value.shape},
                                                        {"group", group_name(p.group)},
                                                        {"offset", offset},
                                                        {"count", p.value.numel()}});
    for (float v : p.value.data) put_le32(blob, std::bit_cast<uint32_t>(v));
    offset += p.value.numel() * 4;
  }

  std::ofstream bf(mpath.parent_path() / blob_name, std::ios::binary);
  bf.write((const char*)blob.data(), (std::streamsize)blob.size());
  std::ofstream mf(mpath, std::ios::binary);
  mf << manifest.dump(2) << "\n";
  if (!bf || !mf) throw std::runtime_error("checkpoint: cannot write " + manifest_path);
}

namespace {

nlohmann::json read_manifest(const std::string& manifest_path) {
  std::ifstream mf(manifest_path);
  if (!mf) throw std::runtime_error("checkpoint: cannot open " + manifest_path);
  nlohmann::json manifest = nlohmann::json::parse(mf);
  if (manifest.value("format", "") != kFormat)
    throw std::runtime_error("checkpoint: " + manifest_path + " is not a " + kFormat + " manifest");
  return manifest;
}

}  // namespace

SANetConfig load_checkpoint_config(const std::string& manifest_path) {
  nlohmann::json manifest = read_manifest(manifest_path);
  SANetConfig cfg;
  config_from_json(manifest.at("model"), cfg);
  return cfg;
}

void load_checkpoint(const std::string& manifest_path, ParamStore& params) {
  nlohmann::json manifest = read_manifest(manifest_path);
  fs::path dir = fs::path(manifest_path).parent_path();
  std::string blob_name = manifest.at("blob").get<std::string>();
  std::ifstream bf(dir / blob_name, std::ios::binary);
  if (!bf) throw std::runtime_error("checkpoint: cannot open blob " + (dir / blob_name).string());
  std::vector<unsigned char> blob((std::istreambuf_iterator<char>(bf)), std::istreambuf_iterator<char>());

  const auto& entries = manifest.at("params");
  if (entries.size() != params.size())
    throw std::runtime_error("checkpoint: manifest holds " + std::to_string(entries.size()) +
                             " parameters, model expects " + std::to_string(params.size()));
  int64_t expected_bytes = 0;
  for (const auto& e : entries) {
    std::string name = e.at("name").get<std::string>();
    if (!params.contains(name)) throw std::runtime_error("checkpoint: unexpected parameter " + name);
    auto& p = params.get(name);
    auto shape = e.at("shape").get<std::vector<int>>();
    if (shape != p.value.shape)
      throw std::runtime_error("checkpoint: shape mismatch for " + name + ": manifest " +
                               shape_str(shape) + " vs model " + shape_str(p.value.shape));
    if (parse_group(e.at("group").get<std::string>()) != p.group)
      throw std::runtime_error("checkpoint: group mismatch for " + name);
    int64_t offset = e.at("offset").get<int64_t>();
    int64_t count = e.at("count").get<int64_t>();
    if (count != p.value.numel() || offset < 0 || offset + count * 4 > (int64_t)blob.size())
      throw std::runtime_error("checkpoint: blob range for " + name + " is out of bounds");
    expected_bytes += count * 4;
    for (int64_t i = 0; i < count; ++i)
      p.value.data[(size_t)i] = std::bit_cast<float>(get_le32(blob.data() + offset + i * 4));
  }
  if (expected_bytes != (int64_t)blob.size())
    throw std::runtime_error("checkpoint: blob size " + std::to_string(blob.size()) +
                             " does not match manifest total " + std::to_string(expected_bytes));
}

}  // namespace sanet
