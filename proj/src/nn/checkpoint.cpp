#include "avsc/nn/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace avsc::nn {

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes little-endian");

constexpr char kMagic[8] = {'A', 'V', 'S', 'C', 'C', 'K', 'P', 'T'};

void collect(const std::string& prefix, const ParamMap& m, nlohmann::json& table,
             std::vector<const Matrix*>& arrays, std::uint64_t& offset) {
  for (const auto& [name, value] : m) {
    table.push_back({{"name", prefix + name},
                     {"rows", value.rows()},
                     {"cols", value.cols()},
                     {"offset", offset}});
    arrays.push_back(&value);
    offset += static_cast<std::uint64_t>(value.size()) * sizeof(double);
  }
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  nlohmann::json header;
  header["format"] = kCheckpointFormat;
  header["kind"] = ckpt.kind;
  header["config"] = ckpt.config;
  nlohmann::json table = nlohmann::json::array();
  std::vector<const Matrix*> arrays;
  std::uint64_t offset = 0;
  for (const auto& [group, w] : ckpt.groups) {
    collect(group + "/params/", w.params, table, arrays, offset);
    collect(group + "/buffers/", w.buffers, table, arrays, offset);
  }
  header["arrays"] = table;
  const std::string text = header.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
  const std::uint64_t len = text.size();
  out.write(kMagic, sizeof(kMagic));
  out.write(reinterpret_cast<const char*>(&len), sizeof(len));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const Matrix* m : arrays) {
    out.write(reinterpret_cast<const char*>(m->data()),
              static_cast<std::streamsize>(m->size() * sizeof(double)));
  }
  if (!out) throw std::runtime_error("short write on checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
  char magic[8];
  std::uint64_t len = 0;
  in.read(magic, sizeof(magic));
  in.read(reinterpret_cast<char*>(&len), sizeof(len));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw std::runtime_error(path.string() + ": not a checkpoint file");
  }
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  const nlohmann::json header = nlohmann::json::parse(text);
  if (header.value("format", "") != kCheckpointFormat) {
    throw std::runtime_error(path.string() + ": unsupported checkpoint format '" +
                             header.value("format", "") + "'");
  }
  Checkpoint ckpt;
  ckpt.kind = header.at("kind").get<std::string>();
  ckpt.config = header.at("config");
  const auto base = in.tellg();
  for (const auto& entry : header.at("arrays")) {
    const std::string full = entry.at("name").get<std::string>();
    const auto a = full.find('/');
    const auto b = full.find('/', a + 1);
    if (a == std::string::npos || b == std::string::npos) {
      throw std::runtime_error(path.string() + ": malformed array name " + full);
    }
    const std::string group = full.substr(0, a);
    const std::string section = full.substr(a + 1, b - a - 1);
    const std::string name = full.substr(b + 1);
    Matrix m(entry.at("rows").get<Eigen::Index>(), entry.at("cols").get<Eigen::Index>());
    in.seekg(base + static_cast<std::streamoff>(entry.at("offset").get<std::uint64_t>()));
    in.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
    if (!in) throw std::runtime_error(path.string() + ": truncated array " + full);
    Weights& w = ckpt.groups[group];
    (section == "params" ? w.params : w.buffers).add(name, std::move(m));
  }
  return ckpt;
}

}  // namespace avsc::nn
