#include "qap/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <vector>

#include <json.hpp>

namespace qap {

namespace {

constexpr char kMagic[4] = {'Q', 'A', 'P', 'C'};
constexpr std::uint32_t kVersion = 1;

void write_u32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t read_u32(std::istream& in, const char* what) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in) throw checkpoint_error(std::string("truncated checkpoint while reading ") + what);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

void write_floats(std::ostream& out, const Mat<float>& m) {
  // row-major storage matches the in-memory layout; assumes a
  // little-endian host, as does the loader
  out.write(reinterpret_cast<const char*>(m.data()),
            static_cast<std::streamsize>(sizeof(float) * std::size_t(m.size())));
}

}  // namespace

void save_checkpoint(const ParameterStore<float>& params, const AdamW<float>* opt,
                     const std::string& path) {
  nlohmann::json header;
  header["config_hash"] = params.config_hash;
  header["step"] = params.step;
  header["opt_step"] = opt ? opt->step_count() : 0;

  std::vector<std::pair<std::string, const Mat<float>*>> tensors;
  for (const auto& [name, m] : params.all()) tensors.emplace_back(name, &m);
  if (opt) {
    for (const auto& [name, mo] : opt->moments()) {
      tensors.emplace_back("opt/m1/" + name, &mo.m1);
      tensors.emplace_back("opt/m2/" + name, &mo.m2);
    }
  }

  std::uint64_t offset = 0;
  nlohmann::json list = nlohmann::json::array();
  for (const auto& [name, m] : tensors) {
    list.push_back({{"name", name},
                    {"rows", m->rows()},
                    {"cols", m->cols()},
                    {"offset", offset}});
    offset += sizeof(float) * static_cast<std::uint64_t>(m->size());
  }
  header["tensors"] = std::move(list);
  std::string hs = header.dump();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw checkpoint_error("cannot open for writing: " + path);
  out.write(kMagic, 4);
  write_u32(out, kVersion);
  write_u32(out, static_cast<std::uint32_t>(hs.size()));
  out.write(hs.data(), static_cast<std::streamsize>(hs.size()));
  for (const auto& [name, m] : tensors) write_floats(out, *m);
  if (!out) throw checkpoint_error("write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path, std::uint64_t expected_config_hash) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw checkpoint_error("cannot open: " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0)
    throw checkpoint_error("bad magic at offset 0 in " + path);
  std::uint32_t version = read_u32(in, "version");
  if (version != kVersion)
    throw checkpoint_error("unsupported checkpoint version " + std::to_string(version));
  std::uint32_t hlen = read_u32(in, "header length");
  std::string hs(hlen, '\0');
  in.read(hs.data(), hlen);
  if (!in) throw checkpoint_error("truncated header at offset 12 in " + path);

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(hs);
  } catch (const nlohmann::json::exception& e) {
    throw checkpoint_error("corrupt header at offset 12 in " + path + ": " + e.what());
  }

  Checkpoint ck;
  ck.params.config_hash = header.at("config_hash").get<std::uint64_t>();
  ck.params.step = header.at("step").get<std::uint64_t>();
  ck.opt_step = header.at("opt_step").get<std::uint64_t>();
  if (expected_config_hash != 0 && ck.params.config_hash != expected_config_hash)
    throw checkpoint_error("config hash mismatch: checkpoint " +
                           std::to_string(ck.params.config_hash) + " vs expected " +
                           std::to_string(expected_config_hash));

  std::uint64_t payload_base = 12ull + hlen;
  for (const auto& entry : header.at("tensors")) {
    std::string name = entry.at("name").get<std::string>();
    Eigen::Index rows = entry.at("rows").get<Eigen::Index>();
    Eigen::Index cols = entry.at("cols").get<Eigen::Index>();
    std::uint64_t offset = entry.at("offset").get<std::uint64_t>();
    Mat<float> m(rows, cols);
    in.seekg(static_cast<std::streamoff>(payload_base + offset));
    in.read(reinterpret_cast<char*>(m.data()),
            static_cast<std::streamsize>(sizeof(float) * std::size_t(m.size())));
    if (!in)
      throw checkpoint_error("truncated payload for tensor '" + name + "' at offset " +
                             std::to_string(payload_base + offset));
    if (name.rfind("opt/m1/", 0) == 0) {
      ck.moments[name.substr(7)].m1 = std::move(m);
    } else if (name.rfind("opt/m2/", 0) == 0) {
      ck.moments[name.substr(7)].m2 = std::move(m);
    } else {
      ck.params.add(name, std::move(m));
    }
  }
  return ck;
}

}  // namespace qap
