#include "polarcast/checkpoint.hpp"

#include <bit>
#include <cstdio>
#include <cstring>

#include "polarcast/dataio.hpp"
#include "polarcast/json_io.hpp"

namespace polarcast {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kFormat = "polarcast-checkpoint";
constexpr int kVersion = 1;

struct Fnv1a {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 0x100000001b3ULL;
    }
  }
  void u64(std::uint64_t v) {
    unsigned char le[8];
    for (int i = 0; i < 8; ++i) le[i] = static_cast<unsigned char>(v >> (8 * i));
    bytes(le, 8);
  }
};

}  // namespace

void save_checkpoint(const fs::path& dir, const ModelParams& params, const CheckpointMeta& meta) {
  fs::create_directories(dir);
  json tensors = json::array();
  for (const auto& t : params.tensors) {
    const std::string file = t.name + ".f32";
    write_f32_file(dir / file, t.data);
    tensors.push_back({{"name", t.name}, {"shape", t.shape}, {"file", file}, {"dtype", "float32"}});
  }
  json manifest{{"format", kFormat},         {"version", kVersion},
                {"arch", meta.arch},         {"seed", meta.seed},
                {"setting", meta.setting},   {"epoch", meta.epoch},
                {"val_loss", meta.val_loss}, {"tensors", std::move(tensors)}};
  write_json_file(dir / "manifest.json", manifest);
}

Checkpoint load_checkpoint(const fs::path& dir) {
  const json m = read_json_file(dir / "manifest.json");
  if (m.value("format", "") != kFormat)
    throw DataError(dir.string() + ": not a polarcast checkpoint");
  if (m.value("version", 0) != kVersion)
    throw DataError(dir.string() + ": unsupported checkpoint version");
  Checkpoint ck;
  m.at("arch").get_to(ck.meta.arch);
  m.at("seed").get_to(ck.meta.seed);
  m.at("setting").get_to(ck.meta.setting);
  m.at("epoch").get_to(ck.meta.epoch);
  m.at("val_loss").get_to(ck.meta.val_loss);
  for (const auto& jt : m.at("tensors")) {
    if (jt.value("dtype", "") != "float32")
      throw DataError("tensor '" + jt.value("name", "?") + "' is not float32");
    Tensor t;
    jt.at("name").get_to(t.name);
    jt.at("shape").get_to(t.shape);
    t.data = read_f32_file(dir / jt.at("file").get<std::string>());
    std::size_t expected = 1;
    for (auto d : t.shape) expected *= d;
    if (t.data.size() != expected)
      throw DataError("tensor '" + t.name + "' blob size does not match its shape");
    ck.params.tensors.push_back(std::move(t));
  }
  Network(ck.meta.arch).check(ck.params);
  return ck;
}

std::uint64_t params_digest(const ModelParams& params) {
  Fnv1a f;
  for (const auto& t : params.tensors) {
    f.bytes(t.name.data(), t.name.size());
    f.u64(t.shape.size());
    for (auto d : t.shape) f.u64(d);
    for (float v : t.data) {
      const std::uint32_t bits = std::bit_cast<std::uint32_t>(v);
      f.u64(bits);
    }
  }
  return f.h;
}

std::string hex_digest(std::uint64_t d) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(d));
  return buf;
}

}  // namespace polarcast
