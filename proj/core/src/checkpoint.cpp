#include "cacdec/checkpoint.hpp"

#include <filesystem>
#include <fstream>
#include <stdexcept>

namespace fs = std::filesystem;
using nlohmann::json;

namespace cacdec::ckpt {

std::string hash_json(const json& j) {
  std::string s = j.dump();
  uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

static std::string blob_name(const std::string& path) {
  return fs::path(path).stem().string() + ".bin";
}

void save_checkpoint(const std::string& path, const std::string& kind, const json& arch,
                     int64_t iterations, const std::vector<std::vector<float>*>& state) {
  size_t total = 0;
  for (auto* v : state) total += v->size();
  json j;
  j["kind"] = kind;
  j["arch"] = arch;
  j["arch_hash"] = hash_json(arch);
  j["iterations"] = iterations;
  j["param_count"] = total;
  j["blob"] = blob_name(path);
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write checkpoint manifest: " + path);
  out << j.dump(2) << "\n";

  fs::path bp = fs::path(path).parent_path() / blob_name(path);
  std::ofstream blob(bp, std::ios::binary | std::ios::trunc);
  if (!blob) throw std::runtime_error("cannot write checkpoint blob: " + bp.string());
  for (auto* v : state)
    blob.write(reinterpret_cast<const char*>(v->data()),
               static_cast<std::streamsize>(v->size() * sizeof(float)));
  if (!blob) throw std::runtime_error("short write on checkpoint blob: " + bp.string());
}

LoadedManifest read_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open checkpoint manifest: " + path);
  json j;
  in >> j;
  LoadedManifest m;
  m.kind = j.at("kind");
  m.arch = j.at("arch");
  m.arch_hash = j.at("arch_hash");
  m.iterations = j.value("iterations", int64_t(0));
  return m;
}

void load_state(const std::string& path, const std::vector<std::vector<float>*>& state) {
  std::ifstream mf(path);
  if (!mf) throw std::runtime_error("cannot open checkpoint manifest: " + path);
  json j;
  mf >> j;
  fs::path bp = fs::path(path).parent_path() / j.at("blob").get<std::string>();
  std::ifstream blob(bp, std::ios::binary);
  if (!blob) throw std::runtime_error("cannot open checkpoint blob: " + bp.string());
  blob.seekg(0, std::ios::end);
  size_t bytes = static_cast<size_t>(blob.tellg());
  size_t want = 0;
  for (auto* v : state) want += v->size();
  if (bytes != want * sizeof(float))
    throw std::runtime_error("checkpoint blob size mismatch for " + bp.string() +
                             ": architecture expects " + std::to_string(want * sizeof(float)) +
                             " bytes, file has " + std::to_string(bytes));
  blob.seekg(0);
  for (auto* v : state)
    blob.read(reinterpret_cast<char*>(v->data()),
              static_cast<std::streamsize>(v->size() * sizeof(float)));
  if (!blob) throw std::runtime_error("short read on checkpoint blob: " + bp.string());
}

}  // namespace cacdec::ckpt
