// Model checkpoints: a JSON manifest next to a float32 parameter blob.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

namespace cacdec::ckpt {

// FNV-1a over the canonical JSON text; used as the architecture/config hash.
std::string hash_json(const nlohmann::json& j);

// `path` names the manifest (.json); the blob is written next to it (.bin).
void save_checkpoint(const std::string& path, const std::string& kind,
                     const nlohmann::json& arch, int64_t iterations,
                     const std::vector<std::vector<float>*>& state);

struct LoadedManifest {
  std::string kind;
  nlohmann::json arch;
  std::string arch_hash;
  int64_t iterations = 0;
};

// Reads only the manifest (to rebuild the network before loading the blob).
LoadedManifest read_manifest(const std::string& path);

// Fills pre-sized state vectors from the blob; sizes must match exactly.
void load_state(const std::string& path, const std::vector<std::vector<float>*>& state);

}  // namespace cacdec::ckpt
