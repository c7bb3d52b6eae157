#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "sentlat/autodiff/tensor.hpp"

namespace sentlat::pipeline {

inline constexpr std::string_view kCheckpointMagic = "SLCKPT01";
inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Unreadable, truncated or incompatible container.
class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A stored tensor does not fit the parameter it is loaded into.
class ShapeError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

struct TensorRecord {
  std::string name;
  std::vector<std::size_t> shape;
  std::vector<float> data;
};

/// Layout: magic, u32 version, u64 manifest length, manifest JSON (names,
/// shapes, byte offsets, stage tag, config, rng state), then every tensor as
/// little-endian float32 in manifest order.
struct Checkpoint {
  std::uint32_t version = kCheckpointVersion;
  std::string stage;  // sft | encdec | latent | classifier
  nlohmann::json config = nlohmann::json::object();
  nlohmann::json meta = nlohmann::json::object();
  std::string rng_state;
  std::vector<TensorRecord> tensors;

  const TensorRecord* find(std::string_view name) const;
};

/// Writes to a temporary file and renames it over `path`.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

std::vector<TensorRecord> capture(const std::vector<std::pair<std::string, ad::Tensor<float>>>& params);

/// Copies `prefix + name` for every parameter. Throws CheckpointError for a
/// missing tensor and ShapeError for a shape mismatch; with `strict`, stored
/// tensors under `prefix` that match no parameter are an error too.
void restore(const Checkpoint& ckpt, const std::vector<std::pair<std::string, ad::Tensor<float>>>& params,
             const std::string& prefix = "", bool strict = true);

/// FNV-1a over names, shapes and raw float bits.
std::uint64_t tensors_fingerprint(const std::vector<TensorRecord>& tensors);

}  // namespace sentlat::pipeline
