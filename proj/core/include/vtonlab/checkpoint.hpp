#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "vtonlab/diffusion.hpp"
#include "vtonlab/model_bundle.hpp"
#include "vtonlab/optim.hpp"

// Archive layout: 8-byte magic, little-endian u64 header length, UTF-8 JSON
// header, then the raw little-endian float64 payload referenced by offsets
// (in elements) from the header's tensor table.
namespace vtonlab {

inline constexpr int kCheckpointFormatVersion = 1;

struct NamedTensor {
    std::string name;
    Tensor value;
};

struct Archive {
    std::string header_json;  // header without the tensor table
    std::vector<NamedTensor> tensors;
};

void write_archive(const std::filesystem::path& path, const std::string& header_json,
                   const std::vector<NamedTensor>& tensors);
Archive read_archive(const std::filesystem::path& path);

std::string bundle_config_json(const BundleConfig& config);
BundleConfig bundle_config_from_json(const std::string& json);

struct LoadedCheckpoint {
    ModelBundle bundle;
    NoiseSchedule schedule;
    std::optional<TrainingState> state;
};

void save_checkpoint(const std::filesystem::path& path, const ModelBundle& bundle, const NoiseSchedule& schedule,
                     const TrainingState* state = nullptr);
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

// Only the named parameters plus the hash of the base bundle they apply to.
void save_delta_checkpoint(const std::filesystem::path& path, const ModelBundle& adapted,
                           const std::vector<std::string>& modified, const std::string& base_hash,
                           const std::string& strategy);
// Applies a delta onto its base. Throws ConfigurationError when the base hash
// does not match.
void apply_delta_checkpoint(const std::filesystem::path& path, ModelBundle& base);

// Hash of an archive file's bytes.
std::string file_hash(const std::filesystem::path& path);

}  // namespace vtonlab
