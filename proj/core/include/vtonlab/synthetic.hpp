#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "vtonlab/conditioning.hpp"
#include "vtonlab/training.hpp"

namespace vtonlab {

enum class GarmentPattern { solid, stripes, checker, logo };

std::string to_string(GarmentPattern p);
GarmentPattern parse_garment_pattern(const std::string& s);

struct SyntheticSpec {
    int n_samples = 16;
    std::int64_t height = 64;
    std::int64_t width = 48;
    int codec_factor = 4;
    std::vector<GarmentPattern> patterns{GarmentPattern::solid, GarmentPattern::stripes, GarmentPattern::checker,
                                         GarmentPattern::logo};
    int pose_variants = 4;
    std::uint64_t seed = 0;
    int first_index = 0;  // index offset, so disjoint sets can share a seed

    void validate() const;
};

struct SyntheticSample {
    TrainingSample sample;  // person is the ground-truth try-on target
    GarmentPattern pattern = GarmentPattern::solid;
    int pose = 0;
};

// Pure function of (spec, index).
SyntheticSample render_sample(const SyntheticSpec& spec, int index);
std::vector<TrainingSample> render_dataset(const SyntheticSpec& spec);

// Writes person/, garment/, mask/, pose/ PNGs and manifest.jsonl under dir.
// Returns the manifest path.
std::filesystem::path generate(const SyntheticSpec& spec, const std::filesystem::path& dir);

struct Violation {
    std::string row_id;  // empty when the problem is not tied to one row
    std::string kind;    // parse, schema, duplicate_id, missing_file, unreadable, mask_not_binary, resolution
    std::string message;
};

struct ValidationReport {
    std::size_t rows = 0;
    std::vector<Violation> violations;

    bool ok() const { return violations.empty(); }
    std::string summary() const;
};

// Accepts a dataset directory (containing manifest.jsonl) or a manifest path.
// Never throws for dataset problems; they are reported as violations.
ValidationReport validate_dataset(const std::filesystem::path& dataset);

}  // namespace vtonlab
