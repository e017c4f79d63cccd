#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "vtonlab/conditioning.hpp"
#include "vtonlab/training.hpp"

// JSON-Lines manifest, one row per line:
//   {"id": "...", "person": "...", "garment": "...", "mask": "...",
//    "pose": "...", "attrs": {"sleeve_length": "...", "neckline": "...",
//    "item_name": "..."}}
// with image paths relative to the manifest's directory.
namespace vtonlab {

struct ManifestRow {
    std::string id;
    std::string person;
    std::string garment;
    std::string mask;
    std::string pose;
    GarmentAttributes attrs;
};

struct DatasetManifest {
    std::filesystem::path path;
    std::vector<ManifestRow> rows;

    std::filesystem::path root() const { return path.parent_path(); }
    std::filesystem::path resolve(const std::string& relative) const { return root() / relative; }
    const ManifestRow& find(const std::string& id) const;
};

// One row from one JSON line. Throws ParseError (with the line number) or
// SchemaError (naming the row and field).
ManifestRow parse_manifest_row(const std::string& line, std::size_t line_number);
std::string manifest_row_json(const ManifestRow& row);

// Strict load: parses every row, rejects duplicate ids and paths that do not
// resolve to files.
DatasetManifest load_manifest(const std::filesystem::path& path);

TrainingSample load_sample(const DatasetManifest& manifest, const ManifestRow& row);
std::vector<TrainingSample> load_samples(const DatasetManifest& manifest);

}  // namespace vtonlab
