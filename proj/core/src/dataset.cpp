#include "vtonlab/dataset.hpp"

#include <fstream>
#include <set>

#include <nlohmann/json.hpp>

#include "vtonlab/errors.hpp"
#include "vtonlab/image.hpp"

namespace vtonlab {

namespace {

using nlohmann::json;

std::string where(const std::string& id, std::size_t line) {
    return "row '" + id + "' (line " + std::to_string(line) + ")";
}

std::string string_field(const json& obj, const char* field, const std::string& context) {
    if (!obj.contains(field)) throw SchemaError(context + ": missing field '" + field + "'");
    const json& v = obj.at(field);
    if (!v.is_string()) throw SchemaError(context + ": field '" + field + "' must be a string");
    return v.get<std::string>();
}

}  // namespace

const ManifestRow& DatasetManifest::find(const std::string& id) const {
    for (const ManifestRow& row : rows)
        if (row.id == id) return row;
    throw InvalidArgument("manifest has no row with id '" + id + "'");
}

ManifestRow parse_manifest_row(const std::string& line, std::size_t line_number) {
    json j;
    try {
        j = json::parse(line);
    } catch (const json::parse_error& e) {
        throw ParseError("manifest line " + std::to_string(line_number) + ": " + e.what());
    }
    if (!j.is_object()) throw ParseError("manifest line " + std::to_string(line_number) + ": not a JSON object");
    ManifestRow row;
    row.id = string_field(j, "id", "line " + std::to_string(line_number));
    if (row.id.empty()) throw SchemaError("line " + std::to_string(line_number) + ": empty id");
    const std::string ctx = where(row.id, line_number);
    row.person = string_field(j, "person", ctx);
    row.garment = string_field(j, "garment", ctx);
    row.mask = string_field(j, "mask", ctx);
    row.pose = string_field(j, "pose", ctx);
    if (!j.contains("attrs") || !j.at("attrs").is_object()) throw SchemaError(ctx + ": missing field 'attrs'");
    const json& a = j.at("attrs");
    row.attrs.sleeve_length = string_field(a, "sleeve_length", ctx + " attrs");
    row.attrs.neckline = string_field(a, "neckline", ctx + " attrs");
    row.attrs.item_name = string_field(a, "item_name", ctx + " attrs");
    try {
        row.attrs.validate();
    } catch (const InvalidArgument& e) {
        throw SchemaError(ctx + ": " + e.what());
    }
    return row;
}

std::string manifest_row_json(const ManifestRow& row) {
    const json j{{"id", row.id},
                 {"person", row.person},
                 {"garment", row.garment},
                 {"mask", row.mask},
                 {"pose", row.pose},
                 {"attrs",
                  {{"sleeve_length", row.attrs.sleeve_length},
                   {"neckline", row.attrs.neckline},
                   {"item_name", row.attrs.item_name}}}};
    return j.dump();
}

DatasetManifest load_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open manifest " + path.string());
    DatasetManifest manifest;
    manifest.path = path;
    std::set<std::string> ids;
    std::string line;
    std::size_t line_number = 0;
    while (std::getline(in, line)) {
        ++line_number;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        ManifestRow row = parse_manifest_row(line, line_number);
        if (!ids.insert(row.id).second)
            throw DuplicateIdError("duplicate id '" + row.id + "' at line " + std::to_string(line_number));
        for (const auto& [field, rel] : {std::pair{"person", &row.person}, std::pair{"garment", &row.garment},
                                         std::pair{"mask", &row.mask}, std::pair{"pose", &row.pose}})
            if (!std::filesystem::is_regular_file(manifest.resolve(*rel)))
                throw SchemaError(where(row.id, line_number) + ": field '" + field + "' path " + *rel +
                                  " does not resolve");
        manifest.rows.push_back(std::move(row));
    }
    return manifest;
}

TrainingSample load_sample(const DatasetManifest& manifest, const ManifestRow& row) {
    TrainingSample s;
    s.id = row.id;
    s.person = read_png(manifest.resolve(row.person), PngChannels::rgb);
    s.garment = read_png(manifest.resolve(row.garment), PngChannels::rgb);
    s.mask = read_png(manifest.resolve(row.mask), PngChannels::gray);
    s.pose = read_png(manifest.resolve(row.pose), PngChannels::rgb);
    for (double& v : s.mask.values()) v = v >= 0.5 ? 1.0 : 0.0;
    s.attrs = row.attrs;
    return s;
}

std::vector<TrainingSample> load_samples(const DatasetManifest& manifest) {
    std::vector<TrainingSample> out;
    out.reserve(manifest.rows.size());
    for (const ManifestRow& row : manifest.rows) out.push_back(load_sample(manifest, row));
    return out;
}

}  // namespace vtonlab
