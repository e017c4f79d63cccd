#include "vtonlab/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <set>

#include <nlohmann/json.hpp>

#include "vtonlab/errors.hpp"
#include "vtonlab/hash.hpp"
#include "vtonlab/image.hpp"

namespace vtonlab {

namespace {

using nlohmann::json;

constexpr char kMagic[8] = {'V', 'T', 'O', 'N', 'L', 'A', 'B', '\0'};

static_assert(std::endian::native == std::endian::little, "archive I/O assumes a little-endian host");

void append_u64(std::string& out, std::uint64_t v) {
    char buf[8];
    std::memcpy(buf, &v, 8);
    out.append(buf, 8);
}

json config_to_json(const BundleConfig& c) {
    return json{{"image_height", c.image_height},
                {"image_width", c.image_width},
                {"codec_factor", c.codec_factor},
                {"unet",
                 {{"base_width", c.unet.base_width},
                  {"depth", c.unet.depth},
                  {"heads", c.unet.heads},
                  {"context_dim", c.unet.context_dim},
                  {"fusion", to_string(c.unet.fusion)}}},
                {"text_vocab", c.text_vocab},
                {"text_max_tokens", c.text_max_tokens},
                {"text_heads", c.text_heads},
                {"image_encoder_widths", c.image_encoder_widths},
                {"image_prompt_tokens", c.image_prompt_tokens},
                {"seed", c.seed}};
}

BundleConfig config_from_json(const json& j) {
    try {
        BundleConfig c;
        c.image_height = j.at("image_height").get<std::int64_t>();
        c.image_width = j.at("image_width").get<std::int64_t>();
        c.codec_factor = j.at("codec_factor").get<int>();
        const json& u = j.at("unet");
        c.unet.base_width = u.at("base_width").get<std::int64_t>();
        c.unet.depth = u.at("depth").get<int>();
        c.unet.heads = u.at("heads").get<int>();
        c.unet.context_dim = u.at("context_dim").get<std::int64_t>();
        c.unet.fusion = parse_fusion_sites(u.at("fusion").get<std::string>());
        c.text_vocab = j.at("text_vocab").get<int>();
        c.text_max_tokens = j.at("text_max_tokens").get<int>();
        c.text_heads = j.at("text_heads").get<int>();
        c.image_encoder_widths = j.at("image_encoder_widths").get<std::vector<std::int64_t>>();
        c.image_prompt_tokens = j.at("image_prompt_tokens").get<int>();
        c.seed = j.at("seed").get<std::uint64_t>();
        return c;
    } catch (const json::exception& e) {
        throw SchemaError(std::string("checkpoint config: ") + e.what());
    }
}

json parse_header(const std::string& text) {
    try {
        return json::parse(text);
    } catch (const json::exception& e) {
        throw ParseError(std::string("checkpoint header: ") + e.what());
    }
}

std::vector<NamedTensor> bundle_tensors(const ModelBundle& bundle) {
    std::vector<NamedTensor> out;
    bundle.visit([&](const std::string& name, const nn::Param& p) { out.push_back({name, p.value()}); });
    return out;
}

void assign(ModelBundle& bundle, const NamedTensor& t) {
    nn::Param* p = bundle.find(t.name);
    if (!p) throw SchemaError("checkpoint tensor " + t.name + " has no matching parameter");
    if (p->value().shape() != t.value.shape())
        throw SchemaError("checkpoint tensor " + t.name + " has shape " + shape_str(t.value.shape()) +
                          ", expected " + shape_str(p->value().shape()));
    p->mutable_value() = t.value;
}

json adapters_json(const ModelBundle& bundle) {
    json a = json::array();
    for (const auto& [module, rank] : adapter_modules(bundle)) a.push_back({{"module", module}, {"rank", rank}});
    return a;
}

void attach_adapters(ModelBundle& bundle, const json& header) {
    if (!header.contains("adapters")) return;
    for (const json& a : header.at("adapters")) attach_adapter(bundle, a.at("module"), a.at("rank").get<int>());
}

}  // namespace

void write_archive(const std::filesystem::path& path, const std::string& header_json,
                   const std::vector<NamedTensor>& tensors) {
    json header = parse_header(header_json);
    json table = json::array();
    std::uint64_t offset = 0;
    for (const NamedTensor& t : tensors) {
        table.push_back({{"name", t.name}, {"shape", t.value.shape()}, {"offset", offset}});
        offset += static_cast<std::uint64_t>(t.value.numel());
    }
    header["tensors"] = std::move(table);
    const std::string text = header.dump();

    std::string bytes(kMagic, sizeof kMagic);
    append_u64(bytes, text.size());
    bytes += text;
    bytes.reserve(bytes.size() + offset * sizeof(double));
    for (const NamedTensor& t : tensors)
        bytes.append(reinterpret_cast<const char*>(t.value.data()), static_cast<std::size_t>(t.value.numel()) * 8);
    write_file_atomic(path, bytes);
}

Archive read_archive(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint " + path.string());
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, 8) != 0)
        throw ParseError(path.string() + " is not a checkpoint archive");
    std::uint64_t header_len = 0;
    std::memcpy(&header_len, bytes.data() + 8, 8);
    if (16 + header_len > bytes.size()) throw ParseError(path.string() + ": truncated header");
    json header = parse_header(bytes.substr(16, header_len));
    const std::size_t payload = 16 + header_len;
    const std::size_t payload_elems = (bytes.size() - payload) / 8;

    Archive archive;
    try {
        for (const json& entry : header.at("tensors")) {
            const Shape shape = entry.at("shape").get<Shape>();
            const std::uint64_t off = entry.at("offset").get<std::uint64_t>();
            const auto n = static_cast<std::uint64_t>(shape_numel(shape));
            if (off + n > payload_elems) throw ParseError(path.string() + ": tensor data out of range");
            Tensor t(shape);
            std::memcpy(t.data(), bytes.data() + payload + off * 8, n * 8);
            archive.tensors.push_back({entry.at("name").get<std::string>(), std::move(t)});
        }
    } catch (const json::exception& e) {
        throw SchemaError(path.string() + ": " + e.what());
    }
    header.erase("tensors");
    archive.header_json = header.dump();
    return archive;
}

std::string bundle_config_json(const BundleConfig& config) { return config_to_json(config).dump(); }

BundleConfig bundle_config_from_json(const std::string& text) { return config_from_json(parse_header(text)); }

void save_checkpoint(const std::filesystem::path& path, const ModelBundle& bundle, const NoiseSchedule& schedule,
                     const TrainingState* state) {
    json header{{"format_version", kCheckpointFormatVersion},
                {"kind", "full"},
                {"config", config_to_json(bundle.config)},
                {"schedule", {{"kind", to_string(schedule.kind)}, {"T", schedule.T}}},
                {"adapters", adapters_json(bundle)}};
    std::vector<NamedTensor> tensors = bundle_tensors(bundle);
    if (state) {
        header["train_state"] = {{"step", state->step}, {"optimizer_step", state->optimizer.step}};
        for (const auto& [name, m] : state->optimizer.first_moment) tensors.push_back({"optim.m." + name, m});
        for (const auto& [name, v] : state->optimizer.second_moment) tensors.push_back({"optim.v." + name, v});
    } else {
        header["train_state"] = nullptr;
    }
    write_archive(path, header.dump(), tensors);
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
    Archive archive = read_archive(path);
    const json header = parse_header(archive.header_json);
    if (header.value("format_version", 0) != kCheckpointFormatVersion)
        throw SchemaError(path.string() + ": unsupported checkpoint format version");
    if (header.value("kind", "") != "full") throw SchemaError(path.string() + " is not a full checkpoint");

    BundleConfig config = config_from_json(header.at("config"));
    const json& sched = header.at("schedule");
    LoadedCheckpoint out{ModelBundle::create(config),
                         make_schedule(sched.at("T").get<int>(), parse_schedule_kind(sched.at("kind"))),
                         std::nullopt};
    attach_adapters(out.bundle, header);

    std::set<std::string> seen;
    TrainingState state;
    for (const NamedTensor& t : archive.tensors) {
        if (t.name.rfind("optim.m.", 0) == 0) {
            state.optimizer.first_moment[t.name.substr(8)] = t.value;
        } else if (t.name.rfind("optim.v.", 0) == 0) {
            state.optimizer.second_moment[t.name.substr(8)] = t.value;
        } else {
            assign(out.bundle, t);
            seen.insert(t.name);
        }
    }
    for (const std::string& name : out.bundle.parameter_names())
        if (!seen.count(name)) throw SchemaError(path.string() + ": missing tensor " + name);
    if (!header.at("train_state").is_null()) {
        state.step = header.at("train_state").at("step").get<std::int64_t>();
        state.optimizer.step = header.at("train_state").at("optimizer_step").get<std::int64_t>();
        out.state = std::move(state);
    }
    return out;
}

void save_delta_checkpoint(const std::filesystem::path& path, const ModelBundle& adapted,
                           const std::vector<std::string>& modified, const std::string& base_hash,
                           const std::string& strategy) {
    json header{{"format_version", kCheckpointFormatVersion},
                {"kind", "delta"},
                {"base_hash", base_hash},
                {"strategy", strategy},
                {"adapters", adapters_json(adapted)}};
    std::vector<NamedTensor> tensors;
    for (const std::string& name : modified) {
        const nn::Param* p = adapted.find(name);
        if (!p) throw InvalidArgument("delta names unknown parameter " + name);
        tensors.push_back({name, p->value()});
    }
    write_archive(path, header.dump(), tensors);
}

void apply_delta_checkpoint(const std::filesystem::path& path, ModelBundle& base) {
    Archive archive = read_archive(path);
    const json header = parse_header(archive.header_json);
    if (header.value("kind", "") != "delta") throw SchemaError(path.string() + " is not a delta checkpoint");
    const std::string expected = header.at("base_hash").get<std::string>();
    const std::string actual = base.hash();
    if (expected != actual)
        throw ConfigurationError("delta " + path.string() + " was made for base " + expected + ", got " + actual);
    attach_adapters(base, header);
    for (const NamedTensor& t : archive.tensors) assign(base, t);
}

std::string file_hash(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return hex64(fnv1a64(bytes));
}

}  // namespace vtonlab
