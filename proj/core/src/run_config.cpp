#include "vtonlab/run_config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include "vtonlab/errors.hpp"
#include "vtonlab/hash.hpp"

namespace vtonlab {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

template <typename T>
T parse_integer(const std::string& v) {
    T out{};
    const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc{} || ptr != v.data() + v.size()) throw InvalidArgument("'" + v + "' is not an integer");
    return out;
}

double parse_real(const std::string& v) {
    std::size_t used = 0;
    double out = 0.0;
    try {
        out = std::stod(v, &used);
    } catch (const std::exception&) {
        throw InvalidArgument("'" + v + "' is not a number");
    }
    if (used != v.size() || !std::isfinite(out)) throw InvalidArgument("'" + v + "' is not a finite number");
    return out;
}

std::string format_real(double v) {
    char buf[64];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, ptr);
}

template <typename T>
void require(bool ok, const T& what) {
    if (!ok) throw InvalidArgument(what);
}

struct Key {
    const char* name;
    const char* type;
    const char* doc;
    std::function<std::string(const RunConfig&)> get;
    std::function<void(RunConfig&, const std::string&)> set;
};

const std::vector<Key>& keys() {
    static const std::vector<Key> table = {
        {"resolution", "HxW", "image height x width; both divisible by codec_factor",
         [](const RunConfig& c) { return std::to_string(c.height) + "x" + std::to_string(c.width); },
         [](RunConfig& c, const std::string& v) {
             const auto x = v.find('x');
             require(x != std::string::npos, "resolution must look like 64x48");
             c.height = parse_integer<std::int64_t>(v.substr(0, x));
             c.width = parse_integer<std::int64_t>(v.substr(x + 1));
             require(c.height > 0 && c.width > 0, "resolution must be positive");
         }},
        {"codec_factor", "int >= 1", "latent downsampling factor",
         [](const RunConfig& c) { return std::to_string(c.codec_factor); },
         [](RunConfig& c, const std::string& v) {
             c.codec_factor = parse_integer<int>(v);
             require(c.codec_factor >= 1, "codec_factor must be >= 1");
         }},
        {"unet.depth", "int >= 1", "number of down/up levels",
         [](const RunConfig& c) { return std::to_string(c.unet_depth); },
         [](RunConfig& c, const std::string& v) {
             c.unet_depth = parse_integer<int>(v);
             require(c.unet_depth >= 1, "unet.depth must be >= 1");
         }},
        {"unet.width", "int >= 1", "base channel width",
         [](const RunConfig& c) { return std::to_string(c.unet_width); },
         [](RunConfig& c, const std::string& v) {
             c.unet_width = parse_integer<int>(v);
             require(c.unet_width >= 1, "unet.width must be >= 1");
         }},
        {"unet.heads", "int >= 1", "attention heads; must divide every level width",
         [](const RunConfig& c) { return std::to_string(c.unet_heads); },
         [](RunConfig& c, const std::string& v) {
             c.unet_heads = parse_integer<int>(v);
             require(c.unet_heads >= 1, "unet.heads must be >= 1");
         }},
        {"unet.fusion", "all | encoder_only", "which self-attention sites take GarmentNet features",
         [](const RunConfig& c) { return to_string(c.unet_fusion); },
         [](RunConfig& c, const std::string& v) { c.unet_fusion = parse_fusion_sites(v); }},
        {"schedule.T", "int >= 1", "diffusion timesteps",
         [](const RunConfig& c) { return std::to_string(c.schedule_T); },
         [](RunConfig& c, const std::string& v) {
             c.schedule_T = parse_integer<int>(v);
             require(c.schedule_T >= 1, "schedule.T must be >= 1");
         }},
        {"schedule.kind", "linear | scaled_linear", "beta schedule",
         [](const RunConfig& c) { return to_string(c.schedule_kind); },
         [](RunConfig& c, const std::string& v) { c.schedule_kind = parse_schedule_kind(v); }},
        {"train.lr", "real > 0", "Adam learning rate (constant)",
         [](const RunConfig& c) { return format_real(c.train_lr); },
         [](RunConfig& c, const std::string& v) {
             c.train_lr = parse_real(v);
             require(c.train_lr > 0, "train.lr must be positive");
         }},
        {"train.batch", "int >= 1", "batch size",
         [](const RunConfig& c) { return std::to_string(c.train_batch); },
         [](RunConfig& c, const std::string& v) {
             c.train_batch = parse_integer<int>(v);
             require(c.train_batch >= 1, "train.batch must be >= 1");
         }},
        {"train.steps", "int >= 1", "optimiser steps",
         [](const RunConfig& c) { return std::to_string(c.train_steps); },
         [](RunConfig& c, const std::string& v) {
             c.train_steps = parse_integer<std::int64_t>(v);
             require(c.train_steps >= 1, "train.steps must be >= 1");
         }},
        {"train.cond_dropout", "real in [0, 1)", "joint condition dropout probability",
         [](const RunConfig& c) { return format_real(c.train_cond_dropout); },
         [](RunConfig& c, const std::string& v) {
             c.train_cond_dropout = parse_real(v);
             require(c.train_cond_dropout >= 0 && c.train_cond_dropout < 1, "train.cond_dropout must lie in [0, 1)");
         }},
        {"train.seed", "uint64", "model initialisation and training seed",
         [](const RunConfig& c) { return std::to_string(c.train_seed); },
         [](RunConfig& c, const std::string& v) { c.train_seed = parse_integer<std::uint64_t>(v); }},
        {"customize.strategy", "decoder_attention | all_unet | low_rank", "parameters updated by customization",
         [](const RunConfig& c) { return c.customize_strategy; },
         [](RunConfig& c, const std::string& v) {
             CustomizationStrategy::parse(v);
             c.customize_strategy = v;
         }},
        {"customize.rank", "int >= 1", "adapter rank for low_rank",
         [](const RunConfig& c) { return std::to_string(c.customize_rank); },
         [](RunConfig& c, const std::string& v) {
             c.customize_rank = parse_integer<int>(v);
             require(c.customize_rank >= 1, "customize.rank must be >= 1");
         }},
        {"customize.lr", "real > 0", "customization learning rate",
         [](const RunConfig& c) { return format_real(c.customize_lr); },
         [](RunConfig& c, const std::string& v) {
             c.customize_lr = parse_real(v);
             require(c.customize_lr > 0, "customize.lr must be positive");
         }},
        {"customize.steps", "int >= 1", "customization steps",
         [](const RunConfig& c) { return std::to_string(c.customize_steps); },
         [](RunConfig& c, const std::string& v) {
             c.customize_steps = parse_integer<int>(v);
             require(c.customize_steps >= 1, "customize.steps must be >= 1");
         }},
        {"infer.steps", "int >= 1", "DDPM sampling steps",
         [](const RunConfig& c) { return std::to_string(c.infer_steps); },
         [](RunConfig& c, const std::string& v) {
             c.infer_steps = parse_integer<int>(v);
             require(c.infer_steps >= 1, "infer.steps must be >= 1");
         }},
        {"infer.guidance", "real >= 1", "classifier-free guidance scale",
         [](const RunConfig& c) { return format_real(c.infer_guidance); },
         [](RunConfig& c, const std::string& v) {
             c.infer_guidance = parse_real(v);
             require(c.infer_guidance >= 1, "infer.guidance must be >= 1");
         }},
        {"infer.seed", "uint64", "sampling seed",
         [](const RunConfig& c) { return std::to_string(c.infer_seed); },
         [](RunConfig& c, const std::string& v) { c.infer_seed = parse_integer<std::uint64_t>(v); }},
    };
    return table;
}

}  // namespace

RunConfig RunConfig::parse(const std::string& text) {
    RunConfig c;
    std::set<std::string> seen;
    std::istringstream in(text);
    std::string raw;
    int line_number = 0;
    while (std::getline(in, raw)) {
        ++line_number;
        const auto hash_pos = raw.find('#');
        const std::string line = trim(hash_pos == std::string::npos ? raw : raw.substr(0, hash_pos));
        if (line.empty()) continue;
        const auto eq = line.find('=');
        const std::string where = "config line " + std::to_string(line_number);
        if (eq == std::string::npos) throw ConfigurationError(where + ": expected key = value");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        const Key* entry = nullptr;
        for (const Key& k : keys())
            if (key == k.name) entry = &k;
        if (!entry) throw ConfigurationError(where + ": unknown key '" + key + "'");
        if (!seen.insert(key).second) throw ConfigurationError(where + ": repeated key '" + key + "'");
        try {
            entry->set(c, value);
        } catch (const Error& e) {
            throw ConfigurationError(where + ": " + key + ": " + e.what());
        }
    }
    try {
        c.bundle_config().validate();
    } catch (const Error& e) {
        throw ConfigurationError(std::string("inconsistent config: ") + e.what());
    }
    return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config " + path.string());
    std::stringstream buf;
    buf << in.rdbuf();
    return parse(buf.str());
}

std::string RunConfig::serialize() const {
    std::string out;
    for (const Key& k : keys()) out += std::string(k.name) + " = " + k.get(*this) + "\n";
    return out;
}

std::string RunConfig::hash() const { return hex64(fnv1a64(serialize())); }

std::string RunConfig::reference() {
    const RunConfig defaults;
    std::string out = "# vtonlab run configuration reference\n# key = default    # type: description\n";
    for (const Key& k : keys())
        out += std::string(k.name) + " = " + k.get(defaults) + "    # " + k.type + ": " + k.doc + "\n";
    return out;
}

BundleConfig RunConfig::bundle_config() const {
    BundleConfig b;
    b.image_height = height;
    b.image_width = width;
    b.codec_factor = codec_factor;
    b.unet.depth = unet_depth;
    b.unet.base_width = unet_width;
    b.unet.heads = unet_heads;
    b.unet.fusion = unet_fusion;
    b.seed = train_seed;
    return b;
}

NoiseSchedule RunConfig::schedule() const { return make_schedule(schedule_T, schedule_kind); }

TrainConfig RunConfig::train_config() const {
    TrainConfig t;
    t.learning_rate = train_lr;
    t.batch_size = train_batch;
    t.steps = train_steps;
    t.cond_dropout_prob = train_cond_dropout;
    t.seed = train_seed;
    return t;
}

CustomizationConfig RunConfig::customization_config() const {
    CustomizationConfig c;
    c.learning_rate = customize_lr;
    c.steps = customize_steps;
    c.strategy = CustomizationStrategy::parse(customize_strategy, customize_rank);
    c.seed = train_seed;
    return c;
}

}  // namespace vtonlab
