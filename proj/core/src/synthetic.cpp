#include "vtonlab/synthetic.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "vtonlab/dataset.hpp"
#include "vtonlab/errors.hpp"
#include "vtonlab/image.hpp"

namespace vtonlab {

namespace {

using Color = std::array<double, 3>;

struct Point {
    double r, c;
};

struct Figure {
    Point shoulder[2];
    Point hand[2];
    Point hip[2];
    Point foot[2];
};

constexpr const char* kSleeves[] = {"short sleeve", "long sleeve", "sleeveless"};
constexpr const char* kNecklines[] = {"round neck", "v neck"};
constexpr const char* kItems[] = {"t-shirts", "blouse", "shirts"};

// 3x5 glyphs, one row per string, '#' set.
constexpr const char* kGlyphs[][5] = {
    {"###", "#.#", "###", "#.#", "#.#"},  // A
    {"##.", "#.#", "##.", "#.#", "##."},  // B
    {"#.#", "#.#", "###", "#.#", "#.#"},  // H
    {"###", "#..", "###", "..#", "###"},  // S
    {"###", ".#.", ".#.", ".#.", ".#."},  // T
    {"#.#", "#.#", "#.#", "#.#", "###"},  // U
};

double segment_distance(Point p, Point a, Point b, double* along) {
    const double dr = b.r - a.r, dc = b.c - a.c;
    const double len2 = dr * dr + dc * dc;
    double s = len2 > 0 ? ((p.r - a.r) * dr + (p.c - a.c) * dc) / len2 : 0.0;
    s = std::clamp(s, 0.0, 1.0);
    if (along) *along = s;
    const double er = p.r - (a.r + s * dr), ec = p.c - (a.c + s * dc);
    return std::sqrt(er * er + ec * ec);
}

Figure figure_for_pose(int pose, double h, double w) {
    // Geometry is laid out on the 64x48 reference canvas and scaled.
    const double sr = h / 64.0, sc = w / 48.0;
    auto P = [&](double r, double c) { return Point{r * sr, c * sc}; };
    Figure f{};
    f.shoulder[0] = P(19, 15);
    f.shoulder[1] = P(19, 32);
    f.hip[0] = P(40, 20);
    f.hip[1] = P(40, 27);
    switch (pose) {
        case 0:
            f.hand[0] = P(38, 10);
            f.hand[1] = P(38, 37);
            f.foot[0] = P(63, 19);
            f.foot[1] = P(63, 28);
            break;
        case 1:
            f.hand[0] = P(20, 2);
            f.hand[1] = P(20, 45);
            f.foot[0] = P(63, 14);
            f.foot[1] = P(63, 33);
            break;
        case 2:
            f.hand[0] = P(4, 8);
            f.hand[1] = P(38, 37);
            f.foot[0] = P(63, 19);
            f.foot[1] = P(63, 28);
            break;
        default:
            f.hand[0] = P(31, 4);
            f.hand[1] = P(31, 43);
            f.foot[0] = P(63, 11);
            f.foot[1] = P(63, 36);
            break;
    }
    return f;
}

Color random_color(Rng& rng, double lo, double hi) {
    return {rng.uniform(lo, hi), rng.uniform(lo, hi), rng.uniform(lo, hi)};
}

// Quantised to 8 bits up front so the PNG round trip is exact.
Color q8(Color c) {
    for (double& v : c) v = std::round(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0;
    return c;
}

struct GarmentStyle {
    int sleeve = 0;
    int neckline = 0;
    int item = 0;
    GarmentPattern pattern = GarmentPattern::solid;
    Color primary{}, secondary{};
    int glyph = 0;
    int period = 4;
};

class Canvas {
public:
    Canvas(std::int64_t h, std::int64_t w, std::int64_t c) : t({c, h, w}), h_(h), w_(w) {}
    void set(std::int64_t r, std::int64_t c, const Color& col) {
        for (std::int64_t ch = 0; ch < t.dim(0); ++ch) t.at(ch, r, c) = col[static_cast<std::size_t>(ch)];
    }
    std::int64_t h() const { return h_; }
    std::int64_t w() const { return w_; }
    Tensor t;

private:
    std::int64_t h_, w_;
};

// Region membership tests on the reference-scaled canvas.
struct Body {
    Figure fig;
    double sr, sc;
    double torso_top, torso_bottom, torso_left, torso_right;

    Body(int pose, std::int64_t h, std::int64_t w)
        : fig(figure_for_pose(pose, static_cast<double>(h), static_cast<double>(w))),
          sr(static_cast<double>(h) / 64.0),
          sc(static_cast<double>(w) / 48.0),
          torso_top(17 * sr),
          torso_bottom(41 * sr),
          torso_left(15 * sc),
          torso_right(32.99 * sc) {}

    bool head(double r, double c) const {
        const double dr = (r - 9.5 * sr) / (5.5 * sr), dc = (c - 23.5 * sc) / (5.0 * sc);
        return dr * dr + dc * dc <= 1.0;
    }
    bool neck(double r, double c) const { return r >= 14 * sr && r < torso_top && std::abs(c - 23.5 * sc) <= 2.5 * sc; }
    bool torso(double r, double c) const {
        return r >= torso_top && r < torso_bottom && c >= torso_left && c <= torso_right;
    }
    // Returns the position along the arm in [0, 1] or a negative value.
    double arm(int side, double r, double c) const {
        double s = 0.0;
        return segment_distance({r, c}, fig.shoulder[side], fig.hand[side], &s) <= 2.6 * sc ? s : -1.0;
    }
    bool leg(int side, double r, double c) const {
        return r >= torso_bottom - 1 && segment_distance({r, c}, fig.hip[side], fig.foot[side], nullptr) <= 3.0 * sc;
    }
};

bool garment_covers(const Body& b, const GarmentStyle& g, double r, double c) {
    const double sr = b.sr, sc = b.sc;
    const double hem = (g.item == 0 ? 38.0 : g.item == 1 ? 41.0 : 40.0) * sr;
    const double flare = g.item == 1 ? std::max(0.0, r - 36.0 * sr) * 0.5 : 0.0;
    const bool in_torso = r >= b.torso_top && r < hem && c >= b.torso_left - flare && c <= b.torso_right + flare;
    if (in_torso) {
        const double dc = std::abs(c - 23.5 * sc);
        const double depth = r - b.torso_top;
        const bool cut = g.neckline == 0 ? (depth * depth / (sr * sr) + dc * dc / (sc * sc) <= 3.5 * 3.5)
                                         : (depth / sr < 6.0 - 1.4 * dc / sc);
        return !cut;
    }
    if (g.sleeve == 2) return false;
    const double reach = g.sleeve == 0 ? 0.4 : 1.0;
    for (int side = 0; side < 2; ++side) {
        const double s = b.arm(side, r, c);
        if (s >= 0.0 && s <= reach) return true;
    }
    return false;
}

Color pattern_color(const GarmentStyle& g, double r, double c, std::int64_t ri, std::int64_t ci, double sr,
                    double sc) {
    switch (g.pattern) {
        case GarmentPattern::solid: return g.primary;
        case GarmentPattern::stripes: return (ri / g.period) % 2 == 0 ? g.primary : g.secondary;
        case GarmentPattern::checker: return ((ri / g.period) + (ci / g.period)) % 2 == 0 ? g.primary : g.secondary;
        case GarmentPattern::logo: {
            const double gr = (r - 24.0 * sr) / (2.0 * sr), gc = (c - 20.5 * sc) / (2.0 * sc);
            if (gr >= 0 && gr < 5 && gc >= 0 && gc < 3) {
                const char bit = kGlyphs[g.glyph][static_cast<int>(gr)][static_cast<int>(gc)];
                if (bit == '#') return g.secondary;
            }
            return g.primary;
        }
    }
    return g.primary;
}

GarmentStyle draw_style(const SyntheticSpec& spec, int index, Rng& rng) {
    GarmentStyle g;
    g.sleeve = rng.uniform_int(0, 2);
    g.neckline = rng.uniform_int(0, 1);
    g.item = rng.uniform_int(0, 2);
    g.pattern = spec.patterns[static_cast<std::size_t>(index) % spec.patterns.size()];
    g.primary = q8(random_color(rng, 0.05, 0.95));
    Color sec = q8(random_color(rng, 0.05, 0.95));
    // Keep the secondary colour visibly different from the primary.
    double dist = 0.0;
    for (std::size_t i = 0; i < 3; ++i) dist += std::abs(sec[i] - g.primary[i]);
    if (dist < 0.6) {
        for (std::size_t i = 0; i < 3; ++i) sec[i] = 1.0 - g.primary[i];
        sec = q8(sec);
    }
    g.secondary = sec;
    g.glyph = rng.uniform_int(0, static_cast<int>(std::size(kGlyphs)) - 1);
    g.period = rng.uniform_int(3, 5);
    return g;
}

void paint_garment(Canvas& canvas, Tensor* mask, const Body& body, const GarmentStyle& g) {
    for (std::int64_t r = 0; r < canvas.h(); ++r)
        for (std::int64_t c = 0; c < canvas.w(); ++c) {
            const double rr = static_cast<double>(r), cc = static_cast<double>(c);
            if (!garment_covers(body, g, rr, cc)) continue;
            canvas.set(r, c, pattern_color(g, rr, cc, r, c, body.sr, body.sc));
            if (mask) mask->at(0, r, c) = 1.0;
        }
}

std::string index_name(int index) {
    std::ostringstream s;
    s.width(5);
    s.fill('0');
    s << index;
    return s.str();
}

Violation violation(std::string id, std::string kind, std::string message) {
    return Violation{std::move(id), std::move(kind), std::move(message)};
}

}  // namespace

std::string to_string(GarmentPattern p) {
    switch (p) {
        case GarmentPattern::solid: return "solid";
        case GarmentPattern::stripes: return "stripes";
        case GarmentPattern::checker: return "checker";
        case GarmentPattern::logo: return "logo";
    }
    return "solid";
}

GarmentPattern parse_garment_pattern(const std::string& s) {
    if (s == "solid") return GarmentPattern::solid;
    if (s == "stripes") return GarmentPattern::stripes;
    if (s == "checker") return GarmentPattern::checker;
    if (s == "logo") return GarmentPattern::logo;
    throw InvalidArgument("unknown garment pattern '" + s + "'");
}

void SyntheticSpec::validate() const {
    if (n_samples < 1) throw InvalidArgument("synthetic dataset needs at least one sample");
    if (codec_factor < 1 || height % codec_factor != 0 || width % codec_factor != 0)
        throw InvalidArgument("synthetic resolution must be divisible by the codec factor");
    if (height < 16 || width < 12) throw InvalidArgument("synthetic resolution is too small for the figures");
    if (patterns.empty()) throw InvalidArgument("synthetic dataset needs at least one garment pattern");
    if (pose_variants < 1 || pose_variants > 4) throw InvalidArgument("pose variants must lie in [1, 4]");
    if (first_index < 0) throw InvalidArgument("first index must be non-negative");
}

SyntheticSample render_sample(const SyntheticSpec& spec, int index) {
    spec.validate();
    Rng rng(derive_seed(spec.seed, static_cast<std::uint64_t>(index)));
    const std::int64_t h = spec.height, w = spec.width;

    SyntheticSample out;
    out.pose = rng.uniform_int(0, spec.pose_variants - 1);
    const GarmentStyle style = draw_style(spec, index, rng);
    out.pattern = style.pattern;
    const Color bg_top = q8(random_color(rng, 0.55, 0.95));
    const Color bg_bottom = q8(random_color(rng, 0.55, 0.95));
    const Color skin = q8({rng.uniform(0.55, 0.9), rng.uniform(0.4, 0.7), rng.uniform(0.3, 0.55)});
    const Color pants = q8(random_color(rng, 0.05, 0.35));

    const Body body(out.pose, h, w);
    Canvas person(h, w, 3), pose(h, w, 3);
    static constexpr Color kHead{1, 0, 0}, kTorso{0, 1, 0}, kArm0{0, 0, 1}, kArm1{1, 1, 0}, kLeg0{1, 0, 1},
        kLeg1{0, 1, 1};
    for (std::int64_t r = 0; r < h; ++r) {
        const double t = static_cast<double>(r) / static_cast<double>(h - 1);
        Color bg{};
        for (std::size_t i = 0; i < 3; ++i) bg[i] = std::round(((1 - t) * bg_top[i] + t * bg_bottom[i]) * 255.0) / 255.0;
        for (std::int64_t c = 0; c < w; ++c) {
            const double rr = static_cast<double>(r), cc = static_cast<double>(c);
            Color px = bg;
            Color part{0, 0, 0};
            for (int side = 0; side < 2; ++side)
                if (body.leg(side, rr, cc)) {
                    px = pants;
                    part = side == 0 ? kLeg0 : kLeg1;
                }
            for (int side = 0; side < 2; ++side)
                if (body.arm(side, rr, cc) >= 0.0) {
                    px = skin;
                    part = side == 0 ? kArm0 : kArm1;
                }
            if (body.torso(rr, cc) || body.neck(rr, cc)) {
                px = skin;
                part = kTorso;
            }
            if (body.head(rr, cc)) {
                px = skin;
                part = kHead;
            }
            person.set(r, c, px);
            pose.set(r, c, part);
        }
    }
    Tensor mask({1, h, w});
    paint_garment(person, &mask, body, style);

    Canvas garment(h, w, 3);
    garment.t.fill(1.0);
    paint_garment(garment, nullptr, Body(1, h, w), style);

    TrainingSample& s = out.sample;
    s.id = index_name(index);
    s.person = std::move(person.t);
    s.garment = std::move(garment.t);
    s.mask = std::move(mask);
    s.pose = std::move(pose.t);
    s.attrs = GarmentAttributes::normalized(kSleeves[style.sleeve], kNecklines[style.neckline], kItems[style.item]);
    return out;
}

std::vector<TrainingSample> render_dataset(const SyntheticSpec& spec) {
    spec.validate();
    std::vector<TrainingSample> out;
    for (int i = 0; i < spec.n_samples; ++i) out.push_back(render_sample(spec, spec.first_index + i).sample);
    return out;
}

std::filesystem::path generate(const SyntheticSpec& spec, const std::filesystem::path& dir) {
    spec.validate();
    std::error_code ec;
    for (const char* sub : {"person", "garment", "mask", "pose"}) {
        std::filesystem::create_directories(dir / sub, ec);
        if (ec) throw IoError("cannot create " + (dir / sub).string() + ": " + ec.message());
    }
    std::string manifest;
    for (int i = 0; i < spec.n_samples; ++i) {
        const SyntheticSample s = render_sample(spec, spec.first_index + i);
        ManifestRow row;
        row.id = s.sample.id;
        row.person = "person/" + row.id + ".png";
        row.garment = "garment/" + row.id + ".png";
        row.mask = "mask/" + row.id + ".png";
        row.pose = "pose/" + row.id + ".png";
        row.attrs = s.sample.attrs;
        write_png(dir / row.person, s.sample.person);
        write_png(dir / row.garment, s.sample.garment);
        write_png(dir / row.mask, s.sample.mask);
        write_png(dir / row.pose, s.sample.pose);
        manifest += manifest_row_json(row) + "\n";
    }
    const auto path = dir / "manifest.jsonl";
    write_file_atomic(path, manifest);
    return path;
}

std::string ValidationReport::summary() const {
    std::ostringstream out;
    out << rows << " rows, " << violations.size() << " violations\n";
    for (const Violation& v : violations)
        out << (v.row_id.empty() ? "-" : v.row_id) << " [" << v.kind << "] " << v.message << "\n";
    return out.str();
}

ValidationReport validate_dataset(const std::filesystem::path& dataset) {
    ValidationReport report;
    const std::filesystem::path manifest_path =
        std::filesystem::is_directory(dataset) ? dataset / "manifest.jsonl" : dataset;
    std::ifstream in(manifest_path);
    if (!in) {
        report.violations.push_back(violation("", "missing_file", "cannot open manifest " + manifest_path.string()));
        return report;
    }
    DatasetManifest manifest;
    manifest.path = manifest_path;
    std::set<std::string> ids;
    std::optional<std::pair<int, int>> resolution;
    std::string line;
    std::size_t line_number = 0;
    while (std::getline(in, line)) {
        ++line_number;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        ++report.rows;
        ManifestRow row;
        try {
            row = parse_manifest_row(line, line_number);
        } catch (const ParseError& e) {
            report.violations.push_back(violation("", "parse", e.what()));
            continue;
        } catch (const SchemaError& e) {
            report.violations.push_back(violation("", "schema", e.what()));
            continue;
        }
        if (!ids.insert(row.id).second)
            report.violations.push_back(violation(row.id, "duplicate_id", "duplicate id '" + row.id + "'"));

        const std::pair<const char*, const std::string*> files[] = {
            {"person", &row.person}, {"garment", &row.garment}, {"mask", &row.mask}, {"pose", &row.pose}};
        for (const auto& [field, rel] : files) {
            const auto path = manifest.resolve(*rel);
            if (!std::filesystem::is_regular_file(path)) {
                report.violations.push_back(
                    violation(row.id, "missing_file", std::string(field) + " file " + *rel + " does not exist"));
                continue;
            }
            RawImage raw;
            try {
                raw = read_png_raw(path);
            } catch (const Error& e) {
                report.violations.push_back(violation(row.id, "unreadable", std::string(field) + ": " + e.what()));
                continue;
            }
            if (!resolution) resolution = std::pair{raw.height, raw.width};
            if (std::pair{raw.height, raw.width} != *resolution)
                report.violations.push_back(violation(
                    row.id, "resolution",
                    std::string(field) + " is " + std::to_string(raw.height) + "x" + std::to_string(raw.width) +
                        ", expected " + std::to_string(resolution->first) + "x" + std::to_string(resolution->second)));
            if (std::string(field) == "mask") {
                const bool binary = std::all_of(raw.samples.begin(), raw.samples.end(),
                                                [](std::uint8_t v) { return v == 0 || v == 255; });
                if (raw.channels != 1)
                    report.violations.push_back(violation(row.id, "mask_not_binary", "mask is not single-channel"));
                else if (!binary)
                    report.violations.push_back(
                        violation(row.id, "mask_not_binary", "mask has values other than 0 and 255"));
            }
        }
    }
    return report;
}

}  // namespace vtonlab
