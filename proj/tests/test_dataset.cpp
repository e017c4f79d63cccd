#include <fstream>

#include "doctest.h"
#include "test_util.hpp"
#include "vtonlab/dataset.hpp"
#include "vtonlab/errors.hpp"
#include "vtonlab/synthetic.hpp"

using namespace vtonlab;
using namespace vtonlab::test;

namespace {

std::string row(const std::string& id, const std::string& stem) {
    return R"({"id":")" + id + R"(","person":"person/)" + stem + R"(.png","garment":"garment/)" + stem +
           R"(.png","mask":"mask/)" + stem + R"(.png","pose":"pose/)" + stem +
           R"(.png","attrs":{"sleeve_length":"short sleeve","neckline":"round neck","item_name":"t-shirts"}})";
}

void write_lines(const std::filesystem::path& p, const std::vector<std::string>& lines) {
    std::ofstream out(p);
    for (const auto& l : lines) out << l << "\n";
}

template <class E>
std::string error_of(const std::function<void()>& f) {
    try {
        f();
    } catch (const E& e) {
        return e.what();
    }
    return "";
}

}  // namespace

TEST_CASE("well-formed manifest loads in file order") {
    TempDir dir("manifest_ok");
    generate(small_synthetic_spec(3), dir.path());
    write_lines(dir / "m.jsonl", {row("c", "00002"), row("a", "00000"), "", row("b", "00001")});
    const DatasetManifest m = load_manifest(dir / "m.jsonl");
    REQUIRE(m.rows.size() == 3);
    CHECK(m.rows[0].id == "c");
    CHECK(m.rows[1].id == "a");
    CHECK(m.rows[2].id == "b");
    CHECK(m.find("a").person == "person/00000.png");
    CHECK(m.rows[0].attrs.neckline == "round neck");

    const TrainingSample s = load_sample(m, m.rows[1]);
    CHECK(s.id == "a");
    CHECK(s.person.shape() == Shape{3, 32, 24});
    CHECK(s.mask.shape() == Shape{1, 32, 24});
    for (double v : s.mask.values()) CHECK((v == 0.0 || v == 1.0));
    CHECK(parse_manifest_row(manifest_row_json(m.rows[0]), 1).person == m.rows[0].person);
}

TEST_CASE("row errors name the row and field") {
    const std::string no_mask =
        R"({"id":"r7","person":"p.png","garment":"g.png","pose":"x.png","attrs":{"sleeve_length":"a","neckline":"b","item_name":"c"}})";
    const std::string msg = error_of<SchemaError>([&] { parse_manifest_row(no_mask, 4); });
    CHECK(msg.find("r7") != std::string::npos);
    CHECK(msg.find("mask") != std::string::npos);

    const std::string bad = error_of<ParseError>([] { parse_manifest_row("{not json", 12); });
    CHECK(bad.find("12") != std::string::npos);
    CHECK_THROWS_AS(parse_manifest_row("[1,2]", 1), ParseError);
    CHECK_THROWS_AS(parse_manifest_row(R"({"id":5})", 1), SchemaError);
}

TEST_CASE("duplicate ids and dangling paths are rejected") {
    TempDir dir("manifest_bad");
    generate(small_synthetic_spec(2), dir.path());
    write_lines(dir / "dup.jsonl", {row("a", "00000"), row("a", "00001")});
    const std::string msg = error_of<DuplicateIdError>([&] { load_manifest(dir / "dup.jsonl"); });
    CHECK(msg.find("'a'") != std::string::npos);

    write_lines(dir / "missing.jsonl", {row("a", "00000"), row("z", "00009")});
    const std::string missing = error_of<SchemaError>([&] { load_manifest(dir / "missing.jsonl"); });
    CHECK(missing.find("'z'") != std::string::npos);
    CHECK_THROWS_AS(load_manifest(dir / "nope.jsonl"), IoError);
}
