#include <cstdlib>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>
#include <sys/wait.h>

#include "doctest.h"
#include "test_util.hpp"

using vtonlab::test::TempDir;

namespace {

struct Run {
    int code = -1;
    std::string output;
};

Run run(const std::string& args, const TempDir& dir) {
    const auto log = dir / "cli.log";
    const std::string cmd = std::string(VTONLAB_CLI_PATH) + " " + args + " > " + log.string() + " 2>&1";
    const int status = std::system(cmd.c_str());
    Run r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    std::ifstream in(log);
    std::stringstream ss;
    ss << in.rdbuf();
    r.output = ss.str();
    return r;
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

void write_config(const std::filesystem::path& p) {
    std::ofstream out(p);
    out << "resolution = 32x24\nunet.width = 16\ntrain.steps = 2\ntrain.batch = 2\n"
           "customize.steps = 2\ninfer.steps = 3\n";
}

}  // namespace

TEST_CASE("usage errors and selfcheck") {
    TempDir dir("cli_basic");
    CHECK(run("--bogus", dir).code == 64);
    CHECK(run("infer", dir).code == 64);
    const Run check = run("selfcheck", dir);
    INFO(check.output);
    CHECK(check.code == 0);
    const Run ref = run("--config-reference", dir);
    CHECK(ref.code == 0);
    CHECK(ref.output.find("train.lr") != std::string::npos);
}

TEST_CASE("generate, validate and reject duplicates") {
    TempDir dir("cli_validate");
    const auto cfg = dir / "c.cfg";
    write_config(cfg);
    const auto ds = dir / "ds";
    CHECK(run("gen-data --out " + ds.string() + " --n 3 --config " + cfg.string(), dir).code == 0);
    CHECK(run("validate --manifest " + ds.string(), dir).code == 0);

    std::ifstream in(ds / "manifest.jsonl");
    std::string first;
    std::getline(in, first);
    in.close();
    std::ofstream(ds / "manifest.jsonl", std::ios::app) << first << "\n";
    const Run r = run("validate --manifest " + (ds / "manifest.jsonl").string(), dir);
    CHECK(r.code == 1);
    CHECK(r.output.find("00000") != std::string::npos);
    CHECK(r.output.find("duplicate") != std::string::npos);
}

TEST_CASE("infer is deterministic and eval of identical sets scores one") {
    TempDir dir("cli_infer");
    const auto cfg = dir / "c.cfg";
    write_config(cfg);
    const auto ds = dir / "ds";
    REQUIRE(run("gen-data --out " + ds.string() + " --n 4 --config " + cfg.string(), dir).code == 0);
    const std::string base = "infer --config " + cfg.string() + " --manifest " + (ds / "manifest.jsonl").string() +
                             " --id 00003 --seed 7 --out ";
    const Run a = run(base + (dir / "a").string(), dir);
    INFO(a.output);
    REQUIRE(a.code == 0);
    REQUIRE(run(base + (dir / "b").string(), dir).code == 0);
    CHECK(slurp(dir / "a/00003.png") == slurp(dir / "b/00003.png"));
    CHECK(std::filesystem::exists(dir / "a/00003.json"));
    const auto prov = nlohmann::json::parse(slurp(dir / "a/provenance.json"));
    CHECK(prov.at("command") == "infer");
    CHECK(prov.at("seed") == 7);

    const Run e = run("eval --results " + (dir / "a").string() + " --references " + (dir / "b").string() +
                          " --out " + (dir / "eval").string(),
                      dir);
    INFO(e.output);
    REQUIRE(e.code == 0);
    const auto report = nlohmann::json::parse(slurp(dir / "eval/report.json"));
    CHECK(std::abs(report.at("ssim").get<double>() - 1.0) < 1e-6);
    CHECK(report.at("n_pairs") == 1);
}

TEST_CASE("train, customize and infer with a delta") {
    TempDir dir("cli_train");
    const auto cfg = dir / "c.cfg";
    write_config(cfg);
    const auto ds = dir / "ds";
    const auto manifest = (ds / "manifest.jsonl").string();
    REQUIRE(run("gen-data --out " + ds.string() + " --n 4 --config " + cfg.string(), dir).code == 0);
    const Run t = run("train --config " + cfg.string() + " --manifest " + manifest + " --out " + (dir / "run").string(), dir);
    INFO(t.output);
    REQUIRE(t.code == 0);
    CHECK(std::filesystem::exists(dir / "run/model.ckpt"));
    std::ifstream log(dir / "run/loss.csv");
    std::string header;
    std::getline(log, header);
    CHECK(header == "step,loss,lr,seconds");

    const Run c = run("customize --config " + cfg.string() + " --manifest " + manifest + " --id 00001 --checkpoint " +
                          (dir / "run/model.ckpt").string() + " --out " + (dir / "cust").string(),
                      dir);
    INFO(c.output);
    REQUIRE(c.code == 0);
    REQUIRE(std::filesystem::exists(dir / "cust/00001.delta"));

    const Run i = run("infer --config " + cfg.string() + " --manifest " + manifest + " --id 00001 --checkpoint " +
                          (dir / "run/model.ckpt").string() + " --delta " + (dir / "cust/00001.delta").string() +
                          " --out " + (dir / "out").string(),
                      dir);
    INFO(i.output);
    CHECK(i.code == 0);
    CHECK(std::filesystem::exists(dir / "out/00001.png"));

    const Run g = run("grid --manifest " + manifest + " --results " + (dir / "out").string() + " --out " +
                          (dir / "grid.png").string(),
                      dir);
    CHECK(g.code == 0);
    CHECK(std::filesystem::exists(dir / "grid.png"));

    const Run bad = run("infer --config " + cfg.string() + " --manifest " + manifest + " --id 00001 --delta " +
                            (dir / "cust/00001.delta").string() + " --out " + (dir / "out2").string(),
                        dir);
    CHECK(bad.code == 1);
}
