#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "vtonlab/attention.hpp"
#include "vtonlab/checkpoint.hpp"
#include "vtonlab/customization.hpp"
#include "vtonlab/dataset.hpp"
#include "vtonlab/errors.hpp"
#include "vtonlab/hash.hpp"
#include "vtonlab/image.hpp"
#include "vtonlab/metrics.hpp"
#include "vtonlab/pipeline.hpp"
#include "vtonlab/run_config.hpp"
#include "vtonlab/synthetic.hpp"
#include "vtonlab/training.hpp"

namespace fs = std::filesystem;
using namespace vtonlab;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 1;
constexpr int kExitRuntime = 2;
constexpr int kExitUsage = 64;

struct Common {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out;
};

RunConfig load_config(const std::string& path) { return path.empty() ? RunConfig{} : RunConfig::load(path); }

void write_provenance(const fs::path& dir, const std::string& command, const RunConfig& config,
                      const std::string& checkpoint_hash, std::uint64_t seed) {
    fs::create_directories(dir);
    const nlohmann::json record{{"command", command},
                                {"config_hash", config.hash()},
                                {"checkpoint_hash", checkpoint_hash},
                                {"seed", seed},
                                {"version", VTONLAB_DESCRIBE}};
    write_file_atomic(dir / "provenance.json", record.dump(2) + "\n");
}

// The bundle a command runs with: a checkpoint when given, otherwise a fresh
// initialisation from the config.
struct LoadedModel {
    ModelBundle bundle;
    NoiseSchedule schedule;
    std::string hash;
};

LoadedModel load_model(const RunConfig& config, const std::string& checkpoint, const std::string& delta) {
    LoadedModel m;
    if (checkpoint.empty()) {
        m.bundle = ModelBundle::create(config.bundle_config());
        m.schedule = config.schedule();
        m.hash = "init:" + m.bundle.hash();
    } else {
        LoadedCheckpoint ckpt = load_checkpoint(checkpoint);
        m.bundle = std::move(ckpt.bundle);
        m.schedule = std::move(ckpt.schedule);
        m.hash = file_hash(checkpoint);
    }
    if (!delta.empty()) {
        apply_delta_checkpoint(delta, m.bundle);
        m.hash += "+" + file_hash(delta);
    }
    return m;
}

// Frozen extractor weights, cached under $VTONLAB_CACHE when set.
std::unique_ptr<FeatureExtractor> cached_extractor(std::uint64_t seed) {
    const char* cache = std::getenv("VTONLAB_CACHE");
    BundleConfig config;
    config.seed = seed;
    ImageEncoder encoder(config.image_encoder_widths, nn::Init(seed, "image_encoder"));
    if (cache && *cache) {
        const fs::path path = fs::path(cache) / ("extractor_" + std::to_string(seed) + ".bin");
        if (fs::exists(path)) {
            const Archive archive = read_archive(path);
            for (const NamedTensor& t : archive.tensors)
                encoder.visit("", [&](const std::string& name, nn::Param& p) {
                    if (name == t.name && p.value().shape() == t.value.shape()) p.mutable_value() = t.value;
                });
        } else {
            std::vector<NamedTensor> tensors;
            encoder.visit("", [&](const std::string& name, const nn::Param& p) { tensors.push_back({name, p.value()}); });
            fs::create_directories(cache);
            write_archive(path, nlohmann::json{{"kind", "extractor"}, {"seed", seed}}.dump(), tensors);
        }
    }
    return std::make_unique<EncoderFeatureExtractor>(std::move(encoder));
}

std::vector<const ManifestRow*> select_rows(const DatasetManifest& manifest, const std::vector<std::string>& ids) {
    std::vector<const ManifestRow*> rows;
    if (ids.empty())
        for (const ManifestRow& r : manifest.rows) rows.push_back(&r);
    else
        for (const std::string& id : ids) rows.push_back(&manifest.find(id));
    return rows;
}

// ---- selfcheck -------------------------------------------------------------

struct Check {
    std::string name;
    std::function<std::string()> run;  // empty string on success
};

std::string expect(bool ok, const std::string& detail) { return ok ? std::string{} : detail; }

// Single-head attention over the 2N concatenated tokens, first N rows kept.
Tensor brute_force_fused(const Tensor& x, const Tensor& g, const SelfAttnWeights& w) {
    const std::int64_t n = x.dim(1), d = x.dim(2);
    auto row = [&](std::int64_t j) { return j < n ? x.data() + j * d : g.data() + (j - n) * d; };
    auto project = [&](const Tensor& m, const double* v) {
        std::vector<double> out(static_cast<std::size_t>(d));
        for (std::int64_t a = 0; a < d; ++a)
            for (std::int64_t b = 0; b < d; ++b) out[static_cast<std::size_t>(a)] += m[a * d + b] * v[b];
        return out;
    };
    Tensor out({1, n, d});
    for (std::int64_t i = 0; i < n; ++i) {
        const auto q = project(w.w_q, row(i));
        std::vector<double> logits;
        for (std::int64_t j = 0; j < 2 * n; ++j) {
            const auto k = project(w.w_k, row(j));
            double s = 0.0;
            for (std::int64_t a = 0; a < d; ++a) s += q[static_cast<std::size_t>(a)] * k[static_cast<std::size_t>(a)];
            logits.push_back(s / std::sqrt(static_cast<double>(d)));
        }
        const double mx = *std::max_element(logits.begin(), logits.end());
        double z = 0.0;
        for (double& l : logits) z += (l = std::exp(l - mx));
        std::vector<double> o(static_cast<std::size_t>(d));
        for (std::int64_t j = 0; j < 2 * n; ++j) {
            const auto v = project(w.w_v, row(j));
            for (std::int64_t a = 0; a < d; ++a)
                o[static_cast<std::size_t>(a)] += logits[static_cast<std::size_t>(j)] / z * v[static_cast<std::size_t>(a)];
        }
        const auto y = project(w.w_out, o.data());
        for (std::int64_t a = 0; a < d; ++a) out[i * d + a] = y[static_cast<std::size_t>(a)];
    }
    return out;
}

std::vector<Check> selfchecks() {
    std::vector<Check> checks;
    checks.push_back({"vp_identity", [] {
                          for (auto kind : {ScheduleKind::linear, ScheduleKind::scaled_linear}) {
                              const NoiseSchedule s = make_schedule(200, kind);
                              for (int t = 0; t <= s.T; ++t) {
                                  const double a = s.alpha[static_cast<std::size_t>(t)];
                                  const double g = s.sigma[static_cast<std::size_t>(t)];
                                  if (std::abs(a * a + g * g - 1.0) > 1e-6) return "violated at t=" + std::to_string(t);
                              }
                          }
                          return std::string{};
                      }});
    checks.push_back({"cfg_identities", [] {
                          Rng rng(1);
                          const Tensor c = Tensor::randn({1, 4, 4, 3}, rng), u = Tensor::randn({1, 4, 4, 3}, rng);
                          return expect(cfg_combine(c, u, 1.0) == c && cfg_combine(c, c, 3.0) == c,
                                        "cfg_combine identities do not hold");
                      }});
    checks.push_back({"prompt_templates", [] {
                          const auto p = build_prompts(build_caption(
                              GarmentAttributes::normalized("short sleeve", "round neck", "t-shirts")));
                          return expect(p.tryon_prompt == "model is wearing short sleeve round neck t-shirts" &&
                                            p.garment_prompt == "a photo of short sleeve round neck t-shirts",
                                        "prompt templates differ");
                      }});
    checks.push_back({"fusion_oracle", [] {
                          Rng rng(2);
                          const std::int64_t n = 5, d = 8;
                          const SelfAttnWeights w{Tensor::randn({d, d}, rng, 0.3), Tensor::randn({d, d}, rng, 0.3),
                                                  Tensor::randn({d, d}, rng, 0.3), Tensor::randn({d, d}, rng, 0.3), 1};
                          const TokenSequence x{Tensor::randn({1, n, d}, rng)}, g{Tensor::randn({1, n, d}, rng)};
                          const Tensor fused = garment_fused_self_attention(x, g, w).data;
                          const Tensor oracle = brute_force_fused(x.data, g.data, w);
                          const double err = max_abs_diff(fused, oracle);
                          return expect(err < 1e-6, "max abs diff " + std::to_string(err));
                      }});
    checks.push_back({"zero_init_expansion", [] {
                          BundleConfig cfg;
                          const ModelBundle b = ModelBundle::create(cfg);
                          const Tensor& w = b.tryonnet.conv_in.weight.value();
                          const std::int64_t per = w.dim(2) * w.dim(3);
                          for (std::int64_t o = 0; o < w.dim(0); ++o)
                              for (std::int64_t i = 4 * per; i < w.dim(1) * per; ++i)
                                  if (w[o * w.dim(1) * per + i] != 0.0) return std::string("non-zero expanded slice");
                          return std::string{};
                      }});
    checks.push_back({"metric_fixed_points", [] {
                          Rng rng(3);
                          const Tensor x = Tensor::uniform({3, 32, 24}, rng, 0.0, 1.0);
                          const auto fx = default_feature_extractor();
                          std::ostringstream err;
                          if (std::abs(ssim(x, x) - 1.0) > 1e-6) err << "ssim ";
                          if (std::abs(lpips(x, x, *fx)) > 1e-7) err << "lpips ";
                          if (std::abs(clip_i(x, x, *fx) - 1.0) > 1e-6) err << "clip_i ";
                          return err.str();
                      }});
    checks.push_back({"codec_round_trip", [] {
                          Tensor img({3, 16, 12});
                          for (std::int64_t c = 0; c < 3; ++c)
                              for (std::int64_t y = 0; y < 16; ++y)
                                  for (std::int64_t x = 0; x < 12; ++x)
                                      img.at(c, y, x) = static_cast<double>((c + y / 4 + x / 4) % 5) / 4.0;
                          const LatentCodec codec(4);
                          return expect(codec.decode(codec.encode(img)) == img, "block-constant image changed");
                      }});
    return checks;
}

int run_selfcheck() {
    int failed = 0;
    for (const Check& c : selfchecks()) {
        std::string detail;
        try {
            detail = c.run();
        } catch (const std::exception& e) {
            detail = e.what();
        }
        if (detail.empty()) {
            std::cout << "PASS " << c.name << "\n";
        } else {
            ++failed;
            std::cout << "FAIL " << c.name << ": " << detail << "\n";
        }
    }
    return failed == 0 ? kExitOk : kExitValidation;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"vtonlab: desk-scale diffusion virtual try-on"};
    app.require_subcommand(0, 1);
    bool config_reference = false;
    app.add_flag("--config-reference", config_reference, "Print every config key with its default and exit");

    // gen-data
    Common gen;
    int gen_n = 16;
    int gen_first = 0;
    auto* gen_cmd = app.add_subcommand("gen-data", "Generate a synthetic dataset");
    gen_cmd->add_option("--out", gen.out, "Output directory")->required();
    gen_cmd->add_option("--n", gen_n, "Number of samples")->check(CLI::PositiveNumber);
    gen_cmd->add_option("--first-index", gen_first, "Index of the first sample")->check(CLI::NonNegativeNumber);
    gen_cmd->add_option("--seed", gen.seed, "Random seed");
    gen_cmd->add_option("--config", gen.config, "Run config (resolution, codec_factor)");

    // validate
    std::string validate_target;
    auto* validate_cmd = app.add_subcommand("validate", "Check a dataset manifest and its files");
    validate_cmd->add_option("--manifest", validate_target, "Manifest file or dataset directory")->required();

    // train
    Common train;
    std::string train_manifest, train_resume;
    std::int64_t train_every = 0;
    auto* train_cmd = app.add_subcommand("train", "Train TryonNet on a dataset");
    train_cmd->add_option("--config", train.config, "Run config");
    train_cmd->add_option("--manifest", train_manifest, "Dataset manifest")->required();
    train_cmd->add_option("--out", train.out, "Output directory")->required();
    train_cmd->add_option("--seed", train.seed, "Overrides train.seed");
    train_cmd->add_option("--resume", train_resume, "Checkpoint to resume from");
    train_cmd->add_option("--checkpoint-every", train_every, "Steps between checkpoints (0 = final only)");

    // customize
    Common cust;
    std::string cust_manifest, cust_id, cust_checkpoint;
    bool cust_person_only = false;
    auto* cust_cmd = app.add_subcommand("customize", "Fine-tune a trained model on one pair");
    cust_cmd->add_option("--config", cust.config, "Run config");
    cust_cmd->add_option("--manifest", cust_manifest, "Dataset manifest")->required();
    cust_cmd->add_option("--id", cust_id, "Row id of the pair")->required();
    cust_cmd->add_option("--checkpoint", cust_checkpoint, "Base checkpoint")->required();
    cust_cmd->add_option("--out", cust.out, "Output directory")->required();
    cust_cmd->add_option("--seed", cust.seed, "Customization seed");
    cust_cmd->add_flag("--person-only", cust_person_only, "Extract the garment from the person image via its mask");

    // infer
    Common inf;
    std::string inf_manifest, inf_checkpoint, inf_delta;
    std::vector<std::string> inf_ids;
    auto* inf_cmd = app.add_subcommand("infer", "Run try-on over manifest rows");
    inf_cmd->add_option("--config", inf.config, "Run config");
    inf_cmd->add_option("--manifest", inf_manifest, "Dataset manifest")->required();
    inf_cmd->add_option("--id", inf_ids, "Row ids (default: all rows)");
    inf_cmd->add_option("--checkpoint", inf_checkpoint, "Checkpoint (default: fresh initialisation)");
    inf_cmd->add_option("--delta", inf_delta, "Delta checkpoint applied on top");
    inf_cmd->add_option("--seed", inf.seed, "Overrides infer.seed");
    inf_cmd->add_option("--out", inf.out, "Output directory")->default_val("out");

    // eval
    std::string eval_results, eval_refs, eval_out;
    std::uint64_t eval_seed = 0;
    auto* eval_cmd = app.add_subcommand("eval", "Compare result PNGs with references");
    eval_cmd->add_option("--results", eval_results, "Directory of generated PNGs")->required();
    eval_cmd->add_option("--references", eval_refs, "Directory of reference PNGs")->required();
    eval_cmd->add_option("--out", eval_out, "Directory for report.json and pairs.csv")->default_val("eval");
    eval_cmd->add_option("--seed", eval_seed, "Feature extractor seed");

    // grid
    std::string grid_manifest, grid_results, grid_out;
    std::vector<std::string> grid_ids;
    auto* grid_cmd = app.add_subcommand("grid", "Assemble a person | garment | output comparison grid");
    grid_cmd->add_option("--manifest", grid_manifest, "Dataset manifest")->required();
    grid_cmd->add_option("--results", grid_results, "Directory of <id>.png outputs")->required();
    grid_cmd->add_option("--out", grid_out, "Output PNG")->required();
    grid_cmd->add_option("--id", grid_ids, "Row ids (default: all rows with a result)");

    auto* check_cmd = app.add_subcommand("selfcheck", "Run the fast invariant checks");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    }

    try {
        if (config_reference) {
            std::cout << RunConfig::reference();
            return kExitOk;
        }
        if (*gen_cmd) {
            const RunConfig config = load_config(gen.config);
            SyntheticSpec spec;
            spec.n_samples = gen_n;
            spec.first_index = gen_first;
            spec.height = config.height;
            spec.width = config.width;
            spec.codec_factor = config.codec_factor;
            spec.seed = gen.seed.value_or(0);
            const fs::path manifest = generate(spec, gen.out);
            write_provenance(gen.out, "gen-data", config, "", spec.seed);
            std::cout << "wrote " << spec.n_samples << " samples to " << manifest.string() << "\n";
            return kExitOk;
        }
        if (*validate_cmd) {
            const ValidationReport report = validate_dataset(validate_target);
            std::cout << report.summary();
            return report.ok() ? kExitOk : kExitValidation;
        }
        if (*train_cmd) {
            RunConfig config = load_config(train.config);
            if (train.seed) config.train_seed = *train.seed;
            const DatasetManifest manifest = load_manifest(train_manifest);
            const std::vector<TrainingSample> samples = load_samples(manifest);
            ModelBundle bundle = ModelBundle::create(config.bundle_config());
            NoiseSchedule sched = config.schedule();
            FitOptions options;
            const fs::path out(train.out);
            fs::create_directories(out);
            options.loss_log = out / "loss.csv";
            options.checkpoint_dir = out / "checkpoints";
            options.checkpoint_every = train_every;
            if (!train_resume.empty()) {
                LoadedCheckpoint ckpt = load_checkpoint(train_resume);
                bundle = std::move(ckpt.bundle);
                sched = std::move(ckpt.schedule);
                options.resume = ckpt.state;
            }
            options.on_step = [&](std::int64_t step, double loss) {
                if ((step + 1) % 100 == 0) std::cout << "step " << step + 1 << " loss " << loss << std::endl;
            };
            const TrainingReport report = fit(samples, bundle, config.train_config(), sched, options);
            const fs::path final_path = out / "model.ckpt";
            save_checkpoint(final_path, bundle, sched, &report.state);
            write_provenance(out, "train", config, file_hash(final_path), config.train_seed);
            std::cout << "trained " << report.losses.size() << " steps in " << report.seconds << " s; wrote "
                      << final_path.string() << "\n";
            return kExitOk;
        }
        if (*cust_cmd) {
            const RunConfig config = load_config(cust.config);
            const DatasetManifest manifest = load_manifest(cust_manifest);
            TrainingSample pair = load_sample(manifest, manifest.find(cust_id));
            if (cust_person_only) pair.garment = extract_garment(pair.person, pair.mask);
            LoadedCheckpoint base = load_checkpoint(cust_checkpoint);
            CustomizationConfig cc = config.customization_config();
            if (cust.seed) cc.seed = *cust.seed;
            const CustomizationResult result = customize(base.bundle, pair, cc, base.schedule);
            const fs::path out(cust.out);
            fs::create_directories(out);
            const fs::path delta = out / (cust_id + ".delta");
            save_delta_checkpoint(delta, result.bundle, result.modified, result.base_hash, cc.strategy.name());
            write_provenance(out, "customize", config, file_hash(cust_checkpoint), cc.seed);
            std::cout << "customized " << result.modified.size() << " tensors; loss " << result.losses.front()
                      << " -> " << result.losses.back() << "; wrote " << delta.string() << "\n";
            return kExitOk;
        }
        if (*inf_cmd) {
            const RunConfig config = load_config(inf.config);
            const DatasetManifest manifest = load_manifest(inf_manifest);
            const LoadedModel model = load_model(config, inf_checkpoint, inf_delta);
            const fs::path out(inf.out);
            const std::uint64_t seed = inf.seed.value_or(config.infer_seed);
            for (const ManifestRow* row : select_rows(manifest, inf_ids)) {
                const TrainingSample s = load_sample(manifest, *row);
                TryonRequest request{s.person, s.garment, s.mask, s.pose, s.attrs};
                request.steps = config.infer_steps;
                request.guidance = config.infer_guidance;
                request.seed = seed;
                const TryonResult result = tryon(request, model.bundle, model.schedule);
                write_tryon_output(out / (row->id + ".png"), result, request, model.hash);
                std::cout << "wrote " << (out / (row->id + ".png")).string() << "\n";
            }
            write_provenance(out, "infer", config, model.hash, seed);
            return kExitOk;
        }
        if (*eval_cmd) {
            const auto fx = cached_extractor(eval_seed);
            const MetricsReport report = evaluate_dataset(eval_results, eval_refs, *fx);
            const fs::path out(eval_out);
            fs::create_directories(out);
            write_file_atomic(out / "report.json", report.to_json());
            write_file_atomic(out / "pairs.csv", report.pairs_csv());
            write_provenance(out, "eval", RunConfig{}, fx->hash(), eval_seed);
            std::cout << report.to_json();
            return kExitOk;
        }
        if (*grid_cmd) {
            const DatasetManifest manifest = load_manifest(grid_manifest);
            std::vector<Tensor> rows;
            for (const ManifestRow* row : select_rows(manifest, grid_ids)) {
                const fs::path result = fs::path(grid_results) / (row->id + ".png");
                if (grid_ids.empty() && !fs::exists(result)) continue;
                const Tensor cells[] = {read_png(manifest.resolve(row->person)), read_png(manifest.resolve(row->garment)),
                                        read_png(result)};
                rows.push_back(hstack_images(cells));
            }
            if (rows.empty()) throw InvalidArgument("no results to place in the grid");
            write_png(grid_out, vstack_images(rows));
            write_provenance(fs::path(grid_out).parent_path().empty() ? fs::path(".") : fs::path(grid_out).parent_path(),
                             "grid", RunConfig{}, "", 0);
            std::cout << "wrote " << grid_out << " (" << rows.size() << " rows)\n";
            return kExitOk;
        }
        if (*check_cmd) return run_selfcheck();
        std::cout << app.help();
        return kExitUsage;
    } catch (const SchemaError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitValidation;
    } catch (const ParseError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitValidation;
    } catch (const ConfigurationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitValidation;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
}
