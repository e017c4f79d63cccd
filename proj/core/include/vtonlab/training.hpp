#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "vtonlab/checkpoint.hpp"
#include "vtonlab/conditioning.hpp"
#include "vtonlab/diffusion.hpp"
#include "vtonlab/model_bundle.hpp"
#include "vtonlab/optim.hpp"
#include "vtonlab/rng.hpp"

namespace vtonlab {

// One paired example. Images are (3, H, W), the mask (1, H, W) in {0, 1}.
struct TrainingSample {
    std::string id;
    Tensor person;
    Tensor garment;
    Tensor mask;
    Tensor pose;
    GarmentAttributes attrs;
};

struct ParamPartition {
    std::vector<std::string> trainable;
    std::vector<std::string> frozen;

    bool is_trainable(const std::string& name) const;
};

// trainable: TryonNet (including the decoupled image-prompt K/V projections)
// and the image-prompt projection. frozen: GarmentNet and both encoders.
ParamPartition partition_parameters(const ModelBundle& bundle);
void apply_partition(ModelBundle& bundle, const ParamPartition& partition);
// Marks exactly the named parameters trainable and freezes everything else.
void set_trainable_only(ModelBundle& bundle, const std::set<std::string>& names);

struct AugmentationConfig {
    double hflip_prob = 0.5;
    double affine_prob = 0.5;
    double affine_limit = 0.2;  // maximum shift (fraction of size) and scale deviation

    void validate() const;
    static AugmentationConfig none() { return {0.0, 0.0, 0.0}; }
};

// The TryonNet inputs that are augmented together, plus the garment image,
// which is carried through untouched.
struct AugmentableSample {
    Tensor person;
    Tensor pose;
    Tensor masked_person;
    Tensor mask;
    Tensor garment;
};

// One transform draw, applied identically (nearest-neighbour, zero fill) to
// person, pose, masked person and mask.
AugmentableSample augment_sample(const AugmentableSample& sample, const AugmentationConfig& config, Rng& rng);

struct ConditioningBundle {
    Tensor text;                // (N, L, D)
    Tensor image_prompt;        // (N, n_tokens, D)
    FeatureTapSet garment_taps;
    bool dropped = false;
};

// Null text, zero image-prompt tokens and zero taps, all at once.
ConditioningBundle null_conditioning(const ConditioningBundle& cond, const Tensor& null_text);
ConditioningBundle drop_conditions(const ConditioningBundle& cond, double p, Rng& rng, const Tensor& null_text);

// Frozen-encoder outputs of one sample, computed once per run.
struct PreparedSample {
    TrainingSample sample;
    Tensor text;             // (1, L, D) try-on prompt embedding
    Tensor image_embedding;  // (1, E) frozen garment-image embedding
    FeatureTapSet garment_taps;
};

PreparedSample prepare_sample(const ModelBundle& bundle, const TrainingSample& sample);
Tensor null_text_embedding(const ModelBundle& bundle);

// A preprocessed batch together with every random draw the step uses, so the
// loss can be recomputed exactly.
struct TrainingBatch {
    std::vector<std::string> ids;
    Tensor z0;               // (N, 4, h, w) clean person latent
    Tensor mask;             // (N, 1, h, w)
    Tensor z_masked;         // (N, 4, h, w)
    Tensor z_pose;           // (N, 4, h, w)
    Tensor text;             // (N, L, D), null rows where dropped
    Tensor image_embedding;  // (N, E)
    std::vector<bool> dropped;
    FeatureTapSet garment_taps;  // zero rows where dropped
    std::vector<int> timesteps;
    Tensor noise;  // (N, 4, h, w)

    std::int64_t size() const { return static_cast<std::int64_t>(ids.size()); }
};

TrainingBatch make_batch(const ModelBundle& bundle, std::span<const PreparedSample* const> samples,
                         const AugmentationConfig& augmentation, double cond_dropout, const NoiseSchedule& sched,
                         Rng& rng);
TrainingBatch permute_batch(const TrainingBatch& batch, std::span<const int> order);

// Mean squared epsilon error of TryonNet on the batch; optionally returns the
// prediction.
ag::Var batch_loss(const ModelBundle& bundle, const TrainingBatch& batch, const NoiseSchedule& sched,
                   Tensor* eps_pred = nullptr);

struct StepResult {
    double loss = 0.0;
    Tensor eps_pred;
};

// One optimiser update on the currently trainable parameters. Throws
// TrainingDivergence on a non-finite loss or gradient.
StepResult train_step(const TrainingBatch& batch, ModelBundle& bundle, Adam& optimizer, const NoiseSchedule& sched,
                      std::int64_t step_index = 0);

struct TrainConfig {
    double learning_rate = 1e-4;
    int batch_size = 8;
    int epochs = 0;            // used only when steps == 0
    std::int64_t steps = 2000;
    double cond_dropout_prob = 0.1;
    std::uint64_t seed = 0;
    AugmentationConfig augmentation;

    void validate() const;
    std::int64_t total_steps(std::size_t dataset_size) const;
    static TrainConfig full_scale();  // lr 1e-5, batch 24, 130 epochs
};

struct FitOptions {
    std::filesystem::path loss_log;  // append-only CSV: step,loss,lr,seconds
    std::filesystem::path checkpoint_dir;
    std::int64_t checkpoint_every = 0;
    std::optional<TrainingState> resume;
    std::function<void(std::int64_t step, double loss)> on_step;
};

struct TrainingReport {
    std::vector<double> losses;  // one per executed step
    std::int64_t first_step = 0;
    std::int64_t end_step = 0;
    double seconds = 0.0;
    std::vector<std::filesystem::path> checkpoints;
    TrainingState state;
};

// Dataset indices for step k: an endless sequence of seeded epoch shuffles,
// cut into consecutive batches.
std::vector<std::size_t> batch_indices(std::size_t dataset_size, int batch_size, std::uint64_t seed,
                                       std::int64_t step);

TrainingReport fit(std::span<const TrainingSample> dataset, ModelBundle& bundle, const TrainConfig& config,
                   const NoiseSchedule& sched, const FitOptions& options = {});

}  // namespace vtonlab
