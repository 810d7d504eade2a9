#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <nlohmann/json.hpp>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "deshadow/image.hpp"
#include "deshadow/losses.hpp"
#include "deshadow/metrics.hpp"
#include "deshadow/networks.hpp"
#include "deshadow/optimizer.hpp"

namespace deshadow {

enum class Stage { pretrain, finetune };
std::string to_string(Stage s);
Stage stage_from_string(const std::string& s);

struct TrainConfig {
    Stage stage = Stage::pretrain;
    std::int64_t iterations = 300;
    int batch_size = 8;
    double learning_rate = 5e-5;
    std::uint64_t seed = 0;
    /// 0 disables periodic checkpoints; the final checkpoint is always written.
    std::int64_t checkpoint_every = 0;
    std::int64_t log_every = 10;
    LossWeights loss_weights{};
    GanMode gan_mode = GanMode::standard;
    /// Coverage range of the free-form masks sampled during pretraining.
    double mask_coverage_min = 0.1;
    double mask_coverage_max = 0.4;
    /// Finetune only: train on round(fraction * n) randomly chosen triplets.
    double fraction = 1.0;
    int discriminator_channels = 64;
    ExtractorConfig extractor{};
    /// Optional pretrained extractor weights; empty means the seeded random stack.
    std::string extractor_weights;
    double beta1 = 0.9;
    double beta2 = 0.999;

    /// Throws std::invalid_argument on out-of-range fields.
    void validate() const;
};

nlohmann::json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const nlohmann::json& j);

struct LossRecord {
    std::int64_t iter = 0;  // last iteration of the logging interval (1-based)
    double total = 0.0;
    double l1 = 0.0;
    double gan = 0.0;
    double perceptual = 0.0;
    double style = 0.0;
    friend bool operator==(const LossRecord&, const LossRecord&) = default;
};

/// Partial sums of the current logging interval.
struct LossAccumulator {
    LossRecord sum{};
    std::int64_t count = 0;
};

struct RunManifest {
    Stage stage = Stage::pretrain;
    nlohmann::json config;
    nlohmann::json model;
    std::vector<std::string> checkpoints;  // periodic checkpoints, in order
    std::string final_checkpoint;
    std::vector<LossRecord> loss_curve;
    std::int64_t iterations_completed = 0;
    std::string resumed_from;
    std::vector<std::size_t> subset_indices;  // finetune only
    bool aborted = false;
    std::string abort_reason;
    /// Excluded from reproducibility comparisons.
    std::string started_at;
    double elapsed_seconds = 0.0;

    /// Everything except the wall-clock fields.
    [[nodiscard]] nlohmann::json reproducible_json() const;
    [[nodiscard]] nlohmann::json to_json() const;
};

std::string loss_curve_csv(const std::vector<LossRecord>& curve);

/// Raised when a loss or gradient becomes non-finite; the manifest is already on disk.
class NumericalAbort : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Everything needed to continue a run bit-identically.
struct Checkpoint {
    Stage stage = Stage::pretrain;
    std::int64_t iteration = 0;
    TrainConfig config{};
    Model model;
    std::optional<Sequential> discriminator;
    Adam generator_optimizer;
    std::optional<Adam> discriminator_optimizer;
    LossAccumulator pending{};
    std::vector<LossRecord> loss_curve;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);
/// Only the generator; accepts any checkpoint written by save_checkpoint.
Model load_model(const std::filesystem::path& path);

/// Copies of every named parameter value.
std::map<std::string, Tensor> state_dict(const Model& model);
std::map<std::string, Tensor> state_dict(const Sequential& net, const std::string& prefix);
/// Throws std::invalid_argument if a name is missing or a shape differs.
void load_state_dict(Model& model, const std::map<std::string, Tensor>& state);

/// Single-writer training loop shared by both stages.
class Trainer {
public:
    /// Fresh run: the model is taken as initialized by the caller. A fine-tuning run may carry a
    /// pretrained discriminator, which is stored in its checkpoints but never updated.
    Trainer(Model model, TrainConfig config, std::optional<Sequential> discriminator = std::nullopt);
    /// Continues from a checkpoint of the same stage up to `config.iterations` total iterations.
    static Trainer resume(Checkpoint checkpoint, TrainConfig config,
                          const std::filesystem::path& checkpoint_path);

    RunManifest pretrain(const std::vector<ImageTensor>& clean, const std::filesystem::path& out_dir);
    RunManifest finetune(const std::vector<ShadowTriplet>& dataset,
                         const std::filesystem::path& out_dir);

    [[nodiscard]] const Model& model() const { return model_; }
    [[nodiscard]] const std::optional<Sequential>& discriminator() const { return discriminator_; }
    [[nodiscard]] std::int64_t iteration() const { return iteration_; }

private:
    struct StepLosses {
        double total = 0.0;
        LossComponents parts{};
    };

    StepLosses pretrain_step(const std::vector<ImageTensor>& clean);
    StepLosses finetune_step(const std::vector<ShadowTriplet>& data,
                             const std::vector<std::size_t>& pool);
    template <typename Step>
    RunManifest run(Stage stage, const std::filesystem::path& out_dir, Step step,
                    std::vector<std::size_t> subset);
    [[nodiscard]] Checkpoint snapshot() const;

    Model model_;
    TrainConfig config_;
    FeatureExtractor extractor_;
    std::optional<Sequential> discriminator_;
    Adam opt_g_;
    std::optional<Adam> opt_d_;
    std::int64_t iteration_ = 0;
    LossAccumulator pending_{};
    std::vector<LossRecord> curve_;
    std::string resumed_from_;
};

/// Convenience wrappers. `out_dir` receives manifest.json, loss.csv and the checkpoints.
RunManifest pretrain(Model model, const std::vector<ImageTensor>& clean, const TrainConfig& config,
                     const std::filesystem::path& out_dir);
RunManifest finetune(Model model, const std::vector<ShadowTriplet>& dataset,
                     const TrainConfig& config, const std::filesystem::path& out_dir,
                     std::optional<Sequential> discriminator = std::nullopt);
/// Fine-tunes the generator of any checkpoint, keeping its discriminator (if any) alongside.
RunManifest finetune_from_checkpoint(const std::filesystem::path& init_path,
                                     const std::vector<ShadowTriplet>& dataset,
                                     const TrainConfig& config,
                                     const std::filesystem::path& out_dir);
/// Loads `checkpoint_path`, trains up to `config.iterations` and writes into `out_dir`.
RunManifest resume_pretrain(const std::filesystem::path& checkpoint_path,
                            const std::vector<ImageTensor>& clean, const TrainConfig& config,
                            const std::filesystem::path& out_dir);
RunManifest resume_finetune(const std::filesystem::path& checkpoint_path,
                            const std::vector<ShadowTriplet>& dataset, const TrainConfig& config,
                            const std::filesystem::path& out_dir);

/// Model forward pass on a triplet's shadow image and mask.
Predictor model_predictor(const Model& model);
/// Mean PSNR of the model's inpainting of each sample against its clean image.
double inpainting_psnr(const Model& model, const std::vector<InpaintSample>& samples);

struct CadenceRow {
    std::int64_t iter = 0;
    double inpaint_psnr = 0.0;
    double rmse_shadow = 0.0;
    double rmse_nonshadow = 0.0;
};

struct CadenceStudyInputs {
    ModelConfig model{};
    std::vector<ImageTensor> inpaint_train;
    std::vector<InpaintSample> inpaint_val;
    std::vector<ShadowTriplet> shadow_train;
    std::vector<ShadowTriplet> shadow_val;
};

/// Pretrains with a checkpoint every `cadence` iterations, then fine-tunes a copy of each
/// checkpoint and evaluates it. Rows are sorted by pretrain iteration.
std::vector<CadenceRow> run_pretrain_cadence_study(const CadenceStudyInputs& inputs,
                                                   std::int64_t cadence,
                                                   const TrainConfig& pretrain_config,
                                                   const TrainConfig& finetune_config,
                                                   const std::filesystem::path& out_dir);
std::string cadence_csv(const std::vector<CadenceRow>& rows);

}  // namespace deshadow
