#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "deshadow/config.hpp"
#include "deshadow/metrics.hpp"
#include "deshadow/networks.hpp"
#include "deshadow/training.hpp"

namespace deshadow {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitNumerical = 3;

/// Bad command-line input; maps to exit code 2.
class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Values of the global flags; unset fields leave the config untouched.
struct GlobalOverrides {
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out;
    std::optional<double> fraction;
};

/// Loads the config (defaults when `path` is empty) and applies the overrides.
ExperimentConfig resolve_config(const std::string& path, const GlobalOverrides& overrides);

// Datasets described by a config: directory-backed when a root is set, synthetic otherwise.
std::vector<ShadowTriplet> shadow_train_set(const ExperimentConfig& config);
std::vector<ShadowTriplet> shadow_test_set(const ExperimentConfig& config);
std::vector<ImageTensor> inpaint_train_set(const ExperimentConfig& config);
std::vector<InpaintSample> inpaint_val_set(const ExperimentConfig& config);

/// Freshly initialized model per `config.model` (ablation variants are derived from the full
/// fusion network built from the same seed).
Model build_model(const ModelConfig& model, std::uint64_t seed);

enum class SynthKind { shadow, clean };

/// Writes `count` synthetic triplets (or clean images) under out_dir/<split>.
void cmd_synth(int count, std::uint64_t seed, const std::filesystem::path& out_dir, int size,
               const std::string& split, SynthKind kind = SynthKind::shadow);

RunManifest cmd_pretrain(const ExperimentConfig& config,
                         const std::optional<std::filesystem::path>& resume = std::nullopt);
/// `init` seeds the generator from a (pretraining) checkpoint; otherwise weights are random.
/// The fine-tuned model is evaluated on the held-out split (eval.json / eval.csv).
RunManifest cmd_finetune(const ExperimentConfig& config,
                         const std::optional<std::filesystem::path>& init = std::nullopt,
                         const std::optional<std::filesystem::path>& resume = std::nullopt);

struct AblationResult {
    Variant variant = Variant::full;
    bool trained = false;
    bool parameters_unchanged = true;
    EvalReport report;
};

/// Runs each variant: trainable ones are pretrained (optionally) and fine-tuned from the seeded
/// initialization; zero_* variants only zero a branch of the trained full model at inference.
/// Writes out/ablate/ablation.csv (`variant,region,rmse,psnr,ssim`) and ablation.json.
std::vector<AblationResult> cmd_ablate(const ExperimentConfig& config,
                                       const std::vector<Variant>& variants,
                                       const std::optional<std::filesystem::path>& checkpoint =
                                           std::nullopt);
std::string ablation_csv(const std::vector<AblationResult>& results);

enum class Fixture { none, identity, ground_truth };

struct EvalRequest {
    std::optional<std::filesystem::path> checkpoint;
    Fixture fixture = Fixture::none;
    std::optional<std::filesystem::path> dataset;  // triplet root; config data otherwise
    std::string split;                             // empty: config test split
};

/// Writes out/eval/eval.json and eval.csv.
EvalReport cmd_eval(const ExperimentConfig& config, const EvalRequest& request);

std::vector<CadenceRow> cmd_cadence_study(const ExperimentConfig& config);

struct VisualizeRequest {
    std::filesystem::path checkpoint;
    std::filesystem::path image;
    std::filesystem::path mask;
    std::optional<std::filesystem::path> ground_truth;
    std::filesystem::path out_dir;
    bool difference_maps = true;
};

/// Restored image, W1/W2 maps (fusion models) and LAB a*/b* difference maps. Returns the files.
std::vector<std::filesystem::path> cmd_visualize(const VisualizeRequest& request);

/// Full command-line entry point; returns the process exit code.
int run_cli(int argc, const char* const* argv);

}  // namespace deshadow
