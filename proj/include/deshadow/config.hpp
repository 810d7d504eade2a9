#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <stdexcept>
#include <string>

#include "deshadow/data.hpp"
#include "deshadow/metrics.hpp"
#include "deshadow/networks.hpp"
#include "deshadow/training.hpp"

namespace deshadow {

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct DataConfig {
    /// Triplet dataset root (<root>/<split>/{shadow,shadow_free,mask}). Empty: synthetic data.
    std::string shadow_root;
    std::string train_split = "train";
    std::string test_split = "test";
    /// Folder of clean PNGs for pretraining. Empty: synthetic textures.
    std::string inpaint_root;
    int image_size = kCanonicalSize;
    int synthetic_train = 32;
    int synthetic_test = 16;
    int synthetic_inpaint = 16;
    int inpaint_val = 8;
    int workers = 1;
};

struct EvalConfig {
    MaskSource mask_source = MaskSource::provided;
    RmseKind rmse = RmseKind::mean_absolute;
};

struct ExperimentConfig {
    std::uint64_t seed = 0;
    std::string output_dir = "runs/default";
    DataConfig data{};
    ModelConfig model{};
    TrainConfig pretrain{};
    TrainConfig finetune{};
    EvalConfig eval{};
    /// Pretrain checkpoint cadence for the cadence study.
    std::int64_t cadence = 100;
    /// Whether trainable ablation variants are pretrained before fine-tuning.
    bool ablate_pretrain = true;

    /// Throws ConfigError describing the first invalid field.
    void validate() const;
};

/// Parses a `[section]` / `key = value` file. Unknown keys, malformed values and missing files
/// raise ConfigError. Values may be bare or double-quoted; `#` starts a comment.
ExperimentConfig load_experiment_config(const std::filesystem::path& path);
ExperimentConfig parse_experiment_config(std::istream& in);

/// Every accepted key with its default and a one-line description.
void print_config_schema(std::ostream& out);

}  // namespace deshadow
