#include <gtest/gtest.h>

#include <nlohmann/json.hpp>
#include <sstream>

#include "deshadow/cli.hpp"
#include "deshadow/rng.hpp"
#include "support.hpp"

using namespace deshadow;
using testing_support::read_file;
using testing_support::scratch_dir;
using testing_support::tiny_config;
using testing_support::tiny_config_text;
using testing_support::write_file;

namespace fs = std::filesystem;

namespace {

int run(std::vector<std::string> args) {
    args.insert(args.begin(), "deshadow");
    args.emplace_back("--log-level");
    args.emplace_back("off");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    return run_cli(static_cast<int>(argv.size()), argv.data());
}

fs::path write_config(const fs::path& dir, const std::string& text) {
    const fs::path p = dir / "config.toml";
    write_file(p, text);
    return p;
}

}  // namespace

TEST(Config, ParsesEverySection) {
    const ExperimentConfig c = tiny_config("/tmp/x", 6);
    EXPECT_EQ(c.seed, 3u);
    EXPECT_EQ(c.output_dir, "/tmp/x");
    EXPECT_EQ(c.data.image_size, 16);
    EXPECT_EQ(c.model.arch.base_channels, 4);
    EXPECT_EQ(c.model.arch.res_blocks, 1);
    EXPECT_EQ(c.pretrain.iterations, 6);
    EXPECT_EQ(c.pretrain.extractor.channels, (std::array<int, 5>{4, 4, 4, 4, 4}));
    EXPECT_EQ(c.finetune.checkpoint_every, 2);
    EXPECT_EQ(c.cadence, 2);
    EXPECT_EQ(c.pretrain.stage, Stage::pretrain);
    EXPECT_EQ(c.finetune.stage, Stage::finetune);
}

TEST(Config, RejectsUnknownKeysAndBadValues) {
    std::istringstream unknown("[pretrain]\nlearnin_rate = 1e-3\n");
    EXPECT_THROW(parse_experiment_config(unknown), ConfigError);
    std::istringstream bad_number("[pretrain]\niterations = many\n");
    EXPECT_THROW(parse_experiment_config(bad_number), ConfigError);
    std::istringstream bad_section("[nonsense]\nx = 1\n");
    EXPECT_THROW(parse_experiment_config(bad_section), ConfigError);
    std::istringstream bad_size("[data]\nimage_size = 18\n");
    EXPECT_THROW(parse_experiment_config(bad_size), ConfigError);
    EXPECT_THROW(load_experiment_config("/nonexistent/config.toml"), ConfigError);
}

TEST(Config, CommentsAndQuotes) {
    std::istringstream in("# header\nseed = 12 # trailing\n[output]\ndir = \"a b\"\n");
    const ExperimentConfig c = parse_experiment_config(in);
    EXPECT_EQ(c.seed, 12u);
    EXPECT_EQ(c.output_dir, "a b");
}

TEST(Config, SchemaListsKeysWithDefaults) {
    std::ostringstream out;
    print_config_schema(out);
    const std::string s = out.str();
    for (const char* key : {"seed", "[pretrain]", "learning_rate", "[finetune]", "fraction", "[data]",
                            "image_size", "base_channels", "mask_source", "[cadence]", "every"}) {
        EXPECT_NE(s.find(key), std::string::npos) << key;
    }
    EXPECT_EQ(run({"--print-schema"}), kExitOk);
}

TEST(Config, OverridesApply) {
    const fs::path dir = scratch_dir("cli_overrides");
    const fs::path cfg = write_config(dir, tiny_config_text(dir / "out"));
    GlobalOverrides o;
    o.seed = 77;
    o.out = (dir / "other").string();
    o.fraction = 0.5;
    const ExperimentConfig c = resolve_config(cfg.string(), o);
    EXPECT_EQ(c.seed, 77u);
    EXPECT_EQ(c.pretrain.seed, 77u);
    EXPECT_EQ(c.finetune.seed, 77u);
    EXPECT_EQ(c.output_dir, (dir / "other").string());
    EXPECT_EQ(c.finetune.fraction, 0.5);
    o.fraction = 1.5;
    EXPECT_THROW(resolve_config(cfg.string(), o), ConfigError);
}

TEST(Cli, UsageErrorsExitTwo) {
    const fs::path dir = scratch_dir("cli_usage");
    EXPECT_EQ(run({}), kExitUsage);
    EXPECT_EQ(run({"--bogus"}), kExitUsage);
    EXPECT_EQ(run({"pretrain"}), kExitUsage);
    EXPECT_EQ(run({"--config", (dir / "missing.toml").string(), "pretrain"}), kExitUsage);
    EXPECT_EQ(run({"--out", dir.string(), "synth", "--count", "0"}), kExitUsage);
    EXPECT_EQ(run({"--out", dir.string(), "synth", "--count", "2", "--size", "10"}), kExitUsage);
    EXPECT_EQ(run({"synth", "--count", "2"}), kExitUsage);
    const fs::path cfg = write_config(dir, tiny_config_text(dir / "out"));
    EXPECT_EQ(run({"--config", cfg.string(), "ablate", "--variant", "bogus"}), kExitUsage);
    EXPECT_EQ(run({"--config", cfg.string(), "eval"}), kExitUsage);
    EXPECT_EQ(run({"--config", cfg.string(), "eval", "--fixture", "nope"}), kExitUsage);
    EXPECT_EQ(run({"--config", cfg.string(), "eval", "--checkpoint", (dir / "no.bin").string()}),
              kExitUsage);
    EXPECT_EQ(run({"--config", cfg.string(), "--fraction", "0", "finetune"}), kExitUsage);
}

TEST(Cli, SynthRoundTripsAndIsSeeded) {
    const fs::path a = scratch_dir("cli_synth_a");
    const fs::path b = scratch_dir("cli_synth_b");
    ASSERT_EQ(run({"--seed", "4", "--out", a.string(), "synth", "--count", "8", "--size", "16"}), 0);
    ASSERT_EQ(run({"--seed", "4", "--out", b.string(), "synth", "--count", "8", "--size", "16"}), 0);
    const auto data = load_triplet_dataset(a, "train", 16);
    ASSERT_EQ(data.size(), 8u);
    const auto direct = generate_synthetic_shadow(4, 8, 16);
    for (std::size_t i = 0; i < data.size(); ++i) {
        EXPECT_EQ(data[i].mask, direct[i].mask);
        for (std::size_t k = 0; k < data[i].shadow.values().size(); ++k) {
            ASSERT_NEAR(data[i].shadow.values()[k], direct[i].shadow.values()[k], 0.5 / 255.0 + 1e-12);
        }
    }
    for (const auto& entry : fs::recursive_directory_iterator(a)) {
        if (!entry.is_regular_file()) continue;
        const fs::path rel = fs::relative(entry.path(), a);
        EXPECT_EQ(read_file(entry.path()), read_file(b / rel)) << rel;
    }
    const fs::path c = scratch_dir("cli_synth_clean");
    ASSERT_EQ(run({"--out", c.string(), "synth", "--count", "3", "--size", "16", "--kind", "clean",
                   "--split", "inpaint"}),
              0);
    EXPECT_EQ(load_image_folder(c / "inpaint", 16).size(), 3u);
}

TEST(Cli, EvalFixtures) {
    const fs::path dir = scratch_dir("cli_eval");
    const fs::path cfg = write_config(dir, tiny_config_text(dir / "out"));
    ASSERT_EQ(run({"--out", (dir / "data").string(), "synth", "--count", "4", "--size", "16",
                   "--split", "test"}),
              0);
    ASSERT_EQ(run({"--config", cfg.string(), "eval", "--fixture", "identity", "--dataset",
                   (dir / "data").string()}),
              0);
    const auto identity = nlohmann::json::parse(read_file(dir / "out" / "eval" / "eval.json"));
    EXPECT_GT(identity.at("regions").at("shadow").at("rmse").get<double>(),
              identity.at("regions").at("non_shadow").at("rmse").get<double>());
    EXPECT_EQ(identity.at("regions").at("non_shadow").at("rmse").get<double>(), 0.0);

    ASSERT_EQ(run({"--config", cfg.string(), "eval", "--fixture", "gt", "--dataset",
                   (dir / "data").string(), "--mask-source", "otsu"}),
              0);
    const auto gt = nlohmann::json::parse(read_file(dir / "out" / "eval" / "eval.json"));
    for (const char* r : {"all", "shadow", "non_shadow"}) {
        EXPECT_EQ(gt.at("regions").at(r).at("rmse").get<double>(), 0.0) << r;
        EXPECT_EQ(gt.at("regions").at(r).at("ssim").get<double>(), 1.0) << r;
    }
    const std::string csv = read_file(dir / "out" / "eval" / "eval.csv");
    EXPECT_EQ(csv.substr(0, csv.find('\n')), "region,rmse,psnr,ssim");
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 4);
}

TEST(Cli, PretrainFinetuneEvalVisualize) {
    const fs::path dir = scratch_dir("cli_pipeline");
    const fs::path cfg = write_config(dir, tiny_config_text(dir / "out", 4));
    ASSERT_EQ(run({"--config", cfg.string(), "pretrain"}), 0);
    const auto manifest = nlohmann::json::parse(read_file(dir / "out" / "pretrain" / "manifest.json"));
    EXPECT_EQ(manifest.at("iterations_completed").get<int>(), 4);
    EXPECT_FALSE(manifest.at("aborted").get<bool>());
    ASSERT_TRUE(fs::exists(dir / "out" / "pretrain" / "loss.csv"));

    const fs::path pre = dir / "out" / "pretrain" / "final.bin";
    ASSERT_EQ(run({"--config", cfg.string(), "finetune", "--checkpoint", pre.string()}), 0);
    const fs::path fin = dir / "out" / "finetune" / "final.bin";
    ASSERT_TRUE(fs::exists(fin));
    EXPECT_TRUE(fs::exists(dir / "out" / "finetune" / "eval.json"));
    EXPECT_EQ(run({"--config", cfg.string(), "finetune", "--checkpoint", pre.string(), "--resume",
                   fin.string()}),
              kExitUsage);

    ASSERT_EQ(run({"--config", cfg.string(), "eval", "--checkpoint", fin.string()}), 0);
    EXPECT_TRUE(fs::exists(dir / "out" / "eval" / "eval.csv"));

    const ExperimentConfig c = tiny_config(dir / "out", 4);
    const auto test = shadow_test_set(c);
    write_triplet_dataset(dir / "vis_in", "", {test[0]});
    const fs::path img = dir / "vis_in" / "shadow" / (test[0].name + ".png");
    const fs::path mask = dir / "vis_in" / "mask" / (test[0].name + ".png");
    const fs::path gtp = dir / "vis_in" / "shadow_free" / (test[0].name + ".png");
    EXPECT_EQ(run({"--out", (dir / "vis").string(), "visualize", "--checkpoint", fin.string(),
                   "--image", img.string(), "--mask", mask.string()}),
              kExitUsage);
    ASSERT_EQ(run({"--out", (dir / "vis").string(), "visualize", "--checkpoint", fin.string(),
                   "--image", img.string(), "--mask", mask.string(), "--gt", gtp.string()}),
              0);
    for (const char* f : {"restored.png", "w1.png", "w2.png", "lab_a_diff.png", "lab_b_diff.png"}) {
        EXPECT_TRUE(fs::exists(dir / "vis" / f)) << f;
    }
    ASSERT_EQ(run({"--out", (dir / "vis2").string(), "visualize", "--checkpoint", fin.string(),
                   "--image", img.string(), "--mask", mask.string(), "--no-diff"}),
              0);
    EXPECT_FALSE(fs::exists(dir / "vis2" / "lab_a_diff.png"));
}

TEST(Cli, FractionFlagSelectsSeededSubset) {
    const fs::path dir = scratch_dir("cli_fraction");
    const fs::path cfg = write_config(dir, tiny_config_text(dir / "out", 2));
    ASSERT_EQ(run({"--config", cfg.string(), "--fraction", "0.5", "finetune"}), 0);
    const auto manifest = nlohmann::json::parse(read_file(dir / "out" / "finetune" / "manifest.json"));
    const auto got = manifest.at("subset_indices").get<std::vector<std::size_t>>();
    EXPECT_EQ(got, subset_indices(6, 0.5, derive_seed(3, Stream::subset)));
    EXPECT_EQ(got.size(), 3u);
}

TEST(Cli, DivergentTrainingExitsThree) {
    const fs::path dir = scratch_dir("cli_nan");
    std::string text = tiny_config_text(dir / "out", 6);
    const std::string from = "[finetune]\niterations = 6\nbatch_size = 2\nlearning_rate = 1e-3";
    const auto pos = text.find(from);
    ASSERT_NE(pos, std::string::npos);
    text.replace(pos, from.size(), "[finetune]\niterations = 6\nbatch_size = 2\nlearning_rate = 1e300");
    const fs::path cfg = write_config(dir, text);
    EXPECT_EQ(run({"--config", cfg.string(), "finetune"}), kExitNumerical);
    const auto manifest = nlohmann::json::parse(read_file(dir / "out" / "finetune" / "manifest.json"));
    EXPECT_TRUE(manifest.at("aborted").get<bool>());
    EXPECT_FALSE(manifest.at("abort_reason").get<std::string>().empty());
}

TEST(Cli, AblateSingleVariantWritesCsv) {
    const fs::path dir = scratch_dir("cli_ablate");
    const fs::path cfg = write_config(dir, tiny_config_text(dir / "out", 2));
    ASSERT_EQ(run({"--config", cfg.string(), "ablate", "--variant", "no_w1"}), 0);
    const std::string csv = read_file(dir / "out" / "ablate" / "ablation.csv");
    EXPECT_EQ(csv.substr(0, csv.find('\n')), "variant,region,rmse,psnr,ssim");
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 4);
    EXPECT_NE(csv.find("no_w1,shadow,"), std::string::npos);
}
