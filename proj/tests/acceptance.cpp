// Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any failure.

#include <chrono>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <string>
#include <vector>

#include <fmt/core.h>
#include <spdlog/spdlog.h>

#include "deshadow/cli.hpp"
#include "deshadow/color.hpp"
#include "deshadow/losses.hpp"
#include "deshadow/metrics.hpp"
#include "deshadow/networks.hpp"
#include "deshadow/rng.hpp"
#include "deshadow/training.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace deshadow;
namespace fs = std::filesystem;
using testing_support::dot;
using testing_support::gradient_error;
using testing_support::random_image;
using testing_support::random_mask;
using testing_support::random_tensor;
using testing_support::read_file;

namespace {

struct Outcome {
    bool pass = true;
    std::string detail;

    void require(bool ok, const std::string& what) {
        if (!ok && pass) {
            pass = false;
            detail = what;
        }
    }
};

const fs::path kWork = fs::temp_directory_path() / "deshadow_acceptance";

ExperimentConfig desk_config(std::uint64_t seed, const fs::path& out) {
    GlobalOverrides o;
    o.seed = seed;
    o.out = out.string();
    return resolve_config(DESHADOW_DESK_CONFIG, o);
}

double shadow_rmse(const Model& model, const std::vector<ShadowTriplet>& test,
                   const ExperimentConfig& c) {
    return evaluate_dataset(model_predictor(model), test, c.eval.mask_source).shadow.rmse;
}

double identity_shadow_rmse(const std::vector<ShadowTriplet>& test, const ExperimentConfig& c) {
    return evaluate_dataset([](const ShadowTriplet& t) { return t.shadow; }, test, c.eval.mask_source)
        .shadow.rmse;
}

/// Desk-scale pipeline for one seed: pretrain then finetune, and finetune from the same random
/// initialization. Cached because several criteria read the same runs.
struct DeskRun {
    fs::path dir;
    RunManifest pretrain;
    RunManifest finetune_pretrained;
    RunManifest finetune_random;
    double rmse_pretrained = 0.0;
    double rmse_random = 0.0;
    double rmse_identity = 0.0;
};

const DeskRun& desk_run(std::uint64_t seed) {
    static std::map<std::uint64_t, DeskRun> cache;
    if (auto it = cache.find(seed); it != cache.end()) return it->second;
    DeskRun r;
    r.dir = kWork / fmt::format("seed{}", seed);
    fs::remove_all(r.dir);
    const ExperimentConfig c = desk_config(seed, r.dir);
    const Model init = build_model(c.model, c.seed);
    r.pretrain = pretrain(init, inpaint_train_set(c), c.pretrain, r.dir / "pretrain");
    const auto train = shadow_train_set(c);
    r.finetune_pretrained =
        finetune_from_checkpoint(r.dir / "pretrain" / "final.bin", train, c.finetune, r.dir / "ft_pre");
    r.finetune_random = finetune(init, train, c.finetune, r.dir / "ft_rand");
    const auto test = shadow_test_set(c);
    r.rmse_pretrained = shadow_rmse(load_model(r.dir / "ft_pre" / "final.bin"), test, c);
    r.rmse_random = shadow_rmse(load_model(r.dir / "ft_rand" / "final.bin"), test, c);
    r.rmse_identity = identity_shadow_rmse(test, c);
    return cache.emplace(seed, std::move(r)).first->second;
}

// 1 ---------------------------------------------------------------------------------------------
Outcome gradient_fidelity() {
    Outcome o;
    double worst = 0.0;
    for (FusionCombine combine : {FusionCombine::concat, FusionCombine::sum}) {
        for (int trial = 0; trial < 3; ++trial) {
            FusionBlock block(make_fusion_block_spec(2, combine));
            std::mt19937_64 rng(100 + trial);
            block.init(rng);
            Tensor fm = random_tensor({1, 2, 4, 4}, rng);
            Tensor fs_ = random_tensor({1, 2, 4, 4}, rng);
            const auto t = block.forward(fm, fs_);
            const Tensor probe = random_tensor(t.out.shape(), rng);
            NamedParams params;
            block.collect("fusion", params);
            for (auto& [name, p] : params) p->grad.set_zero();
            Tensor dm, ds;
            block.backward(t, probe, dm, ds);
            auto loss = [&] { return dot(block.forward(fm, fs_).out, probe); };
            worst = std::max(worst, gradient_error(fm, dm, loss));
            worst = std::max(worst, gradient_error(fs_, ds, loss));
            for (auto& [name, p] : params) {
                const Tensor g = p->grad;
                worst = std::max(worst, gradient_error(p->value, g, loss));
            }
        }
    }
    for (int trial = 0; trial < 5; ++trial) {
        std::mt19937_64 rng(200 + trial);
        // |pred - target| >= 0.01 keeps the central difference off the kink of |x|.
        const Tensor target = random_tensor({2, 3, 4, 4}, rng, 0.0, 1.0);
        Tensor pred = target;
        std::uniform_real_distribution<double> offset(0.01, 0.3);
        std::bernoulli_distribution sign(0.5);
        for (std::size_t i = 0; i < pred.size(); ++i) pred[i] += sign(rng) ? offset(rng) : -offset(rng);
        Tensor mask({2, 1, 4, 4});
        std::bernoulli_distribution b(0.5);
        for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = b(rng) ? 1.0 : 0.0;
        mask[0] = 1.0;
        Tensor grad;
        masked_l1(pred, target, mask, &grad);
        worst = std::max(worst,
                         gradient_error(pred, grad, [&] { return masked_l1(pred, target, mask); }));
    }
    o.require(worst < 1e-3, fmt::format("max relative error {:.3g}", worst));
    if (o.pass) o.detail = fmt::format("max relative error {:.3g} (< 1e-3)", worst);
    return o;
}

// 2 ---------------------------------------------------------------------------------------------
Outcome architecture() {
    Outcome o;
    const ArchConfig full_size{};
    const auto ed = make_encoder_decoder_config(full_size);
    o.require(ed.encoder == std::vector<LayerSpec>{conv_spec(4, 64, 7, 1, 3), relu_spec(64),
                                                   conv_spec(64, 128, 4, 2, 1), relu_spec(128),
                                                   conv_spec(128, 256, 4, 2, 1), relu_spec(256)},
              "encoder table");
    o.require(ed.bottleneck.size() == 8, "eight residual blocks");
    for (const LayerSpec& s : ed.bottleneck) o.require(s == resnet_block_spec(256), "resnet block");
    o.require(ed.decoder == std::vector<LayerSpec>{conv_transpose_spec(256, 128, 4, 2, 1),
                                                   relu_spec(128),
                                                   conv_transpose_spec(128, 64, 4, 2, 1),
                                                   relu_spec(64), conv_spec(64, 3, 7, 1, 3)},
              "decoder table");
    const FusionBlockSpec fb = make_fusion_block_spec(256, FusionCombine::concat);
    o.require(fb.weight_conv == conv_spec(512, 512, 3, 1, 1), "Conv_weight(512,512)");
    o.require(fb.fusion_conv.in_channels == 512 && fb.fusion_conv.out_channels == 256,
              "Conv_fusion(512,256)");
    o.require(fb.use_sigmoid && fb.use_weights, "sigmoid weighting enabled");

    const FusionNetConfig net = make_fusion_net_config(full_size);
    o.require(net.encoder_masked == ed.encoder && net.encoder_shadow == ed.encoder,
              "both encoders follow the table");
    const Sequential enc(net.encoder_masked);
    Shape s{1, 4, 256, 256};
    const std::vector<Shape> chain = {{1, 64, 256, 256}, {1, 64, 256, 256}, {1, 128, 128, 128},
                                      {1, 128, 128, 128}, {1, 256, 64, 64}, {1, 256, 64, 64}};
    for (std::size_t i = 0; i < net.encoder_masked.size(); ++i) {
        s = output_shape(net.encoder_masked[i], s);
        o.require(s == chain[i], fmt::format("encoder layer {} shape", i));
    }
    o.require(enc.output_shape({1, 4, 256, 256}) == Shape{1, 256, 64, 64}, "encoder output");
    Shape f = output_shape(fb.weight_conv, {1, 512, 64, 64});
    o.require(f == Shape{1, 512, 64, 64}, "weight conv output");
    f = output_shape(fb.fusion_conv, {1, 512, 64, 64});
    o.require(f == Shape{1, 256, 64, 64}, "fusion conv output");
    Shape d = f;
    for (const LayerSpec& l : net.bottleneck) d = output_shape(l, d);
    for (const LayerSpec& l : net.decoder) d = output_shape(l, d);
    o.require(d == Shape{1, 3, 256, 256}, "decoder output");

    // Real forward passes on a narrow instance of the same topology.
    const Model m = build_fusion_network(ArchConfig{4, 1, FusionCombine::concat}, 1);
    std::mt19937_64 rng(1);
    const Model::Output out =
        m.forward(to_batch(random_image(32, 32, rng)), to_batch(random_mask(32, 32, rng)));
    o.require(out.image.shape() == Shape{1, 3, 32, 32}, "model output shape");
    o.require(out.w1.shape() == Shape{1, 16, 8, 8} && out.w2.shape() == Shape{1, 16, 8, 8},
              "W1/W2 shapes");
    const Sequential disc = build_discriminator(4, 2);
    o.require(disc.output_shape({1, 3, 256, 256}).c == 1, "discriminator head");
    if (o.pass) o.detail = "encoder, fusion, decoder and discriminator shapes conform";
    return o;
}

// 3 ---------------------------------------------------------------------------------------------
Outcome metric_oracles() {
    Outcome o;
    double worst = 0.0;
    double worst_roundtrip = 0.0;
    std::mt19937_64 rng(300);
    constexpr int kTrials = 25;
    for (int t = 0; t < kTrials; ++t) {
        const ImageTensor a = random_image(6, 7, rng);
        const ImageTensor b = random_image(6, 7, rng);
        const BinaryMask m = random_mask(6, 7, rng);
        for (int r = 0; r < 3; ++r) {
            worst = std::max(worst, std::abs(region_rmse(a, b, m, kRegions[r]) -
                                             oracle::region_lab_error(a, b, m, r)));
        }
        worst = std::max(worst, std::abs(psnr(a, b) - oracle::psnr(a, b)));

        const ImageTensor big_a = random_image(14, 13, rng);
        const ImageTensor big_b = random_image(14, 13, rng);
        worst = std::max(worst, std::abs(ssim(big_a, big_b) - oracle::ssim(big_a, big_b)));

        const Tensor feat = random_tensor({2, 3, 4, 5}, rng);
        for (int n = 0; n < 2; ++n) {
            worst = std::max(worst, (gram(feat, n) - oracle::gram(feat, n)).cwiseAbs().maxCoeff());
        }

        for (int i = 0; i < 10; ++i) {
            std::uniform_real_distribution<double> u(0.0, 1.0);
            const double r = u(rng), g = u(rng), bl = u(rng);
            const Lab lab = srgb_to_lab(r, g, bl);
            const auto ref = oracle::lab(r, g, bl);
            worst = std::max({worst, std::abs(lab.l - ref[0]), std::abs(lab.a - ref[1]),
                              std::abs(lab.b - ref[2])});
        }
        const ImageTensor back = lab_to_rgb(rgb_to_lab(a));
        for (std::size_t i = 0; i < a.values().size(); ++i) {
            worst_roundtrip = std::max(worst_roundtrip, std::abs(back.values()[i] - a.values()[i]));
        }

        // Otsu on a darkened random region of a random image.
        const ImageTensor free = random_image(10, 12, rng);
        ImageTensor shadow = free;
        const BinaryMask region = random_mask(10, 12, rng, 0.4);
        std::uniform_real_distribution<double> k(0.3, 0.7);
        const double factor = k(rng);
        std::vector<int> bins;
        for (int y = 0; y < 10; ++y) {
            for (int x = 0; x < 12; ++x) {
                if (region.at(y, x)) {
                    for (int c = 0; c < 3; ++c) shadow.at(c, y, x) *= factor;
                }
            }
        }
        for (int y = 0; y < 10; ++y) {
            for (int x = 0; x < 12; ++x) {
                bins.push_back(static_cast<int>(std::lround(
                    std::abs(oracle::luma(shadow, y, x) - oracle::luma(free, y, x)) * 255.0)));
            }
        }
        const int expected = oracle::otsu_bruteforce(bins);
        const OtsuResult got = otsu_shadow_mask(shadow, free);
        o.require(got.threshold == expected, fmt::format("otsu threshold trial {}", t));
        for (int y = 0; y < 10; ++y) {
            for (int x = 0; x < 12; ++x) {
                const bool want = expected >= 0 && bins[y * 12 + x] > expected;
                o.require(got.mask.at(y, x) == want, fmt::format("otsu mask trial {}", t));
            }
        }
    }
    o.require(worst <= 1e-6, fmt::format("oracle deviation {:.3g}", worst));
    o.require(worst_roundtrip <= 1e-4, fmt::format("LAB round trip {:.3g}", worst_roundtrip));
    if (o.pass) {
        o.detail = fmt::format("{} instances each; max deviation {:.3g}, LAB round trip {:.3g}",
                               kTrials, worst, worst_roundtrip);
    }
    return o;
}

// 4 ---------------------------------------------------------------------------------------------
Outcome loss_identities() {
    Outcome o;
    std::mt19937_64 rng(400);
    FeatureExtractor ex(ExtractorConfig{{8, 16, 16, 16, 16}, derive_seed(0, Stream::extractor)});
    for (int t = 0; t < 5; ++t) {
        const Tensor img = random_tensor({2, 3, 16, 16}, rng, 0.0, 1.0);
        Tensor mask({2, 1, 16, 16});
        for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = (rng() % 3 == 0) ? 1.0 : 0.0;
        o.require(masked_l1(img, img, mask) == 0.0, "masked_l1(x, x)");
        o.require(perceptual_loss(ex, img, img) == 0.0, "perceptual(x, x)");
        o.require(style_loss(ex, img, img, mask) == 0.0, "style(x, x)");
    }
    const double total = total_inpaint_loss(LossWeights{}, LossComponents{1.0, 1.0, 1.0, 1.0});
    o.require(total == 251.2, fmt::format("total = {:.17g}", total));
    if (o.pass) o.detail = "zero at pred == target; unit components give 251.2";
    return o;
}

// 5 ---------------------------------------------------------------------------------------------
Outcome training_signal() {
    Outcome o;
    const DeskRun& r = desk_run(0);
    const auto& curve = r.pretrain.loss_curve;
    o.require(curve.size() == 30, "pretrain loss curve has 30 points");
    if (!o.pass) return o;
    const double first = curve.front().l1;
    const double last = curve.back().l1;
    o.require(last < 0.5 * first,
              fmt::format("pretrain l1 {:.4f} -> {:.4f} ({:.1f}%)", first, last, 100 * last / first));
    o.require(r.rmse_pretrained < r.rmse_identity,
              fmt::format("finetune shadow RMSE {:.3f} vs identity {:.3f}", r.rmse_pretrained,
                          r.rmse_identity));
    if (o.pass) {
        o.detail = fmt::format("pretrain l1 {:.4f} -> {:.4f} ({:.1f}%); shadow RMSE {:.3f} < identity {:.3f}",
                               first, last, 100 * last / first, r.rmse_pretrained, r.rmse_identity);
    }
    return o;
}

// 6 ---------------------------------------------------------------------------------------------
Outcome pretraining_benefit() {
    Outcome o;
    double pre = 0.0;
    double rnd = 0.0;
    std::string pairs;
    for (std::uint64_t seed : {0, 1, 2}) {
        const DeskRun& r = desk_run(seed);
        pre += r.rmse_pretrained / 3.0;
        rnd += r.rmse_random / 3.0;
        pairs += fmt::format(" seed{} {:.3f}/{:.3f}", seed, r.rmse_pretrained, r.rmse_random);
    }
    o.require(pre <= rnd, fmt::format("mean pretrained {:.3f} > random {:.3f};{}", pre, rnd, pairs));
    if (o.pass) o.detail = fmt::format("mean pretrained {:.3f} <= random {:.3f};{}", pre, rnd, pairs);
    return o;
}

// 7 ---------------------------------------------------------------------------------------------
Outcome ablation_harness() {
    Outcome o;
    const fs::path dir = kWork / "ablate";
    fs::remove_all(dir);
    const ExperimentConfig c = desk_config(0, dir);
    const auto results = cmd_ablate(c, ablation_variants());
    o.require(results.size() == 7, fmt::format("{} variants ran", results.size()));
    for (const AblationResult& r : results) {
        const bool zero = r.variant == Variant::zero_shadow_branch ||
                          r.variant == Variant::zero_inpaint_branch;
        if (zero) {
            o.require(!r.trained && r.parameters_unchanged, to_string(r.variant) + " updated parameters");
        } else {
            o.require(r.trained && !r.parameters_unchanged, to_string(r.variant) + " was not trained");
        }
        o.require(std::isfinite(r.report.shadow.rmse), to_string(r.variant) + " RMSE not finite");
    }
    const std::string csv = read_file(dir / "ablate" / "ablation.csv");
    o.require(std::count(csv.begin(), csv.end(), '\n') == 1 + 7 * 3, "ablation.csv rows");
    if (o.pass) o.detail = "7 variants, ablation.csv written, zero_* weights untouched";
    return o;
}

// 8 ---------------------------------------------------------------------------------------------
Outcome determinism() {
    Outcome o;
    const DeskRun& a = desk_run(0);
    const fs::path dir = kWork / "repeat";
    fs::remove_all(dir);
    const ExperimentConfig c = desk_config(0, dir);
    const Model init = build_model(c.model, c.seed);
    const RunManifest pre = pretrain(init, inpaint_train_set(c), c.pretrain, dir / "pretrain");
    const RunManifest fin = finetune_from_checkpoint(dir / "pretrain" / "final.bin",
                                                     shadow_train_set(c), c.finetune, dir / "ft_pre");
    // Output directories differ, so compare everything except the paths.
    auto strip = [](nlohmann::json j) {
        j.erase("resumed_from");
        return j;
    };
    o.require(strip(pre.reproducible_json()) == strip(a.pretrain.reproducible_json()),
              "pretrain manifest differs");
    o.require(strip(fin.reproducible_json()) == strip(a.finetune_pretrained.reproducible_json()),
              "finetune manifest differs");
    std::size_t files = 0;
    for (const std::string sub : {"pretrain", "ft_pre"}) {
        for (const auto& entry : fs::directory_iterator(dir / sub)) {
            if (entry.path().extension() != ".bin" && entry.path().filename() != "loss.csv") continue;
            ++files;
            o.require(read_file(entry.path()) == read_file(a.dir / sub / entry.path().filename()),
                      entry.path().filename().string() + " differs");
        }
    }
    const auto test = shadow_test_set(c);
    const EvalReport r1 = evaluate_dataset(model_predictor(load_model(dir / "ft_pre" / "final.bin")),
                                           test, c.eval.mask_source);
    const EvalReport r2 = evaluate_dataset(
        model_predictor(load_model(a.dir / "ft_pre" / "final.bin")), test, c.eval.mask_source);
    o.require(report_to_json(r1) == report_to_json(r2), "evaluation report differs");
    if (o.pass) o.detail = fmt::format("{} checkpoint/log files and the report are bit-identical", files);
    return o;
}

// 9 ---------------------------------------------------------------------------------------------
Outcome resume() {
    Outcome o;
    const fs::path dir = kWork / "resume";
    fs::remove_all(dir);
    const ExperimentConfig c = desk_config(0, dir);
    const Model init = build_model(c.model, c.seed);
    const auto train = shadow_train_set(c);
    TrainConfig full = c.finetune;
    full.iterations = 200;
    TrainConfig half = full;
    half.iterations = 100;
    finetune(init, train, full, dir / "straight");
    finetune(init, train, half, dir / "first");
    resume_finetune(dir / "first" / "final.bin", train, full, dir / "second");
    const Checkpoint a = load_checkpoint(dir / "straight" / "final.bin");
    const Checkpoint b = load_checkpoint(dir / "second" / "final.bin");
    o.require(a.iteration == 200 && b.iteration == 200, "iteration counts");
    o.require(state_dict(a.model) == state_dict(b.model), "weights differ");
    o.require(a.loss_curve == b.loss_curve, "loss curves differ");
    if (o.pass) o.detail = "200 vs 100+100 iterations: identical weights and loss curve";
    return o;
}

}  // namespace

int main() {
    spdlog::set_level(spdlog::level::warn);
    fs::create_directories(kWork);
    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
        {"gradient fidelity", gradient_fidelity},
        {"architecture conformance", architecture},
        {"metric oracles", metric_oracles},
        {"loss identities", loss_identities},
        {"desk-scale training signal", training_signal},
        {"pretraining benefit", pretraining_benefit},
        {"ablation harness", ablation_harness},
        {"determinism", determinism},
        {"checkpoint resume", resume},
    };
    int failures = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        const auto t0 = std::chrono::steady_clock::now();
        Outcome out;
        try {
            out = criteria[i].second();
        } catch (const std::exception& e) {
            out.pass = false;
            out.detail = std::string("exception: ") + e.what();
        }
        const double secs =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        std::cout << fmt::format("{} criterion {} ({}): {} [{:.1f}s]\n", out.pass ? "PASS" : "FAIL",
                                 i + 1, criteria[i].first, out.detail, secs)
                  << std::flush;
        if (!out.pass) ++failures;
    }
    std::cout << fmt::format("{}/{} criteria passed\n", criteria.size() - failures, criteria.size());
    return failures == 0 ? 0 : 1;
}
