#include "deshadow/cli.hpp"

#include <spdlog/spdlog.h>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <fstream>
#include <iostream>

#include "deshadow/archive.hpp"
#include "deshadow/data.hpp"
#include "deshadow/rng.hpp"

namespace deshadow {
namespace {

namespace fs = std::filesystem;

// Distinct synthetic splits drawn from one master seed.
enum : std::uint64_t { kSplitTrain = 1, kSplitTest = 2, kSplitInpaint = 3, kSplitInpaintVal = 4 };

void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << text;
}

void write_report(const fs::path& dir, const EvalReport& report) {
    write_text(dir / "eval.json", report_to_json(report) + "\n");
    write_text(dir / "eval.csv", report_to_csv(report));
}

EvalReport evaluate_model(const Model& model, const std::vector<ShadowTriplet>& data,
                          const ExperimentConfig& config) {
    return evaluate_dataset(model_predictor(model), data, config.eval.mask_source, nullptr,
                            config.eval.rmse);
}

// Pretrain (when requested) then finetune from `init`; returns the fine-tuned model.
Model train_pipeline(Model init, const ExperimentConfig& config, const fs::path& dir,
                     bool with_pretrain) {
    if (with_pretrain) {
        pretrain(std::move(init), inpaint_train_set(config), config.pretrain, dir / "pretrain");
        finetune_from_checkpoint(dir / "pretrain" / "final.bin", shadow_train_set(config),
                                 config.finetune, dir / "finetune");
    } else {
        finetune(std::move(init), shadow_train_set(config), config.finetune, dir / "finetune");
    }
    return load_model(dir / "finetune" / "final.bin");
}

}  // namespace

ExperimentConfig resolve_config(const std::string& path, const GlobalOverrides& o) {
    ExperimentConfig c;
    if (path.empty()) {
        std::istringstream empty;
        c = parse_experiment_config(empty);
    } else {
        if (!fs::exists(path)) throw ConfigError("config file not found: " + path);
        c = load_experiment_config(path);
    }
    if (o.seed) {
        c.seed = *o.seed;
        c.pretrain.seed = *o.seed;
        c.finetune.seed = *o.seed;
    }
    if (o.out) c.output_dir = *o.out;
    if (o.fraction) c.finetune.fraction = *o.fraction;
    c.validate();
    return c;
}

std::vector<ShadowTriplet> shadow_train_set(const ExperimentConfig& c) {
    if (!c.data.shadow_root.empty()) {
        return load_triplet_dataset(c.data.shadow_root, c.data.train_split, c.data.image_size,
                                    c.data.workers);
    }
    return generate_synthetic_shadow(derive_seed(c.seed, Stream::synth, {kSplitTrain}),
                                     c.data.synthetic_train, c.data.image_size);
}

std::vector<ShadowTriplet> shadow_test_set(const ExperimentConfig& c) {
    if (!c.data.shadow_root.empty()) {
        return load_triplet_dataset(c.data.shadow_root, c.data.test_split, c.data.image_size,
                                    c.data.workers);
    }
    return generate_synthetic_shadow(derive_seed(c.seed, Stream::synth, {kSplitTest}),
                                     c.data.synthetic_test, c.data.image_size);
}

std::vector<ImageTensor> inpaint_train_set(const ExperimentConfig& c) {
    if (!c.data.inpaint_root.empty()) return load_image_folder(c.data.inpaint_root, c.data.image_size);
    return generate_synthetic_clean(derive_seed(c.seed, Stream::synth, {kSplitInpaint}),
                                    c.data.synthetic_inpaint, c.data.image_size);
}

std::vector<InpaintSample> inpaint_val_set(const ExperimentConfig& c) {
    const auto clean = generate_synthetic_clean(derive_seed(c.seed, Stream::synth, {kSplitInpaintVal}),
                                                c.data.inpaint_val, c.data.image_size);
    std::vector<InpaintSample> out;
    for (std::size_t i = 0; i < clean.size(); ++i) {
        const BinaryMask m = sample_irregular_mask(
            derive_seed(c.seed, Stream::masks, {kSplitInpaintVal, i}), c.data.image_size,
            c.data.image_size, c.pretrain.mask_coverage_min, c.pretrain.mask_coverage_max);
        out.push_back(make_inpaint_sample(clean[i], m));
    }
    return out;
}

Model build_model(const ModelConfig& model, std::uint64_t seed) {
    const std::uint64_t init_seed = derive_seed(seed, Stream::init);
    if (model.variant == Variant::full) {
        Model m(ModelConfig{model.kind, Variant::full, model.arch});
        m.init(init_seed);
        return m;
    }
    const Model base = build_fusion_network(model.arch, init_seed);
    return make_ablation_variant(base, model.variant, derive_seed(init_seed, Stream::init, {1}));
}

void cmd_synth(int count, std::uint64_t seed, const fs::path& out_dir, int size,
               const std::string& split, SynthKind kind) {
    if (count < 1) throw UsageError("synth: --count must be at least 1");
    if (size < 4 || size % 4 != 0) throw UsageError("synth: --size must be a positive multiple of 4");
    if (kind == SynthKind::shadow) {
        write_triplet_dataset(out_dir, split, generate_synthetic_shadow(seed, count, size));
        return;
    }
    const fs::path dir = split.empty() ? out_dir : out_dir / split;
    fs::create_directories(dir);
    const auto images = generate_synthetic_clean(seed, count, size);
    for (std::size_t i = 0; i < images.size(); ++i) {
        write_png_rgb(dir / fmt::format("clean_{:05d}.png", i), images[i]);
    }
}

RunManifest cmd_pretrain(const ExperimentConfig& config, const std::optional<fs::path>& resume) {
    const fs::path dir = fs::path(config.output_dir) / "pretrain";
    const auto data = inpaint_train_set(config);
    if (resume) return resume_pretrain(*resume, data, config.pretrain, dir);
    return pretrain(build_model(config.model, config.seed), data, config.pretrain, dir);
}

RunManifest cmd_finetune(const ExperimentConfig& config, const std::optional<fs::path>& init,
                         const std::optional<fs::path>& resume) {
    const fs::path dir = fs::path(config.output_dir) / "finetune";
    const auto data = shadow_train_set(config);
    RunManifest m;
    if (resume) {
        m = resume_finetune(*resume, data, config.finetune, dir);
    } else if (init) {
        m = finetune_from_checkpoint(*init, data, config.finetune, dir);
    } else {
        m = finetune(build_model(config.model, config.seed), data, config.finetune, dir);
    }
    write_report(dir, evaluate_model(load_model(dir / "final.bin"), shadow_test_set(config), config));
    return m;
}

std::vector<AblationResult> cmd_ablate(const ExperimentConfig& config,
                                       const std::vector<Variant>& variants,
                                       const std::optional<fs::path>& checkpoint) {
    if (variants.empty()) throw UsageError("ablate: no variants requested");
    const fs::path root = fs::path(config.output_dir) / "ablate";
    const auto test = shadow_test_set(config);
    ModelConfig full_config = config.model;
    full_config.kind = ModelKind::fusion;
    full_config.variant = Variant::full;
    const Model init = build_model(full_config, config.seed);

    std::optional<Model> trained_full;
    auto full_model = [&]() -> const Model& {
        if (!trained_full) {
            if (checkpoint) {
                trained_full = load_model(*checkpoint);
                if (trained_full->config().kind != ModelKind::fusion) {
                    throw UsageError("ablate: --checkpoint must hold a fusion network");
                }
            } else {
                trained_full = train_pipeline(init, config, root / "full", config.ablate_pretrain);
            }
        }
        return *trained_full;
    };

    std::vector<AblationResult> results;
    nlohmann::json summary = nlohmann::json::array();
    for (const Variant v : variants) {
        if (v == Variant::full) throw UsageError("ablate: 'full' is not an ablation variant");
        AblationResult r;
        r.variant = v;
        const fs::path dir = root / to_string(v);
        if (v == Variant::zero_shadow_branch || v == Variant::zero_inpaint_branch) {
            const Model m = make_ablation_variant(full_model(), v, config.seed);
            const auto before = state_dict(m);
            r.report = evaluate_model(m, test, config);
            r.parameters_unchanged = before == state_dict(m) && before == state_dict(full_model());
            if (!r.parameters_unchanged) {
                throw std::logic_error("ablate: " + to_string(v) + " modified parameters");
            }
        } else {
            const Model start =
                make_ablation_variant(init, v, derive_seed(config.seed, Stream::init, {1}));
            const Model tuned = train_pipeline(start, config, dir, config.ablate_pretrain);
            r.trained = true;
            r.parameters_unchanged = state_dict(tuned) == state_dict(start);
            r.report = evaluate_model(tuned, test, config);
        }
        write_report(dir, r.report);
        summary.push_back({{"variant", to_string(v)},
                           {"trained", r.trained},
                           {"parameters_unchanged", r.parameters_unchanged},
                           {"report", nlohmann::json::parse(report_to_json(r.report))}});
        spdlog::info("ablate {}: shadow rmse {:.4f}", to_string(v), r.report.shadow.rmse);
        results.push_back(std::move(r));
    }
    write_text(root / "ablation.csv", ablation_csv(results));
    write_text(root / "ablation.json", summary.dump(2) + "\n");
    return results;
}

std::string ablation_csv(const std::vector<AblationResult>& results) {
    std::string out = "variant,region,rmse,psnr,ssim\n";
    for (const AblationResult& r : results) {
        for (Region region : kRegions) {
            const RegionMetrics& m = r.report.region(region);
            out += fmt::format("{},{},{},{},{}\n", to_string(r.variant), to_string(region), m.rmse,
                               m.psnr, m.ssim);
        }
    }
    return out;
}

EvalReport cmd_eval(const ExperimentConfig& config, const EvalRequest& request) {
    if (request.checkpoint.has_value() == (request.fixture != Fixture::none)) {
        throw UsageError("eval: give exactly one of --checkpoint or --fixture");
    }
    std::vector<ShadowTriplet> data;
    if (request.dataset) {
        data = load_triplet_dataset(*request.dataset,
                                    request.split.empty() ? config.data.test_split : request.split,
                                    config.data.image_size, config.data.workers);
    } else {
        data = shadow_test_set(config);
    }
    if (data.empty()) throw UsageError("eval: dataset is empty");

    std::optional<Model> model;
    Predictor predictor;
    if (request.checkpoint) {
        model = load_model(*request.checkpoint);
        predictor = model_predictor(*model);
    } else if (request.fixture == Fixture::identity) {
        predictor = [](const ShadowTriplet& t) { return t.shadow; };
    } else {
        predictor = [](const ShadowTriplet& t) { return t.shadow_free; };
    }
    const EvalReport report =
        evaluate_dataset(predictor, data, config.eval.mask_source, nullptr, config.eval.rmse);
    write_report(fs::path(config.output_dir) / "eval", report);
    return report;
}

std::vector<CadenceRow> cmd_cadence_study(const ExperimentConfig& config) {
    CadenceStudyInputs in;
    in.model = config.model;
    in.inpaint_train = inpaint_train_set(config);
    in.inpaint_val = inpaint_val_set(config);
    in.shadow_train = shadow_train_set(config);
    in.shadow_val = shadow_test_set(config);
    return run_pretrain_cadence_study(in, config.cadence, config.pretrain, config.finetune,
                                      fs::path(config.output_dir) / "cadence");
}

std::vector<fs::path> cmd_visualize(const VisualizeRequest& req) {
    if (req.difference_maps && !req.ground_truth) {
        throw UsageError("visualize: difference maps need --gt (or pass --no-diff)");
    }
    const Model model = load_model(req.checkpoint);
    const ImageTensor image = read_png_rgb(req.image);
    const BinaryMask mask = read_png_mask(req.mask);
    if (!mask.same_size(image)) throw UsageError("visualize: image and mask sizes differ");
    if (image.height() % 4 != 0 || image.width() % 4 != 0) {
        throw UsageError("visualize: image sides must be multiples of 4");
    }
    const Model::Output out = model.forward(to_batch(image), to_batch(mask));
    const ImageTensor restored = image_from_batch(out.image, 0);

    fs::create_directories(req.out_dir);
    std::vector<fs::path> files;
    files.push_back(req.out_dir / "restored.png");
    write_png_rgb(files.back(), restored);
    if (!out.w1.empty()) {
        const auto [w1, w2] = weight_maps(out.w1, out.w2, image.height(), image.width());
        files.push_back(req.out_dir / "w1.png");
        write_png_gray(files.back(), w1);
        files.push_back(req.out_dir / "w2.png");
        write_png_gray(files.back(), w2);
    }
    if (req.difference_maps) {
        const ImageTensor gt = read_png_rgb(*req.ground_truth);
        if (!gt.same_size(image)) throw UsageError("visualize: ground truth size differs");
        const auto [da, db] = lab_difference_maps(restored, gt);
        files.push_back(req.out_dir / "lab_a_diff.png");
        write_png_gray(files.back(), da);
        files.push_back(req.out_dir / "lab_b_diff.png");
        write_png_gray(files.back(), db);
    }
    return files;
}

int run_cli(int argc, const char* const* argv) {
    CLI::App app{"Inpainting-pretrained adaptive fusion shadow removal: training and evaluation"};
    app.fallthrough();
    app.require_subcommand(0, 1);

    std::string config_path;
    std::uint64_t seed = 0;
    std::string out;
    double fraction = 1.0;
    bool print_schema = false;
    auto* o_seed = app.add_option("--seed", seed, "master seed (overrides the config)");
    auto* o_out = app.add_option("--out", out, "output directory (overrides the config)");
    auto* o_fraction =
        app.add_option("--fraction", fraction, "share of training triplets for fine-tuning");
    app.add_option("--config", config_path, "experiment config file");
    app.add_flag("--print-schema", print_schema, "print every config key with its default");
    std::string log_level = "info";
    app.add_option("--log-level", log_level, "trace|debug|info|warn|error|off");

    auto* synth = app.add_subcommand("synth", "write a synthetic dataset");
    int count = 0;
    int size = kCanonicalSize;
    std::string split = "train";
    std::string kind = "shadow";
    synth->add_option("--count", count, "number of samples")->required();
    synth->add_option("--size", size, "image side");
    synth->add_option("--split", split, "split subdirectory");
    synth->add_option("--kind", kind, "shadow | clean")->check(CLI::IsMember({"shadow", "clean"}));

    auto* pre = app.add_subcommand("pretrain", "inpainting pretraining");
    std::string resume;
    pre->add_option("--resume", resume, "continue from a pretraining checkpoint");

    auto* fin = app.add_subcommand("finetune", "shadow-removal fine-tuning");
    std::string init_checkpoint;
    fin->add_option("--checkpoint", init_checkpoint, "initialize from this checkpoint");
    fin->add_option("--resume", resume, "continue from a fine-tuning checkpoint");

    auto* abl = app.add_subcommand("ablate", "train and evaluate ablation variants");
    std::string variant = "all";
    std::string ablate_checkpoint;
    abl->add_option("--variant", variant, "variant name or 'all'");
    abl->add_option("--checkpoint", ablate_checkpoint, "trained full model for zero_* variants");

    auto* ev = app.add_subcommand("eval", "evaluate a checkpoint or fixture");
    std::string eval_checkpoint;
    std::string fixture;
    std::string dataset;
    std::string eval_split;
    std::string mask_source;
    ev->add_option("--checkpoint", eval_checkpoint, "model checkpoint");
    ev->add_option("--fixture", fixture, "identity | gt")->check(CLI::IsMember({"identity", "gt"}));
    ev->add_option("--dataset", dataset, "triplet dataset root");
    ev->add_option("--split", eval_split, "split subdirectory");
    ev->add_option("--mask-source", mask_source, "provided | otsu");

    auto* cad = app.add_subcommand("cadence-study", "pretraining checkpoint cadence study");

    auto* vis = app.add_subcommand("visualize", "restored image, weight maps, LAB differences");
    VisualizeRequest vreq;
    std::string vis_checkpoint;
    std::string vis_image;
    std::string vis_mask;
    std::string vis_gt;
    bool no_diff = false;
    vis->add_option("--checkpoint", vis_checkpoint, "model checkpoint")->required();
    vis->add_option("--image", vis_image, "shadow image PNG")->required();
    vis->add_option("--mask", vis_mask, "shadow mask PNG")->required();
    vis->add_option("--gt", vis_gt, "shadow-free ground truth PNG");
    vis->add_flag("--no-diff", no_diff, "skip the LAB difference maps");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitUsage;
    }
    spdlog::set_level(spdlog::level::from_str(log_level));

    if (print_schema) {
        print_config_schema(std::cout);
        return kExitOk;
    }
    if (app.get_subcommands().empty()) {
        std::cerr << app.help();
        return kExitUsage;
    }

    GlobalOverrides overrides;
    if (o_seed->count() > 0) overrides.seed = seed;
    if (o_out->count() > 0) overrides.out = out;
    if (o_fraction->count() > 0) overrides.fraction = fraction;

    auto need_config = [&]() {
        if (config_path.empty()) throw UsageError("this command needs --config");
        return resolve_config(config_path, overrides);
    };
    auto opt_path = [](const std::string& s) {
        return s.empty() ? std::optional<fs::path>() : std::optional<fs::path>(s);
    };

    try {
        if (synth->parsed()) {
            if (!overrides.out) throw UsageError("synth needs --out");
            cmd_synth(count, overrides.seed.value_or(0), *overrides.out, size, split,
                      kind == "clean" ? SynthKind::clean : SynthKind::shadow);
        } else if (pre->parsed()) {
            cmd_pretrain(need_config(), opt_path(resume));
        } else if (fin->parsed()) {
            if (!resume.empty() && !init_checkpoint.empty()) {
                throw UsageError("finetune: --checkpoint and --resume are exclusive");
            }
            cmd_finetune(need_config(), opt_path(init_checkpoint), opt_path(resume));
        } else if (abl->parsed()) {
            std::vector<Variant> variants;
            if (variant == "all") {
                variants = ablation_variants();
            } else {
                try {
                    variants = {variant_from_string(variant)};
                } catch (const std::invalid_argument& e) {
                    throw UsageError(std::string("ablate: ") + e.what());
                }
            }
            cmd_ablate(need_config(), variants, opt_path(ablate_checkpoint));
        } else if (ev->parsed()) {
            ExperimentConfig c = resolve_config(config_path, overrides);
            if (!mask_source.empty()) {
                try {
                    c.eval.mask_source = mask_source_from_string(mask_source);
                } catch (const std::invalid_argument& e) {
                    throw UsageError(e.what());
                }
            }
            EvalRequest req;
            req.checkpoint = opt_path(eval_checkpoint);
            req.fixture = fixture.empty()         ? Fixture::none
                          : fixture == "identity" ? Fixture::identity
                                                  : Fixture::ground_truth;
            req.dataset = opt_path(dataset);
            req.split = eval_split;
            const EvalReport r = cmd_eval(c, req);
            std::cout << report_to_csv(r);
        } else if (cad->parsed()) {
            std::cout << cadence_csv(cmd_cadence_study(need_config()));
        } else if (vis->parsed()) {
            vreq.checkpoint = vis_checkpoint;
            vreq.image = vis_image;
            vreq.mask = vis_mask;
            vreq.ground_truth = opt_path(vis_gt);
            vreq.out_dir = overrides.out.value_or(".");
            vreq.difference_maps = !no_diff;
            for (const fs::path& p : cmd_visualize(vreq)) std::cout << p.string() << "\n";
        }
    } catch (const NumericalAbort& e) {
        std::cerr << "numerical abort: " << e.what() << "\n";
        return kExitNumerical;
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const DatasetError& e) {
        std::cerr << "dataset error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const ArchiveError& e) {
        std::cerr << "checkpoint error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::invalid_argument& e) {
        std::cerr << "invalid input: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        std::cerr << "fatal: " << e.what() << "\n";
        return 1;
    }
    return kExitOk;
}

}  // namespace deshadow
