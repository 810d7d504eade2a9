#include "deshadow/training.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <fmt/format.h>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "deshadow/archive.hpp"
#include "deshadow/data.hpp"
#include "deshadow/rng.hpp"

namespace deshadow {
namespace {

namespace fs = std::filesystem;

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << text;
}

std::string utc_timestamp() {
    const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    std::ostringstream os;
    os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
    return os.str();
}

nlohmann::json loss_record_json(const LossRecord& r) {
    return {{"iter", r.iter},       {"loss_total", r.total}, {"loss_l1", r.l1},
            {"loss_gan", r.gan},    {"loss_perc", r.perceptual}, {"loss_style", r.style}};
}

LossRecord loss_record_from_json(const nlohmann::json& j) {
    return {j.at("iter").get<std::int64_t>(), j.at("loss_total").get<double>(),
            j.at("loss_l1").get<double>(),    j.at("loss_gan").get<double>(),
            j.at("loss_perc").get<double>(),  j.at("loss_style").get<double>()};
}

bool grads_finite(NamedParams& params) {
    return std::all_of(params.begin(), params.end(),
                       [](const auto& np) { return np.second->grad.all_finite(); });
}

NamedParams discriminator_params(Sequential& d) {
    NamedParams out;
    d.collect("discriminator", out);
    return out;
}

AdamConfig adam_config(const TrainConfig& c) {
    return AdamConfig{c.learning_rate, c.beta1, c.beta2, 1e-8};
}

template <typename T>
std::vector<const T*> pointers(const std::vector<T>& v) {
    std::vector<const T*> out;
    out.reserve(v.size());
    for (const T& x : v) out.push_back(&x);
    return out;
}

Tensor corrupt(const Tensor& clean, const Tensor& mask) {
    Tensor out = clean;
    const Shape& s = clean.shape();
    for (int n = 0; n < s.n; ++n) {
        for (int c = 0; c < s.c; ++c) {
            for (int y = 0; y < s.h; ++y) {
                for (int x = 0; x < s.w; ++x) out.at(n, c, y, x) *= 1.0 - mask.at(n, 0, y, x);
            }
        }
    }
    return out;
}

Tensor weighted_sum(const std::vector<std::pair<double, const Tensor*>>& terms, const Shape& shape) {
    Tensor out(shape);
    for (const auto& [w, t] : terms) {
        if (w == 0.0) continue;
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += w * (*t)[i];
    }
    return out;
}

}  // namespace

std::string to_string(Stage s) { return s == Stage::pretrain ? "pretrain" : "finetune"; }

Stage stage_from_string(const std::string& s) {
    if (s == "pretrain") return Stage::pretrain;
    if (s == "finetune") return Stage::finetune;
    throw std::invalid_argument("unknown stage '" + s + "'");
}

void TrainConfig::validate() const {
    auto fail = [](const std::string& m) { throw std::invalid_argument("train config: " + m); };
    if (iterations <= 0) fail("iterations must be > 0");
    if (batch_size < 1) fail("batch_size must be >= 1");
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) fail("learning_rate must be > 0");
    if (checkpoint_every < 0) fail("checkpoint_every must be >= 0");
    if (log_every < 1) fail("log_every must be >= 1");
    if (!(mask_coverage_min >= 0.0 && mask_coverage_min < mask_coverage_max &&
          mask_coverage_max <= 1.0)) {
        fail("mask coverage must satisfy 0 <= min < max <= 1");
    }
    if (!(fraction > 0.0 && fraction <= 1.0)) fail("fraction must lie in (0, 1]");
    if (discriminator_channels < 1) fail("discriminator_channels must be >= 1");
    if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) fail("betas must lie in [0, 1)");
    loss_weights.validate();
}

nlohmann::json to_json(const TrainConfig& c) {
    return {{"stage", to_string(c.stage)},
            {"iterations", c.iterations},
            {"batch_size", c.batch_size},
            {"learning_rate", c.learning_rate},
            {"seed", c.seed},
            {"checkpoint_every", c.checkpoint_every},
            {"log_every", c.log_every},
            {"loss_weights",
             {{"lambda1", c.loss_weights.lambda1},
              {"lambda2", c.loss_weights.lambda2},
              {"lambda3", c.loss_weights.lambda3},
              {"lambda4", c.loss_weights.lambda4}}},
            {"gan_mode", to_string(c.gan_mode)},
            {"mask_coverage_min", c.mask_coverage_min},
            {"mask_coverage_max", c.mask_coverage_max},
            {"fraction", c.fraction},
            {"discriminator_channels", c.discriminator_channels},
            {"extractor", {{"channels", c.extractor.channels}, {"seed", c.extractor.seed}}},
            {"extractor_weights", c.extractor_weights},
            {"beta1", c.beta1},
            {"beta2", c.beta2}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
    TrainConfig c;
    c.stage = stage_from_string(j.at("stage").get<std::string>());
    c.iterations = j.at("iterations").get<std::int64_t>();
    c.batch_size = j.at("batch_size").get<int>();
    c.learning_rate = j.at("learning_rate").get<double>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.checkpoint_every = j.at("checkpoint_every").get<std::int64_t>();
    c.log_every = j.at("log_every").get<std::int64_t>();
    const auto& lw = j.at("loss_weights");
    c.loss_weights = {lw.at("lambda1").get<double>(), lw.at("lambda2").get<double>(),
                      lw.at("lambda3").get<double>(), lw.at("lambda4").get<double>()};
    c.gan_mode = gan_mode_from_string(j.at("gan_mode").get<std::string>());
    c.mask_coverage_min = j.at("mask_coverage_min").get<double>();
    c.mask_coverage_max = j.at("mask_coverage_max").get<double>();
    c.fraction = j.at("fraction").get<double>();
    c.discriminator_channels = j.at("discriminator_channels").get<int>();
    c.extractor.channels = j.at("extractor").at("channels").get<std::array<int, 5>>();
    c.extractor.seed = j.at("extractor").at("seed").get<std::uint64_t>();
    c.extractor_weights = j.at("extractor_weights").get<std::string>();
    c.beta1 = j.at("beta1").get<double>();
    c.beta2 = j.at("beta2").get<double>();
    return c;
}

nlohmann::json to_json(const ModelConfig& c) {
    return {{"kind", to_string(c.kind)},
            {"variant", to_string(c.variant)},
            {"base_channels", c.arch.base_channels},
            {"res_blocks", c.arch.res_blocks},
            {"fusion_combine", to_string(c.arch.combine)}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.kind = model_kind_from_string(j.at("kind").get<std::string>());
    c.variant = variant_from_string(j.at("variant").get<std::string>());
    c.arch.base_channels = j.at("base_channels").get<int>();
    c.arch.res_blocks = j.at("res_blocks").get<int>();
    c.arch.combine = fusion_combine_from_string(j.at("fusion_combine").get<std::string>());
    return c;
}

nlohmann::json RunManifest::reproducible_json() const {
    nlohmann::json curve = nlohmann::json::array();
    for (const LossRecord& r : loss_curve) curve.push_back(loss_record_json(r));
    return {{"stage", to_string(stage)},
            {"config", config},
            {"model", model},
            {"checkpoints", checkpoints},
            {"final_checkpoint", final_checkpoint},
            {"loss_curve", curve},
            {"iterations_completed", iterations_completed},
            {"resumed_from", resumed_from},
            {"subset_indices", subset_indices},
            {"aborted", aborted},
            {"abort_reason", abort_reason}};
}

nlohmann::json RunManifest::to_json() const {
    nlohmann::json j = reproducible_json();
    j["wall_clock"] = {{"started_at", started_at}, {"elapsed_seconds", elapsed_seconds}};
    return j;
}

std::string loss_curve_csv(const std::vector<LossRecord>& curve) {
    std::string out = "iter,loss_total,loss_l1,loss_gan,loss_perc,loss_style\n";
    for (const LossRecord& r : curve) {
        out += fmt::format("{},{},{},{},{},{}\n", r.iter, r.total, r.l1, r.gan, r.perceptual,
                           r.style);
    }
    return out;
}

// --- state dicts and checkpoints ---------------------------------------------------------------

std::map<std::string, Tensor> state_dict(const Model& model) {
    Model copy = model;
    std::map<std::string, Tensor> out;
    for (auto& [name, p] : copy.params()) out.emplace(name, std::move(p->value));
    return out;
}

std::map<std::string, Tensor> state_dict(const Sequential& net, const std::string& prefix) {
    std::map<std::string, Tensor> out;
    const auto& layers = net.layers();
    for (std::size_t i = 0; i < layers.size(); ++i) {
        for (const Param& p : layers[i].params()) {
            out.emplace(prefix + "." + std::to_string(i) + "." + p.name, p.value);
        }
    }
    return out;
}

void load_state_dict(Model& model, const std::map<std::string, Tensor>& state) {
    for (auto& [name, p] : model.params()) {
        const auto it = state.find(name);
        if (it == state.end()) throw std::invalid_argument("state dict lacks parameter " + name);
        if (it->second.shape() != p->value.shape()) {
            throw std::invalid_argument("shape mismatch for " + name + ": " +
                                        to_string(it->second.shape()) + " vs " +
                                        to_string(p->value.shape()));
        }
        p->value = it->second;
    }
}

namespace {

void load_sequential(Sequential& net, const std::string& prefix,
                     const std::map<std::string, Tensor>& tensors) {
    NamedParams params;
    net.collect(prefix, params);
    for (auto& [name, p] : params) {
        const auto it = tensors.find(name);
        if (it == tensors.end() || it->second.shape() != p->value.shape()) {
            throw ArchiveError("checkpoint lacks a matching tensor for " + name);
        }
        p->value = it->second;
    }
}

std::map<std::string, Tensor> strip_prefix(const std::map<std::string, Tensor>& in,
                                           const std::string& prefix) {
    std::map<std::string, Tensor> out;
    for (const auto& [k, v] : in) {
        if (k.starts_with(prefix)) out.emplace(k.substr(prefix.size()), v);
    }
    return out;
}

}  // namespace

void save_checkpoint(const fs::path& path, const Checkpoint& ck) {
    Archive a;
    a.meta["kind"] = "checkpoint";
    a.meta["stage"] = to_string(ck.stage);
    a.meta["iteration"] = ck.iteration;
    a.meta["config"] = to_json(ck.config);
    a.meta["model"] = to_json(ck.model.config());
    a.meta["optimizer_g_steps"] = ck.generator_optimizer.steps();
    a.meta["has_discriminator"] = ck.discriminator.has_value();
    if (ck.discriminator) {
        a.meta["discriminator_channels"] = ck.discriminator->layers().front().spec().out_channels;
    }
    a.meta["optimizer_d_steps"] =
        ck.discriminator_optimizer ? ck.discriminator_optimizer->steps() : std::int64_t{-1};
    nlohmann::json pending = loss_record_json(ck.pending.sum);
    pending["count"] = ck.pending.count;
    a.meta["pending"] = pending;
    nlohmann::json curve = nlohmann::json::array();
    for (const LossRecord& r : ck.loss_curve) curve.push_back(loss_record_json(r));
    a.meta["loss_curve"] = curve;

    for (auto& [name, t] : state_dict(ck.model)) a.tensors.emplace("model." + name, std::move(t));
    if (ck.discriminator) {
        for (auto& [name, t] : state_dict(*ck.discriminator, "discriminator")) {
            a.tensors.emplace("disc." + name, std::move(t));
        }
    }
    ck.generator_optimizer.export_state("opt_g", a.tensors);
    if (ck.discriminator_optimizer) ck.discriminator_optimizer->export_state("opt_d", a.tensors);
    write_archive(path, a);
}

Checkpoint load_checkpoint(const fs::path& path) {
    const Archive a = read_archive(path);
    if (a.meta.value("kind", "") != "checkpoint") {
        throw ArchiveError(path.string() + " is not a training checkpoint");
    }
    Checkpoint ck;
    try {
        ck.stage = stage_from_string(a.meta.at("stage").get<std::string>());
        ck.iteration = a.meta.at("iteration").get<std::int64_t>();
        ck.config = train_config_from_json(a.meta.at("config"));
        ck.model = Model(model_config_from_json(a.meta.at("model")));
        const auto& p = a.meta.at("pending");
        ck.pending.sum = loss_record_from_json(p);
        ck.pending.count = p.at("count").get<std::int64_t>();
        for (const auto& r : a.meta.at("loss_curve")) ck.loss_curve.push_back(loss_record_from_json(r));
    } catch (const nlohmann::json::exception& e) {
        throw ArchiveError(path.string() + ": malformed checkpoint metadata: " + e.what());
    } catch (const std::invalid_argument& e) {
        throw ArchiveError(path.string() + ": " + e.what());
    }
    try {
        load_state_dict(ck.model, strip_prefix(a.tensors, "model."));
    } catch (const std::invalid_argument& e) {
        throw ArchiveError(path.string() + ": " + e.what());
    }
    ck.generator_optimizer = Adam(adam_config(ck.config));
    ck.generator_optimizer.import_state("opt_g", a.tensors,
                                        a.meta.at("optimizer_g_steps").get<std::int64_t>());
    if (a.meta.value("has_discriminator", false)) {
        Sequential d = build_discriminator(a.meta.at("discriminator_channels").get<int>(), 0);
        load_sequential(d, "discriminator", strip_prefix(a.tensors, "disc."));
        ck.discriminator = std::move(d);
    }
    const auto d_steps = a.meta.value("optimizer_d_steps", std::int64_t{-1});
    if (d_steps >= 0) {
        Adam opt(adam_config(ck.config));
        opt.import_state("opt_d", a.tensors, d_steps);
        ck.discriminator_optimizer = std::move(opt);
    }
    return ck;
}

Model load_model(const fs::path& path) { return load_checkpoint(path).model; }

// --- trainer -----------------------------------------------------------------------------------

Trainer::Trainer(Model model, TrainConfig config, std::optional<Sequential> discriminator)
    : model_(std::move(model)), config_(std::move(config)), discriminator_(std::move(discriminator)) {
    config_.validate();
    extractor_ = config_.extractor_weights.empty() ? FeatureExtractor(config_.extractor)
                                                   : FeatureExtractor::load(config_.extractor_weights);
    opt_g_ = Adam(adam_config(config_));
    if (config_.stage == Stage::pretrain) {
        if (discriminator_) throw std::invalid_argument("pretraining builds its own discriminator");
        discriminator_ = build_discriminator(config_.discriminator_channels,
                                             derive_seed(config_.seed, Stream::discriminator));
        opt_d_ = Adam(adam_config(config_));
    }
}

Trainer Trainer::resume(Checkpoint ck, TrainConfig config, const fs::path& checkpoint_path) {
    if (ck.stage != config.stage) {
        throw std::invalid_argument("cannot resume a " + to_string(ck.stage) + " checkpoint as " +
                                    to_string(config.stage));
    }
    if (ck.iteration > config.iterations) {
        throw std::invalid_argument("checkpoint is already past the requested iteration count");
    }
    Trainer t(std::move(ck.model), std::move(config));
    t.discriminator_ = std::move(ck.discriminator);
    if (t.config_.stage == Stage::pretrain && !t.discriminator_) {
        throw std::invalid_argument("pretrain checkpoint has no discriminator");
    }
    t.opt_g_ = std::move(ck.generator_optimizer);
    t.opt_g_.set_learning_rate(t.config_.learning_rate);
    if (ck.discriminator_optimizer) {
        t.opt_d_ = std::move(ck.discriminator_optimizer);
        t.opt_d_->set_learning_rate(t.config_.learning_rate);
    }
    t.iteration_ = ck.iteration;
    t.pending_ = ck.pending;
    t.curve_ = std::move(ck.loss_curve);
    t.resumed_from_ = checkpoint_path.string();
    return t;
}

Checkpoint Trainer::snapshot() const {
    Checkpoint ck;
    ck.stage = config_.stage;
    ck.iteration = iteration_;
    ck.config = config_;
    ck.model = model_;
    ck.discriminator = discriminator_;
    ck.generator_optimizer = opt_g_;
    ck.discriminator_optimizer = opt_d_;
    ck.pending = pending_;
    ck.loss_curve = curve_;
    return ck;
}

Trainer::StepLosses Trainer::pretrain_step(const std::vector<ImageTensor>& clean) {
    const int h = clean.front().height();
    const int w = clean.front().width();
    std::vector<const ImageTensor*> images;
    std::vector<BinaryMask> masks;
    for (int s = 0; s < config_.batch_size; ++s) {
        const auto slot = static_cast<std::uint64_t>(s);
        const auto it = static_cast<std::uint64_t>(iteration_);
        images.push_back(&clean[derive_seed(config_.seed, Stream::data_order, {it, slot}) % clean.size()]);
        masks.push_back(sample_irregular_mask(derive_seed(config_.seed, Stream::masks, {it, slot}), h,
                                              w, config_.mask_coverage_min,
                                              config_.mask_coverage_max));
    }
    const Tensor target = to_batch(images);
    const Tensor mask = to_batch(pointers(masks));
    const Tensor input = corrupt(target, mask);

    Model::Trace trace = model_.forward_trace(input, mask);
    const Tensor& pred = trace.image;
    Sequential& disc = *discriminator_;

    StepLosses out;
    Tensor g_l1;
    Tensor g_gan;
    Tensor g_perc;
    Tensor g_style;
    out.parts.l1 = masked_l1(pred, target, mask, &g_l1);
    const std::vector<Tensor> fake_trace = disc.forward_trace(pred);
    Tensor d_prob;
    out.parts.gan = gan_generator_loss(fake_trace.back(), config_.gan_mode, &d_prob);
    g_gan = disc.input_gradient(fake_trace, d_prob);
    out.parts.perceptual = perceptual_loss(extractor_, pred, target, &g_perc);
    out.parts.style = style_loss(extractor_, pred, target, mask, &g_style);
    try {
        out.total = total_inpaint_loss(config_.loss_weights, out.parts);
    } catch (const std::domain_error& e) {
        throw NumericalAbort(e.what());
    }

    const LossWeights& lw = config_.loss_weights;
    const Tensor d_pred = weighted_sum(
        {{lw.lambda1, &g_l1}, {lw.lambda2, &g_gan}, {lw.lambda3, &g_perc}, {lw.lambda4, &g_style}},
        pred.shape());
    model_.zero_grad();
    model_.backward(trace, d_pred);
    NamedParams gp = model_.params();
    if (!grads_finite(gp)) throw NumericalAbort("generator gradient is not finite");

    disc.zero_grad();
    const std::vector<Tensor> real_trace = disc.forward_trace(target);
    Tensor d_real;
    Tensor d_fake;
    const double d_loss = gan_discriminator_loss(real_trace.back(), fake_trace.back(),
                                                 config_.gan_mode, &d_real, &d_fake);
    if (!std::isfinite(d_loss)) throw NumericalAbort("discriminator loss is not finite");
    disc.backward(real_trace, d_real, false);
    disc.backward(fake_trace, d_fake, false);
    NamedParams dp = discriminator_params(disc);
    if (!grads_finite(dp)) throw NumericalAbort("discriminator gradient is not finite");

    opt_g_.step(gp);
    opt_d_->step(dp);
    return out;
}

Trainer::StepLosses Trainer::finetune_step(const std::vector<ShadowTriplet>& data,
                                           const std::vector<std::size_t>& pool) {
    std::vector<const ImageTensor*> shadow;
    std::vector<const ImageTensor*> target;
    std::vector<const BinaryMask*> masks;
    for (int s = 0; s < config_.batch_size; ++s) {
        const auto seed = derive_seed(config_.seed, Stream::data_order,
                                      {static_cast<std::uint64_t>(iteration_),
                                       static_cast<std::uint64_t>(s)});
        const ShadowTriplet& t = data[pool[seed % pool.size()]];
        shadow.push_back(&t.shadow);
        target.push_back(&t.shadow_free);
        masks.push_back(&t.mask);
    }
    const Tensor input = to_batch(shadow);
    const Tensor gt = to_batch(target);
    const Tensor mask = to_batch(masks);

    Model::Trace trace = model_.forward_trace(input, mask);
    StepLosses out;
    Tensor grad;
    out.parts.l1 = masked_l1(trace.image, gt, mask, &grad);
    try {
        out.total = total_inpaint_loss(config_.loss_weights, out.parts);
    } catch (const std::domain_error& e) {
        throw NumericalAbort(e.what());
    }
    grad *= config_.loss_weights.lambda1;
    model_.zero_grad();
    model_.backward(trace, grad);
    NamedParams gp = model_.params();
    if (!grads_finite(gp)) throw NumericalAbort("generator gradient is not finite");
    opt_g_.step(gp);
    return out;
}

template <typename Step>
RunManifest Trainer::run(Stage stage, const fs::path& out_dir, Step step,
                         std::vector<std::size_t> subset) {
    if (config_.stage != stage) {
        throw std::invalid_argument("trainer configured for " + to_string(config_.stage) +
                                    " cannot run " + to_string(stage));
    }
    const auto t0 = std::chrono::steady_clock::now();
    fs::create_directories(out_dir);
    RunManifest m;
    m.stage = stage;
    m.config = to_json(config_);
    m.model = to_json(model_.config());
    m.resumed_from = resumed_from_;
    m.subset_indices = std::move(subset);
    m.started_at = utc_timestamp();

    auto finish = [&] {
        m.loss_curve = curve_;
        m.iterations_completed = iteration_;
        m.elapsed_seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        write_text(out_dir / "manifest.json", m.to_json().dump(2) + "\n");
        write_text(out_dir / "loss.csv", loss_curve_csv(curve_));
    };

    while (iteration_ < config_.iterations) {
        StepLosses s;
        try {
            s = step();
        } catch (const NumericalAbort& e) {
            m.aborted = true;
            m.abort_reason = fmt::format("iteration {}: {}", iteration_ + 1, e.what());
            spdlog::error("numerical abort at {}", m.abort_reason);
            finish();
            throw NumericalAbort(m.abort_reason);
        }
        ++iteration_;
        pending_.sum.total += s.total;
        pending_.sum.l1 += s.parts.l1;
        pending_.sum.gan += s.parts.gan;
        pending_.sum.perceptual += s.parts.perceptual;
        pending_.sum.style += s.parts.style;
        ++pending_.count;
        if (iteration_ % config_.log_every == 0) {
            const double n = static_cast<double>(pending_.count);
            curve_.push_back({iteration_, pending_.sum.total / n, pending_.sum.l1 / n,
                              pending_.sum.gan / n, pending_.sum.perceptual / n,
                              pending_.sum.style / n});
            spdlog::info("{} iter {}: total {:.5f} l1 {:.5f}", to_string(stage), iteration_,
                         curve_.back().total, curve_.back().l1);
            pending_ = {};
        }
        if (config_.checkpoint_every > 0 && iteration_ % config_.checkpoint_every == 0) {
            const std::string name = fmt::format("ckpt_{:08d}.bin", iteration_);
            save_checkpoint(out_dir / name, snapshot());
            m.checkpoints.push_back(name);
        }
    }
    save_checkpoint(out_dir / "final.bin", snapshot());
    m.final_checkpoint = "final.bin";
    finish();
    return m;
}

RunManifest Trainer::pretrain(const std::vector<ImageTensor>& clean, const fs::path& out_dir) {
    if (clean.empty()) throw std::invalid_argument("pretrain: inpainting dataset is empty");
    return run(Stage::pretrain, out_dir, [&] { return pretrain_step(clean); }, {});
}

RunManifest Trainer::finetune(const std::vector<ShadowTriplet>& dataset, const fs::path& out_dir) {
    if (dataset.empty()) throw std::invalid_argument("finetune: shadow dataset is empty");
    std::vector<std::size_t> pool =
        subset_indices(dataset.size(), config_.fraction, derive_seed(config_.seed, Stream::subset));
    if (pool.empty()) throw std::invalid_argument("finetune: fraction selects no samples");
    return run(Stage::finetune, out_dir, [&] { return finetune_step(dataset, pool); }, pool);
}

RunManifest pretrain(Model model, const std::vector<ImageTensor>& clean, const TrainConfig& config,
                     const fs::path& out_dir) {
    TrainConfig c = config;
    c.stage = Stage::pretrain;
    return Trainer(std::move(model), c).pretrain(clean, out_dir);
}

RunManifest finetune(Model model, const std::vector<ShadowTriplet>& dataset,
                     const TrainConfig& config, const fs::path& out_dir,
                     std::optional<Sequential> discriminator) {
    TrainConfig c = config;
    c.stage = Stage::finetune;
    return Trainer(std::move(model), c, std::move(discriminator)).finetune(dataset, out_dir);
}

RunManifest finetune_from_checkpoint(const fs::path& init_path,
                                     const std::vector<ShadowTriplet>& dataset,
                                     const TrainConfig& config, const fs::path& out_dir) {
    Checkpoint ck = load_checkpoint(init_path);
    return finetune(std::move(ck.model), dataset, config, out_dir, std::move(ck.discriminator));
}

RunManifest resume_pretrain(const fs::path& checkpoint_path, const std::vector<ImageTensor>& clean,
                            const TrainConfig& config, const fs::path& out_dir) {
    TrainConfig c = config;
    c.stage = Stage::pretrain;
    return Trainer::resume(load_checkpoint(checkpoint_path), c, checkpoint_path)
        .pretrain(clean, out_dir);
}

RunManifest resume_finetune(const fs::path& checkpoint_path,
                            const std::vector<ShadowTriplet>& dataset, const TrainConfig& config,
                            const fs::path& out_dir) {
    TrainConfig c = config;
    c.stage = Stage::finetune;
    return Trainer::resume(load_checkpoint(checkpoint_path), c, checkpoint_path)
        .finetune(dataset, out_dir);
}

// --- evaluation helpers and the cadence study ---------------------------------------------------

Predictor model_predictor(const Model& model) {
    return [&model](const ShadowTriplet& t) {
        if (!t.mask.same_size(t.shadow)) {
            throw std::invalid_argument("mask and shadow image sizes differ");
        }
        return image_from_batch(model.forward(to_batch(t.shadow), to_batch(t.mask)).image, 0);
    };
}

double inpainting_psnr(const Model& model, const std::vector<InpaintSample>& samples) {
    if (samples.empty()) throw std::invalid_argument("inpainting_psnr: no samples");
    std::vector<double> values;
    for (const InpaintSample& s : samples) {
        const ImageTensor pred =
            image_from_batch(model.forward(to_batch(s.corrupted), to_batch(s.mask)).image, 0);
        values.push_back(psnr(pred, s.clean));
    }
    return pairwise_sum(values) / static_cast<double>(values.size());
}

std::vector<CadenceRow> run_pretrain_cadence_study(const CadenceStudyInputs& in,
                                                   std::int64_t cadence,
                                                   const TrainConfig& pretrain_config,
                                                   const TrainConfig& finetune_config,
                                                   const fs::path& out_dir) {
    if (cadence <= 0 || pretrain_config.iterations % cadence != 0) {
        throw std::invalid_argument("cadence must divide the pretraining iteration count");
    }
    TrainConfig pc = pretrain_config;
    pc.checkpoint_every = cadence;
    Model base(in.model);
    base.init(derive_seed(pc.seed, Stream::init));
    const RunManifest pm = pretrain(std::move(base), in.inpaint_train, pc, out_dir / "pretrain");

    std::vector<CadenceRow> rows;
    for (const std::string& name : pm.checkpoints) {
        const Checkpoint ck = load_checkpoint(out_dir / "pretrain" / name);
        CadenceRow row;
        row.iter = ck.iteration;
        row.inpaint_psnr = inpainting_psnr(ck.model, in.inpaint_val);
        const fs::path ft_dir = out_dir / fmt::format("finetune_{:08d}", ck.iteration);
        finetune(ck.model, in.shadow_train, finetune_config, ft_dir, ck.discriminator);
        const Model tuned = load_model(ft_dir / "final.bin");
        const EvalReport report =
            evaluate_dataset(model_predictor(tuned), in.shadow_val, MaskSource::provided);
        row.rmse_shadow = report.shadow.rmse;
        row.rmse_nonshadow = report.non_shadow.rmse;
        rows.push_back(row);
    }
    std::sort(rows.begin(), rows.end(),
              [](const CadenceRow& a, const CadenceRow& b) { return a.iter < b.iter; });
    write_text(out_dir / "cadence.csv", cadence_csv(rows));
    return rows;
}

std::string cadence_csv(const std::vector<CadenceRow>& rows) {
    std::string out = "iter,inpaint_psnr,rmse_shadow,rmse_nonshadow\n";
    for (const CadenceRow& r : rows) {
        out += fmt::format("{},{},{},{}\n", r.iter, r.inpaint_psnr, r.rmse_shadow, r.rmse_nonshadow);
    }
    return out;
}

}  // namespace deshadow
