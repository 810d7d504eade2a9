#include "deshadow/losses.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

#include "deshadow/archive.hpp"
#include "deshadow/metrics.hpp"

namespace deshadow {
namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
    if (a.shape() != b.shape()) {
        throw std::invalid_argument(std::string(what) + ": shape mismatch " + to_string(a.shape()) +
                                    " vs " + to_string(b.shape()));
    }
}

void require_mask(const Tensor& image, const Tensor& mask, const char* what) {
    const Shape& s = image.shape();
    const Shape& m = mask.shape();
    if (m.n != s.n || m.c != 1 || m.h != s.h || m.w != s.w) {
        throw std::invalid_argument(std::string(what) + ": mask " + to_string(m) +
                                    " does not match image " + to_string(s));
    }
}

double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

double mean_of(std::span<const double> v) {
    if (v.empty()) return 0.0;
    return pairwise_sum(v) / static_cast<double>(v.size());
}

// Per-tap |a - b| mean; adds sign(a-b)/n into `grad` when given.
double mean_abs_diff(const Tensor& a, const Tensor& b, Tensor* grad) {
    std::vector<double> d(a.size());
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = std::abs(a[i] - b[i]);
    if (grad != nullptr) {
        *grad = Tensor(a.shape());
        const double inv = 1.0 / static_cast<double>(a.size());
        for (std::size_t i = 0; i < d.size(); ++i) (*grad)[i] = sign(a[i] - b[i]) * inv;
    }
    return mean_of(d);
}

Tensor multiply_mask(const Tensor& image, const Tensor& mask) {
    Tensor out = image;
    const Shape& s = image.shape();
    for (int n = 0; n < s.n; ++n) {
        for (int c = 0; c < s.c; ++c) {
            for (int y = 0; y < s.h; ++y) {
                for (int x = 0; x < s.w; ++x) out.at(n, c, y, x) *= mask.at(n, 0, y, x);
            }
        }
    }
    return out;
}

double clamp_probability(double p) {
    return std::clamp(p, kProbabilityEpsilon, 1.0 - kProbabilityEpsilon);
}

bool inside(double p) { return p >= kProbabilityEpsilon && p <= 1.0 - kProbabilityEpsilon; }

// mean of f(clamp(p)) and, optionally, its gradient (zero where the clamp is active).
template <typename F, typename DF>
double mean_log_term(const Tensor& p, F f, DF df, double scale, Tensor* grad) {
    std::vector<double> v(p.size());
    for (std::size_t i = 0; i < p.size(); ++i) v[i] = f(clamp_probability(p[i]));
    if (grad != nullptr) {
        if (grad->shape() != p.shape()) *grad = Tensor(p.shape());
        const double inv = scale / static_cast<double>(p.size());
        for (std::size_t i = 0; i < p.size(); ++i) {
            if (inside(p[i])) (*grad)[i] += df(p[i]) * inv;
        }
    }
    return scale * mean_of(v);
}

double log_p(double p) { return std::log(p); }
double dlog_p(double p) { return 1.0 / p; }
double log_1mp(double p) { return std::log(1.0 - p); }
double dlog_1mp(double p) { return -1.0 / (1.0 - p); }

}  // namespace

void LossWeights::validate() const {
    const std::array<std::pair<const char*, double>, 4> all = {
        {{"lambda1", lambda1}, {"lambda2", lambda2}, {"lambda3", lambda3}, {"lambda4", lambda4}}};
    for (const auto& [name, v] : all) {
        if (!std::isfinite(v) || v < 0.0) {
            throw std::invalid_argument(std::string("loss weight ") + name +
                                        " must be finite and >= 0");
        }
    }
}

double masked_l1(const Tensor& pred, const Tensor& target, const Tensor& mask, Tensor* grad) {
    require_same_shape(pred, target, "masked_l1");
    require_mask(pred, mask, "masked_l1");
    double mask_mean = mean_of(mask.values());
    if (mask_mean <= 0.0) {
        spdlog::debug("masked_l1: empty mask, falling back to plain mean absolute error");
        mask_mean = 1.0;
    }
    const double l1 = mean_abs_diff(pred, target, grad);
    if (grad != nullptr) *grad *= 1.0 / mask_mean;
    return l1 / mask_mean;
}

double masked_l1(const ImageTensor& pred, const ImageTensor& target, const BinaryMask& mask) {
    return masked_l1(to_batch(pred), to_batch(target), to_batch(mask));
}

std::string to_string(GanMode m) { return m == GanMode::standard ? "standard" : "literal"; }

GanMode gan_mode_from_string(const std::string& s) {
    if (s == "standard") return GanMode::standard;
    if (s == "literal") return GanMode::literal;
    throw std::invalid_argument("unknown GAN mode '" + s + "' (expected standard or literal)");
}

double gan_generator_loss(const Tensor& disc_fake, GanMode mode, Tensor* d_fake) {
    if (d_fake != nullptr) *d_fake = Tensor(disc_fake.shape());
    if (mode == GanMode::standard) return mean_log_term(disc_fake, log_p, dlog_p, -1.0, d_fake);
    return mean_log_term(disc_fake, log_1mp, dlog_1mp, 1.0, d_fake);
}

double gan_discriminator_loss(const Tensor& disc_real, const Tensor& disc_fake, GanMode mode,
                              Tensor* d_real, Tensor* d_fake) {
    if (d_real != nullptr) *d_real = Tensor(disc_real.shape());
    if (d_fake != nullptr) *d_fake = Tensor(disc_fake.shape());
    if (mode == GanMode::standard) {
        return mean_log_term(disc_real, log_p, dlog_p, -0.5, d_real) +
               mean_log_term(disc_fake, log_1mp, dlog_1mp, -0.5, d_fake);
    }
    return mean_log_term(disc_fake, log_p, dlog_p, 0.5, d_fake) +
           mean_log_term(disc_real, log_1mp, dlog_1mp, 0.5, d_real);
}

GanLosses gan_losses(const Tensor& disc_real, const Tensor& disc_fake, GanMode mode) {
    return {gan_generator_loss(disc_fake, mode), gan_discriminator_loss(disc_real, disc_fake, mode)};
}

FeatureExtractor::FeatureExtractor(const ExtractorConfig& config) : config_(config) {
    std::vector<LayerSpec> specs;
    int in = 3;
    for (int i = 0; i < kTaps; ++i) {
        if (config.channels[i] < 1) {
            throw std::invalid_argument("feature extractor channels must be positive");
        }
        specs.push_back(conv_spec(in, config.channels[i], 3, i == 0 ? 1 : 2, 1));
        specs.push_back(relu_spec(config.channels[i]));
        in = config.channels[i];
    }
    stack_ = Sequential(specs);
    std::mt19937_64 rng(config.seed);
    stack_.init(rng);
    initialized_ = true;
}

void FeatureExtractor::require_initialized() const {
    if (!initialized_) throw std::logic_error("feature extractor used before initialization");
}

std::vector<Tensor> FeatureExtractor::forward_trace(const Tensor& x) const {
    require_initialized();
    return stack_.forward_trace(x);
}

const Tensor& FeatureExtractor::tap(const std::vector<Tensor>& trace, int i) {
    return trace.at(static_cast<std::size_t>(2 * (i + 1)));
}

Tensor FeatureExtractor::input_gradient(const std::vector<Tensor>& trace,
                                        const std::vector<Tensor>& d_taps) const {
    require_initialized();
    const auto& layers = stack_.layers();
    if (trace.size() != layers.size() + 1 || d_taps.size() != kTaps) {
        throw std::invalid_argument("FeatureExtractor::input_gradient: bad trace or tap count");
    }
    Tensor grad(trace.back().shape());
    for (std::size_t i = layers.size(); i-- > 0;) {
        if ((i + 1) % 2 == 0) {
            const Tensor& d = d_taps[(i + 1) / 2 - 1];
            if (!d.empty()) grad += d;
        }
        grad = layers[i].input_gradient(trace[i], trace[i + 1], grad);
    }
    return grad;
}

void FeatureExtractor::save(const std::filesystem::path& path) const {
    require_initialized();
    Archive a;
    a.meta["kind"] = "feature_extractor";
    a.meta["channels"] = config_.channels;
    a.meta["seed"] = config_.seed;
    const auto& layers = stack_.layers();
    for (std::size_t i = 0; i < layers.size(); ++i) {
        for (const Param& p : layers[i].params()) {
            a.tensors.emplace("extractor." + std::to_string(i) + "." + p.name, p.value);
        }
    }
    write_archive(path, a);
}

FeatureExtractor FeatureExtractor::load(const std::filesystem::path& path) {
    const Archive a = read_archive(path);
    if (a.meta.value("kind", "") != "feature_extractor") {
        throw ArchiveError(path.string() + " does not hold feature extractor weights");
    }
    ExtractorConfig config;
    config.channels = a.meta.at("channels").get<std::array<int, 5>>();
    config.seed = a.meta.value("seed", std::uint64_t{0});
    FeatureExtractor fx(config);
    NamedParams params;
    fx.stack_.collect("extractor", params);
    for (auto& [name, p] : params) {
        const auto it = a.tensors.find(name);
        if (it == a.tensors.end()) throw ArchiveError(path.string() + ": missing tensor " + name);
        if (it->second.shape() != p->value.shape()) {
            throw ArchiveError(path.string() + ": shape mismatch for " + name);
        }
        p->value = it->second;
    }
    return fx;
}

Eigen::MatrixXd gram(const Tensor& features, int sample) {
    const Shape& s = features.shape();
    if (sample < 0 || sample >= s.n) throw std::out_of_range("gram: sample index out of range");
    const Eigen::Map<const RowMatrix> f(features.sample(sample), s.c,
                                        static_cast<Eigen::Index>(s.plane()));
    const double denom = static_cast<double>(s.c) * static_cast<double>(s.plane());
    return (f * f.transpose()) / denom;
}

double perceptual_loss(const FeatureExtractor& extractor, const Tensor& pred, const Tensor& target,
                       Tensor* grad) {
    require_same_shape(pred, target, "perceptual_loss");
    const auto tp = extractor.forward_trace(pred);
    const auto tt = extractor.forward_trace(target);
    double total = 0.0;
    std::vector<Tensor> d_taps(FeatureExtractor::kTaps);
    for (int i = 0; i < FeatureExtractor::kTaps; ++i) {
        total += mean_abs_diff(FeatureExtractor::tap(tp, i), FeatureExtractor::tap(tt, i),
                               grad != nullptr ? &d_taps[i] : nullptr);
    }
    if (grad != nullptr) *grad = extractor.input_gradient(tp, d_taps);
    return total;
}

double perceptual_loss(const FeatureExtractor& extractor, const ImageTensor& pred,
                       const ImageTensor& target) {
    return perceptual_loss(extractor, to_batch(pred), to_batch(target));
}

double style_loss(const FeatureExtractor& extractor, const Tensor& pred, const Tensor& target,
                  const Tensor& mask, Tensor* grad) {
    require_same_shape(pred, target, "style_loss");
    require_mask(pred, mask, "style_loss");
    const auto tp = extractor.forward_trace(multiply_mask(pred, mask));
    const auto tt = extractor.forward_trace(multiply_mask(target, mask));
    double total = 0.0;
    std::vector<Tensor> d_taps(FeatureExtractor::kTaps);
    for (int i = 0; i < FeatureExtractor::kTaps; ++i) {
        const Tensor& fp = FeatureExtractor::tap(tp, i);
        const Tensor& ft = FeatureExtractor::tap(tt, i);
        const Shape& s = fp.shape();
        const double count = static_cast<double>(s.n) * s.c * s.c;
        std::vector<double> diffs;
        diffs.reserve(static_cast<std::size_t>(count));
        if (grad != nullptr) d_taps[i] = Tensor(s);
        for (int n = 0; n < s.n; ++n) {
            const Eigen::MatrixXd d = gram(fp, n) - gram(ft, n);
            for (Eigen::Index r = 0; r < d.rows(); ++r) {
                for (Eigen::Index c = 0; c < d.cols(); ++c) diffs.push_back(std::abs(d(r, c)));
            }
            if (grad != nullptr) {
                const Eigen::MatrixXd dg = d.unaryExpr([](double v) { return sign(v); }) / count;
                const Eigen::Map<const RowMatrix> f(fp.sample(n), s.c,
                                                    static_cast<Eigen::Index>(s.plane()));
                Eigen::Map<RowMatrix> df(d_taps[i].sample(n), s.c,
                                         static_cast<Eigen::Index>(s.plane()));
                df = (dg + dg.transpose()) * f / (static_cast<double>(s.c) * s.plane());
            }
        }
        total += mean_of(diffs);
    }
    if (grad != nullptr) *grad = multiply_mask(extractor.input_gradient(tp, d_taps), mask);
    return total;
}

double style_loss(const FeatureExtractor& extractor, const ImageTensor& pred,
                  const ImageTensor& target, const BinaryMask& mask) {
    return style_loss(extractor, to_batch(pred), to_batch(target), to_batch(mask));
}

double total_inpaint_loss(const LossWeights& weights, const LossComponents& c) {
    weights.validate();
    const std::array<std::pair<const char*, double>, 4> parts = {
        {{"l1", c.l1}, {"gan", c.gan}, {"perceptual", c.perceptual}, {"style", c.style}}};
    for (const auto& [name, v] : parts) {
        if (!std::isfinite(v)) {
            throw std::domain_error(std::string("loss component '") + name + "' is not finite");
        }
    }
    return weights.lambda1 * c.l1 + weights.lambda2 * c.gan + weights.lambda3 * c.perceptual +
           weights.lambda4 * c.style;
}

}  // namespace deshadow
