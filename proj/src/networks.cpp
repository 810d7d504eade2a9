#include "deshadow/networks.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <stdexcept>

namespace deshadow {
namespace {

Tensor sigmoid(const Tensor& x) {
    Tensor y = x;
    for (double& v : y.values()) v = 1.0 / (1.0 + std::exp(-v));
    return y;
}

Tensor multiply(const Tensor& a, const Tensor& b) {
    Tensor out = a;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b[i];
    return out;
}

void check_feature_pair(const Tensor& a, const Tensor& b, int channels) {
    if (a.shape() != b.shape()) {
        throw std::invalid_argument("fusion block: feature shapes differ " + to_string(a.shape()) +
                                    " vs " + to_string(b.shape()));
    }
    if (a.shape().c != channels) {
        throw std::invalid_argument("fusion block: expected " + std::to_string(channels) +
                                    " feature channels, got " + std::to_string(a.shape().c));
    }
}

void check_image_pair(const Tensor& image, const Tensor& mask) {
    const Shape& is = image.shape();
    const Shape& ms = mask.shape();
    if (is.c != 3 || ms.c != 1 || is.n != ms.n || is.h != ms.h || is.w != ms.w) {
        throw std::invalid_argument("model input: expected image (N,3,H,W) and mask (N,1,H,W), got " +
                                    to_string(is) + " and " + to_string(ms));
    }
    if (is.h % 4 != 0 || is.w % 4 != 0 || is.h == 0 || is.w == 0) {
        throw std::invalid_argument("model input: H and W must be positive multiples of 4, got " +
                                    to_string(is));
    }
}

Tensor masked_image(const Tensor& image, const Tensor& mask) {
    Tensor out = image;
    const Shape& s = image.shape();
    for (int n = 0; n < s.n; ++n) {
        for (int c = 0; c < s.c; ++c) {
            for (int y = 0; y < s.h; ++y) {
                for (int x = 0; x < s.w; ++x) out.at(n, c, y, x) *= 1.0 - mask.at(n, 0, y, x);
            }
        }
    }
    return out;
}

}  // namespace

std::string to_string(FusionCombine c) { return c == FusionCombine::concat ? "concat" : "sum"; }

std::string to_string(ModelKind k) {
    switch (k) {
        case ModelKind::naive: return "naive";
        case ModelKind::fusion: return "fusion";
        case ModelKind::concat_input: return "concat_input";
    }
    return "unknown";
}

std::string to_string(Variant v) {
    switch (v) {
        case Variant::full: return "full";
        case Variant::no_fusion: return "no_fusion";
        case Variant::no_sigmoid: return "no_sigmoid";
        case Variant::no_w1: return "no_w1";
        case Variant::no_w2: return "no_w2";
        case Variant::concat_input: return "concat_input";
        case Variant::zero_shadow_branch: return "zero_shadow_branch";
        case Variant::zero_inpaint_branch: return "zero_inpaint_branch";
    }
    return "unknown";
}

FusionCombine fusion_combine_from_string(const std::string& s) {
    if (s == "concat") return FusionCombine::concat;
    if (s == "sum") return FusionCombine::sum;
    throw std::invalid_argument("unknown fusion_combine '" + s + "' (expected concat or sum)");
}

ModelKind model_kind_from_string(const std::string& s) {
    for (ModelKind k : {ModelKind::naive, ModelKind::fusion, ModelKind::concat_input}) {
        if (to_string(k) == s) return k;
    }
    throw std::invalid_argument("unknown model kind '" + s + "'");
}

Variant variant_from_string(const std::string& s) {
    if (s == "full") return Variant::full;
    for (Variant v : ablation_variants()) {
        if (to_string(v) == s) return v;
    }
    throw std::invalid_argument("unknown variant '" + s + "'");
}

const std::vector<Variant>& ablation_variants() {
    static const std::vector<Variant> all = {
        Variant::no_fusion,    Variant::no_sigmoid,         Variant::no_w1,
        Variant::no_w2,        Variant::concat_input,       Variant::zero_shadow_branch,
        Variant::zero_inpaint_branch,
    };
    return all;
}

std::vector<LayerSpec> make_encoder_specs(const ArchConfig& arch, int in_channels) {
    const int c = arch.base_channels;
    return {conv_spec(in_channels, c, 7, 1, 3), relu_spec(c),
            conv_spec(c, 2 * c, 4, 2, 1),       relu_spec(2 * c),
            conv_spec(2 * c, 4 * c, 4, 2, 1),   relu_spec(4 * c)};
}

EncoderDecoderConfig make_encoder_decoder_config(const ArchConfig& arch, int in_channels) {
    if (arch.base_channels <= 0 || arch.res_blocks < 0) {
        throw std::invalid_argument("arch: base_channels must be > 0 and res_blocks >= 0");
    }
    const int c = arch.base_channels;
    EncoderDecoderConfig cfg;
    cfg.encoder = make_encoder_specs(arch, in_channels);
    for (int i = 0; i < arch.res_blocks; ++i) cfg.bottleneck.push_back(resnet_block_spec(4 * c));
    cfg.decoder = {conv_transpose_spec(4 * c, 2 * c, 4, 2, 1), relu_spec(2 * c),
                   conv_transpose_spec(2 * c, c, 4, 2, 1), relu_spec(c), conv_spec(c, 3, 7, 1, 3)};
    return cfg;
}

FusionBlockSpec make_fusion_block_spec(int feature_channels, FusionCombine combine) {
    FusionBlockSpec spec;
    const int c = feature_channels;
    spec.weight_conv = conv_spec(2 * c, 2 * c, 3, 1, 1);
    spec.fusion_conv = combine == FusionCombine::concat ? conv_spec(2 * c, c, 3, 1, 1)
                                                        : conv_spec(c, c, 3, 1, 1);
    spec.combine = combine;
    return spec;
}

FusionNetConfig make_fusion_net_config(const ArchConfig& arch) {
    const EncoderDecoderConfig ed = make_encoder_decoder_config(arch, 4);
    FusionNetConfig cfg;
    cfg.encoder_masked = ed.encoder;
    cfg.encoder_shadow = ed.encoder;
    cfg.fusion = make_fusion_block_spec(4 * arch.base_channels, arch.combine);
    cfg.bottleneck = ed.bottleneck;
    cfg.decoder = ed.decoder;
    return cfg;
}

// --- FusionBlock ---------------------------------------------------------------------------

FusionBlock::FusionBlock(FusionBlockSpec spec) : spec_(spec) {
    validate(spec_.fusion_conv);
    const int c = spec_.fusion_conv.out_channels;
    const int combined = spec_.combine == FusionCombine::concat ? 2 * c : c;
    if (spec_.fusion_conv.in_channels != combined) {
        throw std::invalid_argument("fusion_conv must take " + std::to_string(combined) +
                                    " channels for combine=" + to_string(spec_.combine));
    }
    if (spec_.use_weights) {
        validate(spec_.weight_conv);
        if (spec_.weight_conv.in_channels != 2 * c || spec_.weight_conv.out_channels != 2 * c) {
            throw std::invalid_argument("weight_conv must map 2C -> 2C channels (C = " +
                                        std::to_string(c) + ")");
        }
        weight_conv_.emplace(spec_.weight_conv);
    }
    fusion_conv_.emplace(spec_.fusion_conv);
}

void FusionBlock::init(std::mt19937_64& rng) {
    if (weight_conv_) weight_conv_->init(rng);
    fusion_conv_->init(rng);
}

void FusionBlock::collect(const std::string& prefix, NamedParams& out) {
    if (weight_conv_) {
        for (Param& p : weight_conv_->params()) out.emplace_back(prefix + ".weight_conv." + p.name, &p);
    }
    for (Param& p : fusion_conv_->params()) out.emplace_back(prefix + ".fusion_conv." + p.name, &p);
}

FusionBlock::Trace FusionBlock::forward(const Tensor& f_masked, const Tensor& f_shadow) const {
    if (!fusion_conv_) throw std::logic_error("fusion block not constructed");
    const int c = spec_.fusion_conv.out_channels;
    check_feature_pair(f_masked, f_shadow, c);
    Trace t;
    t.f_masked = f_masked;
    t.f_shadow = f_shadow;
    t.stacked = concat_channels(f_masked, f_shadow);

    Tensor a;
    Tensor b;
    if (spec_.use_weights) {
        Tensor logits = weight_conv_->forward(t.stacked);
        t.weights = spec_.use_sigmoid ? sigmoid(logits) : std::move(logits);
        Tensor w1;
        Tensor w2;
        split_channels(t.weights, c, w1, w2);
        a = spec_.use_w1 ? multiply(f_masked, w1) : Tensor(f_masked.shape());
        b = spec_.use_w2 ? multiply(f_shadow, w2) : Tensor(f_shadow.shape());
    } else {
        a = spec_.use_w1 ? f_masked : Tensor(f_masked.shape());
        b = spec_.use_w2 ? f_shadow : Tensor(f_shadow.shape());
    }
    if (spec_.combine == FusionCombine::concat) {
        t.combined = concat_channels(a, b);
    } else {
        t.combined = std::move(a);
        t.combined += b;
    }
    t.out = fusion_conv_->forward(t.combined);
    return t;
}

void FusionBlock::backward(const Trace& t, const Tensor& d_out, Tensor& d_masked,
                           Tensor& d_shadow) {
    const int c = spec_.fusion_conv.out_channels;
    Tensor d_combined = fusion_conv_->backward(t.combined, t.out, d_out, true);
    Tensor da;
    Tensor db;
    if (spec_.combine == FusionCombine::concat) {
        split_channels(d_combined, c, da, db);
    } else {
        da = d_combined;
        db = d_combined;
    }

    if (!spec_.use_weights) {
        d_masked = spec_.use_w1 ? da : Tensor(t.f_masked.shape());
        d_shadow = spec_.use_w2 ? db : Tensor(t.f_shadow.shape());
        return;
    }

    Tensor w1;
    Tensor w2;
    split_channels(t.weights, c, w1, w2);
    d_masked = Tensor(t.f_masked.shape());
    d_shadow = Tensor(t.f_shadow.shape());
    Tensor dw1(w1.shape());
    Tensor dw2(w2.shape());
    if (spec_.use_w1) {
        d_masked = multiply(da, w1);
        dw1 = multiply(da, t.f_masked);
    }
    if (spec_.use_w2) {
        d_shadow = multiply(db, w2);
        dw2 = multiply(db, t.f_shadow);
    }
    Tensor d_weights = concat_channels(dw1, dw2);
    if (spec_.use_sigmoid) {
        for (std::size_t i = 0; i < d_weights.size(); ++i) {
            d_weights[i] *= t.weights[i] * (1.0 - t.weights[i]);
        }
    }
    // The layer's own output is only consulted by activations, so any tensor works here.
    Tensor d_stacked = weight_conv_->backward(t.stacked, t.weights, d_weights, true);
    Tensor ds_masked;
    Tensor ds_shadow;
    split_channels(d_stacked, c, ds_masked, ds_shadow);
    d_masked += ds_masked;
    d_shadow += ds_shadow;
}

void FusionBlock::split_weights(const Trace& trace, Tensor& w1, Tensor& w2) {
    if (trace.weights.empty()) {
        w1 = Tensor();
        w2 = Tensor();
        return;
    }
    split_channels(trace.weights, trace.weights.shape().c / 2, w1, w2);
}

// --- Model -----------------------------------------------------------------------------------

Model::Model(const ModelConfig& config) : config_(config) {
    const ArchConfig& arch = config_.arch;
    switch (config_.kind) {
        case ModelKind::naive:
        case ModelKind::concat_input: {
            const int in = config_.kind == ModelKind::naive ? 4 : 7;
            const EncoderDecoderConfig ed = make_encoder_decoder_config(arch, in);
            encoder_masked_ = Sequential(ed.encoder);
            std::vector<LayerSpec> dec = ed.bottleneck;
            dec.insert(dec.end(), ed.decoder.begin(), ed.decoder.end());
            decoder_ = Sequential(dec);
            break;
        }
        case ModelKind::fusion: {
            FusionNetConfig fc = make_fusion_net_config(arch);
            encoder_masked_ = Sequential(fc.encoder_masked);
            encoder_shadow_ = Sequential(fc.encoder_shadow);
            if (config_.variant == Variant::no_fusion) fc.fusion.use_weights = false;
            fusion_ = FusionBlock(fc.fusion);
            std::vector<LayerSpec> dec = fc.bottleneck;
            dec.insert(dec.end(), fc.decoder.begin(), fc.decoder.end());
            decoder_ = Sequential(dec);
            break;
        }
    }
    set_variant_flags(config_.variant);
}

void Model::set_variant_flags(Variant v) {
    const bool fusion_variant = v == Variant::no_sigmoid || v == Variant::no_w1 ||
                                v == Variant::no_w2 || v == Variant::zero_shadow_branch ||
                                v == Variant::zero_inpaint_branch || v == Variant::no_fusion;
    if (fusion_variant && config_.kind != ModelKind::fusion) {
        throw std::invalid_argument("variant " + to_string(v) + " requires a fusion model");
    }
    if (v == Variant::no_fusion && fusion_.has_weight_conv()) {
        throw std::invalid_argument("no_fusion must be built structurally, not toggled");
    }
    config_.variant = v;
    zero_masked_ = v == Variant::zero_inpaint_branch;
    zero_shadow_ = v == Variant::zero_shadow_branch;
    if (config_.kind == ModelKind::fusion) {
        FusionBlockSpec& fs = fusion_.mutable_spec();
        fs.use_sigmoid = v != Variant::no_sigmoid;
        fs.use_w1 = v != Variant::no_w1;
        fs.use_w2 = v != Variant::no_w2;
    }
}

int Model::input_channels() const { return config_.kind == ModelKind::concat_input ? 7 : 4; }

Tensor Model::network_input(const Tensor& image, const Tensor& mask) const {
    if (config_.kind == ModelKind::concat_input) {
        return concat_channels(concat_channels(image, masked_image(image, mask)), mask);
    }
    return concat_channels(image, mask);
}

Model::Trace Model::forward_trace(const Tensor& image, const Tensor& mask) const {
    check_image_pair(image, mask);
    Trace t;
    Tensor features;
    if (config_.kind == ModelKind::fusion) {
        t.enc_masked = encoder_masked_.forward_trace(concat_channels(masked_image(image, mask), mask));
        t.enc_shadow = encoder_shadow_.forward_trace(concat_channels(image, mask));
        Tensor fm = t.enc_masked.back();
        Tensor fs = t.enc_shadow.back();
        if (zero_masked_) fm.set_zero();
        if (zero_shadow_) fs.set_zero();
        t.fusion = fusion_.forward(fm, fs);
        features = t.fusion.out;
    } else {
        t.enc_masked = encoder_masked_.forward_trace(network_input(image, mask));
        features = t.enc_masked.back();
    }
    t.decoder = decoder_.forward_trace(features);
    t.raw = t.decoder.back();
    t.image = clamp_unit(t.raw);
    return t;
}

Model::Output Model::forward(const Tensor& image, const Tensor& mask) const {
    Trace t = forward_trace(image, mask);
    Output out;
    out.image = std::move(t.image);
    if (config_.kind == ModelKind::fusion) FusionBlock::split_weights(t.fusion, out.w1, out.w2);
    return out;
}

void Model::backward(const Trace& t, const Tensor& d_image) {
    const Tensor d_raw = clamp_unit_backward(t.raw, d_image);
    Tensor d_features = decoder_.backward(t.decoder, d_raw, true);
    if (config_.kind != ModelKind::fusion) {
        encoder_masked_.backward(t.enc_masked, d_features, false);
        return;
    }
    Tensor d_masked;
    Tensor d_shadow;
    fusion_.backward(t.fusion, d_features, d_masked, d_shadow);
    if (!zero_masked_) encoder_masked_.backward(t.enc_masked, d_masked, false);
    if (!zero_shadow_) encoder_shadow_.backward(t.enc_shadow, d_shadow, false);
}

void Model::init(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    encoder_masked_.init(rng);
    if (config_.kind == ModelKind::fusion) {
        encoder_shadow_.init(rng);
        fusion_.init(rng);
    }
    decoder_.init(rng);
}

NamedParams Model::params() {
    NamedParams out;
    if (config_.kind == ModelKind::fusion) {
        encoder_masked_.collect("encoder_masked", out);
        encoder_shadow_.collect("encoder_shadow", out);
        fusion_.collect("fusion", out);
    } else {
        encoder_masked_.collect("encoder", out);
    }
    decoder_.collect("decoder", out);
    return out;
}

void Model::zero_grad() {
    for (auto& [name, p] : params()) p->grad.set_zero();
}

std::size_t Model::parameter_count() const {
    std::size_t total = 0;
    auto add = [&total](const Layer& l) {
        for (const Param& p : l.params()) total += p.value.size();
    };
    for (const Layer& l : encoder_masked_.layers()) add(l);
    for (const Layer& l : encoder_shadow_.layers()) add(l);
    for (const Layer& l : decoder_.layers()) add(l);
    if (config_.kind == ModelKind::fusion) {
        if (fusion_.has_weight_conv()) add(fusion_.weight_conv());
        add(fusion_.fusion_conv());
    }
    return total;
}

Tensor forward_encoder(const Sequential& encoder, const Tensor& image, const Tensor& mask) {
    check_image_pair(image, mask);
    return encoder.forward(concat_channels(image, mask));
}

Model build_naive_encoder_decoder(const ArchConfig& arch, std::uint64_t seed) {
    Model m(ModelConfig{ModelKind::naive, Variant::full, arch});
    m.init(seed);
    return m;
}

Model build_fusion_network(const ArchConfig& arch, std::uint64_t seed) {
    Model m(ModelConfig{ModelKind::fusion, Variant::full, arch});
    m.init(seed);
    return m;
}

Model make_ablation_variant(const Model& base, Variant variant, std::uint64_t seed) {
    if (base.config().kind != ModelKind::fusion) {
        throw std::invalid_argument("ablations derive from the fusion network");
    }
    switch (variant) {
        case Variant::full:
        case Variant::no_sigmoid:
        case Variant::no_w1:
        case Variant::no_w2:
        case Variant::zero_shadow_branch:
        case Variant::zero_inpaint_branch: {
            Model m = base;
            m.set_variant_flags(variant);
            return m;
        }
        case Variant::no_fusion: {
            ModelConfig cfg = base.config();
            cfg.variant = Variant::no_fusion;
            Model m(cfg);
            m.init(seed);
            m.encoder_masked() = base.encoder_masked();
            m.encoder_shadow() = base.encoder_shadow();
            m.decoder() = base.decoder();
            m.fusion().fusion_conv() = base.fusion().fusion_conv();
            return m;
        }
        case Variant::concat_input: {
            Model m(ModelConfig{ModelKind::concat_input, Variant::concat_input, base.config().arch});
            m.init(seed);
            return m;
        }
    }
    throw std::invalid_argument("unknown ablation variant");
}

Sequential build_discriminator(int base_channels, std::uint64_t seed) {
    const int c = base_channels;
    Sequential d({conv_spec(3, c, 4, 2, 1), leaky_relu_spec(c), conv_spec(c, 2 * c, 4, 2, 1),
                  leaky_relu_spec(2 * c), conv_spec(2 * c, 4 * c, 4, 1, 1),
                  leaky_relu_spec(4 * c), conv_spec(4 * c, 1, 4, 1, 1), sigmoid_spec(1)});
    std::mt19937_64 rng(seed);
    d.init(rng);
    return d;
}

Tensor clamp_unit(const Tensor& raw) {
    Tensor out = raw;
    for (double& v : out.values()) v = std::clamp(v, 0.0, 1.0);
    return out;
}

Tensor clamp_unit_backward(const Tensor& raw, const Tensor& d_out) {
    Tensor d = d_out;
    for (std::size_t i = 0; i < d.size(); ++i) {
        if ((raw[i] < 0.0 && d[i] > 0.0) || (raw[i] > 1.0 && d[i] < 0.0)) d[i] = 0.0;
    }
    return d;
}

}  // namespace deshadow
