#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "deshadow/layers.hpp"
#include "deshadow/tensor.hpp"

namespace deshadow {

enum class FusionCombine { concat, sum };

enum class ModelKind { naive, fusion, concat_input };

enum class Variant {
    full,
    no_fusion,
    no_sigmoid,
    no_w1,
    no_w2,
    concat_input,
    zero_shadow_branch,
    zero_inpaint_branch,
};

std::string to_string(FusionCombine c);
std::string to_string(ModelKind k);
std::string to_string(Variant v);
FusionCombine fusion_combine_from_string(const std::string& s);
ModelKind model_kind_from_string(const std::string& s);
Variant variant_from_string(const std::string& s);
/// The seven ablations, in a fixed order.
const std::vector<Variant>& ablation_variants();

/// Width/depth knobs. The defaults give the full-size network (64/128/256 channels,
/// eight residual blocks); desk-scale runs shrink both.
struct ArchConfig {
    int base_channels = 64;
    int res_blocks = 8;
    FusionCombine combine = FusionCombine::concat;

    friend bool operator==(const ArchConfig&, const ArchConfig&) = default;
};

struct EncoderDecoderConfig {
    std::vector<LayerSpec> encoder;
    std::vector<LayerSpec> bottleneck;
    /// Two transposed convs and the final 7x7 conv. The last layer has no activation; the
    /// model clamps to [0,1] instead.
    std::vector<LayerSpec> decoder;
};

EncoderDecoderConfig make_encoder_decoder_config(const ArchConfig& arch, int in_channels = 4);
/// Encoder only: Conv(in, c, 7, 1, 3) -> Conv(c, 2c, 4, 2, 1) -> Conv(2c, 4c, 4, 2, 1), each + ReLU.
std::vector<LayerSpec> make_encoder_specs(const ArchConfig& arch, int in_channels = 4);

struct FusionBlockSpec {
    LayerSpec weight_conv;
    LayerSpec fusion_conv;
    bool use_weights = true;  // false: features pass straight to fusion_conv (no_fusion)
    bool use_sigmoid = true;
    bool use_w1 = true;
    bool use_w2 = true;
    FusionCombine combine = FusionCombine::concat;
};

/// weight_conv: 2C -> 2C (3x3); fusion_conv: 2C -> C (concat) or C -> C (sum).
FusionBlockSpec make_fusion_block_spec(int feature_channels, FusionCombine combine);

struct FusionNetConfig {
    std::vector<LayerSpec> encoder_masked;
    std::vector<LayerSpec> encoder_shadow;
    FusionBlockSpec fusion;
    std::vector<LayerSpec> bottleneck;
    std::vector<LayerSpec> decoder;
};

FusionNetConfig make_fusion_net_config(const ArchConfig& arch);

/// Adaptive fusion of the masked-image feature and the shadow-image feature:
///   [W1, W2] = Sigmoid(Conv_weight([F_masked, F_shadow]))
///   out      = Conv_fusion(combine(F_masked * W1, F_shadow * W2))
class FusionBlock {
public:
    FusionBlock() = default;
    explicit FusionBlock(FusionBlockSpec spec);

    struct Trace {
        Tensor f_masked;
        Tensor f_shadow;
        Tensor stacked;   // concat(f_masked, f_shadow)
        Tensor weights;   // [W1, W2] after the (optional) sigmoid
        Tensor combined;  // input of fusion_conv
        Tensor out;
    };

    [[nodiscard]] Trace forward(const Tensor& f_masked, const Tensor& f_shadow) const;
    /// Accumulates parameter gradients and writes gradients for both feature inputs.
    void backward(const Trace& trace, const Tensor& d_out, Tensor& d_masked, Tensor& d_shadow);

    [[nodiscard]] const FusionBlockSpec& spec() const { return spec_; }
    FusionBlockSpec& mutable_spec() { return spec_; }
    void init(std::mt19937_64& rng);
    void collect(const std::string& prefix, NamedParams& out);

    Layer& weight_conv() { return *weight_conv_; }
    [[nodiscard]] const Layer& weight_conv() const { return *weight_conv_; }
    Layer& fusion_conv() { return *fusion_conv_; }
    [[nodiscard]] const Layer& fusion_conv() const { return *fusion_conv_; }
    [[nodiscard]] bool has_weight_conv() const { return weight_conv_.has_value(); }

    /// W1 and W2 as separate tensors, split from Trace::weights.
    static void split_weights(const Trace& trace, Tensor& w1, Tensor& w2);

private:
    FusionBlockSpec spec_{};
    std::optional<Layer> weight_conv_;
    std::optional<Layer> fusion_conv_;
};

struct ModelConfig {
    ModelKind kind = ModelKind::fusion;
    Variant variant = Variant::full;
    ArchConfig arch{};
};

/// Shadow-removal / inpainting generator. One of:
///   naive         encoder-decoder on [I, M]
///   fusion        two encoders ([I*(1-M), M] and [I, M]) + adaptive fusion + shared decoder
///   concat_input  encoder-decoder on [I, I*(1-M), M]
class Model {
public:
    Model() = default;
    explicit Model(const ModelConfig& config);

    struct Output {
        Tensor image;  // (N, 3, H, W), clamped to [0,1]
        Tensor w1;     // fusion models only
        Tensor w2;
    };

    struct Trace {
        std::vector<Tensor> enc_masked;
        std::vector<Tensor> enc_shadow;
        FusionBlock::Trace fusion;
        std::vector<Tensor> decoder;
        Tensor raw;
        Tensor image;
    };

    /// image: (N,3,H,W) shadow (or corrupted) image; mask: (N,1,H,W). H, W divisible by 4.
    [[nodiscard]] Output forward(const Tensor& image, const Tensor& mask) const;
    [[nodiscard]] Trace forward_trace(const Tensor& image, const Tensor& mask) const;
    /// Backpropagates dL/d(output image) and accumulates parameter gradients.
    void backward(const Trace& trace, const Tensor& d_image);

    void init(std::uint64_t seed);
    void zero_grad();
    NamedParams params();
    [[nodiscard]] std::size_t parameter_count() const;

    [[nodiscard]] const ModelConfig& config() const { return config_; }
    /// Flags read by forward(); flipping them does not touch weights.
    void set_variant_flags(Variant v);

    Sequential& encoder_masked() { return encoder_masked_; }
    Sequential& encoder_shadow() { return encoder_shadow_; }
    FusionBlock& fusion() { return fusion_; }
    Sequential& decoder() { return decoder_; }
    [[nodiscard]] const Sequential& encoder_masked() const { return encoder_masked_; }
    [[nodiscard]] const Sequential& encoder_shadow() const { return encoder_shadow_; }
    [[nodiscard]] const FusionBlock& fusion() const { return fusion_; }
    [[nodiscard]] const Sequential& decoder() const { return decoder_; }

    [[nodiscard]] int input_channels() const;

private:
    [[nodiscard]] Tensor network_input(const Tensor& image, const Tensor& mask) const;

    ModelConfig config_{};
    Sequential encoder_masked_;  // the only encoder for naive / concat_input
    Sequential encoder_shadow_;
    FusionBlock fusion_;
    Sequential decoder_;  // bottleneck + decoder
    bool zero_masked_ = false;
    bool zero_shadow_ = false;
};

/// Encoder applied to [image, mask] (4 channels).
Tensor forward_encoder(const Sequential& encoder, const Tensor& image, const Tensor& mask);

Model build_naive_encoder_decoder(const ArchConfig& arch, std::uint64_t seed);
Model build_fusion_network(const ArchConfig& arch, std::uint64_t seed);

/// Derives an ablation from a built fusion model. Inference-only switches (no_sigmoid, no_w1,
/// no_w2, zero_*) keep every weight; no_fusion drops Conv_weight; concat_input rebuilds a 7-channel
/// encoder-decoder from `seed`.
Model make_ablation_variant(const Model& base, Variant variant, std::uint64_t seed);

/// PatchGAN-style discriminator: four strided convs (LeakyReLU) and a sigmoid head.
Sequential build_discriminator(int base_channels, std::uint64_t seed);

/// Clamp to [0,1] on the way forward; the backward pass lets gradients through wherever the
/// raw value is in range or the gradient points back into range.
Tensor clamp_unit(const Tensor& raw);
Tensor clamp_unit_backward(const Tensor& raw, const Tensor& d_out);

}  // namespace deshadow
