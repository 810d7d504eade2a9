#pragma once

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "deshadow/image.hpp"
#include "deshadow/layers.hpp"
#include "deshadow/tensor.hpp"

namespace deshadow {

struct LossWeights {
    double lambda1 = 1.0;    // l1
    double lambda2 = 0.1;    // adversarial
    double lambda3 = 0.1;    // perceptual
    double lambda4 = 250.0;  // style

    /// Throws std::invalid_argument if any weight is negative or not finite.
    void validate() const;
    friend bool operator==(const LossWeights&, const LossWeights&) = default;
};

struct LossComponents {
    double l1 = 0.0;
    double gan = 0.0;
    double perceptual = 0.0;
    double style = 0.0;
};

/// mean|pred - target| / Mean(M). Tensors are (N,3,H,W) with an (N,1,H,W) mask. When Mean(M) is 0
/// the plain mean absolute error is returned (and logged). `grad` receives dL/dpred if non-null.
double masked_l1(const Tensor& pred, const Tensor& target, const Tensor& mask,
                 Tensor* grad = nullptr);
double masked_l1(const ImageTensor& pred, const ImageTensor& target, const BinaryMask& mask);

enum class GanMode { standard, literal };
std::string to_string(GanMode m);
GanMode gan_mode_from_string(const std::string& s);

inline constexpr double kProbabilityEpsilon = 1e-7;

struct GanLosses {
    double gen = 0.0;
    double disc = 0.0;
};

/// Discriminator probabilities are clamped to [eps, 1-eps].
///   standard: gen = -mean log D(fake);   disc = -1/2 mean log D(real) - 1/2 mean log(1 - D(fake))
///   literal:  gen =  mean log(1-D(fake)); disc =  1/2 mean log D(fake) + 1/2 mean log(1 - D(real))
GanLosses gan_losses(const Tensor& disc_real, const Tensor& disc_fake,
                     GanMode mode = GanMode::standard);
/// Generator term and its gradient w.r.t. the fake probabilities.
double gan_generator_loss(const Tensor& disc_fake, GanMode mode, Tensor* d_fake = nullptr);
/// Discriminator term and its gradients w.r.t. both probability maps.
double gan_discriminator_loss(const Tensor& disc_real, const Tensor& disc_fake, GanMode mode,
                              Tensor* d_real = nullptr, Tensor* d_fake = nullptr);

struct ExtractorConfig {
    /// Output channels of the five stages. Stage 1 keeps the resolution, later stages halve it.
    std::array<int, 5> channels = {16, 32, 64, 64, 64};
    std::uint64_t seed = 0;
    friend bool operator==(const ExtractorConfig&, const ExtractorConfig&) = default;
};

/// Fixed five-stage conv/ReLU stack; the ReLU outputs are the feature taps. Weights are drawn
/// once from the seed (or loaded) and never trained.
class FeatureExtractor {
public:
    static constexpr int kTaps = 5;

    FeatureExtractor() = default;
    explicit FeatureExtractor(const ExtractorConfig& config);

    [[nodiscard]] bool initialized() const { return initialized_; }
    [[nodiscard]] const ExtractorConfig& config() const { return config_; }

    /// trace[0] = input; taps are trace[2], trace[4], ..., trace[10].
    [[nodiscard]] std::vector<Tensor> forward_trace(const Tensor& x) const;
    [[nodiscard]] static const Tensor& tap(const std::vector<Tensor>& trace, int i);
    /// Gradient w.r.t. the input given per-tap gradients (empty tensors are treated as zero).
    [[nodiscard]] Tensor input_gradient(const std::vector<Tensor>& trace,
                                        const std::vector<Tensor>& d_taps) const;

    void save(const std::filesystem::path& path) const;
    static FeatureExtractor load(const std::filesystem::path& path);

    Sequential& stack() { return stack_; }
    [[nodiscard]] const Sequential& stack() const { return stack_; }

private:
    void require_initialized() const;

    ExtractorConfig config_{};
    Sequential stack_;
    bool initialized_ = false;
};

/// Per-sample Gram matrix: G[i,j] = sum_p f_i(p) f_j(p) / (C*H*W).
Eigen::MatrixXd gram(const Tensor& features, int sample = 0);

/// Sum over taps of the mean absolute feature difference. `grad` receives dL/dpred if non-null.
double perceptual_loss(const FeatureExtractor& extractor, const Tensor& pred, const Tensor& target,
                       Tensor* grad = nullptr);
double perceptual_loss(const FeatureExtractor& extractor, const ImageTensor& pred,
                       const ImageTensor& target);

/// Sum over taps of the mean absolute difference between Gram matrices of features of the
/// mask-multiplied images. `grad` receives dL/dpred if non-null.
double style_loss(const FeatureExtractor& extractor, const Tensor& pred, const Tensor& target,
                  const Tensor& mask, Tensor* grad = nullptr);
double style_loss(const FeatureExtractor& extractor, const ImageTensor& pred,
                  const ImageTensor& target, const BinaryMask& mask);

/// lambda1*l1 + lambda2*gan + lambda3*perceptual + lambda4*style. A non-finite component raises
/// std::domain_error naming it.
double total_inpaint_loss(const LossWeights& weights, const LossComponents& components);

}  // namespace deshadow
