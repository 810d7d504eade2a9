#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "deshadow/tensor.hpp"

namespace deshadow {

enum class LayerKind { conv, transposed_conv, relu, leaky_relu, sigmoid, resnet_block };

std::string to_string(LayerKind kind);
LayerKind layer_kind_from_string(const std::string& name);

/// Declarative description of one layer. Activations carry in == out channels.
struct LayerSpec {
    LayerKind kind = LayerKind::conv;
    int in_channels = 0;
    int out_channels = 0;
    int kernel = 0;
    int stride = 1;
    int padding = 0;

    friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

LayerSpec conv_spec(int in, int out, int kernel, int stride, int padding);
LayerSpec conv_transpose_spec(int in, int out, int kernel, int stride, int padding);
LayerSpec relu_spec(int channels);
LayerSpec leaky_relu_spec(int channels);
LayerSpec sigmoid_spec(int channels);
LayerSpec resnet_block_spec(int channels);

/// Throws std::invalid_argument when a spec is malformed (non-positive kernel, etc.).
void validate(const LayerSpec& spec);
/// Spatial/channel output shape for a given input shape; throws on channel mismatch.
Shape output_shape(const LayerSpec& spec, const Shape& in);
/// Number of trainable scalars: k*k*in*out + out per conv, twice that for a resnet block.
std::size_t parameter_count(const LayerSpec& spec);

struct Param {
    std::string name;
    Tensor value;
    Tensor grad;
};

using NamedParams = std::vector<std::pair<std::string, Param*>>;

// Raw convolution kernels. Weights use (out, in, k, k) for conv and (in, out, k, k) for the
// transposed conv. Backward passes accumulate into dw/db; null outputs are skipped.
Tensor conv2d_forward(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int padding);
void conv2d_backward(const Tensor& x, const Tensor& w, const Tensor& dy, int stride, int padding,
                     Tensor* dx, Tensor* dw, Tensor* db);
Tensor conv_transpose2d_forward(const Tensor& x, const Tensor& w, const Tensor& b, int stride,
                                int padding);
void conv_transpose2d_backward(const Tensor& x, const Tensor& w, const Tensor& dy, int stride,
                               int padding, Tensor* dx, Tensor* dw, Tensor* db);

/// A single network layer with value semantics. Parameters live inline so that models can be
/// copied freely (the cadence study fine-tunes copies of checkpoints).
class Layer {
public:
    explicit Layer(LayerSpec spec);

    [[nodiscard]] const LayerSpec& spec() const { return spec_; }

    void init(std::mt19937_64& rng);

    [[nodiscard]] Tensor forward(const Tensor& x) const;
    /// Accumulates parameter gradients (unless `param_grads` is false); returns dL/dx unless
    /// `need_dx` is false.
    Tensor backward(const Tensor& x, const Tensor& y, const Tensor& dy, bool need_dx = true,
                    bool param_grads = true);
    /// dL/dx only; parameters and their gradients are untouched.
    [[nodiscard]] Tensor input_gradient(const Tensor& x, const Tensor& y, const Tensor& dy) const;

    std::vector<Param>& params() { return params_; }
    [[nodiscard]] const std::vector<Param>& params() const { return params_; }

private:
    Tensor backward_impl(const Tensor& x, const Tensor& y, const Tensor& dy, bool need_dx,
                         std::vector<Param>* grads) const;

    LayerSpec spec_;
    std::vector<Param> params_;
};

/// Chain of layers; `forward_trace` records every intermediate output for backward.
class Sequential {
public:
    Sequential() = default;
    explicit Sequential(const std::vector<LayerSpec>& specs);

    [[nodiscard]] Tensor forward(const Tensor& x) const;
    /// trace[0] = input, trace[i+1] = output of layer i.
    [[nodiscard]] std::vector<Tensor> forward_trace(const Tensor& x) const;
    Tensor backward(const std::vector<Tensor>& trace, const Tensor& dy, bool need_dx = true,
                    bool param_grads = true);
    [[nodiscard]] Tensor input_gradient(const std::vector<Tensor>& trace, const Tensor& dy) const;
    void zero_grad();

    void init(std::mt19937_64& rng);
    [[nodiscard]] Shape output_shape(Shape in) const;
    [[nodiscard]] std::vector<LayerSpec> specs() const;

    std::vector<Layer>& layers() { return layers_; }
    [[nodiscard]] const std::vector<Layer>& layers() const { return layers_; }

    /// Appends (qualified name, param) pairs, e.g. "encoder.0.weight".
    void collect(const std::string& prefix, NamedParams& out);

private:
    std::vector<Layer> layers_;
};

/// Checks that consecutive specs agree on channel counts; throws std::invalid_argument otherwise.
void validate_chain(const std::vector<LayerSpec>& specs, int expected_in);

}  // namespace deshadow
