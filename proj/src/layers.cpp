#include "deshadow/layers.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace deshadow {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

constexpr double kLeakySlope = 0.2;

int conv_out_size(int in, int k, int s, int p) { return (in + 2 * p - k) / s + 1; }
int conv_transpose_out_size(int in, int k, int s, int p) { return (in - 1) * s - 2 * p + k; }

void im2col(const double* x, int channels, int h, int w, int k, int s, int p, int ho, int wo,
            double* col) {
    const int plane = ho * wo;
    for (int c = 0; c < channels; ++c) {
        for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
                double* dst = col + ((c * k + ky) * k + kx) * plane;
                for (int oy = 0; oy < ho; ++oy) {
                    const int iy = oy * s - p + ky;
                    double* row = dst + oy * wo;
                    if (iy < 0 || iy >= h) {
                        std::fill_n(row, wo, 0.0);
                        continue;
                    }
                    const double* src = x + (c * h + iy) * w;
                    for (int ox = 0; ox < wo; ++ox) {
                        const int ix = ox * s - p + kx;
                        row[ox] = (ix >= 0 && ix < w) ? src[ix] : 0.0;
                    }
                }
            }
        }
    }
}

// Scatter-add of im2col columns back onto the image grid.
void col2im(const double* col, int channels, int h, int w, int k, int s, int p, int ho, int wo,
            double* x) {
    const int plane = ho * wo;
    for (int c = 0; c < channels; ++c) {
        for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
                const double* src = col + ((c * k + ky) * k + kx) * plane;
                for (int oy = 0; oy < ho; ++oy) {
                    const int iy = oy * s - p + ky;
                    if (iy < 0 || iy >= h) continue;
                    double* dst = x + (c * h + iy) * w;
                    const double* row = src + oy * wo;
                    for (int ox = 0; ox < wo; ++ox) {
                        const int ix = ox * s - p + kx;
                        if (ix >= 0 && ix < w) dst[ix] += row[ox];
                    }
                }
            }
        }
    }
}

void check_conv_args(const Tensor& x, const Tensor& b, int in_dim) {
    if (x.shape().c != in_dim) {
        throw std::invalid_argument("conv: input has " + std::to_string(x.shape().c) +
                                    " channels, layer expects " + std::to_string(in_dim));
    }
    if (b.size() != static_cast<std::size_t>(b.shape().n)) {
        throw std::invalid_argument("conv: bias must be a vector");
    }
}

Tensor kaiming(Shape shape, double fan_in, std::mt19937_64& rng) {
    Tensor t(shape);
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan_in));
    for (double& v : t.values()) v = dist(rng);
    return t;
}

Param make_param(std::string name, Shape shape) {
    return Param{std::move(name), Tensor(shape), Tensor(shape)};
}

}  // namespace

std::string to_string(LayerKind kind) {
    switch (kind) {
        case LayerKind::conv: return "conv";
        case LayerKind::transposed_conv: return "transposed_conv";
        case LayerKind::relu: return "relu";
        case LayerKind::leaky_relu: return "leaky_relu";
        case LayerKind::sigmoid: return "sigmoid";
        case LayerKind::resnet_block: return "resnet_block";
    }
    return "unknown";
}

LayerKind layer_kind_from_string(const std::string& name) {
    for (LayerKind k : {LayerKind::conv, LayerKind::transposed_conv, LayerKind::relu,
                        LayerKind::leaky_relu, LayerKind::sigmoid, LayerKind::resnet_block}) {
        if (to_string(k) == name) return k;
    }
    throw std::invalid_argument("unknown layer kind '" + name + "'");
}

LayerSpec conv_spec(int in, int out, int kernel, int stride, int padding) {
    return {LayerKind::conv, in, out, kernel, stride, padding};
}
LayerSpec conv_transpose_spec(int in, int out, int kernel, int stride, int padding) {
    return {LayerKind::transposed_conv, in, out, kernel, stride, padding};
}
LayerSpec relu_spec(int channels) { return {LayerKind::relu, channels, channels, 0, 1, 0}; }
LayerSpec leaky_relu_spec(int channels) {
    return {LayerKind::leaky_relu, channels, channels, 0, 1, 0};
}
LayerSpec sigmoid_spec(int channels) { return {LayerKind::sigmoid, channels, channels, 0, 1, 0}; }
LayerSpec resnet_block_spec(int channels) {
    return {LayerKind::resnet_block, channels, channels, 3, 1, 1};
}

void validate(const LayerSpec& spec) {
    if (spec.in_channels <= 0 || spec.out_channels <= 0) {
        throw std::invalid_argument(to_string(spec.kind) + ": channel counts must be positive");
    }
    switch (spec.kind) {
        case LayerKind::conv:
        case LayerKind::transposed_conv:
            if (spec.kernel <= 0 || spec.stride <= 0 || spec.padding < 0) {
                throw std::invalid_argument(to_string(spec.kind) +
                                            ": kernel/stride must be positive, padding >= 0");
            }
            break;
        case LayerKind::resnet_block:
            if (spec.kernel != 3 || spec.stride != 1 || spec.padding != 1) {
                throw std::invalid_argument("resnet_block: expected 3x3 stride-1 pad-1 convs");
            }
            [[fallthrough]];
        default:
            if (spec.in_channels != spec.out_channels) {
                throw std::invalid_argument(to_string(spec.kind) + ": in/out channels must match");
            }
    }
}

Shape output_shape(const LayerSpec& spec, const Shape& in) {
    if (in.c != spec.in_channels) {
        throw std::invalid_argument(to_string(spec.kind) + ": input has " + std::to_string(in.c) +
                                    " channels, expected " + std::to_string(spec.in_channels));
    }
    switch (spec.kind) {
        case LayerKind::conv:
            return {in.n, spec.out_channels,
                    conv_out_size(in.h, spec.kernel, spec.stride, spec.padding),
                    conv_out_size(in.w, spec.kernel, spec.stride, spec.padding)};
        case LayerKind::transposed_conv:
            return {in.n, spec.out_channels,
                    conv_transpose_out_size(in.h, spec.kernel, spec.stride, spec.padding),
                    conv_transpose_out_size(in.w, spec.kernel, spec.stride, spec.padding)};
        default:
            return in;
    }
}

std::size_t parameter_count(const LayerSpec& spec) {
    const auto conv = static_cast<std::size_t>(spec.kernel) * spec.kernel * spec.in_channels *
                          spec.out_channels +
                      spec.out_channels;
    switch (spec.kind) {
        case LayerKind::conv:
        case LayerKind::transposed_conv: return conv;
        case LayerKind::resnet_block: return 2 * conv;
        default: return 0;
    }
}

Tensor conv2d_forward(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int padding) {
    const Shape& xs = x.shape();
    const Shape& ws = w.shape();
    check_conv_args(x, b, ws.c);
    const int k = ws.h;
    const int ho = conv_out_size(xs.h, k, stride, padding);
    const int wo = conv_out_size(xs.w, k, stride, padding);
    if (ho <= 0 || wo <= 0) throw std::invalid_argument("conv: input smaller than kernel");
    const int rows = ws.c * k * k;
    Tensor y({xs.n, ws.n, ho, wo});
    AlignedVector col(static_cast<std::size_t>(rows) * ho * wo);
    ConstMapMat wm(w.data(), ws.n, rows);
    for (int n = 0; n < xs.n; ++n) {
        im2col(x.sample(n), xs.c, xs.h, xs.w, k, stride, padding, ho, wo, col.data());
        MapMat ym(y.sample(n), ws.n, ho * wo);
        ym.noalias() = wm * ConstMapMat(col.data(), rows, ho * wo);
        for (int o = 0; o < ws.n; ++o) ym.row(o).array() += b[o];
    }
    return y;
}

void conv2d_backward(const Tensor& x, const Tensor& w, const Tensor& dy, int stride, int padding,
                     Tensor* dx, Tensor* dw, Tensor* db) {
    const Shape& xs = x.shape();
    const Shape& ws = w.shape();
    const Shape& ys = dy.shape();
    const int k = ws.h;
    const int rows = ws.c * k * k;
    const int plane = ys.h * ys.w;
    AlignedVector col(static_cast<std::size_t>(rows) * plane);
    ConstMapMat wm(w.data(), ws.n, rows);
    if (dx != nullptr) *dx = Tensor(xs);
    for (int n = 0; n < xs.n; ++n) {
        ConstMapMat dym(dy.sample(n), ys.c, plane);
        if (dw != nullptr) {
            im2col(x.sample(n), xs.c, xs.h, xs.w, k, stride, padding, ys.h, ys.w, col.data());
            MapMat dwm(dw->data(), ws.n, rows);
            dwm.noalias() += dym * ConstMapMat(col.data(), rows, plane).transpose();
        }
        if (db != nullptr) {
            for (int o = 0; o < ys.c; ++o) (*db)[o] += dym.row(o).sum();
        }
        if (dx != nullptr) {
            MapMat colm(col.data(), rows, plane);
            colm.noalias() = wm.transpose() * dym;
            col2im(col.data(), xs.c, xs.h, xs.w, k, stride, padding, ys.h, ys.w, dx->sample(n));
        }
    }
}

Tensor conv_transpose2d_forward(const Tensor& x, const Tensor& w, const Tensor& b, int stride,
                                int padding) {
    const Shape& xs = x.shape();
    const Shape& ws = w.shape();
    check_conv_args(x, b, ws.n);
    const int k = ws.h;
    const int out_c = ws.c;
    const int ho = conv_transpose_out_size(xs.h, k, stride, padding);
    const int wo = conv_transpose_out_size(xs.w, k, stride, padding);
    if (ho <= 0 || wo <= 0) throw std::invalid_argument("conv_transpose: empty output");
    const int rows = out_c * k * k;
    const int plane = xs.h * xs.w;
    Tensor y({xs.n, out_c, ho, wo});
    AlignedVector col(static_cast<std::size_t>(rows) * plane);
    ConstMapMat wm(w.data(), ws.n, rows);
    for (int n = 0; n < xs.n; ++n) {
        MapMat colm(col.data(), rows, plane);
        colm.noalias() = wm.transpose() * ConstMapMat(x.sample(n), xs.c, plane);
        col2im(col.data(), out_c, ho, wo, k, stride, padding, xs.h, xs.w, y.sample(n));
        MapMat ym(y.sample(n), out_c, ho * wo);
        for (int o = 0; o < out_c; ++o) ym.row(o).array() += b[o];
    }
    return y;
}

void conv_transpose2d_backward(const Tensor& x, const Tensor& w, const Tensor& dy, int stride,
                               int padding, Tensor* dx, Tensor* dw, Tensor* db) {
    const Shape& xs = x.shape();
    const Shape& ws = w.shape();
    const Shape& ys = dy.shape();
    const int k = ws.h;
    const int rows = ws.c * k * k;
    const int plane = xs.h * xs.w;
    AlignedVector col(static_cast<std::size_t>(rows) * plane);
    ConstMapMat wm(w.data(), ws.n, rows);
    if (dx != nullptr) *dx = Tensor(xs);
    for (int n = 0; n < xs.n; ++n) {
        im2col(dy.sample(n), ys.c, ys.h, ys.w, k, stride, padding, xs.h, xs.w, col.data());
        ConstMapMat colm(col.data(), rows, plane);
        if (dw != nullptr) {
            MapMat dwm(dw->data(), ws.n, rows);
            dwm.noalias() += ConstMapMat(x.sample(n), xs.c, plane) * colm.transpose();
        }
        if (db != nullptr) {
            ConstMapMat dym(dy.sample(n), ys.c, ys.h * ys.w);
            for (int o = 0; o < ys.c; ++o) (*db)[o] += dym.row(o).sum();
        }
        if (dx != nullptr) {
            MapMat dxm(dx->sample(n), xs.c, plane);
            dxm.noalias() = wm * colm;
        }
    }
}

Layer::Layer(LayerSpec spec) : spec_(spec) {
    validate(spec_);
    const int k = spec_.kernel;
    switch (spec_.kind) {
        case LayerKind::conv:
            params_.push_back(make_param("weight", {spec_.out_channels, spec_.in_channels, k, k}));
            params_.push_back(make_param("bias", {spec_.out_channels, 1, 1, 1}));
            break;
        case LayerKind::transposed_conv:
            params_.push_back(make_param("weight", {spec_.in_channels, spec_.out_channels, k, k}));
            params_.push_back(make_param("bias", {spec_.out_channels, 1, 1, 1}));
            break;
        case LayerKind::resnet_block: {
            const int c = spec_.in_channels;
            params_.push_back(make_param("conv1.weight", {c, c, 3, 3}));
            params_.push_back(make_param("conv1.bias", {c, 1, 1, 1}));
            params_.push_back(make_param("conv2.weight", {c, c, 3, 3}));
            params_.push_back(make_param("conv2.bias", {c, 1, 1, 1}));
            break;
        }
        default: break;
    }
}

void Layer::init(std::mt19937_64& rng) {
    const double kk = static_cast<double>(spec_.kernel) * spec_.kernel;
    switch (spec_.kind) {
        case LayerKind::conv:
            params_[0].value = kaiming(params_[0].value.shape(), spec_.in_channels * kk, rng);
            params_[1].value.set_zero();
            break;
        case LayerKind::transposed_conv: {
            const double s2 = static_cast<double>(spec_.stride) * spec_.stride;
            params_[0].value =
                kaiming(params_[0].value.shape(), std::max(1.0, spec_.in_channels * kk / s2), rng);
            params_[1].value.set_zero();
            break;
        }
        case LayerKind::resnet_block:
            params_[0].value = kaiming(params_[0].value.shape(), spec_.in_channels * 9.0, rng);
            params_[1].value.set_zero();
            params_[2].value = kaiming(params_[2].value.shape(), spec_.in_channels * 9.0, rng);
            params_[3].value.set_zero();
            break;
        default: break;
    }
    for (Param& p : params_) p.grad.set_zero();
}

Tensor Layer::forward(const Tensor& x) const {
    output_shape(spec_, x.shape());
    switch (spec_.kind) {
        case LayerKind::conv:
            return conv2d_forward(x, params_[0].value, params_[1].value, spec_.stride,
                                  spec_.padding);
        case LayerKind::transposed_conv:
            return conv_transpose2d_forward(x, params_[0].value, params_[1].value, spec_.stride,
                                            spec_.padding);
        case LayerKind::relu: {
            Tensor y = x;
            for (double& v : y.values()) v = v > 0.0 ? v : 0.0;
            return y;
        }
        case LayerKind::leaky_relu: {
            Tensor y = x;
            for (double& v : y.values()) v = v > 0.0 ? v : kLeakySlope * v;
            return y;
        }
        case LayerKind::sigmoid: {
            Tensor y = x;
            for (double& v : y.values()) v = 1.0 / (1.0 + std::exp(-v));
            return y;
        }
        case LayerKind::resnet_block: {
            // y = x + relu(conv2(relu(conv1(x))))
            Tensor h = conv2d_forward(x, params_[0].value, params_[1].value, 1, 1);
            for (double& v : h.values()) v = v > 0.0 ? v : 0.0;
            Tensor r = conv2d_forward(h, params_[2].value, params_[3].value, 1, 1);
            Tensor y = x;
            for (std::size_t i = 0; i < y.size(); ++i) y[i] += r[i] > 0.0 ? r[i] : 0.0;
            return y;
        }
    }
    throw std::logic_error("unreachable layer kind");
}

Tensor Layer::backward(const Tensor& x, const Tensor& y, const Tensor& dy, bool need_dx,
                       bool param_grads) {
    return backward_impl(x, y, dy, need_dx, param_grads ? &params_ : nullptr);
}

Tensor Layer::input_gradient(const Tensor& x, const Tensor& y, const Tensor& dy) const {
    return backward_impl(x, y, dy, true, nullptr);
}

Tensor Layer::backward_impl(const Tensor& x, const Tensor& y, const Tensor& dy, bool need_dx,
                            std::vector<Param>* grads) const {
    Tensor dx;
    auto grad_of = [&](std::size_t i) { return grads != nullptr ? &(*grads)[i].grad : nullptr; };
    switch (spec_.kind) {
        case LayerKind::conv:
            conv2d_backward(x, params_[0].value, dy, spec_.stride, spec_.padding,
                            need_dx ? &dx : nullptr, grad_of(0), grad_of(1));
            return dx;
        case LayerKind::transposed_conv:
            conv_transpose2d_backward(x, params_[0].value, dy, spec_.stride, spec_.padding,
                                      need_dx ? &dx : nullptr, grad_of(0), grad_of(1));
            return dx;
        case LayerKind::relu:
            dx = dy;
            for (std::size_t i = 0; i < dx.size(); ++i) {
                if (y[i] <= 0.0) dx[i] = 0.0;
            }
            return dx;
        case LayerKind::leaky_relu:
            dx = dy;
            for (std::size_t i = 0; i < dx.size(); ++i) {
                if (x[i] <= 0.0) dx[i] *= kLeakySlope;
            }
            return dx;
        case LayerKind::sigmoid:
            dx = dy;
            for (std::size_t i = 0; i < dx.size(); ++i) dx[i] *= y[i] * (1.0 - y[i]);
            return dx;
        case LayerKind::resnet_block: {
            // Recompute the hidden activation instead of caching it.
            Tensor h = conv2d_forward(x, params_[0].value, params_[1].value, 1, 1);
            for (double& v : h.values()) v = v > 0.0 ? v : 0.0;
            Tensor dr = dy;
            for (std::size_t i = 0; i < dr.size(); ++i) {
                if (y[i] - x[i] <= 0.0) dr[i] = 0.0;
            }
            Tensor dh;
            conv2d_backward(h, params_[2].value, dr, 1, 1, &dh, grad_of(2), grad_of(3));
            for (std::size_t i = 0; i < dh.size(); ++i) {
                if (h[i] <= 0.0) dh[i] = 0.0;
            }
            Tensor dx_branch;
            conv2d_backward(x, params_[0].value, dh, 1, 1, need_dx ? &dx_branch : nullptr,
                            grad_of(0), grad_of(1));
            if (!need_dx) return dx;
            dx = dy;
            dx += dx_branch;
            return dx;
        }
    }
    throw std::logic_error("unreachable layer kind");
}

Sequential::Sequential(const std::vector<LayerSpec>& specs) {
    if (!specs.empty()) validate_chain(specs, specs.front().in_channels);
    layers_.reserve(specs.size());
    for (const LayerSpec& s : specs) layers_.emplace_back(s);
}

Tensor Sequential::forward(const Tensor& x) const {
    Tensor h = x;
    for (const Layer& l : layers_) h = l.forward(h);
    return h;
}

std::vector<Tensor> Sequential::forward_trace(const Tensor& x) const {
    std::vector<Tensor> trace;
    trace.reserve(layers_.size() + 1);
    trace.push_back(x);
    for (const Layer& l : layers_) trace.push_back(l.forward(trace.back()));
    return trace;
}

Tensor Sequential::backward(const std::vector<Tensor>& trace, const Tensor& dy, bool need_dx,
                            bool param_grads) {
    if (trace.size() != layers_.size() + 1) {
        throw std::invalid_argument("Sequential::backward: trace does not match layer count");
    }
    Tensor grad = dy;
    for (std::size_t i = layers_.size(); i-- > 0;) {
        const bool want = need_dx || i > 0;
        grad = layers_[i].backward(trace[i], trace[i + 1], grad, want, param_grads);
    }
    return grad;
}

Tensor Sequential::input_gradient(const std::vector<Tensor>& trace, const Tensor& dy) const {
    if (trace.size() != layers_.size() + 1) {
        throw std::invalid_argument("Sequential::input_gradient: trace does not match layer count");
    }
    Tensor grad = dy;
    for (std::size_t i = layers_.size(); i-- > 0;) {
        grad = layers_[i].input_gradient(trace[i], trace[i + 1], grad);
    }
    return grad;
}

void Sequential::zero_grad() {
    for (Layer& l : layers_) {
        for (Param& p : l.params()) p.grad.set_zero();
    }
}

void Sequential::init(std::mt19937_64& rng) {
    for (Layer& l : layers_) l.init(rng);
}

Shape Sequential::output_shape(Shape in) const {
    for (const Layer& l : layers_) in = deshadow::output_shape(l.spec(), in);
    return in;
}

std::vector<LayerSpec> Sequential::specs() const {
    std::vector<LayerSpec> out;
    out.reserve(layers_.size());
    for (const Layer& l : layers_) out.push_back(l.spec());
    return out;
}

void Sequential::collect(const std::string& prefix, NamedParams& out) {
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        for (Param& p : layers_[i].params()) {
            out.emplace_back(prefix + "." + std::to_string(i) + "." + p.name, &p);
        }
    }
}

void validate_chain(const std::vector<LayerSpec>& specs, int expected_in) {
    int channels = expected_in;
    for (std::size_t i = 0; i < specs.size(); ++i) {
        validate(specs[i]);
        if (specs[i].in_channels != channels) {
            throw std::invalid_argument("layer " + std::to_string(i) + " (" +
                                        to_string(specs[i].kind) + ") expects " +
                                        std::to_string(specs[i].in_channels) +
                                        " input channels but receives " + std::to_string(channels));
        }
        channels = specs[i].out_channels;
    }
}

}  // namespace deshadow
