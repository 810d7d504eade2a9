#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "deshadow/config.hpp"
#include "deshadow/image.hpp"
#include "deshadow/layers.hpp"
#include "deshadow/tensor.hpp"

namespace testing_support {

using deshadow::BinaryMask;
using deshadow::ImageTensor;
using deshadow::Shape;
using deshadow::Tensor;

inline Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> u(lo, hi);
    Tensor t(shape);
    for (double& v : t.values()) v = u(rng);
    return t;
}

inline ImageTensor random_image(int h, int w, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    ImageTensor img(h, w);
    for (double& v : img.values()) v = u(rng);
    return img;
}

inline BinaryMask random_mask(int h, int w, std::mt19937_64& rng, double p = 0.5) {
    std::bernoulli_distribution b(p);
    BinaryMask m(h, w);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) m.set(y, x, b(rng));
    }
    return m;
}

inline double dot(const Tensor& a, const Tensor& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

/// Largest relative error |a - n| / max(1, |a|, |n|) between analytic and central-difference
/// gradients of `loss` w.r.t. every element of `x`.
inline double gradient_error(Tensor& x, const Tensor& analytic, const std::function<double()>& loss,
                             double step = 1e-4) {
    double worst = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double saved = x[i];
        x[i] = saved + step;
        const double up = loss();
        x[i] = saved - step;
        const double down = loss();
        x[i] = saved;
        const double numeric = (up - down) / (2.0 * step);
        const double scale = std::max({1.0, std::abs(numeric), std::abs(analytic[i])});
        worst = std::max(worst, std::abs(numeric - analytic[i]) / scale);
    }
    return worst;
}

/// Fresh, empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
    const auto dir = std::filesystem::temp_directory_path() / ("deshadow_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::trunc);
    out << text;
}

/// A few-second configuration: 16px images, width-4 networks, one residual block.
inline std::string tiny_config_text(const std::filesystem::path& out_dir, int iterations = 6) {
    const std::string it = std::to_string(iterations);
    return "seed = 3\n"
           "[output]\ndir = \"" + out_dir.string() + "\"\n"
           "[data]\nimage_size = 16\nsynthetic_train = 6\nsynthetic_test = 3\n"
           "synthetic_inpaint = 4\ninpaint_val = 2\n"
           "[model]\nbase_channels = 4\nres_blocks = 1\n"
           "[pretrain]\niterations = " + it + "\nbatch_size = 2\nlearning_rate = 1e-3\n"
           "checkpoint_every = 2\nlog_every = 2\ndiscriminator_channels = 4\n"
           "extractor_channels = \"4,4,4,4,4\"\n"
           "[finetune]\niterations = " + it + "\nbatch_size = 2\nlearning_rate = 1e-3\n"
           "checkpoint_every = 2\nlog_every = 2\n"
           "[cadence]\nevery = 2\n";
}

inline deshadow::ExperimentConfig tiny_config(const std::filesystem::path& out_dir,
                                              int iterations = 6) {
    std::istringstream in(tiny_config_text(out_dir, iterations));
    return deshadow::parse_experiment_config(in);
}

}  // namespace testing_support
