#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "deshadow/layers.hpp"
#include "deshadow/tensor.hpp"

namespace deshadow {

struct AdamConfig {
    double learning_rate = 5e-5;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

/// Adam without weight decay. Moments are keyed by parameter name so state survives a
/// save/load cycle regardless of parameter ordering.
class Adam {
public:
    Adam() = default;
    explicit Adam(AdamConfig config) : config_(config) {}

    void step(const NamedParams& params);

    [[nodiscard]] const AdamConfig& config() const { return config_; }
    void set_learning_rate(double lr) { config_.learning_rate = lr; }
    [[nodiscard]] std::int64_t steps() const { return steps_; }

    /// Moments as "<prefix>.m.<param>" / "<prefix>.v.<param>" tensors.
    void export_state(const std::string& prefix, std::map<std::string, Tensor>& out) const;
    void import_state(const std::string& prefix, const std::map<std::string, Tensor>& in,
                      std::int64_t steps);

private:
    AdamConfig config_{};
    std::int64_t steps_ = 0;
    std::map<std::string, Tensor> m_;
    std::map<std::string, Tensor> v_;
};

}  // namespace deshadow
