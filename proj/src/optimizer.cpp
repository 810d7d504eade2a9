#include "deshadow/optimizer.hpp"

#include <cmath>
#include <stdexcept>

namespace deshadow {

void Adam::step(const NamedParams& params) {
    ++steps_;
    const double t = static_cast<double>(steps_);
    const double c1 = 1.0 - std::pow(config_.beta1, t);
    const double c2 = 1.0 - std::pow(config_.beta2, t);
    for (const auto& [name, p] : params) {
        auto [mit, fresh_m] = m_.try_emplace(name, p->value.shape());
        auto [vit, fresh_v] = v_.try_emplace(name, p->value.shape());
        Tensor& m = mit->second;
        Tensor& v = vit->second;
        if (m.shape() != p->value.shape() || p->grad.shape() != p->value.shape()) {
            throw std::invalid_argument("Adam: shape mismatch for parameter " + name);
        }
        for (std::size_t i = 0; i < m.size(); ++i) {
            const double g = p->grad[i];
            m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * g;
            v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * g * g;
            p->value[i] -= config_.learning_rate * (m[i] / c1) / (std::sqrt(v[i] / c2) + config_.epsilon);
        }
    }
}

void Adam::export_state(const std::string& prefix, std::map<std::string, Tensor>& out) const {
    for (const auto& [name, t] : m_) out.emplace(prefix + ".m." + name, t);
    for (const auto& [name, t] : v_) out.emplace(prefix + ".v." + name, t);
}

void Adam::import_state(const std::string& prefix, const std::map<std::string, Tensor>& in,
                        std::int64_t steps) {
    m_.clear();
    v_.clear();
    const std::string pm = prefix + ".m.";
    const std::string pv = prefix + ".v.";
    for (const auto& [key, t] : in) {
        if (key.starts_with(pm)) m_.emplace(key.substr(pm.size()), t);
        if (key.starts_with(pv)) v_.emplace(key.substr(pv.size()), t);
    }
    steps_ = steps;
}

}  // namespace deshadow
