#include "deshadow/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace deshadow {

std::string to_string(const Shape& s) {
    return "(" + std::to_string(s.n) + ", " + std::to_string(s.c) + ", " + std::to_string(s.h) +
           ", " + std::to_string(s.w) + ")";
}

Tensor::Tensor(Shape shape, double fill) : shape_(shape), data_(shape.numel(), fill) {
    if (shape.n < 0 || shape.c < 0 || shape.h < 0 || shape.w < 0) {
        throw std::invalid_argument("negative tensor dimension " + to_string(shape));
    }
}

Tensor::Tensor(Shape shape, std::vector<double> values) : shape_(shape), data_(values.begin(), values.end()) {
    if (data_.size() != shape.numel()) {
        throw std::invalid_argument("tensor value count does not match shape " + to_string(shape));
    }
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

Tensor& Tensor::operator+=(const Tensor& other) {
    if (other.shape_ != shape_) {
        throw std::invalid_argument("tensor add: shape mismatch " + to_string(shape_) + " vs " +
                                    to_string(other.shape_));
    }
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
    return *this;
}

Tensor& Tensor::operator*=(double s) {
    for (double& v : data_) v *= s;
    return *this;
}

bool Tensor::all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    if (sa.n != sb.n || sa.h != sb.h || sa.w != sb.w) {
        throw std::invalid_argument("concat_channels: incompatible shapes " + to_string(sa) +
                                    " and " + to_string(sb));
    }
    Tensor out({sa.n, sa.c + sb.c, sa.h, sa.w});
    for (int n = 0; n < sa.n; ++n) {
        std::copy_n(a.sample(n), sa.sample(), out.sample(n));
        std::copy_n(b.sample(n), sb.sample(), out.sample(n) + sa.sample());
    }
    return out;
}

void split_channels(const Tensor& t, int channels_a, Tensor& a, Tensor& b) {
    const Shape& s = t.shape();
    if (channels_a < 0 || channels_a > s.c) {
        throw std::invalid_argument("split_channels: bad split point");
    }
    a = Tensor({s.n, channels_a, s.h, s.w});
    b = Tensor({s.n, s.c - channels_a, s.h, s.w});
    for (int n = 0; n < s.n; ++n) {
        std::copy_n(t.sample(n), a.shape().sample(), a.sample(n));
        std::copy_n(t.sample(n) + a.shape().sample(), b.shape().sample(), b.sample(n));
    }
}

}  // namespace deshadow
