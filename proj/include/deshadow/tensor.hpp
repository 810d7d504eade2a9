#pragma once

#include <array>
#include <cstddef>
#include <new>
#include <span>
#include <string>
#include <vector>

namespace deshadow {

/// Over-aligned allocation so vectorized kernels see the same alignment on every run (their
/// summation order, and hence the rounding, depends on it).
template <typename T>
struct AlignedAllocator {
    using value_type = T;
    static constexpr std::align_val_t kAlignment{64};

    AlignedAllocator() = default;
    template <typename U>
    AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

    T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlignment)); }
    void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlignment); }

    template <typename U>
    friend bool operator==(const AlignedAllocator&, const AlignedAllocator<U>&) {
        return true;
    }
};

using AlignedVector = std::vector<double, AlignedAllocator<double>>;

/// Batch-major 4-D shape (N, C, H, W).
struct Shape {
    int n = 0;
    int c = 0;
    int h = 0;
    int w = 0;

    [[nodiscard]] std::size_t numel() const {
        return static_cast<std::size_t>(n) * c * h * w;
    }
    [[nodiscard]] std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
    [[nodiscard]] std::size_t sample() const { return static_cast<std::size_t>(c) * h * w; }

    friend bool operator==(const Shape&, const Shape&) = default;
};

std::string to_string(const Shape& s);

/// Dense NCHW tensor of doubles. Value semantics.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, double fill = 0.0);
    Tensor(Shape shape, std::vector<double> values);

    [[nodiscard]] const Shape& shape() const { return shape_; }
    [[nodiscard]] std::size_t size() const { return data_.size(); }
    [[nodiscard]] bool empty() const { return data_.empty(); }

    double* data() { return data_.data(); }
    [[nodiscard]] const double* data() const { return data_.data(); }
    std::span<double> values() { return data_; }
    [[nodiscard]] std::span<const double> values() const { return data_; }
    AlignedVector& storage() { return data_; }
    [[nodiscard]] const AlignedVector& storage() const { return data_; }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    double& at(int n, int c, int y, int x) {
        return data_[index(n, c, y, x)];
    }
    [[nodiscard]] double at(int n, int c, int y, int x) const {
        return data_[index(n, c, y, x)];
    }

    /// Pointer to sample n (C*H*W contiguous values).
    double* sample(int n) { return data_.data() + n * shape_.sample(); }
    [[nodiscard]] const double* sample(int n) const {
        return data_.data() + n * shape_.sample();
    }

    void fill(double v);
    void set_zero() { fill(0.0); }

    Tensor& operator+=(const Tensor& other);
    Tensor& operator*=(double s);

    [[nodiscard]] bool all_finite() const;

    friend bool operator==(const Tensor&, const Tensor&) = default;

private:
    [[nodiscard]] std::size_t index(int n, int c, int y, int x) const {
        return ((static_cast<std::size_t>(n) * shape_.c + c) * shape_.h + y) * shape_.w + x;
    }

    Shape shape_{};
    AlignedVector data_;
};

/// Concatenate along channels. Batch and spatial dims must match.
Tensor concat_channels(const Tensor& a, const Tensor& b);
/// Inverse of concat_channels: first `channels_a` channels go to `a`.
void split_channels(const Tensor& t, int channels_a, Tensor& a, Tensor& b);

}  // namespace deshadow
