#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "deshadow/tensor.hpp"

namespace deshadow {

/// H x W x 3 floating image in planar (CHW) layout, values nominally in [0,1].
class ImageTensor {
public:
    static constexpr int kChannels = 3;

    ImageTensor() = default;
    ImageTensor(int height, int width, double fill = 0.0);

    [[nodiscard]] int height() const { return height_; }
    [[nodiscard]] int width() const { return width_; }
    [[nodiscard]] std::size_t pixels() const { return static_cast<std::size_t>(height_) * width_; }
    [[nodiscard]] bool empty() const { return data_.empty(); }

    double& at(int c, int y, int x) { return data_[(static_cast<std::size_t>(c) * height_ + y) * width_ + x]; }
    [[nodiscard]] double at(int c, int y, int x) const {
        return data_[(static_cast<std::size_t>(c) * height_ + y) * width_ + x];
    }

    std::vector<double>& values() { return data_; }
    [[nodiscard]] const std::vector<double>& values() const { return data_; }

    [[nodiscard]] bool same_size(const ImageTensor& o) const {
        return height_ == o.height_ && width_ == o.width_;
    }

    friend bool operator==(const ImageTensor&, const ImageTensor&) = default;

private:
    int height_ = 0;
    int width_ = 0;
    std::vector<double> data_;
};

/// H x W mask with values exactly 0 or 1 (1 = shadow / corrupted).
class BinaryMask {
public:
    BinaryMask() = default;
    BinaryMask(int height, int width, std::uint8_t fill = 0);

    [[nodiscard]] int height() const { return height_; }
    [[nodiscard]] int width() const { return width_; }
    [[nodiscard]] std::size_t pixels() const { return values_.size(); }

    [[nodiscard]] std::uint8_t at(int y, int x) const {
        return values_[static_cast<std::size_t>(y) * width_ + x];
    }
    void set(int y, int x, bool on) {
        values_[static_cast<std::size_t>(y) * width_ + x] = on ? 1 : 0;
    }
    [[nodiscard]] std::span<const std::uint8_t> values() const { return values_; }

    [[nodiscard]] std::size_t count() const;
    /// Fraction of pixels set; 0 for an empty mask.
    [[nodiscard]] double coverage() const;

    [[nodiscard]] bool same_size(const ImageTensor& img) const {
        return height_ == img.height() && width_ == img.width();
    }
    [[nodiscard]] BinaryMask inverted() const;

    friend bool operator==(const BinaryMask&, const BinaryMask&) = default;

private:
    int height_ = 0;
    int width_ = 0;
    std::vector<std::uint8_t> values_;
};

struct ShadowTriplet {
    std::string name;
    ImageTensor shadow;
    ImageTensor shadow_free;
    BinaryMask mask;
};

struct InpaintSample {
    ImageTensor corrupted;  // clean * (1 - mask)
    BinaryMask mask;
    ImageTensor clean;
};

/// Stacks images into an (N, 3, H, W) tensor. All images must share a size.
Tensor to_batch(std::span<const ImageTensor* const> images);
Tensor to_batch(const ImageTensor& image);
/// Stacks masks into an (N, 1, H, W) tensor of 0/1 doubles.
Tensor to_batch(std::span<const BinaryMask* const> masks);
Tensor to_batch(const BinaryMask& mask);
ImageTensor image_from_batch(const Tensor& batch, int index);

}  // namespace deshadow
