#include "deshadow/image.hpp"

#include <algorithm>
#include <stdexcept>

namespace deshadow {

ImageTensor::ImageTensor(int height, int width, double fill)
    : height_(height), width_(width) {
    if (height < 0 || width < 0) throw std::invalid_argument("negative image size");
    data_.assign(static_cast<std::size_t>(kChannels) * height * width, fill);
}

BinaryMask::BinaryMask(int height, int width, std::uint8_t fill) : height_(height), width_(width) {
    if (height < 0 || width < 0) throw std::invalid_argument("negative mask size");
    if (fill > 1) throw std::invalid_argument("mask values must be 0 or 1");
    values_.assign(static_cast<std::size_t>(height) * width, fill);
}

std::size_t BinaryMask::count() const {
    return static_cast<std::size_t>(std::count(values_.begin(), values_.end(), std::uint8_t{1}));
}

double BinaryMask::coverage() const {
    return values_.empty() ? 0.0 : static_cast<double>(count()) / static_cast<double>(values_.size());
}

BinaryMask BinaryMask::inverted() const {
    BinaryMask out = *this;
    for (auto& v : out.values_) v = 1 - v;
    return out;
}

Tensor to_batch(std::span<const ImageTensor* const> images) {
    if (images.empty()) return Tensor();
    const int h = images.front()->height();
    const int w = images.front()->width();
    Tensor out({static_cast<int>(images.size()), 3, h, w});
    for (std::size_t i = 0; i < images.size(); ++i) {
        if (images[i]->height() != h || images[i]->width() != w) {
            throw std::invalid_argument("to_batch: images differ in size");
        }
        std::copy(images[i]->values().begin(), images[i]->values().end(),
                  out.sample(static_cast<int>(i)));
    }
    return out;
}

Tensor to_batch(const ImageTensor& image) {
    const ImageTensor* p = &image;
    return to_batch(std::span<const ImageTensor* const>(&p, 1));
}

Tensor to_batch(std::span<const BinaryMask* const> masks) {
    if (masks.empty()) return Tensor();
    const int h = masks.front()->height();
    const int w = masks.front()->width();
    Tensor out({static_cast<int>(masks.size()), 1, h, w});
    for (std::size_t i = 0; i < masks.size(); ++i) {
        if (masks[i]->height() != h || masks[i]->width() != w) {
            throw std::invalid_argument("to_batch: masks differ in size");
        }
        double* dst = out.sample(static_cast<int>(i));
        for (std::uint8_t v : masks[i]->values()) *dst++ = v;
    }
    return out;
}

Tensor to_batch(const BinaryMask& mask) {
    const BinaryMask* p = &mask;
    return to_batch(std::span<const BinaryMask* const>(&p, 1));
}

ImageTensor image_from_batch(const Tensor& batch, int index) {
    const Shape& s = batch.shape();
    if (s.c != 3 || index < 0 || index >= s.n) {
        throw std::invalid_argument("image_from_batch: bad tensor " + to_string(s));
    }
    ImageTensor img(s.h, s.w);
    std::copy_n(batch.sample(index), s.sample(), img.values().begin());
    return img;
}

}  // namespace deshadow
