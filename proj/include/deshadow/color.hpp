#pragma once

#include <array>

#include "deshadow/image.hpp"

namespace deshadow {

struct Lab {
    double l = 0.0;
    double a = 0.0;
    double b = 0.0;
};

/// sRGB in [0,1] -> CIE L*a*b* (D65 white, standard sRGB transfer curve).
Lab srgb_to_lab(double r, double g, double b);
/// Inverse of srgb_to_lab; results are not clamped.
std::array<double, 3> lab_to_srgb(const Lab& lab);

/// Planar L*a*b* image; channel 0 = L in [0,100], 1 = a*, 2 = b*.
class LabTensor {
public:
    LabTensor() = default;
    LabTensor(int height, int width) : data_(height, width) {}

    [[nodiscard]] int height() const { return data_.height(); }
    [[nodiscard]] int width() const { return data_.width(); }
    double& at(int c, int y, int x) { return data_.at(c, y, x); }
    [[nodiscard]] double at(int c, int y, int x) const { return data_.at(c, y, x); }

private:
    ImageTensor data_;
};

/// Out-of-range inputs are clamped to [0,1] and a warning is logged once per call.
LabTensor rgb_to_lab(const ImageTensor& image);
ImageTensor lab_to_rgb(const LabTensor& lab);

}  // namespace deshadow
