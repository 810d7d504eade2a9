#include "deshadow/color.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>

namespace deshadow {
namespace {

// sRGB (D65) primaries -> XYZ.
constexpr double kM[3][3] = {{0.4124564, 0.3575761, 0.1804375},
                             {0.2126729, 0.7151522, 0.0721750},
                             {0.0193339, 0.1191920, 0.9503041}};
// Inverse of kM.
constexpr double kMinv[3][3] = {{3.2404542, -1.5371385, -0.4985314},
                                {-0.9692660, 1.8760108, 0.0415560},
                                {0.0556434, -0.2040259, 1.0572252}};

// Reference white as the image of sRGB (1,1,1), so white maps to exactly (100, 0, 0).
constexpr double kWhite[3] = {kM[0][0] + kM[0][1] + kM[0][2], kM[1][0] + kM[1][1] + kM[1][2],
                              kM[2][0] + kM[2][1] + kM[2][2]};

constexpr double kDelta = 6.0 / 29.0;

double linearize(double c) {
    return c <= 0.04045 ? c / 12.92 : std::pow((c + 0.055) / 1.055, 2.4);
}

double delinearize(double c) {
    return c <= 0.0031308 ? 12.92 * c : 1.055 * std::pow(c, 1.0 / 2.4) - 0.055;
}

double lab_f(double t) {
    return t > kDelta * kDelta * kDelta ? std::cbrt(t) : t / (3.0 * kDelta * kDelta) + 4.0 / 29.0;
}

double lab_f_inv(double t) {
    return t > kDelta ? t * t * t : 3.0 * kDelta * kDelta * (t - 4.0 / 29.0);
}

}  // namespace

Lab srgb_to_lab(double r, double g, double b) {
    const double lin[3] = {linearize(r), linearize(g), linearize(b)};
    double xyz[3];
    for (int i = 0; i < 3; ++i) {
        xyz[i] = kM[i][0] * lin[0] + kM[i][1] * lin[1] + kM[i][2] * lin[2];
    }
    const double fx = lab_f(xyz[0] / kWhite[0]);
    const double fy = lab_f(xyz[1] / kWhite[1]);
    const double fz = lab_f(xyz[2] / kWhite[2]);
    return {116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)};
}

std::array<double, 3> lab_to_srgb(const Lab& lab) {
    const double fy = (lab.l + 16.0) / 116.0;
    const double fx = fy + lab.a / 500.0;
    const double fz = fy - lab.b / 200.0;
    const double xyz[3] = {kWhite[0] * lab_f_inv(fx), kWhite[1] * lab_f_inv(fy),
                           kWhite[2] * lab_f_inv(fz)};
    std::array<double, 3> rgb{};
    for (int i = 0; i < 3; ++i) {
        rgb[i] = delinearize(kMinv[i][0] * xyz[0] + kMinv[i][1] * xyz[1] + kMinv[i][2] * xyz[2]);
    }
    return rgb;
}

LabTensor rgb_to_lab(const ImageTensor& image) {
    LabTensor out(image.height(), image.width());
    bool clamped = false;
    auto fetch = [&](int c, int y, int x) {
        const double v = image.at(c, y, x);
        if (v < 0.0 || v > 1.0 || std::isnan(v)) clamped = true;
        return std::isnan(v) ? 0.0 : std::clamp(v, 0.0, 1.0);
    };
    for (int y = 0; y < image.height(); ++y) {
        for (int x = 0; x < image.width(); ++x) {
            const Lab lab = srgb_to_lab(fetch(0, y, x), fetch(1, y, x), fetch(2, y, x));
            out.at(0, y, x) = lab.l;
            out.at(1, y, x) = lab.a;
            out.at(2, y, x) = lab.b;
        }
    }
    if (clamped) spdlog::warn("rgb_to_lab: input outside [0,1] was clamped");
    return out;
}

ImageTensor lab_to_rgb(const LabTensor& lab) {
    ImageTensor out(lab.height(), lab.width());
    for (int y = 0; y < lab.height(); ++y) {
        for (int x = 0; x < lab.width(); ++x) {
            const auto rgb = lab_to_srgb({lab.at(0, y, x), lab.at(1, y, x), lab.at(2, y, x)});
            for (int c = 0; c < 3; ++c) out.at(c, y, x) = rgb[c];
        }
    }
    return out;
}

}  // namespace deshadow
