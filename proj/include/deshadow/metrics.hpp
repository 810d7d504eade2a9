#pragma once

#include <array>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "deshadow/color.hpp"
#include "deshadow/image.hpp"
#include "deshadow/tensor.hpp"

namespace deshadow {

enum class Region { all, shadow, non_shadow };
std::string to_string(Region r);
inline constexpr std::array<Region, 3> kRegions = {Region::all, Region::shadow, Region::non_shadow};

/// Lineage "RMSE" is the mean over region pixels of the summed absolute L*a*b* difference;
/// `root_mean_square` is the literal sqrt(mean ||dLab||^2).
enum class RmseKind { mean_absolute, root_mean_square };

enum class MaskSource { provided, otsu };
std::string to_string(MaskSource m);
MaskSource mask_source_from_string(const std::string& s);

/// ITU-R BT.601 luma, one value per pixel (row-major).
std::vector<double> grayscale(const ImageTensor& image);

/// Sum in a fixed pairwise tree; the result depends only on the order of `values`.
double pairwise_sum(std::span<const double> values);

struct OtsuResult {
    int threshold = -1;  // bin index; -1 when the histogram has a single occupied bin
    BinaryMask mask;
};

/// Threshold t in [0, 254] maximizing the between-class variance of {bins <= t} vs {bins > t}.
/// Returns -1 when no split has two non-empty classes.
int otsu_threshold(const std::array<std::size_t, 256>& histogram);

/// |gray(shadow) - gray(shadow_free)| quantized to 256 bins, thresholded by Otsu.
/// Mask = bins strictly above the threshold; degenerate (constant) differences give an empty mask.
OtsuResult otsu_shadow_mask(const ImageTensor& shadow, const ImageTensor& shadow_free);

/// Region metric in L*a*b*. An empty region yields 0 (with a warning).
double region_rmse(const ImageTensor& pred, const ImageTensor& gt, const BinaryMask& mask,
                   Region region, RmseKind kind = RmseKind::mean_absolute);

inline constexpr double kPsnrCap = 100.0;
/// 10 log10(1 / MSE) over all RGB values; identical images give kPsnrCap.
double psnr(const ImageTensor& pred, const ImageTensor& gt);

struct SsimOptions {
    int window = 11;
    double sigma = 1.5;
    double k1 = 0.01;
    double k2 = 0.03;
    double dynamic_range = 1.0;
};

/// Mean SSIM over all valid Gaussian windows of the BT.601 luma. Images smaller than the window
/// use the largest odd window that fits.
double ssim(const ImageTensor& pred, const ImageTensor& gt, const SsimOptions& options = {});

/// Opaque perceptual distance (e.g. LPIPS). d(x, x) must be 0.
class PerceptualProvider {
public:
    virtual ~PerceptualProvider() = default;
    [[nodiscard]] virtual std::string name() const = 0;
    [[nodiscard]] virtual double distance(const ImageTensor& a, const ImageTensor& b) const = 0;
};

struct RegionMetrics {
    double rmse = 0.0;
    double psnr = 0.0;
    double ssim = 0.0;
    std::optional<double> lpips;  // `all` only, when a provider is configured

    friend bool operator==(const RegionMetrics&, const RegionMetrics&) = default;
};

/// Metrics for one image. PSNR/SSIM of a sub-region are computed on images with the other region
/// zeroed.
struct ImageMetrics {
    std::string name;
    RegionMetrics all;
    RegionMetrics shadow;
    RegionMetrics non_shadow;
};

ImageMetrics evaluate_image(const ImageTensor& pred, const ImageTensor& gt, const BinaryMask& mask,
                            const PerceptualProvider* provider = nullptr,
                            RmseKind kind = RmseKind::mean_absolute);

struct EvalReport {
    RegionMetrics all;
    RegionMetrics shadow;
    RegionMetrics non_shadow;
    std::size_t images = 0;
    std::size_t skipped = 0;
    std::vector<std::string> errors;
    std::vector<ImageMetrics> per_image;

    [[nodiscard]] const RegionMetrics& region(Region r) const;
    RegionMetrics& region(Region r);
};

/// Dataset-level mean of per-image metrics, independent of input order.
EvalReport aggregate(std::vector<ImageMetrics> per_image);

/// Maps a triplet to a restored image (normally a model forward pass).
using Predictor = std::function<ImageTensor(const ShadowTriplet&)>;

/// Region masks come from each triplet's mask or from Otsu on (shadow, shadow_free). Prediction
/// failures (e.g. size mismatches) are recorded in `errors` and the image is skipped.
EvalReport evaluate_dataset(const Predictor& predictor, const std::vector<ShadowTriplet>& dataset,
                            MaskSource mask_source, const PerceptualProvider* provider = nullptr,
                            RmseKind kind = RmseKind::mean_absolute);

/// JSON object and CSV (`region,rmse,psnr,ssim[,lpips]`) renderings of a report.
std::string report_to_json(const EvalReport& report);
std::string report_to_csv(const EvalReport& report);

/// Channel-mean of W1 and W2 (sample 0 of each tensor), min-max normalized to [0,1] and
/// nearest-upsampled to height x width. Constant maps become 0.5.
std::pair<ImageTensor, ImageTensor> weight_maps(const Tensor& w1, const Tensor& w2, int height,
                                                int width);

/// |a*_pred - a*_gt| and |b*_pred - b*_gt| divided by `scale`, clipped to [0,1], as gray images.
std::pair<ImageTensor, ImageTensor> lab_difference_maps(const ImageTensor& pred,
                                                        const ImageTensor& gt, double scale = 20.0);

}  // namespace deshadow
