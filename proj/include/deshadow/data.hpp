#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "deshadow/image.hpp"

namespace deshadow {

inline constexpr int kCanonicalSize = 256;
inline constexpr double kMaskThreshold = 0.5;

/// Raised when a dataset directory is malformed (orphan files, unreadable PNGs).
class DatasetError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// --- image I/O ---------------------------------------------------------------------------------

/// 8-bit RGB PNG -> [0,1] image.
ImageTensor read_png_rgb(const std::filesystem::path& path);
/// 8-bit gray PNG -> mask, binarized at `threshold` (on the [0,1] scale).
BinaryMask read_png_mask(const std::filesystem::path& path, double threshold = kMaskThreshold);
/// Values are clamped to [0,1] and rounded to 8 bits.
void write_png_rgb(const std::filesystem::path& path, const ImageTensor& image);
void write_png_gray(const std::filesystem::path& path, const ImageTensor& gray_in_channel0);
void write_png_mask(const std::filesystem::path& path, const BinaryMask& mask);
/// Rounds every value to the nearest multiple of 1/255, as a PNG round trip would.
ImageTensor quantize_8bit(const ImageTensor& image);

/// Half-pixel-centred bilinear resampling.
ImageTensor resize_bilinear(const ImageTensor& image, int height, int width);
BinaryMask resize_nearest(const BinaryMask& mask, int height, int width);

// --- samples -----------------------------------------------------------------------------------

/// image * (1 - mask), per channel. Throws std::invalid_argument on size mismatch.
ImageTensor make_shadow_masked(const ImageTensor& image, const BinaryMask& mask);
InpaintSample make_inpaint_sample(const ImageTensor& clean, const BinaryMask& mask);

/// Free-form brush-stroke mask whose coverage lies in [lo, hi]. Deterministic per seed.
/// Throws std::invalid_argument unless 0 <= lo < hi <= 1 and some pixel count fits the range.
BinaryMask sample_irregular_mask(std::uint64_t seed, int height, int width, double lo, double hi);

/// Smooth random colour texture with values in [0.05, 0.95].
ImageTensor generate_texture(std::uint64_t seed, int size);

/// Each triplet: texture as shadow-free image, a random polygon as mask, and the polygon darkened
/// by a per-sample factor in [0.3, 0.7] as the shadow image. `darkening` (optional) receives the
/// factors.
std::vector<ShadowTriplet> generate_synthetic_shadow(std::uint64_t seed, int count,
                                                     int size = kCanonicalSize,
                                                     std::vector<double>* darkening = nullptr);

/// Clean textures for inpainting pretraining.
std::vector<ImageTensor> generate_synthetic_clean(std::uint64_t seed, int count,
                                                  int size = kCanonicalSize);

// --- datasets ----------------------------------------------------------------------------------

/// Reads <root>/<split>/{shadow,shadow_free,mask}/<name>.png in lexicographic filename order.
/// Images are resized to `size` (bilinear) and masks binarized then resized (nearest).
/// An empty split directory yields an empty dataset; `workers` > 1 decodes in parallel.
std::vector<ShadowTriplet> load_triplet_dataset(const std::filesystem::path& root,
                                                const std::string& split,
                                                int size = kCanonicalSize, int workers = 1);

/// Writes the directory layout read by load_triplet_dataset.
void write_triplet_dataset(const std::filesystem::path& root, const std::string& split,
                           const std::vector<ShadowTriplet>& triplets);

/// Every *.png directly inside `dir`, in lexicographic order, resized to size x size.
std::vector<ImageTensor> load_image_folder(const std::filesystem::path& dir, int size);

/// Indices of a uniformly random subset of size round(fraction * n), sorted ascending.
/// Throws std::invalid_argument unless 0 < fraction <= 1.
std::vector<std::size_t> subset_indices(std::size_t n, double fraction, std::uint64_t seed);

template <typename T>
std::vector<T> subset_fraction(const std::vector<T>& dataset, double fraction, std::uint64_t seed) {
    std::vector<T> out;
    for (std::size_t i : subset_indices(dataset.size(), fraction, seed)) out.push_back(dataset[i]);
    return out;
}

}  // namespace deshadow
