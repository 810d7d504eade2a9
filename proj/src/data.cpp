#include "deshadow/data.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <future>
#include <map>
#include <numbers>
#include <set>

#include "deshadow/rng.hpp"

namespace deshadow {
namespace fs = std::filesystem;

namespace {

std::uint8_t to_byte(double v) {
    return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

std::vector<std::uint8_t> read_png(const fs::path& path, std::uint32_t format, int& h, int& w) {
    png_image img{};
    img.version = PNG_IMAGE_VERSION;
    if (png_image_begin_read_from_file(&img, path.string().c_str()) == 0) {
        throw DatasetError("cannot read PNG " + path.string() + ": " + img.message);
    }
    img.format = format;
    std::vector<std::uint8_t> buffer(PNG_IMAGE_SIZE(img));
    if (png_image_finish_read(&img, nullptr, buffer.data(), 0, nullptr) == 0) {
        png_image_free(&img);
        throw DatasetError("cannot decode PNG " + path.string() + ": " + img.message);
    }
    h = static_cast<int>(img.height);
    w = static_cast<int>(img.width);
    return buffer;
}

void write_png(const fs::path& path, std::uint32_t format, int h, int w,
               const std::vector<std::uint8_t>& buffer) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    png_image img{};
    img.version = PNG_IMAGE_VERSION;
    img.format = format;
    img.height = static_cast<png_uint_32>(h);
    img.width = static_cast<png_uint_32>(w);
    if (png_image_write_to_file(&img, path.string().c_str(), 0, buffer.data(), 0, nullptr) == 0) {
        throw std::runtime_error("cannot write PNG " + path.string() + ": " + img.message);
    }
}

double uniform(std::mt19937_64& rng, double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(rng);
}

int uniform_int(std::mt19937_64& rng, int lo, int hi) {
    return std::uniform_int_distribution<int>(lo, hi)(rng);
}

// Even-odd rule at pixel centres.
BinaryMask rasterize_polygon(const std::vector<std::pair<double, double>>& pts, int size) {
    BinaryMask mask(size, size);
    for (int y = 0; y < size; ++y) {
        const double py = y + 0.5;
        for (int x = 0; x < size; ++x) {
            const double px = x + 0.5;
            bool inside = false;
            for (std::size_t i = 0, j = pts.size() - 1; i < pts.size(); j = i++) {
                const auto [xi, yi] = pts[i];
                const auto [xj, yj] = pts[j];
                if ((yi > py) != (yj > py) && px < (xj - xi) * (py - yi) / (yj - yi) + xi) {
                    inside = !inside;
                }
            }
            mask.set(y, x, inside);
        }
    }
    return mask;
}

BinaryMask random_polygon_mask(std::mt19937_64& rng, int size) {
    const int vertices = uniform_int(rng, 5, 8);
    const double cx = uniform(rng, 0.35, 0.65) * size;
    const double cy = uniform(rng, 0.35, 0.65) * size;
    std::vector<double> angles(vertices);
    for (double& a : angles) a = uniform(rng, 0.0, 2.0 * std::numbers::pi);
    std::sort(angles.begin(), angles.end());
    std::vector<std::pair<double, double>> pts;
    for (double a : angles) {
        const double r = uniform(rng, 0.15, 0.35) * size;
        pts.emplace_back(cx + r * std::cos(a), cy + r * std::sin(a));
    }
    BinaryMask mask = rasterize_polygon(pts, size);
    if (mask.count() == 0) mask.set(static_cast<int>(cy), static_cast<int>(cx), true);
    return mask;
}

}  // namespace

ImageTensor read_png_rgb(const fs::path& path) {
    int h = 0;
    int w = 0;
    const auto buf = read_png(path, PNG_FORMAT_RGB, h, w);
    ImageTensor img(h, w);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            for (int c = 0; c < 3; ++c) {
                img.at(c, y, x) = buf[(static_cast<std::size_t>(y) * w + x) * 3 + c] / 255.0;
            }
        }
    }
    return img;
}

BinaryMask read_png_mask(const fs::path& path, double threshold) {
    int h = 0;
    int w = 0;
    const auto buf = read_png(path, PNG_FORMAT_GRAY, h, w);
    BinaryMask mask(h, w);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            mask.set(y, x, buf[static_cast<std::size_t>(y) * w + x] / 255.0 >= threshold);
        }
    }
    return mask;
}

void write_png_rgb(const fs::path& path, const ImageTensor& image) {
    const int h = image.height();
    const int w = image.width();
    std::vector<std::uint8_t> buf(static_cast<std::size_t>(h) * w * 3);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            for (int c = 0; c < 3; ++c) {
                buf[(static_cast<std::size_t>(y) * w + x) * 3 + c] = to_byte(image.at(c, y, x));
            }
        }
    }
    write_png(path, PNG_FORMAT_RGB, h, w, buf);
}

void write_png_gray(const fs::path& path, const ImageTensor& gray) {
    const int h = gray.height();
    const int w = gray.width();
    std::vector<std::uint8_t> buf(static_cast<std::size_t>(h) * w);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) buf[static_cast<std::size_t>(y) * w + x] = to_byte(gray.at(0, y, x));
    }
    write_png(path, PNG_FORMAT_GRAY, h, w, buf);
}

void write_png_mask(const fs::path& path, const BinaryMask& mask) {
    std::vector<std::uint8_t> buf(mask.values().begin(), mask.values().end());
    for (auto& v : buf) v = v ? 255 : 0;
    write_png(path, PNG_FORMAT_GRAY, mask.height(), mask.width(), buf);
}

ImageTensor quantize_8bit(const ImageTensor& image) {
    ImageTensor out = image;
    for (double& v : out.values()) v = to_byte(v) / 255.0;
    return out;
}

ImageTensor resize_bilinear(const ImageTensor& image, int height, int width) {
    if (image.height() == height && image.width() == width) return image;
    if (height <= 0 || width <= 0 || image.empty()) {
        throw std::invalid_argument("resize_bilinear: invalid size");
    }
    ImageTensor out(height, width);
    const double sy = static_cast<double>(image.height()) / height;
    const double sx = static_cast<double>(image.width()) / width;
    for (int y = 0; y < height; ++y) {
        const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, image.height() - 1.0);
        const int y0 = static_cast<int>(fy);
        const int y1 = std::min(y0 + 1, image.height() - 1);
        const double ty = fy - y0;
        for (int x = 0; x < width; ++x) {
            const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, image.width() - 1.0);
            const int x0 = static_cast<int>(fx);
            const int x1 = std::min(x0 + 1, image.width() - 1);
            const double tx = fx - x0;
            for (int c = 0; c < 3; ++c) {
                const double top = image.at(c, y0, x0) * (1 - tx) + image.at(c, y0, x1) * tx;
                const double bot = image.at(c, y1, x0) * (1 - tx) + image.at(c, y1, x1) * tx;
                out.at(c, y, x) = top * (1 - ty) + bot * ty;
            }
        }
    }
    return out;
}

BinaryMask resize_nearest(const BinaryMask& mask, int height, int width) {
    if (mask.height() == height && mask.width() == width) return mask;
    if (height <= 0 || width <= 0 || mask.pixels() == 0) {
        throw std::invalid_argument("resize_nearest: invalid size");
    }
    BinaryMask out(height, width);
    for (int y = 0; y < height; ++y) {
        const int sy = std::min(mask.height() - 1, y * mask.height() / height);
        for (int x = 0; x < width; ++x) {
            const int sx = std::min(mask.width() - 1, x * mask.width() / width);
            out.set(y, x, mask.at(sy, sx) != 0);
        }
    }
    return out;
}

ImageTensor make_shadow_masked(const ImageTensor& image, const BinaryMask& mask) {
    if (!mask.same_size(image)) {
        throw std::invalid_argument("make_shadow_masked: image is " + std::to_string(image.height()) +
                                    "x" + std::to_string(image.width()) + " but mask is " +
                                    std::to_string(mask.height()) + "x" +
                                    std::to_string(mask.width()));
    }
    ImageTensor out = image;
    for (int c = 0; c < 3; ++c) {
        for (int y = 0; y < image.height(); ++y) {
            for (int x = 0; x < image.width(); ++x) out.at(c, y, x) *= 1.0 - mask.at(y, x);
        }
    }
    return out;
}

InpaintSample make_inpaint_sample(const ImageTensor& clean, const BinaryMask& mask) {
    return InpaintSample{make_shadow_masked(clean, mask), mask, clean};
}

BinaryMask sample_irregular_mask(std::uint64_t seed, int height, int width, double lo, double hi) {
    if (!(lo >= 0.0 && lo < hi && hi <= 1.0)) {
        throw std::invalid_argument("sample_irregular_mask: need 0 <= lo < hi <= 1");
    }
    if (height <= 0 || width <= 0) throw std::invalid_argument("sample_irregular_mask: bad size");
    const auto total = static_cast<long long>(height) * width;
    const auto min_count = static_cast<long long>(std::ceil(lo * total - 1e-9));
    const auto max_count = static_cast<long long>(std::floor(hi * total + 1e-9));
    if (min_count > max_count) {
        throw std::invalid_argument("sample_irregular_mask: no pixel count fits the coverage range");
    }
    std::mt19937_64 rng(seed);
    const long long target =
        std::uniform_int_distribution<long long>(min_count, max_count)(rng);

    BinaryMask mask(height, width);
    long long count = 0;
    const int size = std::max(height, width);
    const int max_radius = std::max(1, size / 16);
    auto paint = [&](int cy, int cx, int r) {
        for (int y = cy - r; y <= cy + r && count < target; ++y) {
            if (y < 0 || y >= height) continue;
            for (int x = cx - r; x <= cx + r && count < target; ++x) {
                if (x < 0 || x >= width || (y - cy) * (y - cy) + (x - cx) * (x - cx) > r * r) continue;
                if (mask.at(y, x) == 0) {
                    mask.set(y, x, true);
                    ++count;
                }
            }
        }
    };
    for (int stroke = 0; count < target && stroke < 4096; ++stroke) {
        double y = uniform(rng, 0, height);
        double x = uniform(rng, 0, width);
        const int r = uniform_int(rng, 1, max_radius);
        const int segments = uniform_int(rng, 3, 8);
        for (int s = 0; s < segments && count < target; ++s) {
            const double angle = uniform(rng, 0.0, 2.0 * std::numbers::pi);
            const double length = uniform(rng, 0.05, 0.25) * size;
            const int steps = std::max(1, static_cast<int>(length));
            for (int k = 0; k <= steps && count < target; ++k) {
                paint(static_cast<int>(y), static_cast<int>(x), r);
                y = std::clamp(y + std::sin(angle), 0.0, height - 1.0);
                x = std::clamp(x + std::cos(angle), 0.0, width - 1.0);
            }
        }
    }
    // Fallback for pathological targets: fill in raster order.
    for (int y = 0; y < height && count < target; ++y) {
        for (int x = 0; x < width && count < target; ++x) {
            if (mask.at(y, x) == 0) {
                mask.set(y, x, true);
                ++count;
            }
        }
    }
    return mask;
}

ImageTensor generate_texture(std::uint64_t seed, int size) {
    std::mt19937_64 rng(seed);
    struct Wave {
        double amp, fx, fy, phase;
    };
    auto make_waves = [&](int n, double amp_lo, double amp_hi) {
        std::vector<Wave> waves;
        for (int i = 0; i < n; ++i) {
            const double freq = uniform(rng, 0.5, 3.0);
            const double theta = uniform(rng, 0.0, std::numbers::pi);
            waves.push_back({uniform(rng, amp_lo, amp_hi), freq * std::cos(theta),
                             freq * std::sin(theta), uniform(rng, 0.0, 2.0 * std::numbers::pi)});
        }
        return waves;
    };
    const std::vector<Wave> shared = make_waves(3, 0.05, 0.12);
    ImageTensor img(size, size);
    for (int c = 0; c < 3; ++c) {
        const double base = uniform(rng, 0.35, 0.7);
        const std::vector<Wave> own = make_waves(2, 0.02, 0.08);
        for (int y = 0; y < size; ++y) {
            for (int x = 0; x < size; ++x) {
                const double u = static_cast<double>(x) / size;
                const double v = static_cast<double>(y) / size;
                double value = base;
                for (const auto* set : {&shared, &own}) {
                    for (const Wave& wv : *set) {
                        value += wv.amp *
                                 std::sin(2.0 * std::numbers::pi * (wv.fx * u + wv.fy * v) + wv.phase);
                    }
                }
                img.at(c, y, x) = std::clamp(value, 0.05, 0.95);
            }
        }
    }
    return img;
}

std::vector<ShadowTriplet> generate_synthetic_shadow(std::uint64_t seed, int count, int size,
                                                     std::vector<double>* darkening) {
    if (count < 1) throw std::invalid_argument("generate_synthetic_shadow: count must be >= 1");
    if (size < 4) throw std::invalid_argument("generate_synthetic_shadow: size must be >= 4");
    std::vector<ShadowTriplet> out;
    out.reserve(count);
    if (darkening != nullptr) darkening->clear();
    for (int i = 0; i < count; ++i) {
        std::mt19937_64 rng(derive_seed(seed, Stream::synth, {static_cast<std::uint64_t>(i)}));
        ShadowTriplet t;
        char name[32];
        std::snprintf(name, sizeof(name), "synth_%05d", i);
        t.name = name;
        t.shadow_free = generate_texture(rng(), size);
        t.mask = random_polygon_mask(rng, size);
        const double factor = uniform(rng, 0.3, 0.7);
        t.shadow = t.shadow_free;
        for (int c = 0; c < 3; ++c) {
            for (int y = 0; y < size; ++y) {
                for (int x = 0; x < size; ++x) {
                    if (t.mask.at(y, x)) t.shadow.at(c, y, x) = factor * t.shadow_free.at(c, y, x);
                }
            }
        }
        if (darkening != nullptr) darkening->push_back(factor);
        out.push_back(std::move(t));
    }
    return out;
}

std::vector<ImageTensor> generate_synthetic_clean(std::uint64_t seed, int count, int size) {
    if (count < 1) throw std::invalid_argument("generate_synthetic_clean: count must be >= 1");
    std::vector<ImageTensor> out;
    out.reserve(count);
    for (int i = 0; i < count; ++i) {
        out.push_back(generate_texture(
            derive_seed(seed, Stream::synth, {0xC1EA4ULL, static_cast<std::uint64_t>(i)}), size));
    }
    return out;
}

std::vector<ShadowTriplet> load_triplet_dataset(const fs::path& root, const std::string& split,
                                                int size, int workers) {
    const fs::path base = split.empty() ? root : root / split;
    if (!fs::exists(base)) throw DatasetError("dataset directory not found: " + base.string());
    const std::array<std::string, 3> folders = {"shadow", "shadow_free", "mask"};
    std::array<std::set<std::string>, 3> names;
    for (std::size_t f = 0; f < folders.size(); ++f) {
        const fs::path dir = base / folders[f];
        if (!fs::is_directory(dir)) continue;
        for (const auto& entry : fs::directory_iterator(dir)) {
            if (entry.is_regular_file() && entry.path().extension() == ".png") {
                names[f].insert(entry.path().filename().string());
            }
        }
    }
    std::set<std::string> all;
    for (const auto& s : names) all.insert(s.begin(), s.end());
    for (const std::string& n : all) {
        for (std::size_t f = 0; f < folders.size(); ++f) {
            if (!names[f].contains(n)) {
                std::string present;
                for (std::size_t g = 0; g < folders.size(); ++g) {
                    if (names[g].contains(n)) present = folders[g];
                }
                throw DatasetError("orphan file " + (base / present / n).string() + ": no " +
                                   folders[f] + "/ counterpart");
            }
        }
    }

    const std::vector<std::string> ordered(all.begin(), all.end());  // std::set is lexicographic
    std::vector<ShadowTriplet> out(ordered.size());
    auto load_range = [&](std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i) {
            const std::string& n = ordered[i];
            ShadowTriplet& t = out[i];
            t.name = fs::path(n).stem().string();
            t.shadow = resize_bilinear(read_png_rgb(base / "shadow" / n), size, size);
            t.shadow_free = resize_bilinear(read_png_rgb(base / "shadow_free" / n), size, size);
            t.mask = resize_nearest(read_png_mask(base / "mask" / n), size, size);
        }
    };
    const std::size_t nworkers = std::clamp<std::size_t>(workers, 1, std::max<std::size_t>(1, ordered.size()));
    if (nworkers == 1) {
        load_range(0, ordered.size());
    } else {
        std::vector<std::future<void>> jobs;
        const std::size_t chunk = (ordered.size() + nworkers - 1) / nworkers;
        for (std::size_t b = 0; b < ordered.size(); b += chunk) {
            jobs.push_back(std::async(std::launch::async, load_range, b, std::min(ordered.size(), b + chunk)));
        }
        for (auto& j : jobs) j.get();
    }
    return out;
}

void write_triplet_dataset(const fs::path& root, const std::string& split,
                           const std::vector<ShadowTriplet>& triplets) {
    const fs::path base = split.empty() ? root : root / split;
    for (const char* f : {"shadow", "shadow_free", "mask"}) fs::create_directories(base / f);
    for (const ShadowTriplet& t : triplets) {
        const std::string file = t.name + ".png";
        write_png_rgb(base / "shadow" / file, t.shadow);
        write_png_rgb(base / "shadow_free" / file, t.shadow_free);
        write_png_mask(base / "mask" / file, t.mask);
    }
}

std::vector<ImageTensor> load_image_folder(const fs::path& dir, int size) {
    if (!fs::is_directory(dir)) throw DatasetError("image folder not found: " + dir.string());
    std::set<fs::path> files;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (entry.is_regular_file() && entry.path().extension() == ".png") files.insert(entry.path());
    }
    std::vector<ImageTensor> out;
    out.reserve(files.size());
    for (const fs::path& f : files) out.push_back(resize_bilinear(read_png_rgb(f), size, size));
    return out;
}

std::vector<std::size_t> subset_indices(std::size_t n, double fraction, std::uint64_t seed) {
    if (!(fraction > 0.0 && fraction <= 1.0)) {
        throw std::invalid_argument("subset_fraction: fraction must be in (0, 1]");
    }
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    const auto k = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
    if (k == n) return idx;
    std::mt19937_64 rng(derive_seed(seed, Stream::subset));
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(k);
    std::sort(idx.begin(), idx.end());
    return idx;
}

}  // namespace deshadow
