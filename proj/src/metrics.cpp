#include "deshadow/metrics.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <nlohmann/json.hpp>
#include <sstream>
#include <stdexcept>

#include "deshadow/data.hpp"

namespace deshadow {
namespace {

void require_same_size(const ImageTensor& a, const ImageTensor& b, const char* what) {
    if (!a.same_size(b)) {
        throw std::invalid_argument(std::string(what) + ": image sizes differ (" +
                                    std::to_string(a.height()) + "x" + std::to_string(a.width()) +
                                    " vs " + std::to_string(b.height()) + "x" +
                                    std::to_string(b.width()) + ")");
    }
}

bool in_region(const BinaryMask& mask, int y, int x, Region region) {
    switch (region) {
        case Region::all: return true;
        case Region::shadow: return mask.at(y, x) != 0;
        case Region::non_shadow: return mask.at(y, x) == 0;
    }
    return false;
}

// Zeroes pixels outside the region.
ImageTensor restrict_to(const ImageTensor& img, const BinaryMask& mask, Region region) {
    if (region == Region::all) return img;
    return make_shadow_masked(img, region == Region::shadow ? mask.inverted() : mask);
}

std::vector<double> gaussian_window(int size, double sigma) {
    std::vector<double> w(size);
    const double r = (size - 1) / 2.0;
    double total = 0.0;
    for (int i = 0; i < size; ++i) {
        w[i] = std::exp(-(i - r) * (i - r) / (2.0 * sigma * sigma));
        total += w[i];
    }
    for (double& v : w) v /= total;
    return w;
}

// Valid-mode separable filter of an h x w plane.
std::vector<double> filter_valid(const std::vector<double>& src, int h, int w,
                                 const std::vector<double>& k) {
    const int ks = static_cast<int>(k.size());
    const int oh = h - ks + 1;
    const int ow = w - ks + 1;
    std::vector<double> rows(static_cast<std::size_t>(h) * ow);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < ow; ++x) {
            double acc = 0.0;
            for (int i = 0; i < ks; ++i) acc += k[i] * src[static_cast<std::size_t>(y) * w + x + i];
            rows[static_cast<std::size_t>(y) * ow + x] = acc;
        }
    }
    std::vector<double> out(static_cast<std::size_t>(oh) * ow);
    for (int y = 0; y < oh; ++y) {
        for (int x = 0; x < ow; ++x) {
            double acc = 0.0;
            for (int i = 0; i < ks; ++i) acc += k[i] * rows[static_cast<std::size_t>(y + i) * ow + x];
            out[static_cast<std::size_t>(y) * ow + x] = acc;
        }
    }
    return out;
}

double sorted_mean(std::vector<double> values) {
    if (values.empty()) return 0.0;
    std::sort(values.begin(), values.end());
    return pairwise_sum(values) / static_cast<double>(values.size());
}

std::string format_double(double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, ptr);
}

nlohmann::json metrics_json(const RegionMetrics& m) {
    nlohmann::json j = {{"rmse", m.rmse}, {"psnr", m.psnr}, {"ssim", m.ssim}};
    if (m.lpips) j["lpips"] = *m.lpips;
    return j;
}

}  // namespace

std::string to_string(Region r) {
    switch (r) {
        case Region::all: return "all";
        case Region::shadow: return "shadow";
        case Region::non_shadow: return "non_shadow";
    }
    return "unknown";
}

std::string to_string(MaskSource m) { return m == MaskSource::provided ? "provided" : "otsu"; }

MaskSource mask_source_from_string(const std::string& s) {
    if (s == "provided") return MaskSource::provided;
    if (s == "otsu") return MaskSource::otsu;
    throw std::invalid_argument("unknown mask source '" + s + "' (expected provided or otsu)");
}

std::vector<double> grayscale(const ImageTensor& image) {
    std::vector<double> g(image.pixels());
    for (int y = 0; y < image.height(); ++y) {
        for (int x = 0; x < image.width(); ++x) {
            g[static_cast<std::size_t>(y) * image.width() + x] =
                0.299 * image.at(0, y, x) + 0.587 * image.at(1, y, x) + 0.114 * image.at(2, y, x);
        }
    }
    return g;
}

double pairwise_sum(std::span<const double> values) {
    if (values.size() <= 8) {
        double s = 0.0;
        for (double v : values) s += v;
        return s;
    }
    const std::size_t half = values.size() / 2;
    return pairwise_sum(values.first(half)) + pairwise_sum(values.subspan(half));
}

int otsu_threshold(const std::array<std::size_t, 256>& histogram) {
    // Between-class variance (up to the constant 1/N^2) is (N*S0 - N0*S)^2 / (N0*N1); compared
    // exactly in 128-bit integers so ties resolve to the lowest threshold.
    using i128 = __int128;
    i128 total = 0;
    i128 sum = 0;
    for (int i = 0; i < 256; ++i) {
        total += histogram[i];
        sum += static_cast<i128>(i) * histogram[i];
    }
    int best = -1;
    i128 best_num = 0;
    i128 best_den = 1;
    i128 n0 = 0;
    i128 s0 = 0;
    for (int t = 0; t < 255; ++t) {
        n0 += histogram[t];
        s0 += static_cast<i128>(t) * histogram[t];
        const i128 n1 = total - n0;
        if (n0 == 0 || n1 == 0) continue;
        const i128 d = total * s0 - n0 * sum;
        const i128 num = d * d;
        const i128 den = n0 * n1;
        if (best < 0 || num * best_den > best_num * den) {
            best = t;
            best_num = num;
            best_den = den;
        }
    }
    return best;
}

OtsuResult otsu_shadow_mask(const ImageTensor& shadow, const ImageTensor& shadow_free) {
    require_same_size(shadow, shadow_free, "otsu_shadow_mask");
    const auto a = grayscale(shadow);
    const auto b = grayscale(shadow_free);
    std::vector<int> bins(a.size());
    std::array<std::size_t, 256> hist{};
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double diff = std::clamp(std::abs(a[i] - b[i]), 0.0, 1.0);
        bins[i] = static_cast<int>(std::lround(diff * 255.0));
        ++hist[bins[i]];
    }
    OtsuResult r;
    r.threshold = otsu_threshold(hist);
    r.mask = BinaryMask(shadow.height(), shadow.width());
    if (r.threshold < 0) return r;
    for (int y = 0; y < shadow.height(); ++y) {
        for (int x = 0; x < shadow.width(); ++x) {
            r.mask.set(y, x, bins[static_cast<std::size_t>(y) * shadow.width() + x] > r.threshold);
        }
    }
    return r;
}

double region_rmse(const ImageTensor& pred, const ImageTensor& gt, const BinaryMask& mask,
                   Region region, RmseKind kind) {
    require_same_size(pred, gt, "region_rmse");
    if (!mask.same_size(gt)) throw std::invalid_argument("region_rmse: mask size differs");
    const LabTensor lp = rgb_to_lab(pred);
    const LabTensor lg = rgb_to_lab(gt);
    std::vector<double> per_pixel;
    per_pixel.reserve(gt.pixels());
    for (int y = 0; y < gt.height(); ++y) {
        for (int x = 0; x < gt.width(); ++x) {
            if (!in_region(mask, y, x, region)) continue;
            double v = 0.0;
            for (int c = 0; c < 3; ++c) {
                const double d = lp.at(c, y, x) - lg.at(c, y, x);
                v += kind == RmseKind::mean_absolute ? std::abs(d) : d * d;
            }
            per_pixel.push_back(v);
        }
    }
    if (per_pixel.empty()) {
        spdlog::warn("region_rmse: region '{}' is empty; reporting 0", to_string(region));
        return 0.0;
    }
    const double mean = pairwise_sum(per_pixel) / static_cast<double>(per_pixel.size());
    return kind == RmseKind::mean_absolute ? mean : std::sqrt(mean);
}

double psnr(const ImageTensor& pred, const ImageTensor& gt) {
    require_same_size(pred, gt, "psnr");
    std::vector<double> sq(pred.values().size());
    for (std::size_t i = 0; i < sq.size(); ++i) {
        const double d = pred.values()[i] - gt.values()[i];
        sq[i] = d * d;
    }
    if (sq.empty()) return kPsnrCap;
    const double mse = pairwise_sum(sq) / static_cast<double>(sq.size());
    if (mse <= 0.0) return kPsnrCap;
    return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

double ssim(const ImageTensor& pred, const ImageTensor& gt, const SsimOptions& opt) {
    require_same_size(pred, gt, "ssim");
    const int h = pred.height();
    const int w = pred.width();
    if (h == 0 || w == 0) return 1.0;
    int ws = std::min({opt.window, h, w});
    if (ws % 2 == 0) --ws;
    const auto k = gaussian_window(ws, opt.sigma);
    const auto x = grayscale(pred);
    const auto y = grayscale(gt);
    std::vector<double> xx(x.size());
    std::vector<double> yy(x.size());
    std::vector<double> xy(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        xx[i] = x[i] * x[i];
        yy[i] = y[i] * y[i];
        xy[i] = x[i] * y[i];
    }
    const auto mx = filter_valid(x, h, w, k);
    const auto my = filter_valid(y, h, w, k);
    const auto sxx = filter_valid(xx, h, w, k);
    const auto syy = filter_valid(yy, h, w, k);
    const auto sxy = filter_valid(xy, h, w, k);
    const double c1 = (opt.k1 * opt.dynamic_range) * (opt.k1 * opt.dynamic_range);
    const double c2 = (opt.k2 * opt.dynamic_range) * (opt.k2 * opt.dynamic_range);
    std::vector<double> map(mx.size());
    for (std::size_t i = 0; i < map.size(); ++i) {
        const double vx = sxx[i] - mx[i] * mx[i];
        const double vy = syy[i] - my[i] * my[i];
        const double cov = sxy[i] - mx[i] * my[i];
        map[i] = ((2.0 * mx[i] * my[i] + c1) * (2.0 * cov + c2)) /
                 ((mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2));
    }
    return pairwise_sum(map) / static_cast<double>(map.size());
}

ImageMetrics evaluate_image(const ImageTensor& pred, const ImageTensor& gt, const BinaryMask& mask,
                            const PerceptualProvider* provider, RmseKind kind) {
    require_same_size(pred, gt, "evaluate_image");
    if (!mask.same_size(gt)) throw std::invalid_argument("evaluate_image: mask size differs");
    ImageMetrics m;
    for (Region r : kRegions) {
        RegionMetrics rm;
        rm.rmse = region_rmse(pred, gt, mask, r, kind);
        const ImageTensor p = restrict_to(pred, mask, r);
        const ImageTensor g = restrict_to(gt, mask, r);
        rm.psnr = psnr(p, g);
        rm.ssim = ssim(p, g);
        if (r == Region::all && provider != nullptr) rm.lpips = provider->distance(pred, gt);
        (r == Region::all ? m.all : r == Region::shadow ? m.shadow : m.non_shadow) = rm;
    }
    return m;
}

const RegionMetrics& EvalReport::region(Region r) const {
    return r == Region::all ? all : r == Region::shadow ? shadow : non_shadow;
}

RegionMetrics& EvalReport::region(Region r) {
    return r == Region::all ? all : r == Region::shadow ? shadow : non_shadow;
}

EvalReport aggregate(std::vector<ImageMetrics> per_image) {
    EvalReport report;
    report.images = per_image.size();
    auto pick = [](const ImageMetrics& m, Region r) -> const RegionMetrics& {
        return r == Region::all ? m.all : r == Region::shadow ? m.shadow : m.non_shadow;
    };
    for (Region r : kRegions) {
        std::vector<double> rmse;
        std::vector<double> ps;
        std::vector<double> ss;
        std::vector<double> lp;
        for (const ImageMetrics& m : per_image) {
            const RegionMetrics& rm = pick(m, r);
            rmse.push_back(rm.rmse);
            ps.push_back(rm.psnr);
            ss.push_back(rm.ssim);
            if (rm.lpips) lp.push_back(*rm.lpips);
        }
        RegionMetrics out;
        out.rmse = sorted_mean(rmse);
        out.psnr = sorted_mean(ps);
        out.ssim = sorted_mean(ss);
        if (!lp.empty()) out.lpips.emplace(sorted_mean(lp));
        report.region(r) = out;
    }
    report.per_image = std::move(per_image);
    return report;
}

EvalReport evaluate_dataset(const Predictor& predictor, const std::vector<ShadowTriplet>& dataset,
                            MaskSource mask_source, const PerceptualProvider* provider,
                            RmseKind kind) {
    if (dataset.empty()) throw std::invalid_argument("evaluate_dataset: dataset is empty");
    std::vector<ImageMetrics> per_image;
    std::vector<std::string> errors;
    for (const ShadowTriplet& t : dataset) {
        try {
            const ImageTensor pred = predictor(t);
            const BinaryMask mask = mask_source == MaskSource::provided
                                        ? t.mask
                                        : otsu_shadow_mask(t.shadow, t.shadow_free).mask;
            ImageMetrics m = evaluate_image(pred, t.shadow_free, mask, provider, kind);
            m.name = t.name;
            per_image.push_back(std::move(m));
        } catch (const std::invalid_argument& e) {
            errors.push_back(t.name + ": " + e.what());
            spdlog::warn("evaluate_dataset: skipping {}: {}", t.name, e.what());
        }
    }
    EvalReport report = aggregate(std::move(per_image));
    report.skipped = errors.size();
    report.errors = std::move(errors);
    return report;
}

std::string report_to_json(const EvalReport& report) {
    nlohmann::json j;
    j["images"] = report.images;
    j["skipped"] = report.skipped;
    j["errors"] = report.errors;
    for (Region r : kRegions) j["regions"][to_string(r)] = metrics_json(report.region(r));
    return j.dump(2);
}

std::string report_to_csv(const EvalReport& report) {
    const bool with_lpips = report.all.lpips.has_value();
    std::ostringstream os;
    os << "region,rmse,psnr,ssim" << (with_lpips ? ",lpips" : "") << "\n";
    for (Region r : kRegions) {
        const RegionMetrics& m = report.region(r);
        os << to_string(r) << ',' << format_double(m.rmse) << ',' << format_double(m.psnr) << ','
           << format_double(m.ssim);
        if (with_lpips) os << ',' << (m.lpips ? format_double(*m.lpips) : "");
        os << "\n";
    }
    return os.str();
}

std::pair<ImageTensor, ImageTensor> weight_maps(const Tensor& w1, const Tensor& w2, int height,
                                                int width) {
    if (w1.shape() != w2.shape() || w1.empty()) {
        throw std::invalid_argument("weight_maps: W1 and W2 must be non-empty and equally shaped");
    }
    auto one = [&](const Tensor& w) {
        const Shape& s = w.shape();
        std::vector<double> mean(s.plane(), 0.0);
        for (int c = 0; c < s.c; ++c) {
            for (int y = 0; y < s.h; ++y) {
                for (int x = 0; x < s.w; ++x) mean[static_cast<std::size_t>(y) * s.w + x] += w.at(0, c, y, x);
            }
        }
        for (double& v : mean) v /= s.c;
        const auto [lo, hi] = std::minmax_element(mean.begin(), mean.end());
        const double range = *hi - *lo;
        ImageTensor out(height, width);
        for (int y = 0; y < height; ++y) {
            const int sy = std::min(s.h - 1, y * s.h / height);
            for (int x = 0; x < width; ++x) {
                const int sx = std::min(s.w - 1, x * s.w / width);
                const double v =
                    range > 0.0 ? (mean[static_cast<std::size_t>(sy) * s.w + sx] - *lo) / range : 0.5;
                for (int c = 0; c < 3; ++c) out.at(c, y, x) = v;
            }
        }
        return out;
    };
    return {one(w1), one(w2)};
}

std::pair<ImageTensor, ImageTensor> lab_difference_maps(const ImageTensor& pred,
                                                        const ImageTensor& gt, double scale) {
    require_same_size(pred, gt, "lab_difference_maps");
    const LabTensor lp = rgb_to_lab(pred);
    const LabTensor lg = rgb_to_lab(gt);
    ImageTensor a(gt.height(), gt.width());
    ImageTensor b(gt.height(), gt.width());
    for (int y = 0; y < gt.height(); ++y) {
        for (int x = 0; x < gt.width(); ++x) {
            const double da = std::min(1.0, std::abs(lp.at(1, y, x) - lg.at(1, y, x)) / scale);
            const double db = std::min(1.0, std::abs(lp.at(2, y, x) - lg.at(2, y, x)) / scale);
            for (int c = 0; c < 3; ++c) {
                a.at(c, y, x) = da;
                b.at(c, y, x) = db;
            }
        }
    }
    return {a, b};
}

}  // namespace deshadow
