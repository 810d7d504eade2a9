#include <gtest/gtest.h>

#include <nlohmann/json.hpp>
#include <sstream>

#include "deshadow/color.hpp"
#include "deshadow/data.hpp"
#include "deshadow/metrics.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace deshadow;
using testing_support::random_image;
using testing_support::random_mask;

namespace {

ImageTensor constant(int h, int w, double r, double g, double b) {
    ImageTensor img(h, w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            img.at(0, y, x) = r;
            img.at(1, y, x) = g;
            img.at(2, y, x) = b;
        }
    return img;
}

}  // namespace

TEST(Lab, BlackWhiteAndGray) {
    const Lab black = srgb_to_lab(0, 0, 0);
    EXPECT_NEAR(black.l, 0.0, 1e-12);
    EXPECT_NEAR(black.a, 0.0, 1e-12);
    EXPECT_NEAR(black.b, 0.0, 1e-12);
    const Lab white = srgb_to_lab(1, 1, 1);
    EXPECT_NEAR(white.l, 100.0, 1e-12);
    EXPECT_NEAR(white.a, 0.0, 1e-12);
    EXPECT_NEAR(white.b, 0.0, 1e-12);
    const Lab gray = srgb_to_lab(0.5, 0.5, 0.5);
    const auto expected = oracle::lab(0.5, 0.5, 0.5);
    EXPECT_NEAR(gray.l, expected[0], 1e-9);
    EXPECT_NEAR(gray.l, 53.39, 0.01);
    EXPECT_NEAR(gray.a, 0.0, 1e-9);
    EXPECT_NEAR(gray.b, 0.0, 1e-9);
}

TEST(Lab, ReferencePrimaries) {
    // Widely tabulated sRGB primaries under D65 (two decimals).
    const Lab red = srgb_to_lab(1, 0, 0);
    EXPECT_NEAR(red.l, 53.24, 0.01);
    EXPECT_NEAR(red.a, 80.09, 0.02);
    EXPECT_NEAR(red.b, 67.20, 0.02);
    const Lab green = srgb_to_lab(0, 1, 0);
    EXPECT_NEAR(green.l, 87.73, 0.01);
    EXPECT_NEAR(green.a, -86.18, 0.02);
    EXPECT_NEAR(green.b, 83.18, 0.02);
}

TEST(Lab, MatchesClosedFormOracleOnRandomColors) {
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int i = 0; i < 1000; ++i) {
        const double r = u(rng), g = u(rng), b = u(rng);
        const Lab lab = srgb_to_lab(r, g, b);
        const auto o = oracle::lab(r, g, b);
        ASSERT_NEAR(lab.l, o[0], 1e-9);
        ASSERT_NEAR(lab.a, o[1], 1e-9);
        ASSERT_NEAR(lab.b, o[2], 1e-9);
        EXPECT_GE(lab.l, 0.0);
        EXPECT_LE(lab.l, 100.0 + 1e-9);
    }
}

TEST(Lab, RoundTripOnThousandRandomColors) {
    std::mt19937_64 rng(2);
    const ImageTensor img = random_image(25, 40, rng);
    const ImageTensor back = lab_to_rgb(rgb_to_lab(img));
    for (std::size_t i = 0; i < img.values().size(); ++i) {
        ASSERT_NEAR(back.values()[i], img.values()[i], 1e-4);
    }
}

TEST(Lab, OutOfRangeInputIsClamped) {
    ImageTensor img(1, 1);
    img.at(0, 0, 0) = 1.5;
    img.at(1, 0, 0) = -0.2;
    img.at(2, 0, 0) = 0.5;
    const LabTensor lab = rgb_to_lab(img);
    const Lab expected = srgb_to_lab(1.0, 0.0, 0.5);
    EXPECT_EQ(lab.at(0, 0, 0), expected.l);
    EXPECT_EQ(lab.at(1, 0, 0), expected.a);
}

TEST(Otsu, MatchesExhaustiveSearchOnRandomHistograms) {
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 50; ++trial) {
        std::uniform_int_distribution<int> n(2, 300);
        std::uniform_int_distribution<int> lo(0, 200);
        const int a = lo(rng);
        std::uniform_int_distribution<int> bin(a, std::min(255, a + 1 + lo(rng)));
        std::vector<int> bins(n(rng));
        std::array<std::size_t, 256> hist{};
        for (int& v : bins) {
            v = bin(rng);
            ++hist[v];
        }
        EXPECT_EQ(otsu_threshold(hist), oracle::otsu_bruteforce(bins)) << "trial " << trial;
    }
}

TEST(Otsu, IdenticalImagesGiveEmptyMask) {
    std::mt19937_64 rng(4);
    const ImageTensor img = random_image(12, 12, rng);
    const OtsuResult r = otsu_shadow_mask(img, img);
    EXPECT_EQ(r.threshold, -1);
    EXPECT_EQ(r.mask.count(), 0u);
}

TEST(Otsu, DarkenedRectangleRecoveredExactly) {
    const ImageTensor free = constant(20, 24, 0.8, 0.6, 0.4);
    ImageTensor shadow = free;
    BinaryMask rect(20, 24);
    for (int y = 5; y < 14; ++y)
        for (int x = 3; x < 17; ++x) {
            rect.set(y, x, true);
            for (int c = 0; c < 3; ++c) shadow.at(c, y, x) *= 0.5;
        }
    const OtsuResult r = otsu_shadow_mask(shadow, free);
    EXPECT_EQ(r.mask, rect);
    std::vector<int> bins;
    for (int y = 0; y < 20; ++y)
        for (int x = 0; x < 24; ++x)
            bins.push_back(static_cast<int>(std::lround(
                std::abs(oracle::luma(shadow, y, x) - oracle::luma(free, y, x)) * 255.0)));
    EXPECT_EQ(r.threshold, oracle::otsu_bruteforce(bins));
}

TEST(Otsu, BimodalThresholdStrictlyBetweenModes) {
    const ImageTensor zero(8, 8, 0.0);
    ImageTensor diff(8, 8, 0.1);
    for (int y = 0; y < 8; ++y)
        for (int x = 4; x < 8; ++x)
            for (int c = 0; c < 3; ++c) diff.at(c, y, x) = 0.9;
    const OtsuResult r = otsu_shadow_mask(diff, zero);
    EXPECT_GE(r.threshold, static_cast<int>(std::lround(0.1 * 255)));
    EXPECT_LT(r.threshold, static_cast<int>(std::lround(0.9 * 255)));
    EXPECT_EQ(r.mask.count(), 32u);
}

TEST(RegionRmse, ZeroForIdenticalImages) {
    std::mt19937_64 rng(5);
    const ImageTensor img = random_image(6, 6, rng);
    const BinaryMask m = random_mask(6, 6, rng);
    for (Region r : kRegions) EXPECT_EQ(region_rmse(img, img, m, r), 0.0);
}

TEST(RegionRmse, SingleShadowPixelLeavesNonShadowAtZero) {
    std::mt19937_64 rng(6);
    const ImageTensor gt = random_image(4, 4, rng);
    ImageTensor pred = gt;
    BinaryMask m(4, 4);
    m.set(1, 2, true);
    pred.at(0, 1, 2) = 1.0 - pred.at(0, 1, 2);
    EXPECT_EQ(region_rmse(pred, gt, m, Region::non_shadow), 0.0);
    EXPECT_GT(region_rmse(pred, gt, m, Region::shadow), 0.0);
}

TEST(RegionRmse, MatchesLoopOracleOnRandomCases) {
    std::mt19937_64 rng(7);
    for (int trial = 0; trial < 25; ++trial) {
        const ImageTensor a = random_image(4, 4, rng);
        const ImageTensor b = random_image(4, 4, rng);
        const BinaryMask m = random_mask(4, 4, rng);
        for (int r = 0; r < 3; ++r) {
            EXPECT_NEAR(region_rmse(a, b, m, kRegions[r]), oracle::region_lab_error(a, b, m, r), 1e-9);
        }
    }
}

TEST(RegionRmse, AllLiesBetweenRegionsAndEmptyRegionIsZero) {
    std::mt19937_64 rng(8);
    for (int trial = 0; trial < 20; ++trial) {
        const ImageTensor a = random_image(6, 5, rng);
        const ImageTensor b = random_image(6, 5, rng);
        BinaryMask m = random_mask(6, 5, rng);
        m.set(0, 0, true);
        m.set(0, 1, false);
        const double s = region_rmse(a, b, m, Region::shadow);
        const double n = region_rmse(a, b, m, Region::non_shadow);
        const double all = region_rmse(a, b, m, Region::all);
        EXPECT_GE(all, std::min(s, n) - 1e-12);
        EXPECT_LE(all, std::max(s, n) + 1e-12);
    }
    EXPECT_EQ(region_rmse(ImageTensor(2, 2, 0.1), ImageTensor(2, 2, 0.9), BinaryMask(2, 2), Region::shadow),
              0.0);
}

TEST(RegionRmse, RootMeanSquareVariant) {
    const ImageTensor a = constant(3, 3, 0.2, 0.4, 0.6);
    const ImageTensor b = constant(3, 3, 0.3, 0.4, 0.5);
    const auto la = oracle::lab(0.2, 0.4, 0.6);
    const auto lb = oracle::lab(0.3, 0.4, 0.5);
    double sq = 0.0;
    for (int c = 0; c < 3; ++c) sq += (la[c] - lb[c]) * (la[c] - lb[c]);
    EXPECT_NEAR(region_rmse(a, b, BinaryMask(3, 3), Region::all, RmseKind::root_mean_square),
                std::sqrt(sq), 1e-9);
}

TEST(Psnr, ClosedForms) {
    const ImageTensor a(8, 8, 0.5);
    EXPECT_EQ(psnr(a, a), 100.0);
    const ImageTensor b(8, 8, 0.5 + 1.0 / 255.0);
    EXPECT_NEAR(psnr(a, b), 20.0 * std::log10(255.0), 1e-9);
    EXPECT_NEAR(psnr(a, b), 48.13, 0.01);
    const ImageTensor c(8, 8, 0.5 + 0.5 / 255.0);
    EXPECT_NEAR(psnr(a, c) - psnr(a, b), 20.0 * std::log10(2.0), 1e-9);
}

TEST(Psnr, MatchesOracleOnRandomPairs) {
    std::mt19937_64 rng(9);
    for (int i = 0; i < 25; ++i) {
        const ImageTensor a = random_image(5, 7, rng);
        const ImageTensor b = random_image(5, 7, rng);
        EXPECT_NEAR(psnr(a, b), oracle::psnr(a, b), 1e-9);
    }
}

TEST(Ssim, IdenticalIsOneAndNegativeIsLess) {
    std::mt19937_64 rng(10);
    const ImageTensor img = random_image(16, 16, rng);
    EXPECT_NEAR(ssim(img, img), 1.0, 1e-12);
    ImageTensor neg = img;
    for (double& v : neg.values()) v = 1.0 - v;
    EXPECT_LT(ssim(img, neg), 1.0);
}

TEST(Ssim, MatchesDirectFormulaOnRandomCases) {
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 20; ++trial) {
        const int h = 12 + trial % 6;
        const int w = 16;
        const ImageTensor a = random_image(h, w, rng);
        ImageTensor b = a;
        std::normal_distribution<double> noise(0.0, 0.1);
        for (double& v : b.values()) v = std::clamp(v + noise(rng), 0.0, 1.0);
        EXPECT_NEAR(ssim(a, b), oracle::ssim(a, b), 1e-6) << h;
    }
}

TEST(Ssim, SmallImagesShrinkTheWindow) {
    std::mt19937_64 rng(12);
    const ImageTensor a = random_image(6, 9, rng);
    const ImageTensor b = random_image(6, 9, rng);
    EXPECT_NEAR(ssim(a, b), oracle::ssim(a, b), 1e-6);
    EXPECT_LE(ssim(a, b), 1.0);
}

TEST(Evaluate, GroundTruthDatasetIsPerfect) {
    const auto data = generate_synthetic_shadow(13, 4, 16);
    const EvalReport r = evaluate_dataset([](const ShadowTriplet& t) { return t.shadow_free; }, data,
                                          MaskSource::provided);
    EXPECT_EQ(r.images, 4u);
    for (Region reg : kRegions) {
        EXPECT_EQ(r.region(reg).rmse, 0.0);
        EXPECT_NEAR(r.region(reg).ssim, 1.0, 1e-12);
        EXPECT_EQ(r.region(reg).psnr, kPsnrCap);
    }
}

TEST(Evaluate, IdentityPredictorIsWorseInShadow) {
    const auto data = generate_synthetic_shadow(14, 6, 16);
    for (MaskSource src : {MaskSource::provided, MaskSource::otsu}) {
        const EvalReport r =
            evaluate_dataset([](const ShadowTriplet& t) { return t.shadow; }, data, src);
        EXPECT_GT(r.shadow.rmse, r.non_shadow.rmse) << to_string(src);
    }
}

TEST(Evaluate, AggregateMatchesHandComputedMean) {
    const auto data = generate_synthetic_shadow(15, 2, 16);
    const Predictor id = [](const ShadowTriplet& t) { return t.shadow; };
    const EvalReport r = evaluate_dataset(id, data, MaskSource::provided);
    ASSERT_EQ(r.per_image.size(), 2u);
    const ImageMetrics m0 = evaluate_image(data[0].shadow, data[0].shadow_free, data[0].mask);
    const ImageMetrics m1 = evaluate_image(data[1].shadow, data[1].shadow_free, data[1].mask);
    EXPECT_NEAR(r.shadow.rmse, (m0.shadow.rmse + m1.shadow.rmse) / 2.0, 1e-12);
    EXPECT_NEAR(r.all.psnr, (m0.all.psnr + m1.all.psnr) / 2.0, 1e-12);
    EXPECT_NEAR(r.non_shadow.ssim, (m0.non_shadow.ssim + m1.non_shadow.ssim) / 2.0, 1e-12);
    EXPECT_NEAR(m0.shadow.rmse,
                oracle::region_lab_error(data[0].shadow, data[0].shadow_free, data[0].mask, 1), 1e-9);
}

TEST(Evaluate, PermutationInvariant) {
    auto data = generate_synthetic_shadow(16, 5, 16);
    const Predictor id = [](const ShadowTriplet& t) { return t.shadow; };
    const EvalReport a = evaluate_dataset(id, data, MaskSource::provided);
    std::reverse(data.begin(), data.end());
    std::swap(data[0], data[2]);
    const EvalReport b = evaluate_dataset(id, data, MaskSource::provided);
    for (Region reg : kRegions) EXPECT_EQ(a.region(reg), b.region(reg));
}

TEST(Evaluate, SizeMismatchIsSkippedAndRecorded) {
    const auto data = generate_synthetic_shadow(17, 3, 16);
    const std::string bad = data[1].name;
    const Predictor flaky = [&bad](const ShadowTriplet& t) {
        return t.name == bad ? ImageTensor(8, 8) : t.shadow;
    };
    const EvalReport r = evaluate_dataset(flaky, data, MaskSource::provided);
    EXPECT_EQ(r.images, 2u);
    EXPECT_EQ(r.skipped, 1u);
    ASSERT_EQ(r.errors.size(), 1u);
    EXPECT_NE(r.errors[0].find(bad), std::string::npos);
}

TEST(Evaluate, JsonAndCsvAgree) {
    const auto data = generate_synthetic_shadow(18, 3, 16);
    const EvalReport r =
        evaluate_dataset([](const ShadowTriplet& t) { return t.shadow; }, data, MaskSource::provided);
    const auto j = nlohmann::json::parse(report_to_json(r));
    std::istringstream csv(report_to_csv(r));
    std::string line;
    std::getline(csv, line);
    EXPECT_EQ(line, "region,rmse,psnr,ssim");
    int rows = 0;
    while (std::getline(csv, line)) {
        std::istringstream fields(line);
        std::string region, rmse, ps, ss;
        std::getline(fields, region, ',');
        std::getline(fields, rmse, ',');
        std::getline(fields, ps, ',');
        std::getline(fields, ss, ',');
        EXPECT_EQ(std::stod(rmse), j.at("regions").at(region).at("rmse").get<double>());
        EXPECT_EQ(std::stod(ps), j.at("regions").at(region).at("psnr").get<double>());
        EXPECT_EQ(std::stod(ss), j.at("regions").at(region).at("ssim").get<double>());
        ++rows;
    }
    EXPECT_EQ(rows, 3);
}

namespace {

class ConstantProvider : public PerceptualProvider {
public:
    std::string name() const override { return "const"; }
    double distance(const ImageTensor& a, const ImageTensor& b) const override {
        return a == b ? 0.0 : 0.25;
    }
};

}  // namespace

TEST(Evaluate, PerceptualProviderAddsColumn) {
    const auto data = generate_synthetic_shadow(19, 2, 16);
    ConstantProvider p;
    const EvalReport r = evaluate_dataset([](const ShadowTriplet& t) { return t.shadow; }, data,
                                          MaskSource::provided, &p);
    ASSERT_TRUE(r.all.lpips.has_value());
    EXPECT_EQ(*r.all.lpips, 0.25);
    EXPECT_FALSE(r.shadow.lpips.has_value());
    EXPECT_NE(report_to_csv(r).find("lpips"), std::string::npos);
}

TEST(WeightMaps, ConstantMapsNormalizeToHalf) {
    const Tensor w({1, 4, 2, 2}, 0.7);
    const auto [a, b] = weight_maps(w, w, 8, 8);
    EXPECT_EQ(a.height(), 8);
    for (double v : a.values()) EXPECT_EQ(v, 0.5);
    for (double v : b.values()) EXPECT_EQ(v, 0.5);
}

TEST(WeightMaps, ChannelMeanMatchesLoopOracle) {
    std::mt19937_64 rng(20);
    const Tensor w1 = testing_support::random_tensor({1, 3, 2, 2}, rng, 0.0, 1.0);
    const Tensor w2 = testing_support::random_tensor({1, 3, 2, 2}, rng, 0.0, 1.0);
    const auto [m1, m2] = weight_maps(w1, w2, 4, 4);
    double mean[4];
    for (int p = 0; p < 4; ++p) mean[p] = (w1[p] + w1[4 + p] + w1[8 + p]) / 3.0;
    const double lo = *std::min_element(mean, mean + 4);
    const double hi = *std::max_element(mean, mean + 4);
    for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 4; ++x) {
            const double expected = (mean[(y / 2) * 2 + x / 2] - lo) / (hi - lo);
            for (int c = 0; c < 3; ++c) EXPECT_NEAR(m1.at(c, y, x), expected, 1e-12);
        }
    (void)m2;
}

TEST(LabDifference, GroundTruthAgainstItselfIsZero) {
    std::mt19937_64 rng(21);
    const ImageTensor img = random_image(8, 8, rng);
    const auto [da, db] = lab_difference_maps(img, img);
    for (double v : da.values()) EXPECT_EQ(v, 0.0);
    for (double v : db.values()) EXPECT_EQ(v, 0.0);
}

TEST(PairwiseSum, MatchesNaiveSumOnIntegers) {
    std::vector<double> v(1000);
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<double>(i % 37);
    double naive = 0.0;
    for (double x : v) naive += x;
    EXPECT_EQ(pairwise_sum(v), naive);
}
