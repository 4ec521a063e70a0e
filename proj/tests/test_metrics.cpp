/*
 * sweep4d: respiratory-resolved 4D reconstruction of SWEEP slice stacks
 *
 * Copyright 2026 The sweep4d Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>

#include "sweep4d/error.hpp"
#include "sweep4d/metrics.hpp"
#include "support.hpp"

using namespace sweep4d;

namespace {

double brute_psnr(const std::vector<double>& a, const std::vector<double>& b)
{
    double mx = -std::numeric_limits<double>::infinity(), se = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        mx = std::max(mx, b[i]);
        se += (a[i] - b[i]) * (a[i] - b[i]);
    }
    return 10.0 * std::log10(mx * mx / (se / a.size()));
}

std::vector<double> uniform(Rng& rng, std::size_t n, double lo, double hi)
{
    std::vector<double> v(n);
    for (double& x : v)
        x = rng.uniform(lo, hi);
    return v;
}

RespiratoryLabeling labels(std::vector<int> s, int k)
{
    return RespiratoryLabeling::from_states(std::move(s), k, LabelSource::Pseudo);
}

} // namespace

TEST_CASE("psnr: identical inputs, a hand value, asymmetry")
{
    const std::vector<double> a{1, 2, 3, 4};
    CHECK(std::isinf(psnr(a, a)));
    CHECK(psnr(a, a) > 0);

    // MAX 8, MSE 1: 10 log10(64) = 18.0618 dB.
    const std::vector<double> ref{8, 0, 0, 0}, test{7, 1, 1, 1};
    CHECK(psnr(test, ref) == doctest::Approx(18.0618).epsilon(1e-4));
    // The peak is taken from the reference only.
    CHECK(psnr(ref, test) != doctest::Approx(psnr(test, ref)));
    CHECK(psnr(ref, test) == doctest::Approx(10 * std::log10(49.0)).epsilon(1e-9));
    CHECK_THROWS_AS(psnr(a, std::vector<double>{1, 2}), DataError);
}

TEST_CASE("psnr matches brute force on 100 random instances")
{
    Rng rng(1);
    for (int i = 0; i < 100; ++i) {
        const std::size_t n = 1 + rng.below(400);
        const auto a = uniform(rng, n, 0, 100), b = uniform(rng, n, 1, 100);
        CHECK(std::abs(psnr(a, b) - brute_psnr(a, b)) < 1e-6);
    }
}

TEST_CASE("psnr overloads agree on volumes and stacks")
{
    Rng rng(2);
    const Grid3 g{{5, 4, 3}, {1, 1, 1}, {0, 0, 0}};
    const VolumeD a = test::random_volume(rng, g, 0, 50), b = test::random_volume(rng, g, 0, 50);
    CHECK(psnr(a, b) == doctest::Approx(brute_psnr(a.storage(), b.storage())).epsilon(1e-12));
    CHECK(psnr(a.cast<float>(), b.cast<float>()) == doctest::Approx(psnr(a, b)).epsilon(1e-5));
    const SliceStack s1 = test::random_stack(rng, 3, 4, 4), s2 = test::random_stack(rng, 3, 4, 4);
    std::vector<double> f1, f2;
    for (std::size_t k = 0; k < 3; ++k)
        for (std::size_t p = 0; p < 16; ++p) {
            f1.push_back(s1.slices[k].data[p]);
            f2.push_back(s2.slices[k].data[p]);
        }
    CHECK(psnr(s1, s2) == doctest::Approx(brute_psnr(f1, f2)).epsilon(1e-12));
}

TEST_CASE("ssim of identical images and of constants")
{
    Rng rng(3);
    const auto a = uniform(rng, 20 * 18, 0, 10);
    CHECK(ssim_2d(a, a, 20, 18, 10.0) == doctest::Approx(1.0).epsilon(1e-12));

    // Constant images c1, c2: SSIM = (2 c1 c2 + C1) / (c1^2 + c2^2 + C1) everywhere.
    const double c1 = 3.0, c2 = 5.0, range = 10.0;
    const std::vector<double> x(16 * 16, c1), y(16 * 16, c2);
    const double k1 = std::pow(0.01 * range, 2);
    CHECK(ssim_2d(x, y, 16, 16, range) == doctest::Approx((2 * c1 * c2 + k1) / (c1 * c1 + c2 * c2 + k1)));

    const Grid3 g{{12, 12, 4}, {1, 1, 1}, {0, 0, 0}};
    const VolumeD v = test::random_volume(rng, g, 0, 100);
    CHECK(ssim(v, v) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(ssim(VolumeD(g, 2.0), VolumeD(g, 2.0)) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("ssim_2d matches the windowed brute force on 100 random 16x16 pairs")
{
    Rng rng(4);
    for (int i = 0; i < 100; ++i) {
        const int nx = 16, ny = 16;
        const auto a = uniform(rng, nx * ny, 0, 100);
        auto b = a;
        const double noise = rng.uniform(0.1, 40.0);
        for (double& x : b)
            x += rng.uniform(-noise, noise);
        const double range = ssim_range(a, b);
        CHECK(std::abs(ssim_2d(a, b, nx, ny, range) - test::brute_ssim_2d(a, b, nx, ny, range)) < 1e-6);
    }
    // Narrow images shrink the window.
    const auto a = uniform(rng, 7 * 30, 0, 1), b = uniform(rng, 7 * 30, 0, 1);
    CHECK(std::abs(ssim_2d(a, b, 7, 30, 1.0) - test::brute_ssim_2d(a, b, 7, 30, 1.0)) < 1e-6);
}

TEST_CASE("volume ssim is symmetric and bounded")
{
    Rng rng(5);
    const Grid3 g{{14, 13, 5}, {1, 1, 1}, {0, 0, 0}};
    for (int i = 0; i < 10; ++i) {
        const VolumeD a = test::random_volume(rng, g, 0, 80), b = test::random_volume(rng, g, 10, 200);
        CHECK(std::abs(ssim(a, b) - ssim(b, a)) < 1e-9);
        CHECK(ssim(a, b) <= 1.0);
        CHECK(ssim(a, b) >= -1.0);
    }
    CHECK(ssim_range(std::vector<double>{1, 3}, std::vector<double>{0, 10}) == 10.0);
    CHECK(ssim_range(std::vector<double>{-4, -4}, std::vector<double>{2, 2}) == 4.0);
    CHECK(ssim_range(std::vector<double>{0, 0}, std::vector<double>{0, 0}) == 1.0);
}

TEST_CASE("classification report: identical, shifted, random")
{
    std::vector<int> truth;
    for (int t = 0; t < 100; ++t)
        truth.push_back((t / 4) % 5);
    const EvalReport same = classification_report(labels(truth, 5), labels(truth, 5));
    CHECK(*same.accuracy == 1.0);
    CHECK(*same.adjacent_accuracy == 1.0);

    std::vector<int> shifted = truth;
    for (int& s : shifted)
        s = (s + 1) % 5;
    const EvalReport sh = classification_report(labels(shifted, 5), labels(truth, 5));
    CHECK(*sh.accuracy == 0.0);
    CHECK(*sh.adjacent_accuracy == 1.0);
    for (int s = 0; s < 5; ++s)
        CHECK(sh.confusion[s][(s + 1) % 5] == 20);

    Rng rng(6);
    std::vector<int> a(20000), b(20000);
    for (std::size_t i = 0; i < a.size(); ++i) {
        a[i] = static_cast<int>(rng.below(5));
        b[i] = static_cast<int>(rng.below(5));
    }
    const EvalReport rnd = classification_report(labels(a, 5), labels(b, 5));
    CHECK(std::abs(*rnd.accuracy - 0.2) < 0.05);
    long trace = 0, total = 0;
    for (int i = 0; i < 5; ++i)
        for (int j = 0; j < 5; ++j) {
            total += rnd.confusion[i][j];
            if (i == j)
                trace += rnd.confusion[i][j];
        }
    CHECK(total == 20000);
    CHECK(*rnd.accuracy == doctest::Approx(static_cast<double>(trace) / total).epsilon(1e-15));
    CHECK(*rnd.adjacent_accuracy >= *rnd.accuracy);
}

TEST_CASE("classification report errors and serialisation")
{
    CHECK_THROWS_AS(classification_report(labels({0, 1}, 2), labels({0, 1}, 3)), ConfigError);
    CHECK_THROWS_AS(classification_report(labels({0, 1, 1}, 2), labels({0, 1}, 2)), DataError);

    EvalReport r = classification_report(labels({0, 1, 1, 0}, 2), labels({0, 1, 0, 0}, 2));
    CHECK(*r.accuracy == 0.75);
    r.psnr = 30.5;
    const auto j = r.to_json();
    CHECK(j.at("accuracy").get<double>() == 0.75);
    CHECK(j.at("psnr_db").get<double>() == 30.5);
    CHECK(j.at("ssim").is_null());
    const std::string header = EvalReport::csv_header(), row = r.csv_row("run");
    CHECK(std::count(header.begin(), header.end(), ',') == std::count(row.begin(), row.end(), ','));
    CHECK(row.rfind("run,", 0) == 0);
}
