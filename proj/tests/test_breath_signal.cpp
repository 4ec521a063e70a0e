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

#include <cmath>
#include <complex>
#include <numbers>
#include <set>

#include "sweep4d/breath_signal.hpp"
#include "sweep4d/error.hpp"
#include "sweep4d/metrics.hpp"
#include "sweep4d/phantom.hpp"
#include "support.hpp"

using namespace sweep4d;

namespace {

NccSeries series_of(std::vector<double> v)
{
    NccSeries s;
    s.values = std::move(v);
    s.degenerate.assign(s.values.size(), 0);
    s.smoothing_sigma_slices = 1.0;
    return s;
}

std::vector<double> slice_values(const Slice2D& s) { return {s.data.begin(), s.data.end()}; }

Slice2D slice_from(const std::vector<double>& v, int nx, int ny)
{
    Slice2D s(nx, ny, 1.0, 1.0);
    for (std::size_t i = 0; i < v.size(); ++i)
        s.data[i] = static_cast<float>(v[i]);
    return s;
}

int dominant_bin(const std::vector<double>& v)
{
    const int t = static_cast<int>(v.size());
    double mean = 0;
    for (double x : v)
        mean += x;
    mean /= t;
    int best = 0;
    double power = -1;
    for (int k = 1; k <= t / 2; ++k) {
        std::complex<double> c = 0;
        for (int i = 0; i < t; ++i)
            c += (v[i] - mean) * std::polar(1.0, -2 * std::numbers::pi * k * i / t);
        if (std::norm(c) > power) {
            power = std::norm(c);
            best = k;
        }
    }
    return best;
}

struct SweepCase {
    Phantom phantom;
    Acquisition acq;
};

SweepCase phantom_sweep(double amplitude, int period_slices, int slices, double noise, std::uint64_t seed)
{
    const Grid3 grid = centred_grid({32, 32, 32}, 4.0);
    PhantomSpec spec = PhantomSpec::abdominal(grid, seed);
    spec.noise_fraction = noise;
    SweepCase c{make_phantom(spec), {}};
    BreathingModel br = BreathingModel::abdominal(grid);
    br.amplitude_mm = amplitude;
    br.period_s = 0.49 * period_slices;
    AcquisitionSpec a;
    a.num_slices = slices;
    a.z_start = -0.5 * a.sweep_rate * a.slice_time * (slices - 1);
    c.acq = acquire_sweep(c.phantom, br, a, 4);
    return c;
}

} // namespace

TEST_CASE("gaussian_reference of a constant stack is the stack")
{
    Rng rng(1);
    SliceStack s = test::random_stack(rng, 9, 4, 3);
    for (Slice2D& sl : s.slices)
        sl = s.slices[0];
    const SliceStack r = gaussian_reference(s, 2.5);
    for (std::size_t k = 0; k < s.size(); ++k)
        for (std::size_t i = 0; i < s.slices[k].size(); ++i)
            CHECK(r.slices[k].data[i] == doctest::Approx(s.slices[k].data[i]).epsilon(1e-6));
}

TEST_CASE("gaussian_reference with a vanishing sigma is the identity")
{
    Rng rng(2);
    const SliceStack s = test::random_stack(rng, 6, 3, 3);
    const SliceStack r = gaussian_reference(s, 1e-3);
    for (std::size_t k = 0; k < s.size(); ++k)
        CHECK(r.slices[k].data == s.slices[k].data);
}

TEST_CASE("gaussian_reference of alternating slices lies strictly between them")
{
    Rng rng(3);
    SliceStack s = test::random_stack(rng, 12, 4, 4);
    Slice2D a(4, 4, 1, 1), b(4, 4, 1, 1);
    for (std::size_t i = 0; i < a.size(); ++i) {
        a.data[i] = static_cast<float>(10 + i);
        b.data[i] = static_cast<float>(50 + 2 * i);
    }
    for (std::size_t k = 0; k < s.size(); ++k)
        s.slices[k] = k % 2 ? b : a;
    const SliceStack r = gaussian_reference(s, 1.0);
    for (std::size_t k = 0; k < s.size(); ++k) {
        // Weighted-sum oracle over the truncated, renormalised kernel.
        double wa = 0, wb = 0;
        for (int j = -4; j <= 4; ++j) {
            const int t = static_cast<int>(k) + j;
            if (t < 0 || t >= 12)
                continue;
            const double w = std::exp(-0.5 * j * j);
            (t % 2 ? wb : wa) += w;
        }
        for (std::size_t i = 0; i < a.size(); ++i) {
            const double v = r.slices[k].data[i];
            CHECK(v > a.data[i]);
            CHECK(v < b.data[i]);
            CHECK(v == doctest::Approx((wa * a.data[i] + wb * b.data[i]) / (wa + wb)).epsilon(1e-5));
        }
    }
}

TEST_CASE("ncc definitions")
{
    Rng rng(4);
    const SliceStack s = test::random_stack(rng, 1, 5, 4);
    const Slice2D& a = s.slices[0];
    CHECK(ncc(a, a).value == doctest::Approx(1.0).epsilon(1e-12));
    std::vector<double> neg = slice_values(a);
    for (double& x : neg)
        x = 300.0 - x;
    CHECK(ncc(a, slice_from(neg, 5, 4)).value == doctest::Approx(-1.0).epsilon(1e-12));

    const std::vector<double> x{1, 2, 3, 4, 5, 6, 7, 8, 10}, y{2, 1, 4, 3, 6, 5, 9, 7, 8};
    // Hand computation: mean-centred cross products over sqrt of the sums of squares.
    const double mx = 46.0 / 9, my = 5.0;
    double sxy = 0, sxx = 0, syy = 0;
    for (int i = 0; i < 9; ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
    }
    CHECK(ncc(slice_from(x, 3, 3), slice_from(y, 3, 3)).value == doctest::Approx(sxy / std::sqrt(sxx * syy)).epsilon(1e-9));

    const NccValue flat = ncc(Slice2D(3, 3, 1, 1, 4.0f), slice_from(x, 3, 3));
    CHECK(flat.value == 0.0);
    CHECK(flat.degenerate);
}

TEST_CASE("ncc matches the Pearson oracle on 100 random instances")
{
    Rng rng(5);
    for (int i = 0; i < 100; ++i) {
        const int nx = 2 + static_cast<int>(rng.below(12)), ny = 1 + static_cast<int>(rng.below(12));
        std::vector<double> a(nx * ny), b(nx * ny);
        for (std::size_t j = 0; j < a.size(); ++j) {
            a[j] = static_cast<float>(rng.uniform(0, 100));
            b[j] = static_cast<float>(0.5 * a[j] + rng.uniform(0, 100));
        }
        const double got = ncc(slice_from(a, nx, ny), slice_from(b, nx, ny)).value;
        CHECK(test::rel_err(got, test::brute_pearson(a, b)) < 1e-6);
    }
}

TEST_CASE("ncc is invariant to affine intensity rescaling")
{
    Rng rng(6);
    for (int i = 0; i < 20; ++i) {
        const SliceStack s = test::random_stack(rng, 2, 6, 6);
        const double alpha = rng.uniform(0.1, 10), beta = rng.uniform(-50, 50);
        std::vector<double> scaled = slice_values(s.slices[0]);
        for (double& x : scaled)
            x = alpha * x + beta;
        CHECK(ncc(slice_from(scaled, 6, 6), s.slices[1]).value ==
              doctest::Approx(ncc(s.slices[0], s.slices[1]).value).epsilon(1e-6));
    }
}

TEST_CASE("ncc_series against itself and on constant stacks")
{
    Rng rng(7);
    const SliceStack s = test::random_stack(rng, 8, 4, 4);
    const NccSeries self = ncc_series(s, s);
    for (double v : self.values)
        CHECK(v == doctest::Approx(1.0).epsilon(1e-9));

    SliceStack flat = s;
    for (Slice2D& sl : flat.slices)
        std::fill(sl.data.begin(), sl.data.end(), 3.0f);
    const NccSeries f = ncc_series(flat, gaussian_reference(flat, 2.0));
    for (std::size_t t = 0; t < f.size(); ++t) {
        CHECK(f.values[t] == 0.0);
        CHECK(f.degenerate[t] == 1);
    }

    const SliceStack other = test::random_stack(rng, 7, 4, 4);
    CHECK_THROWS_AS(ncc_series(s, other), DataError);
}

TEST_CASE("phantom NCC series repeats twice per breathing cycle")
{
    // Both average-state crossings of a cycle produce a peak, so the dominant bin is twice
    // the number of cycles in the stack.
    for (int period : {8, 16}) {
        const SweepCase c = phantom_sweep(4.0, period, 160, 0.0, 1);
        const NccSeries s = ncc_series(c.acq.stack, gaussian_reference(c.acq.stack, period / 2.0));
        CHECK(dominant_bin(s.values) == 2 * 160 / period);
    }
}

TEST_CASE("detect_peaks on a sine finds the analytic maxima")
{
    std::vector<double> v(100);
    for (int t = 0; t < 100; ++t)
        v[t] = std::sin(2 * std::numbers::pi * t / 20.0);
    const PeakSet p = detect_peaks(series_of(v), 10, 0.5);
    REQUIRE(p.indices.size() == 5);
    for (int i = 0; i < 5; ++i)
        CHECK(std::abs(p.indices[i] - (5 + 20 * i)) <= 1);
}

TEST_CASE("detect_peaks errors and tie-breaking")
{
    std::vector<double> mono(30);
    for (int t = 0; t < 30; ++t)
        mono[t] = t;
    try {
        detect_peaks(series_of(mono), 2, 0.0);
        FAIL("expected DataError");
    } catch (const DataError& e) {
        CHECK(std::string(e.what()) == "no respiratory signal detected");
    }

    // Two equal maxima two samples apart with separation 3: the lower index survives.
    const std::vector<double> twin{0, 1, 5, 1, 5, 1, 0, 0, 0, 0};
    const PeakSet p = detect_peaks(series_of(twin), 3, 0.1);
    REQUIRE(p.indices.size() == 1);
    CHECK(p.indices[0] == 2);

    const std::vector<double> plateau{0, 1, 3, 3, 3, 1, 0};
    const auto maxima = local_maxima(plateau);
    REQUIRE(maxima.size() == 1);
    CHECK(maxima[0].first == 3);
}

TEST_CASE("detect_peaks is unchanged by a constant offset")
{
    Rng rng(8);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<double> v(120), w(120);
        for (int t = 0; t < 120; ++t) {
            v[t] = std::cos(2 * std::numbers::pi * t / 14.0) + 0.2 * rng.uniform(-1, 1);
            w[t] = v[t] + 3.75;
        }
        const double range = 2.4;
        CHECK(detect_peaks(series_of(v), 4, 0.25 * range).indices ==
              detect_peaks(series_of(w), 4, 0.25 * range).indices);
    }
}

TEST_CASE("peaks are strictly increasing and respect the separation")
{
    Rng rng(9);
    for (int trial = 0; trial < 30; ++trial) {
        std::vector<double> v(200);
        for (double& x : v)
            x = rng.uniform(-1, 1);
        const int sep = 1 + static_cast<int>(rng.below(10));
        const PeakSet p = detect_peaks(series_of(v), sep, 0.0);
        CHECK(p.min_separation == sep);
        for (std::size_t i = 1; i < p.indices.size(); ++i)
            CHECK(p.indices[i] - p.indices[i - 1] >= sep);
    }
}

TEST_CASE("autocorrelation_period of a sampled cosine")
{
    for (int period : {8, 13, 20, 40}) {
        std::vector<double> v(10 * period);
        for (std::size_t t = 0; t < v.size(); ++t)
            v[t] = std::cos(2 * std::numbers::pi * t / period);
        CHECK(std::abs(autocorrelation_period(v) - period) <= 1);
    }
    CHECK_THROWS_AS(autocorrelation_period(std::vector<double>{1, 2, 3, 4, 5, 6}), DataError);
}

TEST_CASE("pseudo_labels of a perfect sinusoidal NCC: four runs of five per 20-slice cycle")
{
    // Breathing period 20 slices: the NCC peaks at both average-state crossings, every 10.
    std::vector<double> v(100);
    for (int t = 0; t < 100; ++t)
        v[t] = std::cos(2 * std::numbers::pi * (t - 5) / 10.0);
    const NccSeries s = series_of(v);
    const PeakSet p = detect_peaks(s, 5, 0.5);
    REQUIRE(p.indices.front() == 5);
    const RespiratoryLabeling l = pseudo_labels(s, p, 4, 0.0);
    for (int t = 0; t < 100; ++t) {
        // closed form: phase = (t - 5) / 20 mod 1
        const double phase = std::fmod((t - 5) / 20.0 + 1.0, 1.0);
        CHECK(l.phase[t] == doctest::Approx(phase).epsilon(1e-9));
        CHECK(l.states[t] == static_cast<int>(std::floor(phase * 4 + 1e-9)));
    }
    for (int start = 5; start + 20 <= 100; start += 20)
        for (int run = 0; run < 4; ++run)
            for (int j = 0; j < 5; ++j)
                CHECK(l.states[start + 5 * run + j] == run);

    const RespiratoryLabeling half = pseudo_labels(s, p, 2, 0.0);
    for (std::size_t i = 0; i + 1 < p.indices.size(); ++i) {
        const int expected = static_cast<int>(i % 2);
        for (int t = p.indices[i]; t < p.indices[i + 1]; ++t)
            CHECK(half.states[t] == expected);
    }
}

TEST_CASE("pseudo_labels phases are piecewise linear between peaks and consistent with states")
{
    Rng rng(10);
    for (int trial = 0; trial < 20; ++trial) {
        PeakSet p;
        int t = 2 + static_cast<int>(rng.below(6));
        while (t < 150) {
            p.indices.push_back(t);
            t += 4 + static_cast<int>(rng.below(12));
        }
        const NccSeries s = series_of(std::vector<double>(160, 0.0));
        const int k = 2 + static_cast<int>(rng.below(9));
        const double first = rng.below(2) ? 0.5 : 0.0;
        const RespiratoryLabeling l = pseudo_labels(s, p, k, first);
        CHECK_NOTHROW(l.validate());
        for (std::size_t i = 0; i < p.indices.size(); ++i)
            CHECK(l.phase[p.indices[i]] == doctest::Approx(std::fmod(first + 0.5 * i, 1.0)));
        for (std::size_t i = 0; i + 1 < p.indices.size(); ++i) {
            const int a = p.indices[i], b = p.indices[i + 1];
            for (int u = a; u < b; ++u) {
                const double expect = std::fmod(first + 0.5 * i + 0.5 * (u - a) / (b - a), 1.0);
                CHECK(l.phase[u] == doctest::Approx(expect).epsilon(1e-9));
            }
        }
        for (std::size_t u = 0; u < l.size(); ++u) {
            CHECK(l.phase[u] >= 0.0);
            CHECK(l.phase[u] < 1.0);
            CHECK(l.states[u] == static_cast<int>(std::floor(l.phase[u] * k)));
        }
    }
    PeakSet one;
    one.indices = {4};
    CHECK_THROWS_AS(pseudo_labels(series_of(std::vector<double>(10, 0.0)), one, 4), DataError);
}

TEST_CASE("select_slices partitions the stack")
{
    Rng rng(11);
    const SliceStack s = test::random_stack(rng, 200, 2, 2);
    std::vector<int> states(200);
    for (int t = 0; t < 200; ++t)
        states[t] = static_cast<int>(std::floor(std::fmod(t * 0.0519, 1.0) * 10));
    const RespiratoryLabeling l = RespiratoryLabeling::from_states(states, 10, LabelSource::Pseudo);
    std::multiset<int> all;
    for (int k = 0; k < 10; ++k) {
        std::vector<int> idx;
        const SliceStack sel = select_slices(s, l, k, &idx);
        CHECK(std::abs(static_cast<int>(sel.size()) - 20) <= 2);
        for (std::size_t i = 0; i < idx.size(); ++i) {
            CHECK(sel.z_positions[i] == s.z_positions[idx[i]]);
            CHECK(sel.acq_times[i] == s.acq_times[idx[i]]);
            if (i > 0)
                CHECK(idx[i] > idx[i - 1]);
        }
        all.insert(idx.begin(), idx.end());
    }
    CHECK(all.size() == 200);
    CHECK(std::set<int>(all.begin(), all.end()).size() == 200);

    const RespiratoryLabeling two = RespiratoryLabeling::from_states(std::vector<int>(200, 0), 2, LabelSource::Pseudo);
    CHECK_THROWS_AS(select_slices(s, two, 1), DataError);
}

TEST_CASE("pseudo labels recover a noiseless sinusoidal phantom")
{
    const Grid3 grid = centred_grid({64, 64, 48}, 3.0);
    PhantomSpec spec = PhantomSpec::abdominal(grid, 1);
    spec.noise_fraction = 0.0;
    const Phantom ph = make_phantom(spec);
    BreathingModel br = BreathingModel::abdominal(grid);
    br.amplitude_mm = 4.0;
    br.period_s = 8 * 0.49;
    br.phase0 = 0.137;
    AcquisitionSpec a;
    a.num_slices = 400;
    a.z_start = -15.0;
    const Acquisition acq = acquire_sweep(ph, br, a, 5);

    PseudoLabelConfig cfg;
    cfg.num_states = 5;
    cfg.presmooth = false;
    const PseudoLabelResult r = pseudo_label_stack(acq.stack, cfg);
    CHECK(r.breathing_period_slices == doctest::Approx(8.0));
    CHECK(*classification_report(r.labels, acq.truth).accuracy >= 0.9);
}
