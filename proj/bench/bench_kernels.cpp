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

// Serial reference kernels against their OpenMP counterparts, plus one full objective
// evaluation. Sizes follow the 96x96x120 reconstruction grid.

#include <benchmark/benchmark.h>

#include <vector>

#include "sweep4d/kernels.hpp"
#include "sweep4d/phantom.hpp"
#include "sweep4d/psf.hpp"
#include "sweep4d/rng.hpp"
#include "sweep4d/sr_recon.hpp"

using namespace sweep4d;
namespace k = sweep4d::kernels;

namespace {

constexpr k::Dims kDims{96, 96, 120};
constexpr std::size_t kPlane = 96 * 96;

std::vector<double> random_values(std::size_t n, std::uint64_t seed)
{
    Rng rng(seed);
    std::vector<double> v(n);
    for (double& x : v)
        x = rng.uniform(0.0, 100.0);
    return v;
}

std::vector<k::WeightRow> sweep_rows(int count)
{
    const Grid3 g{kDims, {2.5, 2.5, 2.5}, {0, 0, 0}};
    PsfSpec psf;
    std::vector<k::WeightRow> rows;
    for (int i = 0; i < count; ++i)
        rows.push_back(psf_row(g.coord(2, (kDims[2] - 1) * (i + 0.5) / count), g, psf));
    return rows;
}

const std::vector<double>& volume()
{
    static const std::vector<double> v = random_values(kPlane * kDims[2], 1);
    return v;
}

template <bool Omp>
void BM_mix_planes(benchmark::State& state)
{
    const auto rows = sweep_rows(60);
    std::vector<double> out(rows.size() * kPlane);
    for (auto _ : state) {
        if constexpr (Omp)
            k::omp::mix_planes(volume(), kPlane, rows, out);
        else
            k::serial::mix_planes(volume(), kPlane, rows, out);
        benchmark::DoNotOptimize(out.data());
    }
}

template <bool Omp>
void BM_mix_planes_transpose(benchmark::State& state)
{
    const auto rows = sweep_rows(60);
    const auto fan_in = k::PlaneFanIn::build(rows, kDims[2]);
    const auto in = random_values(rows.size() * kPlane, 2);
    std::vector<double> out(kPlane * kDims[2]);
    for (auto _ : state) {
        if constexpr (Omp)
            k::omp::mix_planes_transpose(in, kPlane, fan_in, out);
        else
            k::serial::mix_planes_transpose(in, kPlane, rows, kDims[2], out);
        benchmark::DoNotOptimize(out.data());
    }
}

template <bool Omp>
void BM_tv_smoothed(benchmark::State& state)
{
    const int axis = static_cast<int>(state.range(0));
    std::vector<double> grad(volume().size());
    for (auto _ : state) {
        double v;
        if constexpr (Omp)
            v = k::omp::tv_smoothed(volume(), kDims, axis, 1e-6, 0.01, grad);
        else
            v = k::serial::tv_smoothed(volume(), kDims, axis, 1e-6, 0.01, grad);
        benchmark::DoNotOptimize(v);
    }
}

template <bool Omp>
void BM_pearson_rows(benchmark::State& state)
{
    const std::size_t rows = 300;
    const auto a = random_values(rows * kPlane, 3), b = random_values(rows * kPlane, 4);
    std::vector<double> out(rows);
    std::vector<std::uint8_t> degenerate(rows);
    for (auto _ : state) {
        if constexpr (Omp)
            k::omp::pearson_rows(a, b, kPlane, out, degenerate);
        else
            k::serial::pearson_rows(a, b, kPlane, out, degenerate);
        benchmark::DoNotOptimize(out.data());
    }
}

template <bool Omp>
void BM_dot_band(benchmark::State& state)
{
    const std::size_t rows = 300;
    const int band = 20;
    const auto u = random_values(rows * kPlane, 5);
    std::vector<double> out(rows * band);
    for (auto _ : state) {
        if constexpr (Omp)
            k::omp::dot_band(u, kPlane, band, out);
        else
            k::serial::dot_band(u, kPlane, band, out);
        benchmark::DoNotOptimize(out.data());
    }
}

void BM_sr_objective(benchmark::State& state)
{
    const Grid3 g{kDims, {2.5, 2.5, 2.5}, {0, 0, 0}};
    SliceStack st;
    Rng rng(6);
    st.slice_thickness = 4.0;
    for (int i = 0; i < 60; ++i) {
        Slice2D s(kDims[0], kDims[1], 2.5, 2.5);
        for (float& x : s.data)
            x = static_cast<float>(rng.uniform(0.0, 100.0));
        st.slices.push_back(std::move(s));
        st.z_positions.push_back(g.coord(2, (kDims[2] - 1) * (i + 0.5) / 60));
        st.acq_times.push_back(0.49 * i);
    }
    const ForwardModel model(st, g, PsfSpec{});
    std::vector<double> grad(g.size());
    for (auto _ : state)
        benchmark::DoNotOptimize(sr_objective(volume(), model, SrLossConfig{}, grad));
}

} // namespace

BENCHMARK(BM_mix_planes<false>)->Name("mix_planes/serial")->Unit(benchmark::kMillisecond);
BENCHMARK(BM_mix_planes<true>)->Name("mix_planes/omp")->Unit(benchmark::kMillisecond);
BENCHMARK(BM_mix_planes_transpose<false>)->Name("mix_planes_transpose/serial")->Unit(benchmark::kMillisecond);
BENCHMARK(BM_mix_planes_transpose<true>)->Name("mix_planes_transpose/omp")->Unit(benchmark::kMillisecond);
BENCHMARK(BM_tv_smoothed<false>)->Name("tv_smoothed/serial")->DenseRange(0, 2)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_tv_smoothed<true>)->Name("tv_smoothed/omp")->DenseRange(0, 2)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_pearson_rows<false>)->Name("pearson_rows/serial")->Unit(benchmark::kMillisecond);
BENCHMARK(BM_pearson_rows<true>)->Name("pearson_rows/omp")->Unit(benchmark::kMillisecond);
BENCHMARK(BM_dot_band<false>)->Name("dot_band/serial")->Unit(benchmark::kMillisecond);
BENCHMARK(BM_dot_band<true>)->Name("dot_band/omp")->Unit(benchmark::kMillisecond);
BENCHMARK(BM_sr_objective)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
