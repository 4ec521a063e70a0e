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

#include "sweep4d/kernels.hpp"

#include <algorithm>
#include <cmath>

#include <omp.h>

namespace sweep4d::kernels {

PlaneFanIn PlaneFanIn::build(std::span<const WeightRow> rows, int num_planes)
{
    PlaneFanIn f;
    f.taps.resize(num_planes);
    for (std::size_t r = 0; r < rows.size(); ++r) {
        const WeightRow& row = rows[r];
        for (std::size_t j = 0; j < row.weights.size(); ++j) {
            const int p = row.first + static_cast<int>(j);
            if (p >= 0 && p < num_planes)
                f.taps[p].emplace_back(static_cast<int>(r), row.weights[j]);
        }
    }
    return f;
}

void set_num_threads(int n)
{
    if (n > 0)
        omp_set_num_threads(n);
}

int max_threads() { return omp_get_max_threads(); }

namespace {

inline std::size_t stride_of(const Dims& dims, int axis)
{
    switch (axis) {
    case 0: return 1;
    case 1: return static_cast<std::size_t>(dims[0]);
    default: return static_cast<std::size_t>(dims[0]) * dims[1];
    }
}

inline double smooth_abs_deriv(double d, double eps) { return d / std::sqrt(d * d + eps * eps); }

struct Centered {
    double saa = 0, sbb = 0, sab = 0;
};

Centered centered_moments(const double* a, const double* b, std::size_t n)
{
    double ma = 0, mb = 0;
    for (std::size_t i = 0; i < n; ++i) {
        ma += a[i];
        mb += b[i];
    }
    ma /= static_cast<double>(n);
    mb /= static_cast<double>(n);
    Centered c;
    for (std::size_t i = 0; i < n; ++i) {
        const double da = a[i] - ma;
        const double db = b[i] - mb;
        c.saa += da * da;
        c.sbb += db * db;
        c.sab += da * db;
    }
    return c;
}

double max_abs(const double* a, std::size_t n)
{
    double m = 0;
    for (std::size_t i = 0; i < n; ++i)
        m = std::max(m, std::abs(a[i]));
    return m;
}

void pearson_one(const double* a, const double* b, std::size_t n, double& out, std::uint8_t& degenerate)
{
    const Centered c = centered_moments(a, b, n);
    const double sa = 1e-12 * max_abs(a, n);
    const double sb = 1e-12 * max_abs(b, n);
    const double floor_a = static_cast<double>(n) * sa * sa;
    const double floor_b = static_cast<double>(n) * sb * sb;
    if (!(c.saa > floor_a) || !(c.sbb > floor_b)) {
        out = 0.0;
        degenerate = 1;
        return;
    }
    out = std::clamp(c.sab / std::sqrt(c.saa * c.sbb), -1.0, 1.0);
    degenerate = 0;
}

// Smoothed-TV gradient and value for the single plane z, shared by both variants.
double tv_smoothed_plane(const double* v, const Dims& dims, int axis, double eps, double weight, double* g,
                         int z)
{
    const int nx = dims[0], ny = dims[1], nz = dims[2];
    const std::size_t s = stride_of(dims, axis);
    const int n_axis = dims[axis];
    double acc = 0;
    for (int y = 0; y < ny; ++y) {
        for (int x = 0; x < nx; ++x) {
            const std::size_t i = (static_cast<std::size_t>(z) * ny + y) * nx + x;
            const int c = axis == 0 ? x : (axis == 1 ? y : z);
            double gi = 0;
            if (c + 1 < n_axis) {
                const double d = v[i + s] - v[i];
                acc += std::sqrt(d * d + eps * eps);
                gi -= smooth_abs_deriv(d, eps);
            }
            if (c > 0) {
                const double d = v[i] - v[i - s];
                gi += smooth_abs_deriv(d, eps);
            }
            g[i] += weight * gi;
        }
    }
    (void)nz;
    return acc;
}

double tv_plane(const double* v, const Dims& dims, int axis, int z)
{
    const int nx = dims[0], ny = dims[1];
    const std::size_t s = stride_of(dims, axis);
    const int n_axis = dims[axis];
    double acc = 0;
    for (int y = 0; y < ny; ++y) {
        for (int x = 0; x < nx; ++x) {
            const int c = axis == 0 ? x : (axis == 1 ? y : z);
            if (c + 1 >= n_axis)
                continue;
            const std::size_t i = (static_cast<std::size_t>(z) * ny + y) * nx + x;
            acc += std::abs(v[i + s] - v[i]);
        }
    }
    return acc;
}

} // namespace

namespace serial {

void mix_planes(std::span<const double> in, std::size_t plane, std::span<const WeightRow> rows,
                std::span<double> out)
{
    for (std::size_t r = 0; r < rows.size(); ++r) {
        double* o = out.data() + r * plane;
        std::fill(o, o + plane, 0.0);
        const WeightRow& row = rows[r];
        for (std::size_t j = 0; j < row.weights.size(); ++j) {
            const double w = row.weights[j];
            const double* src = in.data() + (row.first + j) * plane;
            for (std::size_t i = 0; i < plane; ++i)
                o[i] += w * src[i];
        }
    }
}

void mix_planes_transpose(std::span<const double> in, std::size_t plane, std::span<const WeightRow> rows,
                          int num_planes, std::span<double> out)
{
    std::fill(out.begin(), out.begin() + static_cast<std::ptrdiff_t>(num_planes * plane), 0.0);
    for (std::size_t r = 0; r < rows.size(); ++r) {
        const WeightRow& row = rows[r];
        const double* src = in.data() + r * plane;
        for (std::size_t j = 0; j < row.weights.size(); ++j) {
            const int p = row.first + static_cast<int>(j);
            if (p < 0 || p >= num_planes)
                continue;
            const double w = row.weights[j];
            double* o = out.data() + static_cast<std::size_t>(p) * plane;
            for (std::size_t i = 0; i < plane; ++i)
                o[i] += w * src[i];
        }
    }
}

double tv_1d(std::span<const double> vol, const Dims& dims, int axis)
{
    double acc = 0;
    for (int z = 0; z < dims[2]; ++z)
        acc += tv_plane(vol.data(), dims, axis, z);
    return acc;
}

double tv_smoothed(std::span<const double> vol, const Dims& dims, int axis, double eps, double weight,
                   std::span<double> grad)
{
    double acc = 0;
    for (int z = 0; z < dims[2]; ++z)
        acc += tv_smoothed_plane(vol.data(), dims, axis, eps, weight, grad.data(), z);
    return acc;
}

void pearson_rows(std::span<const double> a, std::span<const double> b, std::size_t n,
                  std::span<double> out, std::span<std::uint8_t> degenerate)
{
    for (std::size_t t = 0; t < out.size(); ++t)
        pearson_one(a.data() + t * n, b.data() + t * n, n, out[t], degenerate[t]);
}

void dot_band(std::span<const double> unit_rows, std::size_t n, int band, std::span<double> out)
{
    const std::size_t rows = unit_rows.size() / n;
    for (std::size_t i = 0; i < rows; ++i) {
        for (int d = 0; d < band; ++d) {
            double acc = 0;
            if (i + d < rows) {
                const double* u = unit_rows.data() + i * n;
                const double* v = unit_rows.data() + (i + d) * n;
                for (std::size_t k = 0; k < n; ++k)
                    acc += u[k] * v[k];
            }
            out[i * band + d] = acc;
        }
    }
}

} // namespace serial

namespace omp {

void mix_planes(std::span<const double> in, std::size_t plane, std::span<const WeightRow> rows,
                std::span<double> out)
{
    const long n_rows = static_cast<long>(rows.size());
#pragma omp parallel for schedule(static)
    for (long r = 0; r < n_rows; ++r) {
        double* o = out.data() + r * plane;
        std::fill(o, o + plane, 0.0);
        const WeightRow& row = rows[r];
        for (std::size_t j = 0; j < row.weights.size(); ++j) {
            const double w = row.weights[j];
            const double* src = in.data() + (row.first + j) * plane;
            for (std::size_t i = 0; i < plane; ++i)
                o[i] += w * src[i];
        }
    }
}

void mix_planes_transpose(std::span<const double> in, std::size_t plane, const PlaneFanIn& fan_in,
                          std::span<double> out)
{
    const long n_planes = static_cast<long>(fan_in.taps.size());
#pragma omp parallel for schedule(static)
    for (long p = 0; p < n_planes; ++p) {
        double* o = out.data() + p * plane;
        std::fill(o, o + plane, 0.0);
        for (const auto& [r, w] : fan_in.taps[p]) {
            const double* src = in.data() + static_cast<std::size_t>(r) * plane;
            for (std::size_t i = 0; i < plane; ++i)
                o[i] += w * src[i];
        }
    }
}

double tv_1d(std::span<const double> vol, const Dims& dims, int axis)
{
    std::vector<double> partial(dims[2], 0.0);
#pragma omp parallel for schedule(static)
    for (int z = 0; z < dims[2]; ++z)
        partial[z] = tv_plane(vol.data(), dims, axis, z);
    double acc = 0;
    for (double p : partial)
        acc += p;
    return acc;
}

double tv_smoothed(std::span<const double> vol, const Dims& dims, int axis, double eps, double weight,
                   std::span<double> grad)
{
    std::vector<double> partial(dims[2], 0.0);
#pragma omp parallel for schedule(static)
    for (int z = 0; z < dims[2]; ++z)
        partial[z] = tv_smoothed_plane(vol.data(), dims, axis, eps, weight, grad.data(), z);
    double acc = 0;
    for (double p : partial)
        acc += p;
    return acc;
}

void pearson_rows(std::span<const double> a, std::span<const double> b, std::size_t n,
                  std::span<double> out, std::span<std::uint8_t> degenerate)
{
    const long rows = static_cast<long>(out.size());
#pragma omp parallel for schedule(static)
    for (long t = 0; t < rows; ++t)
        pearson_one(a.data() + t * n, b.data() + t * n, n, out[t], degenerate[t]);
}

void dot_band(std::span<const double> unit_rows, std::size_t n, int band, std::span<double> out)
{
    const long rows = static_cast<long>(unit_rows.size() / n);
#pragma omp parallel for schedule(static)
    for (long i = 0; i < rows; ++i) {
        for (int d = 0; d < band; ++d) {
            double acc = 0;
            if (i + d < rows) {
                const double* u = unit_rows.data() + i * n;
                const double* v = unit_rows.data() + (i + d) * n;
                for (std::size_t k = 0; k < n; ++k)
                    acc += u[k] * v[k];
            }
            out[i * band + d] = acc;
        }
    }
}

} // namespace omp

} // namespace sweep4d::kernels
