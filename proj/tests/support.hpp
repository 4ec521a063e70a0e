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

#pragma once

// Shared fixtures and brute-force oracles for the unit tests.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "sweep4d/psf.hpp"
#include "sweep4d/rng.hpp"
#include "sweep4d/types.hpp"

namespace sweep4d::test {

inline std::filesystem::path temp_dir(const std::string& name)
{
    const auto p = std::filesystem::temp_directory_path() / ("sweep4d_test_" + name);
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

inline double rel_err(double a, double b)
{
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-300});
}

inline SliceStack random_stack(Rng& rng, int t, int nx, int ny, double z0 = 0.0, double dz = 1.0,
                               double thickness = 2.0)
{
    SliceStack s;
    s.slice_thickness = thickness;
    for (int k = 0; k < t; ++k) {
        Slice2D sl(nx, ny, 1.0, 1.0);
        for (float& v : sl.data)
            v = static_cast<float>(rng.uniform(0.0, 100.0));
        s.slices.push_back(std::move(sl));
        s.z_positions.push_back(z0 + k * dz);
        s.acq_times.push_back(0.49 * k);
    }
    return s;
}

// Pixels, positions, times and thickness all identical.
inline bool stack_bytes_equal(const SliceStack& a, const SliceStack& b)
{
    if (a.size() != b.size() || a.z_positions != b.z_positions || a.acq_times != b.acq_times ||
        a.slice_thickness != b.slice_thickness)
        return false;
    for (std::size_t k = 0; k < a.size(); ++k)
        if (a.slices[k].data != b.slices[k].data)
            return false;
    return true;
}

inline VolumeD random_volume(Rng& rng, const Grid3& grid, double lo = 0.0, double hi = 1.0)
{
    VolumeD v(grid);
    for (double& x : v.storage())
        x = rng.uniform(lo, hi);
    return v;
}

inline double dot(const std::vector<double>& a, const std::vector<double>& b)
{
    double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i)
        s += a[i] * b[i];
    return s;
}

// Through-plane PSF weights over every plane of the grid, from the Gaussian definition.
inline std::vector<double> dense_psf_column(double z, const Grid3& grid, double fwhm, double truncation = 4.0)
{
    const double sigma = fwhm / (2.0 * std::sqrt(2.0 * std::log(2.0)));
    std::vector<double> w(grid.dims[2], 0.0);
    double sum = 0;
    for (int i = 0; i < grid.dims[2]; ++i) {
        const double d = grid.origin[2] + i * grid.spacing[2] - z;
        if (std::abs(d) <= truncation * sigma + 1e-12) {
            w[i] = std::exp(-d * d / (2 * sigma * sigma));
            sum += w[i];
        }
    }
    if (sum == 0.0) { // support holds no plane: nearest plane
        const int i = std::clamp(static_cast<int>(std::lround((z - grid.origin[2]) / grid.spacing[2])), 0,
                                 grid.dims[2] - 1);
        w[i] = sum = 1.0;
    }
    for (double& x : w)
        x /= sum;
    return w;
}

// Dense A (slices*plane rows, voxels columns) for a delta in-plane PSF.
inline std::vector<std::vector<double>> dense_forward_matrix(const std::vector<double>& z_positions,
                                                             const Grid3& grid, double fwhm)
{
    const std::size_t plane = grid.plane_size();
    std::vector<std::vector<double>> a(z_positions.size() * plane, std::vector<double>(grid.size(), 0.0));
    for (std::size_t k = 0; k < z_positions.size(); ++k) {
        const std::vector<double> w = dense_psf_column(z_positions[k], grid, fwhm);
        for (std::size_t p = 0; p < plane; ++p)
            for (int z = 0; z < grid.dims[2]; ++z)
                a[k * plane + p][z * plane + p] = w[z];
    }
    return a;
}

inline double brute_tv(const VolumeD& v, int axis)
{
    double s = 0;
    for (int z = 0; z < v.nz(); ++z)
        for (int y = 0; y < v.ny(); ++y)
            for (int x = 0; x < v.nx(); ++x) {
                int p[3] = {x, y, z};
                p[axis] += 1;
                if (p[axis] >= v.grid().dims[axis])
                    continue;
                s += std::abs(v.at(p[0], p[1], p[2]) - v.at(x, y, z));
            }
    return s;
}

inline double brute_pearson(const std::vector<double>& a, const std::vector<double>& b)
{
    const double n = static_cast<double>(a.size());
    double ma = 0, mb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ma += a[i];
        mb += b[i];
    }
    ma /= n;
    mb /= n;
    double cov = 0, va = 0, vb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        cov += (a[i] - ma) * (b[i] - mb);
        va += (a[i] - ma) * (a[i] - ma);
        vb += (b[i] - mb) * (b[i] - mb);
    }
    return cov / std::sqrt(va * vb);
}

// Literal windowed SSIM: a full 2D Gaussian window at every valid centre.
inline double brute_ssim_2d(const std::vector<double>& a, const std::vector<double>& b, int nx, int ny,
                            double range, double sigma = 1.5, int radius = 5)
{
    const int r = std::min({radius, (nx - 1) / 2, (ny - 1) / 2});
    std::vector<double> w((2 * r + 1) * (2 * r + 1));
    double ws = 0;
    for (int j = -r; j <= r; ++j)
        for (int i = -r; i <= r; ++i)
            ws += (w[(j + r) * (2 * r + 1) + i + r] = std::exp(-(i * i + j * j) / (2 * sigma * sigma)));
    for (double& x : w)
        x /= ws;
    const double c1 = std::pow(0.01 * range, 2), c2 = std::pow(0.03 * range, 2);
    double total = 0;
    int count = 0;
    for (int cy = r; cy < ny - r; ++cy)
        for (int cx = r; cx < nx - r; ++cx) {
            double ma = 0, mb = 0;
            for (int j = -r; j <= r; ++j)
                for (int i = -r; i <= r; ++i) {
                    const double wt = w[(j + r) * (2 * r + 1) + i + r];
                    ma += wt * a[(cy + j) * nx + cx + i];
                    mb += wt * b[(cy + j) * nx + cx + i];
                }
            double va = 0, vb = 0, cov = 0;
            for (int j = -r; j <= r; ++j)
                for (int i = -r; i <= r; ++i) {
                    const double wt = w[(j + r) * (2 * r + 1) + i + r];
                    const double da = a[(cy + j) * nx + cx + i] - ma, db = b[(cy + j) * nx + cx + i] - mb;
                    va += wt * da * da;
                    vb += wt * db * db;
                    cov += wt * da * db;
                }
            total += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            ++count;
        }
    return total / count;
}

} // namespace sweep4d::test
