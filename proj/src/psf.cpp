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

#include "sweep4d/psf.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "sweep4d/error.hpp"

namespace sweep4d {

namespace {

// 1D row-normalised Gaussian rows over n samples with spacing h.
std::vector<kernels::WeightRow> gaussian_rows_1d(int n, double h, double sigma_mm, double truncation)
{
    std::vector<kernels::WeightRow> rows(n);
    const double s = sigma_mm / h;
    const int radius = static_cast<int>(std::floor(truncation * s));
    for (int i = 0; i < n; ++i) {
        const int lo = std::max(0, i - radius);
        const int hi = std::min(n - 1, i + radius);
        kernels::WeightRow& r = rows[i];
        r.first = lo;
        double sum = 0;
        for (int j = lo; j <= hi; ++j) {
            const double d = j - i;
            const double w = std::exp(-0.5 * d * d / (s * s));
            r.weights.push_back(w);
            sum += w;
        }
        for (double& w : r.weights)
            w /= sum;
    }
    return rows;
}

} // namespace

double psf_sigma(double fwhm)
{
    return fwhm / (2.0 * std::sqrt(2.0 * std::log(2.0)));
}

void PsfSpec::validate() const
{
    if (!(fwhm_z > 0.0) || !std::isfinite(fwhm_z))
        throw ConfigError("psf.fwhm_z must be positive");
    if (!(fwhm_xy >= 0.0) || !std::isfinite(fwhm_xy))
        throw ConfigError("psf.fwhm_xy must be non-negative");
    if (!(truncation > 0.0))
        throw ConfigError("psf.truncation must be positive");
}

double PsfSpec::sigma_z() const { return psf_sigma(fwhm_z); }
double PsfSpec::sigma_xy() const { return psf_sigma(fwhm_xy); }

kernels::WeightRow psf_row(double z, const Grid3& grid, const PsfSpec& psf)
{
    const double oz = grid.origin[2];
    const double dz = grid.spacing[2];
    const int nz = grid.dims[2];
    const double lo_edge = oz - 0.5 * dz;
    const double hi_edge = oz + (nz - 0.5) * dz;
    if (!(z >= lo_edge - 1e-9 * dz && z <= hi_edge + 1e-9 * dz))
        throw DataError("slice z = " + std::to_string(z) + " mm outside grid support [" + std::to_string(lo_edge) +
                        ", " + std::to_string(hi_edge) + "]");

    const double sigma = psf.sigma_z();
    const double reach = psf.truncation * sigma;
    const double u = (z - oz) / dz; // fractional plane index
    int first = static_cast<int>(std::ceil(u - reach / dz - 1e-12));
    int last = static_cast<int>(std::floor(u + reach / dz + 1e-12));
    first = std::max(first, 0);
    last = std::min(last, nz - 1);

    kernels::WeightRow row;
    if (first <= last && sigma > 0.0) {
        double sum = 0;
        for (int i = first; i <= last; ++i) {
            const double d = (oz + i * dz) - z;
            const double w = std::exp(-0.5 * d * d / (sigma * sigma));
            row.weights.push_back(w);
            sum += w;
        }
        if (sum > 0.0) {
            row.first = first;
            for (double& w : row.weights)
                w /= sum;
            return row;
        }
        row.weights.clear();
    }
    // Delta limit: nearest plane.
    row.first = std::clamp(static_cast<int>(std::lround(u)), 0, nz - 1);
    row.weights = {1.0};
    return row;
}

std::vector<kernels::WeightRow> psf_rows(std::span<const double> z_positions, const Grid3& grid, const PsfSpec& psf)
{
    std::vector<kernels::WeightRow> rows;
    rows.reserve(z_positions.size());
    for (double z : z_positions)
        rows.push_back(psf_row(z, grid, psf));
    return rows;
}

InPlaneBlur::InPlaneBlur(int nx, int ny, double dx, double dy, const PsfSpec& psf) : nx_(nx), ny_(ny)
{
    identity_ = !(psf.fwhm_xy > 0.0);
    if (identity_)
        return;
    rows_x_ = gaussian_rows_1d(nx, dx, psf.sigma_xy(), psf.truncation);
    rows_y_ = gaussian_rows_1d(ny, dy, psf.sigma_xy(), psf.truncation);
}

void InPlaneBlur::apply(std::span<const double> in, std::span<double> out) const
{
    if (identity_) {
        std::copy(in.begin(), in.end(), out.begin());
        return;
    }
    std::vector<double> tmp(in.size(), 0.0);
    for (int y = 0; y < ny_; ++y)
        for (int x = 0; x < nx_; ++x) {
            const auto& r = rows_x_[x];
            double acc = 0;
            for (std::size_t j = 0; j < r.weights.size(); ++j)
                acc += r.weights[j] * in[static_cast<std::size_t>(y) * nx_ + r.first + j];
            tmp[static_cast<std::size_t>(y) * nx_ + x] = acc;
        }
    for (int y = 0; y < ny_; ++y) {
        const auto& r = rows_y_[y];
        for (int x = 0; x < nx_; ++x) {
            double acc = 0;
            for (std::size_t j = 0; j < r.weights.size(); ++j)
                acc += r.weights[j] * tmp[(r.first + j) * nx_ + x];
            out[static_cast<std::size_t>(y) * nx_ + x] = acc;
        }
    }
}

void InPlaneBlur::apply_transpose(std::span<const double> in, std::span<double> out) const
{
    if (identity_) {
        std::copy(in.begin(), in.end(), out.begin());
        return;
    }
    // Transpose of (By * Bx) is Bx^T * By^T: scatter along y first, then along x.
    std::vector<double> tmp(in.size(), 0.0);
    for (int y = 0; y < ny_; ++y) {
        const auto& r = rows_y_[y];
        for (std::size_t j = 0; j < r.weights.size(); ++j) {
            const int yy = r.first + static_cast<int>(j);
            for (int x = 0; x < nx_; ++x)
                tmp[static_cast<std::size_t>(yy) * nx_ + x] += r.weights[j] * in[static_cast<std::size_t>(y) * nx_ + x];
        }
    }
    std::fill(out.begin(), out.end(), 0.0);
    for (int y = 0; y < ny_; ++y)
        for (int x = 0; x < nx_; ++x) {
            const auto& r = rows_x_[x];
            const double v = tmp[static_cast<std::size_t>(y) * nx_ + x];
            for (std::size_t j = 0; j < r.weights.size(); ++j)
                out[static_cast<std::size_t>(y) * nx_ + r.first + j] += r.weights[j] * v;
        }
}

} // namespace sweep4d
