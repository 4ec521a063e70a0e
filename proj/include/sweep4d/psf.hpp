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

#include <span>
#include <vector>

#include "sweep4d/kernels.hpp"
#include "sweep4d/types.hpp"

namespace sweep4d {

/// Slice point spread function: Gaussian through-plane profile whose FWHM is the slice
/// thickness, optionally with an in-plane Gaussian (fwhm_xy = 0 means a delta).
struct PsfSpec {
    double fwhm_z = 4.0;
    double fwhm_xy = 0.0;
    double truncation = 4.0; // support radius in sigmas

    void validate() const;
    double sigma_z() const;
    double sigma_xy() const;
};

/// sigma = fwhm / (2 sqrt(2 ln 2)).
double psf_sigma(double fwhm);

/// Normalised through-plane weights of a slice centred at z (mm) over the planes of grid.
/// A PSF narrower than the plane spacing degenerates to the nearest plane. Throws
/// DataError when z lies outside the grid's z extent (half a plane of slack either side).
kernels::WeightRow psf_row(double z, const Grid3& grid, const PsfSpec& psf);
std::vector<kernels::WeightRow> psf_rows(std::span<const double> z_positions, const Grid3& grid,
                                         const PsfSpec& psf);

/// Separable in-plane Gaussian with rows renormalised at the borders. Identity when the
/// in-plane FWHM is zero.
class InPlaneBlur {
public:
    InPlaneBlur() = default;
    InPlaneBlur(int nx, int ny, double dx, double dy, const PsfSpec& psf);

    bool identity() const noexcept { return identity_; }
    void apply(std::span<const double> in, std::span<double> out) const;
    void apply_transpose(std::span<const double> in, std::span<double> out) const;

private:
    int nx_ = 0, ny_ = 0;
    bool identity_ = true;
    std::vector<kernels::WeightRow> rows_x_, rows_y_;
};

} // namespace sweep4d
