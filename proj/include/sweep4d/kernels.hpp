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

// Data-parallel inner loops. Every kernel exists twice:
//   kernels::serial  plain loops, the reference the tests compare against
//   kernels::omp     OpenMP version used by the library
// For each output element both variants accumulate in the same order, so results are
// bit-identical to each other and independent of the thread count. The one exception
// is scalar reductions (tv values), which the OpenMP variant sums as ordered per-plane
// partials.

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace sweep4d::kernels {

/// One output plane as a weighted sum of consecutive input planes.
struct WeightRow {
    int first = 0;
    std::vector<double> weights;
};

/// Inverse of a set of WeightRows: for each input plane, the (row, weight) pairs touching it
/// in ascending row order.
struct PlaneFanIn {
    std::vector<std::vector<std::pair<int, double>>> taps;
    static PlaneFanIn build(std::span<const WeightRow> rows, int num_planes);
};

/// Per-axis three-dimensional shape, x fastest.
using Dims = std::array<int, 3>;

namespace serial {

/// out[r] = sum_j rows[r].weights[j] * in[rows[r].first + j]; planes are `plane` long.
void mix_planes(std::span<const double> in, std::size_t plane, std::span<const WeightRow> rows,
                std::span<double> out);

/// Exact transpose of mix_planes: out[p] = sum_{r} w_r(p) * in[r]. out holds num_planes planes.
void mix_planes_transpose(std::span<const double> in, std::size_t plane, std::span<const WeightRow> rows,
                          int num_planes, std::span<double> out);

/// Sum of |v[i+1] - v[i]| over every line along `axis`.
double tv_1d(std::span<const double> vol, const Dims& dims, int axis);

/// Smoothed TV sum of sqrt(d^2 + eps^2); adds weight * gradient into grad. Returns the
/// unweighted smoothed value.
double tv_smoothed(std::span<const double> vol, const Dims& dims, int axis, double eps, double weight,
                   std::span<double> grad);

/// Pearson correlation of rows a[t] and b[t] (each n long). Zero-variance rows yield 0 and
/// set degenerate[t] = 1.
void pearson_rows(std::span<const double> a, std::span<const double> b, std::size_t n,
                  std::span<double> out, std::span<std::uint8_t> degenerate);

/// Banded dot products of unit rows: out[i * band + d] = <u_i, u_{i+d}> for i + d < rows.
void dot_band(std::span<const double> unit_rows, std::size_t n, int band, std::span<double> out);

} // namespace serial

namespace omp {

void mix_planes(std::span<const double> in, std::size_t plane, std::span<const WeightRow> rows,
                std::span<double> out);
void mix_planes_transpose(std::span<const double> in, std::size_t plane, const PlaneFanIn& fan_in,
                          std::span<double> out);
double tv_1d(std::span<const double> vol, const Dims& dims, int axis);
double tv_smoothed(std::span<const double> vol, const Dims& dims, int axis, double eps, double weight,
                   std::span<double> grad);
void pearson_rows(std::span<const double> a, std::span<const double> b, std::size_t n,
                  std::span<double> out, std::span<std::uint8_t> degenerate);
void dot_band(std::span<const double> unit_rows, std::size_t n, int band, std::span<double> out);

} // namespace omp

/// Caps OpenMP workers (n <= 0 leaves the runtime default).
void set_num_threads(int n);
int max_threads();

} // namespace sweep4d::kernels
