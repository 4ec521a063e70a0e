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

#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "sweep4d/types.hpp"

namespace sweep4d {

/// 10 log10(MAX^2 / MSE) with MAX the maximum of the reference b. Identical inputs give
/// +infinity.
double psnr(std::span<const double> a, std::span<const double> b);
double psnr(const VolumeD& a, const VolumeD& b);
double psnr(const Volume3D& a, const Volume3D& b);
double psnr(const SliceStack& a, const SliceStack& b);

struct SsimOptions {
    double sigma = 1.5;
    int radius = 5;
    double k1 = 0.01;
    double k2 = 0.03;
};

/// Mean local SSIM over the valid region of one image pair, Gaussian-weighted windows.
/// `range` is L in C1 = (k1 L)^2, C2 = (k2 L)^2. The radius shrinks for images narrower than
/// the window.
double ssim_2d(std::span<const double> a, std::span<const double> b, int nx, int ny, double range,
               const SsimOptions& options = {});

/// 2D SSIM per plane (z planes for volumes, slices for stacks), averaged. L is the larger of
/// the two inputs' intensity ranges, which keeps ssim symmetric; when both are flat, L is
/// their largest magnitude (or 1 if that is 0).
double ssim(const VolumeD& a, const VolumeD& b, const SsimOptions& options = {});
double ssim(const Volume3D& a, const Volume3D& b, const SsimOptions& options = {});
double ssim(const SliceStack& a, const SliceStack& b, const SsimOptions& options = {});

/// L used by ssim for two flattened inputs.
double ssim_range(std::span<const double> a, std::span<const double> b);

struct EvalReport {
    std::optional<double> psnr;
    std::optional<double> ssim;
    std::optional<double> accuracy;
    std::optional<double> adjacent_accuracy; // off by one class, cyclically, counts as correct
    std::vector<std::vector<long>> confusion; // rows truth, columns prediction
    nlohmann::json metadata = nlohmann::json::object();

    nlohmann::json to_json() const;
    static std::string csv_header();
    std::string csv_row(const std::string& id) const;
};

/// Throws ConfigError when K differs and DataError when lengths differ.
EvalReport classification_report(const RespiratoryLabeling& predicted, const RespiratoryLabeling& truth);

} // namespace sweep4d
