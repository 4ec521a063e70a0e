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

// Super-resolution reconstruction of one respiratory state from its selected slices.
//
//   S = A V          slice k is the PSF-weighted sum of volume planes (optionally blurred
//                    in-plane)
//   L(V) = sum (R - S)^2 + sum_axis lambda_axis * TV1D_axis(V)

#include <array>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "sweep4d/error.hpp"
#include "sweep4d/kernels.hpp"
#include "sweep4d/psf.hpp"
#include "sweep4d/types.hpp"
#include "sweep4d/volume_ops.hpp"

namespace sweep4d {

enum class ReconMode { Direct, Convnet };
std::string to_string(ReconMode mode);
ReconMode recon_mode_from_string(const std::string& text);

struct SrLossConfig {
    std::array<double, 3> tv_weights{0.01, 0.01, 0.1}; // x, y, z
    int epochs = 5000;
    double lr = 0.0;            // 0: 0.05 * max selected intensity (direct mode)
    ReconMode mode = ReconMode::Direct;
    double tv_eps = 1e-6;
    int plateau_iterations = 200;
    double plateau_decay = 0.5;
    double tolerance = 1e-7;    // stop when the relative loss change over tolerance_window is below this
    int tolerance_window = 50;
    int history_every = 50;
    // convnet mode
    int conv_channels = 8;
    int conv_layers = 4;
    int conv_kernel = 3;
    double conv_lr = 1e-3;
    std::uint64_t seed = 1;

    void validate() const;
};

/// The linear slice-sampling operator for one set of slices on one grid.
class ForwardModel {
public:
    ForwardModel(const SliceStack& selected, const Grid3& grid, const PsfSpec& psf);

    const Grid3& grid() const noexcept { return grid_; }
    const PsfSpec& psf() const noexcept { return psf_; }
    std::size_t num_slices() const noexcept { return rows_.size(); }
    std::size_t plane_size() const noexcept { return grid_.plane_size(); }
    std::span<const kernels::WeightRow> rows() const noexcept { return rows_; }
    /// Acquired intensities R, slice-major.
    std::span<const double> observed() const noexcept { return observed_; }
    const SliceStack& slices() const noexcept { return selected_; }

    /// S = A v, slice-major (num_slices x plane).
    void simulate(std::span<const double> volume, std::span<double> out) const;
    std::vector<double> simulate(std::span<const double> volume) const;
    /// A^T r.
    void adjoint(std::span<const double> residual, std::span<double> out) const;
    std::vector<double> adjoint(std::span<const double> residual) const;

private:
    SliceStack selected_;
    Grid3 grid_;
    PsfSpec psf_;
    std::vector<kernels::WeightRow> rows_;
    kernels::PlaneFanIn fan_in_;
    InPlaneBlur blur_;
    std::vector<double> observed_;
};

/// Simulated slices as a stack with the selected slices' geometry.
SliceStack simulate_slices(const VolumeD& volume, const ForwardModel& model);
/// A^T applied to residual slices; the result lives on the model grid.
VolumeD adjoint_slices(const SliceStack& residuals, const ForwardModel& model);

double recon_error(std::span<const double> volume, const ForwardModel& model);
double recon_error(const VolumeD& volume, const ForwardModel& model);
double tv_1d(const VolumeD& volume, Axis axis);
/// E(V) + sum lambda * TV1D, with the unsmoothed absolute value.
double sr_loss(const VolumeD& volume, const ForwardModel& model, const SrLossConfig& config);
/// Smoothed objective (|d| -> sqrt(d^2 + eps^2)); writes its gradient into grad.
double sr_objective(std::span<const double> volume, const ForwardModel& model, const SrLossConfig& config,
                    std::span<double> grad);

struct ReconResult {
    VolumeD volume;
    double initial_loss = 0.0; // sr_loss of the initialisation
    double final_loss = 0.0;   // sr_loss of the returned volume
    int iterations = 0;
    bool converged = false;    // relative-change criterion met before the epoch budget
    std::vector<double> loss_history; // best smoothed objective so far, every history_every iterations
    ReconMode mode = ReconMode::Direct;
};

/// Raised when the objective becomes non-finite; carries the best finite volume.
class ReconDivergence : public NumericError {
public:
    ReconDivergence(const std::string& what, VolumeD last_finite)
        : NumericError(what), last_finite_(std::move(last_finite))
    {
    }
    const VolumeD& last_finite() const noexcept { return last_finite_; }

private:
    VolumeD last_finite_;
};

using ReconLog = std::function<void(const std::string&)>;

/// Initialises with scatter_initialize and minimises the smoothed objective with Adam
/// (direct mode: on V; convnet mode: on the weights of V = V0 + net(V0)). Returns the best
/// volume seen, never worse than the initialisation.
ReconResult reconstruct(const SliceStack& selected, const Grid3& grid, const PsfSpec& psf, const SrLossConfig& config,
                        const ReconLog& log = {});

/// In-plane geometry of the slices (centred on the origin), dz = dx, z covering the slice
/// positions +- 2 sigma.
Grid3 default_sr_grid(const SliceStack& stack, const PsfSpec& psf);

struct StateReconstruction {
    int state = 0;
    std::vector<int> slice_indices;
    double slice_fraction = 0.0;
    double wall_seconds = 0.0;
    std::string status = "ok"; // "ok", "empty" or the error message
    ReconResult result;
};

struct Recon4D {
    int num_states = 0;
    std::size_t total_slices = 0;
    std::vector<StateReconstruction> states;

    /// Per-state slice indices, fractions, losses, iterations and (unless deterministic)
    /// wall time.
    nlohmann::json manifest(bool include_wall_time) const;
    std::size_t succeeded() const;
};

/// One reconstruction per non-empty state. Empty states are reported and skipped; failing
/// states are recorded and the rest continue.
Recon4D reconstruct_4d(const SliceStack& stack, const RespiratoryLabeling& labeling, const Grid3& grid,
                       const PsfSpec& psf, const SrLossConfig& config, const ReconLog& log = {});

} // namespace sweep4d
