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

// Synthetic ground truth: a textured abdominal phantom, an analytic breathing deformation
// (translation along z plus radial scaling of a dome shell) and a sequential slice
// acquisition that samples the deforming anatomy through the slice PSF.

#include <array>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "sweep4d/psf.hpp"
#include "sweep4d/types.hpp"

namespace sweep4d {

struct Shape {
    enum class Kind { Ellipsoid, Cuboid };
    Kind kind = Kind::Ellipsoid;
    std::array<double, 3> center{0, 0, 0}; // mm
    std::array<double, 3> radii{1, 1, 1};  // semi-axes / half-widths, mm
    double intensity = 1.0;
    double edge_mm = 1.0;  // width of the soft boundary; 0 gives a hard edge
    double texture = 0.0;  // relative amplitude of the shared texture field
    std::string name;
};

struct PhantomSpec {
    Grid3 grid;
    std::vector<Shape> shapes;
    double texture_scale_mm = 14.0;
    int texture_waves = 16;
    double noise_fraction = 0.02; // acquisition noise sd as a fraction of the intensity range
    std::uint64_t seed = 1;

    void validate() const;
    /// Body outline, liver, kidneys and spine placed relative to the grid extent.
    static PhantomSpec abdominal(const Grid3& grid, std::uint64_t seed);
};

struct Phantom {
    PhantomSpec spec;
    Volume3D volume;
};

Phantom make_phantom(const PhantomSpec& spec);

enum class Waveform { Sinusoid, Sin4 };
std::string to_string(Waveform w);
Waveform waveform_from_string(const std::string& text);

/// Zero-mean breathing waveform in [-1, 1]; rises through 0 at phase 0, peaks (inhale)
/// before phase 0.5 and returns through 0 at phase 0.5 for the sinusoid.
double waveform_value(Waveform w, double phase);

struct BreathingModel {
    double period_s = 4.0;
    double amplitude_mm = 8.0;      // displacement along +z at full inhale
    double shell_scale = 0.04;      // radial scaling of the shell at full inhale
    Waveform waveform = Waveform::Sinusoid;
    double phase0 = 0.0;            // phase at t = 0
    double period_jitter = 0.0;     // relative sd of the breathing rate, per slice interval
    std::uint64_t seed = 7;
    std::array<double, 3> region_center{0, 0, 0}; // moving region; radii <= 0 means everywhere
    std::array<double, 3> region_radii{0, 0, 0};
    double region_taper_mm = 12.0;
    std::array<double, 3> shell_center{0, 0, 0};
    std::array<double, 3> shell_radii{0, 0, 0};   // <= 0 disables the shell scaling

    void validate(double slice_time) const;
    /// Moving region and shell centred on the liver of PhantomSpec::abdominal.
    static BreathingModel abdominal(const Grid3& grid);
};

/// Phase (wrapped to [0,1)) at each time; the rate jitter is a seeded random walk sampled
/// once per interval of `times`, so phases depend on the whole time grid.
std::vector<double> breathing_phases(const BreathingModel& model, std::span<const double> times);

/// Displacement (mm) at point p for waveform amplitude a in [-1, 1].
std::array<double, 3> displacement(const BreathingModel& model, const std::array<double, 3>& p, double a);

/// Trilinear resampling V(x - u(x)) at waveform amplitude a (clamped at the grid border).
VolumeD deform_amplitude(const VolumeD& volume, const BreathingModel& model, double a);
/// deform_amplitude at the amplitude the model reaches at time t (no jitter).
Volume3D deform(const Volume3D& volume, const BreathingModel& model, double t);

struct AcquisitionSpec {
    double slice_time = 0.490;     // s
    double sweep_rate = 0.17;      // mm/s; 0 spans the grid's z extent with num_slices slices
    double slice_thickness = 4.0;  // mm, through-plane PSF FWHM
    double in_plane_fwhm = 0.0;
    int num_slices = 200;
    double z_start = std::numeric_limits<double>::quiet_NaN(); // NaN: first grid plane

    void validate() const;
    PsfSpec psf() const;
};

struct Acquisition {
    SliceStack stack;
    RespiratoryLabeling truth;   // source ground_truth
    std::vector<double> amplitude; // waveform value per slice
};

/// Sequential sweep: slice k at time k*slice_time and z_start + k*sweep_rate*slice_time,
/// sampled through the PSF from the anatomy deformed at that time. States are
/// floor(phase * num_states); zero amplitude with num_states 1 is the static case.
Acquisition acquire_sweep(const Phantom& phantom, const BreathingModel& breathing, const AcquisitionSpec& acq,
                          int num_states);

/// Anatomy deformed to the centre phase of each of K phase bins.
std::vector<VolumeD> state_volumes(const Phantom& phantom, const BreathingModel& breathing, int num_states);

struct Table1Options {
    Grid3 grid{{64, 64, 48}, {3.0, 3.0, 3.0}, {0.0, 0.0, 0.0}};
    int slices_per_group = 8;
    double noise_fraction = 0.02;
    double amplitude_mm = 10.0;
    double slice_thickness = 4.0;
    double sweep_span_mm = 30.0; // z range covered by the whole stack, centred on the grid; 0: full grid
};

struct Table1Dataset {
    Phantom phantom;
    BreathingModel breathing;
    SliceStack stack;
    RespiratoryLabeling truth;
    std::vector<VolumeD> states;
    int start_group = 0;
};

/// Piecewise-constant breathing: each cycle is 2K groups of `slices_per_group` slices, group
/// g showing the state volume floor(g/2); the cycle starts at a seeded random group.
Table1Dataset make_table1_dataset(int num_states, int cycles, std::uint64_t seed,
                                  const Table1Options& options = {});

/// Grid centred on the origin: origin = -(dims-1)*spacing/2 on every axis.
Grid3 centred_grid(std::array<int, 3> dims, double spacing);

} // namespace sweep4d
