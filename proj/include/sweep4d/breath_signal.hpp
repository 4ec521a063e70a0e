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

// Self-supervision signal: a reference stack blurred along the acquisition axis, the
// per-slice correlation against it, and phase labels interpolated between its peaks.
//
// Slices that match the reference best sit at the temporal-average breathing state.
// Consecutive peaks are half a cycle apart and alternate between the crossing on the way
// into inhale and the one on the way out.

#include <cstdint>
#include <span>
#include <vector>

#include "sweep4d/types.hpp"

namespace sweep4d {

struct NccSeries {
    std::vector<double> values;
    std::vector<std::uint8_t> degenerate; // 1 where either slice had zero variance
    double smoothing_sigma_slices = 0.0;

    std::size_t size() const noexcept { return values.size(); }
};

struct PeakSet {
    std::vector<int> indices; // strictly increasing
    int min_separation = 1;
};

/// Normalised truncated Gaussian along the slice index (radius ceil(4 sigma), weights
/// renormalised at the ends). In-plane data is untouched.
SliceStack gaussian_reference(const SliceStack& stack, double sigma_slices);

struct NccValue {
    double value = 0.0;
    bool degenerate = false;
};

/// Pearson correlation of the flattened intensities.
NccValue ncc(const Slice2D& a, const Slice2D& b);
NccSeries ncc_series(const SliceStack& stack, const SliceStack& reference);

/// 3-tap moving average with the end samples averaged over the available taps.
std::vector<double> smooth3(std::span<const double> values);

/// Topographic prominence of each interior local maximum (flat tops count once, at their
/// lower-middle sample). Returned as (index, prominence) pairs in index order.
std::vector<std::pair<int, double>> local_maxima(std::span<const double> values);

/// Local maxima with prominence >= min_prominence, kept greedily by descending prominence
/// (lower index on ties) subject to min_separation. Throws DataError("no respiratory signal
/// detected") if nothing survives.
PeakSet detect_peaks(const NccSeries& series, int min_separation, double min_prominence);

/// Lag of the first autocorrelation maximum after the first zero crossing. Throws DataError
/// when the series shows no periodicity.
int autocorrelation_period(std::span<const double> values);

/// Phase of the first peak (0 or 0.5) decided from the through-plane shift of the slices
/// between peaks: during inhale (displacement along +inhale_direction in z) slices match the
/// reference earlier in the sweep. `offset` is the slice lag used for the comparison.
double resolve_first_peak_phase(const SliceStack& stack, const SliceStack& reference, const PeakSet& peaks,
                                int offset, int inhale_direction = +1);

/// Phase labels from peaks. Peak i has phase first_peak_phase + i/2 (mod 1); phase is
/// linear in t between consecutive peaks and extrapolated with the adjacent half-cycle's rate
/// outside them, wrapped into [0, 1). state = floor(phase * K).
RespiratoryLabeling pseudo_labels(const NccSeries& series, const PeakSet& peaks, int num_states,
                                  double first_peak_phase = 0.0);

/// Slices labelled `state`, in acquisition order. Also returns their indices.
SliceStack select_slices(const SliceStack& stack, const RespiratoryLabeling& labeling, int state,
                         std::vector<int>* indices = nullptr);

struct PseudoLabelConfig {
    int num_states = 10;
    double first_pass_sigma = 3.0;
    double reference_sigma = 0.0;  // 0: half the estimated breathing period
    int min_separation = 0;        // 0: a quarter of the estimated breathing period
    double prominence_fraction = 0.25;
    bool presmooth = true;
    int parity_offset = 0;         // 0: a quarter of the mean peak gap
    int inhale_direction = +1;
};

struct PseudoLabelResult {
    RespiratoryLabeling labels;
    NccSeries series;           // raw series against the final reference
    std::vector<double> smoothed;
    PeakSet peaks;
    double breathing_period_slices = 0.0;
    double reference_sigma = 0.0;
    double first_peak_phase = 0.0;
};

/// Reference, correlation, peaks and labels in one pass.
PseudoLabelResult pseudo_label_stack(const SliceStack& stack, const PseudoLabelConfig& config);

} // namespace sweep4d
