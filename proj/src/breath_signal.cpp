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

#include "sweep4d/breath_signal.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "sweep4d/error.hpp"
#include "sweep4d/kernels.hpp"
#include "sweep4d/volume_ops.hpp"

namespace sweep4d {

SliceStack gaussian_reference(const SliceStack& stack, double sigma_slices)
{
    if (!(sigma_slices > 0.0))
        throw ConfigError("gaussian_reference: sigma must be positive");
    const int t_count = static_cast<int>(stack.size());
    if (t_count < 3)
        throw DataError("gaussian_reference: need at least 3 slices");

    const int radius = static_cast<int>(std::ceil(4.0 * sigma_slices));
    std::vector<kernels::WeightRow> rows(t_count);
    for (int t = 0; t < t_count; ++t) {
        const int lo = std::max(0, t - radius);
        const int hi = std::min(t_count - 1, t + radius);
        auto& r = rows[t];
        r.first = lo;
        double sum = 0;
        for (int s = lo; s <= hi; ++s) {
            const double d = s - t;
            const double w = std::exp(-0.5 * d * d / (sigma_slices * sigma_slices));
            r.weights.push_back(w);
            sum += w;
        }
        for (double& w : r.weights)
            w /= sum;
    }
    const auto in = stack_buffer(stack);
    std::vector<double> out(in.size());
    const std::size_t plane = static_cast<std::size_t>(stack.nx()) * stack.ny();
    kernels::omp::mix_planes(in, plane, rows, out);
    return stack_from_buffer(out, stack);
}

NccValue ncc(const Slice2D& a, const Slice2D& b)
{
    if (a.nx != b.nx || a.ny != b.ny)
        throw DataError("ncc: slice dimensions differ");
    std::vector<double> da(a.data.begin(), a.data.end());
    std::vector<double> db(b.data.begin(), b.data.end());
    double v = 0;
    std::uint8_t flag = 0;
    kernels::serial::pearson_rows(da, db, da.size(), std::span<double>(&v, 1), std::span<std::uint8_t>(&flag, 1));
    return {v, flag != 0};
}

NccSeries ncc_series(const SliceStack& stack, const SliceStack& reference)
{
    if (stack.size() != reference.size() || stack.nx() != reference.nx() || stack.ny() != reference.ny())
        throw DataError("ncc_series: stack and reference dimensions differ");
    const auto a = stack_buffer(stack);
    const auto b = stack_buffer(reference);
    NccSeries s;
    s.values.resize(stack.size());
    s.degenerate.resize(stack.size());
    kernels::omp::pearson_rows(a, b, static_cast<std::size_t>(stack.nx()) * stack.ny(), s.values, s.degenerate);
    return s;
}

std::vector<double> smooth3(std::span<const double> values)
{
    const std::size_t n = values.size();
    std::vector<double> out(n);
    for (std::size_t t = 0; t < n; ++t) {
        double acc = values[t];
        int taps = 1;
        if (t > 0) {
            acc += values[t - 1];
            ++taps;
        }
        if (t + 1 < n) {
            acc += values[t + 1];
            ++taps;
        }
        out[t] = acc / taps;
    }
    return out;
}

std::vector<std::pair<int, double>> local_maxima(std::span<const double> v)
{
    const int n = static_cast<int>(v.size());
    std::vector<std::pair<int, double>> out;
    int i = 1;
    while (i < n - 1) {
        if (v[i - 1] < v[i]) {
            int j = i;
            while (j + 1 < n && v[j + 1] == v[i])
                ++j;
            if (j + 1 < n && v[j + 1] < v[i]) {
                const int peak = (i + j) / 2;
                const double h = v[i];
                double left_min = h;
                for (int k = i - 1; k >= 0 && v[k] <= h; --k)
                    left_min = std::min(left_min, v[k]);
                double right_min = h;
                for (int k = j + 1; k < n && v[k] <= h; ++k)
                    right_min = std::min(right_min, v[k]);
                out.emplace_back(peak, h - std::max(left_min, right_min));
            }
            i = j + 1;
        } else {
            ++i;
        }
    }
    return out;
}

PeakSet detect_peaks(const NccSeries& series, int min_separation, double min_prominence)
{
    if (min_separation < 1)
        throw ConfigError("detect_peaks: min_separation must be >= 1");
    if (series.size() < 2 * static_cast<std::size_t>(min_separation))
        throw DataError("detect_peaks: series shorter than twice the minimum peak separation");
    auto candidates = local_maxima(series.values);
    std::erase_if(candidates, [&](const auto& c) { return c.second < min_prominence; });
    std::stable_sort(candidates.begin(), candidates.end(),
                     [](const auto& a, const auto& b) { return a.second > b.second; });
    PeakSet out;
    out.min_separation = min_separation;
    for (const auto& [idx, prom] : candidates) {
        const bool clear = std::all_of(out.indices.begin(), out.indices.end(),
                                       [&](int k) { return std::abs(k - idx) >= min_separation; });
        if (clear)
            out.indices.push_back(idx);
    }
    if (out.indices.empty())
        throw DataError("no respiratory signal detected");
    std::sort(out.indices.begin(), out.indices.end());
    return out;
}

int autocorrelation_period(std::span<const double> values)
{
    const std::size_t n = values.size();
    if (n < 6)
        throw DataError("no respiratory signal detected: series too short for period estimation");
    const double mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(n);
    std::vector<double> c(n);
    for (std::size_t i = 0; i < n; ++i)
        c[i] = values[i] - mean;
    const double energy = std::inner_product(c.begin(), c.end(), c.begin(), 0.0);
    if (!(energy > 0.0))
        throw DataError("no respiratory signal detected: flat correlation series");
    const std::size_t max_lag = n / 2;
    std::vector<double> r(max_lag + 2, 0.0);
    for (std::size_t lag = 0; lag <= max_lag + 1 && lag < n; ++lag) {
        double acc = 0;
        for (std::size_t i = 0; i + lag < n; ++i)
            acc += c[i] * c[i + lag];
        r[lag] = acc / energy;
    }
    std::size_t lag = 1;
    while (lag <= max_lag && r[lag] >= 0.0)
        ++lag;
    for (; lag <= max_lag; ++lag) {
        if (r[lag] > 0.1 && r[lag] >= r[lag - 1] && r[lag] > r[lag + 1])
            return static_cast<int>(lag);
    }
    throw DataError("no respiratory signal detected: no periodicity in correlation series");
}

double resolve_first_peak_phase(const SliceStack& stack, const SliceStack& reference, const PeakSet& peaks,
                                int offset, int inhale_direction)
{
    const int t_count = static_cast<int>(stack.size());
    if (peaks.indices.size() < 2 || offset < 1)
        return 0.0;
    const double sweep = stack.z_positions.back() >= stack.z_positions.front() ? 1.0 : -1.0;
    double parity_score = 0;
    for (std::size_t i = 0; i + 1 < peaks.indices.size(); ++i) {
        const int a = peaks.indices[i];
        const int b = peaks.indices[i + 1];
        const int gap = b - a;
        const int lo = a + gap / 4;
        const int hi = b - gap / 4;
        double score = 0;
        int count = 0;
        for (int t = lo; t <= hi; ++t) {
            const int before = std::max(0, t - offset);
            const int after = std::min(t_count - 1, t + offset);
            score += ncc(stack.slices[t], reference.slices[before]).value -
                     ncc(stack.slices[t], reference.slices[after]).value;
            ++count;
        }
        if (count > 0)
            score /= count;
        // Positive score: content displaced along the sweep direction.
        score *= sweep * inhale_direction;
        parity_score += (i % 2 == 0) ? score : -score;
    }
    return parity_score >= 0.0 ? 0.0 : 0.5;
}

RespiratoryLabeling pseudo_labels(const NccSeries& series, const PeakSet& peaks, int num_states,
                                  double first_peak_phase)
{
    if (num_states < 2)
        throw ConfigError("pseudo_labels: need at least 2 states");
    const auto& p = peaks.indices;
    if (p.size() < 2)
        throw DataError("pseudo_labels: need at least 2 peaks, found " + std::to_string(p.size()));
    const int t_count = static_cast<int>(series.size());

    RespiratoryLabeling out;
    out.num_states = num_states;
    out.source = LabelSource::Pseudo;
    out.states.resize(t_count);
    out.phase.resize(t_count);

    std::size_t seg = 0;
    for (int t = 0; t < t_count; ++t) {
        while (seg + 2 < p.size() && t > p[seg + 1])
            ++seg;
        // seg is the half-cycle [p[seg], p[seg+1]] used for t (or extrapolated from).
        const double gap = static_cast<double>(p[seg + 1] - p[seg]);
        const double base = first_peak_phase + 0.5 * static_cast<double>(seg);
        double phase = base + 0.5 * (t - p[seg]) / gap;
        phase -= std::floor(phase);
        if (phase >= 1.0)
            phase = 0.0;
        out.phase[t] = phase;
        out.states[t] = std::min(num_states - 1, static_cast<int>(std::floor(phase * num_states)));
    }
    return out;
}

SliceStack select_slices(const SliceStack& stack, const RespiratoryLabeling& labeling, int state,
                         std::vector<int>* indices)
{
    if (labeling.size() != stack.size())
        throw DataError("select_slices: labeling covers " + std::to_string(labeling.size()) + " slices, stack has " +
                        std::to_string(stack.size()));
    if (state < 0 || state >= labeling.num_states)
        throw DataError("select_slices: state " + std::to_string(state) + " out of range");
    std::vector<int> idx;
    for (std::size_t t = 0; t < labeling.size(); ++t)
        if (labeling.states[t] == state)
            idx.push_back(static_cast<int>(t));
    if (idx.empty())
        throw DataError("select_slices: no slices in state " + std::to_string(state));
    SliceStack out = stack.subset(idx);
    if (indices)
        *indices = std::move(idx);
    return out;
}

PseudoLabelResult pseudo_label_stack(const SliceStack& stack, const PseudoLabelConfig& config)
{
    if (stack.size() < 3)
        throw DataError("pseudo-labelling needs at least 3 slices");
    PseudoLabelResult res;
    double period = 0;
    if (config.reference_sigma > 0.0) {
        res.reference_sigma = config.reference_sigma;
        period = 2.0 * config.reference_sigma;
    } else {
        const SliceStack first = gaussian_reference(stack, config.first_pass_sigma);
        const NccSeries s = ncc_series(stack, first);
        const auto sm = smooth3(s.values);
        // Differencing removes the slow drift the sweep adds to the correlation. The series
        // repeats every half cycle (two average-state crossings per breath).
        std::vector<double> d(sm.size() - 1);
        for (std::size_t i = 0; i + 1 < sm.size(); ++i)
            d[i] = sm[i + 1] - sm[i];
        period = 2.0 * autocorrelation_period(d);
        res.reference_sigma = 0.5 * period;
    }
    res.breathing_period_slices = period;

    const SliceStack reference = gaussian_reference(stack, res.reference_sigma);
    res.series = ncc_series(stack, reference);
    res.series.smoothing_sigma_slices = res.reference_sigma;
    res.smoothed = config.presmooth ? smooth3(res.series.values) : res.series.values;

    const auto [mn, mx] = std::minmax_element(res.smoothed.begin(), res.smoothed.end());
    const double prominence = config.prominence_fraction * (*mx - *mn);
    const int min_sep =
        config.min_separation > 0 ? config.min_separation : std::max(1, static_cast<int>(std::lround(period / 4.0)));
    NccSeries smoothed_series;
    smoothed_series.values = res.smoothed;
    smoothed_series.degenerate = res.series.degenerate;
    res.peaks = detect_peaks(smoothed_series, min_sep, prominence);
    if (res.peaks.indices.size() < 2)
        throw DataError("no respiratory signal detected: fewer than 2 correlation peaks");

    double mean_gap = static_cast<double>(res.peaks.indices.back() - res.peaks.indices.front()) /
                      static_cast<double>(res.peaks.indices.size() - 1);
    const int offset =
        config.parity_offset > 0 ? config.parity_offset : std::max(1, static_cast<int>(std::lround(mean_gap / 4.0)));
    res.first_peak_phase = resolve_first_peak_phase(stack, reference, res.peaks, offset, config.inhale_direction);
    res.labels = pseudo_labels(res.series, res.peaks, config.num_states, res.first_peak_phase);
    return res;
}

} // namespace sweep4d
