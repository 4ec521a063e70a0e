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

#include "sweep4d/types.hpp"

#include <cmath>

#include "sweep4d/error.hpp"

namespace sweep4d {

void Grid3::validate() const
{
    for (int a = 0; a < 3; ++a) {
        if (dims[a] <= 0)
            throw DataError("grid dimension " + std::to_string(a) + " must be positive");
        if (!(spacing[a] > 0.0) || !std::isfinite(spacing[a]))
            throw DataError("grid spacing " + std::to_string(a) + " must be positive and finite");
        if (!std::isfinite(origin[a]))
            throw DataError("grid origin must be finite");
    }
}

bool operator==(const Grid3& a, const Grid3& b) noexcept
{
    return a.dims == b.dims && a.spacing == b.spacing && a.origin == b.origin;
}

template <typename T>
Volume3<T>::Volume3(const Grid3& grid, std::vector<T> data) : grid_(grid), data_(std::move(data))
{
    if (data_.size() != grid_.size())
        throw DataError("volume payload length mismatch: expected " + std::to_string(grid_.size()) +
                        " elements, got " + std::to_string(data_.size()));
}

template class Volume3<float>;
template class Volume3<double>;

void Slice2D::validate() const
{
    if (nx <= 0 || ny <= 0)
        throw DataError("slice dimensions must be positive");
    if (data.size() != static_cast<std::size_t>(nx) * ny)
        throw DataError("slice payload length mismatch");
    if (!(dx > 0.0) || !(dy > 0.0))
        throw DataError("slice spacing must be positive");
    for (float v : data)
        if (!std::isfinite(v))
            throw DataError("slice contains non-finite intensity");
}

void SliceStack::validate() const
{
    const std::size_t t = slices.size();
    if (t == 0)
        throw DataError("stack is empty");
    if (z_positions.size() != t || acq_times.size() != t)
        throw DataError("stack metadata length mismatch: " + std::to_string(t) + " slices, " +
                        std::to_string(z_positions.size()) + " z positions, " +
                        std::to_string(acq_times.size()) + " acquisition times");
    if (!(slice_thickness > 0.0) || !std::isfinite(slice_thickness))
        throw DataError("slice thickness must be positive");
    const Slice2D& first = slices.front();
    for (const Slice2D& s : slices) {
        if (s.nx != first.nx || s.ny != first.ny || s.dx != first.dx || s.dy != first.dy)
            throw DataError("stack slices differ in geometry");
        s.validate();
    }
    for (std::size_t k = 0; k < t; ++k)
        if (!std::isfinite(z_positions[k]) || !std::isfinite(acq_times[k]))
            throw DataError("stack metadata contains non-finite values");
    for (std::size_t k = 1; k < t; ++k)
        if (!(acq_times[k] > acq_times[k - 1]))
            throw DataError("acquisition times must be strictly increasing (slice " + std::to_string(k) + ")");
    if (t > 1) {
        bool up = true, down = true;
        for (std::size_t k = 1; k < t; ++k) {
            up = up && z_positions[k] >= z_positions[k - 1];
            down = down && z_positions[k] <= z_positions[k - 1];
        }
        if (!up && !down)
            throw DataError("z positions must be monotonic");
    }
}

SliceStack SliceStack::subset(std::span<const int> indices) const
{
    SliceStack out;
    out.slice_thickness = slice_thickness;
    out.slices.reserve(indices.size());
    int prev = -1;
    for (int i : indices) {
        if (i <= prev || i >= static_cast<int>(slices.size()))
            throw DataError("subset indices must be strictly increasing and in range");
        prev = i;
        out.slices.push_back(slices[i]);
        out.z_positions.push_back(z_positions[i]);
        out.acq_times.push_back(acq_times[i]);
    }
    return out;
}

std::string to_string(LabelSource source)
{
    switch (source) {
    case LabelSource::Pseudo: return "pseudo";
    case LabelSource::Srnn: return "srnn";
    case LabelSource::GroundTruth: return "ground_truth";
    }
    return "pseudo";
}

LabelSource label_source_from_string(const std::string& text)
{
    if (text == "pseudo") return LabelSource::Pseudo;
    if (text == "srnn") return LabelSource::Srnn;
    if (text == "ground_truth") return LabelSource::GroundTruth;
    throw DataError("unknown label source '" + text + "'");
}

void RespiratoryLabeling::validate() const
{
    if (num_states < 1)
        throw DataError("labeling needs at least one state");
    if (phase.size() != states.size())
        throw DataError("labeling phase/state length mismatch");
    for (std::size_t t = 0; t < states.size(); ++t) {
        if (states[t] < 0 || states[t] >= num_states)
            throw DataError("state index out of range at slice " + std::to_string(t));
        if (!(phase[t] >= 0.0 && phase[t] < 1.0))
            throw DataError("phase out of [0,1) at slice " + std::to_string(t));
    }
}

RespiratoryLabeling RespiratoryLabeling::from_states(std::vector<int> states, int num_states, LabelSource source)
{
    RespiratoryLabeling out;
    out.num_states = num_states;
    out.source = source;
    out.phase.resize(states.size());
    for (std::size_t t = 0; t < states.size(); ++t)
        out.phase[t] = (states[t] + 0.5) / num_states;
    out.states = std::move(states);
    return out;
}

} // namespace sweep4d
