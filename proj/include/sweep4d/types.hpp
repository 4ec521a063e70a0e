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

#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace sweep4d {

/// Axis-aligned voxel lattice: dims are (nx, ny, nz), x fastest in memory.
struct Grid3 {
    std::array<int, 3> dims{0, 0, 0};
    std::array<double, 3> spacing{1.0, 1.0, 1.0};
    std::array<double, 3> origin{0.0, 0.0, 0.0};

    std::size_t size() const noexcept
    {
        return static_cast<std::size_t>(dims[0]) * dims[1] * dims[2];
    }
    std::size_t plane_size() const noexcept { return static_cast<std::size_t>(dims[0]) * dims[1]; }
    double coord(int axis, double index) const noexcept { return origin[axis] + index * spacing[axis]; }
    bool same_shape(const Grid3& other) const noexcept { return dims == other.dims; }
    void validate() const;
};

bool operator==(const Grid3& a, const Grid3& b) noexcept;

/// Dense scalar field on a Grid3.
template <typename T>
class Volume3 {
public:
    Volume3() = default;
    explicit Volume3(const Grid3& grid, T fill = T{}) : grid_(grid), data_(grid.size(), fill) {}
    Volume3(const Grid3& grid, std::vector<T> data);

    const Grid3& grid() const noexcept { return grid_; }
    int nx() const noexcept { return grid_.dims[0]; }
    int ny() const noexcept { return grid_.dims[1]; }
    int nz() const noexcept { return grid_.dims[2]; }
    std::size_t size() const noexcept { return data_.size(); }

    std::size_t index(int x, int y, int z) const noexcept
    {
        return (static_cast<std::size_t>(z) * grid_.dims[1] + y) * grid_.dims[0] + x;
    }
    T& at(int x, int y, int z) noexcept { return data_[index(x, y, z)]; }
    const T& at(int x, int y, int z) const noexcept { return data_[index(x, y, z)]; }

    std::span<T> data() noexcept { return data_; }
    std::span<const T> data() const noexcept { return data_; }
    std::vector<T>& storage() noexcept { return data_; }
    const std::vector<T>& storage() const noexcept { return data_; }

    std::span<const T> plane(int z) const noexcept
    {
        return std::span<const T>(data_).subspan(static_cast<std::size_t>(z) * grid_.plane_size(),
                                                 grid_.plane_size());
    }

    template <typename U>
    Volume3<U> cast() const
    {
        return Volume3<U>(grid_, std::vector<U>(data_.begin(), data_.end()));
    }

private:
    Grid3 grid_;
    std::vector<T> data_;
};

using Volume3D = Volume3<float>;
using VolumeD = Volume3<double>;

struct Slice2D {
    int nx = 0;
    int ny = 0;
    double dx = 1.0;
    double dy = 1.0;
    std::vector<float> data;

    Slice2D() = default;
    Slice2D(int nx_, int ny_, double dx_, double dy_, float fill = 0.0f)
        : nx(nx_), ny(ny_), dx(dx_), dy(dy_), data(static_cast<std::size_t>(nx_) * ny_, fill)
    {
    }

    std::size_t size() const noexcept { return data.size(); }
    float& at(int x, int y) noexcept { return data[static_cast<std::size_t>(y) * nx + x]; }
    float at(int x, int y) const noexcept { return data[static_cast<std::size_t>(y) * nx + x]; }
    void validate() const;
};

/// Slices in acquisition order. z_positions and acq_times are parallel to slices.
struct SliceStack {
    std::vector<Slice2D> slices;
    std::vector<double> z_positions;
    std::vector<double> acq_times;
    double slice_thickness = 1.0;

    std::size_t size() const noexcept { return slices.size(); }
    bool empty() const noexcept { return slices.empty(); }
    int nx() const noexcept { return slices.empty() ? 0 : slices.front().nx; }
    int ny() const noexcept { return slices.empty() ? 0 : slices.front().ny; }

    /// Throws DataError when any invariant is violated.
    void validate() const;
    /// Ordered subset; indices must be strictly increasing.
    SliceStack subset(std::span<const int> indices) const;
};

enum class LabelSource { Pseudo, Srnn, GroundTruth };

std::string to_string(LabelSource source);
LabelSource label_source_from_string(const std::string& text);

/// Per-slice respiratory state with the breathing phase it was derived from.
struct RespiratoryLabeling {
    std::vector<int> states;
    std::vector<double> phase;
    int num_states = 2;
    LabelSource source = LabelSource::Pseudo;

    std::size_t size() const noexcept { return states.size(); }
    void validate() const;
    /// Fills phase with bin centres when only states are known.
    static RespiratoryLabeling from_states(std::vector<int> states, int num_states, LabelSource source);
};

} // namespace sweep4d
