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

#include "sweep4d/volume_ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "sweep4d/error.hpp"

namespace sweep4d {

namespace fs = std::filesystem;

std::vector<double> stack_buffer(const SliceStack& stack)
{
    const std::size_t plane = static_cast<std::size_t>(stack.nx()) * stack.ny();
    std::vector<double> buf(plane * stack.size());
    for (std::size_t k = 0; k < stack.size(); ++k)
        std::copy(stack.slices[k].data.begin(), stack.slices[k].data.end(), buf.begin() + k * plane);
    return buf;
}

SliceStack stack_from_buffer(std::span<const double> buffer, const SliceStack& like)
{
    SliceStack out = like;
    const std::size_t plane = static_cast<std::size_t>(like.nx()) * like.ny();
    for (std::size_t k = 0; k < out.size(); ++k)
        for (std::size_t i = 0; i < plane; ++i)
            out.slices[k].data[i] = static_cast<float>(buffer[k * plane + i]);
    return out;
}

VolumeD scatter_initialize(const SliceStack& selected, const Grid3& grid, const PsfSpec& psf)
{
    if (selected.empty())
        throw DataError("scatter_initialize: empty slice selection");
    if (selected.nx() != grid.dims[0] || selected.ny() != grid.dims[1])
        throw DataError("scatter_initialize: slice in-plane dims (" + std::to_string(selected.nx()) + "x" +
                        std::to_string(selected.ny()) + ") do not match grid (" + std::to_string(grid.dims[0]) + "x" +
                        std::to_string(grid.dims[1]) + ")");

    const auto rows = psf_rows(selected.z_positions, grid, psf);
    const int nz = grid.dims[2];
    const std::size_t plane = grid.plane_size();
    std::vector<double> weight(nz, 0.0);
    VolumeD out(grid, 0.0);
    auto& v = out.storage();
    for (std::size_t k = 0; k < selected.size(); ++k) {
        const auto& row = rows[k];
        const auto& src = selected.slices[k].data;
        for (std::size_t j = 0; j < row.weights.size(); ++j) {
            const int p = row.first + static_cast<int>(j);
            const double w = row.weights[j];
            weight[p] += w;
            double* dst = v.data() + static_cast<std::size_t>(p) * plane;
            for (std::size_t i = 0; i < plane; ++i)
                dst[i] += w * src[i];
        }
    }
    std::vector<int> filled;
    for (int p = 0; p < nz; ++p) {
        if (weight[p] > 0.0) {
            double* dst = v.data() + static_cast<std::size_t>(p) * plane;
            for (std::size_t i = 0; i < plane; ++i)
                dst[i] /= weight[p];
            filled.push_back(p);
        }
    }
    for (int p = 0; p < nz; ++p) {
        if (weight[p] > 0.0)
            continue;
        // `filled` is sorted; nearest with ties to the lower plane.
        auto it = std::lower_bound(filled.begin(), filled.end(), p);
        int src;
        if (it == filled.end())
            src = filled.back();
        else if (it == filled.begin())
            src = *it;
        else
            src = (*it - p) < (p - *(it - 1)) ? *it : *(it - 1);
        std::copy_n(v.begin() + static_cast<std::ptrdiff_t>(src * plane), plane,
                    v.begin() + static_cast<std::ptrdiff_t>(p * plane));
    }
    return out;
}

VolumeD nearest_slice_volume(const SliceStack& stack, const Grid3& grid)
{
    if (stack.empty())
        throw DataError("nearest_slice_volume: empty stack");
    if (stack.nx() != grid.dims[0] || stack.ny() != grid.dims[1])
        throw DataError("nearest_slice_volume: in-plane dims mismatch");
    VolumeD out(grid, 0.0);
    const std::size_t plane = grid.plane_size();
    for (int p = 0; p < grid.dims[2]; ++p) {
        const double z = grid.coord(2, p);
        std::size_t best = 0;
        double best_d = std::abs(stack.z_positions[0] - z);
        for (std::size_t k = 1; k < stack.size(); ++k) {
            const double d = std::abs(stack.z_positions[k] - z);
            if (d < best_d) {
                best_d = d;
                best = k;
            }
        }
        std::copy(stack.slices[best].data.begin(), stack.slices[best].data.end(),
                  out.storage().begin() + static_cast<std::ptrdiff_t>(p * plane));
    }
    return out;
}

Axis axis_from_string(const std::string& text)
{
    if (text == "x") return Axis::X;
    if (text == "y") return Axis::Y;
    if (text == "z") return Axis::Z;
    throw ConfigError("axis must be one of x, y, z (got '" + text + "')");
}

std::vector<fs::path> export_slice_images(const Volume3D& volume, Axis axis, const fs::path& directory,
                                          const std::string& prefix)
{
    const auto data = volume.data();
    if (data.empty())
        throw DataError("export_slice_images: empty volume");
    const auto [mn_it, mx_it] = std::minmax_element(data.begin(), data.end());
    const double mn = *mn_it, mx = *mx_it;
    const bool flat = !(mx > mn);

    const int nx = volume.nx(), ny = volume.ny(), nz = volume.nz();
    int count, width, height;
    switch (axis) {
    case Axis::X: count = nx; width = ny; height = nz; break;
    case Axis::Y: count = ny; width = nx; height = nz; break;
    default: count = nz; width = nx; height = ny; break;
    }

    std::error_code ec;
    fs::create_directories(directory, ec);
    const char axis_name = "xyz"[static_cast<int>(axis)];
    std::vector<fs::path> written;
    std::vector<unsigned char> pixels(static_cast<std::size_t>(width) * height);
    for (int i = 0; i < count; ++i) {
        for (int r = 0; r < height; ++r) {
            for (int c = 0; c < width; ++c) {
                float v;
                switch (axis) {
                case Axis::X: v = volume.at(i, c, r); break;
                case Axis::Y: v = volume.at(c, i, r); break;
                default: v = volume.at(c, r, i); break;
                }
                const double g = flat ? 128.0 : std::round(255.0 * (v - mn) / (mx - mn));
                pixels[static_cast<std::size_t>(r) * width + c] = static_cast<unsigned char>(std::clamp(g, 0.0, 255.0));
            }
        }
        char name[64];
        std::snprintf(name, sizeof name, "%s_%c%04d.pgm", prefix.c_str(), axis_name, i);
        const fs::path file = directory / name;
        std::ofstream out(file, std::ios::binary | std::ios::trunc);
        if (!out)
            throw DataError("cannot write " + file.string());
        out << "P5\n" << width << ' ' << height << "\n255\n";
        out.write(reinterpret_cast<const char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
        written.push_back(file);
    }
    return written;
}

} // namespace sweep4d
