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

#include <filesystem>
#include <vector>

#include "sweep4d/psf.hpp"
#include "sweep4d/types.hpp"

namespace sweep4d {

/// Contiguous T x (nx*ny) copy of the stack in double precision.
std::vector<double> stack_buffer(const SliceStack& stack);
/// Builds slices from a contiguous buffer, reusing geometry and metadata from `like`.
SliceStack stack_from_buffer(std::span<const double> buffer, const SliceStack& like);

/// PSF-weighted average of the slices onto the grid. Planes reached by no slice copy the
/// nearest filled plane along z (lower plane on ties).
VolumeD scatter_initialize(const SliceStack& selected, const Grid3& grid, const PsfSpec& psf);

/// Each grid plane takes the slice whose z position is nearest (the uncorrected stack
/// viewed as a volume).
VolumeD nearest_slice_volume(const SliceStack& stack, const Grid3& grid);

enum class Axis { X = 0, Y = 1, Z = 2 };
Axis axis_from_string(const std::string& text);

/// Writes one 8-bit binary PGM per index along `axis`, windowed to the volume's min/max.
/// A volume with no dynamic range is written as mid-grey (128). Returns the files written.
std::vector<std::filesystem::path> export_slice_images(const Volume3D& volume, Axis axis,
                                                       const std::filesystem::path& directory,
                                                       const std::string& prefix = "slice");

} // namespace sweep4d
