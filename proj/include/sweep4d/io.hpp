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

// Raw payload + JSON sidecar storage.
//
//   <name>.f32   little-endian float32, x fastest, then y, then z (slice index for stacks)
//   <name>.json  dims, spacing, origin, dtype ("f32le"), role; stacks add z_positions,
//                acq_times and slice_thickness
//   <name>.labels.json  states, num_states, source
//
// Paths may be given with or without the .json / .f32 suffix.

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "sweep4d/types.hpp"

namespace sweep4d::io {

namespace fs = std::filesystem;

/// Strips a trailing ".json", ".f32" or ".labels.json" so both files can be derived.
fs::path base_path(const fs::path& path);

void write_stack(const SliceStack& stack, const fs::path& path);
SliceStack read_stack(const fs::path& path);

void write_volume(const Volume3D& volume, const fs::path& path);
Volume3D read_volume(const fs::path& path);

/// Writes `<base>.labels.json`.
void write_labels(const RespiratoryLabeling& labels, const fs::path& path);
RespiratoryLabeling read_labels(const fs::path& path);

/// `t,value` rows with a header line.
void write_series_csv(std::span<const double> values, const fs::path& path);

/// Raw little-endian float32 payload helpers, shared with checkpoint files.
void write_f32le(std::span<const float> values, const fs::path& path);
std::vector<float> read_f32le(const fs::path& path, std::size_t expected_count);

/// Writes text atomically enough for our purposes (truncate + write); throws DataError.
void write_text(const fs::path& path, const std::string& text);
std::string read_text(const fs::path& path);

} // namespace sweep4d::io
