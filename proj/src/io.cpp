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

#include "sweep4d/io.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "sweep4d/error.hpp"

namespace sweep4d::io {

using nlohmann::json;

namespace {

bool ends_with(const std::string& s, const std::string& suffix)
{
    return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

fs::path with_suffix(const fs::path& base, const char* suffix)
{
    return fs::path(base.string() + suffix);
}

json parse_sidecar(const fs::path& path)
{
    if (!fs::exists(path))
        throw DataError("missing header file: " + path.string());
    try {
        return json::parse(read_text(path));
    } catch (const json::exception& e) {
        throw DataError("corrupt header " + path.string() + ": " + e.what());
    }
}

template <typename T>
T require(const json& j, const char* key, const fs::path& path)
{
    if (!j.contains(key))
        throw DataError("corrupt header " + path.string() + ": missing key '" + key + "'");
    try {
        return j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw DataError("corrupt header " + path.string() + ": bad value for '" + key + "': " + e.what());
    }
}

Grid3 grid_from_header(const json& j, const fs::path& path)
{
    Grid3 g;
    auto dims = require<std::vector<long long>>(j, "dims", path);
    auto spacing = require<std::vector<double>>(j, "spacing", path);
    auto origin = require<std::vector<double>>(j, "origin", path);
    if (dims.size() != 3 || spacing.size() != 3 || origin.size() != 3)
        throw DataError("corrupt header " + path.string() + ": dims/spacing/origin must have 3 entries");
    for (int a = 0; a < 3; ++a) {
        if (dims[a] <= 0 || dims[a] > (1LL << 20))
            throw DataError("corrupt header " + path.string() + ": invalid dims");
        g.dims[a] = static_cast<int>(dims[a]);
        g.spacing[a] = spacing[a];
        g.origin[a] = origin[a];
    }
    const auto dtype = require<std::string>(j, "dtype", path);
    if (dtype != "f32le")
        throw DataError("unsupported dtype '" + dtype + "' in " + path.string());
    return g;
}

json header_for(const Grid3& g, const char* role)
{
    json j;
    j["format_version"] = 1;
    j["dims"] = {g.dims[0], g.dims[1], g.dims[2]};
    j["spacing"] = {g.spacing[0], g.spacing[1], g.spacing[2]};
    j["origin"] = {g.origin[0], g.origin[1], g.origin[2]};
    j["dtype"] = "f32le";
    j["role"] = role;
    return j;
}

std::uint32_t to_le_bits(float v)
{
    std::uint32_t bits = std::bit_cast<std::uint32_t>(v);
    if constexpr (std::endian::native == std::endian::big)
        bits = ((bits & 0xFFu) << 24) | ((bits & 0xFF00u) << 8) | ((bits >> 8) & 0xFF00u) | (bits >> 24);
    return bits;
}

float from_le_bits(std::uint32_t bits)
{
    if constexpr (std::endian::native == std::endian::big)
        bits = ((bits & 0xFFu) << 24) | ((bits & 0xFF00u) << 8) | ((bits >> 8) & 0xFF00u) | (bits >> 24);
    return std::bit_cast<float>(bits);
}

} // namespace

fs::path base_path(const fs::path& path)
{
    std::string s = path.string();
    for (const char* suffix : {".labels.json", ".json", ".f32"}) {
        if (ends_with(s, suffix))
            return fs::path(s.substr(0, s.size() - std::strlen(suffix)));
    }
    return path;
}

void write_text(const fs::path& path, const std::string& text)
{
    if (path.has_parent_path()) {
        std::error_code ec;
        fs::create_directories(path.parent_path(), ec);
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw DataError("cannot write " + path.string());
    out << text;
    if (!out)
        throw DataError("write failed for " + path.string());
}

std::string read_text(const fs::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw DataError("cannot read " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_f32le(std::span<const float> values, const fs::path& path)
{
    std::vector<std::uint32_t> bits(values.size());
    for (std::size_t i = 0; i < values.size(); ++i)
        bits[i] = to_le_bits(values[i]);
    if (path.has_parent_path()) {
        std::error_code ec;
        fs::create_directories(path.parent_path(), ec);
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw DataError("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bits.data()), static_cast<std::streamsize>(bits.size() * 4));
    if (!out)
        throw DataError("write failed for " + path.string());
}

std::vector<float> read_f32le(const fs::path& path, std::size_t expected_count)
{
    if (!fs::exists(path))
        throw DataError("missing payload file: " + path.string());
    const auto bytes = fs::file_size(path);
    if (bytes != expected_count * 4)
        throw DataError("payload length mismatch in " + path.string() + ": header implies " +
                        std::to_string(expected_count) + " floats, file holds " + std::to_string(bytes / 4) +
                        (bytes % 4 ? " (plus trailing bytes)" : ""));
    std::vector<std::uint32_t> bits(expected_count);
    std::ifstream in(path, std::ios::binary);
    in.read(reinterpret_cast<char*>(bits.data()), static_cast<std::streamsize>(bytes));
    if (!in)
        throw DataError("short read on " + path.string());
    std::vector<float> out(expected_count);
    for (std::size_t i = 0; i < expected_count; ++i) {
        out[i] = from_le_bits(bits[i]);
        if (!std::isfinite(out[i]))
            throw DataError("non-finite value in payload " + path.string() + " at element " + std::to_string(i));
    }
    return out;
}

void write_stack(const SliceStack& stack, const fs::path& path)
{
    stack.validate();
    const fs::path base = base_path(path);
    Grid3 g;
    g.dims = {stack.nx(), stack.ny(), static_cast<int>(stack.size())};
    const double dz = stack.size() > 1
                          ? std::abs(stack.z_positions.back() - stack.z_positions.front()) / (stack.size() - 1)
                          : stack.slice_thickness;
    g.spacing = {stack.slices.front().dx, stack.slices.front().dy, dz > 0.0 ? dz : stack.slice_thickness};
    g.origin = {0.0, 0.0, stack.z_positions.front()};
    json j = header_for(g, "stack");
    j["z_positions"] = stack.z_positions;
    j["acq_times"] = stack.acq_times;
    j["slice_thickness"] = stack.slice_thickness;

    std::vector<float> payload;
    payload.reserve(g.size());
    for (const Slice2D& s : stack.slices)
        payload.insert(payload.end(), s.data.begin(), s.data.end());
    write_f32le(payload, with_suffix(base, ".f32"));
    write_text(with_suffix(base, ".json"), j.dump(2) + "\n");
}

SliceStack read_stack(const fs::path& path)
{
    const fs::path base = base_path(path);
    const fs::path header_path = with_suffix(base, ".json");
    const json j = parse_sidecar(header_path);
    const Grid3 g = grid_from_header(j, header_path);
    const auto role = require<std::string>(j, "role", header_path);
    if (role != "stack")
        throw DataError("expected role 'stack' in " + header_path.string() + ", found '" + role + "'");

    SliceStack stack;
    stack.z_positions = require<std::vector<double>>(j, "z_positions", header_path);
    stack.acq_times = require<std::vector<double>>(j, "acq_times", header_path);
    stack.slice_thickness = require<double>(j, "slice_thickness", header_path);
    if (stack.z_positions.size() != static_cast<std::size_t>(g.dims[2]) ||
        stack.acq_times.size() != static_cast<std::size_t>(g.dims[2]))
        throw DataError("dims mismatch in " + header_path.string() + ": " + std::to_string(g.dims[2]) +
                        " slices but metadata lists " + std::to_string(stack.z_positions.size()));

    const std::vector<float> payload = read_f32le(with_suffix(base, ".f32"), g.size());
    const std::size_t plane = g.plane_size();
    stack.slices.reserve(g.dims[2]);
    for (int k = 0; k < g.dims[2]; ++k) {
        Slice2D s(g.dims[0], g.dims[1], g.spacing[0], g.spacing[1]);
        std::copy_n(payload.begin() + static_cast<std::ptrdiff_t>(k * plane), plane, s.data.begin());
        stack.slices.push_back(std::move(s));
    }
    stack.validate();
    return stack;
}

void write_volume(const Volume3D& volume, const fs::path& path)
{
    volume.grid().validate();
    for (float v : volume.data())
        if (!std::isfinite(v))
            throw DataError("refusing to write non-finite volume to " + path.string());
    const fs::path base = base_path(path);
    write_f32le(volume.data(), with_suffix(base, ".f32"));
    write_text(with_suffix(base, ".json"), header_for(volume.grid(), "volume").dump(2) + "\n");
}

Volume3D read_volume(const fs::path& path)
{
    const fs::path base = base_path(path);
    const fs::path header_path = with_suffix(base, ".json");
    const json j = parse_sidecar(header_path);
    const Grid3 g = grid_from_header(j, header_path);
    g.validate();
    const auto role = require<std::string>(j, "role", header_path);
    if (role != "volume")
        throw DataError("expected role 'volume' in " + header_path.string() + ", found '" + role + "'");
    return Volume3D(g, read_f32le(with_suffix(base, ".f32"), g.size()));
}

void write_labels(const RespiratoryLabeling& labels, const fs::path& path)
{
    labels.validate();
    json j;
    j["format_version"] = 1;
    j["role"] = "labels";
    j["states"] = labels.states;
    j["num_states"] = labels.num_states;
    j["source"] = to_string(labels.source);
    write_text(with_suffix(base_path(path), ".labels.json"), j.dump() + "\n");
}

RespiratoryLabeling read_labels(const fs::path& path)
{
    const fs::path file = with_suffix(base_path(path), ".labels.json");
    const json j = parse_sidecar(file);
    auto states = require<std::vector<int>>(j, "states", file);
    const int k = require<int>(j, "num_states", file);
    const auto source = label_source_from_string(require<std::string>(j, "source", file));
    if (k < 1)
        throw DataError("num_states must be positive in " + file.string());
    auto out = RespiratoryLabeling::from_states(std::move(states), k, source);
    out.validate();
    return out;
}

void write_series_csv(std::span<const double> values, const fs::path& path)
{
    std::ostringstream ss;
    ss.precision(17);
    ss << "t,value\n";
    for (std::size_t t = 0; t < values.size(); ++t)
        ss << t << ',' << values[t] << '\n';
    write_text(path, ss.str());
}

} // namespace sweep4d::io
