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

#include "sweep4d/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "sweep4d/error.hpp"
#include "sweep4d/rng.hpp"

namespace sweep4d {

namespace {

using Vec3 = std::array<double, 3>;

double smooth_step(double signed_dist, double edge)
{
    if (!(edge > 0.0))
        return signed_dist >= 0.0 ? 1.0 : 0.0;
    return 0.5 * (1.0 + std::tanh(signed_dist / edge));
}

// Approximate signed distance (positive inside), mm.
double signed_distance(const Shape& s, const Vec3& p)
{
    if (s.kind == Shape::Kind::Ellipsoid) {
        double r2 = 0;
        for (int a = 0; a < 3; ++a) {
            const double q = (p[a] - s.center[a]) / s.radii[a];
            r2 += q * q;
        }
        const double rmin = std::min({s.radii[0], s.radii[1], s.radii[2]});
        return (1.0 - std::sqrt(r2)) * rmin;
    }
    double d = std::numeric_limits<double>::infinity();
    for (int a = 0; a < 3; ++a)
        d = std::min(d, s.radii[a] - std::abs(p[a] - s.center[a]));
    return d;
}

// Weight 1 inside the ellipsoid, cosine taper to 0 over `taper` mm outside it.
double region_weight(const Vec3& c, const Vec3& r, double taper, const Vec3& p)
{
    if (r[0] <= 0.0 || r[1] <= 0.0 || r[2] <= 0.0)
        return 1.0;
    double r2 = 0;
    for (int a = 0; a < 3; ++a) {
        const double q = (p[a] - c[a]) / r[a];
        r2 += q * q;
    }
    const double rn = std::sqrt(r2);
    if (rn <= 1.0)
        return 1.0;
    if (!(taper > 0.0))
        return 0.0;
    const double d = (rn - 1.0) * std::min({r[0], r[1], r[2]});
    if (d >= taper)
        return 0.0;
    return 0.5 * (1.0 + std::cos(std::numbers::pi * d / taper));
}

struct TextureField {
    std::vector<Vec3> k;
    std::vector<double> phase;

    TextureField(double scale_mm, int waves, std::uint64_t seed)
    {
        Rng rng(seed ^ 0x7e57u);
        for (int w = 0; w < waves; ++w) {
            Vec3 dir{rng.normal(), rng.normal(), rng.normal()};
            const double n = std::sqrt(dir[0] * dir[0] + dir[1] * dir[1] + dir[2] * dir[2]) + 1e-12;
            const double mag = 2.0 * std::numbers::pi / scale_mm * rng.uniform(0.7, 1.3);
            k.push_back({dir[0] / n * mag, dir[1] / n * mag, dir[2] / n * mag});
            phase.push_back(rng.uniform(0.0, 2.0 * std::numbers::pi));
        }
    }

    // Unit variance in expectation.
    double operator()(const Vec3& p) const
    {
        if (k.empty())
            return 0.0;
        double acc = 0;
        for (std::size_t w = 0; w < k.size(); ++w)
            acc += std::cos(k[w][0] * p[0] + k[w][1] * p[1] + k[w][2] * p[2] + phase[w]);
        return acc * std::sqrt(2.0 / static_cast<double>(k.size()));
    }
};

double sample_trilinear(const VolumeD& v, double fx, double fy, double fz)
{
    const int nx = v.nx(), ny = v.ny(), nz = v.nz();
    fx = std::clamp(fx, 0.0, static_cast<double>(nx - 1));
    fy = std::clamp(fy, 0.0, static_cast<double>(ny - 1));
    fz = std::clamp(fz, 0.0, static_cast<double>(nz - 1));
    const int x0 = std::min(static_cast<int>(fx), nx - 1);
    const int y0 = std::min(static_cast<int>(fy), ny - 1);
    const int z0 = std::min(static_cast<int>(fz), nz - 1);
    const int x1 = std::min(x0 + 1, nx - 1);
    const int y1 = std::min(y0 + 1, ny - 1);
    const int z1 = std::min(z0 + 1, nz - 1);
    const double ax = fx - x0, ay = fy - y0, az = fz - z0;
    auto lerp = [](double a, double b, double t) { return t == 0.0 ? a : a + t * (b - a); };
    const double c00 = lerp(v.at(x0, y0, z0), v.at(x1, y0, z0), ax);
    const double c10 = lerp(v.at(x0, y1, z0), v.at(x1, y1, z0), ax);
    const double c01 = lerp(v.at(x0, y0, z1), v.at(x1, y0, z1), ax);
    const double c11 = lerp(v.at(x0, y1, z1), v.at(x1, y1, z1), ax);
    return lerp(lerp(c00, c10, ay), lerp(c01, c11, ay), az);
}

// Planes [first, first + count) of the deformed volume, contiguous.
std::vector<double> deform_planes(const VolumeD& v, const BreathingModel& m, double a, int first, int count)
{
    const Grid3& g = v.grid();
    const std::size_t plane = g.plane_size();
    std::vector<double> out(plane * count);
    if (a == 0.0) {
        std::copy_n(v.storage().begin() + static_cast<std::ptrdiff_t>(first * plane), plane * count, out.begin());
        return out;
    }
#pragma omp parallel for schedule(static)
    for (int zi = 0; zi < count; ++zi) {
        const int z = first + zi;
        for (int y = 0; y < g.dims[1]; ++y)
            for (int x = 0; x < g.dims[0]; ++x) {
                const Vec3 p{g.coord(0, x), g.coord(1, y), g.coord(2, z)};
                const Vec3 u = displacement(m, p, a);
                const double s = sample_trilinear(v, x - u[0] / g.spacing[0], y - u[1] / g.spacing[1],
                                                  z - u[2] / g.spacing[2]);
                out[zi * plane + static_cast<std::size_t>(y) * g.dims[0] + x] = s;
            }
    }
    return out;
}

void check_shape(const Shape& s, const Grid3& g)
{
    for (int a = 0; a < 3; ++a) {
        const double lo = g.origin[a];
        const double hi = g.origin[a] + (g.dims[a] - 1) * g.spacing[a];
        if (s.center[a] < lo || s.center[a] > hi)
            throw DataError("phantom shape '" + s.name + "' centre outside the grid");
        if (!(s.radii[a] > 0.0))
            throw DataError("phantom shape '" + s.name + "' has non-positive radius");
    }
    if (!(s.intensity >= 0.0))
        throw DataError("phantom shape '" + s.name + "' has negative intensity");
}

// One slice through the PSF from contiguous deformed planes starting at `first`.
void sample_slice(std::span<const double> planes, int first, const kernels::WeightRow& row,
                  const InPlaneBlur& blur, std::size_t plane, Slice2D& out)
{
    std::vector<double> acc(plane, 0.0);
    for (std::size_t j = 0; j < row.weights.size(); ++j) {
        const double w = row.weights[j];
        const double* src = planes.data() + (row.first + j - first) * plane;
        for (std::size_t i = 0; i < plane; ++i)
            acc[i] += w * src[i];
    }
    std::vector<double> blurred(plane);
    blur.apply(acc, blurred);
    for (std::size_t i = 0; i < plane; ++i)
        out.data[i] = static_cast<float>(blurred[i]);
}

void add_noise(SliceStack& stack, double sd, std::uint64_t seed)
{
    if (!(sd > 0.0))
        return;
    Rng rng(seed ^ 0x9015eull);
    for (Slice2D& s : stack.slices)
        for (float& v : s.data)
            v = static_cast<float>(std::max(0.0, v + sd * rng.normal()));
}

double intensity_range(const Volume3D& v)
{
    const auto [mn, mx] = std::minmax_element(v.data().begin(), v.data().end());
    return static_cast<double>(*mx) - static_cast<double>(*mn);
}

} // namespace

Grid3 centred_grid(std::array<int, 3> dims, double spacing)
{
    Grid3 g;
    g.dims = dims;
    g.spacing = {spacing, spacing, spacing};
    for (int a = 0; a < 3; ++a)
        g.origin[a] = -0.5 * (dims[a] - 1) * spacing;
    return g;
}

void PhantomSpec::validate() const
{
    grid.validate();
    for (const Shape& s : shapes)
        check_shape(s, grid);
    if (!(noise_fraction >= 0.0))
        throw ConfigError("phantom.noise_fraction must be non-negative");
    if (!(texture_scale_mm > 0.0) || texture_waves < 0)
        throw ConfigError("phantom texture parameters invalid");
}

PhantomSpec PhantomSpec::abdominal(const Grid3& grid, std::uint64_t seed)
{
    PhantomSpec s;
    s.grid = grid;
    s.seed = seed;
    const double lx = grid.dims[0] * grid.spacing[0];
    const double ly = grid.dims[1] * grid.spacing[1];
    const double lz = grid.dims[2] * grid.spacing[2];
    const Vec3 c{grid.origin[0] + 0.5 * (grid.dims[0] - 1) * grid.spacing[0],
                 grid.origin[1] + 0.5 * (grid.dims[1] - 1) * grid.spacing[1],
                 grid.origin[2] + 0.5 * (grid.dims[2] - 1) * grid.spacing[2]};
    auto at = [&](double fx, double fy, double fz) { return Vec3{c[0] + fx * lx, c[1] + fy * ly, c[2] + fz * lz}; };
    const double edge = 1.5 * grid.spacing[0];

    s.shapes.push_back({Shape::Kind::Ellipsoid, at(0, 0, 0), {0.44 * lx, 0.38 * ly, 0.75 * lz}, 220.0, edge, 0.25, "body"});
    s.shapes.push_back({Shape::Kind::Cuboid, at(0, 0.29, 0), {0.05 * lx, 0.05 * ly, 0.75 * lz}, 1000.0, edge, 0.05, "spine"});
    s.shapes.push_back({Shape::Kind::Ellipsoid, at(-0.12, -0.03, 0.12), {0.22 * lx, 0.19 * ly, 0.2 * lz}, 650.0, edge, 0.2, "liver"});
    s.shapes.push_back({Shape::Kind::Ellipsoid, at(0.17, 0.1, -0.12), {0.07 * lx, 0.06 * ly, 0.12 * lz}, 900.0, edge, 0.1, "kidney_left"});
    s.shapes.push_back({Shape::Kind::Ellipsoid, at(-0.15, 0.12, -0.2), {0.07 * lx, 0.06 * ly, 0.11 * lz}, 850.0, edge, 0.1, "kidney_right"});
    s.shapes.push_back({Shape::Kind::Ellipsoid, at(0.1, -0.12, 0.05), {0.06 * lx, 0.05 * ly, 0.08 * lz}, 450.0, edge, 0.15, "bowel"});
    return s;
}

Phantom make_phantom(const PhantomSpec& spec)
{
    spec.validate();
    Phantom ph;
    ph.spec = spec;
    ph.volume = Volume3D(spec.grid, 0.0f);
    const Grid3& g = spec.grid;
    const TextureField texture(spec.texture_scale_mm, spec.texture_waves, spec.seed);
    auto data = ph.volume.data();
#pragma omp parallel for schedule(static)
    for (int z = 0; z < g.dims[2]; ++z)
        for (int y = 0; y < g.dims[1]; ++y)
            for (int x = 0; x < g.dims[0]; ++x) {
                const Vec3 p{g.coord(0, x), g.coord(1, y), g.coord(2, z)};
                double v = 0;
                double tex = std::numeric_limits<double>::quiet_NaN();
                for (const Shape& s : spec.shapes) {
                    const double m = smooth_step(signed_distance(s, p), s.edge_mm);
                    if (m <= 0.0)
                        continue;
                    double value = s.intensity;
                    if (s.texture != 0.0) {
                        if (std::isnan(tex))
                            tex = texture(p);
                        value *= 1.0 + s.texture * tex;
                    }
                    v = v * (1.0 - m) + m * value;
                }
                data[ph.volume.index(x, y, z)] = static_cast<float>(std::max(0.0, v));
            }
    return ph;
}

std::string to_string(Waveform w) { return w == Waveform::Sin4 ? "sin4" : "sinusoid"; }

Waveform waveform_from_string(const std::string& text)
{
    if (text == "sinusoid") return Waveform::Sinusoid;
    if (text == "sin4") return Waveform::Sin4;
    throw ConfigError("waveform must be 'sinusoid' or 'sin4' (got '" + text + "')");
}

double waveform_value(Waveform w, double phase)
{
    if (w == Waveform::Sinusoid)
        return std::sin(2.0 * std::numbers::pi * phase);
    // sin^4 rests at exhale; shifted so it rises through its mean (3/8) at phase 0 and
    // rescaled to peak at 1.
    static const double shift = std::asin(std::pow(3.0 / 8.0, 0.25)) / std::numbers::pi;
    const double s = std::sin(std::numbers::pi * (phase + shift));
    return (s * s * s * s - 3.0 / 8.0) / (5.0 / 8.0);
}

void BreathingModel::validate(double slice_time) const
{
    if (!(period_s > slice_time))
        throw ConfigError("breathing.period_s must exceed the slice acquisition time");
    if (!std::isfinite(amplitude_mm) || !std::isfinite(shell_scale))
        throw ConfigError("breathing amplitude must be finite");
    if (!(period_jitter >= 0.0))
        throw ConfigError("breathing.period_jitter must be non-negative");
}

BreathingModel BreathingModel::abdominal(const Grid3& grid)
{
    BreathingModel m;
    const double lx = grid.dims[0] * grid.spacing[0];
    const double ly = grid.dims[1] * grid.spacing[1];
    const double lz = grid.dims[2] * grid.spacing[2];
    const Vec3 c{grid.origin[0] + 0.5 * (grid.dims[0] - 1) * grid.spacing[0],
                 grid.origin[1] + 0.5 * (grid.dims[1] - 1) * grid.spacing[1],
                 grid.origin[2] + 0.5 * (grid.dims[2] - 1) * grid.spacing[2]};
    m.region_center = {c[0] - 0.02 * lx, c[1] - 0.02 * ly, c[2]};
    m.region_radii = {0.36 * lx, 0.22 * ly, 0.4 * lz};
    m.region_taper_mm = std::max(12.0, 4.0 * grid.spacing[0]);
    m.shell_center = {c[0] - 0.12 * lx, c[1] - 0.03 * ly, c[2] + 0.12 * lz};
    m.shell_radii = {0.25 * lx, 0.22 * ly, 0.24 * lz};
    return m;
}

std::vector<double> breathing_phases(const BreathingModel& model, std::span<const double> times)
{
    std::vector<double> out(times.size());
    if (times.empty())
        return out;
    Rng rng(model.seed ^ 0xb4ea7full);
    double phase = model.phase0 + times[0] / model.period_s;
    for (std::size_t k = 0; k < times.size(); ++k) {
        if (k > 0) {
            double rate = 1.0;
            if (model.period_jitter > 0.0)
                rate = std::max(0.1, 1.0 + model.period_jitter * rng.normal());
            phase += rate * (times[k] - times[k - 1]) / model.period_s;
        }
        out[k] = phase - std::floor(phase);
        if (out[k] >= 1.0)
            out[k] = 0.0;
    }
    return out;
}

std::array<double, 3> displacement(const BreathingModel& m, const std::array<double, 3>& p, double a)
{
    Vec3 u{0, 0, 0};
    if (a == 0.0)
        return u;
    const double w = region_weight(m.region_center, m.region_radii, m.region_taper_mm, p);
    u[2] = a * m.amplitude_mm * w;
    if (m.shell_scale != 0.0 && m.shell_radii[0] > 0.0 && m.shell_radii[1] > 0.0 && m.shell_radii[2] > 0.0) {
        const double ws = region_weight(m.shell_center, m.shell_radii, m.region_taper_mm, p);
        for (int i = 0; i < 3; ++i)
            u[i] += a * m.shell_scale * ws * (p[i] - m.shell_center[i]);
    }
    return u;
}

VolumeD deform_amplitude(const VolumeD& volume, const BreathingModel& model, double a)
{
    VolumeD out(volume.grid());
    out.storage() = deform_planes(volume, model, a, 0, volume.nz());
    return out;
}

Volume3D deform(const Volume3D& volume, const BreathingModel& model, double t)
{
    if (!(t >= 0.0))
        throw ConfigError("deform: time must be non-negative");
    double phase = model.phase0 + t / model.period_s;
    phase -= std::floor(phase);
    const double a = waveform_value(model.waveform, phase);
    return deform_amplitude(volume.cast<double>(), model, a).cast<float>();
}

void AcquisitionSpec::validate() const
{
    if (!(slice_time > 0.0) || !(sweep_rate >= 0.0) || !(slice_thickness > 0.0) || num_slices < 1)
        throw ConfigError("acquisition parameters must be positive");
    if (!(in_plane_fwhm >= 0.0))
        throw ConfigError("acquisition.in_plane_fwhm must be non-negative");
}

PsfSpec AcquisitionSpec::psf() const
{
    PsfSpec p;
    p.fwhm_z = slice_thickness;
    p.fwhm_xy = in_plane_fwhm;
    return p;
}

namespace {

struct SweepGeometry {
    std::vector<double> times, z;
};

SweepGeometry sweep_geometry(const Grid3& g, const AcquisitionSpec& acq)
{
    SweepGeometry s;
    const double z_first = g.origin[2];
    const double z_last = g.origin[2] + (g.dims[2] - 1) * g.spacing[2];
    const double start = std::isnan(acq.z_start) ? z_first : acq.z_start;
    double step = acq.sweep_rate * acq.slice_time;
    if (acq.sweep_rate == 0.0)
        step = acq.num_slices > 1 ? (z_last - start) / (acq.num_slices - 1) : 0.0;
    for (int k = 0; k < acq.num_slices; ++k) {
        s.times.push_back(k * acq.slice_time);
        s.z.push_back(start + k * step);
    }
    if (s.z.front() < z_first - 1e-9 || s.z.back() > z_last + 1e-9)
        throw DataError("acquisition sweep [" + std::to_string(s.z.front()) + ", " + std::to_string(s.z.back()) +
                        "] mm leaves the phantom grid");
    return s;
}

} // namespace

Acquisition acquire_sweep(const Phantom& phantom, const BreathingModel& breathing, const AcquisitionSpec& acq,
                          int num_states)
{
    acq.validate();
    breathing.validate(acq.slice_time);
    if (num_states < 1)
        throw ConfigError("acquire_sweep: num_states must be >= 1");
    const Grid3& g = phantom.volume.grid();
    const SweepGeometry geo = sweep_geometry(g, acq);
    const PsfSpec psf = acq.psf();
    const auto rows = psf_rows(geo.z, g, psf);
    const InPlaneBlur blur(g.dims[0], g.dims[1], g.spacing[0], g.spacing[1], psf);
    const VolumeD vol = phantom.volume.cast<double>();
    const std::size_t plane = g.plane_size();

    Acquisition out;
    out.stack.slice_thickness = acq.slice_thickness;
    out.stack.z_positions = geo.z;
    out.stack.acq_times = geo.times;
    const auto phases = breathing_phases(breathing, geo.times);
    out.truth.num_states = num_states;
    out.truth.source = LabelSource::GroundTruth;
    out.truth.phase = phases;
    out.stack.slices.assign(geo.z.size(), Slice2D(g.dims[0], g.dims[1], g.spacing[0], g.spacing[1]));
    for (std::size_t k = 0; k < geo.z.size(); ++k) {
        const double a = breathing.amplitude_mm == 0.0 && breathing.shell_scale == 0.0
                             ? 0.0
                             : waveform_value(breathing.waveform, phases[k]);
        out.amplitude.push_back(a);
        out.truth.states.push_back(std::min(num_states - 1, static_cast<int>(std::floor(phases[k] * num_states))));
        const auto& row = rows[k];
        const auto planes = deform_planes(vol, breathing, a, row.first, static_cast<int>(row.weights.size()));
        sample_slice(planes, row.first, row, blur, plane, out.stack.slices[k]);
    }
    add_noise(out.stack, phantom.spec.noise_fraction * intensity_range(phantom.volume), phantom.spec.seed);
    out.stack.validate();
    return out;
}

std::vector<VolumeD> state_volumes(const Phantom& phantom, const BreathingModel& breathing, int num_states)
{
    std::vector<VolumeD> out;
    const VolumeD vol = phantom.volume.cast<double>();
    for (int s = 0; s < num_states; ++s) {
        const double phase = (s + 0.5) / num_states;
        out.push_back(deform_amplitude(vol, breathing, waveform_value(breathing.waveform, phase)));
    }
    return out;
}

Table1Dataset make_table1_dataset(int num_states, int cycles, std::uint64_t seed, const Table1Options& options)
{
    if (num_states < 2)
        throw ConfigError("table1 dataset needs at least 2 states");
    if (cycles < 1 || options.slices_per_group < 1)
        throw ConfigError("table1 dataset needs at least one cycle and one slice per group");
    Table1Dataset d;
    PhantomSpec spec = PhantomSpec::abdominal(options.grid, seed);
    spec.noise_fraction = options.noise_fraction;
    d.phantom = make_phantom(spec);
    d.breathing = BreathingModel::abdominal(options.grid);
    d.breathing.amplitude_mm = options.amplitude_mm;
    d.breathing.seed = seed;
    d.states = state_volumes(d.phantom, d.breathing, num_states);

    const int groups = 2 * num_states;
    const int per_group = options.slices_per_group;
    const int t_count = cycles * groups * per_group;
    Rng rng(seed ^ 0x7ab1e1ull);
    d.start_group = static_cast<int>(rng.below(static_cast<std::uint64_t>(groups)));

    AcquisitionSpec acq;
    acq.slice_thickness = options.slice_thickness;
    acq.num_slices = t_count;
    acq.sweep_rate = 0.0;
    const Grid3& g = options.grid;
    const double z_mid = g.origin[2] + 0.5 * (g.dims[2] - 1) * g.spacing[2];
    if (options.sweep_span_mm > 0.0) {
        acq.z_start = z_mid - 0.5 * options.sweep_span_mm;
        acq.sweep_rate = options.sweep_span_mm / std::max(1, t_count - 1) / acq.slice_time;
    }
    const SweepGeometry geo = sweep_geometry(g, acq);
    const PsfSpec psf = acq.psf();
    const auto rows = psf_rows(geo.z, g, psf);
    const InPlaneBlur blur(g.dims[0], g.dims[1], g.spacing[0], g.spacing[1], psf);
    const std::size_t plane = g.plane_size();

    d.stack.slice_thickness = acq.slice_thickness;
    d.stack.z_positions = geo.z;
    d.stack.acq_times = geo.times;
    d.stack.slices.assign(t_count, Slice2D(g.dims[0], g.dims[1], g.spacing[0], g.spacing[1]));
    d.truth.num_states = num_states;
    d.truth.source = LabelSource::GroundTruth;
    for (int k = 0; k < t_count; ++k) {
        const int group = (d.start_group + k / per_group) % groups;
        const int state = group / 2;
        const double phase = (group + (k % per_group + 0.5) / per_group) / groups;
        d.truth.states.push_back(state);
        d.truth.phase.push_back(phase);
        sample_slice(d.states[state].storage(), 0, rows[k], blur, plane, d.stack.slices[k]);
    }
    add_noise(d.stack, spec.noise_fraction * intensity_range(d.phantom.volume), seed);
    d.stack.validate();
    return d;
}

} // namespace sweep4d
