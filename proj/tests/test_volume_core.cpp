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

#include <doctest.h>

#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "sweep4d/error.hpp"
#include "sweep4d/io.hpp"
#include "sweep4d/metrics.hpp"
#include "sweep4d/phantom.hpp"
#include "sweep4d/volume_ops.hpp"
#include "support.hpp"

using namespace sweep4d;
namespace fs = std::filesystem;

namespace {

bool same_stack(const SliceStack& a, const SliceStack& b)
{
    if (a.size() != b.size() || a.slice_thickness != b.slice_thickness || a.z_positions != b.z_positions ||
        a.acq_times != b.acq_times)
        return false;
    for (std::size_t k = 0; k < a.size(); ++k) {
        const Slice2D &x = a.slices[k], &y = b.slices[k];
        if (x.nx != y.nx || x.ny != y.ny || x.dx != y.dx || x.dy != y.dy || x.data != y.data)
            return false;
    }
    return true;
}

SliceStack irregular_stack(Rng& rng)
{
    const int t = 1 + static_cast<int>(rng.below(12));
    const int nx = 1 + static_cast<int>(rng.below(9)), ny = 1 + static_cast<int>(rng.below(9));
    SliceStack s;
    s.slice_thickness = rng.uniform(0.5, 6.0);
    const double dx = rng.uniform(0.3, 3.0), dy = rng.uniform(0.3, 3.0);
    double z = rng.uniform(-50, 50), time = rng.uniform(0, 5);
    for (int k = 0; k < t; ++k) {
        Slice2D sl(nx, ny, dx, dy);
        for (float& v : sl.data)
            v = static_cast<float>(rng.uniform(0.0, 2000.0));
        s.slices.push_back(sl);
        s.z_positions.push_back(z);
        s.acq_times.push_back(time);
        z += rng.uniform(0.0, 2.0);
        time += rng.uniform(0.01, 1.0);
    }
    return s;
}

} // namespace

TEST_CASE("stack write/read is the identity on random stacks")
{
    const fs::path dir = test::temp_dir("stack_roundtrip");
    Rng rng(11);
    for (int i = 0; i < 25; ++i) {
        const SliceStack s = irregular_stack(rng);
        io::write_stack(s, dir / "s");
        CHECK(same_stack(io::read_stack(dir / "s"), s));
    }
}

TEST_CASE("20-slice stack round-trips and the payload is byte-identical")
{
    const fs::path dir = test::temp_dir("stack20");
    Rng rng(3);
    const SliceStack s = test::random_stack(rng, 20, 7, 5);
    io::write_stack(s, dir / "a.json");
    io::write_stack(io::read_stack(dir / "a"), dir / "b.f32");
    std::ifstream fa(dir / "a.f32", std::ios::binary), fb(dir / "b.f32", std::ios::binary);
    const std::string ba((std::istreambuf_iterator<char>(fa)), {}), bb((std::istreambuf_iterator<char>(fb)), {});
    CHECK(ba.size() == 20u * 7 * 5 * 4);
    CHECK(ba == bb);
}

TEST_CASE("volume payload is little-endian float32 and round-trips bit-for-bit")
{
    const fs::path dir = test::temp_dir("volume");
    Grid3 g{{8, 8, 8}, {1, 1, 1}, {0, 0, 0}};
    io::write_volume(Volume3D(g, 0.0f), dir / "zeros");
    CHECK(fs::file_size(dir / "zeros.f32") == 2048u);

    Rng rng(5);
    Grid3 h{{5, 3, 4}, {0.5, 1.5, 2.0}, {-1, 2, 3}};
    Volume3D v(h);
    for (float& x : v.storage())
        x = static_cast<float>(rng.uniform(-10, 10));
    v.at(1, 0, 0) = 1.0f;
    io::write_volume(v, dir / "v");
    const Volume3D r = io::read_volume(dir / "v.json");
    CHECK(r.grid() == h);
    CHECK(r.storage() == v.storage());

    std::ifstream f(dir / "v.f32", std::ios::binary);
    unsigned char bytes[8];
    f.read(reinterpret_cast<char*>(bytes), 8);
    // element 1 is 1.0f = 0x3f800000
    CHECK(bytes[4] == 0x00);
    CHECK(bytes[5] == 0x00);
    CHECK(bytes[6] == 0x80);
    CHECK(bytes[7] == 0x3f);

    const auto header = nlohmann::json::parse(io::read_text(dir / "v.json"));
    CHECK(header.at("dtype") == "f32le");
    CHECK(header.at("role") == "volume");
}

TEST_CASE("reread phantom volume compares as identical")
{
    const fs::path dir = test::temp_dir("phantom_reread");
    const Phantom ph = make_phantom(PhantomSpec::abdominal(centred_grid({24, 24, 16}, 4.0), 2));
    io::write_volume(ph.volume, dir / "gt");
    CHECK(std::isinf(psnr(io::read_volume(dir / "gt"), ph.volume)));
}

TEST_CASE("header dims larger than the payload are rejected")
{
    const fs::path dir = test::temp_dir("mismatch");
    Rng rng(1);
    io::write_stack(test::random_stack(rng, 99, 64, 64), dir / "s");
    auto header = nlohmann::json::parse(io::read_text(dir / "s.json"));
    header["dims"] = {64, 64, 100};
    header["z_positions"].push_back(1000.0);
    header["acq_times"].push_back(1000.0);
    io::write_text(dir / "s.json", header.dump());
    try {
        io::read_stack(dir / "s");
        FAIL("expected DataError");
    } catch (const DataError& e) {
        CHECK(std::string(e.what()).find("payload length mismatch") != std::string::npos);
    }
}

TEST_CASE("corrupt inputs are rejected with data errors")
{
    const fs::path dir = test::temp_dir("corrupt");
    Rng rng(2);
    SliceStack s = test::random_stack(rng, 4, 3, 3);

    CHECK_THROWS_AS(io::read_stack(dir / "missing"), DataError);

    io::write_stack(s, dir / "s");
    io::write_text(dir / "s.json", "{not json");
    CHECK_THROWS_AS(io::read_stack(dir / "s"), DataError);

    io::write_stack(s, dir / "nan");
    std::vector<float> payload = io::read_f32le(dir / "nan.f32", 36);
    payload[7] = std::numeric_limits<float>::quiet_NaN();
    io::write_f32le(payload, dir / "nan.f32");
    CHECK_THROWS_AS(io::read_stack(dir / "nan"), DataError);

    SliceStack back = s;
    back.acq_times[2] = back.acq_times[1];
    CHECK_THROWS_AS(back.validate(), DataError);
    back = s;
    back.z_positions = {0.0, 2.0, 1.0, 3.0};
    CHECK_THROWS_AS(back.validate(), DataError);
    back = s;
    back.slice_thickness = 0.0;
    CHECK_THROWS_AS(back.validate(), DataError);

    io::write_stack(s, dir / "bad_z");
    auto header = nlohmann::json::parse(io::read_text(dir / "bad_z.json"));
    header["z_positions"] = {0.0, 2.0, 1.0, 3.0};
    io::write_text(dir / "bad_z.json", header.dump());
    CHECK_THROWS_AS(io::read_stack(dir / "bad_z"), DataError);
}

TEST_CASE("labels round-trip with their source tag")
{
    const fs::path dir = test::temp_dir("labels");
    RespiratoryLabeling l = RespiratoryLabeling::from_states({0, 1, 2, 2, 1, 0}, 3, LabelSource::Srnn);
    io::write_labels(l, dir / "x");
    CHECK(fs::exists(dir / "x.labels.json"));
    const RespiratoryLabeling r = io::read_labels(dir / "x.labels.json");
    CHECK(r.states == l.states);
    CHECK(r.num_states == 3);
    CHECK(r.source == LabelSource::Srnn);
}

TEST_CASE("subset keeps order and metadata")
{
    Rng rng(4);
    const SliceStack s = test::random_stack(rng, 10, 2, 2);
    const int idx[] = {1, 4, 9};
    const SliceStack sub = s.subset(idx);
    REQUIRE(sub.size() == 3);
    CHECK(sub.z_positions[1] == s.z_positions[4]);
    CHECK(sub.acq_times[2] == s.acq_times[9]);
    CHECK(sub.slices[0].data == s.slices[1].data);
    const int bad[] = {3, 3};
    CHECK_THROWS_AS(s.subset(bad), DataError);
}

TEST_CASE("scatter_initialize from one slice is constant along z")
{
    Grid3 g{{3, 2, 7}, {1, 1, 1}, {0, 0, -3}};
    Rng rng(9);
    SliceStack s = test::random_stack(rng, 1, 3, 2, 0.0, 1.0, 2.0);
    PsfSpec psf;
    psf.fwhm_z = 2.0;
    const VolumeD v = scatter_initialize(s, g, psf);
    for (int z = 0; z < 7; ++z)
        for (int y = 0; y < 2; ++y)
            for (int x = 0; x < 3; ++x)
                CHECK(v.at(x, y, z) == doctest::Approx(s.slices[0].at(x, y)).epsilon(1e-6));
}

TEST_CASE("scatter_initialize with a delta PSF reassembles an exactly tiling stack")
{
    Grid3 g{{4, 3, 6}, {1, 1, 2}, {0, 0, 10}};
    Rng rng(10);
    SliceStack s = test::random_stack(rng, 6, 4, 3, 10.0, 2.0, 0.1);
    PsfSpec psf;
    psf.fwhm_z = 0.1;
    const VolumeD v = scatter_initialize(s, g, psf);
    for (int z = 0; z < 6; ++z)
        for (int y = 0; y < 3; ++y)
            for (int x = 0; x < 4; ++x)
                CHECK(v.at(x, y, z) == doctest::Approx(s.slices[z].at(x, y)).epsilon(1e-6));
}

TEST_CASE("scatter_initialize is linear in the slice intensities")
{
    Grid3 g{{4, 4, 12}, {1, 1, 1}, {0, 0, 0}};
    Rng rng(12);
    SliceStack s = test::random_stack(rng, 5, 4, 4, 2.0, 1.7, 3.0);
    SliceStack scaled = s;
    for (Slice2D& sl : scaled.slices)
        for (float& x : sl.data)
            x *= 2.5f;
    PsfSpec psf;
    psf.fwhm_z = 3.0;
    const VolumeD a = scatter_initialize(s, g, psf), b = scatter_initialize(scaled, g, psf);
    for (std::size_t i = 0; i < a.size(); ++i)
        CHECK(b.storage()[i] == doctest::Approx(2.5 * a.storage()[i]).epsilon(1e-6));
}

TEST_CASE("scatter_initialize fills unreached planes from the nearest filled plane")
{
    Grid3 g{{2, 2, 20}, {1, 1, 1}, {0, 0, 0}};
    SliceStack s;
    s.slice_thickness = 1.0;
    for (int k = 0; k < 2; ++k) {
        s.slices.emplace_back(2, 2, 1.0, 1.0, k == 0 ? 10.0f : 30.0f);
        s.z_positions.push_back(k == 0 ? 2.0 : 17.0);
        s.acq_times.push_back(k);
    }
    PsfSpec psf;
    psf.fwhm_z = 1.0;
    const VolumeD v = scatter_initialize(s, g, psf);
    CHECK(v.at(0, 0, 0) == doctest::Approx(10.0));
    CHECK(v.at(1, 1, 8) == doctest::Approx(10.0));
    CHECK(v.at(1, 0, 12) == doctest::Approx(30.0));
    CHECK(v.at(0, 1, 19) == doctest::Approx(30.0));
    for (double x : v.storage())
        CHECK(std::isfinite(x));
}

TEST_CASE("scatter_initialize rejects empty or mismatching selections")
{
    Grid3 g{{4, 4, 4}, {1, 1, 1}, {0, 0, 0}};
    PsfSpec psf;
    CHECK_THROWS_AS(scatter_initialize(SliceStack{}, g, psf), DataError);
    Rng rng(1);
    CHECK_THROWS_AS(scatter_initialize(test::random_stack(rng, 2, 3, 4), g, psf), DataError);
}

TEST_CASE("scatter initialisation of a dense sweep beats the raw slices as a volume")
{
    const Grid3 grid = centred_grid({32, 32, 32}, 4.0);
    const Phantom ph = make_phantom(PhantomSpec::abdominal(grid, 1));
    BreathingModel br = BreathingModel::abdominal(grid);
    br.period_s = 3.92;
    br.amplitude_mm = 8.0;
    AcquisitionSpec acq;
    acq.sweep_rate = 0.0;
    acq.num_slices = 160;
    const Acquisition a = acquire_sweep(ph, br, acq, 4);
    const VolumeD truth = ph.volume.cast<double>();
    const VolumeD v0 = scatter_initialize(a.stack, grid, acq.psf());
    const VolumeD raw = nearest_slice_volume(a.stack, grid);
    CHECK(psnr(v0, truth) >= psnr(raw, truth));
}

TEST_CASE("exported images: constant volume is mid-grey, one file per index, monotone ramps")
{
    const fs::path dir = test::temp_dir("export");
    Grid3 g{{8, 8, 8}, {1, 1, 1}, {0, 0, 0}};
    const auto files = export_slice_images(Volume3D(g, 3.0f), Axis::Z, dir / "flat");
    CHECK(files.size() == 8);
    for (const fs::path& f : files) {
        std::ifstream in(f, std::ios::binary);
        std::string magic;
        int w, h, maxv;
        in >> magic >> w >> h >> maxv;
        in.get();
        std::vector<unsigned char> px(w * h);
        in.read(reinterpret_cast<char*>(px.data()), px.size());
        CHECK(magic == "P5");
        for (unsigned char p : px)
            CHECK(p == 128);
    }

    Volume3D ramp(g);
    for (int z = 0; z < 8; ++z)
        for (int y = 0; y < 8; ++y)
            for (int x = 0; x < 8; ++x)
                ramp.at(x, y, z) = static_cast<float>(x + 8 * y + 64 * z);
    const auto rf = export_slice_images(ramp, Axis::Z, dir / "ramp");
    std::ifstream in(rf[3], std::ios::binary);
    std::string magic;
    int w, h, maxv;
    in >> magic >> w >> h >> maxv;
    in.get();
    std::vector<unsigned char> px(w * h);
    in.read(reinterpret_cast<char*>(px.data()), px.size());
    for (int y = 0; y < h; ++y)
        for (int x = 1; x < w; ++x)
            CHECK(px[y * w + x] >= px[y * w + x - 1]);

    const Phantom ph = make_phantom(PhantomSpec::abdominal(centred_grid({20, 16, 12}, 4.0), 1));
    CHECK(export_slice_images(ph.volume, Axis::X, dir / "px").size() == 20);
    CHECK(export_slice_images(ph.volume, Axis::Y, dir / "py").size() == 16);
    CHECK(export_slice_images(ph.volume, Axis::Z, dir / "pz").size() == 12);
}
