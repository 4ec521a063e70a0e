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

#include "sweep4d/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "sweep4d/error.hpp"
#include "sweep4d/volume_ops.hpp"

namespace sweep4d {

namespace {

std::vector<double> gaussian_taps(double sigma, int radius)
{
    std::vector<double> w(2 * radius + 1);
    double s = 0;
    for (int i = -radius; i <= radius; ++i)
        s += (w[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma)));
    for (double& x : w)
        x /= s;
    return w;
}

double planes_mean_ssim(std::span<const double> a, std::span<const double> b, int nx, int ny, int planes,
                        const SsimOptions& opt)
{
    if (planes < 1)
        throw DataError("ssim: no planes to compare");
    const double range = ssim_range(a, b);
    const std::size_t plane = static_cast<std::size_t>(nx) * ny;
    std::vector<double> vals(planes);
#pragma omp parallel for schedule(static)
    for (int p = 0; p < planes; ++p)
        vals[p] = ssim_2d(a.subspan(p * plane, plane), b.subspan(p * plane, plane), nx, ny, range, opt);
    double s = 0;
    for (double v : vals)
        s += v;
    return s / planes;
}

std::string opt_str(const std::optional<double>& v)
{
    if (!v)
        return "";
    std::ostringstream s;
    s.precision(10);
    s << *v;
    return s.str();
}

nlohmann::json opt_json(const std::optional<double>& v)
{
    if (!v)
        return nullptr;
    if (std::isinf(*v))
        return *v > 0 ? "inf" : "-inf";
    return *v;
}

} // namespace

double psnr(std::span<const double> a, std::span<const double> b)
{
    if (a.size() != b.size())
        throw DataError("psnr: inputs differ in size (" + std::to_string(a.size()) + " vs " +
                        std::to_string(b.size()) + ")");
    if (a.empty())
        throw DataError("psnr: empty inputs");
    double se = 0;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        se += d * d;
        mx = std::max(mx, b[i]);
    }
    if (se == 0.0)
        return std::numeric_limits<double>::infinity();
    const double mse = se / static_cast<double>(a.size());
    return 10.0 * std::log10(mx * mx / mse);
}

double psnr(const VolumeD& a, const VolumeD& b)
{
    if (!a.grid().same_shape(b.grid()))
        throw DataError("psnr: volume dims differ");
    return psnr(a.storage(), b.storage());
}

double psnr(const Volume3D& a, const Volume3D& b) { return psnr(a.cast<double>(), b.cast<double>()); }

double psnr(const SliceStack& a, const SliceStack& b)
{
    if (a.size() != b.size() || a.nx() != b.nx() || a.ny() != b.ny())
        throw DataError("psnr: stack dims differ");
    return psnr(stack_buffer(a), stack_buffer(b));
}

double ssim_range(std::span<const double> a, std::span<const double> b)
{
    auto range = [](std::span<const double> v) {
        const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
        return std::pair{*lo, *hi};
    };
    const auto [alo, ahi] = range(a);
    const auto [blo, bhi] = range(b);
    double l = std::max(ahi - alo, bhi - blo);
    if (!(l > 0.0))
        l = std::max({std::abs(alo), std::abs(ahi), std::abs(blo), std::abs(bhi)});
    return l > 0.0 ? l : 1.0;
}

double ssim_2d(std::span<const double> a, std::span<const double> b, int nx, int ny, double range,
               const SsimOptions& opt)
{
    const std::size_t n = static_cast<std::size_t>(nx) * ny;
    if (a.size() != n || b.size() != n)
        throw DataError("ssim: image sizes do not match");
    const int r = std::max(0, std::min({opt.radius, (nx - 1) / 2, (ny - 1) / 2}));
    const std::vector<double> w = gaussian_taps(opt.sigma, r);
    const double c1 = (opt.k1 * range) * (opt.k1 * range);
    const double c2 = (opt.k2 * range) * (opt.k2 * range);
    const int ox = nx - 2 * r, oy = ny - 2 * r;

    // Horizontal pass over all rows for the five moments, then vertical on the valid region.
    const std::size_t hn = static_cast<std::size_t>(ny) * ox;
    std::vector<double> ha(hn), hb(hn), haa(hn), hbb(hn), hab(hn);
    for (int y = 0; y < ny; ++y)
        for (int x = 0; x < ox; ++x) {
            double sa = 0, sb = 0, saa = 0, sbb = 0, sab = 0;
            for (int j = 0; j <= 2 * r; ++j) {
                const std::size_t i = static_cast<std::size_t>(y) * nx + x + j;
                const double va = a[i], vb = b[i];
                sa += w[j] * va;
                sb += w[j] * vb;
                saa += w[j] * va * va;
                sbb += w[j] * vb * vb;
                sab += w[j] * va * vb;
            }
            const std::size_t o = static_cast<std::size_t>(y) * ox + x;
            ha[o] = sa;
            hb[o] = sb;
            haa[o] = saa;
            hbb[o] = sbb;
            hab[o] = sab;
        }
    double total = 0;
    for (int y = 0; y < oy; ++y)
        for (int x = 0; x < ox; ++x) {
            double ma = 0, mb = 0, maa = 0, mbb = 0, mab = 0;
            for (int j = 0; j <= 2 * r; ++j) {
                const std::size_t i = static_cast<std::size_t>(y + j) * ox + x;
                ma += w[j] * ha[i];
                mb += w[j] * hb[i];
                maa += w[j] * haa[i];
                mbb += w[j] * hbb[i];
                mab += w[j] * hab[i];
            }
            const double va = maa - ma * ma, vb = mbb - mb * mb, cov = mab - ma * mb;
            total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        }
    return total / (static_cast<double>(ox) * oy);
}

double ssim(const VolumeD& a, const VolumeD& b, const SsimOptions& options)
{
    if (!a.grid().same_shape(b.grid()))
        throw DataError("ssim: volume dims differ");
    return planes_mean_ssim(a.storage(), b.storage(), a.nx(), a.ny(), a.nz(), options);
}

double ssim(const Volume3D& a, const Volume3D& b, const SsimOptions& options)
{
    return ssim(a.cast<double>(), b.cast<double>(), options);
}

double ssim(const SliceStack& a, const SliceStack& b, const SsimOptions& options)
{
    if (a.size() != b.size() || a.nx() != b.nx() || a.ny() != b.ny())
        throw DataError("ssim: stack dims differ");
    return planes_mean_ssim(stack_buffer(a), stack_buffer(b), a.nx(), a.ny(), static_cast<int>(a.size()), options);
}

EvalReport classification_report(const RespiratoryLabeling& predicted, const RespiratoryLabeling& truth)
{
    if (predicted.num_states != truth.num_states)
        throw ConfigError("classification_report: K mismatch (" + std::to_string(predicted.num_states) + " vs " +
                          std::to_string(truth.num_states) + ")");
    if (predicted.size() != truth.size())
        throw DataError("classification_report: label lengths differ (" + std::to_string(predicted.size()) +
                        " vs " + std::to_string(truth.size()) + ")");
    if (truth.size() == 0)
        throw DataError("classification_report: no labels");
    const int k = truth.num_states;
    EvalReport rep;
    rep.confusion.assign(k, std::vector<long>(k, 0));
    long correct = 0, adjacent = 0;
    for (std::size_t t = 0; t < truth.size(); ++t) {
        const int a = truth.states[t], p = predicted.states[t];
        if (a < 0 || a >= k || p < 0 || p >= k)
            throw DataError("classification_report: state outside [0, K)");
        ++rep.confusion[a][p];
        const int d = ((p - a) % k + k) % k;
        correct += d == 0;
        adjacent += d == 0 || d == 1 || d == k - 1;
    }
    const double n = static_cast<double>(truth.size());
    rep.accuracy = correct / n;
    rep.adjacent_accuracy = adjacent / n;
    rep.metadata["predicted_source"] = to_string(predicted.source);
    rep.metadata["truth_source"] = to_string(truth.source);
    rep.metadata["num_states"] = k;
    rep.metadata["num_slices"] = truth.size();
    return rep;
}

nlohmann::json EvalReport::to_json() const
{
    nlohmann::json j;
    j["psnr_db"] = opt_json(psnr);
    j["ssim"] = opt_json(ssim);
    j["accuracy"] = opt_json(accuracy);
    j["adjacent_accuracy"] = opt_json(adjacent_accuracy);
    j["confusion"] = confusion;
    j["metadata"] = metadata;
    return j;
}

std::string EvalReport::csv_header() { return "id,psnr_db,ssim,accuracy,adjacent_accuracy"; }

std::string EvalReport::csv_row(const std::string& id) const
{
    return id + "," + opt_str(psnr) + "," + opt_str(ssim) + "," + opt_str(accuracy) + "," +
           opt_str(adjacent_accuracy);
}

} // namespace sweep4d
