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

#include "sweep4d/sr_recon.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <sstream>

#include "sweep4d/autodiff.hpp"
#include "sweep4d/rng.hpp"
#include "sweep4d/volume_ops.hpp"

namespace sweep4d {

namespace {

kernels::Dims dims_of(const Grid3& g) { return {g.dims[0], g.dims[1], g.dims[2]}; }

double max_value(std::span<const double> v)
{
    double m = 0;
    for (double x : v)
        m = std::max(m, x);
    return m;
}

// Elementwise Adam over a large array, split into fixed chunks.
void parallel_adam(std::span<double> theta, std::span<const double> grad, std::span<double> m, std::span<double> v,
                   long step, const ad::AdamConfig& c)
{
    constexpr std::size_t chunk = 1 << 14;
    const long n_chunks = static_cast<long>((theta.size() + chunk - 1) / chunk);
#pragma omp parallel for schedule(static)
    for (long i = 0; i < n_chunks; ++i) {
        const std::size_t off = static_cast<std::size_t>(i) * chunk;
        const std::size_t n = std::min(chunk, theta.size() - off);
        ad::adam_update(theta.subspan(off, n), grad.subspan(off, n), m.subspan(off, n), v.subspan(off, n), step, c);
    }
}

// Shared bookkeeping of both optimisers: best-so-far, plateau decay and the stopping rule.
class Progress {
public:
    Progress(const SrLossConfig& cfg, double lr) : cfg_(cfg), lr_(lr) {}

    // Returns true when the volume just evaluated is the best so far.
    bool observe(double obj)
    {
        objs_.push_back(obj);
        bool improved = false;
        if (obj < best_) {
            best_ = obj;
            since_ = 0;
            improved = true;
        } else if (++since_ >= cfg_.plateau_iterations) {
            lr_ *= cfg_.plateau_decay;
            since_ = 0;
        }
        const std::size_t it = objs_.size();
        if (cfg_.history_every > 0 && (it - 1) % cfg_.history_every == 0)
            history_.push_back(best_);
        return improved;
    }

    bool converged() const
    {
        const std::size_t w = static_cast<std::size_t>(cfg_.tolerance_window);
        if (objs_.size() <= w)
            return false;
        const double before = objs_[objs_.size() - 1 - w];
        const double now = objs_.back();
        return std::abs(before - now) <= cfg_.tolerance * std::max(std::abs(before), 1e-300);
    }

    double lr() const { return lr_; }
    double best() const { return best_; }
    int iterations() const { return static_cast<int>(objs_.size()); }
    std::vector<double> history() const { return history_; }

private:
    const SrLossConfig& cfg_;
    double lr_;
    double best_ = std::numeric_limits<double>::infinity();
    int since_ = 0;
    std::vector<double> objs_;
    std::vector<double> history_;
};

void finite_or_throw(double obj, int it, const std::vector<double>& best, const Grid3& grid)
{
    if (!std::isfinite(obj))
        throw ReconDivergence("reconstruction diverged at iteration " + std::to_string(it) +
                                  " (objective is not finite)",
                              VolumeD(grid, best));
}

ReconResult run_direct(const ForwardModel& model, const VolumeD& init, const SrLossConfig& cfg, const ReconLog& log)
{
    const Grid3& grid = model.grid();
    std::vector<double> v = init.storage();
    std::vector<double> grad(v.size()), m1(v.size(), 0.0), m2(v.size(), 0.0);
    std::vector<double> best = v;
    double lr = cfg.lr;
    if (!(lr > 0.0)) {
        const double mx = max_value(model.observed());
        lr = 0.05 * (mx > 0.0 ? mx : 1.0);
    }
    Progress prog(cfg, lr);
    ad::AdamConfig adam;
    ReconResult r;
    for (int it = 0; it < cfg.epochs; ++it) {
        const double obj = sr_objective(v, model, cfg, grad);
        finite_or_throw(obj, it, best, grid);
        if (prog.observe(obj))
            best = v;
        if (prog.converged()) {
            r.converged = true;
            break;
        }
        adam.lr = prog.lr();
        parallel_adam(v, grad, m1, m2, it + 1, adam);
        if (log && cfg.history_every > 0 && it % (cfg.history_every * 10) == 0) {
            std::ostringstream s;
            s << "iteration " << it << " objective " << obj << " lr " << adam.lr;
            log(s.str());
        }
    }
    r.iterations = prog.iterations();
    r.loss_history = prog.history();
    r.volume = VolumeD(grid, std::move(best));
    return r;
}

ReconResult run_convnet(const ForwardModel& model, const VolumeD& init, const SrLossConfig& cfg, const ReconLog& log)
{
    const Grid3& grid = model.grid();
    const int nx = grid.dims[0], ny = grid.dims[1], nz = grid.dims[2];
    double s = 0;
    for (double x : init.storage())
        s = std::max(s, std::abs(x));
    if (!(s > 0.0))
        s = 1.0;
    std::vector<double> x0(init.storage());
    for (double& x : x0)
        x /= s;
    const ad::Tensor input = ad::Tensor::from(x0, {1, nz, ny, nx});

    Rng rng(cfg.seed ^ 0xc0417ull);
    const int k = cfg.conv_kernel, c = cfg.conv_channels;
    std::vector<ad::Tensor> weights, biases, alphas;
    for (int l = 0; l < cfg.conv_layers; ++l) {
        const int cin = l == 0 ? 1 : c;
        const int cout = l == cfg.conv_layers - 1 ? 1 : c;
        ad::Tensor w = ad::Tensor::zeros({cout, cin, k, k, k}, true);
        if (l < cfg.conv_layers - 1) {
            const double bound = std::sqrt(6.0 / (cin * k * k * k));
            for (double& x : w.data())
                x = rng.uniform(-bound, bound);
            ad::Tensor a = ad::Tensor::zeros({cout}, true);
            for (double& x : a.data())
                x = 0.25;
            alphas.push_back(a);
        }
        weights.push_back(w);
        biases.push_back(ad::Tensor::zeros({cout}, true));
    }
    std::vector<ad::Tensor> params;
    for (int l = 0; l < cfg.conv_layers; ++l) {
        params.push_back(weights[l]);
        params.push_back(biases[l]);
        if (l < cfg.conv_layers - 1)
            params.push_back(alphas[l]);
    }

    ad::AdamState adam;
    Progress prog(cfg, cfg.conv_lr);
    std::vector<double> v(grid.size()), grad(grid.size());
    std::vector<double> best = init.storage();
    ReconResult r;
    ad::Tape tape;
    for (int it = 0; it < cfg.epochs; ++it) {
        tape.clear();
        for (ad::Tensor& p : params)
            p.zero_grad();
        ad::Tensor h = input;
        for (int l = 0; l < cfg.conv_layers; ++l) {
            h = ad::conv3d(&tape, h, weights[l], biases[l]);
            if (l < cfg.conv_layers - 1)
                h = ad::prelu(&tape, h, alphas[l]);
        }
        for (std::size_t i = 0; i < v.size(); ++i)
            v[i] = s * (x0[i] + h.data()[i]);
        const double obj = sr_objective(v, model, cfg, grad);
        finite_or_throw(obj, it, best, grid);
        if (prog.observe(obj))
            best = v;
        if (prog.converged()) {
            r.converged = true;
            break;
        }
        for (double& g : grad)
            g *= s;
        const ad::Tensor loss = ad::external_loss(&tape, h, obj, grad);
        tape.backward(loss);
        adam.config.lr = prog.lr();
        ad::adam_step(params, adam);
        if (log && cfg.history_every > 0 && it % (cfg.history_every * 10) == 0)
            log("iteration " + std::to_string(it) + " objective " + std::to_string(obj));
    }
    r.iterations = prog.iterations();
    r.loss_history = prog.history();
    r.volume = VolumeD(grid, std::move(best));
    return r;
}

} // namespace

std::string to_string(ReconMode mode) { return mode == ReconMode::Convnet ? "convnet" : "direct"; }

ReconMode recon_mode_from_string(const std::string& text)
{
    if (text == "direct") return ReconMode::Direct;
    if (text == "convnet") return ReconMode::Convnet;
    throw ConfigError("reconstruction mode must be 'direct' or 'convnet' (got '" + text + "')");
}

void SrLossConfig::validate() const
{
    for (double w : tv_weights)
        if (!(w >= 0.0) || !std::isfinite(w))
            throw ConfigError("sr.tv_weights must be non-negative");
    if (epochs < 0)
        throw ConfigError("sr.epochs must be >= 0");
    if (!(lr >= 0.0) || !(tv_eps > 0.0))
        throw ConfigError("sr.lr must be >= 0 and sr.tv_eps > 0");
    if (plateau_iterations < 1 || !(plateau_decay > 0.0 && plateau_decay <= 1.0))
        throw ConfigError("sr plateau schedule is invalid");
    if (tolerance_window < 1 || !(tolerance >= 0.0))
        throw ConfigError("sr stopping rule is invalid");
    if (mode == ReconMode::Convnet &&
        (conv_layers < 1 || conv_channels < 1 || conv_kernel < 1 || conv_kernel % 2 == 0 || !(conv_lr > 0.0)))
        throw ConfigError("sr convnet settings are invalid (layers, channels >= 1, odd kernel, lr > 0)");
}

ForwardModel::ForwardModel(const SliceStack& selected, const Grid3& grid, const PsfSpec& psf)
    : selected_(selected), grid_(grid), psf_(psf)
{
    grid.validate();
    psf.validate();
    if (selected.empty())
        throw DataError("forward model: empty slice selection");
    if (selected.nx() != grid.dims[0] || selected.ny() != grid.dims[1])
        throw DataError("forward model: slice in-plane dims (" + std::to_string(selected.nx()) + "x" +
                        std::to_string(selected.ny()) + ") do not match the grid (" + std::to_string(grid.dims[0]) +
                        "x" + std::to_string(grid.dims[1]) + ")");
    rows_ = psf_rows(selected.z_positions, grid, psf);
    fan_in_ = kernels::PlaneFanIn::build(rows_, grid.dims[2]);
    blur_ = InPlaneBlur(grid.dims[0], grid.dims[1], grid.spacing[0], grid.spacing[1], psf);
    observed_ = stack_buffer(selected);
}

void ForwardModel::simulate(std::span<const double> volume, std::span<double> out) const
{
    if (volume.size() != grid_.size() || out.size() != rows_.size() * plane_size())
        throw DataError("simulate: buffer sizes do not match the forward model");
    kernels::omp::mix_planes(volume, plane_size(), rows_, out);
    if (blur_.identity())
        return;
    const std::size_t plane = plane_size();
    const long n = static_cast<long>(rows_.size());
#pragma omp parallel for schedule(static)
    for (long k = 0; k < n; ++k) {
        std::vector<double> tmp(out.begin() + k * plane, out.begin() + (k + 1) * plane);
        blur_.apply(tmp, out.subspan(k * plane, plane));
    }
}

std::vector<double> ForwardModel::simulate(std::span<const double> volume) const
{
    std::vector<double> out(rows_.size() * plane_size());
    simulate(volume, out);
    return out;
}

void ForwardModel::adjoint(std::span<const double> residual, std::span<double> out) const
{
    if (residual.size() != rows_.size() * plane_size() || out.size() != grid_.size())
        throw DataError("adjoint: residual has " + std::to_string(residual.size()) + " values, expected " +
                        std::to_string(rows_.size() * plane_size()));
    if (blur_.identity()) {
        kernels::omp::mix_planes_transpose(residual, plane_size(), fan_in_, out);
        return;
    }
    const std::size_t plane = plane_size();
    std::vector<double> tmp(residual.size());
    const long n = static_cast<long>(rows_.size());
#pragma omp parallel for schedule(static)
    for (long k = 0; k < n; ++k)
        blur_.apply_transpose(residual.subspan(k * plane, plane), std::span<double>(tmp).subspan(k * plane, plane));
    kernels::omp::mix_planes_transpose(tmp, plane, fan_in_, out);
}

std::vector<double> ForwardModel::adjoint(std::span<const double> residual) const
{
    std::vector<double> out(grid_.size());
    adjoint(residual, out);
    return out;
}

SliceStack simulate_slices(const VolumeD& volume, const ForwardModel& model)
{
    if (!volume.grid().same_shape(model.grid()))
        throw DataError("simulate_slices: volume dims do not match the forward model grid");
    return stack_from_buffer(model.simulate(volume.storage()), model.slices());
}

VolumeD adjoint_slices(const SliceStack& residuals, const ForwardModel& model)
{
    if (residuals.size() != model.num_slices() ||
        static_cast<std::size_t>(residuals.nx()) * residuals.ny() != model.plane_size())
        throw DataError("adjoint_slices: residual dims do not match the selected slices");
    return VolumeD(model.grid(), model.adjoint(stack_buffer(residuals)));
}

double recon_error(std::span<const double> volume, const ForwardModel& model)
{
    const std::vector<double> s = model.simulate(volume);
    const auto r = model.observed();
    const std::size_t plane = model.plane_size();
    std::vector<double> partial(model.num_slices(), 0.0);
    const long n = static_cast<long>(partial.size());
#pragma omp parallel for schedule(static)
    for (long k = 0; k < n; ++k) {
        double acc = 0;
        for (std::size_t i = k * plane; i < (k + 1) * plane; ++i) {
            const double d = r[i] - s[i];
            acc += d * d;
        }
        partial[k] = acc;
    }
    double e = 0;
    for (double p : partial)
        e += p;
    return e;
}

double recon_error(const VolumeD& volume, const ForwardModel& model) { return recon_error(volume.storage(), model); }

double tv_1d(const VolumeD& volume, Axis axis)
{
    return kernels::omp::tv_1d(volume.storage(), dims_of(volume.grid()), static_cast<int>(axis));
}

double sr_loss(const VolumeD& volume, const ForwardModel& model, const SrLossConfig& config)
{
    double loss = recon_error(volume, model);
    for (int a = 0; a < 3; ++a)
        if (config.tv_weights[a] != 0.0)
            loss += config.tv_weights[a] * tv_1d(volume, static_cast<Axis>(a));
    return loss;
}

double sr_objective(std::span<const double> volume, const ForwardModel& model, const SrLossConfig& config,
                    std::span<double> grad)
{
    const std::vector<double> s = model.simulate(volume);
    const auto r = model.observed();
    std::vector<double> resid(s.size());
    const std::size_t plane = model.plane_size();
    std::vector<double> partial(model.num_slices(), 0.0);
    const long n = static_cast<long>(partial.size());
#pragma omp parallel for schedule(static)
    for (long k = 0; k < n; ++k) {
        double acc = 0;
        for (std::size_t i = k * plane; i < (k + 1) * plane; ++i) {
            const double d = s[i] - r[i];
            resid[i] = 2.0 * d;
            acc += d * d;
        }
        partial[k] = acc;
    }
    double obj = 0;
    for (double p : partial)
        obj += p;
    model.adjoint(resid, grad);
    const kernels::Dims dims = dims_of(model.grid());
    for (int a = 0; a < 3; ++a)
        if (config.tv_weights[a] != 0.0)
            obj += config.tv_weights[a] *
                   kernels::omp::tv_smoothed(volume, dims, a, config.tv_eps, config.tv_weights[a], grad);
    return obj;
}

ReconResult reconstruct(const SliceStack& selected, const Grid3& grid, const PsfSpec& psf, const SrLossConfig& config,
                        const ReconLog& log)
{
    config.validate();
    if (selected.size() < 2)
        throw DataError("reconstruction needs at least 2 slices, got " + std::to_string(selected.size()));
    const ForwardModel model(selected, grid, psf);
    const VolumeD init = scatter_initialize(selected, grid, psf);
    ReconResult r = config.mode == ReconMode::Convnet ? run_convnet(model, init, config, log)
                                                      : run_direct(model, init, config, log);
    r.mode = config.mode;
    r.initial_loss = sr_loss(init, model, config);
    r.final_loss = sr_loss(r.volume, model, config);
    if (r.final_loss > r.initial_loss) {
        r.volume = init;
        r.final_loss = r.initial_loss;
    }
    return r;
}

Grid3 default_sr_grid(const SliceStack& stack, const PsfSpec& psf)
{
    if (stack.empty())
        throw DataError("default_sr_grid: empty stack");
    Grid3 g;
    const double dx = stack.slices.front().dx, dy = stack.slices.front().dy;
    g.dims[0] = stack.nx();
    g.dims[1] = stack.ny();
    g.spacing = {dx, dy, dx};
    g.origin[0] = -0.5 * (g.dims[0] - 1) * dx;
    g.origin[1] = -0.5 * (g.dims[1] - 1) * dy;
    const auto [zlo, zhi] = std::minmax_element(stack.z_positions.begin(), stack.z_positions.end());
    const double margin = 2.0 * psf.sigma_z();
    g.origin[2] = *zlo - margin;
    g.dims[2] = static_cast<int>(std::floor((*zhi + margin - g.origin[2]) / dx + 1e-9)) + 1;
    return g;
}

nlohmann::json Recon4D::manifest(bool include_wall_time) const
{
    nlohmann::json j;
    j["num_states"] = num_states;
    j["total_slices"] = total_slices;
    nlohmann::json arr = nlohmann::json::array();
    for (const StateReconstruction& s : states) {
        nlohmann::json e;
        e["state"] = s.state;
        e["status"] = s.status;
        e["slice_indices"] = s.slice_indices;
        e["slice_count"] = s.slice_indices.size();
        e["slice_fraction"] = s.slice_fraction;
        if (s.status == "ok") {
            e["mode"] = to_string(s.result.mode);
            e["initial_loss"] = s.result.initial_loss;
            e["final_loss"] = s.result.final_loss;
            e["iterations"] = s.result.iterations;
            e["converged"] = s.result.converged;
        }
        e["wall_time_s"] = include_wall_time ? nlohmann::json(s.wall_seconds) : nlohmann::json(nullptr);
        arr.push_back(e);
    }
    j["states"] = arr;
    return j;
}

std::size_t Recon4D::succeeded() const
{
    return static_cast<std::size_t>(
        std::count_if(states.begin(), states.end(), [](const StateReconstruction& s) { return s.status == "ok"; }));
}

Recon4D reconstruct_4d(const SliceStack& stack, const RespiratoryLabeling& labeling, const Grid3& grid,
                       const PsfSpec& psf, const SrLossConfig& config, const ReconLog& log)
{
    if (labeling.size() != stack.size())
        throw DataError("labeling covers " + std::to_string(labeling.size()) + " slices, stack has " +
                        std::to_string(stack.size()));
    labeling.validate();
    Recon4D out;
    out.num_states = labeling.num_states;
    out.total_slices = stack.size();
    for (int s = 0; s < labeling.num_states; ++s) {
        StateReconstruction st;
        st.state = s;
        for (std::size_t t = 0; t < labeling.size(); ++t)
            if (labeling.states[t] == s)
                st.slice_indices.push_back(static_cast<int>(t));
        st.slice_fraction = static_cast<double>(st.slice_indices.size()) / static_cast<double>(stack.size());
        if (st.slice_indices.empty()) {
            st.status = "empty";
            if (log)
                log("state " + std::to_string(s) + " has no slices; skipped");
            out.states.push_back(std::move(st));
            continue;
        }
        const auto t0 = std::chrono::steady_clock::now();
        try {
            st.result = reconstruct(stack.subset(st.slice_indices), grid, psf, config, log);
        } catch (const Error& e) {
            st.status = e.what();
            if (log)
                log("state " + std::to_string(s) + " failed: " + e.what());
        }
        st.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        if (log && st.status == "ok")
            log("state " + std::to_string(s) + ": " + std::to_string(st.slice_indices.size()) + " slices, loss " +
                std::to_string(st.result.initial_loss) + " -> " + std::to_string(st.result.final_loss) + " in " +
                std::to_string(st.result.iterations) + " iterations");
        out.states.push_back(std::move(st));
    }
    return out;
}

} // namespace sweep4d
