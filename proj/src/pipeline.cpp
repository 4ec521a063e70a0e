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

#include "sweep4d/pipeline.hpp"

#include <chrono>
#include <cmath>
#include <ctime>
#include <iomanip>
#include <limits>
#include <map>
#include <set>
#include <sstream>

#include "sweep4d/error.hpp"
#include "sweep4d/io.hpp"
#include "sweep4d/kernels.hpp"
#include "sweep4d/metrics.hpp"

namespace sweep4d {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Reads one JSON object, remembering which keys were consumed so leftovers can be
// reported with their full path.
class Section {
public:
    Section(const json* j, std::string path) : j_(j), path_(std::move(path)) {}

    template <typename T>
    void read(const char* key, T& out)
    {
        seen_.insert(key);
        if (!j_)
            return;
        const auto it = j_->find(key);
        if (it == j_->end())
            return;
        convert(*it, key, out);
    }

    /// Enum-like fields stored as strings.
    template <typename T, typename Parse>
    void read_enum(const char* key, T& out, Parse parse)
    {
        std::string text;
        bool present = j_ && j_->contains(key);
        read(key, text);
        if (!present)
            return;
        try {
            out = parse(text);
        } catch (const Error& e) {
            throw ConfigError("config key '" + full(key) + "': " + e.what());
        }
    }

    Section child(const char* key)
    {
        seen_.insert(key);
        if (!j_ || !j_->contains(key))
            return Section(nullptr, full(key));
        const json& c = j_->at(key);
        if (!c.is_object())
            throw ConfigError("config key '" + full(key) + "' must be an object");
        return Section(&c, full(key));
    }

    void finish() const
    {
        if (!j_)
            return;
        for (const auto& item : j_->items())
            if (!seen_.count(item.key()))
                throw ConfigError("unknown config key '" + full(item.key()) + "'");
    }

    std::string full(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

private:
    [[noreturn]] void type_error(const char* key, const char* expected) const
    {
        throw ConfigError("config key '" + full(key) + "' must be " + expected);
    }

    void convert(const json& v, const char* key, double& out) const
    {
        if (v.is_null()) {
            out = std::numeric_limits<double>::quiet_NaN();
            return;
        }
        if (!v.is_number())
            type_error(key, "a number");
        out = v.get<double>();
    }
    void convert(const json& v, const char* key, int& out) const
    {
        if (!v.is_number_integer())
            type_error(key, "an integer");
        out = v.get<int>();
    }
    void convert(const json& v, const char* key, std::uint64_t& out) const
    {
        if (!v.is_number_unsigned())
            type_error(key, "a non-negative integer");
        out = v.get<std::uint64_t>();
    }
    void convert(const json& v, const char* key, bool& out) const
    {
        if (!v.is_boolean())
            type_error(key, "true or false");
        out = v.get<bool>();
    }
    void convert(const json& v, const char* key, std::string& out) const
    {
        if (!v.is_string())
            type_error(key, "a string");
        out = v.get<std::string>();
    }
    template <typename T, std::size_t N>
    void convert(const json& v, const char* key, std::array<T, N>& out) const
    {
        if (!v.is_array() || v.size() != N)
            type_error(key, ("an array of " + std::to_string(N) + " numbers").c_str());
        for (std::size_t i = 0; i < N; ++i)
            convert(v[i], key, out[i]);
    }
    template <typename T>
    void convert(const json& v, const char* key, std::vector<T>& out) const
    {
        if (!v.is_array())
            type_error(key, "an array");
        out.assign(v.size(), T{});
        for (std::size_t i = 0; i < v.size(); ++i)
            convert(v[i], key, out[i]);
    }

    const json* j_;
    std::string path_;
    std::set<std::string> seen_;
};

LabelSource parse_source(const std::string& text) { return label_source_from_string(text); }

json nan_as_null(double v) { return std::isnan(v) ? json(nullptr) : json(v); }

void write_json(const fs::path& path, const json& j) { io::write_text(path, j.dump(2) + "\n"); }

json read_json(const fs::path& path)
{
    try {
        return json::parse(io::read_text(path));
    } catch (const json::exception& e) {
        throw DataError("cannot parse " + path.string() + ": " + e.what());
    }
}

void log_line(const RunOptions& o, const std::string& s)
{
    if (o.log)
        o.log(s);
}

json provenance(const PipelineConfig& config, const RunOptions& options, const std::string& stage)
{
    json p;
    p["tool"] = "sweep4d";
    p["version"] = kVersion;
    p["stage"] = stage;
    p["config_hash"] = config_hash(config);
    p["seed"] = config.seed;
    p["deterministic"] = options.deterministic;
    p["threads"] = options.deterministic ? 1 : kernels::max_threads();
    if (!options.deterministic) {
        const std::time_t now = std::time(nullptr);
        std::ostringstream s;
        s << std::put_time(std::gmtime(&now), "%Y-%m-%dT%H:%M:%SZ");
        p["created_utc"] = s.str();
    }
    return p;
}

void write_meta(const PipelineConfig& config, const RunOptions& options, const fs::path& out, const std::string& stage)
{
    write_json(out / "effective_config.json", config.to_json());
    write_json(out / "provenance.json", provenance(config, options, stage));
}

PsfSpec stack_psf(const PipelineConfig& config, const SliceStack& stack)
{
    PsfSpec p;
    p.fwhm_z = stack.slice_thickness;
    p.fwhm_xy = config.acquisition.in_plane_fwhm;
    p.validate();
    return p;
}

void check_k(const PipelineConfig& config, int k, const std::string& what)
{
    if (k != config.num_states)
        throw ConfigError(what + " has K = " + std::to_string(k) + " but the config sets num_states = " +
                          std::to_string(config.num_states));
}

PseudoLabelConfig signal_config(const PipelineConfig& config)
{
    PseudoLabelConfig s = config.signal;
    s.num_states = config.num_states;
    return s;
}

TrainConfig train_config(const PipelineConfig& config)
{
    TrainConfig t = config.classifier;
    t.seed = config.seed;
    return t;
}

double seconds_since(std::chrono::steady_clock::time_point t0)
{
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// A null z_start centres the sweep on the phantom.
AcquisitionSpec sweep_spec(const PipelineConfig& config, const Grid3& grid)
{
    AcquisitionSpec a = config.acquisition;
    if (std::isnan(a.z_start) && a.sweep_rate > 0.0) {
        const double mid = grid.coord(2, 0.5 * (grid.dims[2] - 1));
        a.z_start = mid - 0.5 * a.sweep_rate * a.slice_time * (a.num_slices - 1);
    }
    return a;
}

Grid3 table1_grid(const PipelineConfig& config) { return centred_grid(config.table1.dims, config.table1.spacing); }

} // namespace

PipelineConfig PipelineConfig::from_json(const json& j)
{
    if (!j.is_object())
        throw ConfigError("config must be a JSON object");
    PipelineConfig c;
    Section root(&j, "");
    root.read("seed", c.seed);
    root.read("num_states", c.num_states);
    root.read("experiment", c.experiment);

    Section ph = root.child("phantom");
    ph.read("dims", c.phantom.dims);
    ph.read("spacing", c.phantom.spacing);
    ph.read("noise_fraction", c.phantom.noise_fraction);
    ph.finish();

    Section br = root.child("breathing");
    br.read("period_s", c.breathing.period_s);
    br.read("amplitude_mm", c.breathing.amplitude_mm);
    br.read("shell_scale", c.breathing.shell_scale);
    br.read_enum("waveform", c.breathing.waveform, waveform_from_string);
    br.read("phase0", c.breathing.phase0);
    br.read("period_jitter", c.breathing.period_jitter);
    br.finish();

    Section acq = root.child("acquisition");
    acq.read("slice_time", c.acquisition.slice_time);
    acq.read("sweep_rate", c.acquisition.sweep_rate);
    acq.read("slice_thickness", c.acquisition.slice_thickness);
    acq.read("in_plane_fwhm", c.acquisition.in_plane_fwhm);
    acq.read("num_slices", c.acquisition.num_slices);
    acq.read("z_start", c.acquisition.z_start);
    acq.finish();

    Section sig = root.child("signal");
    sig.read("first_pass_sigma", c.signal.first_pass_sigma);
    sig.read("reference_sigma", c.signal.reference_sigma);
    sig.read("min_separation", c.signal.min_separation);
    sig.read("prominence_fraction", c.signal.prominence_fraction);
    sig.read("presmooth", c.signal.presmooth);
    sig.read("parity_offset", c.signal.parity_offset);
    sig.read("inhale_direction", c.signal.inhale_direction);
    sig.finish();

    Section cl = root.child("classifier");
    cl.read("lr", c.classifier.lr);
    cl.read("weight_decay", c.classifier.weight_decay);
    cl.read("epochs", c.classifier.epochs);
    cl.read("batch_size", c.classifier.batch_size);
    cl.read("window", c.classifier.window);
    cl.read("stride", c.classifier.stride);
    cl.read("hidden", c.classifier.hidden);
    cl.read("layers", c.classifier.layers);
    cl.read("validation_fraction", c.classifier.validation_fraction);
    cl.read("clip_norm", c.classifier.clip_norm);
    cl.read("lr_probe_epochs", c.classifier.lr_probe_epochs);
    cl.read("max_lr_halvings", c.classifier.max_lr_halvings);
    cl.read_enum("training_labels", c.training_labels, parse_source);
    cl.finish();

    Section rc = root.child("recon");
    rc.read("tv_weights", c.recon.tv_weights);
    rc.read("epochs", c.recon.epochs);
    rc.read("lr", c.recon.lr);
    rc.read_enum("mode", c.recon.mode, recon_mode_from_string);
    rc.read("tv_eps", c.recon.tv_eps);
    rc.read("plateau_iterations", c.recon.plateau_iterations);
    rc.read("plateau_decay", c.recon.plateau_decay);
    rc.read("tolerance", c.recon.tolerance);
    rc.read("tolerance_window", c.recon.tolerance_window);
    rc.read("history_every", c.recon.history_every);
    rc.read("conv_channels", c.recon.conv_channels);
    rc.read("conv_layers", c.recon.conv_layers);
    rc.read("conv_kernel", c.recon.conv_kernel);
    rc.read("conv_lr", c.recon.conv_lr);
    rc.read_enum("labels", c.recon_labels, parse_source);
    rc.read("grid", c.recon_grid);
    rc.finish();

    Section t1 = root.child("table1");
    t1.read("cycles", c.table1.cycles);
    t1.read("test_seeds", c.table1.test_seeds);
    t1.read("train_seeds", c.table1.train_seeds);
    t1.read_enum("train_labels", c.table1.train_labels, parse_source);
    t1.read("dims", c.table1.dims);
    t1.read("spacing", c.table1.spacing);
    t1.read("slices_per_group", c.table1.options.slices_per_group);
    t1.read("noise_fraction", c.table1.options.noise_fraction);
    t1.read("amplitude_mm", c.table1.options.amplitude_mm);
    t1.read("slice_thickness", c.table1.options.slice_thickness);
    t1.read("sweep_span_mm", c.table1.options.sweep_span_mm);
    t1.finish();

    root.finish();
    c.recon.seed = c.seed;
    c.classifier.seed = c.seed;
    c.validate();
    return c;
}

PipelineConfig PipelineConfig::load(const fs::path& path)
{
    std::string text;
    try {
        text = io::read_text(path);
    } catch (const DataError&) {
        throw ConfigError("cannot read config file " + path.string());
    }
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError("config file " + path.string() + " is not valid JSON: " + e.what());
    }
    return from_json(j);
}

json PipelineConfig::to_json() const
{
    json j;
    j["seed"] = seed;
    j["num_states"] = num_states;
    j["experiment"] = experiment;
    j["phantom"] = {{"dims", phantom.dims}, {"spacing", phantom.spacing}, {"noise_fraction", phantom.noise_fraction}};
    j["breathing"] = {{"period_s", breathing.period_s},
                      {"amplitude_mm", breathing.amplitude_mm},
                      {"shell_scale", breathing.shell_scale},
                      {"waveform", sweep4d::to_string(breathing.waveform)},
                      {"phase0", breathing.phase0},
                      {"period_jitter", breathing.period_jitter}};
    j["acquisition"] = {{"slice_time", acquisition.slice_time},
                        {"sweep_rate", acquisition.sweep_rate},
                        {"slice_thickness", acquisition.slice_thickness},
                        {"in_plane_fwhm", acquisition.in_plane_fwhm},
                        {"num_slices", acquisition.num_slices},
                        {"z_start", nan_as_null(acquisition.z_start)}};
    j["signal"] = {{"first_pass_sigma", signal.first_pass_sigma},
                   {"reference_sigma", signal.reference_sigma},
                   {"min_separation", signal.min_separation},
                   {"prominence_fraction", signal.prominence_fraction},
                   {"presmooth", signal.presmooth},
                   {"parity_offset", signal.parity_offset},
                   {"inhale_direction", signal.inhale_direction}};
    j["classifier"] = {{"lr", classifier.lr},
                       {"weight_decay", classifier.weight_decay},
                       {"epochs", classifier.epochs},
                       {"batch_size", classifier.batch_size},
                       {"window", classifier.window},
                       {"stride", classifier.stride},
                       {"hidden", classifier.hidden},
                       {"layers", classifier.layers},
                       {"validation_fraction", classifier.validation_fraction},
                       {"clip_norm", classifier.clip_norm},
                       {"lr_probe_epochs", classifier.lr_probe_epochs},
                       {"max_lr_halvings", classifier.max_lr_halvings},
                       {"training_labels", sweep4d::to_string(training_labels)}};
    j["recon"] = {{"tv_weights", recon.tv_weights},
                  {"epochs", recon.epochs},
                  {"lr", recon.lr},
                  {"mode", sweep4d::to_string(recon.mode)},
                  {"tv_eps", recon.tv_eps},
                  {"plateau_iterations", recon.plateau_iterations},
                  {"plateau_decay", recon.plateau_decay},
                  {"tolerance", recon.tolerance},
                  {"tolerance_window", recon.tolerance_window},
                  {"history_every", recon.history_every},
                  {"conv_channels", recon.conv_channels},
                  {"conv_layers", recon.conv_layers},
                  {"conv_kernel", recon.conv_kernel},
                  {"conv_lr", recon.conv_lr},
                  {"labels", sweep4d::to_string(recon_labels)},
                  {"grid", recon_grid}};
    j["table1"] = {{"cycles", table1.cycles},
                   {"test_seeds", table1.test_seeds},
                   {"train_seeds", table1.train_seeds},
                   {"train_labels", sweep4d::to_string(table1.train_labels)},
                   {"dims", table1.dims},
                   {"spacing", table1.spacing},
                   {"slices_per_group", table1.options.slices_per_group},
                   {"noise_fraction", table1.options.noise_fraction},
                   {"amplitude_mm", table1.options.amplitude_mm},
                   {"slice_thickness", table1.options.slice_thickness},
                   {"sweep_span_mm", table1.options.sweep_span_mm}};
    return j;
}

void PipelineConfig::validate() const
{
    auto scoped = [](const std::string& key, auto&& fn) {
        try {
            fn();
        } catch (const ConfigError& e) {
            throw ConfigError("config section '" + key + "': " + e.what());
        }
    };
    if (num_states < 2)
        throw ConfigError("config key 'num_states' must be >= 2");
    if (experiment != "sweep" && experiment != "table1")
        throw ConfigError("config key 'experiment' must be \"sweep\" or \"table1\" (got \"" + experiment + "\")");
    for (int d : phantom.dims)
        if (d < 4)
            throw ConfigError("config key 'phantom.dims' entries must be >= 4");
    if (!(phantom.spacing > 0.0))
        throw ConfigError("config key 'phantom.spacing' must be > 0");
    if (!(phantom.noise_fraction >= 0.0))
        throw ConfigError("config key 'phantom.noise_fraction' must be >= 0");
    scoped("acquisition", [&] { acquisition.validate(); });
    scoped("breathing", [&] {
        BreathingModel m;
        m.period_s = breathing.period_s;
        m.amplitude_mm = breathing.amplitude_mm;
        m.shell_scale = breathing.shell_scale;
        m.validate(acquisition.slice_time);
    });
    if (!(signal.first_pass_sigma > 0.0) || !(signal.reference_sigma >= 0.0) || signal.min_separation < 0 ||
        !(signal.prominence_fraction >= 0.0) || signal.parity_offset < 0 ||
        (signal.inhale_direction != 1 && signal.inhale_direction != -1))
        throw ConfigError("config section 'signal': sigmas, separation and prominence must be non-negative "
                          "(first_pass_sigma > 0) and inhale_direction +-1");
    scoped("classifier", [&] { classifier.validate(); });
    if (training_labels == LabelSource::Srnn)
        throw ConfigError("config key 'classifier.training_labels' must be \"pseudo\" or \"ground_truth\"");
    scoped("recon", [&] { recon.validate(); });
    if (recon_grid != "slices" && recon_grid != "phantom")
        throw ConfigError("config key 'recon.grid' must be \"slices\" or \"phantom\"");
    if (table1.cycles < 1 || table1.options.slices_per_group < 1)
        throw ConfigError("config section 'table1': cycles and slices_per_group must be >= 1");
    if (table1.test_seeds.empty() || table1.train_seeds.empty())
        throw ConfigError("config section 'table1': test_seeds and train_seeds must be non-empty");
    if (table1.train_labels == LabelSource::Srnn)
        throw ConfigError("config key 'table1.train_labels' must be \"pseudo\" or \"ground_truth\"");
    for (int d : table1.dims)
        if (d < 4)
            throw ConfigError("config key 'table1.dims' entries must be >= 4");
    if (!(table1.spacing > 0.0))
        throw ConfigError("config key 'table1.spacing' must be > 0");
}

std::uint64_t fnv1a64(std::string_view bytes)
{
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

std::string config_hash(const PipelineConfig& config)
{
    std::ostringstream s;
    s << "fnv1a64:" << std::hex << std::setw(16) << std::setfill('0') << fnv1a64(config.to_json().dump());
    return s.str();
}

void apply_threads(const RunOptions& options)
{
    if (options.deterministic)
        kernels::set_num_threads(1);
    else if (options.threads > 0)
        kernels::set_num_threads(options.threads);
}

Grid3 phantom_grid(const PipelineConfig& config) { return centred_grid(config.phantom.dims, config.phantom.spacing); }

BreathingModel breathing_model(const PipelineConfig& config, const Grid3& grid)
{
    BreathingModel m = BreathingModel::abdominal(grid);
    m.period_s = config.breathing.period_s;
    m.amplitude_mm = config.breathing.amplitude_mm;
    m.shell_scale = config.breathing.shell_scale;
    m.waveform = config.breathing.waveform;
    m.phase0 = config.breathing.phase0;
    m.period_jitter = config.breathing.period_jitter;
    m.seed = config.seed;
    return m;
}

Phantom pipeline_phantom(const PipelineConfig& config)
{
    PhantomSpec spec = PhantomSpec::abdominal(phantom_grid(config), config.seed);
    spec.noise_fraction = config.phantom.noise_fraction;
    return make_phantom(spec);
}

json stage_phantom(const PipelineConfig& config, const RunOptions& options, const fs::path& out)
{
    apply_threads(options);
    const Phantom ph = pipeline_phantom(config);
    const BreathingModel br = breathing_model(config, ph.spec.grid);
    const Acquisition acq = acquire_sweep(ph, br, sweep_spec(config, ph.spec.grid), config.num_states);
    io::write_stack(acq.stack, out / "stack");
    io::write_labels(acq.truth, out / "truth");
    io::write_volume(ph.volume, out / "phantom");
    const auto states = state_volumes(ph, br, config.num_states);
    for (std::size_t s = 0; s < states.size(); ++s)
        io::write_volume(states[s].cast<float>(), out / ("truth_state_" + std::to_string(s)));
    json detail;
    detail["phase"] = acq.truth.phase;
    detail["amplitude"] = acq.amplitude;
    write_json(out / "acquisition.json", detail);
    write_meta(config, options, out, "phantom");
    log_line(options, "phantom: " + std::to_string(acq.stack.size()) + " slices of " +
                          std::to_string(acq.stack.nx()) + "x" + std::to_string(acq.stack.ny()));
    return {{"slices", acq.stack.size()}};
}

json stage_pseudolabel(const PipelineConfig& config, const RunOptions& options, const fs::path& stack_path,
                       const fs::path& out)
{
    apply_threads(options);
    const SliceStack stack = io::read_stack(stack_path);
    const PseudoLabelResult r = pseudo_label_stack(stack, signal_config(config));
    io::write_labels(r.labels, out / "pseudo");
    io::write_series_csv(r.series.values, out / "ncc.csv");
    json detail;
    detail["peaks"] = r.peaks.indices;
    detail["min_separation"] = r.peaks.min_separation;
    detail["breathing_period_slices"] = r.breathing_period_slices;
    detail["reference_sigma"] = r.reference_sigma;
    detail["first_peak_phase"] = r.first_peak_phase;
    write_json(out / "pseudolabel.json", detail);
    write_meta(config, options, out, "pseudolabel");
    log_line(options, "pseudolabel: " + std::to_string(r.peaks.indices.size()) + " peaks, period " +
                          std::to_string(r.breathing_period_slices) + " slices");
    return detail;
}

json stage_train(const PipelineConfig& config, const RunOptions& options, const fs::path& stack_path,
                 const fs::path& labels_path, const fs::path& out)
{
    apply_threads(options);
    const SliceStack stack = io::read_stack(stack_path);
    const RespiratoryLabeling labels = io::read_labels(labels_path);
    check_k(config, labels.num_states, "labels " + labels_path.string());
    if (labels.size() != stack.size())
        throw DataError("labels cover " + std::to_string(labels.size()) + " slices, stack has " +
                        std::to_string(stack.size()));
    const TrainConfig tc = train_config(config);
    const auto windows = build_windows(stack, &labels, tc.window, tc.stride);
    const TrainResult r = train_srnn(windows, config.num_states, tc, [&](const std::string& s) {
        log_line(options, "train: " + s);
    });
    save_model(r.model, out / "srnn", {{"label_source", to_string(labels.source)}});
    json hist = json::array();
    for (const EpochStats& e : r.history)
        hist.push_back({{"epoch", e.epoch},
                        {"train_loss", e.train_loss},
                        {"train_accuracy", e.train_accuracy},
                        {"validation_accuracy", e.validation_accuracy}});
    json detail;
    detail["history"] = hist;
    detail["lr_sweep"] = r.lr_sweep;
    detail["best_epoch"] = r.best_epoch;
    detail["best_validation_accuracy"] = r.best_validation_accuracy;
    detail["train_windows"] = r.train_windows;
    detail["validation_windows"] = r.validation_windows;
    write_json(out / "training.json", detail);
    write_meta(config, options, out, "train");
    detail.erase("history");
    return detail;
}

json stage_predict(const PipelineConfig& config, const RunOptions& options, const fs::path& stack_path,
                   const fs::path& checkpoint, const fs::path& out)
{
    apply_threads(options);
    const BiLstmModel model = load_model(io::base_path(checkpoint));
    check_k(config, model.num_states, "checkpoint " + checkpoint.string());
    const SliceStack stack = io::read_stack(stack_path);
    const auto t0 = std::chrono::steady_clock::now();
    const RespiratoryLabeling labels = predict_states(model, stack);
    const double dt = seconds_since(t0);
    io::write_labels(labels, out / "srnn");
    write_meta(config, options, out, "predict");
    log_line(options, "predict: " + std::to_string(labels.size()) + " slices in " + std::to_string(dt) + " s");
    return {{"slices", labels.size()}};
}

json stage_reconstruct(const PipelineConfig& config, const RunOptions& options, const fs::path& stack_path,
                       const fs::path& labels_path, const fs::path& out)
{
    apply_threads(options);
    const SliceStack stack = io::read_stack(stack_path);
    const RespiratoryLabeling labels = io::read_labels(labels_path);
    check_k(config, labels.num_states, "labels " + labels_path.string());
    const PsfSpec psf = stack_psf(config, stack);
    const Grid3 grid = config.recon_grid == "phantom" ? phantom_grid(config) : default_sr_grid(stack, psf);
    const Recon4D rec = reconstruct_4d(stack, labels, grid, psf, config.recon, [&](const std::string& s) {
        log_line(options, "reconstruct: " + s);
    });
    for (const StateReconstruction& s : rec.states)
        if (s.status == "ok")
            io::write_volume(s.result.volume.cast<float>(), out / ("state_" + std::to_string(s.state)));
    json manifest = rec.manifest(!options.deterministic);
    manifest["grid"] = {{"dims", grid.dims}, {"spacing", grid.spacing}, {"origin", grid.origin}};
    manifest["label_source"] = to_string(labels.source);
    write_json(out / "manifest.json", manifest);
    write_meta(config, options, out, "reconstruct");
    std::size_t failed = 0;
    std::string first_error;
    for (const StateReconstruction& s : rec.states)
        if (s.status != "ok" && s.status != "empty" && failed++ == 0)
            first_error = "state " + std::to_string(s.state) + ": " + s.status;
    if (failed > 0)
        throw NumericError(std::to_string(failed) + " state reconstruction(s) failed; " + first_error);
    return {{"succeeded", rec.succeeded()}, {"states", rec.num_states}};
}

json stage_evaluate(const PipelineConfig& config, const RunOptions& options, const EvaluateInputs& in,
                    const fs::path& out)
{
    apply_threads(options);
    json report;
    std::vector<std::pair<std::string, EvalReport>> rows;
    if (!in.predicted.empty()) {
        if (!in.truth)
            throw ConfigError("evaluate: --truth is required to score labelings");
        const RespiratoryLabeling truth = io::read_labels(*in.truth);
        json cls = json::object();
        for (const fs::path& p : in.predicted) {
            const RespiratoryLabeling pred = io::read_labels(p);
            EvalReport r = classification_report(pred, truth);
            std::string id = to_string(pred.source);
            while (cls.contains(id))
                id += "_";
            cls[id] = r.to_json();
            rows.emplace_back(id, r);
        }
        report["classification"] = cls;
    }
    if (in.recon_dir) {
        if (!in.stack)
            throw ConfigError("evaluate: --stack is required to score reconstructions");
        const SliceStack stack = io::read_stack(*in.stack);
        const PsfSpec psf = stack_psf(config, stack);
        const json manifest = read_json(*in.recon_dir / "manifest.json");
        json states = json::array();
        for (const json& s : manifest.at("states")) {
            if (s.at("status").get<std::string>() != "ok")
                continue;
            const int k = s.at("state").get<int>();
            const auto idx = s.at("slice_indices").get<std::vector<int>>();
            const SliceStack selected = stack.subset(idx);
            const VolumeD vol = io::read_volume(*in.recon_dir / ("state_" + std::to_string(k))).cast<double>();
            const ForwardModel model(selected, vol.grid(), psf);
            const SliceStack sim = simulate_slices(vol, model);
            EvalReport r;
            r.psnr = psnr(sim, selected);
            r.ssim = ssim(sim, selected);
            r.metadata["state"] = k;
            r.metadata["slices"] = idx.size();
            r.metadata["slice_fraction"] = s.at("slice_fraction");
            states.push_back(r.to_json());
            rows.emplace_back("state_" + std::to_string(k), r);
        }
        report["reconstruction"] = states;
    }
    if (rows.empty())
        throw ConfigError("evaluate: nothing to evaluate (give labelings and/or a reconstruction directory)");
    std::string csv = EvalReport::csv_header() + "\n";
    for (const auto& [id, r] : rows)
        csv += r.csv_row(id) + "\n";
    write_json(out / "report.json", report);
    io::write_text(out / "report.csv", csv);
    write_meta(config, options, out, "evaluate");
    return report;
}

std::pair<double, double> mean_std(const std::vector<double>& v)
{
    if (v.empty())
        return {0.0, 0.0};
    double m = 0;
    for (double x : v)
        m += x;
    m /= static_cast<double>(v.size());
    if (v.size() < 2)
        return {m, 0.0};
    double ss = 0;
    for (double x : v)
        ss += (x - m) * (x - m);
    return {m, std::sqrt(ss / static_cast<double>(v.size() - 1))};
}

namespace {

std::vector<double> column(const std::vector<Table1Row>& rows, double Table1Row::*field)
{
    std::vector<double> v;
    for (const Table1Row& r : rows)
        v.push_back(r.*field);
    return v;
}

} // namespace

double Table1Result::peak_mean() const { return mean_std(column(rows, &Table1Row::peak_accuracy)).first; }
double Table1Result::peak_std() const { return mean_std(column(rows, &Table1Row::peak_accuracy)).second; }
double Table1Result::srnn_mean() const { return mean_std(column(rows, &Table1Row::srnn_accuracy)).first; }
double Table1Result::srnn_std() const { return mean_std(column(rows, &Table1Row::srnn_accuracy)).second; }

json Table1Result::to_json(bool include_wall_time) const
{
    json j;
    json arr = json::array();
    for (const Table1Row& r : rows)
        arr.push_back({{"seed", r.seed},
                       {"slices", r.slices},
                       {"peak_accuracy", r.peak_accuracy},
                       {"srnn_accuracy", r.srnn_accuracy},
                       {"peak_adjacent_accuracy", r.peak_adjacent},
                       {"srnn_adjacent_accuracy", r.srnn_adjacent}});
    j["rows"] = arr;
    j["peak_accuracy"] = {{"mean", peak_mean()}, {"std", peak_std()}};
    j["srnn_accuracy"] = {{"mean", srnn_mean()}, {"std", srnn_std()}};
    j["lr_sweep"] = training.lr_sweep;
    j["best_epoch"] = training.best_epoch;
    j["best_validation_accuracy"] = training.best_validation_accuracy;
    j["train_windows"] = training.train_windows;
    j["validation_windows"] = training.validation_windows;
    j["train_seconds"] = include_wall_time ? json(train_seconds) : json(nullptr);
    j["total_seconds"] = include_wall_time ? json(total_seconds) : json(nullptr);
    return j;
}

Table1Result run_table1(const PipelineConfig& config, const RunOptions& options)
{
    apply_threads(options);
    const auto t0 = std::chrono::steady_clock::now();
    const int k = config.num_states;
    Table1Options opt = config.table1.options;
    opt.grid = table1_grid(config);
    const TrainConfig tc = train_config(config);
    const PseudoLabelConfig sc = signal_config(config);

    std::vector<SimilarityWindow> windows;
    for (std::uint64_t seed : config.table1.train_seeds) {
        const Table1Dataset d = make_table1_dataset(k, config.table1.cycles, seed, opt);
        const RespiratoryLabeling labels =
            config.table1.train_labels == LabelSource::GroundTruth ? d.truth : pseudo_label_stack(d.stack, sc).labels;
        auto w = build_windows(d.stack, &labels, tc.window, tc.stride);
        windows.insert(windows.end(), std::make_move_iterator(w.begin()), std::make_move_iterator(w.end()));
    }
    Table1Result res;
    const auto t1 = std::chrono::steady_clock::now();
    res.training = train_srnn(windows, k, tc, [&](const std::string& s) { log_line(options, "table1 train: " + s); });
    res.train_seconds = seconds_since(t1);

    for (std::uint64_t seed : config.table1.test_seeds) {
        const Table1Dataset d = make_table1_dataset(k, config.table1.cycles, seed, opt);
        const EvalReport pa = classification_report(pseudo_label_stack(d.stack, sc).labels, d.truth);
        const EvalReport sr = classification_report(predict_states(res.training.model, d.stack), d.truth);
        Table1Row row;
        row.seed = seed;
        row.slices = d.stack.size();
        row.peak_accuracy = *pa.accuracy;
        row.peak_adjacent = *pa.adjacent_accuracy;
        row.srnn_accuracy = *sr.accuracy;
        row.srnn_adjacent = *sr.adjacent_accuracy;
        res.rows.push_back(row);
        std::ostringstream s;
        s << "table1 seed " << seed << ": peak analysis " << row.peak_accuracy << ", srnn " << row.srnn_accuracy;
        log_line(options, s.str());
    }
    res.total_seconds = seconds_since(t0);
    return res;
}

namespace {

struct StageOutcome {
    std::string status = "ok"; // ok, failed, skipped
    std::string error;
    int exit_code = 0;
    json summary;
};

int run_table1_pipeline(const PipelineConfig& config, const RunOptions& options, const fs::path& out)
{
    const Table1Result r = run_table1(config, options);
    write_json(out / "table1.json", r.to_json(!options.deterministic));
    std::ostringstream csv;
    csv.precision(10);
    csv << "seed,peak_accuracy,srnn_accuracy,peak_adjacent_accuracy,srnn_adjacent_accuracy\n";
    for (const Table1Row& row : r.rows)
        csv << row.seed << "," << row.peak_accuracy << "," << row.srnn_accuracy << "," << row.peak_adjacent << ","
            << row.srnn_adjacent << "\n";
    io::write_text(out / "table1.csv", csv.str());
    write_meta(config, options, out, "pipeline");
    std::ostringstream s;
    s << "table1: peak analysis " << r.peak_mean() << " +- " << r.peak_std() << ", srnn " << r.srnn_mean() << " +- "
      << r.srnn_std();
    log_line(options, s.str());
    return 0;
}

} // namespace

int run_pipeline(const PipelineConfig& config, const RunOptions& options, const fs::path& out)
{
    fs::create_directories(out);
    if (config.experiment == "table1")
        return run_table1_pipeline(config, options, out);

    const fs::path d_ph = out / "phantom", d_pl = out / "pseudolabel", d_tr = out / "train", d_pr = out / "predict",
                   d_rc = out / "reconstruct", d_ev = out / "evaluate";
    const fs::path stack = d_ph / "stack", truth = d_ph / "truth", pseudo = d_pl / "pseudo", ckpt = d_tr / "srnn",
                   srnn = d_pr / "srnn";
    const fs::path train_labels = config.training_labels == LabelSource::GroundTruth ? truth : pseudo;
    const fs::path recon_labels = config.recon_labels == LabelSource::GroundTruth ? truth
                                  : config.recon_labels == LabelSource::Pseudo   ? pseudo
                                                                                 : srnn;

    struct Stage {
        std::string name;
        std::vector<std::string> needs;
        std::function<json()> run;
    };
    const std::string pl_stage = "pseudolabel", ph_stage = "phantom";
    auto producer = [&](const fs::path& labels) {
        return labels == truth ? ph_stage : labels == pseudo ? pl_stage : std::string("predict");
    };
    const std::vector<Stage> stages = {
        {"phantom", {}, [&] { return stage_phantom(config, options, d_ph); }},
        {"pseudolabel", {"phantom"}, [&] { return stage_pseudolabel(config, options, stack, d_pl); }},
        {"train", {"phantom", producer(train_labels)},
         [&] { return stage_train(config, options, stack, train_labels, d_tr); }},
        {"predict", {"phantom", "train"}, [&] { return stage_predict(config, options, stack, ckpt, d_pr); }},
        {"reconstruct", {"phantom", producer(recon_labels)},
         [&] { return stage_reconstruct(config, options, stack, recon_labels, d_rc); }},
        {"evaluate", {"phantom"},
         [&] {
             EvaluateInputs in;
             in.truth = truth;
             in.stack = stack;
             if (fs::exists(io::base_path(pseudo).string() + ".labels.json"))
                 in.predicted.push_back(pseudo);
             if (fs::exists(io::base_path(srnn).string() + ".labels.json"))
                 in.predicted.push_back(srnn);
             if (fs::exists(d_rc / "manifest.json"))
                 in.recon_dir = d_rc;
             return stage_evaluate(config, options, in, d_ev);
         }},
    };

    std::map<std::string, StageOutcome> outcome;
    int exit_code = 0;
    bool stop = false;
    json summary;
    summary["stages"] = json::array();
    for (const Stage& st : stages) {
        StageOutcome o;
        if (stop) {
            o.status = "skipped";
            o.error = "an earlier stage failed";
        } else {
            for (const std::string& dep : st.needs)
                if (outcome[dep].status != "ok") {
                    o.status = "skipped";
                    o.error = "needs " + dep;
                }
        }
        if (o.status == "ok") {
            // Stale outputs from an earlier run must not stand in for this one.
            fs::remove_all(out / st.name);
            log_line(options, "stage " + st.name);
            try {
                o.summary = st.run();
            } catch (const Error& e) {
                o = {"failed", e.what(), e.exit_code(), {}};
            } catch (const std::exception& e) {
                o = {"failed", e.what(), 1, {}};
            }
            if (o.status == "failed") {
                log_line(options, "stage " + st.name + " failed: " + o.error);
                if (exit_code == 0)
                    exit_code = o.exit_code;
                stop = !options.keep_going;
            }
        }
        json e = {{"stage", st.name}, {"status", o.status}};
        if (!o.error.empty())
            e["error"] = o.error;
        if (o.status == "ok")
            e["summary"] = o.summary;
        summary["stages"].push_back(e);
        outcome[st.name] = o;
    }
    summary["exit_code"] = exit_code;
    write_json(out / "pipeline.json", summary);
    write_meta(config, options, out, "pipeline");
    return exit_code;
}

} // namespace sweep4d
