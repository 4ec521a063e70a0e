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

// Pipeline configuration and the stages behind the command-line tool.
//
// Every stage writes its outputs plus effective_config.json and provenance.json into one
// directory. Stages read their inputs from paths, so they can be run one at a time or
// chained by run_pipeline.

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "sweep4d/breath_signal.hpp"
#include "sweep4d/phantom.hpp"
#include "sweep4d/sr_recon.hpp"
#include "sweep4d/state_classifier.hpp"

namespace sweep4d {

inline constexpr const char* kVersion = "0.1.0";

struct PhantomConfig {
    std::array<int, 3> dims{96, 96, 120};
    double spacing = 2.5;
    double noise_fraction = 0.02;
};

struct BreathingConfig {
    double period_s = 3.92; // 8 slices at 0.49 s
    double amplitude_mm = 4.0;
    double shell_scale = 0.04;
    Waveform waveform = Waveform::Sinusoid;
    double phase0 = 0.0;
    double period_jitter = 0.0;
};

struct Table1Config {
    int cycles = 5;
    std::vector<std::uint64_t> test_seeds{1, 2, 3, 4, 5};
    std::vector<std::uint64_t> train_seeds{101, 102};
    LabelSource train_labels = LabelSource::GroundTruth; // or pseudo
    std::array<int, 3> dims{64, 64, 48};
    double spacing = 3.0;
    Table1Options options;
};

struct PipelineConfig {
    std::uint64_t seed = 1;
    int num_states = 10;
    std::string experiment = "sweep"; // "sweep" or "table1"
    PhantomConfig phantom;
    BreathingConfig breathing;
    AcquisitionSpec acquisition;
    PseudoLabelConfig signal;
    TrainConfig classifier;
    LabelSource training_labels = LabelSource::Pseudo;  // pseudo or ground_truth
    SrLossConfig recon;
    LabelSource recon_labels = LabelSource::Srnn;        // srnn, pseudo or ground_truth
    std::string recon_grid = "slices";                    // "slices" (default_sr_grid) or "phantom"
    Table1Config table1;

    /// Missing keys keep their defaults. Unknown keys, wrong types and invalid values throw
    /// ConfigError naming the key path.
    static PipelineConfig from_json(const nlohmann::json& j);
    static PipelineConfig load(const std::filesystem::path& path);
    /// Every field, defaults included.
    nlohmann::json to_json() const;
    void validate() const;
};

std::uint64_t fnv1a64(std::string_view bytes);
/// "fnv1a64:" + hex digest of the effective config dump.
std::string config_hash(const PipelineConfig& config);

struct RunOptions {
    bool deterministic = false;
    bool keep_going = false;
    int threads = 0; // 0: runtime default; deterministic forces 1
    std::function<void(const std::string&)> log;
};

/// Applies the thread cap implied by the options.
void apply_threads(const RunOptions& options);

Grid3 phantom_grid(const PipelineConfig& config);
BreathingModel breathing_model(const PipelineConfig& config, const Grid3& grid);
Phantom pipeline_phantom(const PipelineConfig& config);

// Stages. Each writes into `out` and returns a JSON summary of what it did.

/// stack, truth labels, phantom volume, per-state ground-truth volumes.
nlohmann::json stage_phantom(const PipelineConfig& config, const RunOptions& options, const std::filesystem::path& out);
/// pseudo labels, ncc.csv, peaks.
nlohmann::json stage_pseudolabel(const PipelineConfig& config, const RunOptions& options,
                                 const std::filesystem::path& stack, const std::filesystem::path& out);
/// srnn checkpoint and training history.
nlohmann::json stage_train(const PipelineConfig& config, const RunOptions& options, const std::filesystem::path& stack,
                           const std::filesystem::path& labels, const std::filesystem::path& out);
/// srnn labels.
nlohmann::json stage_predict(const PipelineConfig& config, const RunOptions& options,
                             const std::filesystem::path& stack, const std::filesystem::path& checkpoint,
                             const std::filesystem::path& out);
/// state_<k> volumes and manifest.json.
nlohmann::json stage_reconstruct(const PipelineConfig& config, const RunOptions& options,
                                 const std::filesystem::path& stack, const std::filesystem::path& labels,
                                 const std::filesystem::path& out);

struct EvaluateInputs {
    std::vector<std::filesystem::path> predicted; // labelings scored against truth
    std::optional<std::filesystem::path> truth;
    std::optional<std::filesystem::path> stack;     // with recon_dir: per-state fidelity
    std::optional<std::filesystem::path> recon_dir;
};
/// report.json and report.csv.
nlohmann::json stage_evaluate(const PipelineConfig& config, const RunOptions& options, const EvaluateInputs& inputs,
                              const std::filesystem::path& out);

struct Table1Row {
    std::uint64_t seed = 0;
    double peak_accuracy = 0.0;
    double srnn_accuracy = 0.0;
    double peak_adjacent = 0.0;
    double srnn_adjacent = 0.0;
    std::size_t slices = 0;
};

struct Table1Result {
    std::vector<Table1Row> rows;
    TrainResult training;
    double train_seconds = 0.0;
    double total_seconds = 0.0;

    double peak_mean() const;
    double peak_std() const; // sample standard deviation
    double srnn_mean() const;
    double srnn_std() const;
    nlohmann::json to_json(bool include_wall_time) const;
};

/// Trains one SRNN on the training seeds and scores it and peak analysis on each test seed.
Table1Result run_table1(const PipelineConfig& config, const RunOptions& options = {});

/// All stages in order (or the table1 experiment). Returns the process exit code; a failing
/// stage stops the run unless keep_going, in which case stages that depend on it are skipped.
int run_pipeline(const PipelineConfig& config, const RunOptions& options, const std::filesystem::path& out);

/// Mean and sample standard deviation.
std::pair<double, double> mean_std(const std::vector<double>& values);

} // namespace sweep4d
