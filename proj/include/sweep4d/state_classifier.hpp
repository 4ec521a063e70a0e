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

// Respiratory state classifier: a bidirectional LSTM over windows of the slice-to-slice
// cosine similarity matrix.
//
// Row t of a W x W window is the similarity profile of slice t against the window and is
// fed as timestep t. The window's label is the state of its last slice.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "sweep4d/autodiff.hpp"
#include "sweep4d/types.hpp"

namespace sweep4d {

struct SimilarityWindow {
    int size = 0;                // W
    std::vector<double> matrix;  // W x W row-major
    int last_slice_index = 0;
    int label = -1;              // -1 when unlabelled

    double at(int a, int b) const { return matrix[static_cast<std::size_t>(a) * size + b]; }
};

/// Mean-subtracted, unit-norm flattened slices (T rows). Zero-variance slices give a zero
/// row and are flagged.
struct UnitSlices {
    std::vector<double> rows;
    std::vector<std::uint8_t> degenerate;
    std::size_t n = 0;
};
UnitSlices unit_slices(const SliceStack& stack);

/// Cosine similarity of two unit slices; two flat slices compare as 1, flat vs. textured as 0.
double slice_similarity(const UnitSlices& u, int a, int b);

/// Windows starting at 0, stride, 2*stride, ... covering [s, s+W). Labels come from
/// labeling->states[s+W-1] when a labeling is given. Throws DataError when T < W.
std::vector<SimilarityWindow> build_windows(const SliceStack& stack, const RespiratoryLabeling* labeling,
                                            int window, int stride);

/// One window per slice: the sequence is mirror-padded with W-1 slices at the start, so
/// window t ends at slice t.
std::vector<SimilarityWindow> inference_windows(const SliceStack& stack, int window);

struct LstmDirection {
    ad::Tensor wx; // in x 4H, gate blocks i, f, o, g
    ad::Tensor wh; // H x 4H
    ad::Tensor b;  // 1 x 4H
};

struct BiLstmModel {
    int input_dim = 20;
    int hidden = 64;
    int layers = 3;
    int num_states = 10;
    // Fixed affine map applied to similarities before the first layer, fitted on the
    // training windows: x -> (x - input_shift) * input_scale.
    double input_shift = 0.0;
    double input_scale = 1.0;
    std::vector<LstmDirection> forward, backward;
    ad::Tensor head_w; // 2H x K
    ad::Tensor head_b; // 1 x K

    /// Uniform(-1/sqrt(H), 1/sqrt(H)) weights, zero head bias.
    static BiLstmModel init(int input_dim, int hidden, int layers, int num_states, std::uint64_t seed);
    /// All zeros.
    static BiLstmModel zeros(int input_dim, int hidden, int layers, int num_states);
    std::vector<ad::Tensor> parameters() const;
    BiLstmModel clone() const;
    void validate() const;
};

/// Logits (B x K) for a batch of windows.
ad::Tensor bilstm_logits(ad::Tape* tape, const BiLstmModel& model, std::span<const SimilarityWindow* const> batch);
/// K logits for one window.
std::vector<double> bilstm_forward(const BiLstmModel& model, const SimilarityWindow& window);

struct TrainConfig {
    double lr = 0.1;
    double weight_decay = 0.01;
    int epochs = 60;
    int batch_size = 32;
    std::uint64_t seed = 1;
    int window = 20;
    int stride = 19;
    int hidden = 64;
    int layers = 3;
    double validation_fraction = 0.1;
    double clip_norm = 0.0;     // 0 disables gradient clipping
    int lr_probe_epochs = 10;   // lr is halved until the loss falls over this many epochs
    int max_lr_halvings = 6;

    void validate() const;
};

struct EpochStats {
    int epoch = 0;
    double train_loss = 0.0;
    double train_accuracy = 0.0;
    double validation_accuracy = 0.0;
};

struct TrainResult {
    BiLstmModel model;               // best-validation checkpoint
    std::vector<EpochStats> history; // entry 0 is the untrained model
    std::vector<double> lr_sweep;    // learning rates tried, the last one used
    int best_epoch = 0;
    double best_validation_accuracy = 0.0;
    std::size_t train_windows = 0, validation_windows = 0;
};

using TrainLog = std::function<void(const std::string&)>;

/// Cross-entropy training with Adam (L2 weight decay). The split holds out a seeded 10% of
/// window start indices. Throws DataError when the labels cover a single class.
TrainResult train_srnn(std::span<const SimilarityWindow> windows, int num_states, const TrainConfig& config,
                       const TrainLog& log = {});

/// Argmax state per slice (lowest index on ties), source "srnn".
RespiratoryLabeling predict_states(const BiLstmModel& model, const SliceStack& stack);

void save_model(const BiLstmModel& model, const std::filesystem::path& base, const nlohmann::json& meta = {});
BiLstmModel load_model(const std::filesystem::path& base);

} // namespace sweep4d
