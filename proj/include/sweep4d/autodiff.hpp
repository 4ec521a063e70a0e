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

// Reverse-mode automatic differentiation over dense double tensors.
//
// Ops take a Tape*; a null tape (or inputs that need no gradient) evaluates without
// recording, which is the inference path. Two-dimensional ops read a tensor as
// shape[0] rows by size/shape[0] columns, row-major.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

namespace sweep4d::ad {

struct Node {
    std::vector<double> value;
    std::vector<double> grad; // empty until something flows into it
    std::vector<int> shape;
    bool requires_grad = false;

    void ensure_grad();
};

class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

    static Tensor zeros(std::vector<int> shape, bool requires_grad = false);
    static Tensor from(std::vector<double> values, std::vector<int> shape, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);

    bool defined() const noexcept { return node_ != nullptr; }
    const std::vector<int>& shape() const { return node_->shape; }
    std::size_t size() const { return node_->value.size(); }
    int rows() const;
    int cols() const;
    bool requires_grad() const { return node_->requires_grad; }

    std::span<double> data() { return node_->value; }
    std::span<const double> data() const { return node_->value; }
    std::span<const double> grad() const { return node_->grad; }
    std::span<double> mutable_grad();
    bool has_grad() const { return !node_->grad.empty(); }
    void zero_grad() { node_->grad.clear(); }
    double item() const;

    const std::shared_ptr<Node>& node() const noexcept { return node_; }

private:
    std::shared_ptr<Node> node_;
};

/// Records operations in execution order, which is a topological order.
class Tape {
public:
    void record(std::vector<std::shared_ptr<Node>> inputs, std::shared_ptr<Node> output,
                std::function<void()> backward);
    /// Seeds d loss = 1 and runs every recorded closure reachable from loss once, newest first.
    void backward(const Tensor& loss);
    void clear();

    std::size_t size() const noexcept { return records_.size(); }
    /// Closures executed by the last backward call.
    std::size_t backward_calls() const noexcept { return backward_calls_; }

private:
    struct Record {
        std::vector<std::shared_ptr<Node>> inputs;
        std::shared_ptr<Node> output;
        std::function<void()> backward;
    };
    std::vector<Record> records_;
    std::size_t backward_calls_ = 0;
};

Tensor matmul(Tape* tape, const Tensor& a, const Tensor& b);
/// Same shape, or b a single row (size == a.cols()) broadcast over the rows of a.
Tensor add(Tape* tape, const Tensor& a, const Tensor& b);
Tensor sub(Tape* tape, const Tensor& a, const Tensor& b);
Tensor mul(Tape* tape, const Tensor& a, const Tensor& b);
Tensor scale(Tape* tape, const Tensor& a, double c);
Tensor sigmoid(Tape* tape, const Tensor& a);
Tensor tanh(Tape* tape, const Tensor& a);
/// alpha has one entry, or one per leading-axis block of x (channels).
Tensor prelu(Tape* tape, const Tensor& x, const Tensor& alpha);
/// Row-wise softmax.
Tensor softmax(Tape* tape, const Tensor& a);
/// Mean over rows of -log softmax(logits)[label].
Tensor softmax_cross_entropy(Tape* tape, const Tensor& logits, std::span<const int> labels);
/// Column-wise concatenation of tensors with equal row counts.
Tensor concat_cols(Tape* tape, std::span<const Tensor> parts);
Tensor slice_cols(Tape* tape, const Tensor& a, int begin, int end);
Tensor slice_rows(Tape* tape, const Tensor& a, int begin, int end);
Tensor sum(Tape* tape, const Tensor& a);
Tensor mean(Tape* tape, const Tensor& a);
Tensor square(Tape* tape, const Tensor& a);
Tensor abs(Tape* tape, const Tensor& a);

/// Valid correlation along z of a (nz, ny, nx) volume with a fixed kernel:
/// out[z] = sum_j kernel[j] * x[z + j], giving nz - len + 1 planes.
Tensor conv1d_z(Tape* tape, const Tensor& x, std::span<const double> kernel);

/// Zero-padded "same" 3D convolution. x is (Cin, nz, ny, nx), w is (Cout, Cin, k, k, k) with odd
/// k, b is (Cout). Output (Cout, nz, ny, nx).
Tensor conv3d(Tape* tape, const Tensor& x, const Tensor& w, const Tensor& b);

/// Scalar node whose value and gradient with respect to x were computed elsewhere.
Tensor external_loss(Tape* tape, const Tensor& x, double value, std::vector<double> gradient);

struct AdamConfig {
    double lr = 0.1;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0; // L2 term weight_decay * theta added to the gradient
};

struct AdamState {
    AdamConfig config;
    long step = 0;
    std::vector<std::vector<double>> m, v;
};

/// One Adam update on raw arrays; `step` is the 1-based step number.
void adam_update(std::span<double> theta, std::span<const double> grad, std::span<double> m, std::span<double> v,
                 long step, const AdamConfig& config);

/// Updates every parameter from its gradient. Throws std::logic_error if a parameter has none.
void adam_step(std::span<Tensor> params, AdamState& state);

/// Global L2 norm of all gradients; rescales them to max_norm when larger. Returns the norm
/// before clipping.
double clip_grad_norm(std::span<Tensor> params, double max_norm);

/// Sidecar `<base>.json` (format_version, kind, shapes, plus `meta`) and `<base>.f32` payload.
void save_parameters(const std::filesystem::path& base, const std::string& kind, std::span<const Tensor> params,
                     const nlohmann::json& meta);
struct LoadedParameters {
    std::vector<Tensor> params;
    nlohmann::json meta;
};
/// Throws DataError on a missing, corrupt or mismatching checkpoint.
LoadedParameters load_parameters(const std::filesystem::path& base, const std::string& kind);

} // namespace sweep4d::ad
