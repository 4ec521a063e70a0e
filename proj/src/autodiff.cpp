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

#include "sweep4d/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include <Eigen/Core>

#include "sweep4d/error.hpp"
#include "sweep4d/io.hpp"

namespace sweep4d::ad {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapC = Eigen::Map<const RowMat>;
using Map = Eigen::Map<RowMat>;

std::size_t shape_size(const std::vector<int>& shape)
{
    std::size_t n = 1;
    for (int d : shape) {
        if (d < 0)
            throw std::invalid_argument("negative tensor dimension");
        n *= static_cast<std::size_t>(d);
    }
    return n;
}

std::string shape_str(const std::vector<int>& s)
{
    std::string out = "(";
    for (std::size_t i = 0; i < s.size(); ++i)
        out += (i ? "," : "") + std::to_string(s[i]);
    return out + ")";
}

[[noreturn]] void shape_error(const char* op, const Tensor& a, const Tensor& b)
{
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));
}

bool tracks(Tape* tape, std::initializer_list<const Tensor*> inputs)
{
    if (!tape)
        return false;
    for (const Tensor* t : inputs)
        if (t->requires_grad())
            return true;
    return false;
}

Tensor make_output(std::vector<int> shape, std::vector<double> values, const char* op)
{
    for (double v : values)
        if (!std::isfinite(v))
            throw NumericError(std::string("non-finite value produced by ") + op);
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->value = std::move(values);
    return Tensor(std::move(n));
}

// Records when tracking; returns the output unchanged.
Tensor finish(Tape* tape, bool track, std::vector<Tensor> inputs, Tensor out, std::function<void()> backward)
{
    if (!track)
        return out;
    out.node()->requires_grad = true;
    std::vector<std::shared_ptr<Node>> in;
    for (const Tensor& t : inputs)
        in.push_back(t.node());
    tape->record(std::move(in), out.node(), std::move(backward));
    return out;
}

// Grad buffer of an input if it wants one, else nullptr.
double* grad_of(const std::shared_ptr<Node>& n)
{
    if (!n->requires_grad)
        return nullptr;
    n->ensure_grad();
    return n->grad.data();
}

template <typename Fwd, typename Deriv>
Tensor unary(Tape* tape, const Tensor& a, const char* op, Fwd f, Deriv df)
{
    std::vector<double> out(a.size());
    const auto x = a.data();
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = f(x[i]);
    Tensor y = make_output(a.shape(), std::move(out), op);
    const bool track = tracks(tape, {&a});
    auto an = a.node();
    auto yn = y.node();
    return finish(tape, track, {a}, y, [an, yn, df] {
        double* ga = grad_of(an);
        if (!ga)
            return;
        for (std::size_t i = 0; i < yn->value.size(); ++i)
            ga[i] += yn->grad[i] * df(an->value[i], yn->value[i]);
    });
}

} // namespace

void Node::ensure_grad()
{
    if (grad.empty())
        grad.assign(value.size(), 0.0);
}

Tensor Tensor::zeros(std::vector<int> shape, bool requires_grad)
{
    auto n = std::make_shared<Node>();
    n->value.assign(shape_size(shape), 0.0);
    n->shape = std::move(shape);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
}

Tensor Tensor::from(std::vector<double> values, std::vector<int> shape, bool requires_grad)
{
    if (values.size() != shape_size(shape))
        throw std::invalid_argument("Tensor::from: " + std::to_string(values.size()) + " values for shape " +
                                    shape_str(shape));
    auto n = std::make_shared<Node>();
    n->value = std::move(values);
    n->shape = std::move(shape);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
}

Tensor Tensor::scalar(double value, bool requires_grad) { return from({value}, {1}, requires_grad); }

int Tensor::rows() const { return node_->shape.empty() ? 1 : node_->shape[0]; }

int Tensor::cols() const
{
    const int r = rows();
    return r == 0 ? 0 : static_cast<int>(size() / static_cast<std::size_t>(r));
}

std::span<double> Tensor::mutable_grad()
{
    node_->ensure_grad();
    return node_->grad;
}

double Tensor::item() const
{
    if (size() != 1)
        throw std::invalid_argument("item() on a tensor of shape " + shape_str(shape()));
    return node_->value[0];
}

void Tape::record(std::vector<std::shared_ptr<Node>> inputs, std::shared_ptr<Node> output,
                  std::function<void()> backward)
{
    records_.push_back({std::move(inputs), std::move(output), std::move(backward)});
}

void Tape::backward(const Tensor& loss)
{
    if (!loss.defined() || loss.size() != 1)
        throw std::invalid_argument("backward: loss must be a scalar");
    std::ptrdiff_t start = -1;
    for (std::ptrdiff_t i = static_cast<std::ptrdiff_t>(records_.size()) - 1; i >= 0; --i)
        if (records_[i].output == loss.node()) {
            start = i;
            break;
        }
    if (start < 0)
        throw std::invalid_argument("backward: loss is not connected to any recorded parameter");
    for (auto& r : records_)
        if (r.output != loss.node())
            r.output->grad.clear();
    loss.node()->grad.assign(1, 1.0);
    backward_calls_ = 0;
    for (std::ptrdiff_t i = start; i >= 0; --i) {
        Record& r = records_[i];
        if (r.output->grad.empty())
            continue;
        r.backward();
        ++backward_calls_;
    }
}

void Tape::clear()
{
    records_.clear();
    backward_calls_ = 0;
}

Tensor matmul(Tape* tape, const Tensor& a, const Tensor& b)
{
    const int m = a.rows(), k = a.cols(), n = b.cols();
    if (b.rows() != k)
        shape_error("matmul", a, b);
    std::vector<double> out(static_cast<std::size_t>(m) * n);
    Map(out.data(), m, n).noalias() = MapC(a.data().data(), m, k) * MapC(b.data().data(), k, n);
    Tensor y = make_output({m, n}, std::move(out), "matmul");
    auto an = a.node(), bn = b.node(), yn = y.node();
    return finish(tape, tracks(tape, {&a, &b}), {a, b}, y, [an, bn, yn, m, k, n] {
        MapC gy(yn->grad.data(), m, n);
        if (double* ga = grad_of(an))
            Map(ga, m, k).noalias() += gy * MapC(bn->value.data(), k, n).transpose();
        if (double* gb = grad_of(bn))
            Map(gb, k, n).noalias() += MapC(an->value.data(), m, k).transpose() * gy;
    });
}

Tensor add(Tape* tape, const Tensor& a, const Tensor& b)
{
    const bool same = a.shape() == b.shape();
    const bool row = !same && b.rows() == 1 && b.size() == static_cast<std::size_t>(a.cols());
    if (!same && !row)
        shape_error("add", a, b);
    const std::size_t n = a.size(), c = b.size();
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i)
        out[i] = a.data()[i] + b.data()[same ? i : i % c];
    Tensor y = make_output(a.shape(), std::move(out), "add");
    auto an = a.node(), bn = b.node(), yn = y.node();
    return finish(tape, tracks(tape, {&a, &b}), {a, b}, y, [an, bn, yn, same, n, c] {
        if (double* ga = grad_of(an))
            for (std::size_t i = 0; i < n; ++i)
                ga[i] += yn->grad[i];
        if (double* gb = grad_of(bn))
            for (std::size_t i = 0; i < n; ++i)
                gb[same ? i : i % c] += yn->grad[i];
    });
}

Tensor sub(Tape* tape, const Tensor& a, const Tensor& b)
{
    if (a.shape() != b.shape())
        shape_error("sub", a, b);
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = a.data()[i] - b.data()[i];
    Tensor y = make_output(a.shape(), std::move(out), "sub");
    auto an = a.node(), bn = b.node(), yn = y.node();
    return finish(tape, tracks(tape, {&a, &b}), {a, b}, y, [an, bn, yn] {
        if (double* ga = grad_of(an))
            for (std::size_t i = 0; i < yn->grad.size(); ++i)
                ga[i] += yn->grad[i];
        if (double* gb = grad_of(bn))
            for (std::size_t i = 0; i < yn->grad.size(); ++i)
                gb[i] -= yn->grad[i];
    });
}

Tensor mul(Tape* tape, const Tensor& a, const Tensor& b)
{
    if (a.shape() != b.shape())
        shape_error("mul", a, b);
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = a.data()[i] * b.data()[i];
    Tensor y = make_output(a.shape(), std::move(out), "mul");
    auto an = a.node(), bn = b.node(), yn = y.node();
    return finish(tape, tracks(tape, {&a, &b}), {a, b}, y, [an, bn, yn] {
        double* ga = grad_of(an);
        double* gb = grad_of(bn);
        for (std::size_t i = 0; i < yn->grad.size(); ++i) {
            if (ga)
                ga[i] += yn->grad[i] * bn->value[i];
            if (gb)
                gb[i] += yn->grad[i] * an->value[i];
        }
    });
}

Tensor scale(Tape* tape, const Tensor& a, double c)
{
    return unary(tape, a, "scale", [c](double x) { return c * x; }, [c](double, double) { return c; });
}

Tensor sigmoid(Tape* tape, const Tensor& a)
{
    return unary(
        tape, a, "sigmoid",
        [](double x) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); },
        [](double, double y) { return y * (1.0 - y); });
}

Tensor tanh(Tape* tape, const Tensor& a)
{
    return unary(tape, a, "tanh", [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Tensor square(Tape* tape, const Tensor& a)
{
    return unary(tape, a, "square", [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Tensor abs(Tape* tape, const Tensor& a)
{
    return unary(
        tape, a, "abs", [](double x) { return std::abs(x); },
        [](double x, double) { return x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0); });
}

Tensor prelu(Tape* tape, const Tensor& x, const Tensor& alpha)
{
    const std::size_t channels = alpha.size();
    if (channels == 0 || (channels > 1 && static_cast<std::size_t>(x.rows()) != channels))
        shape_error("prelu", x, alpha);
    const std::size_t n = x.size();
    const std::size_t block = channels == 1 ? n : n / channels;
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double v = x.data()[i];
        out[i] = v > 0 ? v : alpha.data()[channels == 1 ? 0 : i / block] * v;
    }
    Tensor y = make_output(x.shape(), std::move(out), "prelu");
    auto xn = x.node(), an = alpha.node(), yn = y.node();
    return finish(tape, tracks(tape, {&x, &alpha}), {x, alpha}, y, [xn, an, yn, channels, block, n] {
        double* gx = grad_of(xn);
        double* ga = grad_of(an);
        for (std::size_t i = 0; i < n; ++i) {
            const double v = xn->value[i];
            const std::size_t c = channels == 1 ? 0 : i / block;
            if (gx)
                gx[i] += yn->grad[i] * (v > 0 ? 1.0 : an->value[c]);
            if (ga && v <= 0)
                ga[c] += yn->grad[i] * v;
        }
    });
}

Tensor softmax(Tape* tape, const Tensor& a)
{
    const int m = a.rows(), k = a.cols();
    std::vector<double> out(a.size());
    for (int r = 0; r < m; ++r) {
        const double* x = a.data().data() + static_cast<std::size_t>(r) * k;
        double* y = out.data() + static_cast<std::size_t>(r) * k;
        const double mx = *std::max_element(x, x + k);
        double s = 0;
        for (int j = 0; j < k; ++j)
            s += (y[j] = std::exp(x[j] - mx));
        for (int j = 0; j < k; ++j)
            y[j] /= s;
    }
    Tensor y = make_output(a.shape(), std::move(out), "softmax");
    auto an = a.node(), yn = y.node();
    return finish(tape, tracks(tape, {&a}), {a}, y, [an, yn, m, k] {
        double* ga = grad_of(an);
        for (int r = 0; r < m; ++r) {
            const double* p = yn->value.data() + static_cast<std::size_t>(r) * k;
            const double* g = yn->grad.data() + static_cast<std::size_t>(r) * k;
            double dot = 0;
            for (int j = 0; j < k; ++j)
                dot += g[j] * p[j];
            for (int j = 0; j < k; ++j)
                ga[static_cast<std::size_t>(r) * k + j] += p[j] * (g[j] - dot);
        }
    });
}

Tensor softmax_cross_entropy(Tape* tape, const Tensor& logits, std::span<const int> labels)
{
    const int m = logits.rows(), k = logits.cols();
    if (labels.size() != static_cast<std::size_t>(m))
        throw std::invalid_argument("softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                                    std::to_string(m) + " rows");
    auto probs = std::make_shared<std::vector<double>>(logits.size());
    std::vector<int> lab(labels.begin(), labels.end());
    double loss = 0;
    for (int r = 0; r < m; ++r) {
        if (lab[r] < 0 || lab[r] >= k)
            throw std::invalid_argument("softmax_cross_entropy: label out of range");
        const double* x = logits.data().data() + static_cast<std::size_t>(r) * k;
        double* p = probs->data() + static_cast<std::size_t>(r) * k;
        const double mx = *std::max_element(x, x + k);
        double s = 0;
        for (int j = 0; j < k; ++j)
            s += (p[j] = std::exp(x[j] - mx));
        for (int j = 0; j < k; ++j)
            p[j] /= s;
        loss -= x[lab[r]] - mx - std::log(s);
    }
    Tensor y = make_output({1}, {loss / m}, "softmax_cross_entropy");
    auto ln = logits.node(), yn = y.node();
    return finish(tape, tracks(tape, {&logits}), {logits}, y, [ln, yn, probs, lab, m, k] {
        double* g = grad_of(ln);
        const double scale = yn->grad[0] / m;
        for (int r = 0; r < m; ++r)
            for (int j = 0; j < k; ++j) {
                const std::size_t i = static_cast<std::size_t>(r) * k + j;
                g[i] += scale * ((*probs)[i] - (j == lab[r] ? 1.0 : 0.0));
            }
    });
}

Tensor concat_cols(Tape* tape, std::span<const Tensor> parts)
{
    if (parts.empty())
        throw std::invalid_argument("concat_cols: no inputs");
    const int m = parts[0].rows();
    std::vector<int> widths;
    int total = 0;
    bool track = false;
    for (const Tensor& p : parts) {
        if (p.rows() != m)
            shape_error("concat_cols", parts[0], p);
        widths.push_back(p.cols());
        total += p.cols();
        track = track || (tape && p.requires_grad());
    }
    std::vector<double> out(static_cast<std::size_t>(m) * total);
    for (int r = 0; r < m; ++r) {
        int off = 0;
        for (std::size_t q = 0; q < parts.size(); ++q) {
            std::copy_n(parts[q].data().data() + static_cast<std::size_t>(r) * widths[q], widths[q],
                        out.data() + static_cast<std::size_t>(r) * total + off);
            off += widths[q];
        }
    }
    Tensor y = make_output({m, total}, std::move(out), "concat_cols");
    std::vector<std::shared_ptr<Node>> nodes;
    for (const Tensor& p : parts)
        nodes.push_back(p.node());
    auto yn = y.node();
    return finish(tape, track, std::vector<Tensor>(parts.begin(), parts.end()), y, [nodes, yn, widths, m, total] {
        int off = 0;
        for (std::size_t q = 0; q < nodes.size(); ++q) {
            if (double* g = grad_of(nodes[q]))
                for (int r = 0; r < m; ++r)
                    for (int j = 0; j < widths[q]; ++j)
                        g[static_cast<std::size_t>(r) * widths[q] + j] +=
                            yn->grad[static_cast<std::size_t>(r) * total + off + j];
            off += widths[q];
        }
    });
}

Tensor slice_cols(Tape* tape, const Tensor& a, int begin, int end)
{
    const int m = a.rows(), k = a.cols();
    if (begin < 0 || end > k || begin >= end)
        throw std::invalid_argument("slice_cols: range [" + std::to_string(begin) + "," + std::to_string(end) +
                                    ") outside " + std::to_string(k) + " columns");
    const int w = end - begin;
    std::vector<double> out(static_cast<std::size_t>(m) * w);
    for (int r = 0; r < m; ++r)
        std::copy_n(a.data().data() + static_cast<std::size_t>(r) * k + begin, w,
                    out.data() + static_cast<std::size_t>(r) * w);
    Tensor y = make_output({m, w}, std::move(out), "slice_cols");
    auto an = a.node(), yn = y.node();
    return finish(tape, tracks(tape, {&a}), {a}, y, [an, yn, m, k, w, begin] {
        double* g = grad_of(an);
        for (int r = 0; r < m; ++r)
            for (int j = 0; j < w; ++j)
                g[static_cast<std::size_t>(r) * k + begin + j] += yn->grad[static_cast<std::size_t>(r) * w + j];
    });
}

Tensor slice_rows(Tape* tape, const Tensor& a, int begin, int end)
{
    const int m = a.rows();
    if (begin < 0 || end > m || begin >= end)
        throw std::invalid_argument("slice_rows: range outside tensor");
    const std::size_t k = static_cast<std::size_t>(a.cols());
    std::vector<double> out(a.data().begin() + static_cast<std::ptrdiff_t>(begin * k),
                            a.data().begin() + static_cast<std::ptrdiff_t>(end * k));
    std::vector<int> shape = a.shape();
    shape[0] = end - begin;
    Tensor y = make_output(shape, std::move(out), "slice_rows");
    auto an = a.node(), yn = y.node();
    return finish(tape, tracks(tape, {&a}), {a}, y, [an, yn, begin, k] {
        double* g = grad_of(an) + begin * k;
        for (std::size_t i = 0; i < yn->grad.size(); ++i)
            g[i] += yn->grad[i];
    });
}

Tensor sum(Tape* tape, const Tensor& a)
{
    double s = 0;
    for (double v : a.data())
        s += v;
    Tensor y = make_output({1}, {s}, "sum");
    auto an = a.node(), yn = y.node();
    return finish(tape, tracks(tape, {&a}), {a}, y, [an, yn] {
        double* g = grad_of(an);
        for (std::size_t i = 0; i < an->value.size(); ++i)
            g[i] += yn->grad[0];
    });
}

Tensor mean(Tape* tape, const Tensor& a)
{
    if (a.size() == 0)
        throw std::invalid_argument("mean of an empty tensor");
    return scale(tape, sum(tape, a), 1.0 / static_cast<double>(a.size()));
}

Tensor conv1d_z(Tape* tape, const Tensor& x, std::span<const double> kernel)
{
    const auto& s = x.shape();
    if (s.size() != 3)
        throw std::invalid_argument("conv1d_z: expected a (nz, ny, nx) tensor, got " + shape_str(s));
    const int nz = s[0], len = static_cast<int>(kernel.size());
    if (len < 1 || len > nz)
        throw std::invalid_argument("conv1d_z: kernel longer than the z extent");
    const std::size_t plane = static_cast<std::size_t>(s[1]) * s[2];
    const int oz = nz - len + 1;
    std::vector<double> out(static_cast<std::size_t>(oz) * plane, 0.0);
    for (int z = 0; z < oz; ++z)
        for (int j = 0; j < len; ++j) {
            const double w = kernel[j];
            const double* src = x.data().data() + (z + j) * plane;
            double* dst = out.data() + z * plane;
            for (std::size_t i = 0; i < plane; ++i)
                dst[i] += w * src[i];
        }
    Tensor y = make_output({oz, s[1], s[2]}, std::move(out), "conv1d_z");
    auto xn = x.node(), yn = y.node();
    std::vector<double> k(kernel.begin(), kernel.end());
    return finish(tape, tracks(tape, {&x}), {x}, y, [xn, yn, k, oz, plane] {
        double* g = grad_of(xn);
        for (int z = 0; z < oz; ++z)
            for (std::size_t j = 0; j < k.size(); ++j) {
                const double* src = yn->grad.data() + z * plane;
                double* dst = g + (z + j) * plane;
                for (std::size_t i = 0; i < plane; ++i)
                    dst[i] += k[j] * src[i];
            }
    });
}

namespace {

struct ConvGeom {
    int cin, cout, nz, ny, nx, k, r;
    std::size_t vol() const { return static_cast<std::size_t>(nz) * ny * nx; }
};

// dst[z,y,x] += w * src[z+dz, y+dy, x+dx] over the in-range part.
void shifted_axpy(const ConvGeom& g, double w, const double* src, double* dst, int dz, int dy, int dx)
{
    const int z0 = std::max(0, -dz), z1 = std::min(g.nz, g.nz - dz);
    const int y0 = std::max(0, -dy), y1 = std::min(g.ny, g.ny - dy);
    const int x0 = std::max(0, -dx), x1 = std::min(g.nx, g.nx - dx);
    for (int z = z0; z < z1; ++z)
        for (int y = y0; y < y1; ++y) {
            const double* s = src + (static_cast<std::size_t>(z + dz) * g.ny + (y + dy)) * g.nx + dx;
            double* d = dst + (static_cast<std::size_t>(z) * g.ny + y) * g.nx;
            for (int x = x0; x < x1; ++x)
                d[x] += w * s[x];
        }
}

double shifted_dot(const ConvGeom& g, const double* a, const double* b, int dz, int dy, int dx)
{
    const int z0 = std::max(0, -dz), z1 = std::min(g.nz, g.nz - dz);
    const int y0 = std::max(0, -dy), y1 = std::min(g.ny, g.ny - dy);
    const int x0 = std::max(0, -dx), x1 = std::min(g.nx, g.nx - dx);
    double acc = 0;
    for (int z = z0; z < z1; ++z)
        for (int y = y0; y < y1; ++y) {
            const double* s = b + (static_cast<std::size_t>(z + dz) * g.ny + (y + dy)) * g.nx + dx;
            const double* d = a + (static_cast<std::size_t>(z) * g.ny + y) * g.nx;
            for (int x = x0; x < x1; ++x)
                acc += d[x] * s[x];
        }
    return acc;
}

} // namespace

Tensor conv3d(Tape* tape, const Tensor& x, const Tensor& w, const Tensor& b)
{
    const auto& xs = x.shape();
    const auto& ws = w.shape();
    if (xs.size() != 4 || ws.size() != 5 || ws[1] != xs[0] || ws[2] != ws[3] || ws[3] != ws[4] || ws[2] % 2 == 0 ||
        b.size() != static_cast<std::size_t>(ws[0]))
        shape_error("conv3d", x, w);
    const ConvGeom g{xs[0], ws[0], xs[1], xs[2], xs[3], ws[2], ws[2] / 2};
    const std::size_t vol = g.vol();
    const int k3 = g.k * g.k * g.k;
    std::vector<double> out(static_cast<std::size_t>(g.cout) * vol);
#pragma omp parallel for schedule(static)
    for (int co = 0; co < g.cout; ++co) {
        double* dst = out.data() + co * vol;
        std::fill(dst, dst + vol, b.data()[co]);
        for (int ci = 0; ci < g.cin; ++ci)
            for (int t = 0; t < k3; ++t) {
                const int dz = t / (g.k * g.k) - g.r, dy = (t / g.k) % g.k - g.r, dx = t % g.k - g.r;
                const double wt = w.data()[(static_cast<std::size_t>(co) * g.cin + ci) * k3 + t];
                shifted_axpy(g, wt, x.data().data() + ci * vol, dst, dz, dy, dx);
            }
    }
    Tensor y = make_output({g.cout, g.nz, g.ny, g.nx}, std::move(out), "conv3d");
    auto xn = x.node(), wn = w.node(), bn = b.node(), yn = y.node();
    return finish(tape, tracks(tape, {&x, &w, &b}), {x, w, b}, y, [xn, wn, bn, yn, g, vol, k3] {
        const double* gy = yn->grad.data();
        if (double* gb = grad_of(bn))
            for (int co = 0; co < g.cout; ++co)
                for (std::size_t i = 0; i < vol; ++i)
                    gb[co] += gy[co * vol + i];
        if (double* gw = grad_of(wn)) {
#pragma omp parallel for schedule(static)
            for (int pair = 0; pair < g.cout * g.cin; ++pair) {
                const int co = pair / g.cin, ci = pair % g.cin;
                for (int t = 0; t < k3; ++t) {
                    const int dz = t / (g.k * g.k) - g.r, dy = (t / g.k) % g.k - g.r, dx = t % g.k - g.r;
                    gw[static_cast<std::size_t>(pair) * k3 + t] +=
                        shifted_dot(g, gy + co * vol, xn->value.data() + ci * vol, dz, dy, dx);
                }
            }
        }
        if (double* gx = grad_of(xn)) {
#pragma omp parallel for schedule(static)
            for (int ci = 0; ci < g.cin; ++ci)
                for (int co = 0; co < g.cout; ++co)
                    for (int t = 0; t < k3; ++t) {
                        const int dz = t / (g.k * g.k) - g.r, dy = (t / g.k) % g.k - g.r, dx = t % g.k - g.r;
                        const double wt = wn->value[(static_cast<std::size_t>(co) * g.cin + ci) * k3 + t];
                        shifted_axpy(g, wt, gy + co * vol, gx + ci * vol, -dz, -dy, -dx);
                    }
        }
    });
}

Tensor external_loss(Tape* tape, const Tensor& x, double value, std::vector<double> gradient)
{
    if (gradient.size() != x.size())
        throw std::invalid_argument("external_loss: gradient length mismatch");
    Tensor y = make_output({1}, {value}, "external_loss");
    auto xn = x.node(), yn = y.node();
    auto gr = std::make_shared<std::vector<double>>(std::move(gradient));
    return finish(tape, tracks(tape, {&x}), {x}, y, [xn, yn, gr] {
        double* g = grad_of(xn);
        for (std::size_t i = 0; i < gr->size(); ++i)
            g[i] += yn->grad[0] * (*gr)[i];
    });
}

void adam_update(std::span<double> theta, std::span<const double> grad, std::span<double> m, std::span<double> v,
                 long step, const AdamConfig& c)
{
    const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(step));
    const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(step));
    for (std::size_t i = 0; i < theta.size(); ++i) {
        const double g = grad[i] + c.weight_decay * theta[i];
        m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g;
        v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g * g;
        const double mh = bc1 > 0.0 ? m[i] / bc1 : m[i];
        const double vh = bc2 > 0.0 ? v[i] / bc2 : v[i];
        theta[i] -= c.lr * mh / (std::sqrt(vh) + c.eps);
    }
}

void adam_step(std::span<Tensor> params, AdamState& state)
{
    if (params.empty())
        throw std::logic_error("adam_step: no parameters");
    if (state.m.empty()) {
        for (const Tensor& p : params) {
            state.m.emplace_back(p.size(), 0.0);
            state.v.emplace_back(p.size(), 0.0);
        }
    }
    if (state.m.size() != params.size())
        throw std::logic_error("adam_step: optimizer state does not match the parameter list");
    for (std::size_t i = 0; i < params.size(); ++i)
        if (!params[i].has_grad())
            throw std::logic_error("adam_step: parameter " + std::to_string(i) + " has no gradient");
    ++state.step;
    for (std::size_t i = 0; i < params.size(); ++i)
        adam_update(params[i].data(), params[i].grad(), state.m[i], state.v[i], state.step, state.config);
}

double clip_grad_norm(std::span<Tensor> params, double max_norm)
{
    double ss = 0;
    for (const Tensor& p : params)
        for (double g : p.grad())
            ss += g * g;
    const double norm = std::sqrt(ss);
    if (max_norm > 0.0 && norm > max_norm) {
        const double s = max_norm / norm;
        for (Tensor& p : params)
            for (double& g : p.mutable_grad())
                g *= s;
    }
    return norm;
}

void save_parameters(const std::filesystem::path& base, const std::string& kind, std::span<const Tensor> params,
                     const nlohmann::json& meta)
{
    nlohmann::json j;
    j["format_version"] = 1;
    j["kind"] = kind;
    j["dtype"] = "f32le";
    nlohmann::json shapes = nlohmann::json::array();
    std::vector<float> payload;
    for (const Tensor& p : params) {
        shapes.push_back(p.shape());
        for (double v : p.data())
            payload.push_back(static_cast<float>(v));
    }
    j["shapes"] = shapes;
    j["meta"] = meta;
    io::write_f32le(payload, base.string() + ".f32");
    io::write_text(base.string() + ".json", j.dump(2) + "\n");
}

LoadedParameters load_parameters(const std::filesystem::path& base_in, const std::string& kind)
{
    const std::filesystem::path base = io::base_path(base_in);
    const std::filesystem::path header = base.string() + ".json";
    if (!std::filesystem::exists(header))
        throw DataError("missing checkpoint: " + header.string());
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(io::read_text(header));
    } catch (const nlohmann::json::exception& e) {
        throw DataError("corrupt checkpoint " + header.string() + ": " + e.what());
    }
    try {
        if (j.at("format_version").get<int>() != 1)
            throw DataError("unsupported checkpoint format_version in " + header.string());
        if (j.at("kind").get<std::string>() != kind)
            throw DataError("checkpoint " + header.string() + " holds '" + j.at("kind").get<std::string>() +
                            "', expected '" + kind + "'");
        LoadedParameters out;
        std::size_t total = 0;
        std::vector<std::vector<int>> shapes;
        for (const auto& s : j.at("shapes")) {
            shapes.push_back(s.get<std::vector<int>>());
            total += shape_size(shapes.back());
        }
        const std::vector<float> payload = io::read_f32le(base.string() + ".f32", total);
        std::size_t off = 0;
        for (auto& s : shapes) {
            const std::size_t n = shape_size(s);
            std::vector<double> v(payload.begin() + static_cast<std::ptrdiff_t>(off),
                                  payload.begin() + static_cast<std::ptrdiff_t>(off + n));
            for (double x : v)
                if (!std::isfinite(x))
                    throw DataError("non-finite parameter in checkpoint " + header.string());
            out.params.push_back(Tensor::from(std::move(v), std::move(s), true));
            off += n;
        }
        out.meta = j.value("meta", nlohmann::json::object());
        return out;
    } catch (const nlohmann::json::exception& e) {
        throw DataError("corrupt checkpoint " + header.string() + ": " + e.what());
    } catch (const std::invalid_argument& e) {
        throw DataError("corrupt checkpoint " + header.string() + ": " + e.what());
    }
}

} // namespace sweep4d::ad
