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

#include "sweep4d/state_classifier.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>

#include "sweep4d/error.hpp"
#include "sweep4d/kernels.hpp"
#include "sweep4d/rng.hpp"

namespace sweep4d {

namespace {

// Similarities for all pairs closer than `band` slices.
struct BandedSimilarity {
    UnitSlices unit;
    std::vector<double> dots;
    int band = 1;

    double operator()(int a, int b) const
    {
        if (a > b)
            std::swap(a, b);
        const bool da = unit.degenerate[a], db = unit.degenerate[b];
        if (da || db)
            return da && db ? 1.0 : 0.0;
        if (a == b)
            return 1.0;
        return std::clamp(dots[static_cast<std::size_t>(a) * band + (b - a)], -1.0, 1.0);
    }
};

BandedSimilarity banded_similarity(const SliceStack& stack, int band)
{
    BandedSimilarity s;
    s.unit = unit_slices(stack);
    s.band = std::max(1, std::min<int>(band, static_cast<int>(stack.size())));
    s.dots.assign(stack.size() * s.band, 0.0);
    kernels::omp::dot_band(s.unit.rows, s.unit.n, s.band, s.dots);
    return s;
}

SimilarityWindow make_window(const BandedSimilarity& sim, std::span<const int> slices, int last)
{
    const int w = static_cast<int>(slices.size());
    SimilarityWindow win;
    win.size = w;
    win.last_slice_index = last;
    win.matrix.resize(static_cast<std::size_t>(w) * w);
    for (int a = 0; a < w; ++a)
        for (int b = a; b < w; ++b) {
            const double v = a == b ? 1.0 : sim(slices[a], slices[b]);
            win.matrix[static_cast<std::size_t>(a) * w + b] = v;
            win.matrix[static_cast<std::size_t>(b) * w + a] = v;
        }
    return win;
}

void check_direction(const LstmDirection& d, int in, int h, const char* what)
{
    if (!d.wx.defined() || d.wx.rows() != in || d.wx.cols() != 4 * h || d.wh.rows() != h || d.wh.cols() != 4 * h ||
        d.b.size() != static_cast<std::size_t>(4 * h))
        throw DataError(std::string("BiLSTM ") + what + " weights have inconsistent shapes");
}

// Hidden states in time order.
std::vector<ad::Tensor> run_direction(ad::Tape* tape, const LstmDirection& d, std::span<const ad::Tensor> xs,
                                      int hidden, bool reverse)
{
    const int steps = static_cast<int>(xs.size());
    const int batch = xs[0].rows();
    ad::Tensor h = ad::Tensor::zeros({batch, hidden});
    ad::Tensor c = ad::Tensor::zeros({batch, hidden});
    std::vector<ad::Tensor> out(steps);
    for (int s = 0; s < steps; ++s) {
        const int t = reverse ? steps - 1 - s : s;
        ad::Tensor z = ad::add(tape, ad::matmul(tape, xs[t], d.wx), ad::matmul(tape, h, d.wh));
        z = ad::add(tape, z, d.b);
        const ad::Tensor i = ad::sigmoid(tape, ad::slice_cols(tape, z, 0, hidden));
        const ad::Tensor f = ad::sigmoid(tape, ad::slice_cols(tape, z, hidden, 2 * hidden));
        const ad::Tensor o = ad::sigmoid(tape, ad::slice_cols(tape, z, 2 * hidden, 3 * hidden));
        const ad::Tensor g = ad::tanh(tape, ad::slice_cols(tape, z, 3 * hidden, 4 * hidden));
        c = ad::add(tape, ad::mul(tape, f, c), ad::mul(tape, i, g));
        h = ad::mul(tape, o, ad::tanh(tape, c));
        out[t] = h;
    }
    return out;
}

ad::Tensor uniform_tensor(Rng& rng, std::vector<int> shape, double bound)
{
    ad::Tensor t = ad::Tensor::zeros(std::move(shape), true);
    for (double& v : t.data())
        v = rng.uniform(-bound, bound);
    return t;
}

ad::Tensor copy_tensor(const ad::Tensor& t)
{
    return ad::Tensor::from(std::vector<double>(t.data().begin(), t.data().end()), t.shape(), true);
}

int argmax_row(std::span<const double> row)
{
    int best = 0;
    for (int j = 1; j < static_cast<int>(row.size()); ++j)
        if (row[j] > row[best])
            best = j;
    return best;
}

struct Evaluation {
    double loss = 0.0;
    double accuracy = 0.0;
};

Evaluation evaluate(const BiLstmModel& model, std::span<const SimilarityWindow* const> windows, int batch_size)
{
    Evaluation e;
    if (windows.empty())
        return e;
    std::size_t correct = 0;
    double loss_sum = 0;
    for (std::size_t s = 0; s < windows.size(); s += batch_size) {
        const std::size_t n = std::min<std::size_t>(batch_size, windows.size() - s);
        const auto batch = windows.subspan(s, n);
        const ad::Tensor logits = bilstm_logits(nullptr, model, batch);
        std::vector<int> labels;
        for (const auto* w : batch)
            labels.push_back(w->label);
        loss_sum += ad::softmax_cross_entropy(nullptr, logits, labels).item() * static_cast<double>(n);
        const int k = logits.cols();
        for (std::size_t b = 0; b < n; ++b)
            if (argmax_row(logits.data().subspan(b * k, k)) == labels[b])
                ++correct;
    }
    e.loss = loss_sum / static_cast<double>(windows.size());
    e.accuracy = static_cast<double>(correct) / static_cast<double>(windows.size());
    return e;
}

struct RunOutcome {
    BiLstmModel best;
    std::vector<EpochStats> history;
    int best_epoch = 0;
    double best_val = -1.0;
    double best_val_loss = 0.0;
    bool stalled = false; // loss at probe_epoch did not fall below the initial loss
};

// Trains from `init`; gives up at `probe_epoch` (if > 0) when the loss has not fallen.
RunOutcome run_training(const BiLstmModel& init, std::span<const SimilarityWindow* const> train,
                        std::span<const SimilarityWindow* const> val, const TrainConfig& cfg, double lr, int epochs,
                        int probe_epoch, const TrainLog& log)
{
    RunOutcome out;
    BiLstmModel model = init.clone();
    std::vector<ad::Tensor> params = model.parameters();
    ad::AdamState adam;
    adam.config.lr = lr;
    adam.config.weight_decay = cfg.weight_decay;
    Rng rng(cfg.seed ^ 0x5eedull);
    std::vector<const SimilarityWindow*> order(train.begin(), train.end());
    std::span<const SimilarityWindow* const> val_or_train = val.empty() ? train : val;

    auto record = [&](int epoch) {
        const Evaluation tr = evaluate(model, train, cfg.batch_size);
        const Evaluation va = evaluate(model, val_or_train, cfg.batch_size);
        out.history.push_back({epoch, tr.loss, tr.accuracy, va.accuracy});
        // Ties in accuracy go to the lower validation loss.
        if (va.accuracy > out.best_val || (va.accuracy == out.best_val && va.loss < out.best_val_loss)) {
            out.best_val = va.accuracy;
            out.best_val_loss = va.loss;
            out.best_epoch = epoch;
            out.best = model.clone();
        }
        if (log) {
            std::ostringstream s;
            s << "epoch " << epoch << " lr " << lr << " loss " << tr.loss << " train_acc " << tr.accuracy
              << " val_acc " << va.accuracy;
            log(s.str());
        }
    };
    record(0);
    ad::Tape tape;
    for (int epoch = 1; epoch <= epochs; ++epoch) {
        rng.shuffle(std::span<const SimilarityWindow*>(order));
        for (std::size_t s = 0; s < order.size(); s += cfg.batch_size) {
            const std::size_t n = std::min<std::size_t>(cfg.batch_size, order.size() - s);
            const std::span<const SimilarityWindow* const> batch(order.data() + s, n);
            std::vector<int> labels;
            for (const auto* w : batch)
                labels.push_back(w->label);
            tape.clear();
            for (ad::Tensor& p : params)
                p.zero_grad();
            const ad::Tensor loss = ad::softmax_cross_entropy(&tape, bilstm_logits(&tape, model, batch), labels);
            tape.backward(loss);
            if (cfg.clip_norm > 0.0)
                ad::clip_grad_norm(params, cfg.clip_norm);
            ad::adam_step(params, adam);
        }
        record(epoch);
        if (epoch == probe_epoch && !(out.history.back().train_loss < out.history.front().train_loss)) {
            out.stalled = true;
            break;
        }
    }
    tape.clear();
    return out;
}

} // namespace

UnitSlices unit_slices(const SliceStack& stack)
{
    UnitSlices u;
    const std::size_t t_count = stack.size();
    u.n = static_cast<std::size_t>(stack.nx()) * stack.ny();
    u.rows.assign(t_count * u.n, 0.0);
    u.degenerate.assign(t_count, 0);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t t = 0; t < static_cast<std::ptrdiff_t>(t_count); ++t) {
        const auto& d = stack.slices[t].data;
        double mean = 0;
        for (float v : d)
            mean += v;
        mean /= static_cast<double>(u.n);
        double* row = u.rows.data() + t * u.n;
        double ss = 0;
        double mx = 0;
        for (std::size_t i = 0; i < u.n; ++i) {
            row[i] = d[i] - mean;
            ss += row[i] * row[i];
            mx = std::max(mx, std::abs(static_cast<double>(d[i])));
        }
        const double floor = 1e-12 * mx;
        if (!(ss > static_cast<double>(u.n) * floor * floor) || ss == 0.0) {
            u.degenerate[t] = 1;
            std::fill(row, row + u.n, 0.0);
            continue;
        }
        const double inv = 1.0 / std::sqrt(ss);
        for (std::size_t i = 0; i < u.n; ++i)
            row[i] *= inv;
    }
    return u;
}

double slice_similarity(const UnitSlices& u, int a, int b)
{
    const bool da = u.degenerate[a], db = u.degenerate[b];
    if (da || db)
        return da && db ? 1.0 : 0.0;
    if (a == b)
        return 1.0;
    const double* ra = u.rows.data() + static_cast<std::size_t>(a) * u.n;
    const double* rb = u.rows.data() + static_cast<std::size_t>(b) * u.n;
    double s = 0;
    for (std::size_t i = 0; i < u.n; ++i)
        s += ra[i] * rb[i];
    return std::clamp(s, -1.0, 1.0);
}

std::vector<SimilarityWindow> build_windows(const SliceStack& stack, const RespiratoryLabeling* labeling,
                                            int window, int stride)
{
    if (window < 2)
        throw ConfigError("window length must be >= 2");
    if (stride < 1)
        throw ConfigError("window stride must be >= 1");
    const int t_count = static_cast<int>(stack.size());
    if (t_count < window)
        throw DataError("stack has " + std::to_string(t_count) + " slices, fewer than the window length " +
                        std::to_string(window));
    if (labeling && labeling->size() != stack.size())
        throw DataError("labeling length does not match the stack");
    const BandedSimilarity sim = banded_similarity(stack, window);
    std::vector<int> starts;
    for (int s = 0; s + window <= t_count; s += stride)
        starts.push_back(s);
    std::vector<SimilarityWindow> out(starts.size());
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(starts.size()); ++i) {
        std::vector<int> idx(window);
        std::iota(idx.begin(), idx.end(), starts[i]);
        out[i] = make_window(sim, idx, starts[i] + window - 1);
        if (labeling)
            out[i].label = labeling->states[starts[i] + window - 1];
    }
    return out;
}

std::vector<SimilarityWindow> inference_windows(const SliceStack& stack, int window)
{
    if (window < 2)
        throw ConfigError("window length must be >= 2");
    const int t_count = static_cast<int>(stack.size());
    if (t_count < window)
        throw DataError("stack has " + std::to_string(t_count) + " slices, fewer than the window length " +
                        std::to_string(window));
    // Padded position p < W-1 reflects to slice W-1-p, so mapped indices stay within 2W-2.
    const BandedSimilarity sim = banded_similarity(stack, 2 * window - 1);
    std::vector<SimilarityWindow> out(t_count);
#pragma omp parallel for schedule(static)
    for (int t = 0; t < t_count; ++t) {
        std::vector<int> idx(window);
        for (int j = 0; j < window; ++j) {
            const int p = t + j; // position in the padded sequence
            idx[j] = p < window - 1 ? window - 1 - p : p - (window - 1);
        }
        out[t] = make_window(sim, idx, t);
    }
    return out;
}

BiLstmModel BiLstmModel::zeros(int input_dim, int hidden, int layers, int num_states)
{
    BiLstmModel m;
    m.input_dim = input_dim;
    m.hidden = hidden;
    m.layers = layers;
    m.num_states = num_states;
    for (int l = 0; l < layers; ++l) {
        const int in = l == 0 ? input_dim : 2 * hidden;
        for (auto* dirs : {&m.forward, &m.backward})
            dirs->push_back({ad::Tensor::zeros({in, 4 * hidden}, true), ad::Tensor::zeros({hidden, 4 * hidden}, true),
                             ad::Tensor::zeros({1, 4 * hidden}, true)});
    }
    m.head_w = ad::Tensor::zeros({2 * hidden, num_states}, true);
    m.head_b = ad::Tensor::zeros({1, num_states}, true);
    return m;
}

BiLstmModel BiLstmModel::init(int input_dim, int hidden, int layers, int num_states, std::uint64_t seed)
{
    if (input_dim < 1 || hidden < 1 || layers < 1 || num_states < 2)
        throw ConfigError("BiLSTM dimensions must be positive with at least 2 states");
    BiLstmModel m = zeros(input_dim, hidden, layers, num_states);
    Rng rng(seed);
    const double bound = 1.0 / std::sqrt(static_cast<double>(hidden));
    for (int l = 0; l < layers; ++l) {
        const int in = l == 0 ? input_dim : 2 * hidden;
        for (auto* dirs : {&m.forward, &m.backward})
            (*dirs)[l] = {uniform_tensor(rng, {in, 4 * hidden}, bound), uniform_tensor(rng, {hidden, 4 * hidden}, bound),
                          uniform_tensor(rng, {1, 4 * hidden}, bound)};
    }
    m.head_w = uniform_tensor(rng, {2 * hidden, num_states}, 1.0 / std::sqrt(2.0 * hidden));
    return m;
}

std::vector<ad::Tensor> BiLstmModel::parameters() const
{
    std::vector<ad::Tensor> p;
    for (int l = 0; l < layers; ++l)
        for (const auto* dirs : {&forward, &backward}) {
            p.push_back((*dirs)[l].wx);
            p.push_back((*dirs)[l].wh);
            p.push_back((*dirs)[l].b);
        }
    p.push_back(head_w);
    p.push_back(head_b);
    return p;
}

BiLstmModel BiLstmModel::clone() const
{
    BiLstmModel m = *this;
    for (auto* dirs : {&m.forward, &m.backward})
        for (LstmDirection& d : *dirs)
            d = {copy_tensor(d.wx), copy_tensor(d.wh), copy_tensor(d.b)};
    m.head_w = copy_tensor(head_w);
    m.head_b = copy_tensor(head_b);
    return m;
}

void BiLstmModel::validate() const
{
    if (layers < 1 || hidden < 1 || input_dim < 1 || num_states < 2)
        throw DataError("BiLSTM model has invalid dimensions");
    if (static_cast<int>(forward.size()) != layers || static_cast<int>(backward.size()) != layers)
        throw DataError("BiLSTM model layer count does not match its weights");
    for (int l = 0; l < layers; ++l) {
        const int in = l == 0 ? input_dim : 2 * hidden;
        check_direction(forward[l], in, hidden, "forward");
        check_direction(backward[l], in, hidden, "backward");
    }
    if (!head_w.defined() || head_w.rows() != 2 * hidden || head_w.cols() != num_states ||
        head_b.size() != static_cast<std::size_t>(num_states))
        throw DataError("BiLSTM head weights have inconsistent shapes");
}

ad::Tensor bilstm_logits(ad::Tape* tape, const BiLstmModel& model, std::span<const SimilarityWindow* const> batch)
{
    if (batch.empty())
        throw std::invalid_argument("bilstm_logits: empty batch");
    const int w = batch[0]->size;
    if (w != model.input_dim)
        throw DataError("window length " + std::to_string(w) + " does not match the model input " +
                        std::to_string(model.input_dim));
    const int b = static_cast<int>(batch.size());
    std::vector<ad::Tensor> xs(w);
    for (int t = 0; t < w; ++t) {
        std::vector<double> x(static_cast<std::size_t>(b) * w);
        for (int i = 0; i < b; ++i) {
            if (batch[i]->size != w)
                throw DataError("windows in one batch differ in length");
            const double* row = batch[i]->matrix.data() + static_cast<std::size_t>(t) * w;
            double* dst = x.data() + static_cast<std::size_t>(i) * w;
            for (int j = 0; j < w; ++j)
                dst[j] = (row[j] - model.input_shift) * model.input_scale;
        }
        xs[t] = ad::Tensor::from(std::move(x), {b, w});
    }
    std::vector<ad::Tensor> hf, hb;
    for (int l = 0; l < model.layers; ++l) {
        if (l > 0) {
            for (int t = 0; t < w; ++t) {
                const ad::Tensor parts[2] = {hf[t], hb[t]};
                xs[t] = ad::concat_cols(tape, parts);
            }
        }
        hf = run_direction(tape, model.forward[l], xs, model.hidden, false);
        hb = run_direction(tape, model.backward[l], xs, model.hidden, true);
    }
    const ad::Tensor last[2] = {hf[w - 1], hb[w - 1]};
    const ad::Tensor feat = ad::concat_cols(tape, last);
    return ad::add(tape, ad::matmul(tape, feat, model.head_w), model.head_b);
}

std::vector<double> bilstm_forward(const BiLstmModel& model, const SimilarityWindow& window)
{
    const SimilarityWindow* one[1] = {&window};
    const ad::Tensor logits = bilstm_logits(nullptr, model, one);
    return {logits.data().begin(), logits.data().end()};
}

void TrainConfig::validate() const
{
    if (!(lr > 0.0))
        throw ConfigError("train.lr must be > 0");
    if (!(weight_decay >= 0.0))
        throw ConfigError("train.weight_decay must be >= 0");
    if (window < 2)
        throw ConfigError("train.window must be >= 2");
    if (stride < 1 || epochs < 0 || batch_size < 1 || hidden < 1 || layers < 1)
        throw ConfigError("train.stride, epochs, batch_size, hidden and layers must be positive");
    if (!(validation_fraction >= 0.0 && validation_fraction < 1.0))
        throw ConfigError("train.validation_fraction must lie in [0, 1)");
}

TrainResult train_srnn(std::span<const SimilarityWindow> windows, int num_states, const TrainConfig& cfg,
                       const TrainLog& log)
{
    cfg.validate();
    if (windows.empty())
        throw DataError("no training windows");
    std::set<int> classes;
    for (const SimilarityWindow& w : windows) {
        if (w.label < 0 || w.label >= num_states)
            throw DataError("training window label " + std::to_string(w.label) + " outside [0, " +
                            std::to_string(num_states) + ")");
        if (w.size != cfg.window)
            throw DataError("training window length does not match train.window");
        classes.insert(w.label);
    }
    if (classes.size() < 2)
        throw DataError("training labels cover a single class; nothing to learn");

    // Seeded split on window start order.
    std::vector<int> order(windows.size());
    std::iota(order.begin(), order.end(), 0);
    Rng split_rng(cfg.seed ^ 0x5917ull);
    split_rng.shuffle(std::span<int>(order));
    std::size_t n_val = static_cast<std::size_t>(std::floor(cfg.validation_fraction * windows.size()));
    if (windows.size() - n_val < 1)
        n_val = 0;
    std::vector<int> val_idx(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
    std::vector<int> train_idx(order.begin() + static_cast<std::ptrdiff_t>(n_val), order.end());
    std::sort(val_idx.begin(), val_idx.end());
    std::sort(train_idx.begin(), train_idx.end());
    std::vector<const SimilarityWindow*> train, val;
    for (int i : train_idx)
        train.push_back(&windows[i]);
    for (int i : val_idx)
        val.push_back(&windows[i]);

    BiLstmModel init = BiLstmModel::init(cfg.window, cfg.hidden, cfg.layers, num_states, cfg.seed);
    {
        // Similarities of neighbouring slices crowd near 1; standardise the off-diagonal spread.
        double s1 = 0, s2 = 0, n = 0;
        for (const SimilarityWindow* w : train)
            for (int a = 0; a < w->size; ++a)
                for (int b = 0; b < w->size; ++b)
                    if (a != b) {
                        s1 += w->at(a, b);
                        s2 += w->at(a, b) * w->at(a, b);
                        n += 1;
                    }
        if (n > 0) {
            const double mu = s1 / n;
            const double var = std::max(0.0, s2 / n - mu * mu);
            init.input_shift = mu;
            init.input_scale = var > 1e-18 ? 1.0 / std::sqrt(var) : 1.0;
        }
    }
    TrainResult result;
    result.train_windows = train.size();
    result.validation_windows = val.size();

    double lr = cfg.lr;
    const int probe = std::min(cfg.lr_probe_epochs, cfg.epochs);
    RunOutcome run;
    for (int h = 0;; ++h) {
        result.lr_sweep.push_back(lr);
        const bool last = h >= cfg.max_lr_halvings;
        run = run_training(init, train, val, cfg, lr, cfg.epochs, last ? 0 : probe, log);
        if (!run.stalled)
            break;
        if (log)
            log("loss did not fall within " + std::to_string(probe) + " epochs at lr " + std::to_string(lr) +
                "; halving");
        lr *= 0.5;
    }
    result.model = std::move(run.best);
    result.history = std::move(run.history);
    result.best_epoch = run.best_epoch;
    result.best_validation_accuracy = run.best_val;
    return result;
}

RespiratoryLabeling predict_states(const BiLstmModel& model, const SliceStack& stack)
{
    model.validate();
    const auto windows = inference_windows(stack, model.input_dim);
    std::vector<int> states(windows.size());
    constexpr std::size_t batch_size = 64;
    const int k = model.num_states;
    for (std::size_t s = 0; s < windows.size(); s += batch_size) {
        const std::size_t n = std::min(batch_size, windows.size() - s);
        std::vector<const SimilarityWindow*> batch;
        for (std::size_t i = 0; i < n; ++i)
            batch.push_back(&windows[s + i]);
        const ad::Tensor logits = bilstm_logits(nullptr, model, batch);
        for (std::size_t i = 0; i < n; ++i)
            states[s + i] = argmax_row(logits.data().subspan(i * k, k));
    }
    return RespiratoryLabeling::from_states(std::move(states), k, LabelSource::Srnn);
}

void save_model(const BiLstmModel& model, const std::filesystem::path& base, const nlohmann::json& meta)
{
    model.validate();
    nlohmann::json m = meta.is_object() ? meta : nlohmann::json::object();
    m["input_dim"] = model.input_dim;
    m["hidden"] = model.hidden;
    m["layers"] = model.layers;
    m["num_states"] = model.num_states;
    m["input_shift"] = model.input_shift;
    m["input_scale"] = model.input_scale;
    ad::save_parameters(base, "bilstm", model.parameters(), m);
}

BiLstmModel load_model(const std::filesystem::path& base)
{
    ad::LoadedParameters lp = ad::load_parameters(base, "bilstm");
    BiLstmModel m;
    try {
        m.input_dim = lp.meta.at("input_dim").get<int>();
        m.hidden = lp.meta.at("hidden").get<int>();
        m.layers = lp.meta.at("layers").get<int>();
        m.num_states = lp.meta.at("num_states").get<int>();
        m.input_shift = lp.meta.at("input_shift").get<double>();
        m.input_scale = lp.meta.at("input_scale").get<double>();
    } catch (const nlohmann::json::exception& e) {
        throw DataError("corrupt checkpoint " + base.string() + ": " + e.what());
    }
    if (m.layers < 1 || lp.params.size() != static_cast<std::size_t>(6 * m.layers + 2))
        throw DataError("checkpoint " + base.string() + " holds the wrong number of tensors");
    std::size_t i = 0;
    for (int l = 0; l < m.layers; ++l)
        for (auto* dirs : {&m.forward, &m.backward}) {
            LstmDirection d{lp.params[i], lp.params[i + 1], lp.params[i + 2]};
            dirs->push_back(d);
            i += 3;
        }
    m.head_w = lp.params[i];
    m.head_b = lp.params[i + 1];
    m.validate();
    return m;
}

} // namespace sweep4d
