// SPDX-License-Identifier: Apache-2.0

#include "treecell/network.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <ostream>

#include "treecell/genetic_ops.hpp"
#include "treecell/rng.hpp"

namespace treecell {

NetworkSpec homogeneous_spec(const TaskData& data, int layers, int width, int embedding_dim)
{
    NetworkSpec spec;
    spec.io_dim = data.io_dim;
    spec.head = data.is_music() ? HeadKind::Sigmoid : HeadKind::Softmax;
    spec.embedding_dim = data.is_music() ? 0 : embedding_dim;
    for (int l = 0; l < layers; ++l) {
        spec.layers.push_back({width, {{0, width}}});
    }
    return spec;
}

LayerSpec heterogeneous_layer(int node_types, int cardinality)
{
    LayerSpec layer;
    layer.width = node_types * cardinality;
    for (int i = 0; i < node_types; ++i) {
        layer.slots.push_back({i, cardinality});
    }
    return layer;
}

void check_spec(const NetworkSpec& spec, size_t tree_count)
{
    auto fail = [](const std::string& what) { throw std::invalid_argument("network spec: " + what); };
    if (spec.layers.empty()) {
        fail("no layers");
    }
    if (spec.io_dim <= 0) {
        fail("io_dim must be positive");
    }
    if (spec.head == HeadKind::Softmax && spec.embedding_dim <= 0) {
        fail("embedding_dim must be positive for a softmax head");
    }
    for (size_t l = 0; l < spec.layers.size(); ++l) {
        const LayerSpec& layer = spec.layers[l];
        const std::string where = "layer " + std::to_string(l) + ": ";
        if (layer.width <= 0 || layer.slots.empty()) {
            fail(where + "needs a positive width and at least one slot");
        }
        int total = 0;
        for (const SlotSpec& s : layer.slots) {
            if (s.cardinality <= 0) {
                fail(where + "slot cardinality must be positive");
            }
            if (s.tree < 0 || static_cast<size_t>(s.tree) >= tree_count) {
                fail(where + "slot names tree " + std::to_string(s.tree) + " but only " + std::to_string(tree_count) +
                     " given");
            }
            total += s.cardinality;
        }
        if (total != layer.width) {
            fail(where + "cardinalities sum to " + std::to_string(total) + ", width is " + std::to_string(layer.width));
        }
    }
}

size_t lstm_parameter_count(const NetworkSpec& spec)
{
    size_t count = 0;
    size_t in = spec.io_dim;
    if (spec.head == HeadKind::Softmax) {
        count += static_cast<size_t>(spec.embedding_dim) * spec.io_dim;
        in = spec.embedding_dim;
    }
    for (const LayerSpec& layer : spec.layers) {
        const size_t w = layer.width;
        count += 4 * (in + w + 1) * w;
        in = w;
    }
    return count + spec.io_dim * (in + 1);
}

template <typename T>
Network<T>::Network(NetworkSpec spec, std::vector<CompiledCell> cells) : spec_(std::move(spec))
{
    check_spec(spec_, cells.size());
    int in = input_dim();
    if (spec_.head == HeadKind::Softmax) {
        embedding = Matrix<T>::Zero(spec_.embedding_dim, spec_.io_dim);
    }
    for (const LayerSpec& ls : spec_.layers) {
        LayerParams<T> p;
        p.width = ls.width;
        p.input_dim = in;
        p.w = Matrix<T>::Zero(kBaseInputs * ls.width, in);
        p.u = Matrix<T>::Zero(kBaseInputs * ls.width, ls.width);
        p.b = Matrix<T>::Zero(kBaseInputs * ls.width, 1);
        layers.push_back(std::move(p));
        std::vector<Slot> row;
        int first = 0;
        for (const SlotSpec& s : ls.slots) {
            row.push_back({first, s.cardinality, s.tree, cells[s.tree]});
            first += s.cardinality;
        }
        slots_.push_back(std::move(row));
        in = ls.width;
    }
    head_w = Matrix<T>::Zero(spec_.io_dim, in);
    head_b = Matrix<T>::Zero(spec_.io_dim, 1);
}

template <typename T>
int Network<T>::input_dim() const
{
    return spec_.head == HeadKind::Softmax ? spec_.embedding_dim : spec_.io_dim;
}

template <typename T>
void Network<T>::initialize(uint64_t seed, double scale)
{
    Rng rng(seed);
    auto fill = [&](Matrix<T>& m) {
        for (Eigen::Index j = 0; j < m.cols(); ++j) {
            for (Eigen::Index i = 0; i < m.rows(); ++i) {
                m(i, j) = static_cast<T>(rng.uniform(-scale, scale));
            }
        }
    };
    fill(embedding);
    for (auto& p : layers) {
        fill(p.w);
        fill(p.u);
        p.b.setZero();
    }
    fill(head_w);
    head_b.setZero();
}

template <typename T>
std::vector<Matrix<T>*> Network<T>::parameters()
{
    std::vector<Matrix<T>*> out;
    if (embedding.size() > 0) {
        out.push_back(&embedding);
    }
    for (auto& p : layers) {
        out.push_back(&p.w);
        out.push_back(&p.u);
        out.push_back(&p.b);
    }
    out.push_back(&head_w);
    out.push_back(&head_b);
    return out;
}

template <typename T>
std::vector<const Matrix<T>*> Network<T>::parameters() const
{
    auto mutable_params = const_cast<Network<T>*>(this)->parameters();
    return {mutable_params.begin(), mutable_params.end()};
}

template <typename T>
size_t Network<T>::parameter_count() const
{
    size_t n = 0;
    for (const Matrix<T>* m : parameters()) {
        n += m->size();
    }
    return n;
}

template <typename T>
typename Network<T>::State Network<T>::zero_state(int batch) const
{
    State s;
    for (const auto& p : layers) {
        s.h.push_back(Matrix<T>::Zero(p.width, batch));
        s.c.push_back(Matrix<T>::Zero(p.width, batch));
        s.d.push_back(Matrix<T>::Zero(p.width, batch));
    }
    return s;
}

template <typename T>
Network<T> build_network(const NetworkSpec& spec, const std::vector<NodeTree>& trees, const TreeLimits& limits)
{
    check_spec(spec, trees.size());
    std::vector<CompiledCell> cells;
    cells.reserve(trees.size());
    for (const NodeTree& t : trees) {
        cells.push_back(compile(t, limits));
    }
    return Network<T>(spec, std::move(cells));
}

void check_train_config(const TrainConfig& c)
{
    auto fail = [](const char* what) { throw std::invalid_argument(std::string("train config: ") + what); };
    if (c.unroll_steps <= 0) {
        fail("unroll_steps must be positive");
    }
    if (c.dropout_ff < 0.0 || c.dropout_ff >= 1.0 || c.dropout_rec < 0.0 || c.dropout_rec >= 1.0) {
        fail("dropout rates must lie in [0, 1)");
    }
    if (c.l2 < 0.0) {
        fail("l2 must be non-negative");
    }
    if (c.learning_rate < 0.0 || c.lr_decay <= 0.0) {
        fail("learning_rate must be non-negative and lr_decay positive");
    }
    if (c.grad_clip_norm <= 0.0) {
        fail("grad_clip_norm must be positive");
    }
    if (c.epochs < 0 || c.batch_size <= 0 || c.eval_batch <= 0) {
        fail("epochs, batch_size and eval_batch must be positive");
    }
    if (c.init_scale <= 0.0) {
        fail("init_scale must be positive");
    }
}

std::vector<double> TrainingCurve::values() const
{
    std::vector<double> out;
    for (const auto& e : epochs) {
        out.push_back(e.metric);
    }
    return out;
}

MetricKind metric_for(const TaskData& data)
{
    return data.is_music() ? MetricKind::F1 : MetricKind::Perplexity;
}

double fitness_from_metric(MetricKind kind, double metric)
{
    return kind == MetricKind::F1 ? 1.0 - metric : metric;
}

void write_curve_csv(std::ostream& out, const TrainingCurve& curve, bool with_seconds)
{
    out << "epoch,metric,seconds\n";
    char line[96];
    for (const auto& e : curve.epochs) {
        std::snprintf(line, sizeof line, "%d,%.17g,%.3f\n", e.epoch, e.metric, with_seconds ? e.seconds : 0.0);
        out << line;
    }
}

TrainingDiverged::TrainingDiverged(int epoch, int batch, double loss)
    : std::runtime_error("non-finite loss " + std::to_string(loss) + " at epoch " + std::to_string(epoch) +
                         ", batch " + std::to_string(batch))
    , epoch_(epoch)
    , batch_(batch)
{
}

double f1_score(long long tp, long long fp, long long fn)
{
    if (tp + fp + fn == 0) {
        return 1.0;
    }
    return 2.0 * static_cast<double>(tp) / static_cast<double>(2 * tp + fp + fn);
}

Precision parse_precision(const std::string& text)
{
    if (text == "32") {
        return Precision::F32;
    }
    if (text == "64") {
        return Precision::F64;
    }
    throw std::invalid_argument("precision must be 32 or 64, got '" + text + "'");
}

namespace {

// A split laid out as `batch` contiguous streams of equal length; positions
// past the end of the split are masked.
struct Streams {
    const TaskData* data = nullptr;
    SplitId split = SplitId::Train;
    size_t total = 0;
    int batch = 1;
    size_t length = 0;

    Streams(const TaskData& d, SplitId s, int requested) : data(&d), split(s), total(d.steps(s))
    {
        if (total == 0) {
            throw DataError("empty split");
        }
        batch = static_cast<int>(std::min<size_t>(requested, total));
        length = (total + batch - 1) / batch;
    }

    bool valid(int b, size_t t) const { return b * length + t < total; }
    size_t position(int b, size_t t) const { return std::min(b * length + t, total - 1); }
};

template <typename T>
T sigmoid(T x)
{
    return T(1) / (T(1) + std::exp(-x));
}

template <typename T>
class Runner {
public:
    using M = Matrix<T>;
    using B = Block<T>;

    struct StepTape {
        std::vector<int> tokens;
        std::vector<M> x;         // layer inputs after dropout
        std::vector<M> x_mask;    // empty when no dropout
        std::vector<M> h_in;      // recurrent input after dropout
        std::vector<std::vector<CellTape<T>>> cells;
        M top;
        M top_mask;
        M logits;
    };

    explicit Runner(const Network<T>& net) : net_(net) {}

    M input(const Streams& s, size_t t, std::vector<int>* tokens) const
    {
        const TaskData& data = *s.data;
        if (data.is_music()) {
            const RollSplit& roll = data.roll_split(s.split);
            M x(roll.pitches, s.batch);
            for (int b = 0; b < s.batch; ++b) {
                const size_t pos = s.position(b, t);
                for (int p = 0; p < roll.pitches; ++p) {
                    x(p, b) = static_cast<T>(roll.at(p, pos));
                }
            }
            return x;
        }
        const TokenSplit& split = data.token_split(s.split);
        M x(net_.embedding.rows(), s.batch);
        for (int b = 0; b < s.batch; ++b) {
            const int tok = split.inputs[s.position(b, t)];
            x.col(b) = net_.embedding.col(tok);
            if (tokens) {
                tokens->push_back(tok);
            }
        }
        return x;
    }

    // One timestep through every layer; updates state in place. With a tape,
    // records what backward needs and applies the given dropout masks.
    M step(M x, typename Network<T>::State& state, StepTape* tape, Rng* dropout, double p_ff,
           const std::vector<M>* rec_masks) const
    {
        const int batch = static_cast<int>(x.cols());
        for (size_t l = 0; l < net_.layers.size(); ++l) {
            const LayerParams<T>& p = net_.layers[l];
            M h_in = state.h[l];
            if (tape) {
                M mask = make_mask(dropout, p_ff, x.rows(), batch);
                if (mask.size() > 0) {
                    x.array() *= mask.array();
                }
                tape->x.push_back(x);
                tape->x_mask.push_back(std::move(mask));
                if (rec_masks && (*rec_masks)[l].size() > 0) {
                    h_in.array() *= (*rec_masks)[l].array();
                }
                tape->h_in.push_back(h_in);
            }
            M pre = p.w * x + p.u * h_in;
            pre.colwise() += p.b.col(0);
            M h(p.width, batch);
            M c(p.width, batch);
            M d(p.width, batch);
            std::vector<CellTape<T>> cell_tapes;
            for (const Slot& slot : net_.slots()[l]) {
                std::array<B, kBaseInputs> base;
                for (int k = 0; k < kBaseInputs; ++k) {
                    base[k] = pre.block(k * p.width + slot.first_unit, 0, slot.units, batch).array();
                }
                const B c_prev = state.c[l].block(slot.first_unit, 0, slot.units, batch).array();
                const B d_prev = state.d[l].block(slot.first_unit, 0, slot.units, batch).array();
                CellTape<T> ct;
                cell_forward<T>(slot.cell, base, c_prev, d_prev, ct);
                h.block(slot.first_unit, 0, slot.units, batch) = ct.h(slot.cell).matrix();
                c.block(slot.first_unit, 0, slot.units, batch) = ct.c(slot.cell).matrix();
                d.block(slot.first_unit, 0, slot.units, batch) = ct.d(slot.cell).matrix();
                if (tape) {
                    cell_tapes.push_back(std::move(ct));
                }
            }
            if (tape) {
                tape->cells.push_back(std::move(cell_tapes));
            }
            state.h[l] = h;
            state.c[l] = std::move(c);
            state.d[l] = std::move(d);
            x = std::move(h);
        }
        if (tape) {
            M mask = make_mask(dropout, p_ff, x.rows(), batch);
            if (mask.size() > 0) {
                x.array() *= mask.array();
            }
            tape->top = x;
            tape->top_mask = std::move(mask);
        }
        M logits = net_.head_w * x;
        logits.colwise() += net_.head_b.col(0);
        return logits;
    }

    static M make_mask(Rng* rng, double p, Eigen::Index rows, Eigen::Index cols)
    {
        if (!rng || p <= 0.0) {
            return M();
        }
        const T keep_scale = static_cast<T>(1.0 / (1.0 - p));
        M mask(rows, cols);
        for (Eigen::Index j = 0; j < cols; ++j) {
            for (Eigen::Index i = 0; i < rows; ++i) {
                mask(i, j) = rng->bernoulli(p) ? T(0) : keep_scale;
            }
        }
        return mask;
    }

    // Loss summed over valid positions, and its gradient w.r.t. the logits
    // (unnormalized).
    double loss(const Streams& s, size_t t, const M& logits, M& grad) const
    {
        const TaskData& data = *s.data;
        grad = M::Zero(logits.rows(), logits.cols());
        double total = 0.0;
        for (int b = 0; b < s.batch; ++b) {
            if (!s.valid(b, t)) {
                continue;
            }
            const size_t pos = s.position(b, t);
            if (data.is_music()) {
                const RollSplit& roll = data.roll_split(s.split);
                for (int p = 0; p < roll.pitches; ++p) {
                    const double z = logits(p, b);
                    const double y = roll.at(p, pos + 1);
                    total += std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z)));
                    grad(p, b) = static_cast<T>(sigmoid(z) - y);
                }
            } else {
                const int target = data.token_split(s.split).targets[pos];
                const auto col = logits.col(b);
                const T mx = col.maxCoeff();
                const auto e = (col.array() - mx).exp();
                const T z = e.sum();
                total += static_cast<double>(std::log(z) + mx - col(target));
                grad.col(b) = (e / z).matrix();
                grad(target, b) -= T(1);
            }
        }
        return total;
    }

    void backward(const std::vector<StepTape>& tapes, const std::vector<M>& dlogits, const std::vector<M>& rec_masks,
                  std::vector<M>& grads) const
    {
        const size_t L = net_.layers.size();
        const int batch = static_cast<int>(dlogits.front().cols());
        std::vector<M> dh_next(L);
        std::vector<M> dc_next(L);
        std::vector<M> dd_next(L);
        for (size_t l = 0; l < L; ++l) {
            dh_next[l] = M::Zero(net_.layers[l].width, batch);
            dc_next[l] = M::Zero(net_.layers[l].width, batch);
            dd_next[l] = M::Zero(net_.layers[l].width, batch);
        }
        size_t gi = 0;
        M* g_embed = net_.embedding.size() > 0 ? &grads[gi++] : nullptr;
        std::vector<M*> g_w(L);
        std::vector<M*> g_u(L);
        std::vector<M*> g_b(L);
        for (size_t l = 0; l < L; ++l) {
            g_w[l] = &grads[gi++];
            g_u[l] = &grads[gi++];
            g_b[l] = &grads[gi++];
        }
        M& g_hw = grads[gi++];
        M& g_hb = grads[gi++];

        for (size_t t = tapes.size(); t-- > 0;) {
            const StepTape& tape = tapes[t];
            const M& dz = dlogits[t];
            g_hw.noalias() += dz * tape.top.transpose();
            g_hb += dz.rowwise().sum();
            M dx = net_.head_w.transpose() * dz;
            if (tape.top_mask.size() > 0) {
                dx.array() *= tape.top_mask.array();
            }
            for (size_t l = L; l-- > 0;) {
                const LayerParams<T>& p = net_.layers[l];
                const M dh = dx + dh_next[l];
                M dpre(kBaseInputs * p.width, batch);
                for (size_t si = 0; si < net_.slots()[l].size(); ++si) {
                    const Slot& slot = net_.slots()[l][si];
                    const auto rows = [&](const M& m) -> B {
                        return m.block(slot.first_unit, 0, slot.units, batch).array();
                    };
                    CellGrads<T> cg;
                    cell_backward<T>(slot.cell, tape.cells[l][si], rows(dh), rows(dc_next[l]), rows(dd_next[l]), cg);
                    for (int k = 0; k < kBaseInputs; ++k) {
                        dpre.block(k * p.width + slot.first_unit, 0, slot.units, batch) = cg.base[k].matrix();
                    }
                    dc_next[l].block(slot.first_unit, 0, slot.units, batch) = cg.c_prev.matrix();
                    dd_next[l].block(slot.first_unit, 0, slot.units, batch) = cg.d_prev.matrix();
                }
                g_w[l]->noalias() += dpre * tape.x[l].transpose();
                g_u[l]->noalias() += dpre * tape.h_in[l].transpose();
                *g_b[l] += dpre.rowwise().sum();
                dh_next[l].noalias() = p.u.transpose() * dpre;
                if (rec_masks[l].size() > 0) {
                    dh_next[l].array() *= rec_masks[l].array();
                }
                dx.noalias() = p.w.transpose() * dpre;
                if (tape.x_mask[l].size() > 0) {
                    dx.array() *= tape.x_mask[l].array();
                }
            }
            if (g_embed) {
                for (int b = 0; b < batch; ++b) {
                    g_embed->col(tape.tokens[b]) += dx.col(b);
                }
            }
        }
    }

private:
    const Network<T>& net_;
};

template <typename T>
double sum_sq(const Matrix<T>& m)
{
    return m.template cast<double>().squaredNorm();
}

struct F1Counts {
    long long tp = 0;
    long long fp = 0;
    long long fn = 0;
};

} // namespace

template <typename T>
TrainingCurve train(Network<T>& net, const TaskData& data, const TrainConfig& config, const StepObserver& observer)
{
    check_train_config(config);
    using M = Matrix<T>;
    Runner<T> runner(net);
    Rng dropout(config.seed ^ 0xd1b54a32d192ed03ULL);
    std::vector<Matrix<T>*> params = net.parameters();
    std::vector<M> grads(params.size());
    std::vector<M> adam_m(params.size());
    std::vector<M> adam_v(params.size());
    for (size_t i = 0; i < params.size(); ++i) {
        adam_m[i] = M::Zero(params[i]->rows(), params[i]->cols());
        adam_v[i] = M::Zero(params[i]->rows(), params[i]->cols());
    }
    long long adam_step = 0;

    TrainingCurve curve;
    curve.metric = metric_for(data);
    const Streams streams(data, SplitId::Train, config.batch_size);
    for (int epoch = 1; epoch <= config.epochs; ++epoch) {
        const auto started = std::chrono::steady_clock::now();
        double lr = config.learning_rate;
        if (config.optimizer == Optimizer::Sgd && epoch > config.decay_after) {
            lr *= std::pow(config.lr_decay, epoch - config.decay_after);
        }
        auto state = net.zero_state(streams.batch);
        int batch_index = 0;
        for (size_t start = 0; start < streams.length; start += config.unroll_steps, ++batch_index) {
            const size_t steps = std::min<size_t>(config.unroll_steps, streams.length - start);
            std::vector<M> rec_masks;
            for (const auto& layer : net.layers) {
                rec_masks.push_back(Runner<T>::make_mask(&dropout, config.dropout_rec, layer.width, streams.batch));
            }
            std::vector<typename Runner<T>::StepTape> tapes(steps);
            std::vector<M> dlogits(steps);
            double loss = 0.0;
            long long count = 0;
            for (size_t i = 0; i < steps; ++i) {
                const size_t t = start + i;
                M x = runner.input(streams, t, &tapes[i].tokens);
                const M logits = runner.step(std::move(x), state, &tapes[i], &dropout, config.dropout_ff, &rec_masks);
                loss += runner.loss(streams, t, logits, dlogits[i]);
                for (int b = 0; b < streams.batch; ++b) {
                    count += streams.valid(b, t);
                }
            }
            const double mean_loss = loss / static_cast<double>(count);
            if (!std::isfinite(mean_loss)) {
                throw TrainingDiverged(epoch, batch_index, mean_loss);
            }
            const T scale = static_cast<T>(1.0 / static_cast<double>(count));
            for (auto& dz : dlogits) {
                dz *= scale;
            }
            for (size_t i = 0; i < params.size(); ++i) {
                grads[i] = M::Zero(params[i]->rows(), params[i]->cols());
            }
            runner.backward(tapes, dlogits, rec_masks, grads);
            double norm_sq = 0.0;
            for (size_t i = 0; i < params.size(); ++i) {
                if (config.l2 > 0.0) {
                    grads[i] += static_cast<T>(config.l2) * *params[i];
                }
                norm_sq += sum_sq(grads[i]);
            }
            const double norm = std::sqrt(norm_sq);
            if (!std::isfinite(norm)) {
                throw TrainingDiverged(epoch, batch_index, norm);
            }
            double clipped = norm;
            if (norm > config.grad_clip_norm) {
                const T factor = static_cast<T>(config.grad_clip_norm / norm);
                clipped = 0.0;
                for (auto& g : grads) {
                    g *= factor;
                    clipped += sum_sq(g);
                }
                clipped = std::sqrt(clipped);
            }
            if (observer) {
                observer({epoch, batch_index, mean_loss, norm, clipped});
            }
            if (config.optimizer == Optimizer::Sgd) {
                for (size_t i = 0; i < params.size(); ++i) {
                    *params[i] -= static_cast<T>(lr) * grads[i];
                }
            } else {
                ++adam_step;
                const double b1 = 0.9;
                const double b2 = 0.999;
                const T c1 = static_cast<T>(1.0 / (1.0 - std::pow(b1, adam_step)));
                const T c2 = static_cast<T>(1.0 / (1.0 - std::pow(b2, adam_step)));
                for (size_t i = 0; i < params.size(); ++i) {
                    adam_m[i] = T(b1) * adam_m[i] + T(1 - b1) * grads[i];
                    adam_v[i] = T(b2) * adam_v[i] + T(1 - b2) * grads[i].cwiseProduct(grads[i]);
                    params[i]->array() -= static_cast<T>(lr) * (adam_m[i].array() * c1) /
                                          ((adam_v[i].array() * c2).sqrt() + T(1e-8));
                }
            }
        }
        const double metric = eval_metric(net, data, SplitId::Valid, config.eval_batch);
        const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
        curve.epochs.push_back({epoch, metric, seconds});
    }
    return curve;
}

template <typename T>
double eval_loss(const Network<T>& net, const TaskData& data, SplitId split, int eval_batch)
{
    Runner<T> runner(net);
    const Streams streams(data, split, eval_batch);
    auto state = net.zero_state(streams.batch);
    double total = 0.0;
    Matrix<T> grad;
    for (size_t t = 0; t < streams.length; ++t) {
        const Matrix<T> logits = runner.step(runner.input(streams, t, nullptr), state, nullptr, nullptr, 0.0, nullptr);
        total += runner.loss(streams, t, logits, grad);
    }
    return total / static_cast<double>(streams.total);
}

template <typename T>
double eval_perplexity(const Network<T>& net, const TaskData& data, SplitId split, int eval_batch)
{
    if (data.is_music()) {
        throw std::invalid_argument("perplexity needs a token task");
    }
    return std::exp(eval_loss(net, data, split, eval_batch));
}

template <typename T>
double eval_f1(const Network<T>& net, const TaskData& data, SplitId split, double threshold, int eval_batch)
{
    if (!data.is_music()) {
        throw std::invalid_argument("F1 needs the music task");
    }
    Runner<T> runner(net);
    const Streams streams(data, split, eval_batch);
    const RollSplit& roll = data.roll_split(split);
    auto state = net.zero_state(streams.batch);
    F1Counts counts;
    for (size_t t = 0; t < streams.length; ++t) {
        const Matrix<T> logits = runner.step(runner.input(streams, t, nullptr), state, nullptr, nullptr, 0.0, nullptr);
        for (int b = 0; b < streams.batch; ++b) {
            if (!streams.valid(b, t)) {
                continue;
            }
            const size_t pos = streams.position(b, t);
            for (int p = 0; p < roll.pitches; ++p) {
                const bool predicted = sigmoid(static_cast<double>(logits(p, b))) >= threshold;
                const bool actual = roll.at(p, pos + 1) != 0;
                counts.tp += predicted && actual;
                counts.fp += predicted && !actual;
                counts.fn += !predicted && actual;
            }
        }
    }
    return f1_score(counts.tp, counts.fp, counts.fn);
}

template <typename T>
double eval_metric(const Network<T>& net, const TaskData& data, SplitId split, int eval_batch)
{
    return data.is_music() ? eval_f1(net, data, split, 0.5, eval_batch) : eval_perplexity(net, data, split, eval_batch);
}

template <typename T>
Matrix<T> run_tokens(const Network<T>& net, std::span<const int> tokens, typename Network<T>::State& state)
{
    Runner<T> runner(net);
    Matrix<T> out(net.output_dim(), static_cast<Eigen::Index>(tokens.size()));
    for (size_t t = 0; t < tokens.size(); ++t) {
        Matrix<T> x = net.embedding.col(tokens[t]);
        out.col(t) = runner.step(std::move(x), state, nullptr, nullptr, 0.0, nullptr);
    }
    return out;
}

template <typename T>
std::vector<double> token_log_probs(const Network<T>& net, const TokenSplit& split)
{
    auto state = net.zero_state(1);
    const Matrix<T> logits = run_tokens(net, std::span<const int>(split.inputs), state);
    std::vector<double> out;
    for (size_t t = 0; t < split.size(); ++t) {
        const auto col = logits.col(t).template cast<double>();
        const double mx = col.maxCoeff();
        const double log_z = mx + std::log((col.array() - mx).exp().sum());
        out.push_back(col(split.targets[t]) - log_z);
    }
    return out;
}

namespace {

template <typename T>
TrainResult train_in(const NetworkSpec& spec, const std::vector<NodeTree>& trees, const TaskData& data,
                     const TrainConfig& config, bool evaluate_test, const StepObserver& observer)
{
    Network<T> net = build_network<T>(spec, trees);
    net.initialize(config.seed, config.init_scale);
    TrainResult result;
    result.parameters = net.parameter_count();
    result.curve = train(net, data, config, observer);
    if (evaluate_test) {
        result.test_metric = eval_metric(net, data, SplitId::Test, config.eval_batch);
    }
    return result;
}

} // namespace

TrainResult train_trees(const NetworkSpec& spec, const std::vector<NodeTree>& trees, const TaskData& data,
                        const TrainConfig& config, Precision precision, bool evaluate_test, const StepObserver& observer)
{
    return precision == Precision::F32 ? train_in<float>(spec, trees, data, config, evaluate_test, observer)
                                       : train_in<double>(spec, trees, data, config, evaluate_test, observer);
}

std::vector<int> select_diverse_indices(const std::vector<NodeTree>& genomes, const std::vector<double>& fitnesses,
                                        int pool_size, double top_fraction)
{
    if (genomes.size() != fitnesses.size()) {
        throw std::invalid_argument("select_diverse_pool: one fitness per genome required");
    }
    if (pool_size <= 0 || genomes.size() < static_cast<size_t>(pool_size)) {
        throw std::invalid_argument("select_diverse_pool: need at least " + std::to_string(pool_size) +
                                    " genomes, got " + std::to_string(genomes.size()));
    }
    std::vector<int> order(genomes.size());
    std::iota(order.begin(), order.end(), 0);
    auto key = [&](int i) { return std::isfinite(fitnesses[i]) ? fitnesses[i] : std::numeric_limits<double>::max(); };
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return key(a) < key(b); });
    const size_t top = static_cast<size_t>(std::ceil(top_fraction * static_cast<double>(genomes.size())));
    order.resize(std::clamp<size_t>(top, pool_size, genomes.size()));

    std::vector<int> picked{order[0]};
    std::vector<double> nearest(order.size());
    std::vector<char> used(order.size(), 0);
    used[0] = 1;
    for (size_t i = 0; i < order.size(); ++i) {
        nearest[i] = tree_distance(genomes[order[i]], genomes[order[0]]);
    }
    while (static_cast<int>(picked.size()) < pool_size) {
        size_t best = 0;
        double best_d = -1.0;
        for (size_t i = 0; i < order.size(); ++i) {
            if (!used[i] && nearest[i] > best_d) {
                best = i;
                best_d = nearest[i];
            }
        }
        used[best] = 1;
        picked.push_back(order[best]);
        for (size_t i = 0; i < order.size(); ++i) {
            if (!used[i]) {
                nearest[i] = std::min(nearest[i], tree_distance(genomes[order[i]], genomes[order[best]]));
            }
        }
    }
    return picked;
}

std::vector<NodeTree> select_diverse_pool(const std::vector<NodeTree>& genomes, const std::vector<double>& fitnesses,
                                          int pool_size, double top_fraction)
{
    std::vector<NodeTree> out;
    for (int i : select_diverse_indices(genomes, fitnesses, pool_size, top_fraction)) {
        out.push_back(genomes[i]);
    }
    return out;
}

#define TREECELL_INSTANTIATE(T)                                                                                        \
    template class Network<T>;                                                                                         \
    template Network<T> build_network<T>(const NetworkSpec&, const std::vector<NodeTree>&, const TreeLimits&);         \
    template TrainingCurve train<T>(Network<T>&, const TaskData&, const TrainConfig&, const StepObserver&);            \
    template double eval_loss<T>(const Network<T>&, const TaskData&, SplitId, int);                                    \
    template double eval_perplexity<T>(const Network<T>&, const TaskData&, SplitId, int);                              \
    template double eval_f1<T>(const Network<T>&, const TaskData&, SplitId, double, int);                              \
    template double eval_metric<T>(const Network<T>&, const TaskData&, SplitId, int);                                  \
    template std::vector<double> token_log_probs<T>(const Network<T>&, const TokenSplit&);                             \
    template Matrix<T> run_tokens<T>(const Network<T>&, std::span<const int>, typename Network<T>::State&);

TREECELL_INSTANTIATE(float)
TREECELL_INSTANTIATE(double)

#undef TREECELL_INSTANTIATE

} // namespace treecell
