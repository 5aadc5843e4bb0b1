// SPDX-License-Identifier: Apache-2.0

#include "treecell/meta.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "json.hpp"

#include "treecell/io.hpp"

namespace treecell {

using Mat = Matrix<double>;
using json = nlohmann::json;

namespace {

const CompiledCell& lstm_cell()
{
    static const CompiledCell cell = compile(lstm_reference_tree());
    return cell;
}

struct StepRecord {
    Mat x;
    Mat h_in;
    CellTape<double> tape;
};

using StackRecords = std::vector<std::vector<StepRecord>>; // [step][layer]

struct StackState {
    std::vector<Mat> h, c, d;

    StackState(int layers, int units, int batch)
    {
        for (int l = 0; l < layers; ++l) {
            h.push_back(Mat::Zero(units, batch));
            c.push_back(Mat::Zero(units, batch));
            d.push_back(Mat::Zero(units, batch));
        }
    }
};

void layer_forward(const LayerParams<double>& p, const Mat& x, Mat& h, Mat& c, Mat& d, StepRecord* record)
{
    Mat pre = p.w * x + p.u * h;
    pre.colwise() += p.b.col(0);
    std::array<Block<double>, kBaseInputs> base;
    for (int k = 0; k < kBaseInputs; ++k) {
        base[k] = pre.middleRows(k * p.width, p.width).array();
    }
    CellTape<double> tape;
    const Block<double> c_prev = c.array();
    const Block<double> d_prev = d.array();
    cell_forward<double>(lstm_cell(), base, c_prev, d_prev, tape);
    if (record) {
        record->x = x;
        record->h_in = h;
    }
    h = tape.h(lstm_cell()).matrix();
    c = tape.c(lstm_cell()).matrix();
    d = tape.d(lstm_cell()).matrix();
    if (record) {
        record->tape = std::move(tape);
    }
}

void run_stack(const std::vector<LayerParams<double>>& stack, const Mat& x0, StackState& state,
               std::vector<StepRecord>* records)
{
    Mat x = x0;
    if (records) {
        records->resize(stack.size());
    }
    for (size_t l = 0; l < stack.size(); ++l) {
        layer_forward(stack[l], x, state.h[l], state.c[l], state.d[l], records ? &(*records)[l] : nullptr);
        x = state.h[l];
    }
}

// Encoder inputs: one row per prefix epoch, one column per sample.
Mat encode_inputs(const std::vector<const CurvePrefix*>& prefixes)
{
    Mat x(kPrefixEpochs, static_cast<Eigen::Index>(prefixes.size()));
    for (size_t b = 0; b < prefixes.size(); ++b) {
        const double last = std::log((*prefixes[b])[kPrefixEpochs - 1]);
        for (int e = 0; e < kPrefixEpochs; ++e) {
            x(e, b) = std::log((*prefixes[b])[e]) - last;
        }
    }
    return x;
}

struct Pass {
    StackRecords encoder;
    StackRecords decoder;
    Mat top;
    Mat y;
};

Mat member_forward(const MetaMember& m, const Mat& inputs, Pass* pass)
{
    const int layers = static_cast<int>(m.encoder.size());
    const int units = m.encoder.front().width;
    const int batch = static_cast<int>(inputs.cols());
    StackState state(layers, units, batch);
    if (pass) {
        pass->encoder.resize(kPrefixEpochs);
        pass->decoder.resize(m.decoder_length);
    }
    for (int t = 0; t < kPrefixEpochs; ++t) {
        run_stack(m.encoder, inputs.row(t), state, pass ? &pass->encoder[t] : nullptr);
    }
    const Mat zero = Mat::Zero(1, batch);
    for (int t = 0; t < m.decoder_length; ++t) {
        run_stack(m.decoder, zero, state, pass ? &pass->decoder[t] : nullptr);
    }
    Mat y = m.head_w * state.h.back();
    y.array() += m.head_b(0, 0);
    if (pass) {
        pass->top = state.h.back();
        pass->y = y;
    }
    return y;
}

struct StackGrads {
    std::vector<Mat*> w, u, b;
};

void stack_backward(const std::vector<LayerParams<double>>& stack, const StackRecords& records, StackGrads& grads,
                    std::vector<Mat>& dh, std::vector<Mat>& dc, std::vector<Mat>& dd, Mat* top_grad)
{
    const int layers = static_cast<int>(stack.size());
    for (size_t t = records.size(); t-- > 0;) {
        Mat from_above;
        if (top_grad && t + 1 == records.size()) {
            from_above = *top_grad;
        }
        for (int l = layers - 1; l >= 0; --l) {
            const LayerParams<double>& p = stack[l];
            const StepRecord& r = records[t][l];
            Mat total = dh[l];
            if (from_above.size() > 0) {
                total += from_above;
            }
            CellGrads<double> cg;
            cell_backward<double>(lstm_cell(), r.tape, total.array(), dc[l].array(), dd[l].array(), cg);
            Mat dpre(kBaseInputs * p.width, total.cols());
            for (int k = 0; k < kBaseInputs; ++k) {
                dpre.middleRows(k * p.width, p.width) = cg.base[k].matrix();
            }
            grads.w[l]->noalias() += dpre * r.x.transpose();
            grads.u[l]->noalias() += dpre * r.h_in.transpose();
            *grads.b[l] += dpre.rowwise().sum();
            dh[l].noalias() = p.u.transpose() * dpre;
            dc[l] = cg.c_prev.matrix();
            dd[l] = cg.d_prev.matrix();
            from_above.noalias() = p.w.transpose() * dpre;
        }
    }
}

void member_backward(const MetaMember& m, const Pass& pass, const Mat& dy, std::vector<Mat>& grads)
{
    const int layers = static_cast<int>(m.encoder.size());
    const int units = m.encoder.front().width;
    const Eigen::Index batch = dy.cols();
    size_t gi = 0;
    StackGrads enc;
    StackGrads dec;
    for (StackGrads* g : {&enc, &dec}) {
        for (int l = 0; l < layers; ++l) {
            g->w.push_back(&grads[gi++]);
            g->u.push_back(&grads[gi++]);
            g->b.push_back(&grads[gi++]);
        }
    }
    Mat& g_head_w = grads[gi++];
    Mat& g_head_b = grads[gi++];
    g_head_w.noalias() += dy * pass.top.transpose();
    g_head_b(0, 0) += dy.sum();
    Mat top_grad = m.head_w.transpose() * dy;

    std::vector<Mat> dh(layers, Mat::Zero(units, batch));
    std::vector<Mat> dc(layers, Mat::Zero(units, batch));
    std::vector<Mat> dd(layers, Mat::Zero(units, batch));
    stack_backward(m.decoder, pass.decoder, dec, dh, dc, dd, &top_grad);
    stack_backward(m.encoder, pass.encoder, enc, dh, dc, dd, nullptr);
}

// The reference cell's forget gate reads base input 1.
constexpr int kForgetInput = 1;

std::vector<LayerParams<double>> make_stack(int layers, int units, int input_dim, Rng& rng, double scale,
                                            double forget_bias)
{
    auto fill = [&](Mat& m) {
        for (Eigen::Index j = 0; j < m.cols(); ++j) {
            for (Eigen::Index i = 0; i < m.rows(); ++i) {
                m(i, j) = rng.uniform(-scale, scale);
            }
        }
    };
    std::vector<LayerParams<double>> stack;
    for (int l = 0; l < layers; ++l) {
        LayerParams<double> p;
        p.width = units;
        p.input_dim = l == 0 ? input_dim : units;
        p.w.resize(kBaseInputs * units, p.input_dim);
        p.u.resize(kBaseInputs * units, units);
        p.b = Mat::Zero(kBaseInputs * units, 1);
        p.b.middleRows(kForgetInput * units, units).setConstant(forget_bias);
        fill(p.w);
        fill(p.u);
        stack.push_back(std::move(p));
    }
    return stack;
}

MetaMember make_member(const MetaConfig& config, int decoder_length, Rng& rng)
{
    MetaMember m;
    m.decoder_length = decoder_length;
    m.encoder = make_stack(config.layers, config.units, 1, rng, config.init_scale, config.forget_bias);
    m.decoder = make_stack(config.layers, config.units, 1, rng, config.init_scale, config.forget_bias);
    m.head_w.resize(1, config.units);
    for (Eigen::Index i = 0; i < m.head_w.size(); ++i) {
        m.head_w(i) = rng.uniform(-config.init_scale, config.init_scale);
    }
    m.head_b = Mat::Zero(1, 1);
    return m;
}

std::vector<double> member_predict(const MetaMember& m, const std::vector<const CurvePrefix*>& prefixes)
{
    const Mat y = member_forward(m, encode_inputs(prefixes), nullptr);
    std::vector<double> out;
    for (size_t b = 0; b < prefixes.size(); ++b) {
        out.push_back((*prefixes[b])[kPrefixEpochs - 1] * std::exp(y(0, b)));
    }
    return out;
}

void check_positive(const CurveSample& s, size_t index)
{
    for (double v : s.prefix) {
        if (!(v > 0.0) || !std::isfinite(v)) {
            throw std::invalid_argument("sample " + std::to_string(index) + ": prefix values must be positive");
        }
    }
    if (!(s.target > 0.0) || !std::isfinite(s.target)) {
        throw std::invalid_argument("sample " + std::to_string(index) + ": target must be positive");
    }
}

MetaMember train_member(const MetaConfig& config, int decoder_length, const std::vector<const CurveSample*>& train,
                        const std::vector<const CurveSample*>& valid, Rng& rng)
{
    MetaMember m = make_member(config, decoder_length, rng);
    std::vector<Mat*> params = m.parameters();
    std::vector<Mat> adam_m;
    std::vector<Mat> adam_v;
    for (Mat* p : params) {
        adam_m.push_back(Mat::Zero(p->rows(), p->cols()));
        adam_v.push_back(Mat::Zero(p->rows(), p->cols()));
    }
    std::vector<const CurvePrefix*> valid_prefixes;
    std::vector<double> valid_targets;
    for (const CurveSample* s : valid) {
        valid_prefixes.push_back(&s->prefix);
        valid_targets.push_back(s->target);
    }
    MetaMember best = m;
    best.best_valid_mae = mae_percent(member_predict(m, valid_prefixes), valid_targets);
    int since_best = 0;
    long long step = 0;
    std::vector<size_t> order(train.size());
    std::iota(order.begin(), order.end(), 0);
    for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
        for (size_t i = order.size(); i > 1; --i) {
            std::swap(order[i - 1], order[rng.index(i)]);
        }
        for (size_t start = 0; start < order.size(); start += config.batch_size) {
            const size_t end = std::min(order.size(), start + config.batch_size);
            std::vector<const CurveSample*> batch;
            for (size_t i = start; i < end; ++i) {
                batch.push_back(train[order[i]]);
            }
            std::vector<Mat> grads;
            member_loss(m, batch, &grads);
            double norm = 0.0;
            for (const Mat& g : grads) {
                norm += g.squaredNorm();
            }
            norm = std::sqrt(norm);
            const double clip = norm > config.grad_clip_norm ? config.grad_clip_norm / norm : 1.0;
            ++step;
            const double c1 = 1.0 / (1.0 - std::pow(0.9, step));
            const double c2 = 1.0 / (1.0 - std::pow(0.999, step));
            for (size_t i = 0; i < params.size(); ++i) {
                const Mat g = grads[i] * clip;
                adam_m[i] = 0.9 * adam_m[i] + 0.1 * g;
                adam_v[i] = 0.999 * adam_v[i] + 0.001 * g.cwiseProduct(g);
                params[i]->array() -=
                    config.learning_rate * (adam_m[i].array() * c1) / ((adam_v[i].array() * c2).sqrt() + 1e-8);
            }
        }
        const double valid_mae = mae_percent(member_predict(m, valid_prefixes), valid_targets);
        m.epochs_trained = epoch;
        if (valid_mae < best.best_valid_mae) {
            best = m;
            best.best_valid_mae = valid_mae;
            since_best = 0;
        } else if (++since_best >= config.patience) {
            break;
        }
    }
    return best;
}

json matrix_json(const Mat& m)
{
    return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", std::vector<double>(m.data(), m.data() + m.size())}};
}

Mat matrix_from(const json& j)
{
    Mat m(j.at("rows").get<Eigen::Index>(), j.at("cols").get<Eigen::Index>());
    const auto data = j.at("data").get<std::vector<double>>();
    if (static_cast<Eigen::Index>(data.size()) != m.size()) {
        throw std::runtime_error("meta model: matrix size mismatch");
    }
    std::copy(data.begin(), data.end(), m.data());
    return m;
}

json stack_json(const std::vector<LayerParams<double>>& stack)
{
    json out = json::array();
    for (const auto& p : stack) {
        out.push_back({{"w", matrix_json(p.w)}, {"u", matrix_json(p.u)}, {"b", matrix_json(p.b)}});
    }
    return out;
}

std::vector<LayerParams<double>> stack_from(const json& j)
{
    std::vector<LayerParams<double>> stack;
    for (const auto& layer : j) {
        LayerParams<double> p;
        p.w = matrix_from(layer.at("w"));
        p.u = matrix_from(layer.at("u"));
        p.b = matrix_from(layer.at("b"));
        p.width = static_cast<int>(p.u.cols());
        p.input_dim = static_cast<int>(p.w.cols());
        if (p.u.rows() != kBaseInputs * p.width || p.w.rows() != p.u.rows() || p.b.rows() != p.u.rows()) {
            throw std::runtime_error("meta model: inconsistent layer shapes");
        }
        stack.push_back(std::move(p));
    }
    return stack;
}

constexpr const char* kFormat = "treecell-meta";
constexpr int kVersion = 1;

} // namespace

double member_loss(const MetaMember& member, const std::vector<const CurveSample*>& samples, std::vector<Mat>* grads)
{
    std::vector<const CurvePrefix*> prefixes;
    for (const CurveSample* s : samples) {
        prefixes.push_back(&s->prefix);
    }
    Pass pass;
    const Mat y = member_forward(member, encode_inputs(prefixes), grads ? &pass : nullptr);
    const double n = static_cast<double>(samples.size());
    double loss = 0.0;
    Mat dy(1, static_cast<Eigen::Index>(samples.size()));
    for (size_t i = 0; i < samples.size(); ++i) {
        const CurveSample& s = *samples[i];
        const double pred = s.prefix[kPrefixEpochs - 1] * std::exp(y(0, i));
        loss += std::abs(pred - s.target) / s.target;
        const double sign = pred > s.target ? 1.0 : (pred < s.target ? -1.0 : 0.0);
        dy(0, i) = sign * pred / (s.target * n);
    }
    if (grads) {
        grads->clear();
        for (const Mat* p : member.parameters()) {
            grads->push_back(Mat::Zero(p->rows(), p->cols()));
        }
        member_backward(member, pass, dy, *grads);
    }
    return loss / n;
}

std::vector<const Mat*> MetaMember::parameters() const
{
    std::vector<const Mat*> out;
    for (Mat* p : const_cast<MetaMember*>(this)->parameters()) {
        out.push_back(p);
    }
    return out;
}

std::vector<Mat*> MetaMember::parameters()
{
    std::vector<Mat*> out;
    for (auto* stack : {&encoder, &decoder}) {
        for (auto& p : *stack) {
            out.push_back(&p.w);
            out.push_back(&p.u);
            out.push_back(&p.b);
        }
    }
    out.push_back(&head_w);
    out.push_back(&head_b);
    return out;
}

MetaModel::MetaModel(MetaConfig config, std::vector<MetaMember> members)
    : config_(std::move(config))
    , members_(std::move(members))
{
}

std::vector<double> MetaModel::member_predictions(const CurvePrefix& prefix) const
{
    if (!trained()) {
        throw std::logic_error("meta model is not trained");
    }
    for (double v : prefix) {
        if (!(v > 0.0) || !std::isfinite(v)) {
            throw std::invalid_argument("prefix values must be positive");
        }
    }
    std::vector<double> out;
    for (const MetaMember& m : members_) {
        out.push_back(member_predict(m, {&prefix})[0]);
    }
    return out;
}

double MetaModel::predict(const CurvePrefix& prefix) const
{
    const std::vector<double> p = member_predictions(prefix);
    return std::accumulate(p.begin(), p.end(), 0.0) / static_cast<double>(p.size());
}

std::string MetaModel::serialize() const
{
    json members = json::array();
    for (const MetaMember& m : members_) {
        members.push_back({{"decoder_length", m.decoder_length},
                           {"epochs_trained", m.epochs_trained},
                           {"best_valid_mae", m.best_valid_mae},
                           {"encoder", stack_json(m.encoder)},
                           {"decoder", stack_json(m.decoder)},
                           {"head_w", matrix_json(m.head_w)},
                           {"head_b", matrix_json(m.head_b)}});
    }
    const json out = {{"format", kFormat},
                      {"version", kVersion},
                      {"config",
                       {{"layers", config_.layers},
                        {"units", config_.units},
                        {"decoder_lengths", config_.decoder_lengths},
                        {"learning_rate", config_.learning_rate},
                        {"batch_size", config_.batch_size},
                        {"max_epochs", config_.max_epochs},
                        {"patience", config_.patience},
                        {"valid_fraction", config_.valid_fraction},
                        {"init_scale", config_.init_scale},
                        {"forget_bias", config_.forget_bias},
                        {"grad_clip_norm", config_.grad_clip_norm},
                        {"seed", config_.seed}}},
                      {"members", members}};
    return out.dump() + "\n";
}

MetaModel MetaModel::deserialize(const std::string& text)
{
    try {
        const json j = json::parse(text);
        if (j.at("format") != kFormat) {
            throw std::runtime_error("not a meta model file");
        }
        if (j.at("version") != kVersion) {
            throw std::runtime_error("unsupported meta model version " + j.at("version").dump());
        }
        const json& c = j.at("config");
        MetaConfig config;
        config.layers = c.at("layers");
        config.units = c.at("units");
        config.decoder_lengths = c.at("decoder_lengths");
        config.learning_rate = c.at("learning_rate");
        config.batch_size = c.at("batch_size");
        config.max_epochs = c.at("max_epochs");
        config.patience = c.at("patience");
        config.valid_fraction = c.at("valid_fraction");
        config.init_scale = c.at("init_scale");
        config.forget_bias = c.at("forget_bias");
        config.grad_clip_norm = c.at("grad_clip_norm");
        config.seed = c.at("seed");
        std::vector<MetaMember> members;
        for (const json& mj : j.at("members")) {
            MetaMember m;
            m.decoder_length = mj.at("decoder_length");
            m.epochs_trained = mj.at("epochs_trained");
            m.best_valid_mae = mj.at("best_valid_mae");
            m.encoder = stack_from(mj.at("encoder"));
            m.decoder = stack_from(mj.at("decoder"));
            m.head_w = matrix_from(mj.at("head_w"));
            m.head_b = matrix_from(mj.at("head_b"));
            if (m.encoder.empty() || m.decoder.size() != m.encoder.size()) {
                throw std::runtime_error("meta model: encoder and decoder depth differ");
            }
            members.push_back(std::move(m));
        }
        return MetaModel(config, std::move(members));
    } catch (const json::exception& e) {
        throw std::runtime_error(std::string("corrupt meta model: ") + e.what());
    }
}

void MetaModel::save(const std::filesystem::path& path) const
{
    write_file_atomic(path, serialize());
}

MetaModel MetaModel::load(const std::filesystem::path& path)
{
    return deserialize(read_text_file(path));
}

MetaModel train_meta(const std::vector<CurveSample>& samples, const MetaConfig& config)
{
    if (samples.size() < 100) {
        throw InsufficientData("meta training needs at least 100 samples, got " + std::to_string(samples.size()));
    }
    if (config.layers <= 0 || config.units <= 0 || config.batch_size <= 0 || config.valid_fraction <= 0.0 ||
        config.valid_fraction >= 1.0) {
        throw std::invalid_argument("meta config: layers, units, batch_size must be positive and valid_fraction in (0, 1)");
    }
    for (size_t i = 0; i < samples.size(); ++i) {
        check_positive(samples[i], i);
    }
    Rng rng(config.seed);
    std::vector<size_t> order(samples.size());
    std::iota(order.begin(), order.end(), 0);
    for (size_t i = order.size(); i > 1; --i) {
        std::swap(order[i - 1], order[rng.index(i)]);
    }
    const size_t n_valid = static_cast<size_t>(std::ceil(config.valid_fraction * static_cast<double>(samples.size())));
    std::vector<const CurveSample*> valid;
    std::vector<const CurveSample*> train;
    for (size_t i = 0; i < order.size(); ++i) {
        (i < n_valid ? valid : train).push_back(&samples[order[i]]);
    }
    std::vector<MetaMember> members;
    for (int length : config.decoder_lengths) {
        Rng member_rng(rng.split());
        members.push_back(train_member(config, length, train, valid, member_rng));
    }
    return MetaModel(config, std::move(members));
}

double predict_final(const MetaModel& model, const CurvePrefix& prefix)
{
    return model.predict(prefix);
}

double baseline_epoch10(const CurvePrefix& prefix)
{
    return prefix[kPrefixEpochs - 1];
}

double mae_percent(const std::vector<double>& predictions, const std::vector<double>& targets)
{
    if (predictions.size() != targets.size() || targets.empty()) {
        throw std::invalid_argument("mae_percent: need equal, non-empty inputs");
    }
    double sum = 0.0;
    for (size_t i = 0; i < targets.size(); ++i) {
        sum += std::abs(predictions[i] - targets[i]) / targets[i];
    }
    return 100.0 * sum / static_cast<double>(targets.size());
}

double kendall_tau(const std::vector<double>& a, const std::vector<double>& b)
{
    if (a.size() != b.size() || a.size() < 2) {
        throw std::invalid_argument("kendall_tau: need two equal-length sequences of at least 2");
    }
    long long concordant = 0;
    long long discordant = 0;
    for (size_t i = 0; i < a.size(); ++i) {
        for (size_t j = i + 1; j < a.size(); ++j) {
            const double s = (a[i] - a[j]) * (b[i] - b[j]);
            concordant += s > 0;
            discordant += s < 0;
        }
    }
    const double pairs = static_cast<double>(a.size()) * static_cast<double>(a.size() - 1) / 2.0;
    return static_cast<double>(concordant - discordant) / pairs;
}

std::vector<double> synthetic_curve(double level, double gap, double rate, Rng& rng, const CurveFamily& family)
{
    std::vector<double> v;
    for (int e = 1; e <= family.final_epoch; ++e) {
        v.push_back((level + gap * std::exp(-rate * e)) * (1.0 + family.noise * rng.normal()));
    }
    return v;
}

std::vector<CurveSample> synthetic_curves(int count, uint64_t seed, const CurveFamily& family)
{
    Rng rng(seed);
    auto log_uniform = [&](double lo, double hi) { return std::exp(rng.uniform(std::log(lo), std::log(hi))); };
    std::vector<CurveSample> out;
    for (int i = 0; i < count; ++i) {
        const double level = rng.uniform(family.level_min, family.level_max);
        const double gap = log_uniform(family.gap_min, family.gap_max);
        const double rate = log_uniform(family.rate_min, family.rate_max);
        const std::vector<double> v = synthetic_curve(level, gap, rate, rng, family);
        CurveSample s;
        std::copy(v.begin(), v.begin() + kPrefixEpochs, s.prefix.begin());
        s.target = v.back();
        out.push_back(s);
    }
    return out;
}

std::vector<CurveSample> read_curve_csv(const std::filesystem::path& path)
{
    std::istringstream in(read_text_file(path));
    std::vector<CurveSample> out;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') {
            line.pop_back();
        }
        if (line.empty()) {
            continue;
        }
        std::vector<std::string> fields;
        std::stringstream ss(line);
        std::string field;
        while (std::getline(ss, field, ',')) {
            fields.push_back(field);
        }
        std::vector<double> values;
        try {
            for (const auto& f : fields) {
                size_t used = 0;
                values.push_back(std::stod(f, &used));
                if (used != f.size()) {
                    throw std::invalid_argument(f);
                }
            }
        } catch (const std::exception&) {
            if (line_no == 1) {
                continue; // header
            }
            throw std::runtime_error(path.string() + ":" + std::to_string(line_no) + ": non-numeric field");
        }
        if (values.size() != kPrefixEpochs + 1) {
            throw std::runtime_error(path.string() + ":" + std::to_string(line_no) + ": expected 11 columns, got " +
                                     std::to_string(values.size()));
        }
        CurveSample s;
        std::copy(values.begin(), values.begin() + kPrefixEpochs, s.prefix.begin());
        s.target = values.back();
        out.push_back(s);
    }
    return out;
}

void write_curve_samples(const std::filesystem::path& path, const std::vector<CurveSample>& samples)
{
    std::ostringstream out;
    for (int e = 1; e <= kPrefixEpochs; ++e) {
        out << "epoch" << e << ",";
    }
    out << "final\n";
    char buf[32];
    for (const CurveSample& s : samples) {
        for (double v : s.prefix) {
            std::snprintf(buf, sizeof buf, "%.17g,", v);
            out << buf;
        }
        std::snprintf(buf, sizeof buf, "%.17g\n", s.target);
        out << buf;
    }
    write_file_atomic(path, out.str());
}

} // namespace treecell
