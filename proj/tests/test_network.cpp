// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>

#include "doctest.h"
#include "support/random_trees.hpp"
#include "treecell/genetic_ops.hpp"
#include "treecell/network.hpp"

using namespace treecell;

namespace {

const std::string kDataDir = TREECELL_DATA_DIR;

TrainConfig quiet_config()
{
    TrainConfig c;
    c.dropout_ff = 0.0;
    c.dropout_rec = 0.0;
    c.l2 = 0.0;
    c.grad_clip_norm = 1e9;
    c.epochs = 1;
    return c;
}

TaskData tiny_memory(int train_length = 40, int lag = 2)
{
    SyntheticConfig s;
    s.vocab = 5;
    s.lag = lag;
    s.train_length = train_length;
    s.valid_length = 30;
    s.test_length = 30;
    s.seed = 3;
    return synthetic_memory(s);
}

// Straightforward per-unit forward pass through cell_step, kept separate
// from the batched implementation.
std::vector<double> reference_log_probs(const Network<double>& net, const TokenSplit& split)
{
    const size_t L = net.layers.size();
    std::vector<CellState> state;
    for (const auto& p : net.layers) {
        state.push_back(CellState::zeros(p.width));
    }
    std::vector<double> out;
    for (size_t t = 0; t < split.size(); ++t) {
        Eigen::VectorXd x = net.embedding.col(split.inputs[t]);
        for (size_t l = 0; l < L; ++l) {
            const auto& p = net.layers[l];
            const Eigen::VectorXd h_prev = Eigen::Map<const Eigen::VectorXd>(state[l].h.data(), p.width);
            const Eigen::VectorXd pre = p.w * x + p.u * h_prev + p.b;
            CellState next = CellState::zeros(p.width);
            for (const Slot& slot : net.slots()[l]) {
                std::array<std::vector<double>, kBaseInputs> base;
                for (int k = 0; k < kBaseInputs; ++k) {
                    for (int j = 0; j < slot.units; ++j) {
                        base[k].push_back(pre(k * p.width + slot.first_unit + j));
                    }
                }
                CellState part = CellState::zeros(slot.units);
                for (int j = 0; j < slot.units; ++j) {
                    part.c[j] = state[l].c[slot.first_unit + j];
                    part.d[j] = state[l].d[slot.first_unit + j];
                }
                const CellState r = cell_step(slot.cell, base, part);
                std::copy(r.h.begin(), r.h.end(), next.h.begin() + slot.first_unit);
                std::copy(r.c.begin(), r.c.end(), next.c.begin() + slot.first_unit);
                std::copy(r.d.begin(), r.d.end(), next.d.begin() + slot.first_unit);
            }
            state[l] = next;
            x = Eigen::Map<const Eigen::VectorXd>(next.h.data(), p.width);
        }
        const Eigen::VectorXd logits = net.head_w * x + net.head_b;
        double z = 0.0;
        for (Eigen::Index i = 0; i < logits.size(); ++i) {
            z += std::exp(logits(i));
        }
        out.push_back(logits(split.targets[t]) - std::log(z));
    }
    return out;
}

const std::vector<NodeTree>& five_trees()
{
    static const std::vector<NodeTree> trees = [] {
        std::vector<NodeTree> t{seed_tree(), lstm_reference_tree()};
        for (const NodeTree& g : testing::random_genomes(41, 3, 10)) {
            t.push_back(g);
        }
        return t;
    }();
    return trees;
}

} // namespace

TEST_CASE("data loading")
{
    SUBCASE("bundled corpus splits 90/5/5")
    {
        const TaskData d = load_char_corpus(kDataDir + "/corpus.txt");
        CHECK(d.io_dim >= 40);
        CHECK(d.io_dim <= 100);
        const size_t n = d.steps(SplitId::Train) + d.steps(SplitId::Valid) + d.steps(SplitId::Test) + 3;
        CHECK(d.steps(SplitId::Train) + 1 == n * 90 / 100);
        CHECK(d.token_split(SplitId::Valid).inputs[1] == d.token_split(SplitId::Valid).targets[0]);
    }
    SUBCASE("bundled piano roll is binary and 88 wide")
    {
        const TaskData d = load_piano_roll(kDataDir + "/piano_roll.txt");
        CHECK(d.io_dim == 88);
        CHECK(d.roll_split(SplitId::Train).steps() == 480);
        CHECK(d.roll_split(SplitId::Valid).steps() == 160);
        CHECK(d.steps(SplitId::Test) == 159);
        for (uint8_t v : d.roll_split(SplitId::Train).frames) {
            CHECK(v <= 1);
        }
    }
    SUBCASE("malformed inputs")
    {
        CHECK_THROWS_AS(load_char_corpus("/nonexistent/corpus.txt"), DataError);
        CHECK_THROWS_AS(char_corpus_from_text("short"), DataError);
        CHECK_THROWS_AS(piano_roll_from_matrix({{0, 1, 0}, {1, 0}}), DataError);
    }
    SUBCASE("synthetic memory targets lag the inputs")
    {
        const TaskData d = tiny_memory(100, 3);
        const TokenSplit& s = d.token_split(SplitId::Train);
        for (size_t t = 3; t < s.size(); ++t) {
            CHECK(s.targets[t] == s.inputs[t - 3]);
        }
    }
}

TEST_CASE("build_network")
{
    const TaskData lm = tiny_memory();
    SUBCASE("homogeneous LSTM parameters are twice the four-gate count per layer")
    {
        NetworkSpec spec = homogeneous_spec(lm, 2, 64, 32);
        spec.io_dim = 50;
        const Network<double> net = build_network<double>(spec, {lstm_reference_tree()});
        const size_t outer = 32 * 50 + 50 * (64 + 1);
        const size_t lstm_layers = 4 * (32 + 64 + 1) * 64 + 4 * (64 + 64 + 1) * 64;
        CHECK(lstm_parameter_count(spec) == outer + lstm_layers);
        CHECK(net.parameter_count() == outer + 2 * lstm_layers);
    }
    SUBCASE("heterogeneous layer of five trees")
    {
        NetworkSpec spec = homogeneous_spec(lm, 1, 100, 8);
        spec.layers[0] = heterogeneous_layer(5);
        const Network<double> net = build_network<double>(spec, five_trees());
        REQUIRE(net.slots()[0].size() == 5);
        for (int i = 0; i < 5; ++i) {
            CHECK(net.slots()[0][i].units == 20);
            CHECK(net.slots()[0][i].first_unit == 20 * i);
            CHECK(net.slots()[0][i].tree == i);
        }
        CHECK(net.layers[0].w.rows() == 800);
    }
    SUBCASE("memory cells carry no parameters")
    {
        const NetworkSpec spec = homogeneous_spec(lm, 1, 16, 8);
        const NodeTree one = parse("(tanh (add (add@c (mul x0 cprev) x1) (add x2 x3)))");
        const NodeTree two = parse("(tanh (add (add@c (mul x0 cprev) x1) (add@d (mul x2 dprev) x3)))");
        CHECK(build_network<double>(spec, {seed_tree()}).parameter_count() ==
              build_network<double>(spec, {one}, {1, 15}).parameter_count());
        CHECK(build_network<double>(spec, {one}, {1, 15}).parameter_count() ==
              build_network<double>(spec, {two}, {1, 15}).parameter_count());
    }
    SUBCASE("errors")
    {
        NetworkSpec spec = homogeneous_spec(lm, 1, 100, 8);
        spec.layers[0] = heterogeneous_layer(5);
        spec.layers[0].width = 90;
        CHECK_THROWS_AS(build_network<double>(spec, five_trees()), std::invalid_argument);
        spec.layers[0] = heterogeneous_layer(5);
        CHECK_THROWS_AS(build_network<double>(spec, {seed_tree()}), std::invalid_argument);
        CHECK_THROWS_AS(build_network<double>(homogeneous_spec(lm, 1, 8, 4), {parse("(tanh (relu x0))")}),
                        InvalidTreeError);
    }
}

TEST_CASE("perplexity")
{
    SUBCASE("zero logits give the vocabulary size")
    {
        SyntheticConfig s;
        s.vocab = 10;
        const TaskData d = synthetic_memory(s);
        Network<double> net = build_network<double>(homogeneous_spec(d, 1, 8, 4), {seed_tree()});
        net.initialize(1, 0.1);
        net.head_w.setZero();
        CHECK(eval_perplexity(net, d, SplitId::Valid) == doctest::Approx(10.0).epsilon(1e-12));
    }
    SUBCASE("a confident correct predictor gives one")
    {
        TaskData d = tiny_memory();
        for (auto& split : d.tokens) {
            std::fill(split.targets.begin(), split.targets.end(), 3);
        }
        Network<double> net = build_network<double>(homogeneous_spec(d, 1, 8, 4), {seed_tree()});
        net.head_b(3) = 60.0;
        CHECK(eval_perplexity(net, d, SplitId::Test) == doctest::Approx(1.0).epsilon(1e-15));
    }
    SUBCASE("matches a per-unit reference forward pass")
    {
        const TaskData d = load_char_corpus(kDataDir + "/corpus.txt");
        NetworkSpec spec = homogeneous_spec(d, 2, 40, 12);
        spec.layers[1] = heterogeneous_layer(2, 20);
        Network<double> net = build_network<double>(spec, {lstm_reference_tree(), testing::random_genomes(42, 1, 10)[0]});
        net.initialize(5, 0.3);
        TokenSplit head;
        head.inputs.assign(d.token_split(SplitId::Valid).inputs.begin(), d.token_split(SplitId::Valid).inputs.begin() + 300);
        head.targets.assign(d.token_split(SplitId::Valid).targets.begin(), d.token_split(SplitId::Valid).targets.begin() + 300);
        TaskData sub = d;
        sub.tokens[1] = head;
        const std::vector<double> ref = reference_log_probs(net, head);
        double sum = 0.0;
        for (auto it = ref.rbegin(); it != ref.rend(); ++it) {
            sum += *it;
        }
        const double oracle = std::exp(-sum / static_cast<double>(ref.size()));
        CHECK(eval_perplexity(net, sub, SplitId::Valid, 1) == doctest::Approx(oracle).epsilon(1e-9));
        const std::vector<double> lp = token_log_probs(net, head);
        for (size_t i = 0; i < lp.size(); ++i) {
            CHECK(lp[i] == doctest::Approx(ref[i]).epsilon(1e-9));
        }
    }
    SUBCASE("empty split")
    {
        TaskData d = tiny_memory();
        d.tokens[2] = {};
        const Network<double> net = build_network<double>(homogeneous_spec(d, 1, 8, 4), {seed_tree()});
        CHECK_THROWS_AS(eval_perplexity(net, d, SplitId::Test), DataError);
    }
}

TEST_CASE("f1")
{
    CHECK(f1_score(2, 1, 1) == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
    CHECK(f1_score(0, 0, 5) == 0.0);
    CHECK(f1_score(0, 0, 0) == 1.0);

    // 12 steps, pitches 0 and 2 always on.
    std::vector<std::vector<uint8_t>> rows(4, std::vector<uint8_t>(12, 0));
    rows[0].assign(12, 1);
    rows[2].assign(12, 1);
    const TaskData d = piano_roll_from_matrix(rows);
    Network<double> net = build_network<double>(homogeneous_spec(d, 1, 4, 0), {seed_tree()});
    SUBCASE("predictions equal targets")
    {
        net.head_b << 50, -50, 50, -50;
        CHECK(eval_f1(net, d, SplitId::Train) == 1.0);
    }
    SUBCASE("nothing predicted")
    {
        net.head_b.setConstant(-50);
        CHECK(eval_f1(net, d, SplitId::Train) == 0.0);
    }
    SUBCASE("hand-built three-step case")
    {
        // Pitch 0 predicted on, right at every step; pitch 1 predicted on, wrong.
        std::vector<std::vector<uint8_t>> r(3, std::vector<uint8_t>(10, 0));
        r[0].assign(10, 1);
        r[2] = {0, 1, 0, 0, 0, 0, 0, 0, 0, 0};
        const TaskData small = piano_roll_from_matrix(r);
        REQUIRE(small.steps(SplitId::Valid) == 1);
        Network<double> n3 = build_network<double>(homogeneous_spec(small, 1, 4, 0), {seed_tree()});
        // Valid split holds steps 6 and 7: one transition, target column 7.
        n3.head_b << 50, 50, -50;
        CHECK(eval_f1(n3, small, SplitId::Valid) == doctest::Approx(f1_score(1, 1, 0)).epsilon(1e-15));
    }
}

TEST_CASE("training")
{
    const TaskData d = tiny_memory(400);
    const NetworkSpec spec = homogeneous_spec(d, 1, 12, 6);

    SUBCASE("zero learning rate leaves the metric unchanged")
    {
        TrainConfig c;
        c.learning_rate = 0.0;
        c.epochs = 3;
        Network<double> net = build_network<double>(spec, {seed_tree()});
        net.initialize(2, 0.1);
        const auto v = train(net, d, c).values();
        CHECK(v[0] == v[1]);
        CHECK(v[1] == v[2]);
    }
    SUBCASE("first loss is about log V for small weights")
    {
        TrainConfig c = quiet_config();
        c.init_scale = 1e-3;
        double first = 0.0;
        const auto result = train_trees(spec, {seed_tree()}, d, c, Precision::F64, false, [&](const StepInfo& s) {
            if (s.batch == 0) {
                first = s.loss;
            }
        });
        CHECK(first == doctest::Approx(std::log(5.0)).epsilon(1e-3));
        CHECK(result.curve.epochs.size() == 1);
    }
    SUBCASE("clipping bounds the global norm")
    {
        TrainConfig c;
        c.grad_clip_norm = 0.002;
        c.epochs = 2;
        int clipped_steps = 0;
        train_trees(spec, {lstm_reference_tree()}, d, c, Precision::F64, false, [&](const StepInfo& s) {
            CHECK(s.clipped_norm <= c.grad_clip_norm * (1 + 1e-12));
            clipped_steps += s.grad_norm > c.grad_clip_norm;
        });
        CHECK(clipped_steps > 0);
    }
    SUBCASE("same seed gives bit-identical curves")
    {
        TrainConfig c;
        c.epochs = 2;
        const auto a = train_trees(spec, {lstm_reference_tree()}, d, c, Precision::F64).curve.values();
        const auto b = train_trees(spec, {lstm_reference_tree()}, d, c, Precision::F64).curve.values();
        CHECK(a == b);
        c.seed = 2;
        CHECK(train_trees(spec, {lstm_reference_tree()}, d, c, Precision::F64).curve.values() != a);
    }
    SUBCASE("adam and single precision run")
    {
        TrainConfig c;
        c.optimizer = Optimizer::Adam;
        c.learning_rate = 0.01;
        c.epochs = 2;
        const auto r = train_trees(spec, {lstm_reference_tree()}, d, c, Precision::F32, true);
        CHECK(std::isfinite(r.curve.last()));
        CHECK(std::isfinite(r.test_metric));
    }
    SUBCASE("non-finite loss reports epoch and batch")
    {
        Network<double> net = build_network<double>(spec, {seed_tree()});
        net.initialize(3, 0.1);
        net.head_b(0) = std::numeric_limits<double>::quiet_NaN();
        try {
            train(net, d, quiet_config());
            FAIL("expected TrainingDiverged");
        } catch (const TrainingDiverged& e) {
            CHECK(e.epoch() == 1);
            CHECK(e.batch() == 0);
        }
    }
    SUBCASE("bad config")
    {
        TrainConfig c;
        c.dropout_ff = 1.0;
        CHECK_THROWS_AS(check_train_config(c), std::invalid_argument);
    }
}

TEST_CASE("training loss falls over the first epoch on the bundled corpus")
{
    const TaskData d = load_char_corpus(kDataDir + "/corpus.txt");
    TrainConfig c;
    c.epochs = 1;
    c.batch_size = 32;
    c.unroll_steps = 35;
    c.dropout_ff = 0.0;
    c.dropout_rec = 0.0;
    std::vector<double> losses;
    train_trees(homogeneous_spec(d, 1, 32, 16), {lstm_reference_tree()}, d, c, Precision::F32, false,
                [&](const StepInfo& s) { losses.push_back(s.loss); });
    REQUIRE(losses.size() > 10);
    const double head = std::accumulate(losses.begin(), losses.begin() + 5, 0.0) / 5;
    const double tail = std::accumulate(losses.end() - 5, losses.end(), 0.0) / 5;
    CHECK(tail < head);
}

TEST_CASE("chunked evaluation with carried state matches one pass")
{
    const TaskData d = load_char_corpus(kDataDir + "/corpus.txt");
    NetworkSpec spec = homogeneous_spec(d, 2, 20, 8);
    Network<double> net = build_network<double>(spec, {lstm_reference_tree()});
    net.initialize(9, 0.2);
    const std::vector<int>& tokens = d.token_split(SplitId::Valid).inputs;
    const std::span<const int> all(tokens.data(), 200);
    auto s1 = net.zero_state(1);
    const Matrix<double> whole = run_tokens(net, all, s1);
    auto s2 = net.zero_state(1);
    for (size_t start = 0; start < all.size(); start += 35) {
        const auto chunk = all.subspan(start, std::min<size_t>(35, all.size() - start));
        const Matrix<double> part = run_tokens(net, chunk, s2);
        CHECK(part == whole.middleCols(start, chunk.size()));
    }
}

// With lr 1, no dropout, clipping or L2, and one minibatch per epoch, the
// parameter change of one epoch is exactly minus the gradient of the
// training loss evaluated over the same stream layout.
TEST_CASE("network gradients match finite differences")
{
    auto check = [](const TaskData& d, const NetworkSpec& spec, const std::vector<NodeTree>& trees) {
        TrainConfig c = quiet_config();
        c.batch_size = 4;
        c.eval_batch = 4;
        c.learning_rate = 1.0;
        Network<double> net = build_network<double>(spec, trees);
        net.initialize(17, 0.5);
        Network<double> before = net;
        train(net, d, c);
        auto loss = [&](const Network<double>& n) { return eval_loss(n, d, SplitId::Train, 4); };
        auto before_params = before.parameters();
        auto after_params = net.parameters();
        Rng pick(5);
        int compared = 0;
        double worst = 0.0;
        for (size_t p = 0; p < before_params.size(); ++p) {
            for (int trial = 0; trial < 6; ++trial) {
                const Eigen::Index i = static_cast<Eigen::Index>(pick.index(before_params[p]->size()));
                const double analytic = before_params[p]->data()[i] - after_params[p]->data()[i];
                Network<double> plus = before;
                Network<double> minus = before;
                const double eps = 1e-5;
                plus.parameters()[p]->data()[i] += eps;
                minus.parameters()[p]->data()[i] -= eps;
                const double numeric = (loss(plus) - loss(minus)) / (2 * eps);
                const double diff = std::abs(analytic - numeric);
                if (diff > 1e-9) {
                    worst = std::max(worst, diff / std::max(std::abs(analytic), std::abs(numeric)));
                }
                ++compared;
            }
        }
        CHECK(compared > 20);
        CHECK(worst < 1e-5);
    };
    SUBCASE("two layers, heterogeneous top")
    {
        const TaskData d = tiny_memory(40, 2);
        NetworkSpec spec = homogeneous_spec(d, 2, 6, 3);
        spec.layers[1].width = 6;
        spec.layers[1].slots = {{0, 2}, {1, 4}};
        check(d, spec, {lstm_reference_tree(), testing::random_genomes(43, 1, 12)[0]});
    }
    SUBCASE("music head")
    {
        std::vector<std::vector<uint8_t>> rows(5, std::vector<uint8_t>(60, 0));
        Rng rng(8);
        for (auto& r : rows) {
            for (auto& v : r) {
                v = rng.bernoulli(0.4);
            }
        }
        const TaskData d = piano_roll_from_matrix(rows);
        check(d, homogeneous_spec(d, 1, 5, 0), {testing::random_genomes(44, 1, 12)[0]});
    }
}

TEST_CASE("select_diverse_pool")
{
    SUBCASE("identical genomes")
    {
        const std::vector<NodeTree> same(30, seed_tree());
        const auto pool = select_diverse_pool(same, std::vector<double>(30, 1.0), 20, 1.0);
        CHECK(pool.size() == 20);
        for (const auto& g : pool) {
            CHECK(tree_distance(g, pool[0]) == 0.0);
        }
    }
    SUBCASE("two clusters alternate, matching brute-force max-min")
    {
        const NodeTree a = seed_tree();
        const NodeTree b = parse("(tanh (add (add (add (add (add x0 x1) x2) x3) x4) x5))");
        std::vector<NodeTree> genomes{a, b, a, testing::mirror(b), testing::mirror(a), b, a, b};
        const std::vector<double> fit{1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0};
        const auto picked = select_diverse_indices(genomes, fit, 4, 1.0);
        CHECK(picked[0] == 0);
        // brute force: the second pick maximizes distance to the first
        double best = -1.0;
        for (size_t i = 1; i < genomes.size(); ++i) {
            best = std::max(best, tree_distance(genomes[i], genomes[0]));
        }
        CHECK(tree_distance(genomes[picked[1]], genomes[0]) == best);
        CHECK(tree_distance(genomes[picked[1]], b) == 0.0);
    }
    SUBCASE("candidates come from the top fraction by fitness")
    {
        const auto genomes = testing::random_genomes(45, 200, 10);
        std::vector<double> fit(200);
        for (int i = 0; i < 200; ++i) {
            fit[i] = 200 - i;
        }
        for (int idx : select_diverse_indices(genomes, fit, 20, 0.1)) {
            CHECK(idx >= 180);
        }
    }
    SUBCASE("too few genomes")
    {
        CHECK_THROWS_AS(select_diverse_pool({seed_tree()}, {1.0}, 20), std::invalid_argument);
    }
}
