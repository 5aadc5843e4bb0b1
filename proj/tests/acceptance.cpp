// SPDX-License-Identifier: Apache-2.0
//
// Runs every acceptance criterion and prints one PASS/FAIL line for each.
// Exits non-zero if any criterion fails. `acceptance 3 7` runs a subset.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "support/oracles.hpp"
#include "support/random_trees.hpp"
#include "treecell/cell.hpp"
#include "treecell/cli.hpp"
#include "treecell/config.hpp"
#include "treecell/evolution.hpp"
#include "treecell/genetic_ops.hpp"
#include "treecell/io.hpp"
#include "treecell/meta.hpp"
#include "treecell/network.hpp"
#include "treecell/speciation.hpp"

using namespace treecell;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* format, double a = 0, double b = 0, double c = 0, double d = 0)
{
    char buf[256];
    std::snprintf(buf, sizeof buf, format, a, b, c, d);
    return buf;
}

std::array<std::vector<double>, kBaseInputs> random_inputs(Rng& rng, size_t width, double scale)
{
    std::array<std::vector<double>, kBaseInputs> base;
    for (auto& v : base) {
        v.resize(width);
        for (double& x : v) {
            x = scale * rng.normal();
        }
    }
    return base;
}

bool tagged(const NodeTree& t, Modi m)
{
    return std::any_of(t.nodes().begin(), t.nodes().end(), [&](const TreeNode& n) { return n.modi == m; });
}

fs::path scratch(const std::string& name)
{
    const fs::path dir = fs::temp_directory_path() / "treecell_acceptance" / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

const fs::path kConfigs = fs::path(TREECELL_SOURCE_DIR) / "configs";

// 1 ---------------------------------------------------------------------------

Outcome lstm_oracle()
{
    const CompiledCell cell = compile(lstm_reference_tree());
    Rng rng(101);
    double worst = 0.0;
    for (int i = 0; i < 1000; ++i) {
        const auto base = random_inputs(rng, 1, 3.0);
        CellState state = CellState::zeros(1);
        state.c[0] = 2.0 * rng.normal();
        state.d[0] = rng.normal();
        const CellState out = cell_step(cell, base, state);
        const auto ref = testing::closed_form_lstm(base[0][0], base[1][0], base[2][0], base[3][0], state.c[0]);
        worst = std::max({worst, std::abs(out.c[0] - ref.c), std::abs(out.h[0] - ref.h)});
    }
    return {worst <= 1e-12, fmt("1000 draws, worst abs error %.3g", worst)};
}

// 2 ---------------------------------------------------------------------------

Outcome gradients()
{
    Rng rng(201);
    int failures = 0;
    int compared = 0;
    double worst = 0.0;
    const auto genomes = testing::random_genomes(202, 50, 16);
    for (const NodeTree& t : genomes) {
        const auto check = testing::check_cell_gradients(compile(t), rng, 3, 1e-5, 1e-5);
        failures += check.failures;
        compared += check.compared;
        worst = std::max(worst, check.worst_relative);
    }
    return {failures == 0 && worst <= 1e-5,
            fmt("50 genomes, %.0f partials, %.0f failures, worst relative error %.3g", compared, failures, worst)};
}

// 3 ---------------------------------------------------------------------------

Outcome distance_suite()
{
    Rng rng(301);
    int violations = 0;
    double lo = 1.0;
    double hi = 0.0;
    for (int i = 0; i < 10000; ++i) {
        const NodeTree a = testing::random_genome(rng, 1 + static_cast<int>(rng.index(12)));
        const NodeTree b = testing::random_genome(rng, 1 + static_cast<int>(rng.index(12)));
        const double ab = tree_distance(a, b);
        const double ba = tree_distance(b, a);
        lo = std::min(lo, ab);
        hi = std::max(hi, ab);
        violations += ab != ba || tree_distance(a, a) != 0.0 || !(ab >= 0.0 && ab <= 1.0);
    }

    const NodeTree x = parse("(tanh (add (tanh x0) (add x1 x2)))");
    const NodeTree y = parse("(tanh (add x1 (tanh x0)))");
    const double example = tree_distance(x, y);

    int mirror_bad = 0;
    for (int i = 0; i < 200; ++i) {
        const NodeTree a = testing::random_genome(rng, 1 + static_cast<int>(rng.index(12)));
        const NodeTree m = testing::mirror(a);
        std::vector<Species> species;
        SpeciationConfig sc;
        sc.compatibility_threshold = 0.3;
        const int sa = assign_species(a, 0, species, sc);
        const int sm = assign_species(m, 1, species, sc);
        mirror_bad += tree_distance(a, m) != 0.0 || sa != sm || species.size() != 1;
    }
    const bool pass = violations == 0 && std::abs(example - 0.1) <= 1e-15 && mirror_bad == 0;
    return {pass, fmt("10000 pairs, %.0f violations, range [%.3f, %.3f], worked example %.17g", violations, lo, hi,
                      example) +
                      fmt(", %.0f/200 mirror pairs split", mirror_bad)};
}

// 4 ---------------------------------------------------------------------------

Outcome operator_fuzz()
{
    Rng rng(401);
    const TreeLimits limits;
    std::vector<NodeTree> pool(8, seed_tree());
    int invalid = 0;
    int out_of_bounds = 0;
    int counts[4] = {0, 0, 0, 0};
    for (int i = 0; i < 10000; ++i) {
        NodeTree& slot = pool[rng.index(pool.size())];
        const int op = static_cast<int>(rng.index(4));
        ++counts[op];
        NodeTree child;
        switch (op) {
        case 0:
            child = mutate_replace(slot, rng, limits);
            break;
        case 1:
            child = mutate_insert(slot, rng, 0.3, limits);
            break;
        case 2:
            child = mutate_shrink(slot, rng, limits);
            break;
        default: {
            const NodeTree& other = pool[rng.index(pool.size())];
            child = rng.bernoulli(0.5) ? crossover_homologous(slot, other, rng, limits).first
                                       : crossover_homologous(slot, other, rng, limits).second;
        }
        }
        invalid += !validate(child, limits).empty();
        const int h = height(child);
        out_of_bounds += h < 6 || h > 15;
        slot = std::move(child);
    }
    return {invalid == 0 && out_of_bounds == 0,
            fmt("10000 applications (%.0f replace, %.0f insert, %.0f shrink, ", counts[0], counts[1], counts[2]) +
                fmt("%.0f crossover), %.0f invalid, %.0f outside height [6,15]", counts[3], invalid, out_of_bounds)};
}

// 5 ---------------------------------------------------------------------------

Outcome archive_discipline()
{
    EvolutionConfig c;
    c.population_size = 10;
    c.generations = 10;
    c.fitness_mode = FitnessMode::Epoch10Baseline;
    c.partial_epochs = 1;
    c.speciation.max_active = 1;
    c.seed = 501;
    FitnessContext context;
    context.trainer = [](const NodeTree&, int epochs) { return std::vector<double>(epochs, 1.0); }; // never improves

    EvolutionState state = init_population(c);
    // One genome far from the seed family founds a second species, which
    // waits Inactive behind the single active slot.
    const NodeTree far = parse("(tanh (add (add (add (add (add (add x0 x1) x2) x3) x4) x5) x6))");
    state.population.back().genome = far;
    const double far_distance = tree_distance(far, seed_tree());

    int shamed_at = -1;
    int promotions_at_shame = 0;
    int violations = 0;
    int offspring_checked = 0;
    while (!state.finished) {
        const int generation = state.generation;
        const int first_new_id = state.next_id;
        std::vector<SpeciesState> before;
        for (const Species& s : state.species) {
            before.push_back(s.state);
        }
        step_generation(state, c, context, 1);
        int promoted = 0;
        for (size_t i = 0; i < before.size(); ++i) {
            promoted += before[i] == SpeciesState::Inactive && state.species[i].state == SpeciesState::Active;
        }
        if (shamed_at < 0 && !state.species.empty() && state.species[0].state == SpeciesState::Shamed) {
            shamed_at = generation;
            promotions_at_shame = promoted;
        }
        if (!state.finished && !state.archive.entries.empty()) {
            for (const Individual& ind : state.population) {
                if (ind.id >= first_new_id) {
                    ++offspring_checked;
                    violations += violates_shame(ind.genome, state.archive, c.speciation.compatibility_threshold);
                }
            }
        }
    }
    // Generation 0 sets the species best; generations 1-4 fail to improve it.
    const bool pass = far_distance >= 0.3 && shamed_at == 4 && promotions_at_shame == 1 && offspring_checked > 0 &&
                      violations == 0;
    return {pass, fmt("founding species shamed at generation %.0f, %.0f promotion(s), ", shamed_at, promotions_at_shame) +
                      fmt("%.0f shame violations among %.0f later offspring", violations, offspring_checked)};
}

// 6 ---------------------------------------------------------------------------

Outcome memory_skip()
{
    Rng rng(601);
    int cell_mismatch = 0;
    int net_mismatch = 0;
    int checked = 0;
    std::set<size_t> counts;
    std::set<int> memory_leaves;
    SyntheticConfig sc;
    sc.train_length = 200;
    sc.valid_length = 100;
    sc.test_length = 100;
    const TaskData data = synthetic_memory(sc);
    const NetworkSpec spec = homogeneous_spec(data, 2, 6, 5);
    const std::vector<int>& tokens = data.token_split(SplitId::Valid).inputs;
    const std::span<const int> stream(tokens.data(), 50);

    for (const NodeTree& t : testing::random_genomes(602, 300, 16)) {
        int leaves = 0;
        for (const TreeNode& n : t.nodes()) {
            leaves += n.symbol == Symbol::MemoryC || n.symbol == Symbol::MemoryD;
        }
        memory_leaves.insert(leaves);

        Network<double> net = build_network<double>(spec, {t});
        net.initialize(603, 0.3);
        counts.insert(net.parameter_count());
        if (tagged(t, Modi::C)) {
            continue;
        }
        ++checked;
        const CompiledCell cell = compile(t);
        CellState state = CellState::zeros(4);
        for (size_t i = 0; i < 4; ++i) {
            state.c[i] = rng.normal();
            state.d[i] = rng.normal();
        }
        const CellState out = cell_step(cell, random_inputs(rng, 4, 1.0), state);
        cell_mismatch += out.c != state.c;

        auto s = net.zero_state(1);
        for (auto& c : s.c) {
            for (Eigen::Index i = 0; i < c.size(); ++i) {
                c(i) = rng.normal();
            }
        }
        const auto initial = s.c;
        run_tokens(net, stream, s);
        for (size_t l = 0; l < initial.size(); ++l) {
            net_mismatch += !(s.c[l].array() == initial[l].array()).all();
        }
    }
    const bool pass = cell_mismatch == 0 && net_mismatch == 0 && counts.size() == 1 && checked > 0;
    return {pass, fmt("%.0f untagged genomes, %.0f cell and %.0f network mismatches over 50 steps, ", checked,
                      cell_mismatch, net_mismatch) +
                      fmt("%.0f distinct parameter count(s) over %.0f memory-leaf counts", counts.size(),
                          memory_leaves.size())};
}

// 7 ---------------------------------------------------------------------------

Outcome meta_vs_baseline()
{
    const auto train = synthetic_curves(500, 701);
    const auto test = synthetic_curves(200, 702);
    const MetaModel model = train_meta(train, MetaConfig{});
    std::vector<double> pred;
    std::vector<double> base;
    std::vector<double> target;
    for (const auto& s : test) {
        pred.push_back(model.predict(s.prefix));
        base.push_back(baseline_epoch10(s.prefix));
        target.push_back(s.target);
    }
    const double mae = mae_percent(pred, target);
    const double mae_base = mae_percent(base, target);
    const double tau_meta = kendall_tau(pred, target);
    const double tau_base = kendall_tau(base, target);
    return {mae <= 10.0 && tau_meta > tau_base,
            fmt("held-out MAE %.2f%% (baseline %.2f%%), tau %.3f vs baseline %.3f", mae, mae_base, tau_meta, tau_base)};
}

// 8 ---------------------------------------------------------------------------

Outcome desk_evolution()
{
    const fs::path path = kConfigs / "memory.ini";
    const ExperimentConfig config = load_config(path);
    const TaskData data = load_task(config, path.parent_path());
    const NetworkShape shape{config.network.layers, config.network.width, config.network.embedding_dim};
    FitnessContext context;
    context.trainer = task_trainer(data, shape, config.train, config.precision);
    context.full_epochs = config.full_epochs;
    const EvolutionState state = run_evolution(config.evolution, context, config.workers);

    bool monotone = state.history.size() == 10;
    for (size_t g = 1; g < state.history.size(); ++g) {
        monotone = monotone && state.history[g].best_ever <= state.history[g - 1].best_ever;
    }
    const NetworkSpec spec =
        homogeneous_spec(data, config.network.layers, config.network.width, config.network.embedding_dim);
    auto full = [&](const NodeTree& t) {
        return train_trees(spec, {t}, data, config.train, config.precision, true).test_metric;
    };
    const double seed = full(seed_tree());
    const double best = full(state.best.genome);
    const double gain = (seed - best) / seed;
    return {monotone && gain >= 0.05,
            fmt("pop %.0f, %.0f generations, best-ever ", config.evolution.population_size,
                state.history.size()) +
                (monotone ? "monotone" : "NOT monotone") +
                fmt("; test perplexity after %.0f epochs: seed %.4f, evolved %.4f (%.1f%% better)",
                    config.train.epochs, seed, best, 100.0 * gain)};
}

// 9 ---------------------------------------------------------------------------

Outcome heterogeneous()
{
    const fs::path dir = scratch("hetero");
    fs::create_directories(dir / "pool");
    Rng rng(901);
    std::vector<NodeTree> pool{lstm_reference_tree(), seed_tree()};
    while (pool.size() < 5) {
        pool.push_back(testing::random_genome(rng, 10));
    }
    for (size_t i = 0; i < pool.size(); ++i) {
        write_file_atomic(dir / "pool" / ("g" + std::to_string(i) + ".txt"), serialize(pool[i]) + "\n");
    }

    const LayerSpec layer = heterogeneous_layer(5);
    bool structure = layer.slots.size() == 5;
    int total = 0;
    for (size_t i = 0; i < layer.slots.size(); ++i) {
        structure = structure && layer.slots[i].cardinality == 20 && layer.slots[i].tree == static_cast<int>(i);
        total += layer.slots[i].cardinality;
    }
    structure = structure && total == 100;
    SyntheticConfig sc;
    sc.train_length = 200;
    const TaskData data = synthetic_memory(sc);
    NetworkSpec spec = homogeneous_spec(data, 1, 100, 8);
    spec.layers[0] = layer;
    const Network<double> net = build_network<double>(spec, pool);
    structure = structure && net.slots()[0].size() == 5 && net.layers[0].width == 100;
    for (size_t i = 0; i < net.slots()[0].size(); ++i) {
        structure = structure && net.slots()[0][i].first_unit == static_cast<int>(20 * i) &&
                    net.slots()[0][i].units == 20;
    }

    std::ostringstream out;
    std::ostringstream err;
    const int status = run_cli({"hetero", (dir / "pool").string(), "--config", (kConfigs / "hetero.ini").string(),
                                "--networks", "20", "--out", (dir / "hetero.csv").string()},
                               out, err);
    int rows = 0;
    if (status == 0) {
        const std::string csv = read_text_file(dir / "hetero.csv");
        rows = static_cast<int>(std::count(csv.begin(), csv.end(), '\n')) - 1;
    } else {
        std::cerr << err.str();
    }
    return {structure && status == 0 && rows == 20,
            fmt("width-100 layer as %.0f slots x 20 units: ", layer.slots.size()) +
                (structure ? "ok" : "WRONG") + fmt("; sweep exit %.0f with %.0f ranked networks", status, rows)};
}

// 10 --------------------------------------------------------------------------

Outcome determinism()
{
    ExperimentConfig config = load_config(kConfigs / "smoke.ini");
    config.workers = 1;
    config.precision = Precision::F64;
    std::vector<std::string> csv;
    std::vector<std::string> best;
    for (const char* run : {"a", "b"}) {
        const fs::path dir = scratch(std::string("determinism_") + run);
        config.paths.checkpoint_dir = (dir / "checkpoints").string();
        config.paths.output_dir = (dir / "out").string();
        write_file_atomic(dir / "smoke.ini", emit_config(config));
        std::ostringstream out;
        std::ostringstream err;
        if (run_cli({"evolve", "--config", (dir / "smoke.ini").string()}, out, err) != 0) {
            return {false, "cmd_evolve failed: " + err.str()};
        }
        csv.push_back(read_text_file(dir / "out" / "generations.csv"));
        best.push_back(read_text_file(dir / "out" / "best_genome.txt"));
    }
    const bool pass = csv[0] == csv[1] && best[0] == best[1] && !csv[0].empty() && !best[0].empty();
    return {pass, std::string("generations.csv ") + (csv[0] == csv[1] ? "identical" : "DIFFERENT") +
                      ", best_genome.txt " + (best[0] == best[1] ? "identical" : "DIFFERENT")};
}

struct Criterion {
    int number;
    const char* name;
    double limit_seconds;
    std::function<Outcome()> run;
};

} // namespace

int main(int argc, char** argv)
{
    const std::vector<Criterion> criteria{
        {1, "lstm-oracle", 10, lstm_oracle},
        {2, "gradients", 120, gradients},
        {3, "distance-suite", 60, distance_suite},
        {4, "operator-fuzz", 60, operator_fuzz},
        {5, "archive-discipline", 60, archive_discipline},
        {6, "memory-skip", 10, memory_skip},
        {7, "meta-vs-baseline", 900, meta_vs_baseline},
        {8, "desk-evolution", 3600, desk_evolution},
        {9, "heterogeneous", 1800, heterogeneous},
        {10, "determinism", 600, determinism},
    };
    std::set<int> wanted;
    for (int i = 1; i < argc; ++i) {
        wanted.insert(std::stoi(argv[i]));
    }
    int failed = 0;
    for (const Criterion& c : criteria) {
        if (!wanted.empty() && !wanted.count(c.number)) {
            continue;
        }
        const auto start = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        const bool in_time = seconds <= c.limit_seconds;
        const bool pass = o.pass && in_time;
        failed += !pass;
        std::printf("%s %2d %-18s %s (%.1f s of %.0f s)\n", pass ? "PASS" : "FAIL", c.number, c.name,
                    o.detail.c_str(), seconds, c.limit_seconds);
        std::fflush(stdout);
    }
    return failed == 0 ? 0 : 1;
}
