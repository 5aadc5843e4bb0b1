// SPDX-License-Identifier: Apache-2.0

#include "treecell/cli.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "treecell/config.hpp"
#include "treecell/evolution.hpp"
#include "treecell/genetic_ops.hpp"
#include "treecell/io.hpp"
#include "treecell/meta.hpp"
#include "treecell/network.hpp"

namespace treecell {

namespace fs = std::filesystem;

namespace {

constexpr int kFailed = 1;
constexpr int kBadInput = 2;

struct Overrides {
    std::string config_path;
    std::optional<uint64_t> seed;
    std::optional<int> workers;
    std::string precision;
    bool resume = false;
};

struct Loaded {
    ExperimentConfig config;
    fs::path base; // directory relative paths resolve against
};

fs::path resolve(const fs::path& base, const std::string& p)
{
    const fs::path path(p);
    return path.is_relative() ? base / path : path;
}

Loaded load(const Overrides& o)
{
    Loaded l;
    if (!o.config_path.empty()) {
        l.config = load_config(o.config_path);
        l.base = fs::path(o.config_path).parent_path();
    }
    if (o.seed) {
        l.config.evolution.seed = *o.seed;
        l.config.train.seed = *o.seed;
        l.config.meta.seed = *o.seed;
    }
    if (o.workers) {
        l.config.workers = *o.workers;
    }
    if (!o.precision.empty()) {
        try {
            l.config.precision = parse_precision(o.precision);
        } catch (const std::invalid_argument& e) {
            throw ConfigError(e.what());
        }
    }
    check_config(l.config);
    return l;
}

std::string format_number(double v)
{
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

NodeTree read_genome(const fs::path& path)
{
    return parse(read_text_file(path));
}

// Invalid genome: prints the report and returns false.
bool check_genome(const NodeTree& genome, const TreeLimits& limits, const std::string& name, std::ostream& err)
{
    const ValidationReport report = validate(genome, limits);
    if (report.empty()) {
        return true;
    }
    err << name << ": invalid genome\n" << format_report(report);
    return false;
}

std::optional<MetaModel> load_meta_if_needed(const Loaded& l)
{
    const bool needed = l.config.evolution.fitness_mode == FitnessMode::MetaPredicted;
    if (!needed) {
        return std::nullopt;
    }
    if (l.config.paths.meta_model.empty()) {
        throw ConfigError("fitness_mode meta_predicted needs paths.meta_model");
    }
    const fs::path path = resolve(l.base, l.config.paths.meta_model);
    if (!fs::exists(path)) {
        throw DataError("meta model not found: " + path.string());
    }
    return MetaModel::load(path);
}

// evolve -----------------------------------------------------------------------

int cmd_evolve(const Overrides& o, std::ostream& out, std::ostream& err)
{
    const Loaded l = load(o);
    const ExperimentConfig& c = l.config;
    // Everything that can fail on input is checked before any file is written.
    const TaskData data = load_task(c, l.base);
    const std::optional<MetaModel> meta = load_meta_if_needed(l);

    const fs::path checkpoint_dir = resolve(l.base, c.paths.checkpoint_dir);
    const fs::path output_dir = resolve(l.base, c.paths.output_dir);
    const fs::path checkpoint = checkpoint_dir / "checkpoint.json";
    const fs::path lineage_path = output_dir / "lineage.log";

    FitnessContext context;
    context.trainer = task_trainer(data, c.network, c.train, c.precision);
    context.full_epochs = c.full_epochs;
    context.meta = meta ? &*meta : nullptr;

    EvolutionState state;
    if (o.resume && fs::exists(checkpoint)) {
        state = deserialize_state(read_text_file(checkpoint));
        out << "resuming at generation " << state.generation << "\n";
    } else {
        state = init_population(c.evolution);
    }
    std::string lineage_text;
    for (const std::string& line : state.lineage) {
        lineage_text += line + "\n";
    }
    write_file_atomic(lineage_path, lineage_text);
    size_t logged = state.lineage.size();

    auto write_outputs = [&](const EvolutionState& s) {
        write_file_atomic(checkpoint, serialize_state(s));
        std::ofstream lineage(lineage_path, std::ios::app);
        for (; logged < s.lineage.size(); ++logged) {
            lineage << s.lineage[logged] << "\n";
        }
        write_file_atomic(output_dir / "generations.csv", history_csv(s.history));
        if (!s.best.genome.empty()) {
            write_file_atomic(output_dir / "best_genome.txt", serialize(s.best.genome) + "\n");
        }
    };
    write_outputs(state);

    if (state.finished) {
        out << "run already finished\n";
    } else {
        resume_evolution(
            state, c.evolution, context, c.workers,
            [&](const EvolutionState& s) {
                write_outputs(s);
                const GenerationStats& g = s.history.back();
                out << "generation " << g.generation << ": best " << format_number(g.best) << ", best ever "
                    << format_number(g.best_ever) << ", trained " << g.trained << ", species " << g.active << "/"
                    << g.inactive << "/" << g.shamed << " active/inactive/shamed\n";
            },
            [&](const std::string& message) { err << message << "\n"; });
    }
    out << "best fitness " << format_number(state.best_fitness) << "\n";
    out << "best genome " << serialize(state.best.genome) << "\n";
    return 0;
}

// train ------------------------------------------------------------------------

int cmd_train(const Overrides& o, const std::string& genome_path, std::optional<int> epochs, std::string out_path,
              bool timing, std::ostream& out, std::ostream& err)
{
    const Loaded l = load(o);
    ExperimentConfig c = l.config;
    const NodeTree genome = read_genome(genome_path);
    if (!check_genome(genome, c.evolution.limits, genome_path, err)) {
        return kFailed;
    }
    const TaskData data = load_task(c, l.base);
    if (epochs) {
        c.train.epochs = *epochs;
    }
    check_config(c);
    const NetworkSpec spec = homogeneous_spec(data, c.network.layers, c.network.width, c.network.embedding_dim);
    const TrainResult result = train_trees(spec, {genome}, data, c.train, c.precision, true);
    std::ostringstream csv;
    write_curve_csv(csv, result.curve, timing);
    if (out_path.empty()) {
        out_path = (resolve(l.base, c.paths.output_dir) / "curve.csv").string();
    }
    write_file_atomic(out_path, csv.str());
    const char* name = result.curve.metric == MetricKind::F1 ? "f1" : "perplexity";
    out << "parameters " << result.parameters << "\n";
    out << "final validation " << name << " " << format_number(result.curve.last()) << "\n";
    out << "test " << name << " " << format_number(result.test_metric) << "\n";
    return 0;
}

// hetero -----------------------------------------------------------------------

int cmd_hetero(const Overrides& o, const std::string& pool_dir, int networks, std::string out_path,
               std::ostream& out, std::ostream& err)
{
    const Loaded l = load(o);
    const ExperimentConfig& c = l.config;
    if (networks < 0) {
        throw ConfigError("--networks must be non-negative");
    }
    if (c.network.width % kDefaultCardinality != 0) {
        throw ConfigError("network.width must be a multiple of " + std::to_string(kDefaultCardinality) +
                          " for heterogeneous layers");
    }
    std::vector<fs::path> files;
    if (!fs::is_directory(pool_dir)) {
        throw DataError("pool directory not found: " + pool_dir);
    }
    for (const auto& entry : fs::directory_iterator(pool_dir)) {
        if (entry.is_regular_file() && (entry.path().extension() == ".txt" || entry.path().extension() == ".genome")) {
            files.push_back(entry.path());
        }
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) {
        throw DataError("no genome files (*.txt, *.genome) in " + pool_dir);
    }
    std::vector<NodeTree> pool;
    for (const fs::path& f : files) {
        pool.push_back(read_genome(f));
        if (!check_genome(pool.back(), c.evolution.limits, f.string(), err)) {
            return kFailed;
        }
    }
    const TaskData data = load_task(c, l.base);
    const std::optional<MetaModel> meta = load_meta_if_needed(l);
    FitnessContext context;
    context.full_epochs = c.full_epochs;
    context.meta = meta ? &*meta : nullptr;

    const int node_types = c.network.width / kDefaultCardinality;
    struct Row {
        int network;
        double fitness;
        size_t parameters;
        std::string genomes;
    };
    std::vector<Row> rows;
    Rng rng(c.evolution.seed);
    for (int n = 0; n < networks; ++n) {
        std::vector<NodeTree> trees;
        std::string names;
        for (int s = 0; s < node_types; ++s) {
            const size_t pick = rng.index(pool.size());
            trees.push_back(pool[pick]);
            names += (s ? ";" : "") + files[pick].stem().string();
        }
        NetworkSpec spec = homogeneous_spec(data, c.network.layers, c.network.width, c.network.embedding_dim);
        for (LayerSpec& layer : spec.layers) {
            layer = heterogeneous_layer(node_types);
        }
        size_t parameters = 0;
        const FitnessRecord r = score_candidate(
            [&](int epochs) {
                TrainConfig train = c.train;
                train.epochs = epochs;
                const TrainResult result = train_trees(spec, trees, data, train, c.precision);
                parameters = result.parameters;
                std::vector<double> curve;
                for (double v : result.curve.values()) {
                    curve.push_back(fitness_from_metric(result.curve.metric, v));
                }
                return curve;
            },
            c.evolution.fitness_mode, c.evolution.partial_epochs, context);
        rows.push_back({n, r.fitness, parameters, names});
        out << "network " << n << ": fitness " << format_number(r.fitness) << "\n";
    }
    std::stable_sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) { return a.fitness < b.fitness; });
    std::string csv = "rank,network,fitness,parameters,genomes\n";
    for (size_t i = 0; i < rows.size(); ++i) {
        char buf[96];
        std::snprintf(buf, sizeof buf, "%zu,%d,%.17g,%zu,", i + 1, rows[i].network, rows[i].fitness,
                      rows[i].parameters);
        csv += buf + rows[i].genomes + "\n";
    }
    if (out_path.empty()) {
        out_path = (resolve(l.base, c.paths.output_dir) / "hetero.csv").string();
    }
    write_file_atomic(out_path, csv);
    out << "wrote " << rows.size() << " networks to " << out_path << "\n";
    return 0;
}

// distance, validate -------------------------------------------------------------

int cmd_distance(const Overrides& o, const std::string& a, const std::string& b, std::ostream& out)
{
    const Loaded l = load(o);
    out << format_number(tree_distance(read_genome(a), read_genome(b), l.config.evolution.speciation.distance))
        << "\n";
    return 0;
}

int cmd_validate(const Overrides& o, const std::vector<std::string>& genomes, std::ostream& out, std::ostream& err)
{
    const Loaded l = load(o);
    if (!o.config_path.empty()) {
        if (l.config.task != TaskKind::Synthetic) {
            const fs::path data = resolve(l.base, l.config.paths.data);
            if (!fs::exists(data)) {
                throw DataError("data file not found: " + data.string());
            }
        }
        out << o.config_path << ": config ok\n";
    }
    int status = 0;
    for (const std::string& g : genomes) {
        NodeTree genome;
        try {
            genome = read_genome(g);
        } catch (const ParseError& e) {
            err << g << ": " << e.what() << "\n";
            status = kFailed;
            continue;
        }
        if (check_genome(genome, l.config.evolution.limits, g, err)) {
            out << g << ": valid (height " << height(genome) << ", size " << size(genome) << ")\n";
        } else {
            status = kFailed;
        }
    }
    return status;
}

// meta ---------------------------------------------------------------------------

CurvePrefix parse_prefix(const std::string& text)
{
    std::vector<double> values;
    std::stringstream ss(text);
    std::string field;
    while (std::getline(ss, field, ',')) {
        try {
            values.push_back(std::stod(field));
        } catch (const std::exception&) {
            throw ConfigError("curve value '" + field + "' is not a number");
        }
    }
    if (values.size() != kPrefixEpochs) {
        throw ConfigError("a curve needs exactly 10 comma-separated values, got " + std::to_string(values.size()));
    }
    CurvePrefix p;
    std::copy(values.begin(), values.end(), p.begin());
    return p;
}

int cmd_meta_train(const Overrides& o, const std::string& dataset, const std::string& model_path, std::ostream& out)
{
    const Loaded l = load(o);
    const std::vector<CurveSample> samples = read_curve_csv(dataset);
    const MetaModel model = train_meta(samples, l.config.meta);
    model.save(model_path);
    for (const MetaMember& m : model.members()) {
        out << "decoder " << m.decoder_length << ": best validation MAE% " << format_number(m.best_valid_mae)
            << " at epoch " << m.epochs_trained << "\n";
    }
    out << "saved " << model_path << "\n";
    return 0;
}

int cmd_meta_predict(const std::string& model_path, const std::string& curve, const std::string& curve_file,
                     std::ostream& out)
{
    const MetaModel model = MetaModel::load(model_path);
    if (!curve.empty()) {
        out << format_number(model.predict(parse_prefix(curve))) << "\n";
    }
    if (!curve_file.empty()) {
        for (const CurveSample& s : read_curve_csv(curve_file)) {
            out << format_number(model.predict(s.prefix)) << "\n";
        }
    }
    return 0;
}

int cmd_meta_synth(const std::string& path, int count, uint64_t seed, std::ostream& out)
{
    if (count < 1) {
        throw ConfigError("--count must be positive");
    }
    write_curve_samples(path, synthetic_curves(count, seed));
    out << "wrote " << count << " curves to " << path << "\n";
    return 0;
}

} // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err)
{
    CLI::App app{"Evolve, train and compare tree-structured recurrent cells", "treecell"};
    app.require_subcommand(1);
    app.fallthrough();

    Overrides o;
    app.add_option("--config", o.config_path, "Experiment INI file");
    app.add_option("--seed", o.seed, "Override every seed in the config");
    app.add_option("--workers", o.workers, "Parallel trainings during evaluation");
    app.add_option("--precision", o.precision, "Arithmetic precision: 32 or 64")->check(CLI::IsMember({"32", "64"}));

    auto* evolve = app.add_subcommand("evolve", "Run evolution, writing checkpoints and per-generation results");
    evolve->add_flag("--resume", o.resume, "Continue from the checkpoint if one exists");

    auto* train = app.add_subcommand("train", "Train a homogeneous network of one genome");
    std::string genome_path;
    std::optional<int> epochs;
    std::string train_out;
    bool timing = false;
    train->add_option("genome", genome_path, "Genome file")->required();
    train->add_option("--epochs", epochs, "Override train.epochs");
    train->add_option("--out", train_out, "Curve CSV path (default: <output_dir>/curve.csv)");
    train->add_flag("--timing", timing, "Add a seconds column to the curve CSV");

    auto* hetero = app.add_subcommand("hetero", "Rank random heterogeneous networks built from a genome pool");
    std::string pool_dir;
    int networks = 20;
    std::string hetero_out;
    hetero->add_option("pool", pool_dir, "Directory of genome files")->required();
    hetero->add_option("--networks", networks, "Number of networks to build");
    hetero->add_option("--out", hetero_out, "Results CSV path (default: <output_dir>/hetero.csv)");

    auto* distance = app.add_subcommand("distance", "Print the structural distance between two genomes");
    std::string dist_a;
    std::string dist_b;
    distance->add_option("a", dist_a, "First genome file")->required();
    distance->add_option("b", dist_b, "Second genome file")->required();

    auto* validate_cmd = app.add_subcommand("validate", "Check genome files and, with --config, the config");
    std::vector<std::string> validate_files;
    validate_cmd->add_option("genomes", validate_files, "Genome files");

    auto* meta = app.add_subcommand("meta", "Train or query the learning-curve predictor");
    meta->require_subcommand(1);
    auto* meta_train = meta->add_subcommand("train", "Train on a curve CSV (10 prefix values + final)");
    std::string dataset;
    std::string model_out = "meta_model.json";
    meta_train->add_option("dataset", dataset, "Curve CSV")->required();
    meta_train->add_option("--out", model_out, "Model file to write");
    auto* meta_predict = meta->add_subcommand("predict", "Predict final values");
    std::string model_in;
    std::string curve;
    std::string curve_file;
    meta_predict->add_option("model", model_in, "Model file")->required();
    meta_predict->add_option("--curve", curve, "Ten comma-separated epoch values");
    meta_predict->add_option("--curve-file", curve_file, "Curve CSV; one prediction per row");
    auto* meta_synth = meta->add_subcommand("synth", "Write a synthetic crossing-curve dataset");
    std::string synth_out;
    int synth_count = 500;
    uint64_t synth_seed = 1;
    meta_synth->add_option("out", synth_out, "CSV to write")->required();
    meta_synth->add_option("--count", synth_count, "Number of curves");
    meta_synth->add_option("--samples-seed", synth_seed, "Generator seed");

    std::vector<std::string> argv_store{"treecell"};
    argv_store.insert(argv_store.end(), args.begin(), args.end());
    std::vector<const char*> argv;
    for (const std::string& a : argv_store) {
        argv.push_back(a.c_str());
    }
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? 0 : kBadInput;
    }

    try {
        if (evolve->parsed()) {
            if (o.config_path.empty()) {
                throw ConfigError("evolve needs --config");
            }
            return cmd_evolve(o, out, err);
        }
        if (train->parsed()) {
            return cmd_train(o, genome_path, epochs, train_out, timing, out, err);
        }
        if (hetero->parsed()) {
            return cmd_hetero(o, pool_dir, networks, hetero_out, out, err);
        }
        if (distance->parsed()) {
            return cmd_distance(o, dist_a, dist_b, out);
        }
        if (validate_cmd->parsed()) {
            return cmd_validate(o, validate_files, out, err);
        }
        if (meta_train->parsed()) {
            return cmd_meta_train(o, dataset, model_out, out);
        }
        if (meta_predict->parsed()) {
            if (curve.empty() && curve_file.empty()) {
                throw ConfigError("meta predict needs --curve or --curve-file");
            }
            return cmd_meta_predict(model_in, curve, curve_file, out);
        }
        if (meta_synth->parsed()) {
            return cmd_meta_synth(synth_out, synth_count, synth_seed, out);
        }
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << "\n";
        return kBadInput;
    } catch (const DataError& e) {
        err << "data error: " << e.what() << "\n";
        return kBadInput;
    } catch (const InsufficientData& e) {
        err << "insufficient data: " << e.what() << "\n";
        return kBadInput;
    } catch (const ParseError& e) {
        err << "genome parse error: " << e.what() << "\n";
        return kBadInput;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kFailed;
    }
    return kBadInput;
}

} // namespace treecell
