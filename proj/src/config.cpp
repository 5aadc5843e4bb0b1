// SPDX-License-Identifier: Apache-2.0

#include "treecell/config.hpp"

#include <cstdio>
#include <functional>
#include <map>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "treecell/io.hpp"

namespace treecell {

namespace {

struct Field {
    std::string section;
    std::string key;
    std::function<std::string()> get;
    std::function<void(const std::string&)> set;
};

std::string format_double(double v)
{
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

template <typename T>
T parse_number(const std::string& text, const std::string& where)
{
    std::istringstream in(text);
    T value{};
    in >> value;
    if (in.fail() || !(in >> std::ws).eof()) {
        throw ConfigError(where + ": cannot parse '" + text + "'");
    }
    return value;
}

class Fields {
public:
    std::vector<Field> all;

    void integer(const std::string& s, const std::string& k, int& v)
    {
        all.push_back({s, k, [&v] { return std::to_string(v); },
                       [&v, s, k](const std::string& t) { v = parse_number<int>(t, s + "." + k); }});
    }
    void u64(const std::string& s, const std::string& k, uint64_t& v)
    {
        all.push_back({s, k, [&v] { return std::to_string(v); },
                       [&v, s, k](const std::string& t) {
                           if (!t.empty() && t[0] == '-') {
                               throw ConfigError(s + "." + k + ": must be non-negative");
                           }
                           v = parse_number<uint64_t>(t, s + "." + k);
                       }});
    }
    void real(const std::string& s, const std::string& k, double& v)
    {
        all.push_back({s, k, [&v] { return format_double(v); },
                       [&v, s, k](const std::string& t) { v = parse_number<double>(t, s + "." + k); }});
    }
    void text(const std::string& s, const std::string& k, std::string& v)
    {
        all.push_back({s, k, [&v] { return v; }, [&v](const std::string& t) { v = t; }});
    }
    template <typename E>
    void choice(const std::string& s, const std::string& k, E& v, std::function<std::string(E)> name,
                std::function<E(const std::string&)> parse)
    {
        all.push_back({s, k, [&v, name] { return name(v); },
                       [&v, parse, s, k](const std::string& t) {
                           try {
                               v = parse(t);
                           } catch (const std::invalid_argument& e) {
                               throw ConfigError(s + "." + k + ": " + e.what());
                           }
                       }});
    }
};

Fields bind(ExperimentConfig& c)
{
    Fields f;
    f.choice<TaskKind>("experiment", "task", c.task, [](TaskKind t) { return std::string(task_name(t)); },
                       [](const std::string& t) { return parse_task(t); });
    f.choice<Precision>("experiment", "precision", c.precision,
                        [](Precision p) { return std::string(p == Precision::F32 ? "32" : "64"); },
                        [](const std::string& t) { return parse_precision(t); });
    f.integer("experiment", "workers", c.workers);
    f.integer("experiment", "full_epochs", c.full_epochs);

    f.text("paths", "data", c.paths.data);
    f.text("paths", "checkpoint_dir", c.paths.checkpoint_dir);
    f.text("paths", "output_dir", c.paths.output_dir);
    f.text("paths", "meta_model", c.paths.meta_model);

    f.integer("network", "layers", c.network.layers);
    f.integer("network", "width", c.network.width);
    f.integer("network", "embedding_dim", c.network.embedding_dim);

    f.integer("synthetic", "vocab", c.synthetic.vocab);
    f.integer("synthetic", "lag", c.synthetic.lag);
    f.integer("synthetic", "train_length", c.synthetic.train_length);
    f.integer("synthetic", "valid_length", c.synthetic.valid_length);
    f.integer("synthetic", "test_length", c.synthetic.test_length);
    f.u64("synthetic", "seed", c.synthetic.seed);

    EvolutionConfig& e = c.evolution;
    f.integer("evolution", "population_size", e.population_size);
    f.integer("evolution", "generations", e.generations);
    f.real("evolution", "crossover_rate", e.crossover_rate);
    f.real("evolution", "insert_rate", e.insert_rate);
    f.real("evolution", "shrink_rate", e.shrink_rate);
    f.real("evolution", "modi_rate", e.modi_rate);
    f.choice<FitnessMode>("evolution", "fitness_mode", e.fitness_mode,
                          [](FitnessMode m) { return std::string(fitness_mode_name(m)); },
                          [](const std::string& t) { return parse_fitness_mode(t); });
    f.integer("evolution", "partial_epochs", e.partial_epochs);
    f.integer("evolution", "tournament_size", e.tournament_size);
    f.integer("evolution", "shame_attempts", e.shame_attempts);
    f.integer("evolution", "min_height", e.limits.min_height);
    f.integer("evolution", "max_height", e.limits.max_height);
    f.u64("evolution", "seed", e.seed);

    f.real("speciation", "compatibility_threshold", e.speciation.compatibility_threshold);
    f.integer("speciation", "stagnation_limit", e.speciation.stagnation_limit);
    f.integer("speciation", "max_active", e.speciation.max_active);
    f.real("speciation", "beta", e.speciation.distance.beta);

    TrainConfig& t = c.train;
    f.integer("train", "unroll_steps", t.unroll_steps);
    f.real("train", "dropout_ff", t.dropout_ff);
    f.real("train", "dropout_rec", t.dropout_rec);
    f.real("train", "l2", t.l2);
    f.choice<Optimizer>("train", "optimizer", t.optimizer,
                        [](Optimizer o) { return std::string(o == Optimizer::Sgd ? "sgd" : "adam"); },
                        [](const std::string& s) {
                            if (s == "sgd") {
                                return Optimizer::Sgd;
                            }
                            if (s == "adam") {
                                return Optimizer::Adam;
                            }
                            throw std::invalid_argument("expected sgd or adam");
                        });
    f.real("train", "learning_rate", t.learning_rate);
    f.real("train", "lr_decay", t.lr_decay);
    f.integer("train", "decay_after", t.decay_after);
    f.real("train", "grad_clip_norm", t.grad_clip_norm);
    f.integer("train", "epochs", t.epochs);
    f.integer("train", "batch_size", t.batch_size);
    f.integer("train", "eval_batch", t.eval_batch);
    f.real("train", "init_scale", t.init_scale);
    f.u64("train", "seed", t.seed);

    MetaConfig& m = c.meta;
    f.integer("meta", "layers", m.layers);
    f.integer("meta", "units", m.units);
    f.integer("meta", "long_decoder", m.decoder_lengths[0]);
    f.integer("meta", "short_decoder", m.decoder_lengths[1]);
    f.real("meta", "learning_rate", m.learning_rate);
    f.integer("meta", "batch_size", m.batch_size);
    f.integer("meta", "max_epochs", m.max_epochs);
    f.integer("meta", "patience", m.patience);
    f.real("meta", "valid_fraction", m.valid_fraction);
    f.real("meta", "init_scale", m.init_scale);
    f.real("meta", "forget_bias", m.forget_bias);
    f.real("meta", "grad_clip_norm", m.grad_clip_norm);
    f.u64("meta", "seed", m.seed);
    return f;
}

} // namespace

ExperimentConfig parse_config(const std::string& text)
{
    namespace pt = boost::property_tree;
    pt::ptree tree;
    try {
        std::istringstream in(text);
        pt::read_ini(in, tree);
    } catch (const pt::ini_parser_error& e) {
        throw ConfigError("config line " + std::to_string(e.line()) + ": " + e.message());
    }
    ExperimentConfig config;
    Fields fields = bind(config);
    std::map<std::string, std::map<std::string, Field*>> index;
    for (Field& f : fields.all) {
        index[f.section][f.key] = &f;
    }
    for (const auto& [section, body] : tree) {
        if (body.empty() && !body.data().empty()) {
            throw ConfigError("key '" + section + "' outside any section");
        }
        auto s = index.find(section);
        if (s == index.end()) {
            throw ConfigError("unknown config section [" + section + "]");
        }
        for (const auto& [key, value] : body) {
            auto k = s->second.find(key);
            if (k == s->second.end()) {
                throw ConfigError("unknown config key " + section + "." + key);
            }
            k->second->set(value.data());
        }
    }
    return config;
}

ExperimentConfig load_config(const std::filesystem::path& path)
{
    std::string text;
    try {
        text = read_text_file(path);
    } catch (const std::runtime_error& e) {
        throw ConfigError(e.what());
    }
    return parse_config(text);
}

std::string emit_config(const ExperimentConfig& config)
{
    ExperimentConfig copy = config;
    Fields fields = bind(copy);
    std::string out;
    std::string section;
    for (const Field& f : fields.all) {
        if (f.section != section) {
            out += (section.empty() ? "" : "\n") + std::string("[") + f.section + "]\n";
            section = f.section;
        }
        out += f.key + " = " + f.get() + "\n";
    }
    return out;
}

void check_config(const ExperimentConfig& c)
{
    try {
        check_evolution_config(c.evolution);
        check_train_config(c.train);
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    if (c.workers < 1) {
        throw ConfigError("experiment.workers must be positive");
    }
    if (c.full_epochs < 1) {
        throw ConfigError("experiment.full_epochs must be positive");
    }
    if (c.network.layers < 1 || c.network.width < 1 || c.network.embedding_dim < 1) {
        throw ConfigError("network.layers, width and embedding_dim must be positive");
    }
    if (c.meta.layers < 1 || c.meta.units < 1 || c.meta.decoder_lengths[0] < 1 || c.meta.decoder_lengths[1] < 1 ||
        c.meta.batch_size < 1 || c.meta.max_epochs < 1 || c.meta.patience < 1 || c.meta.learning_rate <= 0.0 ||
        !(c.meta.valid_fraction > 0.0 && c.meta.valid_fraction < 1.0)) {
        throw ConfigError("meta settings out of range");
    }
    if (c.task == TaskKind::Synthetic && (c.synthetic.vocab < 2 || c.synthetic.lag < 1 ||
                                          c.synthetic.train_length < 1 || c.synthetic.valid_length < 1 ||
                                          c.synthetic.test_length < 1)) {
        throw ConfigError("synthetic settings out of range");
    }
}

TaskData load_task(const ExperimentConfig& config, const std::filesystem::path& base)
{
    if (config.task == TaskKind::Synthetic) {
        return synthetic_memory(config.synthetic);
    }
    if (config.paths.data.empty()) {
        throw DataError("paths.data is required for task " + std::string(task_name(config.task)));
    }
    std::filesystem::path path = config.paths.data;
    if (path.is_relative() && !base.empty()) {
        path = base / path;
    }
    return config.task == TaskKind::CharLm ? load_char_corpus(path) : load_piano_roll(path);
}

} // namespace treecell
