// SPDX-License-Identifier: Apache-2.0

#include "treecell/evolution.hpp"

#include <algorithm>
#include <atomic>
#include <deque>
#include <cmath>
#include <cstdio>
#include <exception>
#include <memory>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>

#include "json.hpp"

namespace treecell {

using json = nlohmann::json;

const char* fitness_mode_name(FitnessMode mode)
{
    switch (mode) {
    case FitnessMode::MetaPredicted:
        return "meta_predicted";
    case FitnessMode::Epoch10Baseline:
        return "epoch10_baseline";
    case FitnessMode::FullTrain:
        return "full_train";
    }
    return "?";
}

FitnessMode parse_fitness_mode(std::string_view name)
{
    for (FitnessMode m : {FitnessMode::MetaPredicted, FitnessMode::Epoch10Baseline, FitnessMode::FullTrain}) {
        if (name == fitness_mode_name(m)) {
            return m;
        }
    }
    throw std::invalid_argument("unknown fitness mode '" + std::string(name) +
                                "' (expected meta_predicted, epoch10_baseline or full_train)");
}

void check_evolution_config(const EvolutionConfig& c)
{
    auto rate = [](double v, const char* name) {
        if (!(v >= 0.0 && v <= 1.0)) {
            throw std::invalid_argument(std::string("evolution.") + name + " must be in [0, 1]");
        }
    };
    rate(c.crossover_rate, "crossover_rate");
    rate(c.insert_rate, "insert_rate");
    rate(c.shrink_rate, "shrink_rate");
    rate(c.modi_rate, "modi_rate");
    if (c.population_size < 1) {
        throw std::invalid_argument("evolution.population_size must be at least 1");
    }
    if (c.generations < 0) {
        throw std::invalid_argument("evolution.generations must be non-negative");
    }
    if (c.partial_epochs < 1) {
        throw std::invalid_argument("evolution.partial_epochs must be positive");
    }
    if (c.fitness_mode == FitnessMode::MetaPredicted && c.partial_epochs != kPrefixEpochs) {
        throw std::invalid_argument("evolution.partial_epochs must be 10 in meta_predicted mode");
    }
    if (c.tournament_size < 1 || c.shame_attempts < 0) {
        throw std::invalid_argument("evolution.tournament_size must be positive and shame_attempts non-negative");
    }
    if (c.limits.min_height < 1 || c.limits.max_height < c.limits.min_height) {
        throw std::invalid_argument("evolution height limits must satisfy 1 <= min <= max");
    }
    if (c.speciation.compatibility_threshold < 0.0 || c.speciation.stagnation_limit < 1 ||
        c.speciation.max_active < 1) {
        throw std::invalid_argument("speciation settings out of range");
    }
}

GenomeTrainer task_trainer(const TaskData& data, NetworkShape shape, TrainConfig train, Precision precision)
{
    auto shared = std::make_shared<const TaskData>(data);
    return [shared, shape, train, precision](const NodeTree& genome, int epochs) {
        TrainConfig config = train;
        config.epochs = epochs;
        const NetworkSpec spec = homogeneous_spec(*shared, shape.layers, shape.width, shape.embedding_dim);
        const TrainResult result = train_trees(spec, {genome}, *shared, config, precision);
        std::vector<double> out;
        for (double v : result.curve.values()) {
            out.push_back(fitness_from_metric(result.curve.metric, v));
        }
        return out;
    };
}

std::string cache_key(const NodeTree& genome)
{
    return serialize(canonicalize(genome));
}

// Lineage --------------------------------------------------------------------

std::string format_lineage(const LineageEntry& e)
{
    std::ostringstream out;
    out << e.id << ' ' << e.op << ' ' << (e.parents.size() > 0 ? std::to_string(e.parents[0]) : "-") << ' '
        << (e.parents.size() > 1 ? std::to_string(e.parents[1]) : "-") << ' ' << e.op_seed << ' ' << e.side;
    return out.str();
}

LineageEntry parse_lineage(const std::string& line)
{
    std::istringstream in(line);
    LineageEntry e;
    std::string p0;
    std::string p1;
    if (!(in >> e.id >> e.op >> p0 >> p1 >> e.op_seed >> e.side)) {
        throw std::runtime_error("malformed lineage line: " + line);
    }
    for (const std::string& p : {p0, p1}) {
        if (p != "-") {
            e.parents.push_back(std::stoi(p));
        }
    }
    return e;
}

namespace {

NodeTree apply_op(const LineageEntry& e, const std::vector<const NodeTree*>& parents, const EvolutionConfig& config)
{
    Rng rng(e.op_seed);
    if (e.op == "insert") {
        return mutate_insert(*parents.at(0), rng, config.modi_rate, config.limits);
    }
    if (e.op == "shrink") {
        return mutate_shrink(*parents.at(0), rng, config.limits);
    }
    if (e.op == "replace") {
        return mutate_replace(*parents.at(0), rng, config.limits);
    }
    if (e.op == "crossover") {
        auto [a, b] = crossover_homologous(*parents.at(0), *parents.at(1), rng, config.limits);
        return e.side == 0 ? a : b;
    }
    if (e.op == "seed") {
        return seed_tree();
    }
    throw std::runtime_error("unknown lineage operator '" + e.op + "'");
}

// Applies one operator, logs it and returns the new individual.
class Breeder {
public:
    Breeder(EvolutionState& state, const EvolutionConfig& config, Rng& rng)
        : state_(state)
        , config_(config)
        , rng_(rng)
    {
    }

    Individual op(const std::string& name, const std::vector<const Individual*>& parents, int side = 0)
    {
        LineageEntry e;
        e.id = state_.next_id++;
        e.op = name;
        e.op_seed = rng_.split();
        e.side = side;
        std::vector<const NodeTree*> trees;
        for (const Individual* p : parents) {
            e.parents.push_back(p->id);
            trees.push_back(&p->genome);
        }
        Individual child{e.id, apply_op(e, trees, config_)};
        child.genome.set_generation_born(state_.generation + 1);
        state_.lineage.push_back(format_lineage(e));
        return child;
    }

    /// Exactly one operator: insert, else shrink, else replace.
    Individual mutate_once(const Individual& parent)
    {
        if (rng_.bernoulli(config_.insert_rate)) {
            return op("insert", {&parent});
        }
        if (rng_.bernoulli(config_.shrink_rate)) {
            return op("shrink", {&parent});
        }
        return op("replace", {&parent});
    }

    /// Insert and shrink drawn independently in that order; replace when
    /// neither fired.
    Individual mutate(const Individual& parent)
    {
        Individual current = parent;
        bool changed = false;
        if (rng_.bernoulli(config_.insert_rate)) {
            current = op("insert", {&current});
            changed = true;
        }
        if (rng_.bernoulli(config_.shrink_rate)) {
            current = op("shrink", {&current});
            changed = true;
        }
        if (!changed) {
            current = op("replace", {&current});
        }
        return current;
    }

private:
    EvolutionState& state_;
    const EvolutionConfig& config_;
    Rng& rng_;
};

void run_parallel(size_t count, int workers, const std::function<void(size_t)>& task)
{
    if (workers <= 1 || count <= 1) {
        for (size_t i = 0; i < count; ++i) {
            task(i);
        }
        return;
    }
    std::atomic<size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    std::vector<std::thread> threads;
    const size_t n = std::min(count, static_cast<size_t>(workers));
    for (size_t t = 0; t < n; ++t) {
        threads.emplace_back([&] {
            for (size_t i = next++; i < count; i = next++) {
                try {
                    task(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(error_mutex);
                    if (!error) {
                        error = std::current_exception();
                    }
                }
            }
        });
    }
    for (auto& t : threads) {
        t.join();
    }
    if (error) {
        std::rethrow_exception(error);
    }
}

Individual tournament(const std::vector<const Individual*>& members, const std::vector<double>& fitness, int size,
                      Rng& rng)
{
    size_t best = rng.index(members.size());
    for (int k = 1; k < size; ++k) {
        const size_t c = rng.index(members.size());
        if (fitness[c] < fitness[best] || (fitness[c] == fitness[best] && c < best)) {
            best = c;
        }
    }
    return *members[best];
}

} // namespace

FitnessRecord score_candidate(const std::function<std::vector<double>(int epochs)>& train, FitnessMode mode,
                              int partial_epochs, const FitnessContext& context)
{
    FitnessRecord r;
    r.mode = mode;
    try {
        r.curve = train(mode == FitnessMode::FullTrain ? context.full_epochs : partial_epochs);
        if (r.curve.empty()) {
            throw std::logic_error("trainer returned an empty curve");
        }
        if (mode == FitnessMode::MetaPredicted) {
            if (!context.meta || !context.meta->trained()) {
                throw std::logic_error("meta_predicted fitness needs a trained meta model");
            }
            CurvePrefix prefix;
            bool finite = true;
            for (int e = 0; e < kPrefixEpochs; ++e) {
                // 1 - F1 can reach zero; the predictor needs positive values.
                prefix[e] = std::max(r.curve.at(e), 1e-9);
                finite = finite && std::isfinite(prefix[e]);
            }
            r.fitness = finite ? context.meta->predict(prefix) : kDivergedFitness;
        } else {
            r.fitness = r.curve.back();
        }
    } catch (const TrainingDiverged&) {
        r.fitness = kDivergedFitness;
    }
    if (!std::isfinite(r.fitness)) {
        r.fitness = kDivergedFitness;
        r.diverged = true;
    }
    return r;
}

std::map<int, NodeTree> replay_lineage(const std::vector<std::string>& lines, const EvolutionConfig& config)
{
    std::map<int, NodeTree> out;
    for (const std::string& line : lines) {
        const LineageEntry e = parse_lineage(line);
        std::vector<const NodeTree*> parents;
        for (int p : e.parents) {
            auto it = out.find(p);
            if (it == out.end()) {
                throw std::runtime_error("lineage refers to unknown genome " + std::to_string(p));
            }
            parents.push_back(&it->second);
        }
        out[e.id] = apply_op(e, parents, config);
    }
    return out;
}

EvolutionState init_population(const EvolutionConfig& config)
{
    check_evolution_config(config);
    EvolutionState state;
    Rng rng(config.seed);
    Breeder breeder(state, config, rng);
    state.generation = -1; // born in generation 0
    const Individual seed = breeder.op("seed", {});
    state.population.push_back(seed);
    for (int i = 1; i < config.population_size; ++i) {
        state.population.push_back(breeder.mutate_once(seed));
    }
    state.generation = 0;
    state.rng_state = rng.state();
    return state;
}

std::map<int, FitnessRecord> evaluate_generation(EvolutionState& state, const EvolutionConfig& config,
                                                 const FitnessContext& context, int workers,
                                                 GenerationStats& stats)
{
    if (config.fitness_mode == FitnessMode::MetaPredicted && (!context.meta || !context.meta->trained())) {
        throw std::logic_error("meta_predicted fitness needs a trained meta model");
    }
    for (Species& s : state.species) {
        s.members.clear();
    }
    std::vector<const Individual*> active;
    for (const Individual& ind : state.population) {
        const int s = assign_species(ind.genome, ind.id, state.species, config.speciation);
        if (state.species[s].state == SpeciesState::Active) {
            active.push_back(&ind);
        }
    }

    std::vector<std::string> keys;
    std::vector<const NodeTree*> to_train;
    std::map<std::string, size_t> pending;
    for (const Individual* ind : active) {
        const std::string key = cache_key(ind->genome);
        keys.push_back(key);
        if (!state.cache.count(key) && !pending.count(key)) {
            pending[key] = to_train.size();
            to_train.push_back(&ind->genome);
        }
    }
    std::vector<FitnessRecord> fresh(to_train.size());
    run_parallel(to_train.size(), workers, [&](size_t i) { fresh[i] = score_candidate([&](int epochs) { return context.trainer(*to_train[i], epochs); },
                                                          config.fitness_mode, config.partial_epochs, context); });
    for (const auto& [key, index] : pending) {
        state.cache[key] = fresh[index];
    }

    std::map<int, FitnessRecord> records;
    for (size_t i = 0; i < active.size(); ++i) {
        FitnessRecord r = state.cache.at(keys[i]);
        r.genome_id = active[i]->id;
        records[r.genome_id] = r;
    }

    stats.generation = state.generation;
    stats.evaluated = static_cast<int>(active.size());
    stats.trained = static_cast<int>(to_train.size());
    double sum = 0.0;
    int finite = 0;
    for (const Individual* ind : active) {
        const FitnessRecord& r = records.at(ind->id);
        if (r.diverged) {
            ++stats.diverged;
        } else {
            sum += r.fitness;
            ++finite;
        }
        stats.best = std::min(stats.best, r.fitness);
        if (r.fitness < state.best_fitness) {
            state.best_fitness = r.fitness;
            state.best = *ind;
        }
    }
    stats.mean = finite > 0 ? sum / finite : kDivergedFitness;
    if (state.best.genome.empty() && !state.population.empty()) {
        state.best = state.population.front();
    }
    return records;
}

int reproduce(EvolutionState& state, const std::map<int, FitnessRecord>& records, const EvolutionConfig& config,
              Rng& rng, const EvolutionLog& log)
{
    std::map<int, const Individual*> by_id;
    for (const Individual& ind : state.population) {
        by_id[ind.id] = &ind;
    }

    struct Group {
        int species = -1;
        std::vector<const Individual*> members;
        std::vector<double> fitness;
        double score = 0.0;
    };
    std::vector<Group> groups;
    std::deque<Individual> representatives;
    for (const Species& s : state.species) {
        if (s.state != SpeciesState::Active) {
            continue;
        }
        Group g;
        g.species = s.id;
        for (int id : s.members) {
            auto r = records.find(id);
            if (r != records.end() && by_id.count(id)) {
                g.members.push_back(by_id.at(id));
                g.fitness.push_back(r->second.fitness);
            }
        }
        if (g.members.empty() && s.representative_id >= 0) {
            // Promoted from Inactive: only the representative is left to breed from.
            representatives.push_back({s.representative_id, s.representative});
            g.members.push_back(&representatives.back());
            g.fitness.push_back(s.best_fitness);
        }
        if (!g.members.empty()) {
            groups.push_back(std::move(g));
        }
    }
    Individual fallback = state.best;
    if (groups.empty()) {
        if (fallback.genome.empty()) {
            fallback = state.population.front();
        }
        Group g;
        g.members.push_back(&fallback);
        g.fitness.push_back(state.best_fitness);
        groups.push_back(std::move(g));
    }

    // Inverse rank over every scored genome: the best of n scores n.
    std::vector<std::pair<double, std::pair<size_t, size_t>>> ranked;
    for (size_t gi = 0; gi < groups.size(); ++gi) {
        for (size_t m = 0; m < groups[gi].members.size(); ++m) {
            ranked.push_back({groups[gi].fitness[m], {gi, m}});
        }
    }
    std::stable_sort(ranked.begin(), ranked.end(),
                     [](const auto& a, const auto& b) { return a.first < b.first; });
    const double n = static_cast<double>(ranked.size());
    for (size_t r = 0; r < ranked.size(); ++r) {
        groups[ranked[r].second.first].score += n - static_cast<double>(r);
    }
    for (Group& g : groups) {
        g.score /= static_cast<double>(g.members.size());
    }

    // Elites: each group's best, best groups first, at most half the population.
    std::vector<std::pair<double, const Individual*>> elites;
    for (const Group& g : groups) {
        const size_t b = static_cast<size_t>(std::min_element(g.fitness.begin(), g.fitness.end()) - g.fitness.begin());
        const bool seen = std::any_of(elites.begin(), elites.end(),
                                      [&](const auto& e) { return e.second->id == g.members[b]->id; });
        if (!seen) {
            elites.push_back({g.fitness[b], g.members[b]});
        }
    }
    std::stable_sort(elites.begin(), elites.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    const size_t elite_cap = static_cast<size_t>(std::max(1, config.population_size / 2));
    if (elites.size() > elite_cap) {
        elites.resize(elite_cap);
    }

    const int spawn_total = config.population_size - static_cast<int>(elites.size());
    std::vector<int> spawn(groups.size(), 0);
    {
        double total = 0.0;
        for (const Group& g : groups) {
            total += g.score;
        }
        std::vector<std::pair<double, size_t>> remainders;
        int given = 0;
        for (size_t gi = 0; gi < groups.size(); ++gi) {
            const double quota = spawn_total * groups[gi].score / total;
            spawn[gi] = static_cast<int>(std::floor(quota));
            given += spawn[gi];
            remainders.push_back({quota - spawn[gi], gi});
        }
        std::stable_sort(remainders.begin(), remainders.end(),
                         [](const auto& a, const auto& b) { return a.first > b.first; });
        for (size_t k = 0; given < spawn_total; ++k, ++given) {
            ++spawn[remainders[k % remainders.size()].second];
        }
    }

    std::vector<Individual> next;
    for (const auto& e : elites) {
        next.push_back(*e.second);
    }
    Breeder breeder(state, config, rng);
    const double threshold = config.speciation.compatibility_threshold;
    int rejections = 0;
    for (size_t gi = 0; gi < groups.size(); ++gi) {
        const Group& g = groups[gi];
        for (int k = 0; k < spawn[gi]; ++k) {
            Individual child;
            if (rng.bernoulli(config.crossover_rate)) {
                const Individual a = tournament(g.members, g.fitness, config.tournament_size, rng);
                const Individual b = tournament(g.members, g.fitness, config.tournament_size, rng);
                const int side = static_cast<int>(rng.index(2));
                child = breeder.mutate(breeder.op("crossover", {&a, &b}, side));
            } else {
                child = breeder.mutate(tournament(g.members, g.fitness, config.tournament_size, rng));
            }
            if (!state.archive.entries.empty()) {
                int attempts = 0;
                while (attempts < config.shame_attempts &&
                       violates_shame(child.genome, state.archive, threshold, config.speciation.distance)) {
                    child = breeder.mutate(child);
                    ++attempts;
                    ++rejections;
                }
                if (violates_shame(child.genome, state.archive, threshold, config.speciation.distance) && log) {
                    log("warning: genome " + std::to_string(child.id) + " still matches the hall of shame after " +
                        std::to_string(attempts) + " re-mutations; accepted");
                }
            }
            next.push_back(std::move(child));
        }
    }
    state.population = std::move(next);
    return rejections;
}

void step_generation(EvolutionState& state, const EvolutionConfig& config, const FitnessContext& context,
                     int workers, const EvolutionLog& log)
{
    Rng rng;
    rng.restore(state.rng_state);
    GenerationStats stats;
    const std::map<int, FitnessRecord> records = evaluate_generation(state, config, context, workers, stats);

    std::map<int, SpeciesOutcome> outcomes;
    for (const Species& s : state.species) {
        if (s.state != SpeciesState::Active) {
            continue;
        }
        for (int id : s.members) {
            auto r = records.find(id);
            if (r == records.end()) {
                continue;
            }
            auto [it, fresh] = outcomes.try_emplace(s.id, SpeciesOutcome{r->second.fitness, std::nullopt, id});
            if (fresh || r->second.fitness < it->second.best_fitness) {
                it->second.best_fitness = r->second.fitness;
                it->second.best_id = id;
                for (const Individual& ind : state.population) {
                    if (ind.id == id) {
                        it->second.best_genome = ind.genome;
                    }
                }
            }
        }
    }
    const std::vector<int> shamed = update_stagnation(state.species, state.archive, outcomes, config.speciation);
    for (int id : shamed) {
        if (log) {
            log("generation " + std::to_string(state.generation) + ": species " + std::to_string(id) +
                " stagnated and joined the hall of shame");
        }
    }

    const bool last = state.generation + 1 >= std::max(config.generations, 1);
    if (!last) {
        stats.shame_rejections = reproduce(state, records, config, rng, log);
    }
    stats.best_ever = state.best_fitness;
    stats.active = count_state(state.species, SpeciesState::Active);
    stats.inactive = count_state(state.species, SpeciesState::Inactive);
    stats.shamed = count_state(state.species, SpeciesState::Shamed);
    stats.archive = static_cast<int>(state.archive.entries.size());
    state.history.push_back(stats);
    ++state.generation;
    state.finished = last;
    state.rng_state = rng.state();
}

void resume_evolution(EvolutionState& state, const EvolutionConfig& config, const FitnessContext& context,
                      int workers, const GenerationCallback& on_generation, const EvolutionLog& log)
{
    check_evolution_config(config);
    while (!state.finished) {
        step_generation(state, config, context, workers, log);
        if (on_generation) {
            on_generation(state);
        }
    }
}

EvolutionState run_evolution(const EvolutionConfig& config, const FitnessContext& context, int workers,
                             const GenerationCallback& on_generation, const EvolutionLog& log)
{
    EvolutionState state = init_population(config);
    resume_evolution(state, config, context, workers, on_generation, log);
    return state;
}

// Checkpoints ------------------------------------------------------------------

namespace {

constexpr const char* kStateFormat = "treecell-evolution";
constexpr int kStateVersion = 1;

json number(double v)
{
    if (std::isfinite(v)) {
        return v;
    }
    return v > 0 ? "inf" : (v < 0 ? "-inf" : "nan");
}

double number_from(const json& j)
{
    if (j.is_string()) {
        const std::string s = j.get<std::string>();
        if (s == "inf") {
            return std::numeric_limits<double>::infinity();
        }
        if (s == "-inf") {
            return -std::numeric_limits<double>::infinity();
        }
        return std::numeric_limits<double>::quiet_NaN();
    }
    return j.get<double>();
}

json individual_json(const Individual& ind)
{
    return {{"id", ind.id}, {"genome", serialize(ind.genome)}, {"born", ind.genome.generation_born()}};
}

Individual individual_from(const json& j)
{
    Individual ind{j.at("id").get<int>(), parse(j.at("genome").get<std::string>())};
    ind.genome.set_generation_born(j.at("born").get<int>());
    return ind;
}

json stats_json(const GenerationStats& s)
{
    return {{"generation", s.generation}, {"best", number(s.best)},          {"mean", number(s.mean)},
            {"best_ever", number(s.best_ever)}, {"evaluated", s.evaluated}, {"trained", s.trained},
            {"diverged", s.diverged},       {"active", s.active},           {"inactive", s.inactive},
            {"shamed", s.shamed},           {"archive", s.archive},         {"shame_rejections", s.shame_rejections}};
}

GenerationStats stats_from(const json& j)
{
    GenerationStats s;
    s.generation = j.at("generation");
    s.best = number_from(j.at("best"));
    s.mean = number_from(j.at("mean"));
    s.best_ever = number_from(j.at("best_ever"));
    s.evaluated = j.at("evaluated");
    s.trained = j.at("trained");
    s.diverged = j.at("diverged");
    s.active = j.at("active");
    s.inactive = j.at("inactive");
    s.shamed = j.at("shamed");
    s.archive = j.at("archive");
    s.shame_rejections = j.at("shame_rejections");
    return s;
}

} // namespace

std::string serialize_state(const EvolutionState& state)
{
    json population = json::array();
    for (const Individual& ind : state.population) {
        population.push_back(individual_json(ind));
    }
    json species = json::array();
    for (const Species& s : state.species) {
        species.push_back({{"id", s.id},
                           {"representative", serialize(s.representative)},
                           {"members", s.members},
                           {"best_fitness", number(s.best_fitness)},
                           {"stagnation", s.stagnation},
                           {"state", state_name(s.state)},
                           {"representative_id", s.representative_id}});
    }
    json archive = json::array();
    for (const NodeTree& t : state.archive.entries) {
        archive.push_back(serialize(t));
    }
    json cache = json::array();
    for (const auto& [key, r] : state.cache) {
        json curve = json::array();
        for (double v : r.curve) {
            curve.push_back(number(v));
        }
        cache.push_back({{"key", key},
                         {"genome_id", r.genome_id},
                         {"curve", curve},
                         {"fitness", number(r.fitness)},
                         {"mode", fitness_mode_name(r.mode)},
                         {"diverged", r.diverged}});
    }
    json history = json::array();
    for (const GenerationStats& s : state.history) {
        history.push_back(stats_json(s));
    }
    const json out = {{"format", kStateFormat},
                      {"version", kStateVersion},
                      {"generation", state.generation},
                      {"next_id", state.next_id},
                      {"finished", state.finished},
                      {"rng", state.rng_state},
                      {"best", state.best.genome.empty() ? json(nullptr) : individual_json(state.best)},
                      {"best_fitness", number(state.best_fitness)},
                      {"population", population},
                      {"species", species},
                      {"archive", archive},
                      {"cache", cache},
                      {"lineage", state.lineage},
                      {"history", history}};
    return out.dump(1) + "\n";
}

EvolutionState deserialize_state(const std::string& text)
{
    try {
        const json j = json::parse(text);
        if (j.at("format") != kStateFormat) {
            throw std::runtime_error("not an evolution checkpoint");
        }
        if (j.at("version") != kStateVersion) {
            throw std::runtime_error("unsupported checkpoint version " + j.at("version").dump());
        }
        EvolutionState state;
        state.generation = j.at("generation");
        state.next_id = j.at("next_id");
        state.finished = j.at("finished");
        state.rng_state = j.at("rng");
        if (!j.at("best").is_null()) {
            state.best = individual_from(j.at("best"));
        }
        state.best_fitness = number_from(j.at("best_fitness"));
        for (const json& p : j.at("population")) {
            state.population.push_back(individual_from(p));
        }
        for (const json& sj : j.at("species")) {
            Species s;
            s.id = sj.at("id");
            s.representative = parse(sj.at("representative").get<std::string>());
            s.members = sj.at("members").get<std::vector<int>>();
            s.best_fitness = number_from(sj.at("best_fitness"));
            s.stagnation = sj.at("stagnation");
            s.state = parse_state(sj.at("state").get<std::string>());
            s.representative_id = sj.at("representative_id");
            state.species.push_back(std::move(s));
        }
        for (const json& a : j.at("archive")) {
            state.archive.entries.push_back(parse(a.get<std::string>()));
        }
        for (const json& c : j.at("cache")) {
            FitnessRecord r;
            r.genome_id = c.at("genome_id");
            for (const json& v : c.at("curve")) {
                r.curve.push_back(number_from(v));
            }
            r.fitness = number_from(c.at("fitness"));
            r.mode = parse_fitness_mode(c.at("mode").get<std::string>());
            r.diverged = c.at("diverged");
            state.cache[c.at("key").get<std::string>()] = std::move(r);
        }
        state.lineage = j.at("lineage").get<std::vector<std::string>>();
        for (const json& h : j.at("history")) {
            state.history.push_back(stats_from(h));
        }
        return state;
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error(std::string("corrupt checkpoint: ") + e.what());
    } catch (const ParseError& e) {
        throw std::runtime_error(std::string("corrupt checkpoint genome: ") + e.what());
    }
}

std::string history_csv(const std::vector<GenerationStats>& history)
{
    std::string out =
        "generation,best,mean,best_ever,evaluated,trained,diverged,active,inactive,shamed,archive,shame_rejections\n";
    char buf[512];
    for (const GenerationStats& s : history) {
        std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,%.17g,%d,%d,%d,%d,%d,%d,%d,%d\n", s.generation, s.best, s.mean,
                      s.best_ever, s.evaluated, s.trained, s.diverged, s.active, s.inactive, s.shamed, s.archive,
                      s.shame_rejections);
        out += buf;
    }
    return out;
}

} // namespace treecell
