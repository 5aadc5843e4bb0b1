// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "treecell/meta.hpp"
#include "treecell/network.hpp"
#include "treecell/speciation.hpp"

namespace treecell {

enum class FitnessMode : uint8_t { MetaPredicted, Epoch10Baseline, FullTrain };

const char* fitness_mode_name(FitnessMode mode);
FitnessMode parse_fitness_mode(std::string_view name);

struct EvolutionConfig {
    int population_size = 100;
    int generations = 30;
    double crossover_rate = 0.6;
    double insert_rate = 0.6;
    double shrink_rate = 0.3;
    double modi_rate = 0.3;
    SpeciationConfig speciation;
    FitnessMode fitness_mode = FitnessMode::MetaPredicted;
    int partial_epochs = 10;
    int tournament_size = 3;
    int shame_attempts = 50;
    TreeLimits limits;
    uint64_t seed = 1;
};

/// Throws std::invalid_argument naming the first bad field.
void check_evolution_config(const EvolutionConfig& config);

constexpr double kDivergedFitness = std::numeric_limits<double>::infinity();

struct FitnessRecord {
    int genome_id = 0;
    std::vector<double> curve; // per-epoch fitness values, lower is better
    double fitness = kDivergedFitness;
    FitnessMode mode = FitnessMode::Epoch10Baseline;
    bool diverged = false;
};

/// Per-epoch fitness values (lower is better) of a genome trained for
/// `epochs` epochs. May throw TrainingDiverged. Called concurrently from
/// several threads when workers > 1.
using GenomeTrainer = std::function<std::vector<double>(const NodeTree& genome, int epochs)>;

/// What the engine needs to score a genome.
struct FitnessContext {
    GenomeTrainer trainer;
    int full_epochs = 40;            // full_train mode
    const MetaModel* meta = nullptr; // meta_predicted mode
};

/// Shape of the homogeneous networks used to score genomes.
struct NetworkShape {
    int layers = 1;
    int width = 20;
    int embedding_dim = 16;
};

/// Trains a homogeneous network of the genome on `data`; the returned
/// values are fitness_from_metric of each epoch's validation metric.
GenomeTrainer task_trainer(const TaskData& data, NetworkShape shape, TrainConfig train, Precision precision);

/// Fitness of one candidate under `mode`; `train` returns its per-epoch
/// fitness curve for the requested number of epochs. Divergence and
/// non-finite results give kDivergedFitness.
FitnessRecord score_candidate(const std::function<std::vector<double>(int epochs)>& train, FitnessMode mode,
                              int partial_epochs, const FitnessContext& context);

struct Individual {
    int id = 0;
    NodeTree genome;
};

struct GenerationStats {
    int generation = 0;
    double best = kDivergedFitness; // among this generation's evaluated genomes
    double mean = kDivergedFitness; // over finite fitnesses
    double best_ever = kDivergedFitness;
    int evaluated = 0;
    int trained = 0; // cache misses
    int diverged = 0;
    int active = 0;
    int inactive = 0;
    int shamed = 0;
    int archive = 0;
    int shame_rejections = 0;
};

/// Everything needed to continue a run.
struct EvolutionState {
    int generation = 0; // next generation to evaluate
    int next_id = 0;
    std::vector<Individual> population;
    std::vector<Species> species;
    HallOfShame archive;
    std::map<std::string, FitnessRecord> cache; // by canonical serialization
    std::vector<std::string> lineage;
    std::vector<GenerationStats> history;
    Individual best;
    double best_fitness = kDivergedFitness;
    std::string rng_state;
    bool finished = false;
};

using EvolutionLog = std::function<void(const std::string&)>;

/// Key under which a genome's record is cached.
std::string cache_key(const NodeTree& genome);

/// One operator application recorded in the lineage log.
struct LineageEntry {
    int id = 0;
    std::string op; // seed | insert | shrink | replace | crossover
    std::vector<int> parents;
    uint64_t op_seed = 0;
    int side = 0; // crossover child taken
};

std::string format_lineage(const LineageEntry& entry);
LineageEntry parse_lineage(const std::string& line);

/// Re-applies every logged operator from the seed tree. Returns the genome
/// of every id in the log.
std::map<int, NodeTree> replay_lineage(const std::vector<std::string>& lines, const EvolutionConfig& config);

/// Seed tree plus population_size - 1 single-mutation variants.
EvolutionState init_population(const EvolutionConfig& config);

/// Assigns every individual to a species; members of Inactive species are
/// not scored. Returns the record of every Active-species member, trained
/// once per distinct cache key, `workers` at a time.
std::map<int, FitnessRecord> evaluate_generation(EvolutionState& state, const EvolutionConfig& config,
                                                 const FitnessContext& context, int workers,
                                                 GenerationStats& stats);

/// Next population from the scored Active species; see the reproduction
/// rules in the README. Returns the number of shame rejections.
int reproduce(EvolutionState& state, const std::map<int, FitnessRecord>& records, const EvolutionConfig& config,
              Rng& rng, const EvolutionLog& log = {});

/// Runs one generation: evaluate, update stagnation, reproduce (skipped
/// after the last generation).
void step_generation(EvolutionState& state, const EvolutionConfig& config, const FitnessContext& context,
                     int workers, const EvolutionLog& log = {});

using GenerationCallback = std::function<void(const EvolutionState&)>;

/// Runs generations until config.generations have been evaluated (plus
/// the evaluation-only generation 0 when generations == 0).
EvolutionState run_evolution(const EvolutionConfig& config, const FitnessContext& context, int workers = 1,
                             const GenerationCallback& on_generation = {}, const EvolutionLog& log = {});

/// Continues a run from a saved state.
void resume_evolution(EvolutionState& state, const EvolutionConfig& config, const FitnessContext& context,
                      int workers = 1, const GenerationCallback& on_generation = {}, const EvolutionLog& log = {});

/// Checkpoint text (JSON with format tag and version).
std::string serialize_state(const EvolutionState& state);
EvolutionState deserialize_state(const std::string& text);

/// CSV with header and one row per generation; no timings, so equal runs
/// give equal bytes.
std::string history_csv(const std::vector<GenerationStats>& history);

} // namespace treecell
