// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <limits>
#include <map>
#include <optional>
#include <vector>

#include "treecell/genetic_ops.hpp"
#include "treecell/node_tree.hpp"

namespace treecell {

enum class SpeciesState : uint8_t { Active, Inactive, Shamed };

struct Species {
    int id = 0;
    NodeTree representative;
    std::vector<int> members; // genome ids of the current generation
    double best_fitness = std::numeric_limits<double>::infinity(); // lower is better
    int stagnation = 0;
    SpeciesState state = SpeciesState::Active;
    int representative_id = -1; // genome id the representative was taken from
};

/// Representatives of species that stopped improving. Only ever grows.
struct HallOfShame {
    std::vector<NodeTree> entries;
};

struct SpeciationConfig {
    double compatibility_threshold = 0.3;
    int stagnation_limit = 4;
    int max_active = 10;
    DistanceParams distance;
};

/// What one generation produced for a species.
struct SpeciesOutcome {
    double best_fitness;
    std::optional<NodeTree> best_genome; // becomes the new representative
    int best_id = -1;
};

/// Puts genome_id into the first non-shamed species (by id) whose
/// representative lies within the compatibility threshold, or founds a new
/// species. A new species starts Inactive once max_active species are Active.
/// Species ids equal their index in `species`.
int assign_species(const NodeTree& genome, int genome_id, std::vector<Species>& species,
                   const SpeciationConfig& config);

/// Updates best fitness and stagnation of every Active species with an
/// outcome. Species reaching the stagnation limit are shamed and archived,
/// and for each one the oldest Inactive species is promoted. Returns the ids
/// shamed in this call.
std::vector<int> update_stagnation(std::vector<Species>& species, HallOfShame& archive,
                                   const std::map<int, SpeciesOutcome>& outcomes, const SpeciationConfig& config);

/// True iff genome is closer than threshold to any archived representative.
bool violates_shame(const NodeTree& genome, const HallOfShame& archive, double threshold,
                    const DistanceParams& params = {});

int count_state(const std::vector<Species>& species, SpeciesState state);

const char* state_name(SpeciesState state);
SpeciesState parse_state(std::string_view name);

} // namespace treecell
