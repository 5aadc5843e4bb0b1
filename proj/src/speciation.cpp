// SPDX-License-Identifier: Apache-2.0

#include "treecell/speciation.hpp"

#include <algorithm>
#include <stdexcept>
#include <string>

namespace treecell {

int count_state(const std::vector<Species>& species, SpeciesState state)
{
    return static_cast<int>(
        std::count_if(species.begin(), species.end(), [&](const Species& s) { return s.state == state; }));
}

int assign_species(const NodeTree& genome, int genome_id, std::vector<Species>& species,
                   const SpeciationConfig& config)
{
    for (auto& s : species) {
        if (s.state == SpeciesState::Shamed) {
            continue;
        }
        if (tree_distance(genome, s.representative, config.distance) < config.compatibility_threshold) {
            s.members.push_back(genome_id);
            return s.id;
        }
    }
    Species fresh;
    fresh.id = static_cast<int>(species.size());
    fresh.representative = genome;
    fresh.representative_id = genome_id;
    fresh.members.push_back(genome_id);
    fresh.state = count_state(species, SpeciesState::Active) >= config.max_active ? SpeciesState::Inactive
                                                                                  : SpeciesState::Active;
    species.push_back(std::move(fresh));
    return species.back().id;
}

std::vector<int> update_stagnation(std::vector<Species>& species, HallOfShame& archive,
                                   const std::map<int, SpeciesOutcome>& outcomes, const SpeciationConfig& config)
{
    std::vector<int> shamed;
    for (auto& s : species) {
        if (s.state != SpeciesState::Active) {
            continue;
        }
        const auto it = outcomes.find(s.id);
        if (it == outcomes.end()) {
            continue;
        }
        if (it->second.best_fitness < s.best_fitness) {
            s.best_fitness = it->second.best_fitness;
            s.stagnation = 0;
        } else {
            ++s.stagnation;
        }
        if (it->second.best_genome) {
            s.representative = *it->second.best_genome;
            s.representative_id = it->second.best_id;
        }
        if (s.stagnation >= config.stagnation_limit) {
            s.state = SpeciesState::Shamed;
            archive.entries.push_back(s.representative);
            shamed.push_back(s.id);
        }
    }
    for (size_t i = 0; i < shamed.size(); ++i) {
        // Species ids grow with creation time, so the first Inactive one is
        // the oldest.
        const auto waiting = std::find_if(species.begin(), species.end(),
                                          [](const Species& s) { return s.state == SpeciesState::Inactive; });
        if (waiting == species.end()) {
            break;
        }
        waiting->state = SpeciesState::Active;
    }
    return shamed;
}

bool violates_shame(const NodeTree& genome, const HallOfShame& archive, double threshold, const DistanceParams& params)
{
    return std::any_of(archive.entries.begin(), archive.entries.end(),
                       [&](const NodeTree& entry) { return tree_distance(genome, entry, params) < threshold; });
}

const char* state_name(SpeciesState state)
{
    switch (state) {
    case SpeciesState::Active:
        return "active";
    case SpeciesState::Inactive:
        return "inactive";
    case SpeciesState::Shamed:
        return "shamed";
    }
    return "?";
}

SpeciesState parse_state(std::string_view name)
{
    if (name == "active") {
        return SpeciesState::Active;
    }
    if (name == "inactive") {
        return SpeciesState::Inactive;
    }
    if (name == "shamed") {
        return SpeciesState::Shamed;
    }
    throw std::invalid_argument("unknown species state '" + std::string(name) + "'");
}

} // namespace treecell
