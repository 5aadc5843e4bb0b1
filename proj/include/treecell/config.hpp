// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>

#include "treecell/data.hpp"
#include "treecell/evolution.hpp"
#include "treecell/meta.hpp"
#include "treecell/network.hpp"

namespace treecell {

struct ExperimentPaths {
    std::string data;            // corpus or piano-roll file; unused by the synthetic task
    std::string checkpoint_dir = "checkpoints";
    std::string output_dir = "output";
    std::string meta_model;      // needed in meta_predicted mode
};

struct ExperimentConfig {
    TaskKind task = TaskKind::Synthetic;
    Precision precision = Precision::F64;
    int workers = 1;
    int full_epochs = 40;
    NetworkShape network;
    SyntheticConfig synthetic;
    EvolutionConfig evolution;
    TrainConfig train;
    MetaConfig meta;
    ExperimentPaths paths;
};

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// INI text with sections experiment, paths, network, synthetic, evolution,
/// speciation, train and meta. Missing keys keep their defaults; unknown
/// sections or keys and malformed values throw ConfigError.
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::filesystem::path& path);

/// Every field, in a form parse_config reads back unchanged.
std::string emit_config(const ExperimentConfig& config);

/// Range checks on every section. Throws ConfigError.
void check_config(const ExperimentConfig& config);

/// Loads the task named by the config; relative data paths resolve against
/// `base`. Throws DataError when the file is missing or malformed.
TaskData load_task(const ExperimentConfig& config, const std::filesystem::path& base = {});

} // namespace treecell
