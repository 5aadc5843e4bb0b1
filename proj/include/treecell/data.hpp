// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace treecell {

enum class TaskKind : uint8_t { CharLm, Music, Synthetic };

const char* task_name(TaskKind kind);
TaskKind parse_task(const std::string& name);

enum class SplitId : uint8_t { Train, Valid, Test };

/// Token stream where inputs[t] should predict targets[t].
struct TokenSplit {
    std::vector<int> inputs;
    std::vector<int> targets;

    size_t size() const { return inputs.size(); }
};

/// Binary piano-roll, column-major: frames[t * pitches + p] is 1 when pitch
/// p sounds at timestep t. Column t predicts column t + 1.
struct RollSplit {
    int pitches = 88;
    std::vector<uint8_t> frames;

    size_t steps() const { return pitches ? frames.size() / pitches : 0; }
    uint8_t at(int pitch, size_t t) const { return frames[t * pitches + pitch]; }
};

struct TaskData {
    TaskKind kind = TaskKind::CharLm;
    int io_dim = 0; // vocabulary size, or pitch count for music
    std::vector<std::string> vocabulary;
    TokenSplit tokens[3];
    RollSplit rolls[3];

    bool is_music() const { return kind == TaskKind::Music; }
    const TokenSplit& token_split(SplitId s) const { return tokens[static_cast<int>(s)]; }
    const RollSplit& roll_split(SplitId s) const { return rolls[static_cast<int>(s)]; }
    /// Prediction steps available in a split.
    size_t steps(SplitId s) const;
};

class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Byte-level corpus: vocabulary is the set of bytes present, split 90/5/5
/// in order. Throws DataError when the file is missing or too short.
TaskData load_char_corpus(const std::filesystem::path& path);
TaskData char_corpus_from_text(const std::string& text);

/// Delimited integer matrix, one row per pitch (comma, space or tab
/// separated), split 60/20/20 along time.
TaskData load_piano_roll(const std::filesystem::path& path);
TaskData piano_roll_from_matrix(const std::vector<std::vector<uint8_t>>& rows);

struct SyntheticConfig {
    int vocab = 8;
    int lag = 4;
    int train_length = 6000;
    int valid_length = 1000;
    int test_length = 1000;
    uint64_t seed = 7;
};

/// Uniform random tokens; the target at step t is the input seen `lag`
/// steps earlier (token 0 before that).
TaskData synthetic_memory(const SyntheticConfig& config);

} // namespace treecell
