// SPDX-License-Identifier: Apache-2.0

#include "treecell/data.hpp"

#include <array>
#include <fstream>
#include <sstream>

#include "treecell/rng.hpp"

namespace treecell {

const char* task_name(TaskKind kind)
{
    switch (kind) {
    case TaskKind::CharLm:
        return "char_lm";
    case TaskKind::Music:
        return "music";
    case TaskKind::Synthetic:
        return "synthetic";
    }
    return "?";
}

TaskKind parse_task(const std::string& name)
{
    if (name == "char_lm") {
        return TaskKind::CharLm;
    }
    if (name == "music") {
        return TaskKind::Music;
    }
    if (name == "synthetic") {
        return TaskKind::Synthetic;
    }
    throw std::invalid_argument("unknown task '" + name + "' (expected char_lm, music or synthetic)");
}

size_t TaskData::steps(SplitId s) const
{
    if (is_music()) {
        const size_t n = roll_split(s).steps();
        return n > 0 ? n - 1 : 0;
    }
    return token_split(s).size();
}

namespace {

std::string read_file(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw DataError("cannot open data file " + path.string());
    }
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

TokenSplit next_token_split(const std::vector<int>& ids, size_t begin, size_t end)
{
    TokenSplit s;
    for (size_t i = begin; i + 1 < end; ++i) {
        s.inputs.push_back(ids[i]);
        s.targets.push_back(ids[i + 1]);
    }
    return s;
}

} // namespace

TaskData char_corpus_from_text(const std::string& text)
{
    if (text.size() < 100) {
        throw DataError("corpus too short: " + std::to_string(text.size()) + " bytes");
    }
    std::array<int, 256> index;
    index.fill(-1);
    for (unsigned char ch : text) {
        index[ch] = 0;
    }
    TaskData data;
    data.kind = TaskKind::CharLm;
    for (int b = 0; b < 256; ++b) {
        if (index[b] == 0) {
            index[b] = static_cast<int>(data.vocabulary.size());
            data.vocabulary.emplace_back(1, static_cast<char>(b));
        }
    }
    data.io_dim = static_cast<int>(data.vocabulary.size());
    std::vector<int> ids;
    ids.reserve(text.size());
    for (unsigned char ch : text) {
        ids.push_back(index[ch]);
    }
    const size_t n = ids.size();
    const size_t train_end = n * 90 / 100;
    const size_t valid_end = n * 95 / 100;
    data.tokens[0] = next_token_split(ids, 0, train_end);
    data.tokens[1] = next_token_split(ids, train_end, valid_end);
    data.tokens[2] = next_token_split(ids, valid_end, n);
    return data;
}

TaskData load_char_corpus(const std::filesystem::path& path)
{
    return char_corpus_from_text(read_file(path));
}

TaskData piano_roll_from_matrix(const std::vector<std::vector<uint8_t>>& rows)
{
    if (rows.empty()) {
        throw DataError("piano roll has no rows");
    }
    const size_t steps = rows[0].size();
    for (size_t p = 0; p < rows.size(); ++p) {
        if (rows[p].size() != steps) {
            throw DataError("piano roll row " + std::to_string(p + 1) + " has " + std::to_string(rows[p].size()) +
                            " columns, expected " + std::to_string(steps));
        }
    }
    if (steps < 10) {
        throw DataError("piano roll needs at least 10 timesteps");
    }
    TaskData data;
    data.kind = TaskKind::Music;
    data.io_dim = static_cast<int>(rows.size());
    const size_t cut[4] = {0, steps * 60 / 100, steps * 80 / 100, steps};
    for (int s = 0; s < 3; ++s) {
        RollSplit& split = data.rolls[s];
        split.pitches = data.io_dim;
        for (size_t t = cut[s]; t < cut[s + 1]; ++t) {
            for (const auto& row : rows) {
                split.frames.push_back(row[t]);
            }
        }
    }
    return data;
}

TaskData load_piano_roll(const std::filesystem::path& path)
{
    std::istringstream in(read_file(path));
    std::vector<std::vector<uint8_t>> rows;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) {
            continue;
        }
        std::vector<uint8_t> row;
        for (char ch : line) {
            if (ch == '0' || ch == '1') {
                row.push_back(static_cast<uint8_t>(ch - '0'));
            } else if (ch != ',' && ch != ' ' && ch != '\t' && ch != '\r') {
                throw DataError(path.string() + ":" + std::to_string(line_no) + ": entries must be 0 or 1");
            }
        }
        rows.push_back(std::move(row));
    }
    return piano_roll_from_matrix(rows);
}

TaskData synthetic_memory(const SyntheticConfig& config)
{
    if (config.vocab < 2 || config.lag < 1) {
        throw std::invalid_argument("synthetic task needs vocab >= 2 and lag >= 1");
    }
    TaskData data;
    data.kind = TaskKind::Synthetic;
    data.io_dim = config.vocab;
    for (int v = 0; v < config.vocab; ++v) {
        data.vocabulary.push_back(std::to_string(v));
    }
    Rng rng(config.seed);
    const int lengths[3] = {config.train_length, config.valid_length, config.test_length};
    for (int s = 0; s < 3; ++s) {
        TokenSplit& split = data.tokens[s];
        for (int t = 0; t < lengths[s]; ++t) {
            split.inputs.push_back(static_cast<int>(rng.index(config.vocab)));
            split.targets.push_back(t >= config.lag ? split.inputs[t - config.lag] : 0);
        }
    }
    return data;
}

} // namespace treecell
