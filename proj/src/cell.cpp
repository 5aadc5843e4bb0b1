// SPDX-License-Identifier: Apache-2.0

#include "treecell/cell.hpp"

#include <map>
#include <tuple>

namespace treecell {

InvalidTreeError::InvalidTreeError(ValidationReport report)
    : std::runtime_error("invalid tree:\n" + format_report(report))
    , report_(std::move(report))
{
}

namespace {

OpCode opcode_for(Symbol s)
{
    switch (s) {
    case Symbol::Add:
        return OpCode::Add;
    case Symbol::Mul:
        return OpCode::Mul;
    case Symbol::Tanh:
        return OpCode::Tanh;
    case Symbol::Sigmoid:
        return OpCode::Sigmoid;
    case Symbol::ReLU:
        return OpCode::ReLU;
    default:
        throw std::logic_error("leaf has no opcode");
    }
}

class Lowering {
public:
    explicit Lowering(CompiledCell& cell) : cell_(cell) {}

    int emit(OpCode code, int lhs, int rhs)
    {
        if ((code == OpCode::Add || code == OpCode::Mul) && rhs < lhs) {
            std::swap(lhs, rhs);
        }
        const auto key = std::make_tuple(code, lhs, rhs);
        if (const auto it = seen_.find(key); it != seen_.end()) {
            return it->second;
        }
        const int out = cell_.slot_count();
        cell_.ops.push_back({code, lhs, rhs, out});
        seen_.emplace(key, out);
        return out;
    }

    int lower(const NodeTree& tree, int id, std::vector<int>& slot_of)
    {
        const TreeNode& n = tree.node(id);
        int slot = 0;
        switch (n.symbol) {
        case Symbol::Input:
            slot = n.input;
            cell_.uses_input[n.input] = true;
            break;
        case Symbol::MemoryC:
            slot = CompiledCell::kCPrev;
            break;
        case Symbol::MemoryD:
            slot = CompiledCell::kDPrev;
            break;
        default: {
            const int lhs = lower(tree, n.children[0], slot_of);
            const int rhs = n.children.size() > 1 ? lower(tree, n.children[1], slot_of) : -1;
            slot = emit(opcode_for(n.symbol), lhs, rhs);
        }
        }
        slot_of[id] = slot;
        return slot;
    }

private:
    CompiledCell& cell_;
    std::map<std::tuple<OpCode, int, int>, int> seen_;
};

} // namespace

CompiledCell compile(const NodeTree& tree, const TreeLimits& limits)
{
    if (auto report = validate(tree, limits); !report.empty()) {
        throw InvalidTreeError(std::move(report));
    }
    CompiledCell cell;
    cell.node_count = static_cast<int>(tree.size());
    Lowering lowering(cell);
    std::vector<int> slot_of(tree.size(), -1);
    cell.h_slot = lowering.lower(tree, tree.root(), slot_of);

    auto reduce = [&](Modi tag, int fallback) {
        int acc = -1;
        for (const TreeNode& n : tree.nodes()) {
            if (n.modi == tag) {
                acc = acc < 0 ? slot_of[n.id] : lowering.emit(OpCode::Add, acc, slot_of[n.id]);
            }
        }
        return acc < 0 ? fallback : acc;
    };
    cell.c_slot = reduce(Modi::C, CompiledCell::kCPrev);
    cell.d_slot = reduce(Modi::D, CompiledCell::kDPrev);
    return cell;
}

NodeTree lstm_reference_tree()
{
    // h = sigmoid(x3) * tanh(c),  c = sigmoid(x1) * cprev + sigmoid(x0) * tanh(x2)
    return parse("(mul (sigmoid x3) (tanh (add@c (mul (sigmoid x1) cprev) (mul (sigmoid x0) (tanh x2)))))");
}

CellState cell_step(const CompiledCell& cell, const std::array<std::vector<double>, kBaseInputs>& base,
                    const CellState& state)
{
    const size_t width = state.c.size();
    auto check = [&](const std::vector<double>& v, const char* what) {
        if (v.size() != width) {
            throw std::invalid_argument(std::string("cell_step: width mismatch in ") + what);
        }
        for (double x : v) {
            if (!std::isfinite(x)) {
                throw std::invalid_argument(std::string("cell_step: non-finite value in ") + what);
            }
        }
    };
    check(state.d, "d");
    check(state.c, "c");
    std::array<Block<double>, kBaseInputs> blocks;
    for (int k = 0; k < kBaseInputs; ++k) {
        check(base[k], "base input");
        blocks[k] = Eigen::Map<const Eigen::ArrayXd>(base[k].data(), static_cast<Eigen::Index>(width));
    }
    const Block<double> c = Eigen::Map<const Eigen::ArrayXd>(state.c.data(), static_cast<Eigen::Index>(width));
    const Block<double> d = Eigen::Map<const Eigen::ArrayXd>(state.d.data(), static_cast<Eigen::Index>(width));
    CellTape<double> tape;
    cell_forward<double>(cell, blocks, c, d, tape);
    auto out = [&](const Block<double>& b) { return std::vector<double>(b.data(), b.data() + b.size()); };
    return {out(tape.h(cell)), out(tape.c(cell)), out(tape.d(cell))};
}

} // namespace treecell
