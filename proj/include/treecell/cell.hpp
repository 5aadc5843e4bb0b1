// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cmath>
#include <span>
#include <stdexcept>
#include <vector>

#include <Eigen/Core>

#include "treecell/node_tree.hpp"

namespace treecell {

enum class OpCode : uint8_t { Add, Mul, Tanh, Sigmoid, ReLU };

/// One primitive operation over value slots. rhs is -1 for unary ops.
struct CellOp {
    OpCode code;
    int lhs;
    int rhs;
    int out;
};

class InvalidTreeError : public std::runtime_error {
public:
    explicit InvalidTreeError(ValidationReport report);
    const ValidationReport& report() const { return report_; }

private:
    ValidationReport report_;
};

/// A NodeTree lowered to a straight-line program over value slots.
///
/// Slots 0..7 hold the base inputs, 8 and 9 the previous memory values
/// c(t-1) and d(t-1); every op writes one further slot. Identical pure
/// subexpressions are computed once.
struct CompiledCell {
    static constexpr int kCPrev = kBaseInputs;
    static constexpr int kDPrev = kBaseInputs + 1;
    static constexpr int kFirstOp = kBaseInputs + 2;

    std::vector<CellOp> ops;
    int h_slot = -1;
    int c_slot = kCPrev; // kCPrev when no node is tagged C
    int d_slot = kDPrev;
    int node_count = 0;
    std::array<bool, kBaseInputs> uses_input{};

    int slot_count() const { return kFirstOp + static_cast<int>(ops.size()); }
};

/// Throws InvalidTreeError when validate(tree, limits) is not empty.
CompiledCell compile(const NodeTree& tree, const TreeLimits& limits = {});

/// Gate inputs x0..x3 are preactivations: input gate x0, forget gate x1,
/// candidate x2, output gate x3; the c-producing node is tagged C.
NodeTree lstm_reference_tree();

template <typename T>
using Block = Eigen::Array<T, Eigen::Dynamic, Eigen::Dynamic>;

/// Every slot value of one forward evaluation.
template <typename T>
struct CellTape {
    std::vector<Block<T>> values;

    const Block<T>& h(const CompiledCell& cell) const { return values[cell.h_slot]; }
    const Block<T>& c(const CompiledCell& cell) const { return values[cell.c_slot]; }
    const Block<T>& d(const CompiledCell& cell) const { return values[cell.d_slot]; }
};

template <typename T>
struct CellGrads {
    std::array<Block<T>, kBaseInputs> base;
    Block<T> c_prev;
    Block<T> d_prev;
};

/// Elementwise forward pass. base[k], c_prev and d_prev share one shape.
template <typename T>
void cell_forward(const CompiledCell& cell, std::span<const Block<T>> base, const Block<T>& c_prev,
                  const Block<T>& d_prev, CellTape<T>& tape)
{
    tape.values.resize(cell.slot_count());
    for (int k = 0; k < kBaseInputs; ++k) {
        tape.values[k] = base[k];
    }
    tape.values[CompiledCell::kCPrev] = c_prev;
    tape.values[CompiledCell::kDPrev] = d_prev;
    for (const CellOp& op : cell.ops) {
        const Block<T>& a = tape.values[op.lhs];
        Block<T>& out = tape.values[op.out];
        switch (op.code) {
        case OpCode::Add:
            out = a + tape.values[op.rhs];
            break;
        case OpCode::Mul:
            out = a * tape.values[op.rhs];
            break;
        case OpCode::Tanh:
            out = a.tanh();
            break;
        case OpCode::Sigmoid:
            out = T(1) / (T(1) + (-a).exp());
            break;
        case OpCode::ReLU:
            out = a.max(T(0));
            break;
        }
    }
}

/// Reverse-mode pass over a tape from cell_forward. Gradients of reused
/// slots accumulate. Any of the output gradients may be empty (zero).
template <typename T>
void cell_backward(const CompiledCell& cell, const CellTape<T>& tape, const Block<T>& grad_h, const Block<T>& grad_c,
                   const Block<T>& grad_d, CellGrads<T>& grads)
{
    if (static_cast<int>(tape.values.size()) != cell.slot_count()) {
        throw std::logic_error("cell_backward: missing forward tape");
    }
    const auto rows = tape.values[0].rows();
    const auto cols = tape.values[0].cols();
    std::vector<Block<T>> g(cell.slot_count());
    std::vector<char> live(cell.slot_count(), 0);
    auto accumulate = [&](int slot, const auto& value) {
        if (live[slot]) {
            g[slot] += value;
        } else {
            g[slot] = value;
            live[slot] = 1;
        }
    };
    if (grad_h.size() > 0) {
        accumulate(cell.h_slot, grad_h);
    }
    if (grad_c.size() > 0) {
        accumulate(cell.c_slot, grad_c);
    }
    if (grad_d.size() > 0) {
        accumulate(cell.d_slot, grad_d);
    }
    for (auto it = cell.ops.rbegin(); it != cell.ops.rend(); ++it) {
        const CellOp& op = *it;
        if (!live[op.out]) {
            continue;
        }
        const Block<T>& go = g[op.out];
        const Block<T>& y = tape.values[op.out];
        switch (op.code) {
        case OpCode::Add:
            accumulate(op.lhs, go);
            accumulate(op.rhs, go);
            break;
        case OpCode::Mul:
            if (op.lhs == op.rhs) {
                accumulate(op.lhs, T(2) * go * tape.values[op.lhs]);
            } else {
                accumulate(op.lhs, go * tape.values[op.rhs]);
                accumulate(op.rhs, go * tape.values[op.lhs]);
            }
            break;
        case OpCode::Tanh:
            accumulate(op.lhs, go * (T(1) - y.square()));
            break;
        case OpCode::Sigmoid:
            accumulate(op.lhs, go * y * (T(1) - y));
            break;
        case OpCode::ReLU:
            accumulate(op.lhs, (tape.values[op.lhs] > T(0)).select(go, T(0)));
            break;
        }
    }
    auto take = [&](int slot, Block<T>& dst) {
        if (live[slot]) {
            dst = std::move(g[slot]);
        } else {
            dst.setZero(rows, cols);
        }
    };
    for (int k = 0; k < kBaseInputs; ++k) {
        take(k, grads.base[k]);
    }
    take(CompiledCell::kCPrev, grads.c_prev);
    take(CompiledCell::kDPrev, grads.d_prev);
}

/// Per-unit recurrent state of one cell.
struct CellState {
    std::vector<double> h;
    std::vector<double> c;
    std::vector<double> d;

    static CellState zeros(size_t width) { return {std::vector<double>(width), std::vector<double>(width), std::vector<double>(width)}; }
};

/// Vector-level forward step. Throws std::invalid_argument on width
/// mismatch or non-finite values.
CellState cell_step(const CompiledCell& cell, const std::array<std::vector<double>, kBaseInputs>& base,
                    const CellState& state);

} // namespace treecell
