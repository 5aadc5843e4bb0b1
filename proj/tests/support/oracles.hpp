// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <utility>
#include <vector>

#include "treecell/cell.hpp"
#include "treecell/node_tree.hpp"
#include "treecell/rng.hpp"

namespace treecell::testing {

/// Textbook LSTM step for one unit, gate preactivations given directly.
struct LstmStep {
    double c;
    double h;
};

inline LstmStep closed_form_lstm(double input_gate, double forget_gate, double candidate, double output_gate,
                                 double c_prev)
{
    auto sigmoid = [](double x) { return 1.0 / (1.0 + std::exp(-x)); };
    const double c = sigmoid(forget_gate) * c_prev + sigmoid(input_gate) * std::tanh(candidate);
    return {c, sigmoid(output_gate) * std::tanh(c)};
}

// Top-down match with children paired in stored order.
inline std::pair<int, int> straight_match(const NodeTree& a, int u, const NodeTree& b, int v)
{
    const auto& nu = a.node(u);
    const auto& nv = b.node(v);
    int size = 1;
    int depth = 1;
    if (!nu.children.empty() && nu.children.size() == nv.children.size()) {
        int deepest = 0;
        for (size_t i = 0; i < nu.children.size(); ++i) {
            const auto [s, d] = straight_match(a, nu.children[i], b, nv.children[i]);
            size += s;
            deepest = std::max(deepest, d);
        }
        depth += deepest;
    }
    return {size, depth};
}

/// Shared (size, depth) maximized over every combination of child swaps in
/// b. Exponential in the number of binary nodes of b.
inline std::pair<int, int> brute_force_shared(const NodeTree& a, const NodeTree& b)
{
    std::vector<int> binary;
    for (const auto& n : b.nodes()) {
        if (n.children.size() == 2) {
            binary.push_back(n.id);
        }
    }
    std::pair<int, int> best{0, 0};
    for (uint32_t mask = 0; mask < (1U << binary.size()); ++mask) {
        std::vector<TreeNode> nodes(b.nodes().begin(), b.nodes().end());
        for (size_t i = 0; i < binary.size(); ++i) {
            if (mask & (1U << i)) {
                std::swap(nodes[binary[i]].children[0], nodes[binary[i]].children[1]);
            }
        }
        const NodeTree rotated(std::move(nodes), b.root());
        best = std::max(best, straight_match(a, a.root(), rotated, rotated.root()));
    }
    return best;
}

/// Distance recomputed from raw counts with plain arithmetic.
inline double distance_by_formula(int na, int da, int nb, int db, int ns, int ds, double beta = 0.5)
{
    const double n = na + nb;
    const double d = da + db;
    const double size_term = n == 2 ? 0.0 : (n - 2.0 * ns) / (n - 2.0);
    const double depth_term = d == 2 ? 0.0 : (d - 2.0 * ds) / (d - 2.0);
    return beta * size_term + (1.0 - beta) * depth_term;
}

struct GradientCheck {
    double worst_relative = 0.0;
    int compared = 0;
    int failures = 0;
};

/// Compares cell_backward against central differences for every output
/// (h, c, d) separately and every input slot, per unit. A pair passes when
/// |analytic - numeric| <= tol * max(|analytic|, |numeric|), or is below
/// abs_floor when both are essentially zero.
inline GradientCheck check_cell_gradients(const CompiledCell& cell, Rng& rng, int width = 3, double eps = 1e-5,
                                          double tol = 1e-5, double abs_floor = 1e-9)
{
    using B = Block<double>;
    std::array<B, kBaseInputs> base;
    for (auto& b : base) {
        b.resize(width, 1);
        for (int i = 0; i < width; ++i) {
            b(i) = rng.normal();
        }
    }
    B c_prev(width, 1);
    B d_prev(width, 1);
    for (int i = 0; i < width; ++i) {
        c_prev(i) = rng.normal();
        d_prev(i) = rng.normal();
    }
    auto run = [&](const std::array<B, kBaseInputs>& bs, const B& c, const B& d) {
        CellTape<double> tape;
        cell_forward<double>(cell, bs, c, d, tape);
        return tape;
    };
    const CellTape<double> tape = run(base, c_prev, d_prev);

    GradientCheck result;
    for (int output = 0; output < 3; ++output) {
        for (int unit = 0; unit < width; ++unit) {
            B seed = B::Zero(width, 1);
            seed(unit) = 1.0;
            const B none;
            CellGrads<double> grads;
            cell_backward<double>(cell, tape, output == 0 ? seed : none, output == 1 ? seed : none,
                                  output == 2 ? seed : none, grads);
            auto value = [&](const CellTape<double>& t) {
                const B& out = output == 0 ? t.h(cell) : output == 1 ? t.c(cell) : t.d(cell);
                return out(unit);
            };
            for (int slot = 0; slot < kBaseInputs + 2; ++slot) {
                for (int j = 0; j < width; ++j) {
                    auto bp = base;
                    auto bm = base;
                    B cp = c_prev;
                    B cm = c_prev;
                    B dp = d_prev;
                    B dm = d_prev;
                    if (slot < kBaseInputs) {
                        bp[slot](j) += eps;
                        bm[slot](j) -= eps;
                    } else if (slot == kBaseInputs) {
                        cp(j) += eps;
                        cm(j) -= eps;
                    } else {
                        dp(j) += eps;
                        dm(j) -= eps;
                    }
                    const double numeric = (value(run(bp, cp, dp)) - value(run(bm, cm, dm))) / (2.0 * eps);
                    const double analytic = slot < kBaseInputs    ? grads.base[slot](j)
                                            : slot == kBaseInputs ? grads.c_prev(j)
                                                                  : grads.d_prev(j);
                    const double diff = std::abs(analytic - numeric);
                    const double scale = std::max(std::abs(analytic), std::abs(numeric));
                    ++result.compared;
                    if (diff <= abs_floor) {
                        continue;
                    }
                    const double rel = diff / scale;
                    result.worst_relative = std::max(result.worst_relative, rel);
                    if (rel > tol) {
                        ++result.failures;
                    }
                }
            }
        }
    }
    return result;
}

} // namespace treecell::testing
