// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <utility>
#include <vector>

#include "treecell/node_tree.hpp"
#include "treecell/rng.hpp"

namespace treecell {

/// Attempts an operator makes before giving up and returning its input.
inline constexpr int kOperatorRetries = 20;

struct DistanceParams {
    double beta = 0.5; // weight of the size term against the depth term
};

/// Top-down structural match between two trees. pairs[0] is the root pair.
struct SharedRegion {
    std::vector<std::pair<int, int>> pairs;
    int size = 0;  // matched node count
    int depth = 0; // nodes on the longest matched root-to-leaf path
};

/// Roots always match. Below a matched pair of equal arity the children are
/// matched pairwise; for binary nodes both child pairings are tried and the
/// one with the larger (size, depth) wins, so the result is the same for any
/// child rotation of either tree. Element kinds are ignored.
SharedRegion shared_region(const NodeTree& a, const NodeTree& b);

/// Structural tree distance in [0, 1]:
///   beta * (N - 2 n_S) / (N - 2) + (1 - beta) * (D - 2 d_S) / (D - 2)
/// with N, D the summed sizes and heights. A term whose denominator is zero
/// contributes 0.
double tree_distance(const NodeTree& a, const NodeTree& b, const DistanceParams& params = {});

/// The formula alone, for callers that already know the counts.
double tree_distance_from_counts(int size_a, int depth_a, int size_b, int depth_b, int shared_size, int shared_depth,
                                 double beta);

/// Swaps one element for another of the same category. Identity when no
/// legal replacement is found.
NodeTree mutate_replace(const NodeTree& tree, Rng& rng, const TreeLimits& limits = {});

/// Inserts a random element above a random node. Binary insertions take a
/// fresh random leaf as the other operand. With probability modi_rate the new
/// node is tagged C or D, provided its subtree reaches a memory leaf.
NodeTree mutate_insert(const NodeTree& tree, Rng& rng, double modi_rate, const TreeLimits& limits = {});

/// Replaces a random element by one of its children.
NodeTree mutate_shrink(const NodeTree& tree, Rng& rng, const TreeLimits& limits = {});

/// One-point crossover restricted to the shared region. Falls back to copies
/// of the parents when no exchange yields two valid children.
std::pair<NodeTree, NodeTree> crossover_homologous(const NodeTree& a, const NodeTree& b, Rng& rng,
                                                   const TreeLimits& limits = {});

} // namespace treecell
