// SPDX-License-Identifier: Apache-2.0

#include "treecell/genetic_ops.hpp"

#include <algorithm>
#include <functional>

namespace treecell {

namespace {

struct Match {
    int size = 0;
    int depth = 0;
    bool swapped = false;
    bool computed = false;

    bool better_than(const Match& o) const { return size != o.size ? size > o.size : depth > o.depth; }
};

class Matcher {
public:
    Matcher(const NodeTree& a, const NodeTree& b)
        : a_(a)
        , b_(b)
        , memo_(a.size() * b.size())
    {
    }

    const Match& best(int u, int v)
    {
        Match& m = memo_[static_cast<size_t>(u) * b_.size() + v];
        if (m.computed) {
            return m;
        }
        const auto& nu = a_.node(u);
        const auto& nv = b_.node(v);
        Match result{1, 1, false, true};
        if (!nu.children.empty() && nu.children.size() == nv.children.size()) {
            if (nu.children.size() == 1) {
                const Match& c = best(nu.children[0], nv.children[0]);
                result.size += c.size;
                result.depth += c.depth;
            } else {
                const Match straight = combine(best(nu.children[0], nv.children[0]), best(nu.children[1], nv.children[1]));
                const Match crossed = combine(best(nu.children[0], nv.children[1]), best(nu.children[1], nv.children[0]));
                const bool use_crossed = crossed.better_than(straight);
                const Match& pick = use_crossed ? crossed : straight;
                result.size += pick.size;
                result.depth += pick.depth;
                result.swapped = use_crossed;
            }
        }
        memo_[static_cast<size_t>(u) * b_.size() + v] = result;
        return memo_[static_cast<size_t>(u) * b_.size() + v];
    }

    void collect(int u, int v, std::vector<std::pair<int, int>>& out)
    {
        out.emplace_back(u, v);
        const auto& nu = a_.node(u);
        const auto& nv = b_.node(v);
        if (nu.children.empty() || nu.children.size() != nv.children.size()) {
            return;
        }
        if (nu.children.size() == 1) {
            collect(nu.children[0], nv.children[0], out);
            return;
        }
        const bool swapped = best(u, v).swapped;
        collect(nu.children[0], nv.children[swapped ? 1 : 0], out);
        collect(nu.children[1], nv.children[swapped ? 0 : 1], out);
    }

private:
    static Match combine(const Match& x, const Match& y) { return {x.size + y.size, std::max(x.depth, y.depth), false, true}; }

    const NodeTree& a_;
    const NodeTree& b_;
    std::vector<Match> memo_;
};

TreeNode random_leaf(Rng& rng)
{
    const size_t k = rng.index(kBaseInputs + 2);
    if (k < kBaseInputs) {
        return base_leaf(static_cast<int>(k));
    }
    return memory_leaf(k == kBaseInputs ? Modi::C : Modi::D);
}

std::vector<int> element_ids(const NodeTree& tree)
{
    std::vector<int> ids;
    for (const auto& n : tree.nodes()) {
        if (is_element(n.symbol)) {
            ids.push_back(n.id);
        }
    }
    return ids;
}

} // namespace

SharedRegion shared_region(const NodeTree& a, const NodeTree& b)
{
    Matcher matcher(a, b);
    SharedRegion region;
    const Match& top = matcher.best(a.root(), b.root());
    region.size = top.size;
    region.depth = top.depth;
    matcher.collect(a.root(), b.root(), region.pairs);
    return region;
}

double tree_distance_from_counts(int size_a, int depth_a, int size_b, int depth_b, int shared_size, int shared_depth,
                                 double beta)
{
    const int n = size_a + size_b;
    const int d = depth_a + depth_b;
    const double size_term = n > 2 ? static_cast<double>(n - 2 * shared_size) / (n - 2) : 0.0;
    const double depth_term = d > 2 ? static_cast<double>(d - 2 * shared_depth) / (d - 2) : 0.0;
    return beta * size_term + (1.0 - beta) * depth_term;
}

double tree_distance(const NodeTree& a, const NodeTree& b, const DistanceParams& params)
{
    const SharedRegion region = shared_region(a, b);
    return tree_distance_from_counts(size(a), height(a), size(b), height(b), region.size, region.depth, params.beta);
}

NodeTree mutate_replace(const NodeTree& tree, Rng& rng, const TreeLimits& limits)
{
    const std::vector<int> targets = element_ids(tree);
    if (targets.empty()) {
        return tree;
    }
    for (int attempt = 0; attempt < kOperatorRetries; ++attempt) {
        const int id = targets[rng.index(targets.size())];
        const Symbol current = tree.node(id).symbol;
        std::vector<Symbol> options;
        const auto pool = category(current) == Category::Linear ? std::span<const Symbol>(kLinearSymbols)
                                                                : std::span<const Symbol>(kNonlinearSymbols);
        for (Symbol s : pool) {
            if (s != current) {
                options.push_back(s);
            }
        }
        NodeTree candidate = with_symbol(tree, id, options[rng.index(options.size())]);
        if (is_valid(candidate, limits)) {
            return candidate;
        }
    }
    return tree;
}

NodeTree mutate_insert(const NodeTree& tree, Rng& rng, double modi_rate, const TreeLimits& limits)
{
    for (int attempt = 0; attempt < kOperatorRetries; ++attempt) {
        const int position = static_cast<int>(rng.index(tree.size()));
        const Symbol element = kElementSymbols[rng.index(std::size(kElementSymbols))];
        std::optional<TreeNode> sibling;
        bool sibling_first = false;
        if (arity(element) == 2) {
            sibling = random_leaf(rng);
            sibling_first = rng.bernoulli(0.5);
        }
        const bool wants_modi = rng.bernoulli(modi_rate);
        const Modi which = rng.bernoulli(0.5) ? Modi::C : Modi::D;

        const bool memory_path = has_memory_path(tree, position) || (sibling && is_memory(sibling->symbol));
        std::optional<Modi> modi;
        if (wants_modi && position != tree.root() && memory_path) {
            modi = which;
        }
        NodeTree candidate = insert_above(tree, position, element, sibling, sibling_first, modi);
        if (is_valid(candidate, limits)) {
            return candidate;
        }
    }
    return tree;
}

NodeTree mutate_shrink(const NodeTree& tree, Rng& rng, const TreeLimits& limits)
{
    const std::vector<int> targets = element_ids(tree);
    if (targets.size() < 2) {
        return tree;
    }
    for (int attempt = 0; attempt < kOperatorRetries; ++attempt) {
        const int id = targets[rng.index(targets.size())];
        const int child = static_cast<int>(rng.index(tree.node(id).children.size()));
        NodeTree candidate = strip_invalid_modi(hoist_child(tree, id, child));
        if (is_valid(candidate, limits)) {
            return candidate;
        }
    }
    return tree;
}

std::pair<NodeTree, NodeTree> crossover_homologous(const NodeTree& a, const NodeTree& b, Rng& rng,
                                                   const TreeLimits& limits)
{
    const SharedRegion region = shared_region(a, b);
    std::span<const std::pair<int, int>> points(region.pairs);
    if (points.size() > 1) {
        points = points.subspan(1);
    }
    for (int attempt = 0; attempt < kOperatorRetries; ++attempt) {
        const auto [u, v] = points[rng.index(points.size())];
        NodeTree child_a = strip_invalid_modi(replace_subtree(a, u, b, v));
        NodeTree child_b = strip_invalid_modi(replace_subtree(b, v, a, u));
        if (is_valid(child_a, limits) && is_valid(child_b, limits)) {
            return {std::move(child_a), std::move(child_b)};
        }
    }
    return {a, b};
}

} // namespace treecell
