// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace treecell {

inline constexpr int kBaseInputs = 8;

enum class Symbol : uint8_t {
    // elements
    Add,
    Mul,
    Tanh,
    Sigmoid,
    ReLU,
    // leaves
    Input,
    MemoryC,
    MemoryD,
};

enum class Category : uint8_t { Linear, Nonlinear, Leaf };

/// Auxiliary output a non-root node may feed (memory cells c and d).
enum class Modi : uint8_t { C, D };

constexpr int arity(Symbol s)
{
    switch (s) {
    case Symbol::Add:
    case Symbol::Mul:
        return 2;
    case Symbol::Tanh:
    case Symbol::Sigmoid:
    case Symbol::ReLU:
        return 1;
    default:
        return 0;
    }
}

constexpr Category category(Symbol s)
{
    switch (arity(s)) {
    case 2:
        return Category::Linear;
    case 1:
        return Category::Nonlinear;
    default:
        return Category::Leaf;
    }
}

constexpr bool is_element(Symbol s) { return arity(s) > 0; }
constexpr bool is_memory(Symbol s) { return s == Symbol::MemoryC || s == Symbol::MemoryD; }

std::string_view symbol_name(Symbol s);

inline constexpr Symbol kLinearSymbols[] = {Symbol::Add, Symbol::Mul};
inline constexpr Symbol kNonlinearSymbols[] = {Symbol::Tanh, Symbol::Sigmoid, Symbol::ReLU};
inline constexpr Symbol kElementSymbols[] = {Symbol::Add, Symbol::Mul, Symbol::Tanh, Symbol::Sigmoid, Symbol::ReLU};

struct TreeNode {
    int id = 0;
    Symbol symbol = Symbol::Input;
    int input = -1; // base-input index for Symbol::Input, else -1
    std::vector<int> children;
    std::optional<Modi> modi;

    friend bool operator==(const TreeNode&, const TreeNode&) = default;
};

/// Convenience constructors for leaves.
TreeNode base_leaf(int k);
TreeNode memory_leaf(Modi which);

/// Thrown when a node list does not describe a tree (dangling ids, arity
/// mismatch, shared or unreachable nodes). Distinct from rule violations,
/// which validate() reports without throwing.
class StructuralError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ParseError : public std::runtime_error {
public:
    ParseError(const std::string& what, int line, int column);
    int line() const { return line_; }
    int column() const { return column_; }

private:
    int line_;
    int column_;
};

/// Rooted expression tree describing one recurrent cell.
///
/// Nodes are stored so that node.id equals its position; trees produced by
/// the library are additionally in preorder (root has id 0). The root value
/// is output h; nodes tagged Modi::C / Modi::D are summed into c and d.
class NodeTree {
public:
    NodeTree() = default;

    /// Throws StructuralError when the node list is not a well-formed tree.
    NodeTree(std::vector<TreeNode> nodes, int root, int generation_born = 0);

    int root() const { return root_; }
    const TreeNode& node(int id) const;
    std::span<const TreeNode> nodes() const { return nodes_; }
    size_t size() const { return nodes_.size(); }
    bool empty() const { return nodes_.empty(); }

    int generation_born() const { return generation_born_; }
    void set_generation_born(int g) { generation_born_ = g; }

    /// Parent id per node, -1 for the root.
    std::vector<int> parents() const;

    /// Nodes on the longest path from id down to a leaf, inclusive.
    int subtree_height(int id) const;
    int subtree_size(int id) const;

    /// Ids of the subtree rooted at id, in preorder.
    std::vector<int> subtree_ids(int id) const;

    /// Structural equality: symbols, inputs, modi tags and child order.
    friend bool operator==(const NodeTree& a, const NodeTree& b);

private:
    std::vector<TreeNode> nodes_;
    int root_ = -1;
    int generation_born_ = 0;
};

struct TreeLimits {
    int min_height = 6;
    int max_height = 15;
};

enum class Rule : uint8_t { ConsecutiveNonlinearity, HeightBound, ModiWithoutMemoryPath, ModiOnRoot };

struct Violation {
    Rule rule;
    int node;
    std::string message;
};

using ValidationReport = std::vector<Violation>;

ValidationReport validate(const NodeTree& tree, const TreeLimits& limits = {});
bool is_valid(const NodeTree& tree, const TreeLimits& limits = {});
std::string format_report(const ValidationReport& report);

int height(const NodeTree& tree);
int size(const NodeTree& tree);

/// True iff the subtree at id contains a MemoryC or MemoryD leaf.
/// Throws std::out_of_range for unknown ids.
bool has_memory_path(const NodeTree& tree, int id);

/// Orders the children of every Add/Mul node by (size, height, shape,
/// serialization) so that trees equal up to child swaps compare equal.
NodeTree canonicalize(const NodeTree& tree);

/// Parenthesized prefix form, e.g. "(add@c (mul x0 cprev) x3)".
std::string serialize(const NodeTree& tree);
std::string serialize_subtree(const NodeTree& tree, int id);
NodeTree parse(std::string_view text);

/// Serialization with element kinds erased, only arities kept.
std::string shape_of(const NodeTree& tree, int id);

/// Balanced Add reduction of all base inputs, joined with Add(cprev, dprev),
/// under a Tanh root. Height 6.
NodeTree seed_tree();

// Rebuilding edits. All return new trees renumbered in preorder and do not
// check rule validity.

NodeTree with_symbol(const NodeTree& tree, int id, Symbol symbol);
NodeTree with_modi(const NodeTree& tree, int id, std::optional<Modi> modi);

/// Replaces the subtree at id with donor's subtree at donor_id.
NodeTree replace_subtree(const NodeTree& tree, int id, const NodeTree& donor, int donor_id);

/// Puts a new element above the subtree at id. For a binary element,
/// sibling becomes the other operand (placed first when sibling_first).
NodeTree insert_above(const NodeTree& tree, int id, Symbol element, const std::optional<TreeNode>& sibling = {},
                      bool sibling_first = false, std::optional<Modi> modi = {});

/// Replaces the element at id with its child number child_index.
NodeTree hoist_child(const NodeTree& tree, int id, int child_index);

/// Drops modi tags that are no longer legal (root, or no memory path).
NodeTree strip_invalid_modi(const NodeTree& tree);

} // namespace treecell
