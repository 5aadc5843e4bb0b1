// SPDX-License-Identifier: Apache-2.0

#include "treecell/node_tree.hpp"

#include <algorithm>
#include <cctype>
#include <functional>
#include <sstream>
#include <tuple>

namespace treecell {

std::string_view symbol_name(Symbol s)
{
    switch (s) {
    case Symbol::Add:
        return "add";
    case Symbol::Mul:
        return "mul";
    case Symbol::Tanh:
        return "tanh";
    case Symbol::Sigmoid:
        return "sigmoid";
    case Symbol::ReLU:
        return "relu";
    case Symbol::Input:
        return "x";
    case Symbol::MemoryC:
        return "cprev";
    case Symbol::MemoryD:
        return "dprev";
    }
    return "?";
}

TreeNode base_leaf(int k)
{
    TreeNode n;
    n.symbol = Symbol::Input;
    n.input = k;
    return n;
}

TreeNode memory_leaf(Modi which)
{
    TreeNode n;
    n.symbol = which == Modi::C ? Symbol::MemoryC : Symbol::MemoryD;
    return n;
}

ParseError::ParseError(const std::string& what, int line, int column)
    : std::runtime_error("line " + std::to_string(line) + ", column " + std::to_string(column) + ": " + what)
    , line_(line)
    , column_(column)
{
}

// ---------------------------------------------------------------------------
// NodeTree

NodeTree::NodeTree(std::vector<TreeNode> nodes, int root, int generation_born)
    : nodes_(std::move(nodes))
    , root_(root)
    , generation_born_(generation_born)
{
    const int n = static_cast<int>(nodes_.size());
    if (n == 0) {
        throw StructuralError("tree has no nodes");
    }
    if (root_ < 0 || root_ >= n) {
        throw StructuralError("root id " + std::to_string(root_) + " does not resolve");
    }
    std::vector<int> seen(n, 0);
    for (int i = 0; i < n; ++i) {
        const TreeNode& node = nodes_[i];
        if (node.id != i) {
            throw StructuralError("node at position " + std::to_string(i) + " has id " + std::to_string(node.id));
        }
        if (static_cast<int>(node.children.size()) != arity(node.symbol)) {
            throw StructuralError("arity mismatch at node " + std::to_string(i) + ": " +
                                  std::string(symbol_name(node.symbol)) + " expects " +
                                  std::to_string(arity(node.symbol)) + " children, has " +
                                  std::to_string(node.children.size()));
        }
        if (node.symbol == Symbol::Input && (node.input < 0 || node.input >= kBaseInputs)) {
            throw StructuralError("base input index out of range at node " + std::to_string(i));
        }
        for (int child : node.children) {
            if (child < 0 || child >= n) {
                throw StructuralError("dangling child id " + std::to_string(child) + " at node " + std::to_string(i));
            }
            if (child == root_ || ++seen[child] > 1) {
                throw StructuralError("node " + std::to_string(child) + " has more than one parent");
            }
        }
    }
    // Every node must be reachable from the root; with one parent per
    // non-root node this also rules out cycles.
    std::vector<int> stack{root_};
    int reached = 0;
    std::vector<char> visited(n, 0);
    while (!stack.empty()) {
        const int id = stack.back();
        stack.pop_back();
        if (visited[id]) {
            throw StructuralError("cycle through node " + std::to_string(id));
        }
        visited[id] = 1;
        ++reached;
        for (int c : nodes_[id].children) {
            stack.push_back(c);
        }
    }
    if (reached != n) {
        throw StructuralError("tree has unreachable nodes");
    }
}

const TreeNode& NodeTree::node(int id) const
{
    if (id < 0 || id >= static_cast<int>(nodes_.size())) {
        throw std::out_of_range("unknown node id " + std::to_string(id));
    }
    return nodes_[id];
}

std::vector<int> NodeTree::parents() const
{
    std::vector<int> parent(nodes_.size(), -1);
    for (const auto& node : nodes_) {
        for (int c : node.children) {
            parent[c] = node.id;
        }
    }
    return parent;
}

int NodeTree::subtree_height(int id) const
{
    const TreeNode& n = node(id);
    int best = 0;
    for (int c : n.children) {
        best = std::max(best, subtree_height(c));
    }
    return best + 1;
}

int NodeTree::subtree_size(int id) const
{
    const TreeNode& n = node(id);
    int total = 1;
    for (int c : n.children) {
        total += subtree_size(c);
    }
    return total;
}

std::vector<int> NodeTree::subtree_ids(int id) const
{
    std::vector<int> out;
    std::vector<int> stack{id};
    while (!stack.empty()) {
        const int cur = stack.back();
        stack.pop_back();
        out.push_back(cur);
        const auto& ch = node(cur).children;
        for (auto it = ch.rbegin(); it != ch.rend(); ++it) {
            stack.push_back(*it);
        }
    }
    return out;
}

bool operator==(const NodeTree& a, const NodeTree& b)
{
    if (a.empty() || b.empty()) {
        return a.empty() && b.empty();
    }
    std::function<bool(int, int)> same = [&](int x, int y) {
        const TreeNode& p = a.nodes_[x];
        const TreeNode& q = b.nodes_[y];
        if (p.symbol != q.symbol || p.input != q.input || p.modi != q.modi) {
            return false;
        }
        for (size_t i = 0; i < p.children.size(); ++i) {
            if (!same(p.children[i], q.children[i])) {
                return false;
            }
        }
        return true;
    };
    return a.size() == b.size() && same(a.root_, b.root_);
}

// ---------------------------------------------------------------------------
// Validation

int height(const NodeTree& tree) { return tree.empty() ? 0 : tree.subtree_height(tree.root()); }

int size(const NodeTree& tree) { return static_cast<int>(tree.size()); }

bool has_memory_path(const NodeTree& tree, int id)
{
    const TreeNode& n = tree.node(id);
    if (is_memory(n.symbol)) {
        return true;
    }
    return std::any_of(n.children.begin(), n.children.end(), [&](int c) { return has_memory_path(tree, c); });
}

ValidationReport validate(const NodeTree& tree, const TreeLimits& limits)
{
    ValidationReport report;
    const int h = height(tree);
    if (h < limits.min_height || h > limits.max_height) {
        report.push_back({Rule::HeightBound, tree.root(),
                          "height bound: height " + std::to_string(h) + " outside [" +
                              std::to_string(limits.min_height) + ", " + std::to_string(limits.max_height) + "]"});
    }
    for (const TreeNode& n : tree.nodes()) {
        if (category(n.symbol) == Category::Nonlinear) {
            const TreeNode& child = tree.node(n.children[0]);
            if (category(child.symbol) == Category::Nonlinear) {
                report.push_back({Rule::ConsecutiveNonlinearity, n.id,
                                  "consecutive nonlinearity at node " + std::to_string(n.id)});
            }
        }
        if (n.modi) {
            if (n.id == tree.root()) {
                report.push_back({Rule::ModiOnRoot, n.id, "modi tag on root node " + std::to_string(n.id)});
            } else if (!has_memory_path(tree, n.id)) {
                report.push_back({Rule::ModiWithoutMemoryPath, n.id,
                                  "modi tag without memory path at node " + std::to_string(n.id)});
            }
        }
    }
    return report;
}

bool is_valid(const NodeTree& tree, const TreeLimits& limits) { return validate(tree, limits).empty(); }

std::string format_report(const ValidationReport& report)
{
    std::string out;
    for (const auto& v : report) {
        out += v.message;
        out += '\n';
    }
    return out;
}

// ---------------------------------------------------------------------------
// Serialization

namespace {

void append_label(std::string& out, const TreeNode& n)
{
    out += symbol_name(n.symbol);
    if (n.symbol == Symbol::Input) {
        out += std::to_string(n.input);
    }
    if (n.modi) {
        out += *n.modi == Modi::C ? "@c" : "@d";
    }
}

void write_subtree(const NodeTree& tree, int id, std::string& out)
{
    const TreeNode& n = tree.node(id);
    if (n.children.empty()) {
        append_label(out, n);
        return;
    }
    out += '(';
    append_label(out, n);
    for (int c : n.children) {
        out += ' ';
        write_subtree(tree, c, out);
    }
    out += ')';
}

class Parser {
public:
    explicit Parser(std::string_view text) : text_(text) {}

    NodeTree run()
    {
        skip_space();
        if (at_end()) {
            fail("empty genome");
        }
        build();
        skip_space();
        if (!at_end()) {
            fail("unexpected trailing input");
        }
        return NodeTree(std::move(nodes_), 0);
    }

private:
    std::string_view text_;
    size_t pos_ = 0;
    int line_ = 1;
    int column_ = 1;
    std::vector<TreeNode> nodes_;

    bool at_end() const { return pos_ >= text_.size(); }

    [[noreturn]] void fail(const std::string& what) const { throw ParseError(what, line_, column_); }

    void advance()
    {
        if (text_[pos_] == '\n') {
            ++line_;
            column_ = 1;
        } else {
            ++column_;
        }
        ++pos_;
    }

    void skip_space()
    {
        while (!at_end() && std::isspace(static_cast<unsigned char>(text_[pos_]))) {
            advance();
        }
    }

    std::string read_word()
    {
        std::string word;
        while (!at_end()) {
            const char c = text_[pos_];
            if (std::isspace(static_cast<unsigned char>(c)) || c == '(' || c == ')') {
                break;
            }
            word += c;
            advance();
        }
        return word;
    }

    TreeNode label(const std::string& word, int line, int column) const
    {
        TreeNode n;
        std::string name = word;
        if (const auto at = word.find('@'); at != std::string::npos) {
            const std::string tag = word.substr(at + 1);
            name = word.substr(0, at);
            if (tag == "c") {
                n.modi = Modi::C;
            } else if (tag == "d") {
                n.modi = Modi::D;
            } else {
                throw ParseError("unknown modi tag '" + tag + "'", line, column);
            }
        }
        if (name == "add") {
            n.symbol = Symbol::Add;
        } else if (name == "mul") {
            n.symbol = Symbol::Mul;
        } else if (name == "tanh") {
            n.symbol = Symbol::Tanh;
        } else if (name == "sigmoid") {
            n.symbol = Symbol::Sigmoid;
        } else if (name == "relu") {
            n.symbol = Symbol::ReLU;
        } else if (name == "cprev") {
            n.symbol = Symbol::MemoryC;
        } else if (name == "dprev") {
            n.symbol = Symbol::MemoryD;
        } else if (name.size() == 2 && name[0] == 'x' && name[1] >= '0' && name[1] < '0' + kBaseInputs) {
            n.symbol = Symbol::Input;
            n.input = name[1] - '0';
        } else {
            throw ParseError("unknown element name '" + name + "'", line, column);
        }
        return n;
    }

    int build()
    {
        skip_space();
        if (at_end()) {
            fail("unexpected end of input");
        }
        const int id = static_cast<int>(nodes_.size());
        if (text_[pos_] == ')') {
            fail("unexpected ')'");
        }
        if (text_[pos_] != '(') {
            const int line = line_;
            const int column = column_;
            TreeNode n = label(read_word(), line, column);
            if (is_element(n.symbol)) {
                throw ParseError("element '" + std::string(symbol_name(n.symbol)) + "' must be parenthesized", line,
                                 column);
            }
            n.id = id;
            nodes_.push_back(std::move(n));
            return id;
        }
        advance(); // '('
        skip_space();
        const int line = line_;
        const int column = column_;
        TreeNode n = label(read_word(), line, column);
        if (!is_element(n.symbol)) {
            throw ParseError("leaf '" + std::string(symbol_name(n.symbol)) + "' cannot take arguments", line, column);
        }
        n.id = id;
        nodes_.push_back(n);
        std::vector<int> children;
        for (;;) {
            skip_space();
            if (at_end()) {
                fail("missing ')'");
            }
            if (text_[pos_] == ')') {
                advance();
                break;
            }
            children.push_back(build());
        }
        if (static_cast<int>(children.size()) != arity(n.symbol)) {
            throw ParseError("arity mismatch: '" + std::string(symbol_name(n.symbol)) + "' expects " +
                                 std::to_string(arity(n.symbol)) + " arguments, got " +
                                 std::to_string(children.size()),
                             line, column);
        }
        nodes_[id].children = std::move(children);
        return id;
    }
};

} // namespace

std::string serialize_subtree(const NodeTree& tree, int id)
{
    std::string out;
    write_subtree(tree, id, out);
    return out;
}

std::string serialize(const NodeTree& tree) { return serialize_subtree(tree, tree.root()); }

NodeTree parse(std::string_view text) { return Parser(text).run(); }

std::string shape_of(const NodeTree& tree, int id)
{
    const TreeNode& n = tree.node(id);
    if (n.children.empty()) {
        return "L";
    }
    std::string out = "(";
    out += std::to_string(n.children.size());
    for (int c : n.children) {
        out += ' ';
        out += shape_of(tree, c);
    }
    out += ')';
    return out;
}

// ---------------------------------------------------------------------------
// Rebuilding

namespace {

/// Appends nodes in preorder. Callers emit a node, then its children, then
/// patch the children list.
class TreeWriter {
public:
    int open(TreeNode node)
    {
        node.id = static_cast<int>(nodes_.size());
        node.children.clear();
        nodes_.push_back(std::move(node));
        return nodes_.back().id;
    }

    void set_children(int id, std::vector<int> children) { nodes_[id].children = std::move(children); }

    int copy(const NodeTree& src, int id)
    {
        const TreeNode& n = src.node(id);
        const int out = open(n);
        std::vector<int> children;
        for (int c : n.children) {
            children.push_back(copy(src, c));
        }
        set_children(out, std::move(children));
        return out;
    }

    NodeTree finish(int generation_born) { return NodeTree(std::move(nodes_), 0, generation_born); }

private:
    std::vector<TreeNode> nodes_;
};

/// Copies src, giving `hook` a chance to emit something else at each node.
/// The hook returns the new id or -1 to fall through to a plain copy.
NodeTree rebuild(const NodeTree& src, const std::function<int(TreeWriter&, int)>& hook)
{
    TreeWriter writer;
    std::function<int(int)> visit = [&](int id) {
        if (const int replaced = hook(writer, id); replaced >= 0) {
            return replaced;
        }
        const TreeNode& n = src.node(id);
        const int out = writer.open(n);
        std::vector<int> children;
        for (int c : n.children) {
            children.push_back(visit(c));
        }
        writer.set_children(out, std::move(children));
        return out;
    };
    visit(src.root());
    return writer.finish(src.generation_born());
}

} // namespace

NodeTree with_symbol(const NodeTree& tree, int id, Symbol symbol)
{
    if (arity(tree.node(id).symbol) != arity(symbol)) {
        throw StructuralError("replacement changes arity at node " + std::to_string(id));
    }
    std::vector<TreeNode> nodes(tree.nodes().begin(), tree.nodes().end());
    nodes[id].symbol = symbol;
    nodes[id].input = -1;
    return NodeTree(std::move(nodes), tree.root(), tree.generation_born());
}

NodeTree with_modi(const NodeTree& tree, int id, std::optional<Modi> modi)
{
    std::vector<TreeNode> nodes(tree.nodes().begin(), tree.nodes().end());
    nodes.at(id).modi = modi;
    return NodeTree(std::move(nodes), tree.root(), tree.generation_born());
}

NodeTree replace_subtree(const NodeTree& tree, int id, const NodeTree& donor, int donor_id)
{
    tree.node(id);
    donor.node(donor_id);
    return rebuild(tree, [&](TreeWriter& w, int at) { return at == id ? w.copy(donor, donor_id) : -1; });
}

NodeTree insert_above(const NodeTree& tree, int id, Symbol element, const std::optional<TreeNode>& sibling,
                      bool sibling_first, std::optional<Modi> modi)
{
    tree.node(id);
    if (!is_element(element)) {
        throw StructuralError("insert_above requires an element symbol");
    }
    if ((arity(element) == 2) != sibling.has_value()) {
        throw StructuralError("binary insertions need exactly one sibling leaf");
    }
    if (sibling && is_element(sibling->symbol)) {
        throw StructuralError("sibling must be a leaf");
    }
    return rebuild(tree, [&](TreeWriter& w, int at) {
        if (at != id) {
            return -1;
        }
        TreeNode fresh;
        fresh.symbol = element;
        fresh.modi = modi;
        const int top = w.open(fresh);
        std::vector<int> children;
        if (sibling && sibling_first) {
            children.push_back(w.open(*sibling));
        }
        children.push_back(w.copy(tree, id));
        if (sibling && !sibling_first) {
            children.push_back(w.open(*sibling));
        }
        w.set_children(top, std::move(children));
        return top;
    });
}

NodeTree hoist_child(const NodeTree& tree, int id, int child_index)
{
    const TreeNode& n = tree.node(id);
    if (child_index < 0 || child_index >= static_cast<int>(n.children.size())) {
        throw StructuralError("node " + std::to_string(id) + " has no child " + std::to_string(child_index));
    }
    const int child = n.children[child_index];
    return rebuild(tree, [&](TreeWriter& w, int at) { return at == id ? w.copy(tree, child) : -1; });
}

NodeTree strip_invalid_modi(const NodeTree& tree)
{
    std::vector<TreeNode> nodes(tree.nodes().begin(), tree.nodes().end());
    for (auto& n : nodes) {
        if (n.modi && (n.id == tree.root() || !has_memory_path(tree, n.id))) {
            n.modi.reset();
        }
    }
    return NodeTree(std::move(nodes), tree.root(), tree.generation_born());
}

// ---------------------------------------------------------------------------
// Canonical form

namespace {

struct OrderKey {
    int size;
    int height;
    std::string shape;
    std::string text;

    auto tie() const { return std::tie(size, height, shape, text); }
    bool operator<(const OrderKey& o) const { return tie() < o.tie(); }
};

} // namespace

NodeTree canonicalize(const NodeTree& tree)
{
    TreeWriter writer;

    // Keys describe the canonical form of each subtree, so child order can be
    // decided before the parent is written in preorder.
    std::function<OrderKey(int)> key_of = [&](int id) -> OrderKey {
        const TreeNode& n = tree.node(id);
        if (n.children.empty()) {
            std::string text;
            append_label(text, n);
            return {1, 1, "L", text};
        }
        std::vector<OrderKey> keys;
        for (int c : n.children) {
            keys.push_back(key_of(c));
        }
        if (category(n.symbol) == Category::Linear && keys[1] < keys[0]) {
            std::swap(keys[0], keys[1]);
        }
        OrderKey k{1, 0, "(" + std::to_string(keys.size()), "("};
        append_label(k.text, n);
        for (const auto& ck : keys) {
            k.size += ck.size;
            k.height = std::max(k.height, ck.height);
            k.shape += ' ' + ck.shape;
            k.text += ' ' + ck.text;
        }
        k.height += 1;
        k.shape += ')';
        k.text += ')';
        return k;
    };

    std::function<int(int)> write = [&](int id) {
        const TreeNode& n = tree.node(id);
        const int out = writer.open(n);
        std::vector<int> order(n.children.begin(), n.children.end());
        if (category(n.symbol) == Category::Linear && key_of(order[1]) < key_of(order[0])) {
            std::swap(order[0], order[1]);
        }
        std::vector<int> children;
        for (int c : order) {
            children.push_back(write(c));
        }
        writer.set_children(out, std::move(children));
        return out;
    };
    write(tree.root());
    return writer.finish(tree.generation_born());
}

// ---------------------------------------------------------------------------

NodeTree seed_tree()
{
    // (tanh (add (add (add (add x0 x1) (add x2 x3)) (add (add x4 x5) (add x6 x7))) (add cprev dprev)))
    return parse("(tanh (add (add (add (add x0 x1) (add x2 x3)) (add (add x4 x5) (add x6 x7)))"
                 " (add cprev dprev)))");
}

} // namespace treecell
