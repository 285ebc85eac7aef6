// SPDX-License-Identifier: Apache-2.0
#include "dropreg/autodiff.hpp"

#include <cmath>
#include <unordered_map>
#include <unordered_set>

namespace dropreg::ad
{
namespace
{
thread_local bool t_grad_enabled = true;

Tensor as_matrix_shape(Tensor t)
{
    if (t.rank() == 2)
        return t;
    return t.reshaped({t.rows(), t.cols()});
}

Var make(char const* op,
         Tensor value,
         std::vector<Var> parents,
         BackwardFn backward)
{
    value.require_finite(op);
    auto node = std::make_shared<Node>();
    node->value = std::move(value);
    node->op = op;
    bool needs = false;
    if (t_grad_enabled)
        for (auto const& p : parents)
            needs = needs || p.requires_grad();
    if (needs)
    {
        node->requires_grad = true;
        node->parents = std::move(parents);
        node->backward = std::move(backward);
    }
    return Var(std::move(node));
}

void require_same_shape(Var const& a, Var const& b, char const* op)
{
    if (a.rows() != b.rows() || a.cols() != b.cols())
        throw ShapeError(std::string(op) + ": shape mismatch "
                         + shape_string(a.value().shape()) + " vs "
                         + shape_string(b.value().shape()));
}

template<class F>
Tensor map_values(Tensor const& in, F&& f)
{
    Tensor out = in;
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = f(in[i]);
    return out;
}

Var zeros_like(Var const& v)
{
    return constant(Tensor::matrix(v.rows(), v.cols()));
}
}  // namespace

double Var::item() const
{
    if (node_->value.size() != 1)
        throw ShapeError("item() requires a 1x1 variable");
    return node_->value[0];
}

NoGradGuard::NoGradGuard(bool enable) : previous_(t_grad_enabled)
{
    t_grad_enabled = enable;
}

NoGradGuard::~NoGradGuard()
{
    t_grad_enabled = previous_;
}

bool grad_enabled()
{
    return t_grad_enabled;
}

Var constant(Tensor value)
{
    value = as_matrix_shape(std::move(value));
    value.require_finite("constant");
    auto node = std::make_shared<Node>();
    node->value = std::move(value);
    return Var(std::move(node));
}

Var parameter(Tensor value)
{
    value = as_matrix_shape(std::move(value));
    value.require_finite("parameter");
    auto node = std::make_shared<Node>();
    node->value = std::move(value);
    node->requires_grad = true;
    return Var(std::move(node));
}

Var detach(Var const& v)
{
    return constant(v.value());
}

Var operator+(Var const& a, Var const& b)
{
    require_same_shape(a, b, "add");
    return make("add", a.value() + b.value(), {a, b},
                [](Var const& g, auto const&, auto const& need) {
                    return std::vector<Var>{need[0] ? g : Var{},
                                            need[1] ? g : Var{}};
                });
}

Var operator-(Var const& a, Var const& b)
{
    require_same_shape(a, b, "sub");
    return make("sub", a.value() - b.value(), {a, b},
                [](Var const& g, auto const&, auto const& need) {
                    return std::vector<Var>{need[0] ? g : Var{},
                                            need[1] ? -g : Var{}};
                });
}

Var operator-(Var const& a)
{
    return -1.0 * a;
}

Var operator*(Var const& a, Var const& b)
{
    require_same_shape(a, b, "mul");
    return make("mul", hadamard(a.value(), b.value()), {a, b},
                [](Var const& g, auto const& p, auto const& need) {
                    return std::vector<Var>{need[0] ? g * p[1] : Var{},
                                            need[1] ? g * p[0] : Var{}};
                });
}

Var operator*(double s, Var const& a)
{
    return make("scale", s * a.value(), {a},
                [s](Var const& g, auto const&, auto const&) {
                    return std::vector<Var>{s * g};
                });
}

Var add_scalar(Var const& a, double s)
{
    return make("add_scalar",
                map_values(a.value(), [s](double v) { return v + s; }),
                {a},
                [](Var const& g, auto const&, auto const&) {
                    return std::vector<Var>{g};
                });
}

Var matmul(Var const& a, Var const& b)
{
    return make("matmul", dropreg::matmul(a.value(), b.value()), {a, b},
                [](Var const& g, auto const& p, auto const& need) {
                    return std::vector<Var>{
                        need[0] ? matmul(g, transpose(p[1])) : Var{},
                        need[1] ? matmul(transpose(p[0]), g) : Var{}};
                });
}

Var transpose(Var const& a)
{
    return make("transpose", a.value().transposed(), {a},
                [](Var const& g, auto const&, auto const&) {
                    return std::vector<Var>{transpose(g)};
                });
}

Var tanh(Var const& a)
{
    return make("tanh",
                map_values(a.value(), [](double v) { return std::tanh(v); }),
                {a},
                [](Var const& g, auto const& p, auto const&) {
                    auto y = tanh(p[0]);
                    return std::vector<Var>{g * add_scalar(-(y * y), 1.0)};
                });
}

Var relu(Var const& a)
{
    return make("relu",
                map_values(a.value(),
                           [](double v) { return v > 0 ? v : 0.0; }),
                {a},
                [](Var const& g, auto const& p, auto const&) {
                    auto step = constant(map_values(
                        p[0].value(),
                        [](double v) { return v > 0 ? 1.0 : 0.0; }));
                    return std::vector<Var>{g * step};
                });
}

Var exp(Var const& a)
{
    return make("exp",
                map_values(a.value(), [](double v) { return std::exp(v); }),
                {a},
                [](Var const& g, auto const& p, auto const&) {
                    return std::vector<Var>{g * exp(p[0])};
                });
}

Var log(Var const& a)
{
    return make("log",
                map_values(a.value(), [](double v) { return std::log(v); }),
                {a},
                [](Var const& g, auto const& p, auto const&) {
                    return std::vector<Var>{g * reciprocal(p[0])};
                });
}

Var sin(Var const& a)
{
    return make("sin",
                map_values(a.value(), [](double v) { return std::sin(v); }),
                {a},
                [](Var const& g, auto const& p, auto const&) {
                    return std::vector<Var>{g * cos(p[0])};
                });
}

Var cos(Var const& a)
{
    return make("cos",
                map_values(a.value(), [](double v) { return std::cos(v); }),
                {a},
                [](Var const& g, auto const& p, auto const&) {
                    return std::vector<Var>{-(g * sin(p[0]))};
                });
}

Var square(Var const& a)
{
    return make("square",
                map_values(a.value(), [](double v) { return v * v; }),
                {a},
                [](Var const& g, auto const& p, auto const&) {
                    return std::vector<Var>{2.0 * (g * p[0])};
                });
}

Var reciprocal(Var const& a)
{
    return make("reciprocal",
                map_values(a.value(), [](double v) { return 1.0 / v; }),
                {a},
                [](Var const& g, auto const& p, auto const&) {
                    auto r = reciprocal(p[0]);
                    return std::vector<Var>{-(g * (r * r))};
                });
}

Var sum(Var const& a)
{
    auto r = a.rows();
    auto c = a.cols();
    return make("sum", Tensor::matrix(1, 1, a.value().sum()), {a},
                [r, c](Var const& g, auto const&, auto const&) {
                    return std::vector<Var>{broadcast_scalar(g, r, c)};
                });
}

Var sum_rows(Var const& a)
{
    auto r = a.rows();
    Tensor out = Tensor::matrix(1, a.cols());
    out.as_matrix() = a.value().as_matrix().colwise().sum();
    return make("sum_rows", std::move(out), {a},
                [r](Var const& g, auto const&, auto const&) {
                    return std::vector<Var>{broadcast_rows(g, r)};
                });
}

Var sum_cols(Var const& a)
{
    auto c = a.cols();
    Tensor out = Tensor::matrix(a.rows(), 1);
    out.as_matrix() = a.value().as_matrix().rowwise().sum();
    return make("sum_cols", std::move(out), {a},
                [c](Var const& g, auto const&, auto const&) {
                    return std::vector<Var>{broadcast_cols(g, c)};
                });
}

Var broadcast_rows(Var const& row, std::size_t rows)
{
    if (row.rows() != 1)
        throw ShapeError("broadcast_rows expects a 1 x n input");
    Tensor out = Tensor::matrix(rows, row.cols());
    out.as_matrix().rowwise() = row.value().as_matrix().row(0);
    return make("broadcast_rows", std::move(out), {row},
                [](Var const& g, auto const&, auto const&) {
                    return std::vector<Var>{sum_rows(g)};
                });
}

Var broadcast_cols(Var const& col, std::size_t cols)
{
    if (col.cols() != 1)
        throw ShapeError("broadcast_cols expects an m x 1 input");
    Tensor out = Tensor::matrix(col.rows(), cols);
    out.as_matrix().colwise() = col.value().as_matrix().col(0);
    return make("broadcast_cols", std::move(out), {col},
                [](Var const& g, auto const&, auto const&) {
                    return std::vector<Var>{sum_cols(g)};
                });
}

Var broadcast_scalar(Var const& s, std::size_t rows, std::size_t cols)
{
    if (s.value().size() != 1)
        throw ShapeError("broadcast_scalar expects a 1 x 1 input");
    return make("broadcast_scalar", Tensor::matrix(rows, cols, s.item()), {s},
                [](Var const& g, auto const&, auto const&) {
                    return std::vector<Var>{sum(g)};
                });
}

Var logsumexp_rows(Var const& logits)
{
    auto const& z = logits.value();
    auto n = logits.cols();
    Tensor out = Tensor::matrix(logits.rows(), 1);
    for (std::size_t r = 0; r < logits.rows(); ++r)
    {
        double m = z(r, 0);
        for (std::size_t c = 1; c < n; ++c)
            m = std::max(m, z(r, c));
        double acc = 0;
        for (std::size_t c = 0; c < n; ++c)
            acc += std::exp(z(r, c) - m);
        out(r, 0) = m + std::log(acc);
    }
    return make("logsumexp_rows", std::move(out), {logits},
                [n](Var const& g, auto const& p, auto const&) {
                    return std::vector<Var>{broadcast_cols(g, n)
                                            * softmax_rows(p[0])};
                });
}

Var softmax_rows(Var const& logits)
{
    return exp(logits - broadcast_cols(logsumexp_rows(logits), logits.cols()));
}

Var cross_entropy_rows(Var const& logits, std::span<std::size_t const> labels)
{
    if (labels.size() != logits.rows())
        throw ShapeError("cross_entropy_rows: one label per row required");
    Tensor onehot = Tensor::matrix(logits.rows(), logits.cols());
    for (std::size_t r = 0; r < labels.size(); ++r)
    {
        if (labels[r] >= logits.cols())
            throw ShapeError("cross_entropy_rows: label out of range");
        onehot(r, labels[r]) = 1.0;
    }
    return logsumexp_rows(logits) - sum_cols(logits * constant(onehot));
}

std::vector<Var>
grad(Var const& output, std::span<Var const> wrt, bool create_graph)
{
    if (!output.defined() || output.value().size() != 1)
        throw ShapeError("grad: output must be a scalar");

    std::vector<Var> result(wrt.size());
    if (!output.requires_grad())
    {
        for (std::size_t i = 0; i < wrt.size(); ++i)
            result[i] = zeros_like(wrt[i]);
        return result;
    }

    // Post-order DFS gives parents before children.
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, std::size_t>> stack{{output.node(), 0}};
    visited.insert(output.node());
    while (!stack.empty())
    {
        auto& [node, next] = stack.back();
        if (next < node->parents.size())
        {
            Node* p = node->parents[next++].node();
            if (p->requires_grad && visited.insert(p).second)
                stack.emplace_back(p, 0);
        }
        else
        {
            order.push_back(node);
            stack.pop_back();
        }
    }

    std::unordered_set<Node*> targets;
    for (auto const& w : wrt)
        targets.insert(w.node());
    std::unordered_set<Node*> relevant;
    for (Node* node : order)
    {
        bool r = targets.count(node) > 0;
        for (auto const& p : node->parents)
            r = r || relevant.count(p.node()) > 0;
        if (r)
            relevant.insert(node);
    }

    NoGradGuard guard(create_graph);
    std::unordered_map<Node*, Var> grads;
    grads[output.node()] = constant(Tensor::matrix(1, 1, 1.0));
    for (auto it = order.rbegin(); it != order.rend(); ++it)
    {
        Node* node = *it;
        auto found = grads.find(node);
        if (found == grads.end() || !relevant.count(node) || !node->backward)
            continue;
        std::vector<bool> need(node->parents.size());
        bool any = false;
        for (std::size_t i = 0; i < need.size(); ++i)
        {
            need[i] = relevant.count(node->parents[i].node()) > 0;
            any = any || need[i];
        }
        if (!any)
            continue;
        auto parent_grads = node->backward(found->second, node->parents, need);
        for (std::size_t i = 0; i < need.size(); ++i)
        {
            if (!need[i])
                continue;
            Node* p = node->parents[i].node();
            auto& slot = grads[p];
            slot = slot.defined() ? slot + parent_grads[i] : parent_grads[i];
        }
    }

    for (std::size_t i = 0; i < wrt.size(); ++i)
    {
        auto found = grads.find(wrt[i].node());
        result[i] = found != grads.end() ? found->second : zeros_like(wrt[i]);
        result[i].value().require_finite("backward pass");
    }
    return result;
}

Var grad(Var const& output, Var const& wrt, bool create_graph)
{
    return grad(output, std::span<Var const>(&wrt, 1), create_graph)[0];
}

}  // namespace dropreg::ad
