#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "p3d/tensor.h"

namespace p3d {

using ParamId = std::size_t;

class Graph;

/// Handle to a node in a Graph. Cheap to copy; only valid while its graph lives.
struct Var {
    Graph* graph = nullptr;
    std::size_t id = 0;

    const Tensor& value() const;
    const Shape& shape() const { return value().shape(); }
    bool requires_grad() const;
};

/// Accumulates dOut/dInput into each non-null slot of `grad_inputs`.
/// Slots are null for inputs that do not lead to any differentiable leaf.
using BackwardFn = std::function<void(const Tensor& grad_out, std::span<Tensor* const> grad_inputs)>;

/// Gradients keyed by parameter id. Missing ids have an implicit zero gradient.
class GradientMap {
public:
    bool contains(ParamId id) const { return grads_.count(id) != 0; }
    const Tensor* find(ParamId id) const;
    Tensor get(ParamId id, const Shape& shape) const;
    void accumulate(ParamId id, const Tensor& grad);
    std::size_t size() const { return grads_.size(); }

    auto begin() const { return grads_.begin(); }
    auto end() const { return grads_.end(); }

private:
    std::map<ParamId, Tensor> grads_;
};

/// Tape of operations recorded in topological order.
///
/// Nodes can only reference earlier nodes, so the graph is acyclic by
/// construction. Borrowed tensors (constant_ref / parameter) must outlive the
/// graph and stay unmodified while it exists.
class Graph {
public:
    Graph() = default;
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    Var constant(Tensor value);
    Var constant_ref(const Tensor& value);
    Var parameter(ParamId id, const Tensor& value);
    Var parameter_owned(ParamId id, Tensor value);

    /// Record an operation. `backward` may be empty for non-differentiable ops.
    Var record(const char* op, Tensor value, std::vector<Var> inputs, BackwardFn backward);

    const Tensor& value(std::size_t id) const;
    bool requires_grad(std::size_t id) const { return nodes_.at(id).needs_grad; }
    const char* op_name(std::size_t id) const { return nodes_.at(id).op; }
    std::size_t size() const { return nodes_.size(); }

    /// Reverse-mode sweep from a scalar output.
    GradientMap backward(Var output);

private:
    struct Node {
        const char* op = "";
        Tensor owned;
        const Tensor* borrowed = nullptr;
        std::vector<std::size_t> inputs;
        BackwardFn backward;
        bool needs_grad = false;
        bool is_param = false;
        ParamId param = 0;

        const Tensor& value() const { return borrowed ? *borrowed : owned; }
    };

    Var push(Node node);

    std::vector<Node> nodes_;
};

}  // namespace p3d
