#include "p3d/autograd.h"

#include "p3d/error.h"

namespace p3d {

const Tensor& Var::value() const {
    if (!graph) throw ContractViolation("Var is not attached to a graph");
    return graph->value(id);
}

bool Var::requires_grad() const { return graph && graph->requires_grad(id); }

const Tensor* GradientMap::find(ParamId id) const {
    auto it = grads_.find(id);
    return it == grads_.end() ? nullptr : &it->second;
}

Tensor GradientMap::get(ParamId id, const Shape& shape) const {
    if (const Tensor* g = find(id)) return *g;
    return Tensor(shape, 0.0f);
}

void GradientMap::accumulate(ParamId id, const Tensor& grad) {
    auto [it, inserted] = grads_.try_emplace(id, grad);
    if (!inserted) it->second.add_(grad);
}

Var Graph::push(Node node) {
    nodes_.push_back(std::move(node));
    return Var{this, nodes_.size() - 1};
}

Var Graph::constant(Tensor value) {
    Node n;
    n.op = "constant";
    n.owned = std::move(value);
    return push(std::move(n));
}

Var Graph::constant_ref(const Tensor& value) {
    Node n;
    n.op = "constant";
    n.borrowed = &value;
    return push(std::move(n));
}

Var Graph::parameter(ParamId id, const Tensor& value) {
    Node n;
    n.op = "parameter";
    n.borrowed = &value;
    n.needs_grad = true;
    n.is_param = true;
    n.param = id;
    return push(std::move(n));
}

Var Graph::parameter_owned(ParamId id, Tensor value) {
    Node n;
    n.op = "parameter";
    n.owned = std::move(value);
    n.needs_grad = true;
    n.is_param = true;
    n.param = id;
    return push(std::move(n));
}

Var Graph::record(const char* op, Tensor value, std::vector<Var> inputs, BackwardFn backward) {
    Node n;
    n.op = op;
    n.owned = std::move(value);
    n.inputs.reserve(inputs.size());
    for (const Var& v : inputs) {
        if (v.graph != this) throw ContractViolation(std::string(op) + ": input belongs to another graph");
        if (v.id >= nodes_.size())
            throw ContractViolation(std::string(op) + ": input does not precede the node");
        n.inputs.push_back(v.id);
        n.needs_grad = n.needs_grad || nodes_[v.id].needs_grad;
    }
    if (n.needs_grad) n.backward = std::move(backward);
    if (n.needs_grad && !n.backward)
        throw ContractViolation(std::string(op) + ": differentiable input but no backward rule");
    return push(std::move(n));
}

const Tensor& Graph::value(std::size_t id) const { return nodes_.at(id).value(); }

GradientMap Graph::backward(Var output) {
    if (output.graph != this) throw ContractViolation("backward: output belongs to another graph");
    const Tensor& out = nodes_.at(output.id).value();
    if (out.numel() != 1)
        throw ContractViolation("backward: output must be a scalar, got " + shape_to_string(out.shape()));

    GradientMap result;
    if (!nodes_[output.id].needs_grad) return result;

    std::vector<Tensor> grads(output.id + 1);
    grads[output.id] = Tensor(out.shape(), 1.0f);

    std::vector<Tensor*> slots;
    for (std::size_t i = output.id + 1; i-- > 0;) {
        Node& node = nodes_[i];
        if (grads[i].empty()) continue;
        if (node.is_param) {
            result.accumulate(node.param, grads[i]);
        } else if (node.backward) {
            slots.assign(node.inputs.size(), nullptr);
            for (std::size_t k = 0; k < node.inputs.size(); ++k) {
                std::size_t in = node.inputs[k];
                if (!nodes_[in].needs_grad) continue;
                if (grads[in].empty()) grads[in] = Tensor(nodes_[in].value().shape(), 0.0f);
                slots[k] = &grads[in];
            }
            node.backward(grads[i], slots);
        }
        grads[i] = Tensor();
    }
    return result;
}

}  // namespace p3d
