#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "p3d/autograd.h"
#include "p3d/tensor.h"

namespace p3d {

/// Ordered collection of named parameter tensors. A parameter's id is its
/// insertion index.
class ParameterSet {
public:
    ParamId add(std::string name, Tensor value);

    std::size_t size() const { return values_.size(); }
    const std::string& name(ParamId id) const { return names_.at(id); }
    const Tensor& value(ParamId id) const { return values_.at(id); }
    Tensor& value(ParamId id) { return values_.at(id); }

    std::optional<ParamId> find(std::string_view name) const;
    ParamId id(std::string_view name) const;  // throws ContractViolation if absent

    /// Total number of scalar weights.
    std::size_t weight_count() const;

    bool operator==(const ParameterSet& other) const;

private:
    std::vector<std::string> names_;
    std::vector<Tensor> values_;
};

}  // namespace p3d
