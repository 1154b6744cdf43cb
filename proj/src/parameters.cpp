#include "p3d/parameters.h"

#include <cstring>

#include "p3d/error.h"

namespace p3d {

ParamId ParameterSet::add(std::string name, Tensor value) {
    if (find(name)) throw ContractViolation("duplicate parameter name: " + name);
    names_.push_back(std::move(name));
    values_.push_back(std::move(value));
    return values_.size() - 1;
}

std::optional<ParamId> ParameterSet::find(std::string_view name) const {
    for (std::size_t i = 0; i < names_.size(); ++i)
        if (names_[i] == name) return i;
    return std::nullopt;
}

ParamId ParameterSet::id(std::string_view name) const {
    if (auto i = find(name)) return *i;
    throw ContractViolation("unknown parameter: " + std::string(name));
}

std::size_t ParameterSet::weight_count() const {
    std::size_t n = 0;
    for (const Tensor& t : values_) n += t.numel();
    return n;
}

bool ParameterSet::operator==(const ParameterSet& other) const {
    if (names_ != other.names_) return false;
    for (std::size_t i = 0; i < values_.size(); ++i) {
        if (values_[i].shape() != other.values_[i].shape()) return false;
        if (std::memcmp(values_[i].raw(), other.values_[i].raw(), values_[i].numel() * sizeof(float)) != 0)
            return false;
    }
    return true;
}

}  // namespace p3d
