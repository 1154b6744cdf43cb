#include "p3d/tensor.h"

#include <algorithm>
#include <sstream>

#include "p3d/error.h"

namespace p3d {

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
}

std::string shape_to_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

namespace {
void check_shape(const Shape& shape) {
    if (shape.empty()) throw ContractViolation("tensor shape must have at least one extent");
    for (std::size_t d : shape)
        if (d == 0) throw ContractViolation("tensor extents must be positive: " + shape_to_string(shape));
}
}  // namespace

Tensor::Tensor(Shape shape, float fill) : shape_(std::move(shape)) {
    check_shape(shape_);
    data_.assign(shape_numel(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<float> values)
    : shape_(std::move(shape)), data_(values.begin(), values.end()) {
    check_shape(shape_);
    if (shape_numel(shape_) != data_.size())
        throw ContractViolation("tensor shape " + shape_to_string(shape_) + " does not match " +
                                std::to_string(data_.size()) + " values");
}

float Tensor::item() const {
    if (data_.size() != 1)
        throw ContractViolation("item() on tensor of shape " + shape_to_string(shape_));
    return data_[0];
}

Tensor Tensor::reshaped(Shape shape) const {
    if (shape_numel(shape) != data_.size())
        throw ContractViolation("cannot reshape " + shape_to_string(shape_) + " to " + shape_to_string(shape));
    Tensor t;
    t.shape_ = std::move(shape);
    t.data_ = data_;
    t.requires_grad_ = requires_grad_;
    return t;
}

void Tensor::fill(float value) { std::fill(data_.begin(), data_.end(), value); }

void Tensor::add_(const Tensor& other) {
    if (other.data_.size() != data_.size())
        throw ContractViolation("add_: shape mismatch " + shape_to_string(shape_) + " vs " +
                                shape_to_string(other.shape_));
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
}

}  // namespace p3d
