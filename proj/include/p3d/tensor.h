#pragma once

#include <cstddef>
#include <initializer_list>
#include <new>
#include <span>
#include <string>
#include <vector>

namespace p3d {

using Shape = std::vector<std::size_t>;

/// Cache-line aligned storage. Eigen picks its vectorized loop peeling from a
/// buffer's address, so a fixed alignment keeps float summation order, and
/// with it the results, identical from run to run.
template <class T>
struct AlignedAllocator {
    using value_type = T;
    static constexpr std::align_val_t kAlign{64};

    AlignedAllocator() = default;
    template <class U>
    AlignedAllocator(const AlignedAllocator<U>&) {}

    T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
    void deallocate(T* p, std::size_t) { ::operator delete(p, kAlign); }

    template <class U>
    bool operator==(const AlignedAllocator<U>&) const { return true; }
};

using FloatBuffer = std::vector<float, AlignedAllocator<float>>;

std::size_t shape_numel(const Shape& shape);
std::string shape_to_string(const Shape& shape);

/// Dense row-major float32 array.
///
/// A Tensor owns its storage and has value semantics. Extents are always
/// positive; a scalar has shape {1}.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, float fill = 0.0f);
    Tensor(Shape shape, std::vector<float> values);

    static Tensor scalar(float value) { return Tensor({1}, value); }

    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
    std::size_t numel() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    std::span<const float> data() const { return data_; }
    std::span<float> data() { return data_; }
    const float* raw() const { return data_.data(); }
    float* raw() { return data_.data(); }

    float operator[](std::size_t i) const { return data_[i]; }
    float& operator[](std::size_t i) { return data_[i]; }

    /// Value of a single-element tensor.
    float item() const;

    bool requires_grad() const { return requires_grad_; }
    void set_requires_grad(bool on) { requires_grad_ = on; }

    /// Same data under a new shape with equal element count.
    Tensor reshaped(Shape shape) const;

    void fill(float value);
    void add_(const Tensor& other);  // elementwise +=, shapes must match

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

private:
    Shape shape_;
    FloatBuffer data_;
    bool requires_grad_ = false;
};

}  // namespace p3d
