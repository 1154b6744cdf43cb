#pragma once

#include <atomic>
#include <cstddef>
#include <span>
#include <vector>

#include "p3d/autograd.h"

namespace p3d {

// Differentiable operations recorded on the inputs' graph. Unless noted,
// binary elementwise ops require identical shapes (no broadcasting).

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);
Var neg(Var a);
Var scale(Var a, float factor);
Var add_scalar(Var a, float offset);
Var square(Var a);
Var sqrt(Var a);  // gradient defined as 0 where the output is 0
Var exp(Var a);
Var log(Var a);
Var sin(Var a);
Var cos(Var a);
Var relu(Var a);

/// max(a, floor); each clamped element increments `counter` if non-null.
Var clamp_min(Var a, float floor, std::atomic<std::size_t>* counter = nullptr);

Var sum(Var a);   // -> shape {1}
Var mean(Var a);  // -> shape {1}
/// [rows, cols] -> [rows]
Var sum_rows(Var a);

/// [M,K] x [K,N] -> [M,N]
Var matmul(Var a, Var b);
/// x[..., C] + bias[C], broadcast over all leading axes.
Var add_bias(Var x, Var bias);
/// x[N,H,W,Cin] cross-correlated with w[KH,KW,Cin,Cout], plus b[Cout].
/// Zero padding `pad` on each border.
Var conv2d(Var x, Var w, Var b, std::size_t stride, std::size_t pad);
/// Row-wise softmax of [N,K].
Var softmax_rows(Var logits);
/// out[i] = a[i, index[i]] for a of shape [N,K].
Var pick(Var a, std::span<const std::size_t> index);

Var reshape(Var a, Shape shape);
/// Rows [begin, begin+count) along axis 0.
Var slice_rows(Var a, std::size_t begin, std::size_t count);
/// Concatenate along axis 0; trailing extents must agree.
Var concat_rows(std::span<const Var> parts);
/// Same value, no gradient flows back through it.
Var detach(Var a);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator/(Var a, Var b) { return div(a, b); }
inline Var operator-(Var a) { return neg(a); }
inline Var operator*(Var a, float s) { return scale(a, s); }
inline Var operator*(float s, Var a) { return scale(a, s); }
inline Var operator+(Var a, float s) { return add_scalar(a, s); }
inline Var operator+(float s, Var a) { return add_scalar(a, s); }
inline Var operator-(Var a, float s) { return add_scalar(a, -s); }
inline Var operator-(float s, Var a) { return add_scalar(neg(a), s); }

}  // namespace p3d
