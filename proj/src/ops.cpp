#include "p3d/ops.h"

#include <Eigen/Core>
#include <cmath>
#include <memory>
#include <string>

#include "p3d/error.h"

namespace p3d {

namespace {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

Graph& graph_of(Var a) {
    if (!a.graph) throw ContractViolation("operation on a detached Var");
    return *a.graph;
}

void require_same_graph(Var a, Var b, const char* op) {
    if (a.graph != b.graph) throw ContractViolation(std::string(op) + ": operands belong to different graphs");
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (!a.same_shape(b))
        throw ContractViolation(std::string(op) + ": shape mismatch " + shape_to_string(a.shape()) + " vs " +
                                shape_to_string(b.shape()));
}

template <class F, class DF>
Var unary(const char* op, Var a, F f, DF df) {
    Graph& g = graph_of(a);
    const Tensor& x = a.value();
    Tensor y(x.shape());
    for (std::size_t i = 0; i < x.numel(); ++i) y[i] = f(x[i]);
    Graph* gp = &g;
    std::size_t ia = a.id;
    return g.record(op, std::move(y), {a}, [gp, ia, df](const Tensor& gy, std::span<Tensor* const> gin) {
        const Tensor& xv = gp->value(ia);
        Tensor& gx = *gin[0];
        for (std::size_t i = 0; i < xv.numel(); ++i) gx[i] += gy[i] * df(xv[i]);
    });
}

template <class F, class DFA, class DFB>
Var binary(const char* op, Var a, Var b, F f, DFA dfa, DFB dfb) {
    require_same_graph(a, b, op);
    Graph& g = graph_of(a);
    const Tensor& x = a.value();
    const Tensor& z = b.value();
    require_same_shape(x, z, op);
    Tensor y(x.shape());
    for (std::size_t i = 0; i < x.numel(); ++i) y[i] = f(x[i], z[i]);
    Graph* gp = &g;
    std::size_t ia = a.id, ib = b.id;
    return g.record(op, std::move(y), {a, b},
                    [gp, ia, ib, dfa, dfb](const Tensor& gy, std::span<Tensor* const> gin) {
                        const Tensor& xv = gp->value(ia);
                        const Tensor& zv = gp->value(ib);
                        if (gin[0])
                            for (std::size_t i = 0; i < xv.numel(); ++i) (*gin[0])[i] += gy[i] * dfa(xv[i], zv[i]);
                        if (gin[1])
                            for (std::size_t i = 0; i < xv.numel(); ++i) (*gin[1])[i] += gy[i] * dfb(xv[i], zv[i]);
                    });
}

}  // namespace

Var add(Var a, Var b) {
    return binary(
        "add", a, b, [](float x, float z) { return x + z; }, [](float, float) { return 1.0f; },
        [](float, float) { return 1.0f; });
}

Var sub(Var a, Var b) {
    return binary(
        "sub", a, b, [](float x, float z) { return x - z; }, [](float, float) { return 1.0f; },
        [](float, float) { return -1.0f; });
}

Var mul(Var a, Var b) {
    return binary(
        "mul", a, b, [](float x, float z) { return x * z; }, [](float, float z) { return z; },
        [](float x, float) { return x; });
}

Var div(Var a, Var b) {
    return binary(
        "div", a, b, [](float x, float z) { return x / z; }, [](float, float z) { return 1.0f / z; },
        [](float x, float z) { return -x / (z * z); });
}

Var neg(Var a) {
    return unary("neg", a, [](float x) { return -x; }, [](float) { return -1.0f; });
}

Var scale(Var a, float factor) {
    return unary("scale", a, [factor](float x) { return factor * x; }, [factor](float) { return factor; });
}

Var add_scalar(Var a, float offset) {
    return unary("add_scalar", a, [offset](float x) { return x + offset; }, [](float) { return 1.0f; });
}

Var square(Var a) {
    return unary("square", a, [](float x) { return x * x; }, [](float x) { return 2.0f * x; });
}

Var sqrt(Var a) {
    return unary(
        "sqrt", a, [](float x) { return std::sqrt(x); },
        [](float x) { return x > 0.0f ? 0.5f / std::sqrt(x) : 0.0f; });
}

Var exp(Var a) {
    return unary("exp", a, [](float x) { return std::exp(x); }, [](float x) { return std::exp(x); });
}

Var log(Var a) {
    return unary("log", a, [](float x) { return std::log(x); }, [](float x) { return 1.0f / x; });
}

Var sin(Var a) {
    return unary("sin", a, [](float x) { return std::sin(x); }, [](float x) { return std::cos(x); });
}

Var cos(Var a) {
    return unary("cos", a, [](float x) { return std::cos(x); }, [](float x) { return -std::sin(x); });
}

Var relu(Var a) {
    return unary("relu", a, [](float x) { return x > 0.0f ? x : 0.0f; }, [](float x) { return x > 0.0f ? 1.0f : 0.0f; });
}

Var clamp_min(Var a, float floor, std::atomic<std::size_t>* counter) {
    if (counter) {
        const Tensor& x = a.value();
        std::size_t n = 0;
        for (float v : x.data())
            if (v < floor) ++n;
        if (n) counter->fetch_add(n);
    }
    return unary(
        "clamp_min", a, [floor](float x) { return x < floor ? floor : x; },
        [floor](float x) { return x < floor ? 0.0f : 1.0f; });
}

Var sum(Var a) {
    Graph& g = graph_of(a);
    double acc = 0.0;
    for (float v : a.value().data()) acc += v;
    return g.record("sum", Tensor::scalar(static_cast<float>(acc)), {a},
                    [](const Tensor& gy, std::span<Tensor* const> gin) {
                        const float s = gy[0];
                        for (float& v : gin[0]->data()) v += s;
                    });
}

Var mean(Var a) {
    const float inv = 1.0f / static_cast<float>(a.value().numel());
    Graph& g = graph_of(a);
    double acc = 0.0;
    for (float v : a.value().data()) acc += v;
    return g.record("mean", Tensor::scalar(static_cast<float>(acc) * inv), {a},
                    [inv](const Tensor& gy, std::span<Tensor* const> gin) {
                        const float s = gy[0] * inv;
                        for (float& v : gin[0]->data()) v += s;
                    });
}

Var sum_rows(Var a) {
    const Tensor& x = a.value();
    if (x.rank() != 2) throw ContractViolation("sum_rows expects a matrix, got " + shape_to_string(x.shape()));
    const std::size_t rows = x.dim(0), cols = x.dim(1);
    Tensor y({rows});
    for (std::size_t r = 0; r < rows; ++r) {
        double acc = 0.0;
        for (std::size_t c = 0; c < cols; ++c) acc += x[r * cols + c];
        y[r] = static_cast<float>(acc);
    }
    return graph_of(a).record("sum_rows", std::move(y), {a},
                              [rows, cols](const Tensor& gy, std::span<Tensor* const> gin) {
                                  Tensor& gx = *gin[0];
                                  for (std::size_t r = 0; r < rows; ++r)
                                      for (std::size_t c = 0; c < cols; ++c) gx[r * cols + c] += gy[r];
                              });
}

Var matmul(Var a, Var b) {
    require_same_graph(a, b, "matmul");
    const Tensor& x = a.value();
    const Tensor& w = b.value();
    if (x.rank() != 2 || w.rank() != 2 || x.dim(1) != w.dim(0))
        throw ContractViolation("matmul: incompatible shapes " + shape_to_string(x.shape()) + " x " +
                                shape_to_string(w.shape()));
    const auto m = static_cast<Eigen::Index>(x.dim(0));
    const auto k = static_cast<Eigen::Index>(x.dim(1));
    const auto n = static_cast<Eigen::Index>(w.dim(1));
    Tensor y({x.dim(0), w.dim(1)});
    MapMat(y.raw(), m, n).noalias() = ConstMapMat(x.raw(), m, k) * ConstMapMat(w.raw(), k, n);

    Graph* gp = a.graph;
    std::size_t ia = a.id, ib = b.id;
    return gp->record("matmul", std::move(y), {a, b},
                      [gp, ia, ib, m, k, n](const Tensor& gy, std::span<Tensor* const> gin) {
                          ConstMapMat dy(gy.raw(), m, n);
                          if (gin[0]) {
                              ConstMapMat wv(gp->value(ib).raw(), k, n);
                              MapMat(gin[0]->raw(), m, k).noalias() += dy * wv.transpose();
                          }
                          if (gin[1]) {
                              ConstMapMat xv(gp->value(ia).raw(), m, k);
                              MapMat(gin[1]->raw(), k, n).noalias() += xv.transpose() * dy;
                          }
                      });
}

Var add_bias(Var x, Var bias) {
    require_same_graph(x, bias, "add_bias");
    const Tensor& xv = x.value();
    const Tensor& bv = bias.value();
    const std::size_t c = xv.shape().back();
    if (bv.numel() != c)
        throw ContractViolation("add_bias: bias of " + shape_to_string(bv.shape()) + " for input " +
                                shape_to_string(xv.shape()));
    const std::size_t rows = xv.numel() / c;
    Tensor y = xv;
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < c; ++j) y[r * c + j] += bv[j];
    return x.graph->record("add_bias", std::move(y), {x, bias},
                           [rows, c](const Tensor& gy, std::span<Tensor* const> gin) {
                               if (gin[0]) gin[0]->add_(gy);
                               if (gin[1]) {
                                   Tensor& gb = *gin[1];
                                   for (std::size_t r = 0; r < rows; ++r)
                                       for (std::size_t j = 0; j < c; ++j) gb[j] += gy[r * c + j];
                               }
                           });
}

namespace {

struct ConvGeometry {
    std::size_t n, h, w, cin, kh, kw, cout, stride, pad, oh, ow;
    std::size_t patch() const { return kh * kw * cin; }
    std::size_t positions() const { return n * oh * ow; }
};

void im2col(const float* x, const ConvGeometry& c, float* cols) {
    const std::size_t patch = c.patch();
    for (std::size_t b = 0; b < c.n; ++b)
        for (std::size_t oy = 0; oy < c.oh; ++oy)
            for (std::size_t ox = 0; ox < c.ow; ++ox) {
                float* row = cols + ((b * c.oh + oy) * c.ow + ox) * patch;
                for (std::size_t ky = 0; ky < c.kh; ++ky) {
                    const long iy = static_cast<long>(oy * c.stride + ky) - static_cast<long>(c.pad);
                    for (std::size_t kx = 0; kx < c.kw; ++kx) {
                        const long ix = static_cast<long>(ox * c.stride + kx) - static_cast<long>(c.pad);
                        float* dst = row + (ky * c.kw + kx) * c.cin;
                        if (iy < 0 || ix < 0 || iy >= static_cast<long>(c.h) || ix >= static_cast<long>(c.w)) {
                            std::fill(dst, dst + c.cin, 0.0f);
                        } else {
                            const float* src = x + ((b * c.h + iy) * c.w + ix) * c.cin;
                            std::copy(src, src + c.cin, dst);
                        }
                    }
                }
            }
}

void col2im_add(const float* cols, const ConvGeometry& c, float* dx) {
    const std::size_t patch = c.patch();
    for (std::size_t b = 0; b < c.n; ++b)
        for (std::size_t oy = 0; oy < c.oh; ++oy)
            for (std::size_t ox = 0; ox < c.ow; ++ox) {
                const float* row = cols + ((b * c.oh + oy) * c.ow + ox) * patch;
                for (std::size_t ky = 0; ky < c.kh; ++ky) {
                    const long iy = static_cast<long>(oy * c.stride + ky) - static_cast<long>(c.pad);
                    if (iy < 0 || iy >= static_cast<long>(c.h)) continue;
                    for (std::size_t kx = 0; kx < c.kw; ++kx) {
                        const long ix = static_cast<long>(ox * c.stride + kx) - static_cast<long>(c.pad);
                        if (ix < 0 || ix >= static_cast<long>(c.w)) continue;
                        const float* src = row + (ky * c.kw + kx) * c.cin;
                        float* dst = dx + ((b * c.h + iy) * c.w + ix) * c.cin;
                        for (std::size_t ci = 0; ci < c.cin; ++ci) dst[ci] += src[ci];
                    }
                }
            }
}

}  // namespace

Var conv2d(Var x, Var w, Var b, std::size_t stride, std::size_t pad) {
    require_same_graph(x, w, "conv2d");
    require_same_graph(x, b, "conv2d");
    const Tensor& xv = x.value();
    const Tensor& wv = w.value();
    const Tensor& bv = b.value();
    if (xv.rank() != 4 || wv.rank() != 4 || xv.dim(3) != wv.dim(2) || bv.numel() != wv.dim(3) || stride == 0)
        throw ContractViolation("conv2d: incompatible shapes input " + shape_to_string(xv.shape()) + " weight " +
                                shape_to_string(wv.shape()) + " bias " + shape_to_string(bv.shape()));
    ConvGeometry c{xv.dim(0), xv.dim(1), xv.dim(2), xv.dim(3), wv.dim(0), wv.dim(1), wv.dim(3), stride, pad, 0, 0};
    if (c.h + 2 * pad < c.kh || c.w + 2 * pad < c.kw) throw ContractViolation("conv2d: kernel larger than padded input");
    c.oh = (c.h + 2 * pad - c.kh) / stride + 1;
    c.ow = (c.w + 2 * pad - c.kw) / stride + 1;

    auto cols = std::make_shared<FloatBuffer>(c.positions() * c.patch());
    im2col(xv.raw(), c, cols->data());

    const auto rows = static_cast<Eigen::Index>(c.positions());
    const auto patch = static_cast<Eigen::Index>(c.patch());
    const auto cout = static_cast<Eigen::Index>(c.cout);
    Tensor y({c.n, c.oh, c.ow, c.cout});
    MapMat ym(y.raw(), rows, cout);
    ym.noalias() = ConstMapMat(cols->data(), rows, patch) * ConstMapMat(wv.raw(), patch, cout);
    ym.rowwise() += Eigen::Map<const Eigen::RowVectorXf>(bv.raw(), cout);

    Graph* gp = x.graph;
    std::size_t iw = w.id;
    return gp->record("conv2d", std::move(y), {x, w, b},
                      [gp, iw, c, cols, rows, patch, cout](const Tensor& gy, std::span<Tensor* const> gin) {
                          ConstMapMat dy(gy.raw(), rows, cout);
                          if (gin[1])
                              MapMat(gin[1]->raw(), patch, cout).noalias() +=
                                  ConstMapMat(cols->data(), rows, patch).transpose() * dy;
                          if (gin[2])
                              Eigen::Map<Eigen::RowVectorXf>(gin[2]->raw(), cout) += dy.colwise().sum();
                          if (gin[0]) {
                              RowMat dcols = dy * ConstMapMat(gp->value(iw).raw(), patch, cout).transpose();
                              col2im_add(dcols.data(), c, gin[0]->raw());
                          }
                      });
}

Var softmax_rows(Var logits) {
    const Tensor& x = logits.value();
    if (x.rank() != 2) throw ContractViolation("softmax_rows expects [N,K], got " + shape_to_string(x.shape()));
    const std::size_t n = x.dim(0), k = x.dim(1);
    auto y = std::make_shared<Tensor>(x.shape());
    for (std::size_t r = 0; r < n; ++r) {
        const float* in = x.raw() + r * k;
        float* out = y->raw() + r * k;
        float mx = in[0];
        for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, in[j]);
        double total = 0.0;
        for (std::size_t j = 0; j < k; ++j) {
            out[j] = std::exp(in[j] - mx);
            total += out[j];
        }
        const float inv = static_cast<float>(1.0 / total);
        for (std::size_t j = 0; j < k; ++j) out[j] *= inv;
    }
    Tensor value = *y;
    return graph_of(logits).record("softmax", std::move(value), {logits},
                                   [y, n, k](const Tensor& gy, std::span<Tensor* const> gin) {
                                       Tensor& gx = *gin[0];
                                       for (std::size_t r = 0; r < n; ++r) {
                                           const float* p = y->raw() + r * k;
                                           const float* d = gy.raw() + r * k;
                                           double dot = 0.0;
                                           for (std::size_t j = 0; j < k; ++j) dot += p[j] * d[j];
                                           for (std::size_t j = 0; j < k; ++j)
                                               gx[r * k + j] += p[j] * (d[j] - static_cast<float>(dot));
                                       }
                                   });
}

Var pick(Var a, std::span<const std::size_t> index) {
    const Tensor& x = a.value();
    if (x.rank() != 2 || x.dim(0) != index.size())
        throw ContractViolation("pick: expected [" + std::to_string(index.size()) + ",K], got " +
                                shape_to_string(x.shape()));
    const std::size_t n = x.dim(0), k = x.dim(1);
    std::vector<std::size_t> idx(index.begin(), index.end());
    Tensor y({n});
    for (std::size_t r = 0; r < n; ++r) {
        if (idx[r] >= k) throw ContractViolation("pick: index " + std::to_string(idx[r]) + " out of range");
        y[r] = x[r * k + idx[r]];
    }
    return graph_of(a).record("pick", std::move(y), {a},
                              [idx = std::move(idx), k](const Tensor& gy, std::span<Tensor* const> gin) {
                                  for (std::size_t r = 0; r < idx.size(); ++r) (*gin[0])[r * k + idx[r]] += gy[r];
                              });
}

Var reshape(Var a, Shape shape) {
    Tensor y = a.value().reshaped(std::move(shape));
    return graph_of(a).record("reshape", std::move(y), {a}, [](const Tensor& gy, std::span<Tensor* const> gin) {
        auto dst = gin[0]->data();
        auto src = gy.data();
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
    });
}

Var slice_rows(Var a, std::size_t begin, std::size_t count) {
    const Tensor& x = a.value();
    if (count == 0 || begin + count > x.dim(0))
        throw ContractViolation("slice_rows: rows [" + std::to_string(begin) + "," + std::to_string(begin + count) +
                                ") out of " + shape_to_string(x.shape()));
    const std::size_t stride = x.numel() / x.dim(0);
    Shape shape = x.shape();
    shape[0] = count;
    std::vector<float> values(x.raw() + begin * stride, x.raw() + (begin + count) * stride);
    return graph_of(a).record("slice_rows", Tensor(std::move(shape), std::move(values)), {a},
                              [begin, stride](const Tensor& gy, std::span<Tensor* const> gin) {
                                  float* dst = gin[0]->raw() + begin * stride;
                                  for (std::size_t i = 0; i < gy.numel(); ++i) dst[i] += gy[i];
                              });
}

Var concat_rows(std::span<const Var> parts) {
    if (parts.empty()) throw ContractViolation("concat_rows: no inputs");
    Graph& g = graph_of(parts[0]);
    Shape shape = parts[0].shape();
    const Shape tail(shape.begin() + 1, shape.end());
    std::size_t rows = 0;
    std::vector<float> values;
    std::vector<std::size_t> sizes;
    for (const Var& p : parts) {
        require_same_graph(parts[0], p, "concat_rows");
        const Tensor& v = p.value();
        if (Shape(v.shape().begin() + 1, v.shape().end()) != tail)
            throw ContractViolation("concat_rows: trailing extents differ: " + shape_to_string(v.shape()));
        rows += v.dim(0);
        values.insert(values.end(), v.data().begin(), v.data().end());
        sizes.push_back(v.numel());
    }
    shape[0] = rows;
    return g.record("concat_rows", Tensor(std::move(shape), std::move(values)),
                    std::vector<Var>(parts.begin(), parts.end()),
                    [sizes = std::move(sizes)](const Tensor& gy, std::span<Tensor* const> gin) {
                        std::size_t offset = 0;
                        for (std::size_t k = 0; k < sizes.size(); ++k) {
                            if (gin[k])
                                for (std::size_t i = 0; i < sizes[k]; ++i) (*gin[k])[i] += gy[offset + i];
                            offset += sizes[k];
                        }
                    });
}

Var detach(Var a) { return graph_of(a).record("detach", a.value(), {}, {}); }

}  // namespace p3d
