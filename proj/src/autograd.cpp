// Copyright Contributors to the SeqSplat Project
// SPDX-License-Identifier: Apache-2.0

#include "seqsplat/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <unordered_map>
#include <unordered_set>

namespace seqsplat::ag {

size_t shape_size(const Shape& s) {
    size_t n = 1;
    for (size_t d : s)
        n *= d;
    return n;
}

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "(";
    for (size_t i = 0; i < s.size(); ++i)
        os << (i ? "," : "") << s[i];
    os << ")";
    return os.str();
}

namespace {

thread_local bool g_grad_enabled = true;

#ifndef NDEBUG
bool g_finite_checks = true;
#else
bool g_finite_checks = false;
#endif

[[noreturn]] void fail(const std::string& msg) { throw std::runtime_error("autograd: " + msg); }

void check_finite(const Node& n) {
    for (double v : n.values)
        if (!std::isfinite(v))
            fail(std::string("non-finite value produced by op '") + n.op + "'");
}

// Value-sorted summation: bitwise identical for any permutation of addends.
// -0.0 is ordered before +0.0 so equal-comparing values have a total order.
double sorted_sum(std::vector<double>& buf) {
    std::sort(buf.begin(), buf.end(), [](double a, double b) {
        if (a < b)
            return true;
        if (b < a)
            return false;
        return std::signbit(a) && !std::signbit(b);
    });
    double s = 0.0;
    for (double v : buf)
        s += v;
    return s;
}

Tensor make_op(const char* opname, Shape shape, std::vector<double> vals,
               const std::vector<Tensor>& inputs, std::function<void(Node&)> bw) {
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->values = std::move(vals);
    n->op = opname;
    if (n->values.size() != shape_size(n->shape))
        fail(std::string(opname) + ": value count does not match shape");
    if (finite_checks())
        check_finite(*n);
    bool needs = false;
    if (g_grad_enabled)
        for (const auto& t : inputs)
            if (t.defined() && t.requires_grad()) {
                needs = true;
                break;
            }
    if (needs) {
        n->requires_grad = true;
        for (const auto& t : inputs)
            if (t.defined())
                n->inputs.push_back(t.node());
        Node* raw = n.get();
        n->backward_fn = [raw, f = std::move(bw)] { f(*raw); };
    }
    return Tensor::wrap(n);
}

bool is_suffix(const Shape& small, const Shape& big) {
    if (small.size() > big.size())
        return false;
    size_t off = big.size() - small.size();
    for (size_t i = 0; i < small.size(); ++i)
        if (small[i] != big[i + off])
            return false;
    return true;
}

}  // namespace

bool grad_enabled() { return g_grad_enabled; }
void set_grad_enabled(bool on) { g_grad_enabled = on; }
bool finite_checks() { return g_finite_checks; }
void set_finite_checks(bool on) { g_finite_checks = on; }

// --- Tensor ------------------------------------------------------------------

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    auto n = std::make_shared<Node>();
    n->values.assign(shape_size(shape), 0.0);
    n->shape = std::move(shape);
    n->requires_grad = requires_grad;
    return wrap(n);
}

Tensor Tensor::full(Shape shape, double value) {
    auto n = std::make_shared<Node>();
    n->values.assign(shape_size(shape), value);
    n->shape = std::move(shape);
    return wrap(n);
}

Tensor Tensor::from(Shape shape, std::vector<double> values) {
    if (values.size() != shape_size(shape))
        fail("from: value count does not match shape " + shape_str(shape));
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->values = std::move(values);
    return wrap(n);
}

Tensor Tensor::scalar(double value) { return from({1}, {value}); }

Tensor Tensor::randn(Shape shape, RngStream& rng, double stddev, double mean) {
    auto n = std::make_shared<Node>();
    n->values.resize(shape_size(shape));
    for (auto& v : n->values)
        v = rng.normal(mean, stddev);
    n->shape = std::move(shape);
    return wrap(n);
}

double Tensor::item() const {
    if (size() != 1)
        fail("item() on tensor of shape " + shape_str(shape()));
    return node_->values[0];
}

const std::vector<double>& Tensor::grad() const {
    node_->ensure_grad();
    return node_->grad;
}

void Tensor::zero_grad() { node_->grad.assign(node_->values.size(), 0.0); }

// --- elementwise with leading-axis broadcast -----------------------------------

namespace {

enum class Bin { Add, Sub, Mul };

Tensor binary_op(Bin kind, const char* name, const Tensor& a, const Tensor& b) {
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    // out follows the larger operand; the smaller tiles over leading axes
    bool a_big;
    if (sa == sb)
        a_big = true;
    else if (b.size() == 1 || is_suffix(sb, sa))
        a_big = true;
    else if (a.size() == 1 || is_suffix(sa, sb))
        a_big = false;
    else
        fail(std::string(name) + ": incompatible shapes " + shape_str(sa) + " and " +
             shape_str(sb));

    const Tensor& big = a_big ? a : b;
    const Tensor& small = a_big ? b : a;
    size_t n = big.size();
    size_t m = small.size();
    size_t tiles = n / m;  // small covers trailing axes, tiled over leading ones
    std::vector<double> out(n);
    const double* pb = big.data();
    const double* ps = small.data();
    for (size_t t = 0; t < tiles; ++t) {
        const double* pbt = pb + t * m;
        double* ot = out.data() + t * m;
        for (size_t j = 0; j < m; ++j) {
            double x = a_big ? pbt[j] : ps[j];
            double y = a_big ? ps[j] : pbt[j];
            ot[j] = kind == Bin::Add ? x + y : kind == Bin::Sub ? x - y : x * y;
        }
    }
    return make_op(name, big.shape(), std::move(out), {a, b}, [=](Node& o) {
        auto& na = *a.node();
        auto& nb = *b.node();
        const double* g = o.grad.data();
        if (na.requires_grad) {
            na.ensure_grad();
            double* ga = na.grad.data();
            size_t ma = na.values.size();
            const double* vb = nb.values.data();
            size_t mb = nb.values.size();
            for (size_t t = 0; t < tiles; ++t)
                for (size_t j = 0; j < m; ++j) {
                    size_t i = t * m + j;
                    double gi = g[i];
                    if (kind == Bin::Mul)
                        gi *= vb[mb == m ? j : i];
                    ga[ma == m ? j : i] += gi;
                }
        }
        if (nb.requires_grad) {
            nb.ensure_grad();
            double* gb = nb.grad.data();
            size_t mb = nb.values.size();
            const double* va = na.values.data();
            size_t ma = na.values.size();
            for (size_t t = 0; t < tiles; ++t)
                for (size_t j = 0; j < m; ++j) {
                    size_t i = t * m + j;
                    double gi = g[i];
                    if (kind == Bin::Mul)
                        gi *= va[ma == m ? j : i];
                    else if (kind == Bin::Sub)
                        gi = -gi;
                    gb[mb == m ? j : i] += gi;
                }
        }
    });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary_op(Bin::Add, "add", a, b); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary_op(Bin::Sub, "sub", a, b); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary_op(Bin::Mul, "mul", a, b); }

Tensor mulc(const Tensor& a, double c) {
    std::vector<double> out(a.size());
    const double* p = a.data();
    for (size_t i = 0; i < out.size(); ++i)
        out[i] = p[i] * c;
    return make_op("mulc", a.shape(), std::move(out), {a}, [=](Node& o) {
        auto& na = *a.node();
        if (!na.requires_grad)
            return;
        na.ensure_grad();
        for (size_t i = 0; i < o.values.size(); ++i)
            na.grad[i] += o.grad[i] * c;
    });
}

// --- matmul --------------------------------------------------------------------

namespace {

// C (n,m) += A (n,k) * B (k,m). Fixed k-order per output element; each output
// row depends only on its input row, so results are bitwise row-equivariant.
void gemm_acc(const double* A, const double* B, double* C, size_t n, size_t k, size_t m) {
    for (size_t i = 0; i < n; ++i) {
        const double* a = A + i * k;
        double* c = C + i * m;
        for (size_t p = 0; p < k; ++p) {
            const double av = a[p];
            const double* b = B + p * m;
            for (size_t j = 0; j < m; ++j)
                c[j] += av * b[j];
        }
    }
}

// C (n,m) += A (n,k) * B^T with B (m,k)
void gemm_nt_acc(const double* A, const double* B, double* C, size_t n, size_t k, size_t m) {
    for (size_t i = 0; i < n; ++i) {
        const double* a = A + i * k;
        double* c = C + i * m;
        for (size_t j = 0; j < m; ++j) {
            const double* b = B + j * k;
            double s = 0.0;
            for (size_t p = 0; p < k; ++p)
                s += a[p] * b[p];
            c[j] += s;
        }
    }
}

// C (k,m) += A^T * B with A (n,k), B (n,m)
void gemm_tn_acc(const double* A, const double* B, double* C, size_t n, size_t k, size_t m) {
    for (size_t i = 0; i < n; ++i) {
        const double* a = A + i * k;
        const double* b = B + i * m;
        for (size_t p = 0; p < k; ++p) {
            const double av = a[p];
            double* c = C + p * m;
            for (size_t j = 0; j < m; ++j)
                c[j] += av * b[j];
        }
    }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2)
        fail("matmul: expects 2-D operands, got " + shape_str(a.shape()) + " and " +
             shape_str(b.shape()));
    size_t n = a.dim(0), k = a.dim(1), k2 = b.dim(0), m = b.dim(1);
    if (k != k2)
        fail("matmul: inner dims disagree, " + shape_str(a.shape()) + " vs " +
             shape_str(b.shape()));
    std::vector<double> out(n * m, 0.0);
    gemm_acc(a.data(), b.data(), out.data(), n, k, m);
    return make_op("matmul", {n, m}, std::move(out), {a, b}, [=](Node& o) {
        auto& na = *a.node();
        auto& nb = *b.node();
        if (na.requires_grad) {
            na.ensure_grad();
            gemm_nt_acc(o.grad.data(), nb.values.data(), na.grad.data(), n, m, k);
        }
        if (nb.requires_grad) {
            nb.ensure_grad();
            gemm_tn_acc(na.values.data(), o.grad.data(), nb.grad.data(), n, k, m);
        }
    });
}

Tensor transpose(const Tensor& a) {
    if (a.rank() != 2)
        fail("transpose: expects 2-D, got " + shape_str(a.shape()));
    size_t n = a.dim(0), m = a.dim(1);
    std::vector<double> out(n * m);
    const double* p = a.data();
    for (size_t i = 0; i < n; ++i)
        for (size_t j = 0; j < m; ++j)
            out[j * n + i] = p[i * m + j];
    return make_op("transpose", {m, n}, std::move(out), {a}, [=](Node& o) {
        auto& na = *a.node();
        if (!na.requires_grad)
            return;
        na.ensure_grad();
        for (size_t i = 0; i < n; ++i)
            for (size_t j = 0; j < m; ++j)
                na.grad[i * m + j] += o.grad[j * n + i];
    });
}

Tensor reshape(const Tensor& a, Shape shape) {
    if (shape_size(shape) != a.size())
        fail("reshape: cannot reshape " + shape_str(a.shape()) + " to " + shape_str(shape));
    std::vector<double> out = a.values();
    return make_op("reshape", std::move(shape), std::move(out), {a}, [=](Node& o) {
        auto& na = *a.node();
        if (!na.requires_grad)
            return;
        na.ensure_grad();
        for (size_t i = 0; i < o.values.size(); ++i)
            na.grad[i] += o.grad[i];
    });
}

// --- concat / slice -------------------------------------------------------------

Tensor concat(const std::vector<Tensor>& parts, size_t axis) {
    if (parts.empty())
        fail("concat: no inputs");
    const Shape& s0 = parts[0].shape();
    if (axis >= s0.size())
        fail("concat: axis out of range");
    size_t outer = 1, inner = 1;
    for (size_t i = 0; i < axis; ++i)
        outer *= s0[i];
    for (size_t i = axis + 1; i < s0.size(); ++i)
        inner *= s0[i];
    size_t total_axis = 0;
    for (const auto& p : parts) {
        const Shape& s = p.shape();
        if (s.size() != s0.size())
            fail("concat: rank mismatch");
        for (size_t i = 0; i < s.size(); ++i)
            if (i != axis && s[i] != s0[i])
                fail("concat: shape mismatch " + shape_str(s) + " vs " + shape_str(s0));
        total_axis += s[axis];
    }
    Shape out_shape = s0;
    out_shape[axis] = total_axis;
    std::vector<double> out(outer * total_axis * inner);
    size_t off = 0;
    for (const auto& p : parts) {
        size_t ax = p.shape()[axis];
        const double* src = p.data();
        for (size_t o = 0; o < outer; ++o)
            std::memcpy(out.data() + (o * total_axis + off) * inner,
                        src + o * ax * inner, ax * inner * sizeof(double));
        off += ax;
    }
    std::vector<size_t> offsets;
    {
        size_t acc = 0;
        for (const auto& p : parts) {
            offsets.push_back(acc);
            acc += p.shape()[axis];
        }
    }
    return make_op("concat", std::move(out_shape), std::move(out), parts,
                   [parts, axis, outer, inner, total_axis, offsets](Node& o) {
                       for (size_t pi = 0; pi < parts.size(); ++pi) {
                           auto& np = *parts[pi].node();
                           if (!np.requires_grad)
                               continue;
                           np.ensure_grad();
                           size_t ax = np.shape[axis];
                           for (size_t ou = 0; ou < outer; ++ou) {
                               const double* g =
                                   o.grad.data() + (ou * total_axis + offsets[pi]) * inner;
                               double* dst = np.grad.data() + ou * ax * inner;
                               for (size_t i = 0; i < ax * inner; ++i)
                                   dst[i] += g[i];
                           }
                       }
                   });
}

Tensor slice(const Tensor& a, size_t axis, size_t start, size_t len) {
    const Shape& s = a.shape();
    if (axis >= s.size())
        fail("slice: axis out of range");
    if (start + len > s[axis])
        fail("slice: range out of bounds for " + shape_str(s));
    size_t outer = 1, inner = 1;
    for (size_t i = 0; i < axis; ++i)
        outer *= s[i];
    for (size_t i = axis + 1; i < s.size(); ++i)
        inner *= s[i];
    Shape out_shape = s;
    out_shape[axis] = len;
    std::vector<double> out(outer * len * inner);
    size_t ax = s[axis];
    const double* src = a.data();
    for (size_t o = 0; o < outer; ++o)
        std::memcpy(out.data() + o * len * inner, src + (o * ax + start) * inner,
                    len * inner * sizeof(double));
    return make_op("slice", std::move(out_shape), std::move(out), {a}, [=](Node& o) {
        auto& na = *a.node();
        if (!na.requires_grad)
            return;
        na.ensure_grad();
        for (size_t ou = 0; ou < outer; ++ou) {
            const double* g = o.grad.data() + ou * len * inner;
            double* dst = na.grad.data() + (ou * ax + start) * inner;
            for (size_t i = 0; i < len * inner; ++i)
                dst[i] += g[i];
        }
    });
}

// --- reductions ------------------------------------------------------------------

Tensor sum(const Tensor& a) {
    double s = 0.0;
    for (double v : a.values())
        s += v;
    return make_op("sum", {1}, {s}, {a}, [=](Node& o) {
        auto& na = *a.node();
        if (!na.requires_grad)
            return;
        na.ensure_grad();
        double g = o.grad[0];
        for (auto& gv : na.grad)
            gv += g;
    });
}

Tensor mean(const Tensor& a) {
    if (a.size() == 0)
        fail("mean: empty tensor");
    double s = 0.0;
    for (double v : a.values())
        s += v;
    double inv = 1.0 / static_cast<double>(a.size());
    return make_op("mean", {1}, {s * inv}, {a}, [=](Node& o) {
        auto& na = *a.node();
        if (!na.requires_grad)
            return;
        na.ensure_grad();
        double g = o.grad[0] * inv;
        for (auto& gv : na.grad)
            gv += g;
    });
}

Tensor max(const Tensor& a, size_t axis) {
    const Shape& s = a.shape();
    if (axis >= s.size())
        fail("max: axis out of range");
    size_t outer = 1, inner = 1, d = s[axis];
    for (size_t i = 0; i < axis; ++i)
        outer *= s[i];
    for (size_t i = axis + 1; i < s.size(); ++i)
        inner *= s[i];
    if (d == 0)
        fail("max: empty axis");
    Shape out_shape;
    for (size_t i = 0; i < s.size(); ++i)
        if (i != axis)
            out_shape.push_back(s[i]);
    if (out_shape.empty())
        out_shape.push_back(1);
    std::vector<double> out(outer * inner);
    std::vector<size_t> argmax(outer * inner);
    const double* p = a.data();
    for (size_t o = 0; o < outer; ++o)
        for (size_t in = 0; in < inner; ++in) {
            double best = p[(o * d) * inner + in];
            size_t bi = 0;
            for (size_t k = 1; k < d; ++k) {
                double v = p[(o * d + k) * inner + in];
                if (v > best) {
                    best = v;
                    bi = k;
                }
            }
            out[o * inner + in] = best;
            argmax[o * inner + in] = (o * d + bi) * inner + in;
        }
    return make_op("max", std::move(out_shape), std::move(out), {a},
                   [a, argmax = std::move(argmax)](Node& o) {
                       auto& na = *a.node();
                       if (!na.requires_grad)
                           return;
                       na.ensure_grad();
                       for (size_t i = 0; i < argmax.size(); ++i)
                           na.grad[argmax[i]] += o.grad[i];
                   });
}

// --- normalizations / activations --------------------------------------------------

namespace {
struct LaneIter {
    size_t outer, d, inner;
};
LaneIter lanes_for(const Shape& s, size_t axis) {
    LaneIter li{1, s[axis], 1};
    for (size_t i = 0; i < axis; ++i)
        li.outer *= s[i];
    for (size_t i = axis + 1; i < s.size(); ++i)
        li.inner *= s[i];
    return li;
}
}  // namespace

Tensor softmax(const Tensor& a, size_t axis) {
    const Shape& s = a.shape();
    if (axis >= s.size())
        fail("softmax: axis out of range");
    auto li = lanes_for(s, axis);
    std::vector<double> out(a.size());
    const double* p = a.data();
    for (size_t o = 0; o < li.outer; ++o)
        for (size_t in = 0; in < li.inner; ++in) {
            double m = -1e300;
            for (size_t k = 0; k < li.d; ++k)
                m = std::max(m, p[(o * li.d + k) * li.inner + in]);
            double z = 0.0;
            for (size_t k = 0; k < li.d; ++k) {
                double e = std::exp(p[(o * li.d + k) * li.inner + in] - m);
                out[(o * li.d + k) * li.inner + in] = e;
                z += e;
            }
            double invz = 1.0 / z;
            for (size_t k = 0; k < li.d; ++k)
                out[(o * li.d + k) * li.inner + in] *= invz;
        }
    return make_op("softmax", s, std::move(out), {a}, [=](Node& o) {
        auto& na = *a.node();
        if (!na.requires_grad)
            return;
        na.ensure_grad();
        const double* y = o.values.data();
        const double* g = o.grad.data();
        for (size_t ou = 0; ou < li.outer; ++ou)
            for (size_t in = 0; in < li.inner; ++in) {
                double dot = 0.0;
                for (size_t k = 0; k < li.d; ++k) {
                    size_t idx = (ou * li.d + k) * li.inner + in;
                    dot += g[idx] * y[idx];
                }
                for (size_t k = 0; k < li.d; ++k) {
                    size_t idx = (ou * li.d + k) * li.inner + in;
                    na.grad[idx] += y[idx] * (g[idx] - dot);
                }
            }
    });
}

Tensor sigmoid(const Tensor& a) {
    std::vector<double> out(a.size());
    const double* p = a.data();
    for (size_t i = 0; i < out.size(); ++i) {
        double x = p[i];
        if (x >= 0.0)
            out[i] = 1.0 / (1.0 + std::exp(-x));
        else {
            double e = std::exp(x);
            out[i] = e / (1.0 + e);
        }
    }
    return make_op("sigmoid", a.shape(), std::move(out), {a}, [=](Node& o) {
        auto& na = *a.node();
        if (!na.requires_grad)
            return;
        na.ensure_grad();
        for (size_t i = 0; i < o.values.size(); ++i) {
            double y = o.values[i];
            na.grad[i] += o.grad[i] * y * (1.0 - y);
        }
    });
}

Tensor gelu(const Tensor& a) {
    constexpr double inv_sqrt2 = 0.7071067811865476;
    constexpr double inv_sqrt2pi = 0.3989422804014327;
    std::vector<double> out(a.size());
    const double* p = a.data();
    for (size_t i = 0; i < out.size(); ++i) {
        double x = p[i];
        out[i] = 0.5 * x * (1.0 + std::erf(x * inv_sqrt2));
    }
    return make_op("gelu", a.shape(), std::move(out), {a}, [=](Node& o) {
        auto& na = *a.node();
        if (!na.requires_grad)
            return;
        na.ensure_grad();
        for (size_t i = 0; i < o.values.size(); ++i) {
            double x = na.values[i];
            double cdf = 0.5 * (1.0 + std::erf(x * inv_sqrt2));
            double pdf = inv_sqrt2pi * std::exp(-0.5 * x * x);
            na.grad[i] += o.grad[i] * (cdf + x * pdf);
        }
    });
}

Tensor layer_norm(const Tensor& a, size_t axis, double eps) {
    const Shape& s = a.shape();
    if (axis >= s.size())
        fail("layer_norm: axis out of range");
    auto li = lanes_for(s, axis);
    std::vector<double> out(a.size());
    std::vector<double> inv_std(li.outer * li.inner);
    const double* p = a.data();
    double invd = 1.0 / static_cast<double>(li.d);
    for (size_t o = 0; o < li.outer; ++o)
        for (size_t in = 0; in < li.inner; ++in) {
            double mu = 0.0;
            for (size_t k = 0; k < li.d; ++k)
                mu += p[(o * li.d + k) * li.inner + in];
            mu *= invd;
            double var = 0.0;
            for (size_t k = 0; k < li.d; ++k) {
                double dv = p[(o * li.d + k) * li.inner + in] - mu;
                var += dv * dv;
            }
            var *= invd;
            double is = 1.0 / std::sqrt(var + eps);
            inv_std[o * li.inner + in] = is;
            for (size_t k = 0; k < li.d; ++k)
                out[(o * li.d + k) * li.inner + in] =
                    (p[(o * li.d + k) * li.inner + in] - mu) * is;
        }
    return make_op("layer_norm", s, std::move(out), {a},
                   [a, li, invd, inv_std = std::move(inv_std)](Node& o) {
                       auto& na = *a.node();
                       if (!na.requires_grad)
                           return;
                       na.ensure_grad();
                       const double* y = o.values.data();
                       const double* g = o.grad.data();
                       for (size_t ou = 0; ou < li.outer; ++ou)
                           for (size_t in = 0; in < li.inner; ++in) {
                               double mean_g = 0.0, mean_gy = 0.0;
                               for (size_t k = 0; k < li.d; ++k) {
                                   size_t idx = (ou * li.d + k) * li.inner + in;
                                   mean_g += g[idx];
                                   mean_gy += g[idx] * y[idx];
                               }
                               mean_g *= invd;
                               mean_gy *= invd;
                               double is = inv_std[ou * li.inner + in];
                               for (size_t k = 0; k < li.d; ++k) {
                                   size_t idx = (ou * li.d + k) * li.inner + in;
                                   na.grad[idx] += is * (g[idx] - mean_g - y[idx] * mean_gy);
                               }
                           }
                   });
}

Tensor embedding_lookup(const Tensor& table, const std::vector<int>& ids) {
    if (table.rank() != 2)
        fail("embedding_lookup: table must be 2-D");
    size_t v = table.dim(0), d = table.dim(1);
    for (int id : ids)
        if (id < 0 || static_cast<size_t>(id) >= v)
            fail("embedding_lookup: id out of range");
    std::vector<double> out(ids.size() * d);
    const double* t = table.data();
    for (size_t l = 0; l < ids.size(); ++l)
        std::memcpy(out.data() + l * d, t + static_cast<size_t>(ids[l]) * d,
                    d * sizeof(double));
    return make_op("embedding_lookup", {ids.size(), d}, std::move(out), {table},
                   [table, ids, d](Node& o) {
                       auto& nt = *table.node();
                       if (!nt.requires_grad)
                           return;
                       nt.ensure_grad();
                       for (size_t l = 0; l < ids.size(); ++l) {
                           double* dst = nt.grad.data() + static_cast<size_t>(ids[l]) * d;
                           const double* g = o.grad.data() + l * d;
                           for (size_t c = 0; c < d; ++c)
                               dst[c] += g[c];
                       }
                   });
}

Tensor dropout(const Tensor& a, double p, bool train, RngStream& rng) {
    if (p < 0.0 || p >= 1.0)
        fail("dropout: p must be in [0,1)");
    if (!train || p == 0.0)
        return a;
    std::vector<double> mask(a.size());
    double scale = 1.0 / (1.0 - p);
    for (auto& m : mask)
        m = rng.uniform() >= p ? scale : 0.0;
    std::vector<double> out(a.size());
    const double* src = a.data();
    for (size_t i = 0; i < out.size(); ++i)
        out[i] = src[i] * mask[i];
    return make_op("dropout", a.shape(), std::move(out), {a},
                   [a, mask = std::move(mask)](Node& o) {
                       auto& na = *a.node();
                       if (!na.requires_grad)
                           return;
                       na.ensure_grad();
                       for (size_t i = 0; i < o.values.size(); ++i)
                           na.grad[i] += o.grad[i] * mask[i];
                   });
}

// --- composite ops ------------------------------------------------------------------

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, const Tensor& mask) {
    if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2)
        fail("attention: expects 2-D Q,K,V");
    size_t dk = q.dim(1);
    if (k.dim(1) != dk)
        fail("attention: Q,K width mismatch");
    if (v.dim(0) != k.dim(0))
        fail("attention: K,V row mismatch");
    Tensor s = mulc(matmul(q, transpose(k)), 1.0 / std::sqrt(static_cast<double>(dk)));
    if (mask.defined())
        s = add(s, mask);
    return matmul(softmax(s, 1), v);
}

Tensor single_query_attention(const Tensor& q, const Tensor& k, const Tensor& v) {
    if (q.rank() != 1 || k.rank() != 2 || v.rank() != 2)
        fail("single_query_attention: expects q (d), K (N,d), V (N,dv)");
    size_t d = q.dim(0), n = k.dim(0);
    if (k.dim(1) != d)
        fail("single_query_attention: q/K width mismatch");
    if (v.dim(0) != n)
        fail("single_query_attention: K/V row mismatch");
    size_t dv = v.dim(1);
    if (n == 0)
        fail("single_query_attention: empty key set");

    double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
    const double* qp = q.data();
    const double* kp = k.data();
    const double* vp = v.data();

    std::vector<double> alpha(n);
    double m = -1e300;
    for (size_t i = 0; i < n; ++i) {
        double s = 0.0;
        const double* kr = kp + i * d;
        for (size_t c = 0; c < d; ++c)
            s += qp[c] * kr[c];
        alpha[i] = s * inv_sqrt_d;
        m = std::max(m, alpha[i]);
    }
    std::vector<double> buf(n);
    for (size_t i = 0; i < n; ++i) {
        alpha[i] = std::exp(alpha[i] - m);
        buf[i] = alpha[i];
    }
    double z = sorted_sum(buf);
    double invz = 1.0 / z;
    for (auto& a : alpha)
        a *= invz;

    std::vector<double> out(dv);
    for (size_t c = 0; c < dv; ++c) {
        buf.resize(n);
        for (size_t i = 0; i < n; ++i)
            buf[i] = alpha[i] * vp[i * dv + c];
        out[c] = sorted_sum(buf);
    }

    return make_op("single_query_attention", {dv}, std::move(out), {q, k, v},
                   [q, k, v, alpha = std::move(alpha), inv_sqrt_d, n, d, dv](Node& o) {
                       auto& nq = *q.node();
                       auto& nk = *k.node();
                       auto& nv = *v.node();
                       const double* g = o.grad.data();
                       const double* vp2 = nv.values.data();
                       const double* kp2 = nk.values.data();
                       const double* qp2 = nq.values.data();
                       // d_alpha_i = g . V_i ; ds_i = alpha_i (d_alpha_i - sum_j alpha_j d_alpha_j)
                       std::vector<double> dalpha(n);
                       double dot = 0.0;
                       for (size_t i = 0; i < n; ++i) {
                           double s = 0.0;
                           for (size_t c = 0; c < dv; ++c)
                               s += g[c] * vp2[i * dv + c];
                           dalpha[i] = s;
                           dot += alpha[i] * s;
                       }
                       if (nv.requires_grad) {
                           nv.ensure_grad();
                           for (size_t i = 0; i < n; ++i)
                               for (size_t c = 0; c < dv; ++c)
                                   nv.grad[i * dv + c] += alpha[i] * g[c];
                       }
                       bool need_q = nq.requires_grad, need_k = nk.requires_grad;
                       if (!need_q && !need_k)
                           return;
                       if (need_q)
                           nq.ensure_grad();
                       if (need_k)
                           nk.ensure_grad();
                       for (size_t i = 0; i < n; ++i) {
                           double ds = alpha[i] * (dalpha[i] - dot) * inv_sqrt_d;
                           if (need_q)
                               for (size_t c = 0; c < d; ++c)
                                   nq.grad[c] += ds * kp2[i * d + c];
                           if (need_k)
                               for (size_t c = 0; c < d; ++c)
                                   nk.grad[i * d + c] += ds * qp2[c];
                       }
                   });
}

Tensor weighted_mean_rows(const Tensor& f, const Tensor& w) {
    if (f.rank() != 2 || w.rank() != 1)
        fail("weighted_mean_rows: expects F (N,d), w (N)");
    size_t n = f.dim(0), d = f.dim(1);
    if (w.dim(0) != n)
        fail("weighted_mean_rows: row count mismatch");
    const double* fp = f.data();
    const double* wp = w.data();
    std::vector<double> buf(n);
    for (size_t i = 0; i < n; ++i)
        buf[i] = wp[i];
    double wsum = sorted_sum(buf);
    if (wsum == 0.0)
        fail("weighted_mean_rows: all weights are zero");
    double inv = 1.0 / wsum;
    std::vector<double> out(d);
    for (size_t c = 0; c < d; ++c) {
        buf.resize(n);
        for (size_t i = 0; i < n; ++i)
            buf[i] = wp[i] * fp[i * d + c];
        out[c] = sorted_sum(buf) * inv;
    }
    return make_op("weighted_mean_rows", {d}, std::move(out), {f, w}, [=](Node& o) {
        auto& nf = *f.node();
        auto& nw = *w.node();
        const double* g = o.grad.data();
        if (nf.requires_grad) {
            nf.ensure_grad();
            const double* wv = nw.values.data();
            for (size_t i = 0; i < n; ++i)
                for (size_t c = 0; c < d; ++c)
                    nf.grad[i * d + c] += g[c] * wv[i] * inv;
        }
        if (nw.requires_grad) {
            nw.ensure_grad();
            const double* fv = nf.values.data();
            const double* y = o.values.data();
            for (size_t i = 0; i < n; ++i) {
                double s = 0.0;
                for (size_t c = 0; c < d; ++c)
                    s += g[c] * (fv[i * d + c] - y[c]);
                nw.grad[i] += s * inv;
            }
        }
    });
}

Tensor bce_with_logits(const Tensor& logits, const Tensor& targets) {
    if (logits.size() != targets.size())
        fail("bce_with_logits: length mismatch " + shape_str(logits.shape()) + " vs " +
             shape_str(targets.shape()));
    size_t n = logits.size();
    if (n == 0)
        fail("bce_with_logits: empty input");
    const double* x = logits.data();
    const double* t = targets.data();
    double loss = 0.0;
    for (size_t i = 0; i < n; ++i) {
        // softplus(x) - t*x in the numerically-stable form
        double sp = std::max(x[i], 0.0) + std::log1p(std::exp(-std::abs(x[i])));
        loss += sp - t[i] * x[i];
    }
    loss /= static_cast<double>(n);
    return make_op("bce_with_logits", {1}, {loss}, {logits, targets}, [=](Node& o) {
        auto& nl = *logits.node();
        if (!nl.requires_grad)
            return;
        nl.ensure_grad();
        double g = o.grad[0] / static_cast<double>(n);
        const double* xv = nl.values.data();
        const double* tv = targets.data();
        for (size_t i = 0; i < n; ++i) {
            double sig = xv[i] >= 0.0 ? 1.0 / (1.0 + std::exp(-xv[i]))
                                      : std::exp(xv[i]) / (1.0 + std::exp(xv[i]));
            nl.grad[i] += g * (sig - tv[i]);
        }
    });
}

Tensor dice_loss(const Tensor& probs, const Tensor& targets) {
    if (probs.size() != targets.size())
        fail("dice_loss: length mismatch");
    size_t n = probs.size();
    const double* p = probs.data();
    const double* t = targets.data();
    constexpr double eps = 1.0;
    double inter = 0.0, psum = 0.0, tsum = 0.0;
    for (size_t i = 0; i < n; ++i) {
        inter += p[i] * t[i];
        psum += p[i];
        tsum += t[i];
    }
    double num = 2.0 * inter + eps;
    double den = psum + tsum + eps;
    double loss = 1.0 - num / den;
    return make_op("dice_loss", {1}, {loss}, {probs, targets}, [=](Node& o) {
        auto& np = *probs.node();
        if (!np.requires_grad)
            return;
        np.ensure_grad();
        double g = o.grad[0];
        const double* tv = targets.data();
        double inv_den2 = 1.0 / (den * den);
        for (size_t i = 0; i < n; ++i)
            np.grad[i] += -g * (2.0 * tv[i] * den - num) * inv_den2;
    });
}

Tensor cross_entropy(const Tensor& logits, const std::vector<int>& target_ids,
                     int ignore_id) {
    if (logits.rank() != 2)
        fail("cross_entropy: logits must be (L,V)");
    size_t l = logits.dim(0), v = logits.dim(1);
    if (target_ids.size() != l)
        fail("cross_entropy: target length mismatch");
    const double* x = logits.data();
    double loss = 0.0;
    size_t count = 0;
    for (size_t i = 0; i < l; ++i) {
        int id = target_ids[i];
        if (id == ignore_id)
            continue;
        if (id < 0 || static_cast<size_t>(id) >= v)
            fail("cross_entropy: target id out of range");
        const double* row = x + i * v;
        double m = row[0];
        for (size_t j = 1; j < v; ++j)
            m = std::max(m, row[j]);
        double z = 0.0;
        for (size_t j = 0; j < v; ++j)
            z += std::exp(row[j] - m);
        loss += m + std::log(z) - row[static_cast<size_t>(id)];
        ++count;
    }
    if (count == 0)
        fail("cross_entropy: no effective targets (all ignored)");
    loss /= static_cast<double>(count);
    return make_op("cross_entropy", {1}, {loss}, {logits}, [=](Node& o) {
        auto& nl = *logits.node();
        if (!nl.requires_grad)
            return;
        nl.ensure_grad();
        double g = o.grad[0] / static_cast<double>(count);
        const double* xv = nl.values.data();
        for (size_t i = 0; i < l; ++i) {
            int id = target_ids[i];
            if (id == ignore_id)
                continue;
            const double* row = xv + i * v;
            double m = row[0];
            for (size_t j = 1; j < v; ++j)
                m = std::max(m, row[j]);
            double z = 0.0;
            for (size_t j = 0; j < v; ++j)
                z += std::exp(row[j] - m);
            double invz = 1.0 / z;
            for (size_t j = 0; j < v; ++j) {
                double p = std::exp(row[j] - m) * invz;
                nl.grad[i * v + j] += g * (p - (static_cast<size_t>(id) == j ? 1.0 : 0.0));
            }
        }
    });
}

// --- backward ----------------------------------------------------------------------

void backward(const Tensor& loss) {
    if (!loss.defined() || loss.size() != 1)
        fail("backward: loss must be a defined scalar tensor");
    // reverse topological order via iterative DFS
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, size_t>> stack;
    Node* root = loss.node().get();
    if (!root->requires_grad) {
        root->ensure_grad();
        root->grad[0] += 1.0;
        return;  // nothing depends on parameters
    }
    stack.emplace_back(root, 0);
    visited.insert(root);
    // children are visited right-to-left so that reversed post-order runs
    // backward closures in forward input order; gradients of summed losses
    // then accumulate exactly like sequential backward calls
    while (!stack.empty()) {
        Node* n = stack.back().first;
        size_t idx = stack.back().second;
        if (idx < n->inputs.size()) {
            stack.back().second = idx + 1;
            Node* child = n->inputs[n->inputs.size() - 1 - idx].get();
            if (child->requires_grad && !visited.count(child)) {
                visited.insert(child);
                stack.emplace_back(child, 0);
            }
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }
    // zero intermediate grads; leaf (parameter) grads persist and accumulate
    for (Node* n : order)
        if (n->backward_fn)
            n->grad.assign(n->values.size(), 0.0);
    root->ensure_grad();
    root->grad[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it)
        if ((*it)->backward_fn)
            (*it)->backward_fn();
}

// --- parameters / optimizer -----------------------------------------------------------

Tensor ParameterStore::register_parameter(const std::string& name, Tensor t) {
    if (params_.count(name))
        fail("parameter already registered: " + name);
    t.set_requires_grad(true);
    params_.emplace(name, t);
    return t;
}

Tensor ParameterStore::get(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end())
        fail("no such parameter: " + name);
    return it->second;
}

void ParameterStore::zero_grad() {
    for (auto& [name, t] : params_)
        t.zero_grad();
}

void ParameterStore::save(const std::filesystem::path& path) const {
    std::ostringstream os(std::ios::binary);
    os.write("SSCK", 4);
    write_u32(os, static_cast<uint32_t>(params_.size()));
    for (const auto& [name, t] : params_) {
        write_u32(os, static_cast<uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        write_u32(os, static_cast<uint32_t>(t.rank()));
        for (size_t d : t.shape())
            write_u32(os, static_cast<uint32_t>(d));
        for (double v : t.values())
            write_f64(os, v);
    }
    write_file_atomic(path, os.str());
}

void ParameterStore::load(const std::filesystem::path& path, const std::string& prefix,
                          bool require_all) {
    std::ifstream is(path, std::ios::binary);
    if (!is)
        fail("cannot open checkpoint: " + path.string());
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "SSCK", 4) != 0)
        fail("bad checkpoint magic in " + path.string());
    uint32_t count = read_u32(is);
    std::map<std::string, std::pair<Shape, std::vector<double>>> entries;
    for (uint32_t i = 0; i < count; ++i) {
        uint32_t len = read_u32(is);
        std::string name(len, '\0');
        is.read(name.data(), len);
        uint32_t rank = read_u32(is);
        Shape shape(rank);
        size_t total = 1;
        for (uint32_t r = 0; r < rank; ++r) {
            shape[r] = read_u32(is);
            total *= shape[r];
        }
        std::vector<double> vals(total);
        for (auto& v : vals)
            v = read_f64(is);
        if (!is)
            fail("truncated checkpoint: " + path.string());
        entries.emplace(std::move(name), std::make_pair(std::move(shape), std::move(vals)));
    }
    for (auto& [name, t] : params_) {
        if (!prefix.empty() && name.rfind(prefix, 0) != 0)
            continue;
        auto it = entries.find(name);
        if (it == entries.end()) {
            if (require_all)
                fail("checkpoint missing parameter: " + name);
            continue;
        }
        if (it->second.first != t.shape())
            fail("checkpoint shape mismatch for " + name + ": file " +
                 shape_str(it->second.first) + " vs model " + shape_str(t.shape()));
        t.values() = it->second.second;
    }
}

void adam_step(ParameterStore& params, AdamState& state, double lr, double beta1,
               double beta2, double eps, double weight_decay) {
    state.step += 1;
    double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
    double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));
    for (auto& [name, t] : params.all()) {
        auto& mom = state.moments[name];
        size_t n = t.size();
        if (mom.m.size() != n) {
            mom.m.assign(n, 0.0);
            mom.v.assign(n, 0.0);
        }
        Tensor tt = t;  // map iteration yields const ref; tensors share nodes
        double* theta = tt.data();
        tt.node()->ensure_grad();
        const double* g = tt.node()->grad.data();
        for (size_t i = 0; i < n; ++i) {
            theta[i] -= lr * weight_decay * theta[i];
            mom.m[i] = beta1 * mom.m[i] + (1.0 - beta1) * g[i];
            mom.v[i] = beta2 * mom.v[i] + (1.0 - beta2) * g[i] * g[i];
            double mhat = mom.m[i] / bc1;
            double vhat = mom.v[i] / bc2;
            theta[i] -= lr * mhat / (std::sqrt(vhat) + eps);
        }
    }
}

}  // namespace seqsplat::ag
