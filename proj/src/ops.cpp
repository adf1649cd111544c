#include "hrt/ops.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

namespace hrt::ops {

namespace {

using MatR = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapR = Eigen::Map<MatR>;
using CMapR = Eigen::Map<const MatR>;
using detail::allocate;
using detail::Node;

using Index = std::int64_t;

void require(bool cond, const std::string& msg) {
    if (!cond) throw ShapeError(msg);
}

void require_same(const Tensor& a, const Tensor& b, const char* op) {
    require(a.shape() == b.shape(), std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                                        " vs " + shape_str(b.shape()));
}

int norm_axis(int axis, int rank, const char* op) {
    if (axis < 0) axis += rank;
    require(axis >= 0 && axis < rank, std::string(op) + ": axis out of range");
    return axis;
}

// Returns the parent's gradient buffer, or nullptr when it is not trainable.
double* grad_of(Node& self, std::size_t i) {
    Node& p = *self.parents[i];
    return p.requires_grad ? p.grad_buffer().data() : nullptr;
}

const double* data_of(Node& self, std::size_t i) { return self.parents[i]->data.data(); }

struct AxisSplit {
    Index outer = 1;
    Index len = 1;
    Index inner = 1;
};

AxisSplit split_at(const Shape& s, int axis) {
    AxisSplit r;
    for (int i = 0; i < axis; ++i) r.outer *= s[static_cast<std::size_t>(i)];
    r.len = s[static_cast<std::size_t>(axis)];
    for (std::size_t i = static_cast<std::size_t>(axis) + 1; i < s.size(); ++i) r.inner *= s[i];
    return r;
}

template <class F>
Tensor unary(const Tensor& x, const char* name, F forward_and_deriv) {
    const std::size_t n = x.numel();
    auto out = allocate(n);
    auto deriv = allocate(n);
    const auto xd = x.data();
    for (std::size_t i = 0; i < n; ++i) forward_and_deriv(xd[i], out[i], deriv[i]);
    check_finite(out, name);
    return make_result(x.shape(), std::move(out), {x}, [deriv = std::move(deriv)](Node& self) {
        double* gx = grad_of(self, 0);
        if (!gx) return;
        for (std::size_t i = 0; i < deriv.size(); ++i) gx[i] += self.grad[i] * deriv[i];
    });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    require_same(a, b, "add");
    auto out = allocate(a.numel());
    const auto ad = a.data(), bd = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] + bd[i];
    check_finite(out, "add");
    return make_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
        for (std::size_t p = 0; p < 2; ++p) {
            if (double* g = grad_of(self, p)) {
                for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
            }
        }
    });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same(a, b, "sub");
    auto out = allocate(a.numel());
    const auto ad = a.data(), bd = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] - bd[i];
    check_finite(out, "sub");
    return make_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
        if (double* g = grad_of(self, 0)) {
            for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
        }
        if (double* g = grad_of(self, 1)) {
            for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] -= self.grad[i];
        }
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same(a, b, "mul");
    auto out = allocate(a.numel());
    const auto ad = a.data(), bd = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] * bd[i];
    check_finite(out, "mul");
    return make_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
        const double* ad = data_of(self, 0);
        const double* bd = data_of(self, 1);
        if (double* g = grad_of(self, 0)) {
            for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * bd[i];
        }
        if (double* g = grad_of(self, 1)) {
            for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * ad[i];
        }
    });
}

Tensor div(const Tensor& a, const Tensor& b) {
    require_same(a, b, "div");
    auto out = allocate(a.numel());
    const auto ad = a.data(), bd = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] / bd[i];
    check_finite(out, "div");
    return make_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
        const double* bd = data_of(self, 1);
        if (double* g = grad_of(self, 0)) {
            for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] / bd[i];
        }
        if (double* g = grad_of(self, 1)) {
            for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] -= self.grad[i] * self.data[i] / bd[i];
        }
    });
}

Tensor scale(const Tensor& x, double s) {
    auto out = allocate(x.numel());
    const auto xd = x.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = xd[i] * s;
    check_finite(out, "scale");
    return make_result(x.shape(), std::move(out), {x}, [s](Node& self) {
        if (double* g = grad_of(self, 0)) {
            for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * s;
        }
    });
}

Tensor add_scalar(const Tensor& x, double s) {
    auto out = allocate(x.numel());
    const auto xd = x.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = xd[i] + s;
    check_finite(out, "add_scalar");
    return make_result(x.shape(), std::move(out), {x}, [](Node& self) {
        if (double* g = grad_of(self, 0)) {
            for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
        }
    });
}

Tensor sigmoid(const Tensor& x) {
    return unary(x, "sigmoid", [](double v, double& y, double& d) {
        y = v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
        d = y * (1.0 - y);
    });
}

Tensor relu(const Tensor& x) {
    return unary(x, "relu", [](double v, double& y, double& d) {
        y = v > 0 ? v : 0.0;
        d = v > 0 ? 1.0 : 0.0;
    });
}

Tensor gelu(const Tensor& x) {
    return unary(x, "gelu", [](double v, double& y, double& d) {
        constexpr double inv_sqrt2 = 0.70710678118654752440;
        const double cdf = 0.5 * (1.0 + std::erf(v * inv_sqrt2));
        const double pdf = std::exp(-0.5 * v * v) * 0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2;
        y = v * cdf;
        d = cdf + v * pdf;
    });
}

Tensor sum(const Tensor& x) {
    double s = 0.0;
    for (double v : x.data()) s += v;
    auto out = allocate(1, s);
    check_finite(out, "sum");
    return make_result({1}, std::move(out), {x}, [](Node& self) {
        if (double* g = grad_of(self, 0)) {
            const std::size_t n = self.parents[0]->data.size();
            for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[0];
        }
    });
}

Tensor mean(const Tensor& x) {
    return scale(sum(x), 1.0 / static_cast<double>(x.numel()));
}

Tensor sum_per_sample(const Tensor& x) {
    require(x.rank() >= 1, "sum_per_sample: rank must be >= 1");
    const Index b = x.dim(0);
    const Index per = static_cast<Index>(x.numel()) / b;
    auto out = allocate(static_cast<std::size_t>(b));
    const auto xd = x.data();
    for (Index i = 0; i < b; ++i) {
        double s = 0.0;
        for (Index j = 0; j < per; ++j) s += xd[static_cast<std::size_t>(i * per + j)];
        out[static_cast<std::size_t>(i)] = s;
    }
    check_finite(out, "sum_per_sample");
    return make_result({b, 1}, std::move(out), {x}, [b, per](Node& self) {
        if (double* g = grad_of(self, 0)) {
            for (Index i = 0; i < b; ++i)
                for (Index j = 0; j < per; ++j) g[i * per + j] += self.grad[static_cast<std::size_t>(i)];
        }
    });
}

Tensor mul_per_sample(const Tensor& x, const Tensor& s) {
    require(x.rank() >= 1 && s.shape() == Shape{x.dim(0), 1},
            "mul_per_sample: scale must have shape (B,1), got " + shape_str(s.shape()) + " for " +
                shape_str(x.shape()));
    const Index b = x.dim(0);
    const Index per = static_cast<Index>(x.numel()) / b;
    auto out = allocate(x.numel());
    const auto xd = x.data(), sd = s.data();
    for (Index i = 0; i < b; ++i)
        for (Index j = 0; j < per; ++j) out[i * per + j] = xd[i * per + j] * sd[i];
    check_finite(out, "mul_per_sample");
    return make_result(x.shape(), std::move(out), {x, s}, [b, per](Node& self) {
        const double* xd = data_of(self, 0);
        const double* sd = data_of(self, 1);
        if (double* g = grad_of(self, 0)) {
            for (Index i = 0; i < b; ++i)
                for (Index j = 0; j < per; ++j) g[i * per + j] += self.grad[i * per + j] * sd[i];
        }
        if (double* g = grad_of(self, 1)) {
            for (Index i = 0; i < b; ++i) {
                double acc = 0.0;
                for (Index j = 0; j < per; ++j) acc += self.grad[i * per + j] * xd[i * per + j];
                g[i] += acc;
            }
        }
    });
}

Tensor reshape(const Tensor& x, const Shape& shape) {
    require(numel_of(shape) == static_cast<Index>(x.numel()),
            "reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
    auto out = allocate(x.numel());
    std::copy(x.data().begin(), x.data().end(), out.begin());
    return make_result(shape, std::move(out), {x}, [](Node& self) {
        if (double* g = grad_of(self, 0)) {
            for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
        }
    });
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
    require(!parts.empty(), "concat: no inputs");
    const int rank = parts.front().rank();
    axis = norm_axis(axis, rank, "concat");
    Shape out_shape = parts.front().shape();
    out_shape[static_cast<std::size_t>(axis)] = 0;
    std::vector<Index> lens;
    for (const auto& p : parts) {
        require(p.rank() == rank, "concat: rank mismatch");
        for (int d = 0; d < rank; ++d) {
            if (d == axis) continue;
            require(p.dim(d) == parts.front().dim(d),
                    "concat: extent mismatch " + shape_str(p.shape()) + " vs " +
                        shape_str(parts.front().shape()));
        }
        lens.push_back(p.dim(axis));
        out_shape[static_cast<std::size_t>(axis)] += p.dim(axis);
    }
    const AxisSplit sp = split_at(out_shape, axis);
    auto out = allocate(static_cast<std::size_t>(numel_of(out_shape)));
    Index offset = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
        const auto pd = parts[k].data();
        const Index chunk = lens[k] * sp.inner;
        for (Index o = 0; o < sp.outer; ++o) {
            std::copy_n(pd.data() + o * chunk, chunk, out.data() + o * sp.len * sp.inner + offset);
        }
        offset += chunk;
    }
    return make_result(out_shape, std::move(out), parts, [sp, lens](Node& self) {
        Index offset = 0;
        for (std::size_t k = 0; k < lens.size(); ++k) {
            const Index chunk = lens[k] * sp.inner;
            if (double* g = grad_of(self, k)) {
                for (Index o = 0; o < sp.outer; ++o) {
                    const double* src = self.grad.data() + o * sp.len * sp.inner + offset;
                    for (Index i = 0; i < chunk; ++i) g[o * chunk + i] += src[i];
                }
            }
            offset += chunk;
        }
    });
}

Tensor slice(const Tensor& x, int axis, Index start, Index length) {
    axis = norm_axis(axis, x.rank(), "slice");
    require(start >= 0 && length >= 1 && start + length <= x.dim(axis), "slice: range out of bounds");
    const AxisSplit sp = split_at(x.shape(), axis);
    Shape out_shape = x.shape();
    out_shape[static_cast<std::size_t>(axis)] = length;
    auto out = allocate(static_cast<std::size_t>(numel_of(out_shape)));
    const auto xd = x.data();
    const Index chunk = length * sp.inner;
    for (Index o = 0; o < sp.outer; ++o) {
        std::copy_n(xd.data() + (o * sp.len + start) * sp.inner, chunk, out.data() + o * chunk);
    }
    return make_result(out_shape, std::move(out), {x}, [sp, start, chunk](Node& self) {
        if (double* g = grad_of(self, 0)) {
            for (Index o = 0; o < sp.outer; ++o) {
                double* dst = g + (o * sp.len + start) * sp.inner;
                for (Index i = 0; i < chunk; ++i) dst[i] += self.grad[o * chunk + i];
            }
        }
    });
}

Tensor mean_axis(const Tensor& x, int axis) {
    axis = norm_axis(axis, x.rank(), "mean_axis");
    const AxisSplit sp = split_at(x.shape(), axis);
    Shape out_shape = x.shape();
    out_shape[static_cast<std::size_t>(axis)] = 1;
    auto out = allocate(static_cast<std::size_t>(sp.outer * sp.inner));
    const auto xd = x.data();
    const double inv = 1.0 / static_cast<double>(sp.len);
    for (Index o = 0; o < sp.outer; ++o) {
        for (Index l = 0; l < sp.len; ++l) {
            const double* row = xd.data() + (o * sp.len + l) * sp.inner;
            double* dst = out.data() + o * sp.inner;
            for (Index i = 0; i < sp.inner; ++i) dst[i] += row[i];
        }
    }
    for (double& v : out) v *= inv;
    check_finite(out, "mean_axis");
    return make_result(out_shape, std::move(out), {x}, [sp, inv](Node& self) {
        if (double* g = grad_of(self, 0)) {
            for (Index o = 0; o < sp.outer; ++o)
                for (Index l = 0; l < sp.len; ++l)
                    for (Index i = 0; i < sp.inner; ++i)
                        g[(o * sp.len + l) * sp.inner + i] += self.grad[o * sp.inner + i] * inv;
        }
    });
}

Tensor softmax(const Tensor& x, int axis) {
    axis = norm_axis(axis, x.rank(), "softmax");
    const AxisSplit sp = split_at(x.shape(), axis);
    auto out = allocate(x.numel());
    const auto xd = x.data();
    for (Index o = 0; o < sp.outer; ++o) {
        for (Index i = 0; i < sp.inner; ++i) {
            const Index base = o * sp.len * sp.inner + i;
            double mx = xd[base];
            for (Index l = 1; l < sp.len; ++l) mx = std::max(mx, xd[base + l * sp.inner]);
            double z = 0.0;
            for (Index l = 0; l < sp.len; ++l) {
                const double e = std::exp(xd[base + l * sp.inner] - mx);
                out[base + l * sp.inner] = e;
                z += e;
            }
            for (Index l = 0; l < sp.len; ++l) out[base + l * sp.inner] /= z;
        }
    }
    check_finite(out, "softmax");
    return make_result(x.shape(), std::move(out), {x}, [sp](Node& self) {
        double* g = grad_of(self, 0);
        if (!g) return;
        const auto& y = self.data;
        for (Index o = 0; o < sp.outer; ++o) {
            for (Index i = 0; i < sp.inner; ++i) {
                const Index base = o * sp.len * sp.inner + i;
                double dot = 0.0;
                for (Index l = 0; l < sp.len; ++l) dot += self.grad[base + l * sp.inner] * y[base + l * sp.inner];
                for (Index l = 0; l < sp.len; ++l) {
                    const Index k = base + l * sp.inner;
                    g[k] += y[k] * (self.grad[k] - dot);
                }
            }
        }
    });
}

namespace {

struct ConvGeom {
    Index batch, cin, h, w, cout, kh, kw, stride, pad, ho, wo;
    Index k() const { return cin * kh * kw; }
    Index p() const { return ho * wo; }
    bool pointwise() const { return kh == 1 && kw == 1 && stride == 1 && pad == 0; }
};

void im2col(const double* x, const ConvGeom& g, double* col) {
    const Index p = g.p();
    for (Index c = 0; c < g.cin; ++c) {
        for (Index ky = 0; ky < g.kh; ++ky) {
            for (Index kx = 0; kx < g.kw; ++kx) {
                double* row = col + ((c * g.kh + ky) * g.kw + kx) * p;
                for (Index oy = 0; oy < g.ho; ++oy) {
                    const Index iy = oy * g.stride - g.pad + ky;
                    for (Index ox = 0; ox < g.wo; ++ox) {
                        const Index ix = ox * g.stride - g.pad + kx;
                        row[oy * g.wo + ox] = (iy >= 0 && iy < g.h && ix >= 0 && ix < g.w)
                                                  ? x[(c * g.h + iy) * g.w + ix]
                                                  : 0.0;
                    }
                }
            }
        }
    }
}

void col2im_add(const double* col, const ConvGeom& g, double* x) {
    const Index p = g.p();
    for (Index c = 0; c < g.cin; ++c) {
        for (Index ky = 0; ky < g.kh; ++ky) {
            for (Index kx = 0; kx < g.kw; ++kx) {
                const double* row = col + ((c * g.kh + ky) * g.kw + kx) * p;
                for (Index oy = 0; oy < g.ho; ++oy) {
                    const Index iy = oy * g.stride - g.pad + ky;
                    if (iy < 0 || iy >= g.h) continue;
                    for (Index ox = 0; ox < g.wo; ++ox) {
                        const Index ix = ox * g.stride - g.pad + kx;
                        if (ix >= 0 && ix < g.w) x[(c * g.h + iy) * g.w + ix] += row[oy * g.wo + ox];
                    }
                }
            }
        }
    }
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias, int stride, int padding) {
    require(input.rank() == 4, "conv2d: input must be (B,C,H,W), got " + shape_str(input.shape()));
    require(kernel.rank() == 4, "conv2d: kernel must be (Cout,Cin,kh,kw)");
    require(stride >= 1 && padding >= 0, "conv2d: stride must be >= 1 and padding >= 0");
    require(input.dim(1) == kernel.dim(1), "conv2d: input has " + std::to_string(input.dim(1)) +
                                               " channels but kernel expects " +
                                               std::to_string(kernel.dim(1)));
    ConvGeom g{input.dim(0), input.dim(1), input.dim(2), input.dim(3), kernel.dim(0), kernel.dim(2),
               kernel.dim(3), stride, padding, 0, 0};
    require(g.h + 2 * g.pad >= g.kh && g.w + 2 * g.pad >= g.kw, "conv2d: kernel larger than padded input");
    if (bias.defined()) require(bias.shape() == Shape{g.cout}, "conv2d: bias must have shape (Cout)");
    g.ho = (g.h + 2 * g.pad - g.kh) / g.stride + 1;
    g.wo = (g.w + 2 * g.pad - g.kw) / g.stride + 1;

    const Index k = g.k(), p = g.p();
    const Index in_per = g.cin * g.h * g.w, out_per = g.cout * p;
    auto out = allocate(static_cast<std::size_t>(g.batch * out_per));
    std::vector<double> cols;
    if (!g.pointwise()) cols = allocate(static_cast<std::size_t>(g.batch * k * p));
    const auto xd = input.data();
    CMapR wmat(kernel.data().data(), g.cout, k);
    for (Index b = 0; b < g.batch; ++b) {
        const double* colp = xd.data() + b * in_per;
        if (!g.pointwise()) {
            im2col(xd.data() + b * in_per, g, cols.data() + b * k * p);
            colp = cols.data() + b * k * p;
        }
        MapR o(out.data() + b * out_per, g.cout, p);
        o.noalias() = wmat * CMapR(colp, k, p);
        if (bias.defined()) {
            const auto bd = bias.data();
            for (Index c = 0; c < g.cout; ++c) o.row(c).array() += bd[static_cast<std::size_t>(c)];
        }
    }
    FlopCounter::add(2 * g.batch * g.cout * k * p);
    check_finite(out, "conv2d");
    const bool has_bias = bias.defined();
    std::vector<Tensor> parents{input, kernel};
    if (has_bias) parents.push_back(bias);
    return make_result({g.batch, g.cout, g.ho, g.wo}, std::move(out), parents,
                       [g, cols = std::move(cols), has_bias](Node& self) {
                           const Index k = g.k(), p = g.p();
                           const Index in_per = g.cin * g.h * g.w, out_per = g.cout * p;
                           double* gx = grad_of(self, 0);
                           double* gw = grad_of(self, 1);
                           double* gb = has_bias ? grad_of(self, 2) : nullptr;
                           const double* xd = data_of(self, 0);
                           CMapR wmat(data_of(self, 1), g.cout, k);
                           std::vector<double> dcol;
                           if (gx && !g.pointwise()) dcol = allocate(static_cast<std::size_t>(k * p));
                           for (Index b = 0; b < g.batch; ++b) {
                               CMapR go(self.grad.data() + b * out_per, g.cout, p);
                               const double* colp = g.pointwise() ? xd + b * in_per : cols.data() + b * k * p;
                               if (gw) MapR(gw, g.cout, k).noalias() += go * CMapR(colp, k, p).transpose();
                               if (gb) {
                                   for (Index c = 0; c < g.cout; ++c) gb[c] += go.row(c).sum();
                               }
                               if (gx) {
                                   if (g.pointwise()) {
                                       MapR(gx + b * in_per, k, p).noalias() += wmat.transpose() * go;
                                   } else {
                                       MapR(dcol.data(), k, p).noalias() = wmat.transpose() * go;
                                       col2im_add(dcol.data(), g, gx + b * in_per);
                                   }
                               }
                           }
                       });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
    require(weight.rank() == 2, "linear: weight must be (Dout, Din)");
    const Index din = weight.dim(1), dout = weight.dim(0);
    require(x.dim(-1) == din, "linear: input last axis " + std::to_string(x.dim(-1)) +
                                  " does not match weight Din " + std::to_string(din));
    if (bias.defined()) require(bias.shape() == Shape{dout}, "linear: bias must have shape (Dout)");
    const Index rows = static_cast<Index>(x.numel()) / din;
    Shape out_shape = x.shape();
    out_shape.back() = dout;
    auto out = allocate(static_cast<std::size_t>(rows * dout));
    MapR o(out.data(), rows, dout);
    o.noalias() = CMapR(x.data().data(), rows, din) * CMapR(weight.data().data(), dout, din).transpose();
    if (bias.defined()) {
        o.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(bias.data().data(), dout);
    }
    FlopCounter::add(2 * rows * din * dout);
    check_finite(out, "linear");
    const bool has_bias = bias.defined();
    std::vector<Tensor> parents{x, weight};
    if (has_bias) parents.push_back(bias);
    return make_result(out_shape, std::move(out), parents, [rows, din, dout, has_bias](Node& self) {
        CMapR go(self.grad.data(), rows, dout);
        if (double* gx = grad_of(self, 0)) {
            MapR(gx, rows, din).noalias() += go * CMapR(data_of(self, 1), dout, din);
        }
        if (double* gw = grad_of(self, 1)) {
            MapR(gw, dout, din).noalias() += go.transpose() * CMapR(data_of(self, 0), rows, din);
        }
        if (has_bias) {
            if (double* gb = grad_of(self, 2)) {
                Eigen::Map<Eigen::RowVectorXd>(gb, dout) += go.colwise().sum();
            }
        }
    });
}

Tensor global_avg_pool(const Tensor& x) {
    require(x.rank() == 4, "global_avg_pool: input must be (B,C,H,W)");
    const Index bc = x.dim(0) * x.dim(1);
    const Index hw = x.dim(2) * x.dim(3);
    auto out = allocate(static_cast<std::size_t>(bc));
    const auto xd = x.data();
    for (Index i = 0; i < bc; ++i) {
        double s = 0.0;
        for (Index j = 0; j < hw; ++j) s += xd[i * hw + j];
        out[i] = s / static_cast<double>(hw);
    }
    check_finite(out, "global_avg_pool");
    return make_result({x.dim(0), x.dim(1)}, std::move(out), {x}, [bc, hw](Node& self) {
        if (double* g = grad_of(self, 0)) {
            const double inv = 1.0 / static_cast<double>(hw);
            for (Index i = 0; i < bc; ++i)
                for (Index j = 0; j < hw; ++j) g[i * hw + j] += self.grad[i] * inv;
        }
    });
}

namespace {

struct Interp {
    std::vector<Index> lo, hi;
    std::vector<double> frac;
};

// align_corners=false source coordinates: (dst + 0.5) * in/out - 0.5, clamped at 0.
Interp interp_axis(Index in, Index out) {
    Interp r;
    r.lo.resize(static_cast<std::size_t>(out));
    r.hi.resize(static_cast<std::size_t>(out));
    r.frac.resize(static_cast<std::size_t>(out));
    const double s = static_cast<double>(in) / static_cast<double>(out);
    for (Index i = 0; i < out; ++i) {
        double src = (static_cast<double>(i) + 0.5) * s - 0.5;
        if (src < 0) src = 0;
        Index lo = static_cast<Index>(std::floor(src));
        if (lo > in - 1) lo = in - 1;
        const Index hi = std::min(lo + 1, in - 1);
        r.lo[i] = lo;
        r.hi[i] = hi;
        r.frac[i] = src - static_cast<double>(lo);
    }
    return r;
}

}  // namespace

Tensor bilinear_resize(const Tensor& x, Index out_h, Index out_w) {
    require(x.rank() == 4, "bilinear_resize: input must be (B,C,H,W)");
    require(out_h >= 1 && out_w >= 1, "bilinear_resize: output extents must be >= 1");
    const Index bc = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
    Shape out_shape{x.dim(0), x.dim(1), out_h, out_w};
    if (out_h == h && out_w == w) return reshape(x, out_shape);
    const Interp ry = interp_axis(h, out_h), rx = interp_axis(w, out_w);
    auto out = allocate(static_cast<std::size_t>(bc * out_h * out_w));
    const auto xd = x.data();
    for (Index c = 0; c < bc; ++c) {
        const double* src = xd.data() + c * h * w;
        double* dst = out.data() + c * out_h * out_w;
        for (Index oy = 0; oy < out_h; ++oy) {
            const double fy = ry.frac[oy];
            const double* r0 = src + ry.lo[oy] * w;
            const double* r1 = src + ry.hi[oy] * w;
            for (Index ox = 0; ox < out_w; ++ox) {
                const double fx = rx.frac[ox];
                const Index x0 = rx.lo[ox], x1 = rx.hi[ox];
                dst[oy * out_w + ox] = (1 - fy) * ((1 - fx) * r0[x0] + fx * r0[x1]) +
                                       fy * ((1 - fx) * r1[x0] + fx * r1[x1]);
            }
        }
    }
    check_finite(out, "bilinear_resize");
    return make_result(out_shape, std::move(out), {x}, [=](Node& self) {
        double* g = grad_of(self, 0);
        if (!g) return;
        for (Index c = 0; c < bc; ++c) {
            const double* go = self.grad.data() + c * out_h * out_w;
            double* gi = g + c * h * w;
            for (Index oy = 0; oy < out_h; ++oy) {
                const double fy = ry.frac[oy];
                for (Index ox = 0; ox < out_w; ++ox) {
                    const double fx = rx.frac[ox];
                    const double v = go[oy * out_w + ox];
                    gi[ry.lo[oy] * w + rx.lo[ox]] += v * (1 - fy) * (1 - fx);
                    gi[ry.lo[oy] * w + rx.hi[ox]] += v * (1 - fy) * fx;
                    gi[ry.hi[oy] * w + rx.lo[ox]] += v * fy * (1 - fx);
                    gi[ry.hi[oy] * w + rx.hi[ox]] += v * fy * fx;
                }
            }
        }
    });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
    const Index d = x.dim(-1);
    require(gamma.shape() == Shape{d} && beta.shape() == Shape{d},
            "layer_norm: gamma/beta must have shape (" + std::to_string(d) + ")");
    const Index rows = static_cast<Index>(x.numel()) / d;
    auto out = allocate(x.numel());
    auto xhat = allocate(x.numel());
    auto inv_std = allocate(static_cast<std::size_t>(rows));
    const auto xd = x.data(), gd = gamma.data(), bd = beta.data();
    for (Index r = 0; r < rows; ++r) {
        const double* xr = xd.data() + r * d;
        double mu = 0.0;
        for (Index i = 0; i < d; ++i) mu += xr[i];
        mu /= static_cast<double>(d);
        double var = 0.0;
        for (Index i = 0; i < d; ++i) var += (xr[i] - mu) * (xr[i] - mu);
        var /= static_cast<double>(d);
        const double is = 1.0 / std::sqrt(var + eps);
        inv_std[r] = is;
        for (Index i = 0; i < d; ++i) {
            const double xh = (xr[i] - mu) * is;
            xhat[r * d + i] = xh;
            out[r * d + i] = xh * gd[i] + bd[i];
        }
    }
    check_finite(out, "layer_norm");
    return make_result(x.shape(), std::move(out), {x, gamma, beta},
                       [rows, d, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
                           double* gx = grad_of(self, 0);
                           double* gg = grad_of(self, 1);
                           double* gb = grad_of(self, 2);
                           const double* gd = data_of(self, 1);
                           for (Index r = 0; r < rows; ++r) {
                               const double* go = self.grad.data() + r * d;
                               const double* xh = xhat.data() + r * d;
                               if (gg) for (Index i = 0; i < d; ++i) gg[i] += go[i] * xh[i];
                               if (gb) for (Index i = 0; i < d; ++i) gb[i] += go[i];
                               if (!gx) continue;
                               double m1 = 0.0, m2 = 0.0;
                               for (Index i = 0; i < d; ++i) {
                                   const double dxh = go[i] * gd[i];
                                   m1 += dxh;
                                   m2 += dxh * xh[i];
                               }
                               m1 /= static_cast<double>(d);
                               m2 /= static_cast<double>(d);
                               for (Index i = 0; i < d; ++i) {
                                   gx[r * d + i] += inv_std[r] * (go[i] * gd[i] - m1 - xh[i] * m2);
                               }
                           }
                       });
}

Tensor group_norm(const Tensor& x, int groups, const Tensor& gamma, const Tensor& beta, double eps) {
    require(x.rank() == 4, "group_norm: input must be (B,C,H,W)");
    const Index b = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
    require(groups >= 1 && c % groups == 0, "group_norm: channels must divide into groups");
    require(gamma.shape() == Shape{c} && beta.shape() == Shape{c}, "group_norm: gamma/beta must be (C)");
    const Index cpg = c / groups;
    const Index gsize = cpg * hw;
    auto out = allocate(x.numel());
    auto xhat = allocate(x.numel());
    auto inv_std = allocate(static_cast<std::size_t>(b * groups));
    const auto xd = x.data(), gd = gamma.data(), bd = beta.data();
    for (Index n = 0; n < b; ++n) {
        for (Index g = 0; g < groups; ++g) {
            const Index base = (n * c + g * cpg) * hw;
            double mu = 0.0;
            for (Index i = 0; i < gsize; ++i) mu += xd[base + i];
            mu /= static_cast<double>(gsize);
            double var = 0.0;
            for (Index i = 0; i < gsize; ++i) var += (xd[base + i] - mu) * (xd[base + i] - mu);
            var /= static_cast<double>(gsize);
            const double is = 1.0 / std::sqrt(var + eps);
            inv_std[n * groups + g] = is;
            for (Index i = 0; i < gsize; ++i) {
                const Index ch = g * cpg + i / hw;
                const double xh = (xd[base + i] - mu) * is;
                xhat[base + i] = xh;
                out[base + i] = xh * gd[ch] + bd[ch];
            }
        }
    }
    check_finite(out, "group_norm");
    return make_result(
        x.shape(), std::move(out), {x, gamma, beta},
        [b, c, hw, groups, cpg, gsize, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
            double* gx = grad_of(self, 0);
            double* gg = grad_of(self, 1);
            double* gb = grad_of(self, 2);
            const double* gd = data_of(self, 1);
            for (Index n = 0; n < b; ++n) {
                for (Index g = 0; g < groups; ++g) {
                    const Index base = (n * c + g * cpg) * hw;
                    double m1 = 0.0, m2 = 0.0;
                    for (Index i = 0; i < gsize; ++i) {
                        const Index ch = g * cpg + i / hw;
                        const double go = self.grad[base + i];
                        if (gg) gg[ch] += go * xhat[base + i];
                        if (gb) gb[ch] += go;
                        const double dxh = go * gd[ch];
                        m1 += dxh;
                        m2 += dxh * xhat[base + i];
                    }
                    if (!gx) continue;
                    m1 /= static_cast<double>(gsize);
                    m2 /= static_cast<double>(gsize);
                    const double is = inv_std[n * groups + g];
                    for (Index i = 0; i < gsize; ++i) {
                        const Index ch = g * cpg + i / hw;
                        gx[base + i] += is * (self.grad[base + i] * gd[ch] - m1 - xhat[base + i] * m2);
                    }
                }
            }
        });
}

Tensor to_tokens(const Tensor& x) {
    require(x.rank() == 4, "to_tokens: input must be (B,C,H,W)");
    const Index b = x.dim(0), c = x.dim(1), n = x.dim(2) * x.dim(3);
    auto out = allocate(x.numel());
    const auto xd = x.data();
    for (Index s = 0; s < b; ++s)
        for (Index ch = 0; ch < c; ++ch)
            for (Index t = 0; t < n; ++t) out[(s * n + t) * c + ch] = xd[(s * c + ch) * n + t];
    return make_result({b, n, c}, std::move(out), {x}, [b, c, n](Node& self) {
        if (double* g = grad_of(self, 0)) {
            for (Index s = 0; s < b; ++s)
                for (Index ch = 0; ch < c; ++ch)
                    for (Index t = 0; t < n; ++t) g[(s * c + ch) * n + t] += self.grad[(s * n + t) * c + ch];
        }
    });
}

Tensor from_tokens(const Tensor& tokens, Index h, Index w) {
    require(tokens.rank() == 3 && tokens.dim(1) == h * w,
            "from_tokens: expected (B," + std::to_string(h * w) + ",C), got " + shape_str(tokens.shape()));
    const Index b = tokens.dim(0), n = h * w, c = tokens.dim(2);
    auto out = allocate(tokens.numel());
    const auto td = tokens.data();
    for (Index s = 0; s < b; ++s)
        for (Index t = 0; t < n; ++t)
            for (Index ch = 0; ch < c; ++ch) out[(s * c + ch) * n + t] = td[(s * n + t) * c + ch];
    return make_result({b, c, h, w}, std::move(out), {tokens}, [b, c, n](Node& self) {
        if (double* g = grad_of(self, 0)) {
            for (Index s = 0; s < b; ++s)
                for (Index t = 0; t < n; ++t)
                    for (Index ch = 0; ch < c; ++ch) g[(s * n + t) * c + ch] += self.grad[(s * c + ch) * n + t];
        }
    });
}

Tensor coord_gate(const Tensor& f, const Tensor& gate_h, const Tensor& gate_w) {
    require(f.rank() == 4, "coord_gate: input must be (B,C,H,W)");
    const Index bc = f.dim(0) * f.dim(1), h = f.dim(2), w = f.dim(3);
    require(gate_h.shape() == Shape{f.dim(0), f.dim(1), h, 1}, "coord_gate: gate_h must be (B,C,H,1)");
    require(gate_w.shape() == Shape{f.dim(0), f.dim(1), 1, w}, "coord_gate: gate_w must be (B,C,1,W)");
    auto out = allocate(f.numel());
    const auto fd = f.data(), hd = gate_h.data(), wd = gate_w.data();
    for (Index c = 0; c < bc; ++c)
        for (Index y = 0; y < h; ++y)
            for (Index x = 0; x < w; ++x) {
                const Index i = (c * h + y) * w + x;
                out[i] = fd[i] * hd[c * h + y] * wd[c * w + x];
            }
    check_finite(out, "coord_gate");
    return make_result(f.shape(), std::move(out), {f, gate_h, gate_w}, [bc, h, w](Node& self) {
        const double* fd = data_of(self, 0);
        const double* hd = data_of(self, 1);
        const double* wd = data_of(self, 2);
        double* gf = grad_of(self, 0);
        double* gh = grad_of(self, 1);
        double* gw = grad_of(self, 2);
        for (Index c = 0; c < bc; ++c)
            for (Index y = 0; y < h; ++y)
                for (Index x = 0; x < w; ++x) {
                    const Index i = (c * h + y) * w + x;
                    const double go = self.grad[i];
                    if (gf) gf[i] += go * hd[c * h + y] * wd[c * w + x];
                    if (gh) gh[c * h + y] += go * fd[i] * wd[c * w + x];
                    if (gw) gw[c * w + x] += go * fd[i] * hd[c * h + y];
                }
    });
}

namespace {

// Token indices (raster order) of every window block.
std::vector<std::vector<Index>> window_blocks(Index h, Index w, int window) {
    const Index wy = std::min<Index>(window, h), wx = std::min<Index>(window, w);
    std::vector<std::vector<Index>> blocks;
    for (Index y0 = 0; y0 < h; y0 += wy) {
        for (Index x0 = 0; x0 < w; x0 += wx) {
            std::vector<Index> idx;
            for (Index y = y0; y < std::min(y0 + wy, h); ++y)
                for (Index x = x0; x < std::min(x0 + wx, w); ++x) idx.push_back(y * w + x);
            blocks.push_back(std::move(idx));
        }
    }
    return blocks;
}

// Copies the full C-channel rows of the listed tokens into a dense m x C block.
void gather_rows(const double* src, const std::vector<Index>& idx, Index c, double* dst) {
    for (std::size_t t = 0; t < idx.size(); ++t) std::copy_n(src + idx[t] * c, c, dst + t * c);
}

void scatter_add_rows(const double* src, const std::vector<Index>& idx, Index c, double* dst) {
    for (std::size_t t = 0; t < idx.size(); ++t) {
        const double* a = src + t * c;
        double* o = dst + idx[t] * c;
        for (Index j = 0; j < c; ++j) o[j] += a[j];
    }
}

void row_softmax(double* m, Index rows, Index cols) {
    MapR a(m, rows, cols);
    for (Index r = 0; r < rows; ++r) {
        auto row = a.row(r).array();
        row = (row - row.maxCoeff()).exp();
        row /= row.sum();
    }
}

}  // namespace

Tensor window_attention(const Tensor& q, const Tensor& k, const Tensor& v, Index h, Index w, int heads,
                        int window) {
    require_same(q, k, "window_attention");
    require_same(q, v, "window_attention");
    require(q.rank() == 3 && q.dim(1) == h * w, "window_attention: tokens must be (B,h*w,C)");
    require(heads >= 1 && q.dim(2) % heads == 0, "window_attention: channels not divisible by heads");
    require(window >= 1, "window_attention: window must be >= 1");
    const Index b = q.dim(0), n = h * w, c = q.dim(2), d = c / heads;
    const double sc = 1.0 / std::sqrt(static_cast<double>(d));
    auto blocks = window_blocks(h, w, window);
    auto out = allocate(q.numel());
    const auto qd = q.data(), kd = k.data(), vd = v.data();
    Index flops = 0;
    for (const auto& idx : blocks) {
        const Index m = static_cast<Index>(idx.size());
        MatR qw(m, c), kw(m, c), vw(m, c), ow(m, c), s(m, m);
        for (Index s_ = 0; s_ < b; ++s_) {
            gather_rows(qd.data() + s_ * n * c, idx, c, qw.data());
            gather_rows(kd.data() + s_ * n * c, idx, c, kw.data());
            gather_rows(vd.data() + s_ * n * c, idx, c, vw.data());
            for (int hd = 0; hd < heads; ++hd) {
                const Index off = hd * d;
                s.noalias() = (qw.middleCols(off, d) * kw.middleCols(off, d).transpose()) * sc;
                row_softmax(s.data(), m, m);
                ow.middleCols(off, d).noalias() = s * vw.middleCols(off, d);
            }
            for (Index t = 0; t < m; ++t) std::copy_n(ow.data() + t * c, c, out.data() + (s_ * n + idx[t]) * c);
        }
        flops += b * heads * 4 * m * m * d;
    }
    FlopCounter::add(flops);
    check_finite(out, "window_attention");
    return make_result(q.shape(), std::move(out), {q, k, v},
                       [b, n, c, d, heads, sc, blocks = std::move(blocks)](Node& self) {
                           const double* qd = data_of(self, 0);
                           const double* kd = data_of(self, 1);
                           const double* vd = data_of(self, 2);
                           double* gq = grad_of(self, 0);
                           double* gk = grad_of(self, 1);
                           double* gv = grad_of(self, 2);
                           for (const auto& idx : blocks) {
                               const Index m = static_cast<Index>(idx.size());
                               MatR qw(m, c), kw(m, c), vw(m, c), gow(m, c), p(m, m), dp(m, m);
                               MatR dq = MatR::Zero(m, c), dk = MatR::Zero(m, c), dv = MatR::Zero(m, c);
                               for (Index s_ = 0; s_ < b; ++s_) {
                                   const Index base = s_ * n * c;
                                   gather_rows(qd + base, idx, c, qw.data());
                                   gather_rows(kd + base, idx, c, kw.data());
                                   gather_rows(vd + base, idx, c, vw.data());
                                   gather_rows(self.grad.data() + base, idx, c, gow.data());
                                   for (int hd = 0; hd < heads; ++hd) {
                                       const Index off = hd * d;
                                       const auto qm = qw.middleCols(off, d);
                                       const auto km = kw.middleCols(off, d);
                                       const auto go = gow.middleCols(off, d);
                                       p.noalias() = (qm * km.transpose()) * sc;
                                       row_softmax(p.data(), m, m);
                                       if (gv) dv.middleCols(off, d).noalias() = p.transpose() * go;
                                       dp.noalias() = go * vw.middleCols(off, d).transpose();
                                       // dS = P * (dP - rowsum(dP * P))
                                       for (Index r = 0; r < m; ++r) {
                                           const double dot = dp.row(r).dot(p.row(r));
                                           dp.row(r).array() = p.row(r).array() * (dp.row(r).array() - dot);
                                       }
                                       if (gq) dq.middleCols(off, d).noalias() = (dp * km) * sc;
                                       if (gk) dk.middleCols(off, d).noalias() = (dp.transpose() * qm) * sc;
                                   }
                                   if (gq) scatter_add_rows(dq.data(), idx, c, gq + base);
                                   if (gk) scatter_add_rows(dk.data(), idx, c, gk + base);
                                   if (gv) scatter_add_rows(dv.data(), idx, c, gv + base);
                               }
                           }
                       });
}

Tensor efficient_attention(const Tensor& q, const Tensor& k, const Tensor& v, int heads) {
    require(q.rank() == 3 && k.rank() == 3 && v.rank() == 3, "efficient_attention: inputs must be (B,N,C)");
    require_same(k, v, "efficient_attention");
    require(q.dim(0) == k.dim(0) && q.dim(2) == k.dim(2), "efficient_attention: q and k/v disagree on B or C");
    require(heads >= 1 && q.dim(2) % heads == 0, "efficient_attention: channels not divisible by heads");
    const Index b = q.dim(0), nq = q.dim(1), nk = k.dim(1), c = q.dim(2), d = c / heads;

    // Normalised queries/keys are kept (B, N, C) for the backward pass.
    auto qs = allocate(q.numel());
    auto ks = allocate(k.numel());
    const auto qd = q.data(), kd = k.data(), vd = v.data();
    for (Index t = 0; t < b * nq; ++t) {
        for (int hd = 0; hd < heads; ++hd) {
            const Index off = t * c + hd * d;
            std::copy_n(qd.data() + off, d, qs.data() + off);
            row_softmax(qs.data() + off, 1, d);
        }
    }
    for (Index s = 0; s < b; ++s) {
        for (Index ch = 0; ch < c; ++ch) {
            double mx = kd[s * nk * c + ch];
            for (Index t = 1; t < nk; ++t) mx = std::max(mx, kd[(s * nk + t) * c + ch]);
            double z = 0.0;
            for (Index t = 0; t < nk; ++t) {
                const double e = std::exp(kd[(s * nk + t) * c + ch] - mx);
                ks[(s * nk + t) * c + ch] = e;
                z += e;
            }
            for (Index t = 0; t < nk; ++t) ks[(s * nk + t) * c + ch] /= z;
        }
    }
    // Context per (sample, head): d x d, stored (B, heads, d, d).
    auto ctx = allocate(static_cast<std::size_t>(b * heads * d * d));
    auto out = allocate(q.numel());
    using Strided = Eigen::Map<const MatR, 0, Eigen::OuterStride<>>;
    using StridedMut = Eigen::Map<MatR, 0, Eigen::OuterStride<>>;
    for (Index s = 0; s < b; ++s) {
        for (int hd = 0; hd < heads; ++hd) {
            Strided kh(ks.data() + s * nk * c + hd * d, nk, d, Eigen::OuterStride<>(c));
            Strided vh(vd.data() + s * nk * c + hd * d, nk, d, Eigen::OuterStride<>(c));
            Strided qh(qs.data() + s * nq * c + hd * d, nq, d, Eigen::OuterStride<>(c));
            MapR cx(ctx.data() + (s * heads + hd) * d * d, d, d);
            cx.noalias() = kh.transpose() * vh;
            StridedMut oh(out.data() + s * nq * c + hd * d, nq, d, Eigen::OuterStride<>(c));
            oh.noalias() = qh * cx;
        }
    }
    FlopCounter::add(2 * b * heads * d * d * (nq + nk));
    check_finite(out, "efficient_attention");
    return make_result(
        q.shape(), std::move(out), {q, k, v},
        [b, nq, nk, c, d, heads, qs = std::move(qs), ks = std::move(ks), ctx = std::move(ctx)](Node& self) {
            double* gq = grad_of(self, 0);
            double* gk = grad_of(self, 1);
            double* gv = grad_of(self, 2);
            const double* vd = data_of(self, 2);
            auto dqs = allocate(static_cast<std::size_t>(nq * d));
            auto dks = allocate(static_cast<std::size_t>(nk * d));
            auto dctx = allocate(static_cast<std::size_t>(d * d));
            for (Index s = 0; s < b; ++s) {
                for (int hd = 0; hd < heads; ++hd) {
                    const Index qoff = s * nq * c + hd * d;
                    const Index koff = s * nk * c + hd * d;
                    Strided go(self.grad.data() + qoff, nq, d, Eigen::OuterStride<>(c));
                    Strided qh(qs.data() + qoff, nq, d, Eigen::OuterStride<>(c));
                    Strided kh(ks.data() + koff, nk, d, Eigen::OuterStride<>(c));
                    Strided vh(vd + koff, nk, d, Eigen::OuterStride<>(c));
                    CMapR cx(ctx.data() + (s * heads + hd) * d * d, d, d);
                    MapR dc(dctx.data(), d, d);
                    dc.noalias() = qh.transpose() * go;
                    if (gv) StridedMut(gv + koff, nk, d, Eigen::OuterStride<>(c)).noalias() += kh * dc;
                    if (gq) {
                        MapR dq(dqs.data(), nq, d);
                        dq.noalias() = go * cx.transpose();
                        // Softmax over channels of each query row.
                        for (Index t = 0; t < nq; ++t) {
                            const double dot = dq.row(t).dot(qh.row(t));
                            for (Index j = 0; j < d; ++j) gq[qoff + t * c + j] += qh(t, j) * (dq(t, j) - dot);
                        }
                    }
                    if (gk) {
                        MapR dk(dks.data(), nk, d);
                        dk.noalias() = vh * dc.transpose();
                        // Softmax over tokens of each key column.
                        for (Index j = 0; j < d; ++j) {
                            const double dot = dk.col(j).dot(kh.col(j));
                            for (Index t = 0; t < nk; ++t) gk[koff + t * c + j] += kh(t, j) * (dk(t, j) - dot);
                        }
                    }
                }
            }
        });
}

Tensor add_position(const Tensor& tokens, const std::vector<double>& fixed, const Tensor& level_table,
                    const std::vector<int>& level_of) {
    require(tokens.rank() == 3, "add_position: tokens must be (B,N,D)");
    const Index b = tokens.dim(0), n = tokens.dim(1), d = tokens.dim(2);
    require(static_cast<Index>(fixed.size()) == n * d, "add_position: fixed embedding must be N*D");
    const bool use_level = level_table.defined();
    if (use_level) {
        require(level_table.rank() == 2 && level_table.dim(1) == d, "add_position: level table must be (L,D)");
        require(static_cast<Index>(level_of.size()) == n, "add_position: one level per token required");
        for (int l : level_of) require(l >= 0 && l < level_table.dim(0), "add_position: level index out of range");
    }
    auto out = allocate(tokens.numel());
    const auto td = tokens.data();
    for (Index s = 0; s < b; ++s)
        for (Index t = 0; t < n; ++t)
            for (Index j = 0; j < d; ++j) {
                double v = td[(s * n + t) * d + j] + fixed[t * d + j];
                if (use_level) v += level_table.data()[level_of[t] * d + j];
                out[(s * n + t) * d + j] = v;
            }
    check_finite(out, "add_position");
    std::vector<Tensor> parents{tokens};
    if (use_level) parents.push_back(level_table);
    return make_result(tokens.shape(), std::move(out), parents, [b, n, d, use_level, level_of](Node& self) {
        if (double* g = grad_of(self, 0)) {
            for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
        }
        if (use_level) {
            if (double* g = grad_of(self, 1)) {
                for (Index s = 0; s < b; ++s)
                    for (Index t = 0; t < n; ++t)
                        for (Index j = 0; j < d; ++j) g[level_of[t] * d + j] += self.grad[(s * n + t) * d + j];
            }
        }
    });
}

Tensor bce_with_logits(const Tensor& logits, const Tensor& target) {
    require_same(logits, target, "bce_with_logits");
    const std::size_t n = logits.numel();
    auto out = allocate(n);
    auto deriv = allocate(n);
    const auto xd = logits.data(), td = target.data();
    for (std::size_t i = 0; i < n; ++i) {
        const double x = xd[i];
        out[i] = std::max(x, 0.0) - x * td[i] + std::log1p(std::exp(-std::abs(x)));
        const double p = x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
        deriv[i] = p - td[i];
    }
    check_finite(out, "bce_with_logits");
    return make_result(logits.shape(), std::move(out), {logits}, [deriv = std::move(deriv)](Node& self) {
        if (double* g = grad_of(self, 0)) {
            for (std::size_t i = 0; i < deriv.size(); ++i) g[i] += self.grad[i] * deriv[i];
        }
    });
}

}  // namespace hrt::ops
