#include "speakerprof/ops.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>

#include "speakerprof/errors.hpp"

namespace spkr::ad {
namespace {

template <typename Real>
TensorT<Real> record(Shape shape, std::vector<Real> value, const std::vector<const TensorT<Real> *> &inputs,
                     const char *op, BackwardFn<Real> fn) {
    auto node = std::make_shared<Node<Real>>();
    node->shape = std::move(shape);
    node->value = std::move(value);
    node->op = op;
    if (grad_enabled()) {
        const bool any = std::any_of(inputs.begin(), inputs.end(), [](const TensorT<Real> *t) { return t->requires_grad(); });
        if (any) {
            node->requires_grad = true;
            for (const auto *t : inputs) node->parents.push_back(t->node_ptr());
            node->backward = std::move(fn);
        }
    }
    return TensorT<Real>(std::move(node));
}

// Gradient buffer of parent i, or nullptr when that parent needs none.
template <typename Real>
Real *grad_of(Node<Real> &self, std::size_t i) {
    Node<Real> &p = *self.parents[i];
    return p.requires_grad ? p.ensure_grad().data() : nullptr;
}

void expect_rank(const Shape &s, std::size_t rank, const char *op, const char *what) {
    if (s.size() != rank)
        throw ShapeError(fmt::format("{}: {} must have rank {}, got {}", op, what, rank, shape_str(s)));
}

void expect_same(const Shape &a, const Shape &b, const char *op) {
    if (a != b) throw ShapeError(fmt::format("{}: shape mismatch {} vs {}", op, shape_str(a), shape_str(b)));
}

template <typename Real>
TensorT<Real> elementwise_binary(const TensorT<Real> &a, const TensorT<Real> &b, const char *op, int kind) {
    expect_same(a.shape(), b.shape(), op);
    const auto x = a.data();
    const auto y = b.data();
    std::vector<Real> out(x.size());
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = kind == 0 ? x[i] + y[i] : kind == 1 ? x[i] - y[i] : x[i] * y[i];
    return record<Real>(a.shape(), std::move(out), {&a, &b}, op, [kind](Node<Real> &self) {
        const auto &g = self.grad;
        const auto &xa = self.parents[0]->value;
        const auto &xb = self.parents[1]->value;
        if (Real *ga = grad_of(self, 0))
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += kind == 2 ? g[i] * xb[i] : g[i];
        if (Real *gb = grad_of(self, 1))
            for (std::size_t i = 0; i < g.size(); ++i) gb[i] += kind == 0 ? g[i] : kind == 1 ? -g[i] : g[i] * xa[i];
    });
}

}  // namespace

template <typename Real>
TensorT<Real> matmul(const TensorT<Real> &a, const TensorT<Real> &b) {
    expect_rank(a.shape(), 2, "matmul", "lhs");
    expect_rank(b.shape(), 2, "matmul", "rhs");
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    if (b.dim(0) != k)
        throw ShapeError(fmt::format("matmul: inner dimensions differ, {} vs {}", shape_str(a.shape()), shape_str(b.shape())));
    const Real *pa = a.data().data();
    const Real *pb = b.data().data();
    std::vector<Real> out(m * n, Real(0));
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
            const Real av = pa[i * k + p];
            const Real *brow = pb + p * n;
            Real *orow = out.data() + i * n;
            for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
        }
    return record<Real>({m, n}, std::move(out), {&a, &b}, "matmul", [m, k, n](Node<Real> &self) {
        const Real *g = self.grad.data();
        const Real *pa = self.parents[0]->value.data();
        const Real *pb = self.parents[1]->value.data();
        if (Real *ga = grad_of(self, 0))
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t p = 0; p < k; ++p) {
                    Real acc = 0;
                    for (std::size_t j = 0; j < n; ++j) acc += g[i * n + j] * pb[p * n + j];
                    ga[i * k + p] += acc;
                }
        if (Real *gb = grad_of(self, 1))
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t p = 0; p < k; ++p) {
                    const Real av = pa[i * k + p];
                    for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += av * g[i * n + j];
                }
    });
}

template <typename Real>
TensorT<Real> linear(const TensorT<Real> &x, const TensorT<Real> &weight, const TensorT<Real> &bias) {
    expect_rank(x.shape(), 2, "linear", "input");
    expect_rank(weight.shape(), 2, "linear", "weight");
    expect_rank(bias.shape(), 1, "linear", "bias");
    const std::size_t batch = x.dim(0), in = x.dim(1), out_dim = weight.dim(1);
    if (weight.dim(0) != in || bias.dim(0) != out_dim)
        throw ShapeError(fmt::format("linear: input {} incompatible with weight {} and bias {}", shape_str(x.shape()),
                                     shape_str(weight.shape()), shape_str(bias.shape())));
    const Real *px = x.data().data();
    const Real *pw = weight.data().data();
    const Real *pb = bias.data().data();
    std::vector<Real> out(batch * out_dim);
    for (std::size_t i = 0; i < batch; ++i) {
        Real *orow = out.data() + i * out_dim;
        std::copy(pb, pb + out_dim, orow);
        for (std::size_t p = 0; p < in; ++p) {
            const Real xv = px[i * in + p];
            const Real *wrow = pw + p * out_dim;
            for (std::size_t j = 0; j < out_dim; ++j) orow[j] += xv * wrow[j];
        }
    }
    return record<Real>({batch, out_dim}, std::move(out), {&x, &weight, &bias}, "linear",
                        [batch, in, out_dim](Node<Real> &self) {
                            const Real *g = self.grad.data();
                            const Real *px = self.parents[0]->value.data();
                            const Real *pw = self.parents[1]->value.data();
                            if (Real *gx = grad_of(self, 0))
                                for (std::size_t i = 0; i < batch; ++i)
                                    for (std::size_t p = 0; p < in; ++p) {
                                        Real acc = 0;
                                        for (std::size_t j = 0; j < out_dim; ++j)
                                            acc += g[i * out_dim + j] * pw[p * out_dim + j];
                                        gx[i * in + p] += acc;
                                    }
                            if (Real *gw = grad_of(self, 1))
                                for (std::size_t i = 0; i < batch; ++i)
                                    for (std::size_t p = 0; p < in; ++p) {
                                        const Real xv = px[i * in + p];
                                        for (std::size_t j = 0; j < out_dim; ++j)
                                            gw[p * out_dim + j] += xv * g[i * out_dim + j];
                                    }
                            if (Real *gb = grad_of(self, 2))
                                for (std::size_t i = 0; i < batch; ++i)
                                    for (std::size_t j = 0; j < out_dim; ++j) gb[j] += g[i * out_dim + j];
                        });
}

template <typename Real>
TensorT<Real> add(const TensorT<Real> &a, const TensorT<Real> &b) {
    return elementwise_binary(a, b, "add", 0);
}

template <typename Real>
TensorT<Real> sub(const TensorT<Real> &a, const TensorT<Real> &b) {
    return elementwise_binary(a, b, "sub", 1);
}

template <typename Real>
TensorT<Real> mul(const TensorT<Real> &a, const TensorT<Real> &b) {
    return elementwise_binary(a, b, "mul", 2);
}

template <typename Real>
TensorT<Real> scale(const TensorT<Real> &a, Real factor) {
    std::vector<Real> out(a.data().begin(), a.data().end());
    for (Real &v : out) v *= factor;
    return record<Real>(a.shape(), std::move(out), {&a}, "scale", [factor](Node<Real> &self) {
        if (Real *ga = grad_of(self, 0))
            for (std::size_t i = 0; i < self.grad.size(); ++i) ga[i] += self.grad[i] * factor;
    });
}

template <typename Real>
TensorT<Real> relu(const TensorT<Real> &x) {
    std::vector<Real> out(x.data().begin(), x.data().end());
    for (Real &v : out) v = v < Real(0) ? Real(0) : v;  // NaN passes through
    return record<Real>(x.shape(), std::move(out), {&x}, "relu", [](Node<Real> &self) {
        const auto &in = self.parents[0]->value;
        if (Real *gx = grad_of(self, 0))
            for (std::size_t i = 0; i < in.size(); ++i)
                if (in[i] > Real(0)) gx[i] += self.grad[i];
    });
}

template <typename Real>
TensorT<Real> sigmoid(const TensorT<Real> &x) {
    std::vector<Real> out(x.data().begin(), x.data().end());
    for (Real &v : out) v = Real(1) / (Real(1) + std::exp(-v));
    return record<Real>(x.shape(), std::move(out), {&x}, "sigmoid", [](Node<Real> &self) {
        if (Real *gx = grad_of(self, 0))
            for (std::size_t i = 0; i < self.value.size(); ++i) {
                const Real y = self.value[i];
                gx[i] += self.grad[i] * y * (Real(1) - y);
            }
    });
}

template <typename Real>
TensorT<Real> tanh(const TensorT<Real> &x) {
    std::vector<Real> out(x.data().begin(), x.data().end());
    for (Real &v : out) v = std::tanh(v);
    return record<Real>(x.shape(), std::move(out), {&x}, "tanh", [](Node<Real> &self) {
        if (Real *gx = grad_of(self, 0))
            for (std::size_t i = 0; i < self.value.size(); ++i) {
                const Real y = self.value[i];
                gx[i] += self.grad[i] * (Real(1) - y * y);
            }
    });
}

template <typename Real>
TensorT<Real> sum(const TensorT<Real> &x) {
    Real acc = 0;
    for (Real v : x.data()) acc += v;
    return record<Real>({1}, {acc}, {&x}, "sum", [](Node<Real> &self) {
        if (Real *gx = grad_of(self, 0))
            for (std::size_t i = 0; i < self.parents[0]->value.size(); ++i) gx[i] += self.grad[0];
    });
}

template <typename Real>
TensorT<Real> mean(const TensorT<Real> &x) {
    const auto n = static_cast<Real>(x.numel());
    Real acc = 0;
    for (Real v : x.data()) acc += v;
    return record<Real>({1}, {acc / n}, {&x}, "mean", [n](Node<Real> &self) {
        if (Real *gx = grad_of(self, 0))
            for (std::size_t i = 0; i < self.parents[0]->value.size(); ++i) gx[i] += self.grad[0] / n;
    });
}

template <typename Real>
TensorT<Real> conv1d(const TensorT<Real> &x, const TensorT<Real> &kernel, const TensorT<Real> &bias, std::size_t stride,
                     std::size_t padding) {
    expect_rank(x.shape(), 3, "conv1d", "input");
    expect_rank(kernel.shape(), 3, "conv1d", "kernel");
    expect_rank(bias.shape(), 1, "conv1d", "bias");
    const std::size_t batch = x.dim(0), cin = x.dim(1), len = x.dim(2);
    const std::size_t cout = kernel.dim(0), width = kernel.dim(2);
    if (kernel.dim(1) != cin || bias.dim(0) != cout)
        throw ShapeError(fmt::format("conv1d: input {} incompatible with kernel {} and bias {}", shape_str(x.shape()),
                                     shape_str(kernel.shape()), shape_str(bias.shape())));
    if (stride == 0) throw ShapeError("conv1d: stride must be positive");
    if (len + 2 * padding < width)
        throw ShapeError(fmt::format("conv1d: input {} shorter than kernel width {}", shape_str(x.shape()), width));
    const std::size_t out_len = (len + 2 * padding - width) / stride + 1;

    const Real *px = x.data().data();
    const Real *pk = kernel.data().data();
    const Real *pb = bias.data().data();
    std::vector<Real> out(batch * cout * out_len);
    for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t o = 0; o < cout; ++o) {
            Real *orow = out.data() + (b * cout + o) * out_len;
            std::fill(orow, orow + out_len, pb[o]);
            for (std::size_t c = 0; c < cin; ++c) {
                const Real *xrow = px + (b * cin + c) * len;
                const Real *krow = pk + (o * cin + c) * width;
                for (std::size_t t = 0; t < out_len; ++t) {
                    Real acc = 0;
                    for (std::size_t w = 0; w < width; ++w) {
                        const std::ptrdiff_t pos = static_cast<std::ptrdiff_t>(t * stride + w) -
                                                   static_cast<std::ptrdiff_t>(padding);
                        if (pos >= 0 && pos < static_cast<std::ptrdiff_t>(len)) acc += krow[w] * xrow[pos];
                    }
                    orow[t] += acc;
                }
            }
        }
    return record<Real>(
        {batch, cout, out_len}, std::move(out), {&x, &kernel, &bias}, "conv1d",
        [=](Node<Real> &self) {
            const Real *g = self.grad.data();
            const Real *px = self.parents[0]->value.data();
            const Real *pk = self.parents[1]->value.data();
            Real *gx = grad_of(self, 0);
            Real *gk = grad_of(self, 1);
            Real *gb = grad_of(self, 2);
            for (std::size_t b = 0; b < batch; ++b)
                for (std::size_t o = 0; o < cout; ++o) {
                    const Real *grow = g + (b * cout + o) * out_len;
                    if (gb)
                        for (std::size_t t = 0; t < out_len; ++t) gb[o] += grow[t];
                    for (std::size_t c = 0; c < cin; ++c) {
                        const std::size_t xoff = (b * cin + c) * len;
                        const std::size_t koff = (o * cin + c) * width;
                        for (std::size_t t = 0; t < out_len; ++t) {
                            for (std::size_t w = 0; w < width; ++w) {
                                const std::ptrdiff_t pos = static_cast<std::ptrdiff_t>(t * stride + w) -
                                                           static_cast<std::ptrdiff_t>(padding);
                                if (pos < 0 || pos >= static_cast<std::ptrdiff_t>(len)) continue;
                                if (gx) gx[xoff + pos] += grow[t] * pk[koff + w];
                                if (gk) gk[koff + w] += grow[t] * px[xoff + pos];
                            }
                        }
                    }
                }
        });
}

template <typename Real>
TensorT<Real> maxpool1d(const TensorT<Real> &x, std::size_t kernel, std::size_t stride) {
    expect_rank(x.shape(), 3, "maxpool1d", "input");
    const std::size_t batch = x.dim(0), channels = x.dim(1), len = x.dim(2);
    if (kernel == 0 || stride == 0) throw ShapeError("maxpool1d: kernel and stride must be positive");
    if (len < kernel)
        throw ShapeError(fmt::format("maxpool1d: input {} shorter than kernel {}", shape_str(x.shape()), kernel));
    const std::size_t out_len = (len - kernel) / stride + 1;
    const Real *px = x.data().data();
    std::vector<Real> out(batch * channels * out_len);
    std::vector<std::size_t> argmax(out.size());
    for (std::size_t row = 0; row < batch * channels; ++row)
        for (std::size_t t = 0; t < out_len; ++t) {
            std::size_t best = row * len + t * stride;
            for (std::size_t w = 1; w < kernel; ++w) {
                const std::size_t idx = row * len + t * stride + w;
                if (px[idx] > px[best]) best = idx;
            }
            out[row * out_len + t] = px[best];
            argmax[row * out_len + t] = best;
        }
    return record<Real>({batch, channels, out_len}, std::move(out), {&x}, "maxpool1d",
                        [argmax = std::move(argmax)](Node<Real> &self) {
                            if (Real *gx = grad_of(self, 0))
                                for (std::size_t i = 0; i < argmax.size(); ++i) gx[argmax[i]] += self.grad[i];
                        });
}

template <typename Real>
TensorT<Real> batchnorm1d(const TensorT<Real> &x, const TensorT<Real> &gamma, const TensorT<Real> &beta,
                          BatchNormStats<Real> &stats, bool training, Real momentum, Real eps) {
    expect_rank(x.shape(), 2, "batchnorm1d", "input");
    const std::size_t batch = x.dim(0), features = x.dim(1);
    if (gamma.shape() != Shape{features} || beta.shape() != Shape{features})
        throw ShapeError(fmt::format("batchnorm1d: input {} incompatible with gamma {} / beta {}", shape_str(x.shape()),
                                     shape_str(gamma.shape()), shape_str(beta.shape())));
    if (stats.running_mean.empty()) {
        stats.running_mean.assign(features, Real(0));
        stats.running_var.assign(features, Real(1));
    }
    if (stats.running_mean.size() != features || stats.running_var.size() != features)
        throw ShapeError("batchnorm1d: running statistics have the wrong width");
    if (batch == 0) throw ShapeError("batchnorm1d: empty batch");

    const Real *px = x.data().data();
    const Real *pg = gamma.data().data();
    const Real *pbeta = beta.data().data();
    std::vector<Real> inv_std(features), xhat(batch * features), out(batch * features);
    for (std::size_t f = 0; f < features; ++f) {
        Real mu, var;
        if (training) {
            Real acc = 0;
            for (std::size_t b = 0; b < batch; ++b) acc += px[b * features + f];
            mu = acc / static_cast<Real>(batch);
            Real sq = 0;
            for (std::size_t b = 0; b < batch; ++b) {
                const Real d = px[b * features + f] - mu;
                sq += d * d;
            }
            var = sq / static_cast<Real>(batch);
            stats.running_mean[f] = (Real(1) - momentum) * stats.running_mean[f] + momentum * mu;
            if (batch > 1)
                stats.running_var[f] = (Real(1) - momentum) * stats.running_var[f] +
                                       momentum * sq / static_cast<Real>(batch - 1);
        } else {
            mu = stats.running_mean[f];
            var = stats.running_var[f];
        }
        inv_std[f] = Real(1) / std::sqrt(var + eps);
        for (std::size_t b = 0; b < batch; ++b) {
            const std::size_t i = b * features + f;
            xhat[i] = (px[i] - mu) * inv_std[f];
            out[i] = pg[f] * xhat[i] + pbeta[f];
        }
    }
    return record<Real>(
        x.shape(), std::move(out), {&x, &gamma, &beta}, "batchnorm1d",
        [batch, features, training, inv_std = std::move(inv_std), xhat = std::move(xhat)](Node<Real> &self) {
            const Real *g = self.grad.data();
            const Real *pg = self.parents[1]->value.data();
            Real *gx = grad_of(self, 0);
            Real *ggamma = grad_of(self, 1);
            Real *gbeta = grad_of(self, 2);
            for (std::size_t f = 0; f < features; ++f) {
                Real sum_g = 0, sum_gx = 0;
                for (std::size_t b = 0; b < batch; ++b) {
                    const std::size_t i = b * features + f;
                    sum_g += g[i];
                    sum_gx += g[i] * xhat[i];
                }
                if (gbeta) gbeta[f] += sum_g;
                if (ggamma) ggamma[f] += sum_gx;
                if (!gx) continue;
                const Real n = static_cast<Real>(batch);
                for (std::size_t b = 0; b < batch; ++b) {
                    const std::size_t i = b * features + f;
                    if (training)
                        gx[i] += pg[f] * inv_std[f] * (g[i] - sum_g / n - xhat[i] * sum_gx / n);
                    else
                        gx[i] += pg[f] * inv_std[f] * g[i];
                }
            }
        });
}

template <typename Real>
TensorT<Real> dropout(const TensorT<Real> &x, double p, bool training, Rng &rng) {
    if (!(p >= 0.0 && p < 1.0)) throw ConfigError(fmt::format("dropout probability {} outside [0, 1)", p));
    if (!training || p == 0.0) return x;
    const Real keep_scale = static_cast<Real>(1.0 / (1.0 - p));
    std::vector<Real> mask(x.numel());
    for (Real &m : mask) m = rng.uniform() >= p ? keep_scale : Real(0);
    std::vector<Real> out(x.data().begin(), x.data().end());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= mask[i];
    return record<Real>(x.shape(), std::move(out), {&x}, "dropout", [mask = std::move(mask)](Node<Real> &self) {
        if (Real *gx = grad_of(self, 0))
            for (std::size_t i = 0; i < mask.size(); ++i) gx[i] += self.grad[i] * mask[i];
    });
}

template <typename Real>
std::vector<Real> softmax_rows(const TensorT<Real> &logits) {
    expect_rank(logits.shape(), 2, "softmax", "logits");
    const std::size_t batch = logits.dim(0), k = logits.dim(1);
    const Real *pl = logits.data().data();
    std::vector<Real> out(batch * k);
    for (std::size_t b = 0; b < batch; ++b) {
        const Real *row = pl + b * k;
        const Real peak = *std::max_element(row, row + k);
        double z = 0.0;
        for (std::size_t j = 0; j < k; ++j) z += std::exp(static_cast<double>(row[j] - peak));
        for (std::size_t j = 0; j < k; ++j) out[b * k + j] = static_cast<Real>(std::exp(static_cast<double>(row[j] - peak)) / z);
    }
    return out;
}

template <typename Real>
TensorT<Real> softmax_cross_entropy(const TensorT<Real> &logits, std::span<const std::size_t> targets) {
    expect_rank(logits.shape(), 2, "softmax_cross_entropy", "logits");
    const std::size_t batch = logits.dim(0), k = logits.dim(1);
    if (targets.size() != batch)
        throw ShapeError(fmt::format("softmax_cross_entropy: {} targets for logits {}", targets.size(), shape_str(logits.shape())));
    for (std::size_t t : targets)
        if (t >= k) throw ShapeError(fmt::format("softmax_cross_entropy: target {} out of range [0, {})", t, k));
    const Real *pl = logits.data().data();
    double total = 0.0;
    for (std::size_t b = 0; b < batch; ++b) {
        const Real *row = pl + b * k;
        const double peak = *std::max_element(row, row + k);
        double z = 0.0;
        for (std::size_t j = 0; j < k; ++j) z += std::exp(static_cast<double>(row[j]) - peak);
        total += peak + std::log(z) - static_cast<double>(row[targets[b]]);
    }
    std::vector<std::size_t> tgt(targets.begin(), targets.end());
    return record<Real>({1}, {static_cast<Real>(total / static_cast<double>(batch))}, {&logits}, "softmax_cross_entropy",
                        [batch, k, tgt = std::move(tgt)](Node<Real> &self) {
                            Real *gl = grad_of(self, 0);
                            if (!gl) return;
                            const Real *pl = self.parents[0]->value.data();
                            const double scale = static_cast<double>(self.grad[0]) / static_cast<double>(batch);
                            for (std::size_t b = 0; b < batch; ++b) {
                                const Real *row = pl + b * k;
                                const double peak = *std::max_element(row, row + k);
                                double z = 0.0;
                                for (std::size_t j = 0; j < k; ++j) z += std::exp(static_cast<double>(row[j]) - peak);
                                for (std::size_t j = 0; j < k; ++j) {
                                    const double p = std::exp(static_cast<double>(row[j]) - peak) / z;
                                    gl[b * k + j] += static_cast<Real>(scale * (p - (j == tgt[b] ? 1.0 : 0.0)));
                                }
                            }
                        });
}

namespace {

template <typename Real>
void check_regression(const TensorT<Real> &pred, std::span<const Real> targets, const char *op) {
    if (pred.rank() != 2 || pred.dim(1) != 1 || pred.dim(0) != targets.size())
        throw ShapeError(fmt::format("{}: prediction {} against {} targets", op, shape_str(pred.shape()), targets.size()));
}

}  // namespace

template <typename Real>
TensorT<Real> mse_loss(const TensorT<Real> &pred, std::span<const Real> targets) {
    check_regression(pred, targets, "mse_loss");
    const auto n = static_cast<Real>(targets.size());
    Real acc = 0;
    for (std::size_t i = 0; i < targets.size(); ++i) {
        const Real d = pred.data()[i] - targets[i];
        acc += d * d;
    }
    std::vector<Real> tgt(targets.begin(), targets.end());
    return record<Real>({1}, {acc / n}, {&pred}, "mse_loss", [n, tgt = std::move(tgt)](Node<Real> &self) {
        if (Real *gp = grad_of(self, 0))
            for (std::size_t i = 0; i < tgt.size(); ++i)
                gp[i] += self.grad[0] * Real(2) * (self.parents[0]->value[i] - tgt[i]) / n;
    });
}

template <typename Real>
TensorT<Real> l1_loss(const TensorT<Real> &pred, std::span<const Real> targets) {
    check_regression(pred, targets, "l1_loss");
    const auto n = static_cast<Real>(targets.size());
    Real acc = 0;
    for (std::size_t i = 0; i < targets.size(); ++i) acc += std::abs(pred.data()[i] - targets[i]);
    std::vector<Real> tgt(targets.begin(), targets.end());
    return record<Real>({1}, {acc / n}, {&pred}, "l1_loss", [n, tgt = std::move(tgt)](Node<Real> &self) {
        if (Real *gp = grad_of(self, 0))
            for (std::size_t i = 0; i < tgt.size(); ++i) {
                const Real d = self.parents[0]->value[i] - tgt[i];
                const Real sign = d > 0 ? Real(1) : d < 0 ? Real(-1) : Real(0);
                gp[i] += self.grad[0] * sign / n;
            }
    });
}

template <typename Real>
TensorT<Real> slice_cols(const TensorT<Real> &x, std::size_t begin, std::size_t end) {
    expect_rank(x.shape(), 2, "slice_cols", "input");
    const std::size_t rows = x.dim(0), cols = x.dim(1);
    if (begin >= end || end > cols)
        throw ShapeError(fmt::format("slice_cols: [{}, {}) out of range for {}", begin, end, shape_str(x.shape())));
    const std::size_t width = end - begin;
    std::vector<Real> out(rows * width);
    for (std::size_t r = 0; r < rows; ++r)
        std::copy_n(x.data().data() + r * cols + begin, width, out.data() + r * width);
    return record<Real>({rows, width}, std::move(out), {&x}, "slice_cols", [=](Node<Real> &self) {
        if (Real *gx = grad_of(self, 0))
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t j = 0; j < width; ++j) gx[r * cols + begin + j] += self.grad[r * width + j];
    });
}

template <typename Real>
TensorT<Real> time_step(const TensorT<Real> &x, std::size_t t) {
    expect_rank(x.shape(), 3, "time_step", "input");
    const std::size_t batch = x.dim(0), len = x.dim(1), width = x.dim(2);
    if (t >= len) throw ShapeError(fmt::format("time_step: step {} out of range for {}", t, shape_str(x.shape())));
    std::vector<Real> out(batch * width);
    for (std::size_t b = 0; b < batch; ++b)
        std::copy_n(x.data().data() + (b * len + t) * width, width, out.data() + b * width);
    return record<Real>({batch, width}, std::move(out), {&x}, "time_step", [=](Node<Real> &self) {
        if (Real *gx = grad_of(self, 0))
            for (std::size_t b = 0; b < batch; ++b)
                for (std::size_t j = 0; j < width; ++j) gx[(b * len + t) * width + j] += self.grad[b * width + j];
    });
}

template <typename Real>
TensorT<Real> stack_time(const std::vector<TensorT<Real>> &steps) {
    if (steps.empty()) throw ShapeError("stack_time: no steps");
    const Shape &first = steps.front().shape();
    expect_rank(first, 2, "stack_time", "step");
    const std::size_t batch = first[0], width = first[1], len = steps.size();
    std::vector<const TensorT<Real> *> inputs;
    std::vector<Real> out(batch * len * width);
    for (std::size_t t = 0; t < len; ++t) {
        expect_same(steps[t].shape(), first, "stack_time");
        inputs.push_back(&steps[t]);
        for (std::size_t b = 0; b < batch; ++b)
            std::copy_n(steps[t].data().data() + b * width, width, out.data() + (b * len + t) * width);
    }
    return record<Real>({batch, len, width}, std::move(out), inputs, "stack_time", [=](Node<Real> &self) {
        for (std::size_t t = 0; t < len; ++t)
            if (Real *gs = grad_of(self, t))
                for (std::size_t b = 0; b < batch; ++b)
                    for (std::size_t j = 0; j < width; ++j) gs[b * width + j] += self.grad[(b * len + t) * width + j];
    });
}

template <typename Real>
TensorT<Real> transpose12(const TensorT<Real> &x) {
    expect_rank(x.shape(), 3, "transpose12", "input");
    const std::size_t batch = x.dim(0), c = x.dim(1), len = x.dim(2);
    std::vector<Real> out(x.numel());
    const Real *px = x.data().data();
    for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t i = 0; i < c; ++i)
            for (std::size_t t = 0; t < len; ++t) out[(b * len + t) * c + i] = px[(b * c + i) * len + t];
    return record<Real>({batch, len, c}, std::move(out), {&x}, "transpose12", [=](Node<Real> &self) {
        if (Real *gx = grad_of(self, 0))
            for (std::size_t b = 0; b < batch; ++b)
                for (std::size_t i = 0; i < c; ++i)
                    for (std::size_t t = 0; t < len; ++t) gx[(b * c + i) * len + t] += self.grad[(b * len + t) * c + i];
    });
}

template <typename Real>
TensorT<Real> select_rows(const std::vector<bool> &keep, const TensorT<Real> &a, const TensorT<Real> &b) {
    expect_same(a.shape(), b.shape(), "select_rows");
    expect_rank(a.shape(), 2, "select_rows", "input");
    const std::size_t rows = a.dim(0), width = a.dim(1);
    if (keep.size() != rows) throw ShapeError("select_rows: mask length differs from batch");
    std::vector<Real> out(a.numel());
    for (std::size_t r = 0; r < rows; ++r)
        std::copy_n((keep[r] ? a : b).data().data() + r * width, width, out.data() + r * width);
    return record<Real>(a.shape(), std::move(out), {&a, &b}, "select_rows", [=](Node<Real> &self) {
        Real *ga = grad_of(self, 0);
        Real *gb = grad_of(self, 1);
        for (std::size_t r = 0; r < rows; ++r) {
            Real *dst = keep[r] ? ga : gb;
            if (!dst) continue;
            for (std::size_t j = 0; j < width; ++j) dst[r * width + j] += self.grad[r * width + j];
        }
    });
}

namespace {

void check_lengths(std::span<const std::size_t> lengths, std::size_t batch, std::size_t len, const char *op) {
    if (lengths.size() != batch)
        throw ShapeError(fmt::format("{}: {} lengths for a batch of {}", op, lengths.size(), batch));
    for (std::size_t l : lengths)
        if (l == 0 || l > len) throw ShapeError(fmt::format("{}: length {} outside [1, {}]", op, l, len));
}

}  // namespace

template <typename Real>
TensorT<Real> mask_time(const TensorT<Real> &x, std::span<const std::size_t> lengths) {
    expect_rank(x.shape(), 3, "mask_time", "input");
    const std::size_t batch = x.dim(0), c = x.dim(1), len = x.dim(2);
    check_lengths(lengths, batch, len, "mask_time");
    std::vector<std::size_t> lens(lengths.begin(), lengths.end());
    std::vector<Real> out(x.data().begin(), x.data().end());
    for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t i = 0; i < c; ++i)
            std::fill(out.begin() + static_cast<std::ptrdiff_t>((b * c + i) * len + lens[b]),
                      out.begin() + static_cast<std::ptrdiff_t>((b * c + i + 1) * len), Real(0));
    return record<Real>(x.shape(), std::move(out), {&x}, "mask_time", [=](Node<Real> &self) {
        if (Real *gx = grad_of(self, 0))
            for (std::size_t b = 0; b < batch; ++b)
                for (std::size_t i = 0; i < c; ++i)
                    for (std::size_t t = 0; t < lens[b]; ++t) gx[(b * c + i) * len + t] += self.grad[(b * c + i) * len + t];
    });
}

template <typename Real>
TensorT<Real> masked_mean_time(const TensorT<Real> &x, std::span<const std::size_t> lengths) {
    expect_rank(x.shape(), 3, "masked_mean_time", "input");
    const std::size_t batch = x.dim(0), c = x.dim(1), len = x.dim(2);
    check_lengths(lengths, batch, len, "masked_mean_time");
    std::vector<std::size_t> lens(lengths.begin(), lengths.end());
    std::vector<Real> out(batch * c);
    const Real *px = x.data().data();
    for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t i = 0; i < c; ++i) {
            Real acc = 0;
            for (std::size_t t = 0; t < lens[b]; ++t) acc += px[(b * c + i) * len + t];
            out[b * c + i] = acc / static_cast<Real>(lens[b]);
        }
    return record<Real>({batch, c}, std::move(out), {&x}, "masked_mean_time", [=](Node<Real> &self) {
        if (Real *gx = grad_of(self, 0))
            for (std::size_t b = 0; b < batch; ++b)
                for (std::size_t i = 0; i < c; ++i) {
                    const Real g = self.grad[b * c + i] / static_cast<Real>(lens[b]);
                    for (std::size_t t = 0; t < lens[b]; ++t) gx[(b * c + i) * len + t] += g;
                }
    });
}

template <typename Real>
LstmResult<Real> lstm_forward(const TensorT<Real> &x, std::span<const LstmLayer<Real>> layers,
                              std::span<const std::size_t> lengths) {
    expect_rank(x.shape(), 3, "lstm_forward", "input");
    if (layers.empty()) throw ShapeError("lstm_forward: no layers");
    const std::size_t batch = x.dim(0), len = x.dim(1);
    if (len == 0) throw ShapeError("lstm_forward: empty sequence");
    if (!lengths.empty()) check_lengths(lengths, batch, len, "lstm_forward");

    std::vector<TensorT<Real>> inputs;
    inputs.reserve(len);
    for (std::size_t t = 0; t < len; ++t) inputs.push_back(time_step(x, t));

    LstmResult<Real> result;
    std::size_t width = x.dim(2);
    for (const auto &layer : layers) {
        const std::size_t hidden = layer.hidden();
        if (layer.w_ih.shape() != Shape{width, 4 * hidden} || layer.w_hh.shape() != Shape{hidden, 4 * hidden} ||
            layer.bias.shape() != Shape{4 * hidden})
            throw ShapeError(fmt::format("lstm_forward: layer weights {} / {} / {} do not fit input width {}",
                                         shape_str(layer.w_ih.shape()), shape_str(layer.w_hh.shape()),
                                         shape_str(layer.bias.shape()), width));
        auto h = TensorT<Real>::zeros({batch, hidden});
        auto c = TensorT<Real>::zeros({batch, hidden});
        std::vector<TensorT<Real>> outputs;
        outputs.reserve(len);
        for (std::size_t t = 0; t < len; ++t) {
            auto gates = linear(inputs[t], layer.w_ih, layer.bias);
            // The initial state is zero, so the recurrent term vanishes at t = 0.
            if (t > 0) gates = add(gates, matmul(h, layer.w_hh));
            const auto in_gate = sigmoid(slice_cols(gates, 0, hidden));
            const auto forget_gate = sigmoid(slice_cols(gates, hidden, 2 * hidden));
            const auto cell_gate = tanh(slice_cols(gates, 2 * hidden, 3 * hidden));
            const auto out_gate = sigmoid(slice_cols(gates, 3 * hidden, 4 * hidden));
            auto c_next = add(mul(forget_gate, c), mul(in_gate, cell_gate));
            auto h_next = mul(out_gate, tanh(c_next));
            if (!lengths.empty()) {
                std::vector<bool> keep(batch);
                bool all = true;
                for (std::size_t b = 0; b < batch; ++b) {
                    keep[b] = t < lengths[b];
                    all = all && keep[b];
                }
                if (!all) {
                    c_next = select_rows(keep, c_next, c);
                    h_next = select_rows(keep, h_next, h);
                }
            }
            c = std::move(c_next);
            h = std::move(h_next);
            outputs.push_back(h);
        }
        inputs = std::move(outputs);
        width = hidden;
        result.h = h;
        result.c = c;
    }
    result.outputs = stack_time(inputs);
    return result;
}

#define SPKR_INSTANTIATE_OPS(Real)                                                                                    \
    template TensorT<Real> matmul(const TensorT<Real> &, const TensorT<Real> &);                                    \
    template TensorT<Real> linear(const TensorT<Real> &, const TensorT<Real> &, const TensorT<Real> &);             \
    template TensorT<Real> add(const TensorT<Real> &, const TensorT<Real> &);                                       \
    template TensorT<Real> sub(const TensorT<Real> &, const TensorT<Real> &);                                       \
    template TensorT<Real> mul(const TensorT<Real> &, const TensorT<Real> &);                                       \
    template TensorT<Real> scale(const TensorT<Real> &, Real);                                                      \
    template TensorT<Real> relu(const TensorT<Real> &);                                                             \
    template TensorT<Real> sigmoid(const TensorT<Real> &);                                                          \
    template TensorT<Real> tanh(const TensorT<Real> &);                                                             \
    template TensorT<Real> sum(const TensorT<Real> &);                                                              \
    template TensorT<Real> mean(const TensorT<Real> &);                                                             \
    template TensorT<Real> conv1d(const TensorT<Real> &, const TensorT<Real> &, const TensorT<Real> &, std::size_t, \
                                  std::size_t);                                                                     \
    template TensorT<Real> maxpool1d(const TensorT<Real> &, std::size_t, std::size_t);                              \
    template TensorT<Real> batchnorm1d(const TensorT<Real> &, const TensorT<Real> &, const TensorT<Real> &,         \
                                       BatchNormStats<Real> &, bool, Real, Real);                                   \
    template TensorT<Real> dropout(const TensorT<Real> &, double, bool, Rng &);                                     \
    template TensorT<Real> softmax_cross_entropy(const TensorT<Real> &, std::span<const std::size_t>);              \
    template std::vector<Real> softmax_rows(const TensorT<Real> &);                                                 \
    template TensorT<Real> mse_loss(const TensorT<Real> &, std::span<const Real>);                                  \
    template TensorT<Real> l1_loss(const TensorT<Real> &, std::span<const Real>);                                   \
    template TensorT<Real> slice_cols(const TensorT<Real> &, std::size_t, std::size_t);                             \
    template TensorT<Real> time_step(const TensorT<Real> &, std::size_t);                                           \
    template TensorT<Real> stack_time(const std::vector<TensorT<Real>> &);                                          \
    template TensorT<Real> transpose12(const TensorT<Real> &);                                                      \
    template TensorT<Real> select_rows(const std::vector<bool> &, const TensorT<Real> &, const TensorT<Real> &);    \
    template TensorT<Real> mask_time(const TensorT<Real> &, std::span<const std::size_t>);                          \
    template TensorT<Real> masked_mean_time(const TensorT<Real> &, std::span<const std::size_t>);                   \
    template LstmResult<Real> lstm_forward(const TensorT<Real> &, std::span<const LstmLayer<Real>>,                 \
                                           std::span<const std::size_t>);

SPKR_INSTANTIATE_OPS(float)
SPKR_INSTANTIATE_OPS(double)

}  // namespace spkr::ad
