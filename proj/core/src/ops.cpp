#include "s3d/ops.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace s3d {

namespace {

using detail::TensorImpl;

void require(bool cond, const std::string& msg) {
    if (!cond) throw std::invalid_argument(msg);
}

void require_defined(const Tensor& t, const char* op, const char* arg) {
    if (!t.defined()) throw std::invalid_argument(std::string(op) + ": " + arg + " is an empty tensor");
}

void check_finite(const char* op, const std::vector<double>& v) {
    for (double x : v) {
        if (!std::isfinite(x))
            throw std::runtime_error(std::string(op) + ": produced a non-finite value");
    }
}

Tensor make_op(const char* op, std::vector<int> shape, std::vector<double> values,
               std::vector<Tensor> parents, std::function<void(TensorImpl&)> backward) {
    check_finite(op, values);
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = std::move(shape);
    impl->values = std::move(values);
    impl->op = op;
    bool needs = false;
    if (grad_enabled()) {
        for (const auto& p : parents)
            if (p.impl()->needs_grad) needs = true;
    }
    if (needs) {
        impl->needs_grad = true;
        impl->parents.reserve(parents.size());
        for (auto& p : parents) impl->parents.push_back(p.impl());
        impl->backward_fn = std::move(backward);
    }
    Tensor t;
    t.impl() = std::move(impl);
    return t;
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_defined(a, "matmul", "lhs");
    require_defined(b, "matmul", "rhs");
    require(a.shape().size() == 2 && b.shape().size() == 2,
            "matmul: expects 2-D tensors, got " + shape_to_string(a.shape()) + " x " + shape_to_string(b.shape()));
    const int M = a.shape()[0], K = a.shape()[1], K2 = b.shape()[0], N = b.shape()[1];
    require(K == K2, "matmul: inner dimensions disagree, " + shape_to_string(a.shape()) + " x " +
                         shape_to_string(b.shape()));
    std::vector<double> out(static_cast<size_t>(M) * N, 0.0);
    const double* av = a.values().data();
    const double* bv = b.values().data();
    for (int m = 0; m < M; ++m) {
        double* orow = &out[static_cast<size_t>(m) * N];
        const double* arow = &av[static_cast<size_t>(m) * K];
        for (int k = 0; k < K; ++k) {
            const double s = arow[k];
            const double* brow = &bv[static_cast<size_t>(k) * N];
            for (int n = 0; n < N; ++n) orow[n] += s * brow[n];
        }
    }
    return make_op("matmul", {M, N}, std::move(out), {a, b}, [M, K, N](TensorImpl& self) {
        TensorImpl* pa = self.parents[0].get();
        TensorImpl* pb = self.parents[1].get();
        const double* g = self.grad.data();
        if (pa->needs_grad) {
            double* da = pa->grad.data();
            const double* bv = pb->values.data();
            for (int m = 0; m < M; ++m) {
                const double* grow = &g[static_cast<size_t>(m) * N];
                double* darow = &da[static_cast<size_t>(m) * K];
                for (int k = 0; k < K; ++k) {
                    const double* brow = &bv[static_cast<size_t>(k) * N];
                    double acc = 0.0;
                    for (int n = 0; n < N; ++n) acc += grow[n] * brow[n];
                    darow[k] += acc;
                }
            }
        }
        if (pb->needs_grad) {
            double* db = pb->grad.data();
            const double* av = pa->values.data();
            for (int m = 0; m < M; ++m) {
                const double* grow = &g[static_cast<size_t>(m) * N];
                const double* arow = &av[static_cast<size_t>(m) * K];
                for (int k = 0; k < K; ++k) {
                    const double s = arow[k];
                    double* dbrow = &db[static_cast<size_t>(k) * N];
                    for (int n = 0; n < N; ++n) dbrow[n] += s * grow[n];
                }
            }
        }
    });
}

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, int pad) {
    require_defined(x, "conv2d", "input");
    require_defined(w, "conv2d", "kernel");
    require_defined(bias, "conv2d", "bias");
    require(x.shape().size() == 4, "conv2d: input must be [B,C,H,W], got " + shape_to_string(x.shape()));
    require(w.shape().size() == 4, "conv2d: kernel must be [O,C,kh,kw], got " + shape_to_string(w.shape()));
    require(pad >= 0, "conv2d: negative padding");
    const int B = x.shape()[0], C = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
    const int O = w.shape()[0], kh = w.shape()[2], kw = w.shape()[3];
    require(w.shape()[1] == C, "conv2d: channel mismatch, input " + shape_to_string(x.shape()) + " vs kernel " +
                                   shape_to_string(w.shape()));
    require(bias.shape().size() == 1 && bias.shape()[0] == O,
            "conv2d: bias must be [" + std::to_string(O) + "], got " + shape_to_string(bias.shape()));
    const int Ho = H + 2 * pad - kh + 1;
    const int Wo = W + 2 * pad - kw + 1;
    require(Ho > 0 && Wo > 0, "conv2d: kernel " + shape_to_string(w.shape()) + " larger than padded input " +
                                  shape_to_string(x.shape()));

    std::vector<double> out(static_cast<size_t>(B) * O * Ho * Wo);
    const double* xv = x.values().data();
    const double* wv = w.values().data();
    const double* bv = bias.values().data();
    for (int b = 0; b < B; ++b) {
        for (int o = 0; o < O; ++o) {
            double* plane = &out[(static_cast<size_t>(b) * O + o) * Ho * Wo];
            std::fill(plane, plane + static_cast<size_t>(Ho) * Wo, bv[o]);
            for (int c = 0; c < C; ++c) {
                const double* xchan = &xv[(static_cast<size_t>(b) * C + c) * H * W];
                const double* wchan = &wv[(static_cast<size_t>(o) * C + c) * kh * kw];
                for (int ky = 0; ky < kh; ++ky) {
                    const int oy0 = std::max(0, pad - ky);
                    const int oy1 = std::min(Ho, H + pad - ky);
                    for (int kx = 0; kx < kw; ++kx) {
                        const double wt = wchan[ky * kw + kx];
                        const int ox0 = std::max(0, pad - kx);
                        const int ox1 = std::min(Wo, W + pad - kx);
                        for (int oy = oy0; oy < oy1; ++oy) {
                            const double* xrow = &xchan[(oy + ky - pad) * W + (ox0 + kx - pad)];
                            double* yrow = &plane[oy * Wo + ox0];
                            for (int t = 0; t < ox1 - ox0; ++t) yrow[t] += wt * xrow[t];
                        }
                    }
                }
            }
        }
    }

    return make_op("conv2d", {B, O, Ho, Wo}, std::move(out), {x, w, bias},
                   [B, C, H, W, O, kh, kw, Ho, Wo, pad](TensorImpl& self) {
                       TensorImpl* px = self.parents[0].get();
                       TensorImpl* pw = self.parents[1].get();
                       TensorImpl* pb = self.parents[2].get();
                       const double* g = self.grad.data();
                       const double* xv = px->values.data();
                       const double* wv = pw->values.data();
                       if (pb->needs_grad) {
                           double* db = pb->grad.data();
                           for (int b = 0; b < B; ++b)
                               for (int o = 0; o < O; ++o) {
                                   const double* plane = &g[(static_cast<size_t>(b) * O + o) * Ho * Wo];
                                   double acc = 0.0;
                                   for (int i = 0; i < Ho * Wo; ++i) acc += plane[i];
                                   db[o] += acc;
                               }
                       }
                       for (int b = 0; b < B; ++b) {
                           for (int o = 0; o < O; ++o) {
                               const double* gplane = &g[(static_cast<size_t>(b) * O + o) * Ho * Wo];
                               for (int c = 0; c < C; ++c) {
                                   const double* xchan = &xv[(static_cast<size_t>(b) * C + c) * H * W];
                                   double* dxchan =
                                       px->needs_grad ? &px->grad[(static_cast<size_t>(b) * C + c) * H * W] : nullptr;
                                   const double* wchan = &wv[(static_cast<size_t>(o) * C + c) * kh * kw];
                                   double* dwchan =
                                       pw->needs_grad ? &pw->grad[(static_cast<size_t>(o) * C + c) * kh * kw] : nullptr;
                                   for (int ky = 0; ky < kh; ++ky) {
                                       const int oy0 = std::max(0, pad - ky);
                                       const int oy1 = std::min(Ho, H + pad - ky);
                                       for (int kx = 0; kx < kw; ++kx) {
                                           const int ox0 = std::max(0, pad - kx);
                                           const int ox1 = std::min(Wo, W + pad - kx);
                                           const int len = ox1 - ox0;
                                           const double wt = wchan[ky * kw + kx];
                                           double wacc = 0.0;
                                           for (int oy = oy0; oy < oy1; ++oy) {
                                               const double* grow = &gplane[oy * Wo + ox0];
                                               const size_t xoff =
                                                   static_cast<size_t>(oy + ky - pad) * W + (ox0 + kx - pad);
                                               if (px->needs_grad) {
                                                   double* dxrow = &dxchan[xoff];
                                                   for (int t = 0; t < len; ++t) dxrow[t] += wt * grow[t];
                                               }
                                               if (pw->needs_grad) {
                                                   const double* xrow = &xchan[xoff];
                                                   for (int t = 0; t < len; ++t) wacc += grow[t] * xrow[t];
                                               }
                                           }
                                           if (pw->needs_grad) dwchan[ky * kw + kx] += wacc;
                                       }
                                   }
                               }
                           }
                       }
                   });
}

Tensor avgpool2x2(const Tensor& x) {
    require_defined(x, "avgpool2x2", "input");
    require(x.shape().size() == 4, "avgpool2x2: input must be [B,C,H,W], got " + shape_to_string(x.shape()));
    const int B = x.shape()[0], C = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
    require(H % 2 == 0 && W % 2 == 0, "avgpool2x2: spatial dims must be even, got " + shape_to_string(x.shape()));
    const int Ho = H / 2, Wo = W / 2;
    std::vector<double> out(static_cast<size_t>(B) * C * Ho * Wo);
    const double* xv = x.values().data();
    for (int p = 0; p < B * C; ++p) {
        const double* xplane = &xv[static_cast<size_t>(p) * H * W];
        double* oplane = &out[static_cast<size_t>(p) * Ho * Wo];
        for (int oy = 0; oy < Ho; ++oy) {
            const double* r0 = &xplane[(2 * oy) * W];
            const double* r1 = &xplane[(2 * oy + 1) * W];
            for (int ox = 0; ox < Wo; ++ox)
                oplane[oy * Wo + ox] = 0.25 * (r0[2 * ox] + r0[2 * ox + 1] + r1[2 * ox] + r1[2 * ox + 1]);
        }
    }
    return make_op("avgpool2x2", {B, C, Ho, Wo}, std::move(out), {x}, [B, C, H, W, Ho, Wo](TensorImpl& self) {
        TensorImpl* px = self.parents[0].get();
        if (!px->needs_grad) return;
        const double* g = self.grad.data();
        for (int p = 0; p < B * C; ++p) {
            double* dxplane = &px->grad[static_cast<size_t>(p) * H * W];
            const double* gplane = &g[static_cast<size_t>(p) * Ho * Wo];
            for (int oy = 0; oy < Ho; ++oy)
                for (int ox = 0; ox < Wo; ++ox) {
                    const double v = 0.25 * gplane[oy * Wo + ox];
                    dxplane[(2 * oy) * W + 2 * ox] += v;
                    dxplane[(2 * oy) * W + 2 * ox + 1] += v;
                    dxplane[(2 * oy + 1) * W + 2 * ox] += v;
                    dxplane[(2 * oy + 1) * W + 2 * ox + 1] += v;
                }
        }
    });
}

Tensor relu(const Tensor& x) {
    require_defined(x, "relu", "input");
    std::vector<double> out(x.values().begin(), x.values().end());
    for (double& v : out) v = v > 0.0 ? v : 0.0;
    return make_op("relu", x.shape(), std::move(out), {x}, [](TensorImpl& self) {
        TensorImpl* px = self.parents[0].get();
        if (!px->needs_grad) return;
        const double* g = self.grad.data();
        const double* xv = px->values.data();
        double* dx = px->grad.data();
        const int64_t n = self.numel();
        for (int64_t i = 0; i < n; ++i)
            if (xv[i] > 0.0) dx[i] += g[i];
    });
}

namespace {

enum class EwKind { Add, Sub, Mul, Div };

Tensor elementwise(const char* op, EwKind kind, const Tensor& a, const Tensor& b) {
    require_defined(a, op, "lhs");
    require_defined(b, op, "rhs");
    require(a.shape() == b.shape(), std::string(op) + ": shape mismatch " + shape_to_string(a.shape()) + " vs " +
                                        shape_to_string(b.shape()));
    const int64_t n = a.numel();
    std::vector<double> out(n);
    const double* av = a.values().data();
    const double* bv = b.values().data();
    switch (kind) {
        case EwKind::Add:
            for (int64_t i = 0; i < n; ++i) out[i] = av[i] + bv[i];
            break;
        case EwKind::Sub:
            for (int64_t i = 0; i < n; ++i) out[i] = av[i] - bv[i];
            break;
        case EwKind::Mul:
            for (int64_t i = 0; i < n; ++i) out[i] = av[i] * bv[i];
            break;
        case EwKind::Div:
            for (int64_t i = 0; i < n; ++i) {
                if (bv[i] == 0.0) throw std::invalid_argument("div: zero denominator at flat index " + std::to_string(i));
                out[i] = av[i] / bv[i];
            }
            break;
    }
    return make_op(op, a.shape(), std::move(out), {a, b}, [kind](TensorImpl& self) {
        TensorImpl* pa = self.parents[0].get();
        TensorImpl* pb = self.parents[1].get();
        const double* g = self.grad.data();
        const double* av = pa->values.data();
        const double* bv = pb->values.data();
        const int64_t n = self.numel();
        switch (kind) {
            case EwKind::Add:
                if (pa->needs_grad)
                    for (int64_t i = 0; i < n; ++i) pa->grad[i] += g[i];
                if (pb->needs_grad)
                    for (int64_t i = 0; i < n; ++i) pb->grad[i] += g[i];
                break;
            case EwKind::Sub:
                if (pa->needs_grad)
                    for (int64_t i = 0; i < n; ++i) pa->grad[i] += g[i];
                if (pb->needs_grad)
                    for (int64_t i = 0; i < n; ++i) pb->grad[i] -= g[i];
                break;
            case EwKind::Mul:
                if (pa->needs_grad)
                    for (int64_t i = 0; i < n; ++i) pa->grad[i] += g[i] * bv[i];
                if (pb->needs_grad)
                    for (int64_t i = 0; i < n; ++i) pb->grad[i] += g[i] * av[i];
                break;
            case EwKind::Div:
                if (pa->needs_grad)
                    for (int64_t i = 0; i < n; ++i) pa->grad[i] += g[i] / bv[i];
                if (pb->needs_grad)
                    for (int64_t i = 0; i < n; ++i) pb->grad[i] -= g[i] * av[i] / (bv[i] * bv[i]);
                break;
        }
    });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    require_defined(a, "add", "lhs");
    require_defined(b, "add", "rhs");
    if (a.shape() == b.shape()) return elementwise("add", EwKind::Add, a, b);
    // Row broadcast: a [..., N] + b [N].
    require(b.shape().size() == 1 && !a.shape().empty() && a.shape().back() == b.shape()[0],
            "add: shapes are not broadcastable, " + shape_to_string(a.shape()) + " vs " + shape_to_string(b.shape()));
    const int N = b.shape()[0];
    const int64_t rows = a.numel() / N;
    std::vector<double> out(a.numel());
    const double* av = a.values().data();
    const double* bv = b.values().data();
    for (int64_t r = 0; r < rows; ++r)
        for (int j = 0; j < N; ++j) out[r * N + j] = av[r * N + j] + bv[j];
    return make_op("add", a.shape(), std::move(out), {a, b}, [N, rows](TensorImpl& self) {
        TensorImpl* pa = self.parents[0].get();
        TensorImpl* pb = self.parents[1].get();
        const double* g = self.grad.data();
        if (pa->needs_grad) {
            const int64_t n = self.numel();
            for (int64_t i = 0; i < n; ++i) pa->grad[i] += g[i];
        }
        if (pb->needs_grad) {
            for (int64_t r = 0; r < rows; ++r)
                for (int j = 0; j < N; ++j) pb->grad[j] += g[r * N + j];
        }
    });
}

Tensor sub(const Tensor& a, const Tensor& b) { return elementwise("sub", EwKind::Sub, a, b); }
Tensor mul(const Tensor& a, const Tensor& b) { return elementwise("mul", EwKind::Mul, a, b); }
Tensor div(const Tensor& a, const Tensor& b) { return elementwise("div", EwKind::Div, a, b); }

Tensor scalar_mul(const Tensor& a, double c) {
    require_defined(a, "scalar_mul", "input");
    std::vector<double> out(a.values().begin(), a.values().end());
    for (double& v : out) v *= c;
    return make_op("scalar_mul", a.shape(), std::move(out), {a}, [c](TensorImpl& self) {
        TensorImpl* pa = self.parents[0].get();
        if (!pa->needs_grad) return;
        const double* g = self.grad.data();
        const int64_t n = self.numel();
        for (int64_t i = 0; i < n; ++i) pa->grad[i] += c * g[i];
    });
}

namespace {

void check_bchw(const Tensor& x, const char* op) {
    require_defined(x, op, "input");
    require(x.shape().size() == 4, std::string(op) + ": input must be [B,C,H,W], got " + shape_to_string(x.shape()));
    require(x.shape()[2] * x.shape()[3] > 0, std::string(op) + ": empty spatial extent in " + shape_to_string(x.shape()));
}

}  // namespace

Tensor channel_mean(const Tensor& x) {
    check_bchw(x, "channel_mean");
    const int B = x.shape()[0], C = x.shape()[1], HW = x.shape()[2] * x.shape()[3];
    std::vector<double> out(static_cast<size_t>(B) * C);
    const double* xv = x.values().data();
    for (int p = 0; p < B * C; ++p) {
        const double* plane = &xv[static_cast<size_t>(p) * HW];
        double acc = 0.0;
        for (int i = 0; i < HW; ++i) acc += plane[i];
        out[p] = acc / HW;
    }
    return make_op("channel_mean", {B, C}, std::move(out), {x}, [B, C, HW](TensorImpl& self) {
        TensorImpl* px = self.parents[0].get();
        if (!px->needs_grad) return;
        const double* g = self.grad.data();
        for (int p = 0; p < B * C; ++p) {
            const double v = g[p] / HW;
            double* dxplane = &px->grad[static_cast<size_t>(p) * HW];
            for (int i = 0; i < HW; ++i) dxplane[i] += v;
        }
    });
}

Tensor channel_std(const Tensor& x) {
    check_bchw(x, "channel_std");
    const int B = x.shape()[0], C = x.shape()[1], HW = x.shape()[2] * x.shape()[3];
    std::vector<double> out(static_cast<size_t>(B) * C);
    const double* xv = x.values().data();
    for (int p = 0; p < B * C; ++p) {
        const double* plane = &xv[static_cast<size_t>(p) * HW];
        double m = 0.0;
        for (int i = 0; i < HW; ++i) m += plane[i];
        m /= HW;
        double s = 0.0;
        for (int i = 0; i < HW; ++i) {
            const double d = plane[i] - m;
            s += d * d;
        }
        out[p] = std::sqrt(s / HW);
    }
    return make_op("channel_std", {B, C}, std::move(out), {x}, [B, C, HW](TensorImpl& self) {
        TensorImpl* px = self.parents[0].get();
        if (!px->needs_grad) return;
        const double* g = self.grad.data();
        const double* xv = px->values.data();
        for (int p = 0; p < B * C; ++p) {
            const double sigma = self.values[p];
            if (sigma == 0.0) continue;  // constant channel: flat at the minimum
            const double* plane = &xv[static_cast<size_t>(p) * HW];
            double m = 0.0;
            for (int i = 0; i < HW; ++i) m += plane[i];
            m /= HW;
            const double scale = g[p] / (HW * sigma);
            double* dxplane = &px->grad[static_cast<size_t>(p) * HW];
            for (int i = 0; i < HW; ++i) dxplane[i] += scale * (plane[i] - m);
        }
    });
}

Tensor l2_normalize(const Tensor& x, int axis) {
    require_defined(x, "l2_normalize", "input");
    require(x.shape().size() == 2, "l2_normalize: input must be 2-D, got " + shape_to_string(x.shape()));
    require(axis == 0 || axis == 1, "l2_normalize: axis must be 0 or 1, got " + std::to_string(axis));
    const int R = x.shape()[0], C = x.shape()[1];
    const int nvec = axis == 1 ? R : C;
    const int len = axis == 1 ? C : R;
    const int stride = axis == 1 ? 1 : C;
    const int base_stride = axis == 1 ? C : 1;
    std::vector<double> out(x.numel());
    const double* xv = x.values().data();
    for (int v = 0; v < nvec; ++v) {
        const double* src = &xv[static_cast<size_t>(v) * base_stride];
        double* dst = &out[static_cast<size_t>(v) * base_stride];
        double sq = 0.0;
        for (int i = 0; i < len; ++i) {
            const double t = src[i * stride];
            sq += t * t;
        }
        const double norm = std::max(std::sqrt(sq), kNormEpsilon);
        for (int i = 0; i < len; ++i) dst[i * stride] = src[i * stride] / norm;
    }
    return make_op("l2_normalize", x.shape(), std::move(out), {x},
                   [nvec, len, stride, base_stride](TensorImpl& self) {
                       TensorImpl* px = self.parents[0].get();
                       if (!px->needs_grad) return;
                       const double* g = self.grad.data();
                       const double* xv = px->values.data();
                       const double* yv = self.values.data();
                       for (int v = 0; v < nvec; ++v) {
                           const size_t off = static_cast<size_t>(v) * base_stride;
                           double sq = 0.0;
                           for (int i = 0; i < len; ++i) {
                               const double t = xv[off + i * stride];
                               sq += t * t;
                           }
                           const double raw = std::sqrt(sq);
                           const double norm = std::max(raw, kNormEpsilon);
                           if (raw < kNormEpsilon) {
                               // Inside the floor the map is linear: y = x / eps.
                               for (int i = 0; i < len; ++i) px->grad[off + i * stride] += g[off + i * stride] / norm;
                               continue;
                           }
                           double dot = 0.0;
                           for (int i = 0; i < len; ++i) dot += g[off + i * stride] * yv[off + i * stride];
                           for (int i = 0; i < len; ++i)
                               px->grad[off + i * stride] +=
                                   (g[off + i * stride] - yv[off + i * stride] * dot) / norm;
                       }
                   });
}

Tensor softmax_rows(const Tensor& x) {
    require_defined(x, "softmax", "input");
    require(x.shape().size() == 2, "softmax: input must be 2-D, got " + shape_to_string(x.shape()));
    const int R = x.shape()[0], C = x.shape()[1];
    std::vector<double> out(x.numel());
    const double* xv = x.values().data();
    for (int r = 0; r < R; ++r) {
        const double* src = &xv[static_cast<size_t>(r) * C];
        double* dst = &out[static_cast<size_t>(r) * C];
        double mx = src[0];
        for (int j = 1; j < C; ++j) mx = std::max(mx, src[j]);
        double z = 0.0;
        for (int j = 0; j < C; ++j) {
            dst[j] = std::exp(src[j] - mx);
            z += dst[j];
        }
        for (int j = 0; j < C; ++j) dst[j] /= z;
    }
    return make_op("softmax", x.shape(), std::move(out), {x}, [R, C](TensorImpl& self) {
        TensorImpl* px = self.parents[0].get();
        if (!px->needs_grad) return;
        const double* g = self.grad.data();
        const double* p = self.values.data();
        for (int r = 0; r < R; ++r) {
            const size_t off = static_cast<size_t>(r) * C;
            double dot = 0.0;
            for (int j = 0; j < C; ++j) dot += g[off + j] * p[off + j];
            for (int j = 0; j < C; ++j) px->grad[off + j] += p[off + j] * (g[off + j] - dot);
        }
    });
}

Tensor log(const Tensor& x) {
    require_defined(x, "log", "input");
    const int64_t n = x.numel();
    std::vector<double> out(n);
    const double* xv = x.values().data();
    for (int64_t i = 0; i < n; ++i) out[i] = std::log(std::max(xv[i], kLogFloor));
    return make_op("log", x.shape(), std::move(out), {x}, [](TensorImpl& self) {
        TensorImpl* px = self.parents[0].get();
        if (!px->needs_grad) return;
        const double* g = self.grad.data();
        const double* xv = px->values.data();
        const int64_t n = self.numel();
        for (int64_t i = 0; i < n; ++i)
            if (xv[i] > kLogFloor) px->grad[i] += g[i] / xv[i];
    });
}

Tensor sum(const Tensor& x) {
    require_defined(x, "sum", "input");
    double acc = 0.0;
    for (double v : x.values()) acc += v;
    return make_op("sum", {1}, {acc}, {x}, [](TensorImpl& self) {
        TensorImpl* px = self.parents[0].get();
        if (!px->needs_grad) return;
        const double g = self.grad[0];
        const int64_t n = px->numel();
        for (int64_t i = 0; i < n; ++i) px->grad[i] += g;
    });
}

Tensor mean(const Tensor& x) {
    require_defined(x, "mean", "input");
    double acc = 0.0;
    for (double v : x.values()) acc += v;
    const double inv = 1.0 / static_cast<double>(x.numel());
    return make_op("mean", {1}, {acc * inv}, {x}, [inv](TensorImpl& self) {
        TensorImpl* px = self.parents[0].get();
        if (!px->needs_grad) return;
        const double g = self.grad[0] * inv;
        const int64_t n = px->numel();
        for (int64_t i = 0; i < n; ++i) px->grad[i] += g;
    });
}

Tensor reshape(const Tensor& x, std::vector<int> new_shape) {
    require_defined(x, "reshape", "input");
    int64_t n = 1;
    for (int d : new_shape) {
        require(d > 0, "reshape: non-positive dimension in " + shape_to_string(new_shape));
        n *= d;
    }
    require(n == x.numel(), "reshape: cannot view " + shape_to_string(x.shape()) + " as " + shape_to_string(new_shape));
    std::vector<double> out(x.values().begin(), x.values().end());
    return make_op("reshape", std::move(new_shape), std::move(out), {x}, [](TensorImpl& self) {
        TensorImpl* px = self.parents[0].get();
        if (!px->needs_grad) return;
        const double* g = self.grad.data();
        const int64_t n = self.numel();
        for (int64_t i = 0; i < n; ++i) px->grad[i] += g[i];
    });
}

Tensor detach(const Tensor& x) {
    require_defined(x, "detach", "input");
    return Tensor::from(x.shape(), std::vector<double>(x.values().begin(), x.values().end()), false);
}

Tensor gather_rows(const Tensor& data, const std::vector<int>& indices) {
    require_defined(data, "gather_rows", "data");
    require(!data.shape().empty(), "gather_rows: data must have rank >= 1");
    require(!data.needs_grad(), "gather_rows: data must not be part of a gradient path");
    const int N = data.shape()[0];
    const int64_t row = data.numel() / N;
    std::vector<int> shape = data.shape();
    shape[0] = static_cast<int>(indices.size());
    std::vector<double> out(static_cast<size_t>(indices.size()) * row);
    const double* dv = data.values().data();
    for (size_t i = 0; i < indices.size(); ++i) {
        const int idx = indices[i];
        require(idx >= 0 && idx < N, "gather_rows: index " + std::to_string(idx) + " out of range [0, " +
                                         std::to_string(N) + ")");
        std::copy(&dv[static_cast<size_t>(idx) * row], &dv[static_cast<size_t>(idx) * row + row],
                  &out[i * row]);
    }
    return Tensor::from(std::move(shape), std::move(out));
}

double finite_diff_check(const ScalarClosure& f, const std::vector<Tensor>& point, double h) {
    if (!(h > 0.0)) throw std::invalid_argument("finite_diff_check: h must be positive");
    std::vector<Tensor> leaves;
    leaves.reserve(point.size());
    for (const auto& p : point)
        leaves.push_back(Tensor::from(p.shape(), std::vector<double>(p.values().begin(), p.values().end()), true));

    Tensor loss = f(leaves);
    if (!loss.defined() || loss.numel() != 1)
        throw std::invalid_argument("finite_diff_check: closure must return a scalar");

    std::vector<std::vector<double>> analytic;
    if (loss.needs_grad()) {
        loss.backward();
        for (auto& l : leaves) {
            if (l.has_grad())
                analytic.emplace_back(l.grad().begin(), l.grad().end());
            else
                analytic.emplace_back(l.numel(), 0.0);
        }
    } else {
        for (auto& l : leaves) analytic.emplace_back(l.numel(), 0.0);
    }

    auto eval = [&](size_t t, int64_t i, double delta) {
        std::vector<Tensor> probe;
        probe.reserve(point.size());
        for (size_t u = 0; u < point.size(); ++u) {
            std::vector<double> vals(point[u].values().begin(), point[u].values().end());
            if (u == t) vals[i] += delta;
            probe.push_back(Tensor::from(point[u].shape(), std::move(vals)));
        }
        Tensor out = f(probe);
        if (!out.defined() || out.numel() != 1)
            throw std::invalid_argument("finite_diff_check: closure must return a scalar");
        return out.item();
    };

    double max_err = 0.0;
    for (size_t t = 0; t < point.size(); ++t) {
        const int64_t n = point[t].numel();
        for (int64_t i = 0; i < n; ++i) {
            const double fd = (eval(t, i, h) - eval(t, i, -h)) / (2.0 * h);
            const double a = analytic[t][i];
            max_err = std::max(max_err, std::abs(a - fd) / std::max(1.0, std::abs(a)));
        }
    }
    return max_err;
}

}  // namespace s3d
