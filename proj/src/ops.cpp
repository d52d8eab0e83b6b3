#include "umg/ops.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstring>

namespace umg {

namespace {

using MatRM = Eigen::Matrix<real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRM = Eigen::Map<MatRM>;
using CMapRM = Eigen::Map<const MatRM>;

Tape* unify_tape(std::initializer_list<const Tensor*> ts) {
    Tape* tape = nullptr;
    for (const Tensor* t : ts) {
        if (!t->on_tape()) continue;
        if (tape && tape != t->tape) throw ValueError("op: inputs live on different tapes");
        tape = t->tape;
    }
    return tape;
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (!same_shape(a, b)) {
        throw DimError(std::string(op) + ": shape mismatch " + shape_str(a.shape) + " vs " +
                       shape_str(b.shape));
    }
}

void require_nchw(const Tensor& t, const char* op) {
    if (t.ndim() != 4) throw DimError(std::string(op) + ": expected NCHW, got " + shape_str(t.shape));
}

// Mirror-without-edge-repeat index, valid for pad <= extent-1.
inline int reflect_index(int i, int extent) {
    if (i < 0) i = -i;
    if (i >= extent) i = 2 * extent - 2 - i;
    return i;
}

void add_into(std::vector<real>& dst, const std::vector<real>& src, real scale = 1) {
    for (size_t i = 0; i < dst.size(); ++i) dst[i] += scale * src[i];
}

void add_into_raw(real* dst, const real* src, size_t n) {
    for (size_t i = 0; i < n; ++i) dst[i] += src[i];
}

}  // namespace

// ---------------------------------------------------------------- elementwise

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    Tensor out(a.shape);
    const auto &av = a.data(), &bv = b.data();
    auto& ov = out.data();
    for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] + bv[i];
    check_finite(out, "add");
    if (Tape* tp = unify_tape({&a, &b})) {
        out.tape = tp;
        int na = a.node, nb = b.node;
        int self = static_cast<int>(tp->node_count());
        out.node = tp->add_node(out.numel(), [self, na, nb](Tape& t) {
            const auto& g = t.grad_of(self);
            if (na >= 0) add_into(t.grad(na), g);
            if (nb >= 0) add_into(t.grad(nb), g);
        });
    }
    return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "sub");
    Tensor out(a.shape);
    const auto &av = a.data(), &bv = b.data();
    auto& ov = out.data();
    for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] - bv[i];
    check_finite(out, "sub");
    if (Tape* tp = unify_tape({&a, &b})) {
        out.tape = tp;
        int na = a.node, nb = b.node;
        int self = static_cast<int>(tp->node_count());
        out.node = tp->add_node(out.numel(), [self, na, nb](Tape& t) {
            const auto& g = t.grad_of(self);
            if (na >= 0) add_into(t.grad(na), g);
            if (nb >= 0) add_into(t.grad(nb), g, -1);
        });
    }
    return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mul");
    Tensor out(a.shape);
    const auto &av = a.data(), &bv = b.data();
    auto& ov = out.data();
    for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * bv[i];
    check_finite(out, "mul");
    if (Tape* tp = unify_tape({&a, &b})) {
        out.tape = tp;
        int na = a.node, nb = b.node;
        auto as = a.store, bs = b.store;
        int self = static_cast<int>(tp->node_count());
        out.node = tp->add_node(out.numel(), [self, na, nb, as, bs](Tape& t) {
            const auto& g = t.grad_of(self);
            if (na >= 0) {
                auto& da = t.grad(na);
                for (size_t i = 0; i < g.size(); ++i) da[i] += g[i] * (*bs)[i];
            }
            if (nb >= 0) {
                auto& db = t.grad(nb);
                for (size_t i = 0; i < g.size(); ++i) db[i] += g[i] * (*as)[i];
            }
        });
    }
    return out;
}

Tensor div(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "div");
    Tensor out(a.shape);
    const auto &av = a.data(), &bv = b.data();
    auto& ov = out.data();
    for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] / bv[i];
    check_finite(out, "div");
    if (Tape* tp = unify_tape({&a, &b})) {
        out.tape = tp;
        int na = a.node, nb = b.node;
        auto bs = b.store, os = out.store;
        int self = static_cast<int>(tp->node_count());
        out.node = tp->add_node(out.numel(), [self, na, nb, bs, os](Tape& t) {
            const auto& g = t.grad_of(self);
            if (na >= 0) {
                auto& da = t.grad(na);
                for (size_t i = 0; i < g.size(); ++i) da[i] += g[i] / (*bs)[i];
            }
            if (nb >= 0) {
                auto& db = t.grad(nb);
                for (size_t i = 0; i < g.size(); ++i) db[i] -= g[i] * (*os)[i] / (*bs)[i];
            }
        });
    }
    return out;
}

Tensor add_scalar(const Tensor& a, real c) {
    Tensor out(a.shape);
    const auto& av = a.data();
    auto& ov = out.data();
    for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] + c;
    check_finite(out, "add_scalar");
    if (Tape* tp = unify_tape({&a})) {
        out.tape = tp;
        int na = a.node;
        int self = static_cast<int>(tp->node_count());
        out.node = tp->add_node(out.numel(), [self, na](Tape& t) {
            add_into(t.grad(na), t.grad_of(self));
        });
    }
    return out;
}

Tensor mul_scalar(const Tensor& a, real c) {
    Tensor out(a.shape);
    const auto& av = a.data();
    auto& ov = out.data();
    for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * c;
    check_finite(out, "mul_scalar");
    if (Tape* tp = unify_tape({&a})) {
        out.tape = tp;
        int na = a.node;
        int self = static_cast<int>(tp->node_count());
        out.node = tp->add_node(out.numel(), [self, na, c](Tape& t) {
            add_into(t.grad(na), t.grad_of(self), c);
        });
    }
    return out;
}

Tensor activation(const Tensor& x, Act kind, real leaky_slope) {
    const auto& xv = x.data();
    if (kind == Act::log) {
        for (real v : xv) {
            if (!(v > 0)) throw NumericError("log: non-positive input");
        }
    }
    Tensor out(x.shape);
    auto& ov = out.data();
    switch (kind) {
        case Act::relu:
            for (size_t i = 0; i < ov.size(); ++i) ov[i] = xv[i] > 0 ? xv[i] : 0;
            break;
        case Act::leaky_relu:
            for (size_t i = 0; i < ov.size(); ++i) ov[i] = xv[i] > 0 ? xv[i] : leaky_slope * xv[i];
            break;
        case Act::sigmoid:
            for (size_t i = 0; i < ov.size(); ++i) {
                real v = xv[i];
                ov[i] = v >= 0 ? 1 / (1 + std::exp(-v)) : std::exp(v) / (1 + std::exp(v));
            }
            break;
        case Act::log:
            for (size_t i = 0; i < ov.size(); ++i) ov[i] = std::log(xv[i]);
            break;
    }
    check_finite(out, "activation");
    if (Tape* tp = unify_tape({&x})) {
        out.tape = tp;
        int nx = x.node;
        auto xs = x.store, os = out.store;
        int self = static_cast<int>(tp->node_count());
        out.node = tp->add_node(out.numel(), [self, nx, xs, os, kind, leaky_slope](Tape& t) {
            const auto& g = t.grad_of(self);
            auto& dx = t.grad(nx);
            switch (kind) {
                case Act::relu:
                    for (size_t i = 0; i < g.size(); ++i) dx[i] += (*xs)[i] > 0 ? g[i] : 0;
                    break;
                case Act::leaky_relu:
                    for (size_t i = 0; i < g.size(); ++i)
                        dx[i] += (*xs)[i] > 0 ? g[i] : leaky_slope * g[i];
                    break;
                case Act::sigmoid:
                    for (size_t i = 0; i < g.size(); ++i) {
                        real y = (*os)[i];
                        dx[i] += g[i] * y * (1 - y);
                    }
                    break;
                case Act::log:
                    for (size_t i = 0; i < g.size(); ++i) dx[i] += g[i] / (*xs)[i];
                    break;
            }
        });
    }
    return out;
}

Tensor clamp(const Tensor& x, real lo, real hi) {
    if (!(lo <= hi)) throw ValueError("clamp: lo > hi");
    Tensor out(x.shape);
    const auto& xv = x.data();
    auto& ov = out.data();
    for (size_t i = 0; i < ov.size(); ++i) ov[i] = std::min(hi, std::max(lo, xv[i]));
    check_finite(out, "clamp");
    if (Tape* tp = unify_tape({&x})) {
        out.tape = tp;
        int nx = x.node;
        auto xs = x.store;
        int self = static_cast<int>(tp->node_count());
        out.node = tp->add_node(out.numel(), [self, nx, xs, lo, hi](Tape& t) {
            const auto& g = t.grad_of(self);
            auto& dx = t.grad(nx);
            for (size_t i = 0; i < g.size(); ++i) {
                real v = (*xs)[i];
                if (v >= lo && v <= hi) dx[i] += g[i];
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------- reductions

Tensor sum_all(const Tensor& x) {
    real s = 0;
    for (real v : x.data()) s += v;
    Tensor out({1}, std::vector<real>{s});
    check_finite(out, "sum_all");
    if (Tape* tp = unify_tape({&x})) {
        out.tape = tp;
        int nx = x.node;
        int self = static_cast<int>(tp->node_count());
        out.node = tp->add_node(1, [self, nx](Tape& t) {
            real g = t.grad_of(self)[0];
            auto& dx = t.grad(nx);
            for (auto& v : dx) v += g;
        });
    }
    return out;
}

Tensor mean_all(const Tensor& x) {
    if (x.numel() == 0) throw DimError("mean_all: empty tensor");
    real s = 0;
    for (real v : x.data()) s += v;
    real inv = real(1) / static_cast<real>(x.numel());
    Tensor out({1}, std::vector<real>{s * inv});
    check_finite(out, "mean_all");
    if (Tape* tp = unify_tape({&x})) {
        out.tape = tp;
        int nx = x.node;
        int self = static_cast<int>(tp->node_count());
        out.node = tp->add_node(1, [self, nx, inv](Tape& t) {
            real g = t.grad_of(self)[0] * inv;
            auto& dx = t.grad(nx);
            for (auto& v : dx) v += g;
        });
    }
    return out;
}

// --------------------------------------------------------------- convolution

namespace {

struct ConvDims {
    int N, C, H, W, O, kh, kw, Hp, Wp, Ho, Wo;
    int pad;
    int stride;
};

ConvDims conv_dims(const Tensor& in, const Tensor& k, int stride, Padding pad, const char* op) {
    require_nchw(in, op);
    if (k.ndim() != 4) throw DimError(std::string(op) + ": kernel must be 4-d");
    if (stride < 1) throw ValueError(std::string(op) + ": stride must be >= 1");
    ConvDims d;
    d.N = in.dim(0);
    d.C = in.dim(1);
    d.H = in.dim(2);
    d.W = in.dim(3);
    d.O = k.dim(0);
    d.kh = k.dim(2);
    d.kw = k.dim(3);
    d.pad = pad.kind == Padding::reflect ? pad.amount : 0;
    d.stride = stride;
    if (d.pad < 0) throw ValueError(std::string(op) + ": negative padding");
    if (d.pad > 0 && (d.pad > d.H - 1 || d.pad > d.W - 1)) {
        throw DimError(std::string(op) + ": reflect padding exceeds input extent");
    }
    d.Hp = d.H + 2 * d.pad;
    d.Wp = d.W + 2 * d.pad;
    if (d.kh > d.Hp || d.kw > d.Wp) {
        throw DimError(std::string(op) + ": kernel larger than padded input");
    }
    d.Ho = (d.Hp - d.kh) / stride + 1;
    d.Wo = (d.Wp - d.kw) / stride + 1;
    return d;
}

void pad_sample(const real* src, real* dst, const ConvDims& d) {
    if (d.pad == 0) {
        std::memcpy(dst, src, sizeof(real) * static_cast<size_t>(d.C * d.H * d.W));
        return;
    }
    for (int c = 0; c < d.C; ++c) {
        const real* sc = src + static_cast<int64_t>(c) * d.H * d.W;
        real* dc = dst + static_cast<int64_t>(c) * d.Hp * d.Wp;
        for (int i = 0; i < d.Hp; ++i) {
            int si = reflect_index(i - d.pad, d.H);
            for (int j = 0; j < d.Wp; ++j) {
                dc[i * d.Wp + j] = sc[si * d.W + reflect_index(j - d.pad, d.W)];
            }
        }
    }
}

void im2col(const real* pad, real* col, const ConvDims& d) {
    const int cols = d.Ho * d.Wo;
    for (int c = 0; c < d.C; ++c) {
        for (int u = 0; u < d.kh; ++u) {
            for (int v = 0; v < d.kw; ++v) {
                real* row = col + static_cast<int64_t>((c * d.kh + u) * d.kw + v) * cols;
                const real* pc = pad + static_cast<int64_t>(c) * d.Hp * d.Wp;
                for (int i = 0; i < d.Ho; ++i) {
                    const real* pr = pc + (i * d.stride + u) * d.Wp + v;
                    if (d.stride == 1) {
                        std::memcpy(row + i * d.Wo, pr, sizeof(real) * static_cast<size_t>(d.Wo));
                    } else {
                        for (int j = 0; j < d.Wo; ++j) row[i * d.Wo + j] = pr[j * d.stride];
                    }
                }
            }
        }
    }
}

// Scatters column gradients back onto the (padded) sample, then folds the
// padded border into the source gradient through the reflection map.
void col2im_add(const real* dcol, real* din, const ConvDims& d) {
    std::vector<real> dpad;
    real* target = din;
    if (d.pad > 0) {
        dpad.assign(static_cast<size_t>(d.C) * d.Hp * d.Wp, 0);
        target = dpad.data();
    }
    const int cols = d.Ho * d.Wo;
    for (int c = 0; c < d.C; ++c) {
        real* tc = target + static_cast<int64_t>(c) * d.Hp * d.Wp;
        for (int u = 0; u < d.kh; ++u) {
            for (int v = 0; v < d.kw; ++v) {
                const real* row = dcol + static_cast<int64_t>((c * d.kh + u) * d.kw + v) * cols;
                for (int i = 0; i < d.Ho; ++i) {
                    real* tr = tc + (i * d.stride + u) * d.Wp + v;
                    for (int j = 0; j < d.Wo; ++j) tr[j * d.stride] += row[i * d.Wo + j];
                }
            }
        }
    }
    if (d.pad > 0) {
        for (int c = 0; c < d.C; ++c) {
            const real* pc = dpad.data() + static_cast<int64_t>(c) * d.Hp * d.Wp;
            real* sc = din + static_cast<int64_t>(c) * d.H * d.W;
            for (int i = 0; i < d.Hp; ++i) {
                int si = reflect_index(i - d.pad, d.H);
                for (int j = 0; j < d.Wp; ++j) {
                    sc[si * d.W + reflect_index(j - d.pad, d.W)] += pc[i * d.Wp + j];
                }
            }
        }
    }
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& kernel, int stride, Padding pad) {
    ConvDims d = conv_dims(input, kernel, stride, pad, "conv2d");
    if (kernel.dim(1) != d.C) {
        throw DimError("conv2d: kernel expects " + std::to_string(kernel.dim(1)) +
                       " channels, input has " + std::to_string(d.C));
    }
    Tensor out({d.N, d.O, d.Ho, d.Wo});
    const int ckk = d.C * d.kh * d.kw;
    const int cols = d.Ho * d.Wo;
    const real* kd = kernel.data().data();
    {
        const real* id = input.data().data();
        real* od = out.data().data();
        parallel_for(d.N, [&](int n) {
            std::vector<real> padbuf(static_cast<size_t>(d.C) * d.Hp * d.Wp);
            std::vector<real> colbuf(static_cast<size_t>(ckk) * cols);
            pad_sample(id + static_cast<int64_t>(n) * d.C * d.H * d.W, padbuf.data(), d);
            im2col(padbuf.data(), colbuf.data(), d);
            CMapRM K(kd, d.O, ckk);
            CMapRM col(colbuf.data(), ckk, cols);
            MapRM o(od + static_cast<int64_t>(n) * d.O * cols, d.O, cols);
            o.noalias() = K * col;
        });
    }
    check_finite(out, "conv2d");
    if (Tape* tp = unify_tape({&input, &kernel})) {
        out.tape = tp;
        int ni = input.node, nk = kernel.node;
        auto is = input.store, ks = kernel.store;
        int self = static_cast<int>(tp->node_count());
        out.node = tp->add_node(out.numel(), [self, ni, nk, is, ks, d, ckk, cols](Tape& t) {
            const auto& g = t.grad_of(self);
            real* din = ni >= 0 ? t.grad(ni).data() : nullptr;
            std::vector<std::vector<real>> dk_part;
            if (nk >= 0) dk_part.assign(static_cast<size_t>(d.N), {});
            parallel_for(d.N, [&](int n) {
                std::vector<real> padbuf(static_cast<size_t>(d.C) * d.Hp * d.Wp);
                std::vector<real> colbuf(static_cast<size_t>(ckk) * cols);
                pad_sample(is->data() + static_cast<int64_t>(n) * d.C * d.H * d.W, padbuf.data(), d);
                im2col(padbuf.data(), colbuf.data(), d);
                CMapRM col(colbuf.data(), ckk, cols);
                CMapRM go(g.data() + static_cast<int64_t>(n) * d.O * cols, d.O, cols);
                if (nk >= 0) {
                    auto& part = dk_part[static_cast<size_t>(n)];
                    part.assign(static_cast<size_t>(d.O) * ckk, 0);
                    MapRM dk(part.data(), d.O, ckk);
                    dk.noalias() = go * col.transpose();
                }
                if (din) {
                    std::vector<real> dcol(static_cast<size_t>(ckk) * cols);
                    CMapRM K(ks->data(), d.O, ckk);
                    MapRM dc(dcol.data(), ckk, cols);
                    dc.noalias() = K.transpose() * go;
                    col2im_add(dcol.data(), din + static_cast<int64_t>(n) * d.C * d.H * d.W, d);
                }
            });
            if (nk >= 0) {
                auto& dk = t.grad(nk);
                for (int n = 0; n < d.N; ++n) add_into(dk, dk_part[static_cast<size_t>(n)]);
            }
        });
    }
    return out;
}

Tensor conv2d_depthwise(const Tensor& input, const Tensor& kernel, int stride, Padding pad) {
    ConvDims d = conv_dims(input, kernel, stride, pad, "conv2d_depthwise");
    if (kernel.dim(0) != d.C || kernel.dim(1) != 1) {
        throw DimError("conv2d_depthwise: kernel must be [C,1,kh,kw] with C = input channels");
    }
    d.O = d.C;
    Tensor out({d.N, d.C, d.Ho, d.Wo});
    const real* kd = kernel.data().data();
    {
        const real* id = input.data().data();
        real* od = out.data().data();
        parallel_for(d.N, [&](int n) {
            std::vector<real> padbuf(static_cast<size_t>(d.C) * d.Hp * d.Wp);
            pad_sample(id + static_cast<int64_t>(n) * d.C * d.H * d.W, padbuf.data(), d);
            for (int c = 0; c < d.C; ++c) {
                const real* pc = padbuf.data() + static_cast<int64_t>(c) * d.Hp * d.Wp;
                const real* kc = kd + static_cast<int64_t>(c) * d.kh * d.kw;
                real* oc = od + (static_cast<int64_t>(n) * d.C + c) * d.Ho * d.Wo;
                for (int i = 0; i < d.Ho; ++i) {
                    for (int j = 0; j < d.Wo; ++j) {
                        real acc = 0;
                        for (int u = 0; u < d.kh; ++u) {
                            const real* pr = pc + (i * d.stride + u) * d.Wp + j * d.stride;
                            const real* kr = kc + u * d.kw;
                            for (int v = 0; v < d.kw; ++v) acc += pr[v] * kr[v];
                        }
                        oc[i * d.Wo + j] = acc;
                    }
                }
            }
        });
    }
    check_finite(out, "conv2d_depthwise");
    if (Tape* tp = unify_tape({&input, &kernel})) {
        out.tape = tp;
        int ni = input.node, nk = kernel.node;
        auto is = input.store, ks = kernel.store;
        int self = static_cast<int>(tp->node_count());
        out.node = tp->add_node(out.numel(), [self, ni, nk, is, ks, d](Tape& t) {
            const auto& g = t.grad_of(self);
            real* din = ni >= 0 ? t.grad(ni).data() : nullptr;
            std::vector<std::vector<real>> dk_part;
            if (nk >= 0) dk_part.assign(static_cast<size_t>(d.N), {});
            parallel_for(d.N, [&](int n) {
                std::vector<real> padbuf(static_cast<size_t>(d.C) * d.Hp * d.Wp);
                pad_sample(is->data() + static_cast<int64_t>(n) * d.C * d.H * d.W, padbuf.data(), d);
                std::vector<real> dpad;
                if (din) dpad.assign(padbuf.size(), 0);
                if (nk >= 0) dk_part[static_cast<size_t>(n)].assign(ks->size(), 0);
                for (int c = 0; c < d.C; ++c) {
                    const real* pc = padbuf.data() + static_cast<int64_t>(c) * d.Hp * d.Wp;
                    const real* kc = ks->data() + static_cast<int64_t>(c) * d.kh * d.kw;
                    const real* gc = g.data() + (static_cast<int64_t>(n) * d.C + c) * d.Ho * d.Wo;
                    real* dkc = nk >= 0
                                    ? dk_part[static_cast<size_t>(n)].data() +
                                          static_cast<int64_t>(c) * d.kh * d.kw
                                    : nullptr;
                    real* dpc = din ? dpad.data() + static_cast<int64_t>(c) * d.Hp * d.Wp : nullptr;
                    for (int i = 0; i < d.Ho; ++i) {
                        for (int j = 0; j < d.Wo; ++j) {
                            real gv = gc[i * d.Wo + j];
                            for (int u = 0; u < d.kh; ++u) {
                                for (int v = 0; v < d.kw; ++v) {
                                    int pi = i * d.stride + u, pj = j * d.stride + v;
                                    if (dkc) dkc[u * d.kw + v] += gv * pc[pi * d.Wp + pj];
                                    if (dpc) dpc[pi * d.Wp + pj] += gv * kc[u * d.kw + v];
                                }
                            }
                        }
                    }
                }
                if (din) {
                    real* dn = din + static_cast<int64_t>(n) * d.C * d.H * d.W;
                    if (d.pad == 0) {
                        add_into_raw(dn, dpad.data(), dpad.size());
                    } else {
                        for (int c = 0; c < d.C; ++c) {
                            const real* pc = dpad.data() + static_cast<int64_t>(c) * d.Hp * d.Wp;
                            real* sc = dn + static_cast<int64_t>(c) * d.H * d.W;
                            for (int i = 0; i < d.Hp; ++i) {
                                int si = reflect_index(i - d.pad, d.H);
                                for (int j = 0; j < d.Wp; ++j) {
                                    sc[si * d.W + reflect_index(j - d.pad, d.W)] += pc[i * d.Wp + j];
                                }
                            }
                        }
                    }
                }
            });
            if (nk >= 0) {
                auto& dk = t.grad(nk);
                for (int n = 0; n < d.N; ++n) add_into(dk, dk_part[static_cast<size_t>(n)]);
            }
        });
    }
    return out;
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
    require_nchw(x, "add_bias");
    if (bias.ndim() != 1 || bias.dim(0) != x.dim(1)) {
        throw DimError("add_bias: bias must be [C] with C = " + std::to_string(x.dim(1)));
    }
    const int N = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
    Tensor out(x.shape);
    const auto &xv = x.data(), &bv = bias.data();
    auto& ov = out.data();
    for (int n = 0; n < N; ++n) {
        for (int c = 0; c < C; ++c) {
            const int64_t base = (static_cast<int64_t>(n) * C + c) * HW;
            real b = bv[static_cast<size_t>(c)];
            for (int i = 0; i < HW; ++i) ov[base + i] = xv[base + i] + b;
        }
    }
    check_finite(out, "add_bias");
    if (Tape* tp = unify_tape({&x, &bias})) {
        out.tape = tp;
        int nx = x.node, nb = bias.node;
        int self = static_cast<int>(tp->node_count());
        out.node = tp->add_node(out.numel(), [self, nx, nb, N, C, HW](Tape& t) {
            const auto& g = t.grad_of(self);
            if (nx >= 0) add_into(t.grad(nx), g);
            if (nb >= 0) {
                auto& db = t.grad(nb);
                for (int n = 0; n < N; ++n) {
                    for (int c = 0; c < C; ++c) {
                        const int64_t base = (static_cast<int64_t>(n) * C + c) * HW;
                        real s = 0;
                        for (int i = 0; i < HW; ++i) s += g[base + i];
                        db[static_cast<size_t>(c)] += s;
                    }
                }
            }
        });
    }
    return out;
}

Tensor pool_max2(const Tensor& x) {
    require_nchw(x, "pool_max2");
    const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    if (H % 2 != 0 || W % 2 != 0) {
        throw DimError("pool_max2: spatial dims must be even, got " + shape_str(x.shape));
    }
    const int Ho = H / 2, Wo = W / 2;
    Tensor out({N, C, Ho, Wo});
    auto idx = std::make_shared<std::vector<uint8_t>>(static_cast<size_t>(out.numel()));
    const auto& xv = x.data();
    auto& ov = out.data();
    for (int64_t nc = 0; nc < static_cast<int64_t>(N) * C; ++nc) {
        const real* px = xv.data() + nc * H * W;
        real* po = ov.data() + nc * Ho * Wo;
        uint8_t* pi = idx->data() + nc * Ho * Wo;
        for (int i = 0; i < Ho; ++i) {
            for (int j = 0; j < Wo; ++j) {
                real best = px[(2 * i) * W + 2 * j];
                uint8_t bi = 0;
                const real cand[3] = {px[(2 * i) * W + 2 * j + 1], px[(2 * i + 1) * W + 2 * j],
                                      px[(2 * i + 1) * W + 2 * j + 1]};
                for (uint8_t k = 0; k < 3; ++k) {
                    if (cand[k] > best) {
                        best = cand[k];
                        bi = static_cast<uint8_t>(k + 1);
                    }
                }
                po[i * Wo + j] = best;
                pi[i * Wo + j] = bi;
            }
        }
    }
    check_finite(out, "pool_max2");
    if (Tape* tp = unify_tape({&x})) {
        out.tape = tp;
        int nx = x.node;
        int self = static_cast<int>(tp->node_count());
        out.node = tp->add_node(out.numel(), [self, nx, idx, N, C, H, W, Ho, Wo](Tape& t) {
            const auto& g = t.grad_of(self);
            auto& dx = t.grad(nx);
            for (int64_t nc = 0; nc < static_cast<int64_t>(N) * C; ++nc) {
                const real* pg = g.data() + nc * Ho * Wo;
                const uint8_t* pi = idx->data() + nc * Ho * Wo;
                real* pd = dx.data() + nc * H * W;
                for (int i = 0; i < Ho; ++i) {
                    for (int j = 0; j < Wo; ++j) {
                        uint8_t k = pi[i * Wo + j];
                        int di = k >> 1, dj = k & 1;
                        pd[(2 * i + di) * W + 2 * j + dj] += pg[i * Wo + j];
                    }
                }
            }
        });
    }
    return out;
}

Tensor upsample_nearest2(const Tensor& x) {
    require_nchw(x, "upsample_nearest2");
    const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    Tensor out({N, C, 2 * H, 2 * W});
    const auto& xv = x.data();
    auto& ov = out.data();
    for (int64_t nc = 0; nc < static_cast<int64_t>(N) * C; ++nc) {
        const real* px = xv.data() + nc * H * W;
        real* po = ov.data() + nc * 4 * H * W;
        for (int i = 0; i < H; ++i) {
            for (int j = 0; j < W; ++j) {
                real v = px[i * W + j];
                real* p = po + (2 * i) * 2 * W + 2 * j;
                p[0] = v;
                p[1] = v;
                p[2 * W] = v;
                p[2 * W + 1] = v;
            }
        }
    }
    check_finite(out, "upsample_nearest2");
    if (Tape* tp = unify_tape({&x})) {
        out.tape = tp;
        int nx = x.node;
        int self = static_cast<int>(tp->node_count());
        out.node = tp->add_node(out.numel(), [self, nx, N, C, H, W](Tape& t) {
            const auto& g = t.grad_of(self);
            auto& dx = t.grad(nx);
            for (int64_t nc = 0; nc < static_cast<int64_t>(N) * C; ++nc) {
                const real* pg = g.data() + nc * 4 * H * W;
                real* pd = dx.data() + nc * H * W;
                for (int i = 0; i < H; ++i) {
                    for (int j = 0; j < W; ++j) {
                        const real* p = pg + (2 * i) * 2 * W + 2 * j;
                        pd[i * W + j] += p[0] + p[1] + p[2 * W] + p[2 * W + 1];
                    }
                }
            }
        });
    }
    return out;
}

std::pair<Tensor, Tensor> channel_stats(const Tensor& x, real eps) {
    require_nchw(x, "channel_stats");
    if (!(eps > 0)) throw ValueError("channel_stats: epsilon must be positive");
    const int N = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
    if (HW < 1) throw DimError("channel_stats: empty spatial extent");
    Tensor mean({N, C});
    Tensor stddev({N, C});
    const auto& xv = x.data();
    auto& mv = mean.data();
    auto& sv = stddev.data();
    const real inv = real(1) / static_cast<real>(HW);
    for (int64_t nc = 0; nc < static_cast<int64_t>(N) * C; ++nc) {
        const real* px = xv.data() + nc * HW;
        real m = 0;
        for (int i = 0; i < HW; ++i) m += px[i];
        m *= inv;
        real var = 0;
        for (int i = 0; i < HW; ++i) {
            real dlt = px[i] - m;
            var += dlt * dlt;
        }
        var *= inv;
        mv[static_cast<size_t>(nc)] = m;
        sv[static_cast<size_t>(nc)] = std::sqrt(var + eps);
    }
    check_finite(mean, "channel_stats");
    check_finite(stddev, "channel_stats");
    if (Tape* tp = unify_tape({&x})) {
        int nx = x.node;
        auto xs = x.store, ms = mean.store, ss = stddev.store;
        mean.tape = tp;
        int self_m = static_cast<int>(tp->node_count());
        mean.node = tp->add_node(mean.numel(), [self_m, nx, N, C, HW, inv](Tape& t) {
            const auto& g = t.grad_of(self_m);
            auto& dx = t.grad(nx);
            for (int64_t nc = 0; nc < static_cast<int64_t>(N) * C; ++nc) {
                real gm = g[static_cast<size_t>(nc)] * inv;
                real* pd = dx.data() + nc * HW;
                for (int i = 0; i < HW; ++i) pd[i] += gm;
            }
        });
        stddev.tape = tp;
        int self_s = static_cast<int>(tp->node_count());
        stddev.node =
            tp->add_node(stddev.numel(), [self_s, nx, xs, ms, ss, N, C, HW, inv](Tape& t) {
                const auto& g = t.grad_of(self_s);
                auto& dx = t.grad(nx);
                for (int64_t nc = 0; nc < static_cast<int64_t>(N) * C; ++nc) {
                    real gs = g[static_cast<size_t>(nc)];
                    if (gs == 0) continue;
                    real m = (*ms)[static_cast<size_t>(nc)];
                    real s = (*ss)[static_cast<size_t>(nc)];
                    real k = gs * inv / s;
                    const real* px = xs->data() + nc * HW;
                    real* pd = dx.data() + nc * HW;
                    for (int i = 0; i < HW; ++i) pd[i] += k * (px[i] - m);
                }
            });
    }
    return {mean, stddev};
}

Tensor affine_channels(const Tensor& x, const Tensor& scale, const Tensor& shift) {
    require_nchw(x, "affine_channels");
    const int N = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
    auto check_nc = [&](const Tensor& t, const char* name) {
        if (t.ndim() != 2 || t.dim(0) != N || t.dim(1) != C) {
            throw DimError(std::string("affine_channels: ") + name + " must be [N,C]=" +
                           shape_str({N, C}) + ", got " + shape_str(t.shape));
        }
    };
    check_nc(scale, "scale");
    check_nc(shift, "shift");
    Tensor out(x.shape);
    const auto &xv = x.data(), &scv = scale.data(), &shv = shift.data();
    auto& ov = out.data();
    for (int64_t nc = 0; nc < static_cast<int64_t>(N) * C; ++nc) {
        const real* px = xv.data() + nc * HW;
        real* po = ov.data() + nc * HW;
        real a = scv[static_cast<size_t>(nc)], b = shv[static_cast<size_t>(nc)];
        for (int i = 0; i < HW; ++i) po[i] = px[i] * a + b;
    }
    check_finite(out, "affine_channels");
    if (Tape* tp = unify_tape({&x, &scale, &shift})) {
        out.tape = tp;
        int nx = x.node, nsc = scale.node, nsh = shift.node;
        auto xs = x.store, scs = scale.store;
        int self = static_cast<int>(tp->node_count());
        out.node = tp->add_node(out.numel(), [self, nx, nsc, nsh, xs, scs, N, C, HW](Tape& t) {
            const auto& g = t.grad_of(self);
            for (int64_t nc = 0; nc < static_cast<int64_t>(N) * C; ++nc) {
                const real* pg = g.data() + nc * HW;
                if (nx >= 0) {
                    real a = (*scs)[static_cast<size_t>(nc)];
                    real* pd = t.grad(nx).data() + nc * HW;
                    for (int i = 0; i < HW; ++i) pd[i] += pg[i] * a;
                }
                if (nsc >= 0) {
                    const real* px = xs->data() + nc * HW;
                    real s = 0;
                    for (int i = 0; i < HW; ++i) s += pg[i] * px[i];
                    t.grad(nsc)[static_cast<size_t>(nc)] += s;
                }
                if (nsh >= 0) {
                    real s = 0;
                    for (int i = 0; i < HW; ++i) s += pg[i];
                    t.grad(nsh)[static_cast<size_t>(nc)] += s;
                }
            }
        });
    }
    return out;
}

Tensor l2_distance(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "l2_distance");
    const auto &av = a.data(), &bv = b.data();
    real s = 0;
    for (size_t i = 0; i < av.size(); ++i) {
        real dlt = av[i] - bv[i];
        s += dlt * dlt;
    }
    real dist = std::sqrt(s + real(1e-12));
    Tensor out({1}, std::vector<real>{dist});
    check_finite(out, "l2_distance");
    if (Tape* tp = unify_tape({&a, &b})) {
        out.tape = tp;
        int na = a.node, nb = b.node;
        auto as = a.store, bs = b.store;
        int self = static_cast<int>(tp->node_count());
        out.node = tp->add_node(1, [self, na, nb, as, bs, dist](Tape& t) {
            real g = t.grad_of(self)[0] / dist;
            if (na >= 0) {
                auto& da = t.grad(na);
                for (size_t i = 0; i < da.size(); ++i) da[i] += g * ((*as)[i] - (*bs)[i]);
            }
            if (nb >= 0) {
                auto& db = t.grad(nb);
                for (size_t i = 0; i < db.size(); ++i) db[i] -= g * ((*as)[i] - (*bs)[i]);
            }
        });
    }
    return out;
}

Tensor l2_rows_distance(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "l2_rows_distance");
    if (a.ndim() != 2) throw DimError("l2_rows_distance: expected [N,K]");
    const int N = a.dim(0), K = a.dim(1);
    Tensor out({N});
    const auto &av = a.data(), &bv = b.data();
    for (int n = 0; n < N; ++n) {
        real s = 0;
        for (int k = 0; k < K; ++k) {
            real dlt = av[static_cast<size_t>(n) * K + k] - bv[static_cast<size_t>(n) * K + k];
            s += dlt * dlt;
        }
        out.data()[static_cast<size_t>(n)] = std::sqrt(s);  // exact zero for a == b
    }
    check_finite(out, "l2_rows_distance");
    if (Tape* tp = unify_tape({&a, &b})) {
        out.tape = tp;
        int na = a.node, nb = b.node;
        auto as = a.store, bs = b.store, os = out.store;
        int self = static_cast<int>(tp->node_count());
        out.node = tp->add_node(out.numel(), [self, na, nb, as, bs, os, N, K](Tape& t) {
            const auto& g = t.grad_of(self);
            for (int n = 0; n < N; ++n) {
                real gn = g[static_cast<size_t>(n)] /
                          std::max((*os)[static_cast<size_t>(n)], real(1e-12));
                if (gn == 0) continue;
                for (int k = 0; k < K; ++k) {
                    size_t i = static_cast<size_t>(n) * K + k;
                    real dlt = (*as)[i] - (*bs)[i];
                    if (na >= 0) t.grad(na)[i] += gn * dlt;
                    if (nb >= 0) t.grad(nb)[i] -= gn * dlt;
                }
            }
        });
    }
    return out;
}

Tensor dense(const Tensor& x, const Tensor& w, const Tensor& b) {
    if (x.ndim() != 2 || w.ndim() != 2 || b.ndim() != 1) {
        throw DimError("dense: expected x [N,K], w [K,M], b [M]");
    }
    const int N = x.dim(0), K = x.dim(1), M = w.dim(1);
    if (w.dim(0) != K || b.dim(0) != M) {
        throw DimError("dense: inner dims disagree: x " + shape_str(x.shape) + ", w " +
                       shape_str(w.shape) + ", b " + shape_str(b.shape));
    }
    Tensor out({N, M});
    {
        CMapRM xm(x.data().data(), N, K);
        CMapRM wm(w.data().data(), K, M);
        MapRM om(out.data().data(), N, M);
        om.noalias() = xm * wm;
        for (int n = 0; n < N; ++n) {
            for (int m = 0; m < M; ++m) out.data()[static_cast<size_t>(n) * M + m] += b.data()[static_cast<size_t>(m)];
        }
    }
    check_finite(out, "dense");
    if (Tape* tp = unify_tape({&x, &w, &b})) {
        out.tape = tp;
        int nx = x.node, nw = w.node, nb = b.node;
        auto xs = x.store, ws = w.store;
        int self = static_cast<int>(tp->node_count());
        out.node = tp->add_node(out.numel(), [self, nx, nw, nb, xs, ws, N, K, M](Tape& t) {
            const auto& g = t.grad_of(self);
            CMapRM gm(g.data(), N, M);
            if (nx >= 0) {
                MapRM dxm(t.grad(nx).data(), N, K);
                CMapRM wm(ws->data(), K, M);
                dxm.noalias() += gm * wm.transpose();
            }
            if (nw >= 0) {
                MapRM dwm(t.grad(nw).data(), K, M);
                CMapRM xm(xs->data(), N, K);
                dwm.noalias() += xm.transpose() * gm;
            }
            if (nb >= 0) {
                auto& db = t.grad(nb);
                for (int n = 0; n < N; ++n) {
                    for (int m = 0; m < M; ++m) db[static_cast<size_t>(m)] += g[static_cast<size_t>(n) * M + m];
                }
            }
        });
    }
    return out;
}

Tensor global_avg_pool(const Tensor& x) {
    require_nchw(x, "global_avg_pool");
    const int N = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
    Tensor out({N, C});
    const real inv = real(1) / static_cast<real>(HW);
    const auto& xv = x.data();
    auto& ov = out.data();
    for (int64_t nc = 0; nc < static_cast<int64_t>(N) * C; ++nc) {
        const real* px = xv.data() + nc * HW;
        real s = 0;
        for (int i = 0; i < HW; ++i) s += px[i];
        ov[static_cast<size_t>(nc)] = s * inv;
    }
    check_finite(out, "global_avg_pool");
    if (Tape* tp = unify_tape({&x})) {
        out.tape = tp;
        int nx = x.node;
        int self = static_cast<int>(tp->node_count());
        out.node = tp->add_node(out.numel(), [self, nx, N, C, HW, inv](Tape& t) {
            const auto& g = t.grad_of(self);
            auto& dx = t.grad(nx);
            for (int64_t nc = 0; nc < static_cast<int64_t>(N) * C; ++nc) {
                real gv = g[static_cast<size_t>(nc)] * inv;
                real* pd = dx.data() + nc * HW;
                for (int i = 0; i < HW; ++i) pd[i] += gv;
            }
        });
    }
    return out;
}

Tensor softmax_rows(const Tensor& logits) {
    if (logits.ndim() != 2) throw DimError("softmax_rows: expected [N,M]");
    const int N = logits.dim(0), M = logits.dim(1);
    Tensor out(logits.shape);
    const auto& xv = logits.data();
    auto& ov = out.data();
    for (int n = 0; n < N; ++n) {
        const real* px = xv.data() + static_cast<int64_t>(n) * M;
        real* po = ov.data() + static_cast<int64_t>(n) * M;
        real mx = px[0];
        for (int m = 1; m < M; ++m) mx = std::max(mx, px[m]);
        real z = 0;
        for (int m = 0; m < M; ++m) {
            po[m] = std::exp(px[m] - mx);
            z += po[m];
        }
        for (int m = 0; m < M; ++m) po[m] /= z;
    }
    check_finite(out, "softmax_rows");
    if (Tape* tp = unify_tape({&logits})) {
        out.tape = tp;
        int nx = logits.node;
        auto os = out.store;
        int self = static_cast<int>(tp->node_count());
        out.node = tp->add_node(out.numel(), [self, nx, os, N, M](Tape& t) {
            const auto& g = t.grad_of(self);
            auto& dx = t.grad(nx);
            for (int n = 0; n < N; ++n) {
                const real* pp = os->data() + static_cast<int64_t>(n) * M;
                const real* pg = g.data() + static_cast<int64_t>(n) * M;
                real* pd = dx.data() + static_cast<int64_t>(n) * M;
                real dot = 0;
                for (int m = 0; m < M; ++m) dot += pg[m] * pp[m];
                for (int m = 0; m < M; ++m) pd[m] += pp[m] * (pg[m] - dot);
            }
        });
    }
    return out;
}

Tensor softmax_cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
    if (logits.ndim() != 2) throw DimError("softmax_cross_entropy: expected [N,M]");
    const int N = logits.dim(0), M = logits.dim(1);
    if (static_cast<int>(labels.size()) != N) {
        throw DimError("softmax_cross_entropy: " + std::to_string(labels.size()) +
                       " labels for batch of " + std::to_string(N));
    }
    for (int l : labels) {
        if (l < 0 || l >= M) throw ValueError("softmax_cross_entropy: label out of range");
    }
    auto probs = std::make_shared<std::vector<real>>(static_cast<size_t>(N) * M);
    const auto& xv = logits.data();
    real loss = 0;
    for (int n = 0; n < N; ++n) {
        const real* px = xv.data() + static_cast<int64_t>(n) * M;
        real* pp = probs->data() + static_cast<int64_t>(n) * M;
        real mx = px[0];
        for (int m = 1; m < M; ++m) mx = std::max(mx, px[m]);
        real z = 0;
        for (int m = 0; m < M; ++m) {
            pp[m] = std::exp(px[m] - mx);
            z += pp[m];
        }
        real logz = std::log(z);
        for (int m = 0; m < M; ++m) pp[m] /= z;
        loss -= px[labels[static_cast<size_t>(n)]] - mx - logz;
    }
    loss /= static_cast<real>(N);
    Tensor out({1}, std::vector<real>{loss});
    check_finite(out, "softmax_cross_entropy");
    if (Tape* tp = unify_tape({&logits})) {
        out.tape = tp;
        int nx = logits.node;
        auto lbl = std::make_shared<std::vector<int>>(labels);
        int self = static_cast<int>(tp->node_count());
        out.node = tp->add_node(1, [self, nx, probs, lbl, N, M](Tape& t) {
            real g = t.grad_of(self)[0] / static_cast<real>(N);
            auto& dx = t.grad(nx);
            for (int n = 0; n < N; ++n) {
                const real* pp = probs->data() + static_cast<int64_t>(n) * M;
                real* pd = dx.data() + static_cast<int64_t>(n) * M;
                int y = (*lbl)[static_cast<size_t>(n)];
                for (int m = 0; m < M; ++m) pd[m] += g * (pp[m] - (m == y ? 1 : 0));
            }
        });
    }
    return out;
}

Tensor flatten2(const Tensor& x) {
    require_nchw(x, "flatten2");
    Tensor out;
    out.shape = {x.dim(0), x.dim(1) * x.dim(2) * x.dim(3)};
    out.store = x.store;
    if (Tape* tp = unify_tape({&x})) {
        out.tape = tp;
        int nx = x.node;
        int self = static_cast<int>(tp->node_count());
        out.node = tp->add_node(out.numel(), [self, nx](Tape& t) {
            add_into(t.grad(nx), t.grad_of(self));
        });
    }
    return out;
}

}  // namespace umg
