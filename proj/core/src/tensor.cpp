#include "chaintok/tensor.hpp"

#include <cmath>
#include <cstring>
#include <sstream>
#include <stdexcept>

namespace chaintok {

namespace {

bool g_finite_checks = true;
GradTape* g_active_tape = nullptr;

void check_finite(const char* op, const std::vector<float>& v) {
    if (!g_finite_checks) return;
    for (float x : v) {
        if (!std::isfinite(x)) {
            throw std::runtime_error(std::string(op) + ": non-finite output");
        }
    }
}

[[noreturn]] void shape_error(const char* op, const Shape& a, const Shape& b) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                shape_str(a) + " vs " + shape_str(b));
}

constexpr int kMaxRank = 4;

struct BroadcastPlan {
    int out_shape[kMaxRank];
    size_t a_stride[kMaxRank];
    size_t b_stride[kMaxRank];
    Shape out;
    int64_t n = 1;
};

BroadcastPlan make_broadcast(const char* op, const Shape& a, const Shape& b) {
    if (a.size() > kMaxRank || b.size() > kMaxRank) shape_error(op, a, b);
    BroadcastPlan p;
    int ra = static_cast<int>(a.size()), rb = static_cast<int>(b.size());
    int r = std::max(ra, rb);
    int pa[kMaxRank], pb[kMaxRank];
    for (int i = 0; i < r; ++i) {
        pa[i] = (i >= r - ra) ? a[i - (r - ra)] : 1;
        pb[i] = (i >= r - rb) ? b[i - (r - rb)] : 1;
        if (pa[i] != pb[i] && pa[i] != 1 && pb[i] != 1) shape_error(op, a, b);
        p.out_shape[i] = std::max(pa[i], pb[i]);
    }
    size_t sa = 1, sb = 1;
    for (int i = r - 1; i >= 0; --i) {
        p.a_stride[i] = (pa[i] == 1 && p.out_shape[i] != 1) ? 0 : sa;
        p.b_stride[i] = (pb[i] == 1 && p.out_shape[i] != 1) ? 0 : sb;
        sa *= pa[i];
        sb *= pb[i];
    }
    p.out.assign(p.out_shape, p.out_shape + r);
    p.n = shape_numel(p.out);
    return p;
}

// Visit every output element of a broadcast plan with the matching flat
// input offsets. fn(ia, ib, io).
template <typename Fn>
void for_broadcast(const BroadcastPlan& p, int r, Fn&& fn) {
    int d[kMaxRank] = {0, 0, 0, 0};
    size_t ia = 0, ib = 0;
    for (int64_t io = 0; io < p.n; ++io) {
        fn(ia, ib, static_cast<size_t>(io));
        for (int i = r - 1; i >= 0; --i) {
            ++d[i];
            ia += p.a_stride[i];
            ib += p.b_stride[i];
            if (d[i] < p.out_shape[i]) break;
            ia -= p.a_stride[i] * p.out_shape[i];
            ib -= p.b_stride[i] * p.out_shape[i];
            d[i] = 0;
        }
    }
}

// C[m,n] += A[m,k] * B[k,n]
void gemm_nn(int m, int k, int n, const float* __restrict A,
             const float* __restrict B, float* __restrict C) {
    for (int i = 0; i < m; ++i) {
        const float* a_row = A + static_cast<size_t>(i) * k;
        float* c_row = C + static_cast<size_t>(i) * n;
        for (int p = 0; p < k; ++p) {
            const float av = a_row[p];
            const float* b_row = B + static_cast<size_t>(p) * n;
            for (int j = 0; j < n; ++j) c_row[j] += av * b_row[j];
        }
    }
}

// C[m,n] += A[m,k] * B2[n,k]^T
void gemm_nt(int m, int k, int n, const float* __restrict A,
             const float* __restrict B2, float* __restrict C) {
    for (int i = 0; i < m; ++i) {
        const float* a_row = A + static_cast<size_t>(i) * k;
        float* c_row = C + static_cast<size_t>(i) * n;
        for (int j = 0; j < n; ++j) {
            const float* b_row = B2 + static_cast<size_t>(j) * k;
            float acc = 0.0f;
            for (int p = 0; p < k; ++p) acc += a_row[p] * b_row[p];
            c_row[j] += acc;
        }
    }
}

// C[m,n] += A2[k,m]^T * B[k,n]
void gemm_tn(int m, int k, int n, const float* __restrict A2,
             const float* __restrict B, float* __restrict C) {
    for (int p = 0; p < k; ++p) {
        const float* a_row = A2 + static_cast<size_t>(p) * m;
        const float* b_row = B + static_cast<size_t>(p) * n;
        for (int i = 0; i < m; ++i) {
            const float av = a_row[i];
            float* c_row = C + static_cast<size_t>(i) * n;
            for (int j = 0; j < n; ++j) c_row[j] += av * b_row[j];
        }
    }
}

using Data = std::shared_ptr<TensorData>;

Tensor wrap(Shape shape, std::vector<float> vals) {
    return Tensor::from(std::move(shape), std::move(vals));
}

// Elementwise unary op with pointwise derivative computed from the input.
template <typename FwdFn, typename DrvFn>
Tensor unary_op(const char* name, const Tensor& a, FwdFn fwd, DrvFn drv) {
    const auto& av = a.values();
    std::vector<float> out(av.size());
    for (size_t i = 0; i < av.size(); ++i) out[i] = fwd(av[i]);
    check_finite(name, out);
    Tensor o = wrap(a.shape(), std::move(out));
    if (GradTape::active()) {
        Data ad = a.ptr(), od = o.ptr();
        GradTape::record([ad, od, drv]() {
            const auto& go = od->grad;
            if (go.empty()) return;
            if (ad->grad.empty()) ad->grad.assign(ad->val.size(), 0.0f);
            for (size_t i = 0; i < ad->val.size(); ++i) {
                ad->grad[i] += go[i] * drv(ad->val[i]);
            }
        });
    }
    return o;
}

void ensure_grad_buf(const Data& d) {
    if (d->grad.empty()) d->grad.assign(d->val.size(), 0.0f);
}

bool has_out_grad(const Data& d) { return !d->grad.empty(); }

}  // namespace

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << "]";
    return os.str();
}

int64_t shape_numel(const Shape& s) {
    int64_t n = 1;
    for (int d : s) n *= d;
    return n;
}

// ---- Tensor ---------------------------------------------------------------

Tensor Tensor::zeros(const Shape& shape) {
    return from(shape, std::vector<float>(shape_numel(shape), 0.0f));
}

Tensor Tensor::full(const Shape& shape, float v) {
    return from(shape, std::vector<float>(shape_numel(shape), v));
}

Tensor Tensor::from(const Shape& shape, std::vector<float> values) {
    if (shape_numel(shape) != static_cast<int64_t>(values.size())) {
        throw std::invalid_argument("Tensor::from: " + shape_str(shape) +
                                    " does not hold " +
                                    std::to_string(values.size()) + " values");
    }
    Tensor t;
    t.d_ = std::make_shared<TensorData>();
    t.d_->shape = shape;
    t.d_->val = std::move(values);
    return t;
}

Tensor Tensor::randn(const Shape& shape, Rng& rng, float scale) {
    auto v = rng.normal_vec(static_cast<size_t>(shape_numel(shape)));
    if (scale != 1.0f) {
        for (float& x : v) x *= scale;
    }
    return from(shape, std::move(v));
}

void Tensor::ensure_grad() {
    if (d_->grad.empty()) d_->grad.assign(d_->val.size(), 0.0f);
}

void Tensor::zero_grad() {
    if (d_ && !d_->grad.empty()) std::fill(d_->grad.begin(), d_->grad.end(), 0.0f);
}

float Tensor::item() const {
    if (!d_ || d_->val.size() != 1) {
        throw std::invalid_argument("Tensor::item: not a scalar");
    }
    return d_->val[0];
}

// ---- GradTape --------------------------------------------------------------

GradTape::GradTape() {
    if (g_active_tape) throw std::logic_error("GradTape: nesting not supported");
    g_active_tape = this;
}

GradTape::~GradTape() {
    if (g_active_tape == this) g_active_tape = nullptr;
}

GradTape* GradTape::active() { return g_active_tape; }

void GradTape::record(std::function<void()> fn) {
    if (g_active_tape) g_active_tape->entries_.push_back(std::move(fn));
}

void GradTape::backward(const Tensor& loss) {
    if (!loss.defined() || loss.numel() != 1) {
        throw std::invalid_argument("backward: loss must be a scalar");
    }
    if (entries_.empty()) {
        throw std::runtime_error("backward: tape is empty");
    }
    if (consumed_ && entries_.size() == consumed_at_) {
        throw std::runtime_error("backward: called twice without a new forward pass");
    }
    auto ld = loss.ptr();
    if (ld->grad.empty()) ld->grad.assign(1, 0.0f);
    ld->grad[0] = 1.0f;
    for (size_t i = entries_.size(); i-- > 0;) entries_[i]();
    consumed_ = true;
    consumed_at_ = entries_.size();
}

void GradTape::reset() {
    entries_.clear();
    consumed_ = false;
    consumed_at_ = 0;
}

void set_finite_checks(bool enabled) { g_finite_checks = enabled; }
bool finite_checks_enabled() { return g_finite_checks; }

// ---- elementwise binary ----------------------------------------------------

namespace {

enum class BinKind { Add, Sub, Mul };

/// a has the full output shape and b broadcasts as a contiguous tail block
/// repeated over leading rows (bias adds, gate multiplies). This is the hot
/// layout in the models, worth a direct loop over the generic odometer.
bool tail_broadcast(const Shape& a, const Shape& b) {
    if (shape_numel(b) == 0) return false;
    size_t rb = b.size(), ra = a.size();
    if (rb > ra) return false;
    // b's dims right-align with a, with leading 1s allowed
    size_t lead = 0;
    while (lead < rb && b[lead] == 1) ++lead;
    for (size_t i = lead; i < rb; ++i) {
        if (b[i] != a[ra - rb + i]) return false;
    }
    return true;
}

Tensor binary_op(const char* name, BinKind kind, const Tensor& a, const Tensor& b) {
    const bool fast = tail_broadcast(a.shape(), b.shape());
    BroadcastPlan p = make_broadcast(name, a.shape(), b.shape());
    int r = static_cast<int>(p.out.size());
    std::vector<float> out(static_cast<size_t>(p.n));
    const float* av = a.data();
    const float* bv = b.data();
    if (fast) {
        const size_t bn = static_cast<size_t>(b.numel());
        const size_t n = out.size();
        switch (kind) {
            case BinKind::Add:
                for (size_t i = 0; i < n; ++i) out[i] = av[i] + bv[i % bn];
                break;
            case BinKind::Sub:
                for (size_t i = 0; i < n; ++i) out[i] = av[i] - bv[i % bn];
                break;
            case BinKind::Mul:
                for (size_t i = 0; i < n; ++i) out[i] = av[i] * bv[i % bn];
                break;
        }
    } else {
        switch (kind) {
            case BinKind::Add:
                for_broadcast(p, r,
                              [&](size_t ia, size_t ib, size_t io) { out[io] = av[ia] + bv[ib]; });
                break;
            case BinKind::Sub:
                for_broadcast(p, r,
                              [&](size_t ia, size_t ib, size_t io) { out[io] = av[ia] - bv[ib]; });
                break;
            case BinKind::Mul:
                for_broadcast(p, r,
                              [&](size_t ia, size_t ib, size_t io) { out[io] = av[ia] * bv[ib]; });
                break;
        }
    }
    check_finite(name, out);
    Tensor o = wrap(p.out, std::move(out));
    if (GradTape::active()) {
        Data ad = a.ptr(), bd = b.ptr(), od = o.ptr();
        GradTape::record([ad, bd, od, p, r, kind, fast]() {
            if (!has_out_grad(od)) return;
            ensure_grad_buf(ad);
            ensure_grad_buf(bd);
            const float* go = od->grad.data();
            float* ga = ad->grad.data();
            float* gb = bd->grad.data();
            const float* avv = ad->val.data();
            const float* bvv = bd->val.data();
            if (fast) {
                const size_t bn = bd->val.size();
                const size_t n = od->val.size();
                switch (kind) {
                    case BinKind::Add:
                        for (size_t i = 0; i < n; ++i) {
                            ga[i] += go[i];
                            gb[i % bn] += go[i];
                        }
                        break;
                    case BinKind::Sub:
                        for (size_t i = 0; i < n; ++i) {
                            ga[i] += go[i];
                            gb[i % bn] -= go[i];
                        }
                        break;
                    case BinKind::Mul:
                        for (size_t i = 0; i < n; ++i) {
                            ga[i] += go[i] * bvv[i % bn];
                            gb[i % bn] += go[i] * avv[i];
                        }
                        break;
                }
                return;
            }
            switch (kind) {
                case BinKind::Add:
                    for_broadcast(p, r, [&](size_t ia, size_t ib, size_t io) {
                        ga[ia] += go[io];
                        gb[ib] += go[io];
                    });
                    break;
                case BinKind::Sub:
                    for_broadcast(p, r, [&](size_t ia, size_t ib, size_t io) {
                        ga[ia] += go[io];
                        gb[ib] -= go[io];
                    });
                    break;
                case BinKind::Mul:
                    for_broadcast(p, r, [&](size_t ia, size_t ib, size_t io) {
                        ga[ia] += go[io] * bvv[ib];
                        gb[ib] += go[io] * avv[ia];
                    });
                    break;
            }
        });
    }
    return o;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary_op("add", BinKind::Add, a, b); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary_op("sub", BinKind::Sub, a, b); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary_op("mul", BinKind::Mul, a, b); }

Tensor scale(const Tensor& a, float s) {
    return unary_op("scale", a, [s](float x) { return x * s; }, [s](float) { return s; });
}

Tensor add_scalar(const Tensor& a, float s) {
    return unary_op("add_scalar", a, [s](float x) { return x + s; }, [](float) { return 1.0f; });
}

// ---- matmul ----------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    if (sa.size() < 2 || sa.size() > 3 || sb.size() < 2 || sb.size() > 3) {
        throw std::invalid_argument("matmul: ranks must be 2 or 3, got " +
                                    shape_str(sa) + " x " + shape_str(sb));
    }
    int ba = sa.size() == 3 ? sa[0] : 1;
    int bb = sb.size() == 3 ? sb[0] : 1;
    int m = sa[sa.size() - 2], ka = sa[sa.size() - 1];
    int kb = sb[sb.size() - 2], n = sb[sb.size() - 1];
    if (ka != kb) shape_error("matmul", sa, sb);
    if (ba != bb && ba != 1 && bb != 1) shape_error("matmul", sa, sb);
    int batch = std::max(ba, bb);
    int k = ka;

    Shape out_shape = (sa.size() == 3 || sb.size() == 3)
                          ? Shape{batch, m, n}
                          : Shape{m, n};
    std::vector<float> out(static_cast<size_t>(batch) * m * n, 0.0f);
    const size_t a_bs = (ba == 1) ? 0 : static_cast<size_t>(m) * k;
    const size_t b_bs = (bb == 1) ? 0 : static_cast<size_t>(k) * n;
    for (int bi = 0; bi < batch; ++bi) {
        gemm_nn(m, k, n, a.data() + a_bs * bi, b.data() + b_bs * bi,
                out.data() + static_cast<size_t>(bi) * m * n);
    }
    check_finite("matmul", out);
    Tensor o = wrap(out_shape, std::move(out));
    if (GradTape::active()) {
        Data ad = a.ptr(), bd = b.ptr(), od = o.ptr();
        GradTape::record([ad, bd, od, batch, m, k, n, a_bs, b_bs]() {
            if (!has_out_grad(od)) return;
            ensure_grad_buf(ad);
            ensure_grad_buf(bd);
            for (int bi = 0; bi < batch; ++bi) {
                const float* go = od->grad.data() + static_cast<size_t>(bi) * m * n;
                const float* av = ad->val.data() + a_bs * bi;
                const float* bv = bd->val.data() + b_bs * bi;
                float* ga = ad->grad.data() + a_bs * bi;
                float* gb = bd->grad.data() + b_bs * bi;
                gemm_nt(m, n, k, go, bv, ga);  // dA += dC * B^T
                gemm_tn(k, m, n, av, go, gb);  // dB += A^T * dC
            }
        });
    }
    return o;
}

// ---- transpose / reshape / narrow / concat ---------------------------------

Tensor transpose(const Tensor& a, int d0, int d1) {
    const Shape& s = a.shape();
    int r = static_cast<int>(s.size());
    if (d0 < 0) d0 += r;
    if (d1 < 0) d1 += r;
    if (d0 < 0 || d0 >= r || d1 < 0 || d1 >= r) {
        throw std::invalid_argument("transpose: dims out of range for " + shape_str(s));
    }
    Shape os = s;
    std::swap(os[d0], os[d1]);

    // strides of the input, then permuted to output order
    std::vector<size_t> in_stride(r, 1);
    for (int i = r - 2; i >= 0; --i) in_stride[i] = in_stride[i + 1] * s[i + 1];
    std::vector<size_t> perm_stride(in_stride);
    std::swap(perm_stride[d0], perm_stride[d1]);

    int64_t n = a.numel();
    std::vector<float> out(static_cast<size_t>(n));
    std::vector<int> idx(r, 0);
    const float* av = a.data();
    size_t ia = 0;
    for (int64_t io = 0; io < n; ++io) {
        out[static_cast<size_t>(io)] = av[ia];
        for (int i = r - 1; i >= 0; --i) {
            ++idx[i];
            ia += perm_stride[i];
            if (idx[i] < os[i]) break;
            ia -= perm_stride[i] * os[i];
            idx[i] = 0;
        }
    }
    Tensor o = wrap(os, std::move(out));
    if (GradTape::active()) {
        Data ad = a.ptr(), od = o.ptr();
        GradTape::record([ad, od, os, perm_stride, r]() {
            if (!has_out_grad(od)) return;
            ensure_grad_buf(ad);
            const float* go = od->grad.data();
            float* ga = ad->grad.data();
            std::vector<int> idx2(r, 0);
            size_t ia2 = 0;
            int64_t n2 = static_cast<int64_t>(od->val.size());
            for (int64_t io = 0; io < n2; ++io) {
                ga[ia2] += go[static_cast<size_t>(io)];
                for (int i = r - 1; i >= 0; --i) {
                    ++idx2[i];
                    ia2 += perm_stride[i];
                    if (idx2[i] < os[i]) break;
                    ia2 -= perm_stride[i] * os[i];
                    idx2[i] = 0;
                }
            }
        });
    }
    return o;
}

Tensor reshape(const Tensor& a, Shape new_shape) {
    int64_t known = 1;
    int infer = -1;
    for (size_t i = 0; i < new_shape.size(); ++i) {
        if (new_shape[i] == -1) {
            if (infer >= 0) throw std::invalid_argument("reshape: more than one -1");
            infer = static_cast<int>(i);
        } else {
            known *= new_shape[i];
        }
    }
    if (infer >= 0) {
        if (known == 0 || a.numel() % known != 0) {
            throw std::invalid_argument("reshape: cannot infer extent for " +
                                        shape_str(a.shape()));
        }
        new_shape[infer] = static_cast<int>(a.numel() / known);
    }
    if (shape_numel(new_shape) != a.numel()) {
        shape_error("reshape", a.shape(), new_shape);
    }
    Tensor o = wrap(new_shape, a.values());
    if (GradTape::active()) {
        Data ad = a.ptr(), od = o.ptr();
        GradTape::record([ad, od]() {
            if (!has_out_grad(od)) return;
            ensure_grad_buf(ad);
            for (size_t i = 0; i < ad->grad.size(); ++i) ad->grad[i] += od->grad[i];
        });
    }
    return o;
}

Tensor narrow(const Tensor& a, int dim, int start, int len) {
    const Shape& s = a.shape();
    int r = static_cast<int>(s.size());
    if (dim < 0) dim += r;
    if (dim < 0 || dim >= r || start < 0 || len < 0 || start + len > s[dim]) {
        throw std::invalid_argument("narrow: range [" + std::to_string(start) + "," +
                                    std::to_string(start + len) + ") invalid for " +
                                    shape_str(s));
    }
    size_t inner = 1;
    for (int i = dim + 1; i < r; ++i) inner *= s[i];
    size_t outer = 1;
    for (int i = 0; i < dim; ++i) outer *= s[i];
    Shape os = s;
    os[dim] = len;
    std::vector<float> out(outer * len * inner);
    const float* av = a.data();
    const size_t src_row = static_cast<size_t>(s[dim]) * inner;
    const size_t dst_row = static_cast<size_t>(len) * inner;
    for (size_t ou = 0; ou < outer; ++ou) {
        std::memcpy(out.data() + ou * dst_row, av + ou * src_row + start * inner,
                    dst_row * sizeof(float));
    }
    Tensor o = wrap(os, std::move(out));
    if (GradTape::active()) {
        Data ad = a.ptr(), od = o.ptr();
        GradTape::record([ad, od, outer, inner, start, src_row, dst_row]() {
            if (!has_out_grad(od)) return;
            ensure_grad_buf(ad);
            const float* go = od->grad.data();
            float* ga = ad->grad.data();
            for (size_t ou = 0; ou < outer; ++ou) {
                float* dst = ga + ou * src_row + start * inner;
                const float* src = go + ou * dst_row;
                for (size_t i = 0; i < dst_row; ++i) dst[i] += src[i];
            }
        });
    }
    return o;
}

Tensor concat(const std::vector<Tensor>& parts, int dim) {
    if (parts.empty()) throw std::invalid_argument("concat: no inputs");
    const Shape& s0 = parts[0].shape();
    int r = static_cast<int>(s0.size());
    if (dim < 0) dim += r;
    if (dim < 0 || dim >= r) throw std::invalid_argument("concat: dim out of range");
    int total = 0;
    for (const Tensor& t : parts) {
        const Shape& s = t.shape();
        if (static_cast<int>(s.size()) != r) shape_error("concat", s0, s);
        for (int i = 0; i < r; ++i) {
            if (i != dim && s[i] != s0[i]) shape_error("concat", s0, s);
        }
        total += s[dim];
    }
    Shape os = s0;
    os[dim] = total;
    size_t inner = 1;
    for (int i = dim + 1; i < r; ++i) inner *= s0[i];
    size_t outer = 1;
    for (int i = 0; i < dim; ++i) outer *= s0[i];
    const size_t dst_row = static_cast<size_t>(total) * inner;
    std::vector<float> out(outer * dst_row);
    size_t off = 0;
    for (const Tensor& t : parts) {
        const size_t src_row = static_cast<size_t>(t.shape()[dim]) * inner;
        for (size_t ou = 0; ou < outer; ++ou) {
            std::memcpy(out.data() + ou * dst_row + off, t.data() + ou * src_row,
                        src_row * sizeof(float));
        }
        off += src_row;
    }
    Tensor o = wrap(os, std::move(out));
    if (GradTape::active()) {
        std::vector<Data> pds;
        pds.reserve(parts.size());
        for (const Tensor& t : parts) pds.push_back(t.ptr());
        Data od = o.ptr();
        GradTape::record([pds, od, outer, inner, dim, dst_row]() {
            if (!has_out_grad(od)) return;
            const float* go = od->grad.data();
            size_t off2 = 0;
            for (const Data& pd : pds) {
                ensure_grad_buf(pd);
                const size_t src_row = static_cast<size_t>(pd->shape[dim]) * inner;
                for (size_t ou = 0; ou < outer; ++ou) {
                    float* dst = pd->grad.data() + ou * src_row;
                    const float* src = go + ou * dst_row + off2;
                    for (size_t i = 0; i < src_row; ++i) dst[i] += src[i];
                }
                off2 += src_row;
            }
        });
    }
    return o;
}

// ---- softmax / layer norm ---------------------------------------------------

Tensor softmax(const Tensor& a) {
    const Shape& s = a.shape();
    int c = s.back();
    int64_t rows = a.numel() / c;
    std::vector<float> out(a.numel());
    const float* av = a.data();
    for (int64_t rI = 0; rI < rows; ++rI) {
        const float* x = av + rI * c;
        float* y = out.data() + rI * c;
        float mx = x[0];
        for (int j = 1; j < c; ++j) mx = std::max(mx, x[j]);
        float sum = 0.0f;
        for (int j = 0; j < c; ++j) {
            y[j] = std::exp(x[j] - mx);
            sum += y[j];
        }
        const float inv = 1.0f / sum;
        for (int j = 0; j < c; ++j) y[j] *= inv;
    }
    check_finite("softmax", out);
    Tensor o = wrap(s, std::move(out));
    if (GradTape::active()) {
        Data ad = a.ptr(), od = o.ptr();
        GradTape::record([ad, od, rows, c]() {
            if (!has_out_grad(od)) return;
            ensure_grad_buf(ad);
            const float* y = od->val.data();
            const float* go = od->grad.data();
            float* ga = ad->grad.data();
            for (int64_t rI = 0; rI < rows; ++rI) {
                const float* yr = y + rI * c;
                const float* gr = go + rI * c;
                float* gar = ga + rI * c;
                float dot = 0.0f;
                for (int j = 0; j < c; ++j) dot += gr[j] * yr[j];
                for (int j = 0; j < c; ++j) gar[j] += yr[j] * (gr[j] - dot);
            }
        });
    }
    return o;
}

Tensor layer_norm(const Tensor& a, const Tensor& gain, const Tensor& bias, float eps) {
    const Shape& s = a.shape();
    int c = s.back();
    int64_t rows = a.numel() / c;
    if (gain.defined() && gain.numel() != c) shape_error("layer_norm", s, gain.shape());
    if (bias.defined() && bias.numel() != c) shape_error("layer_norm", s, bias.shape());

    std::vector<float> out(a.numel());
    auto xhat = std::make_shared<std::vector<float>>(a.numel());
    auto rstd = std::make_shared<std::vector<float>>(rows);
    const float* av = a.data();
    const float* gv = gain.defined() ? gain.data() : nullptr;
    const float* bv = bias.defined() ? bias.data() : nullptr;
    for (int64_t rI = 0; rI < rows; ++rI) {
        const float* x = av + rI * c;
        float mean = 0.0f;
        for (int j = 0; j < c; ++j) mean += x[j];
        mean /= c;
        float var = 0.0f;
        for (int j = 0; j < c; ++j) {
            float d = x[j] - mean;
            var += d * d;
        }
        var /= c;
        float rs = 1.0f / std::sqrt(var + eps);
        (*rstd)[rI] = rs;
        float* xh = xhat->data() + rI * c;
        float* y = out.data() + rI * c;
        for (int j = 0; j < c; ++j) {
            xh[j] = (x[j] - mean) * rs;
            y[j] = xh[j];
            if (gv) y[j] *= gv[j];
            if (bv) y[j] += bv[j];
        }
    }
    check_finite("layer_norm", out);
    Tensor o = wrap(s, std::move(out));
    if (GradTape::active()) {
        Data ad = a.ptr(), od = o.ptr();
        Data gd = gain.defined() ? gain.ptr() : nullptr;
        Data bd = bias.defined() ? bias.ptr() : nullptr;
        GradTape::record([ad, od, gd, bd, xhat, rstd, rows, c]() {
            if (!has_out_grad(od)) return;
            ensure_grad_buf(ad);
            if (gd) ensure_grad_buf(gd);
            if (bd) ensure_grad_buf(bd);
            const float* go = od->grad.data();
            float* ga = ad->grad.data();
            const float* gv2 = gd ? gd->val.data() : nullptr;
            for (int64_t rI = 0; rI < rows; ++rI) {
                const float* gr = go + rI * c;
                const float* xh = xhat->data() + rI * c;
                float* gar = ga + rI * c;
                const float rs = (*rstd)[rI];
                float mean_dxh = 0.0f, mean_dxh_xh = 0.0f;
                for (int j = 0; j < c; ++j) {
                    float dxh = gv2 ? gr[j] * gv2[j] : gr[j];
                    mean_dxh += dxh;
                    mean_dxh_xh += dxh * xh[j];
                }
                mean_dxh /= c;
                mean_dxh_xh /= c;
                for (int j = 0; j < c; ++j) {
                    float dxh = gv2 ? gr[j] * gv2[j] : gr[j];
                    gar[j] += rs * (dxh - mean_dxh - xh[j] * mean_dxh_xh);
                }
                if (gd) {
                    for (int j = 0; j < c; ++j) gd->grad[j] += gr[j] * xh[j];
                }
                if (bd) {
                    for (int j = 0; j < c; ++j) bd->grad[j] += gr[j];
                }
            }
        });
    }
    return o;
}

Tensor rms_norm(const Tensor& a, float eps) {
    const Shape& s = a.shape();
    int c = s.back();
    int64_t rows = a.numel() / c;
    std::vector<float> out(a.numel());
    auto rinv = std::make_shared<std::vector<float>>(rows);
    const float* av = a.data();
    for (int64_t rI = 0; rI < rows; ++rI) {
        const float* x = av + rI * c;
        double ms = 0.0;
        for (int j = 0; j < c; ++j) ms += static_cast<double>(x[j]) * x[j];
        const float ri = 1.0f / std::sqrt(static_cast<float>(ms / c) + eps);
        (*rinv)[rI] = ri;
        float* y = out.data() + rI * c;
        for (int j = 0; j < c; ++j) y[j] = x[j] * ri;
    }
    check_finite("rms_norm", out);
    Tensor o = wrap(s, std::move(out));
    if (GradTape::active()) {
        Data ad = a.ptr(), od = o.ptr();
        GradTape::record([ad, od, rinv, rows, c]() {
            if (!has_out_grad(od)) return;
            ensure_grad_buf(ad);
            const float* go = od->grad.data();
            const float* y = od->val.data();
            float* ga = ad->grad.data();
            for (int64_t rI = 0; rI < rows; ++rI) {
                const float* gr = go + rI * c;
                const float* yr = y + rI * c;
                float* gar = ga + rI * c;
                const float ri = (*rinv)[rI];
                float dot = 0.0f;
                for (int j = 0; j < c; ++j) dot += gr[j] * yr[j];
                dot /= c;
                for (int j = 0; j < c; ++j) gar[j] += ri * (gr[j] - yr[j] * dot);
            }
        });
    }
    return o;
}

// ---- activations ------------------------------------------------------------

Tensor gelu(const Tensor& a) {
    constexpr float kC = 0.7978845608028654f;  // sqrt(2/pi)
    constexpr float kA = 0.044715f;
    return unary_op(
        "gelu", a,
        [](float x) {
            float u = kC * (x + kA * x * x * x);
            return 0.5f * x * (1.0f + std::tanh(u));
        },
        [](float x) {
            float u = kC * (x + kA * x * x * x);
            float t = std::tanh(u);
            float du = kC * (1.0f + 3.0f * kA * x * x);
            return 0.5f * (1.0f + t) + 0.5f * x * (1.0f - t * t) * du;
        });
}

Tensor silu(const Tensor& a) {
    return unary_op(
        "silu", a,
        [](float x) { return x / (1.0f + std::exp(-x)); },
        [](float x) {
            float s = 1.0f / (1.0f + std::exp(-x));
            return s * (1.0f + x * (1.0f - s));
        });
}

Tensor tanh_act(const Tensor& a) {
    return unary_op(
        "tanh", a, [](float x) { return std::tanh(x); },
        [](float x) {
            float t = std::tanh(x);
            return 1.0f - t * t;
        });
}

// ---- embedding / losses -------------------------------------------------------

Tensor embedding(const Tensor& table, const std::vector<int>& ids) {
    const Shape& s = table.shape();
    if (s.size() != 2) throw std::invalid_argument("embedding: table must be rank 2");
    int v = s[0], c = s[1];
    for (int id : ids) {
        if (id < 0 || id >= v) {
            throw std::invalid_argument("embedding: id " + std::to_string(id) +
                                        " out of range [0," + std::to_string(v) + ")");
        }
    }
    int n = static_cast<int>(ids.size());
    std::vector<float> out(static_cast<size_t>(n) * c);
    const float* tv = table.data();
    for (int i = 0; i < n; ++i) {
        std::memcpy(out.data() + static_cast<size_t>(i) * c,
                    tv + static_cast<size_t>(ids[i]) * c, c * sizeof(float));
    }
    Tensor o = wrap({n, c}, std::move(out));
    if (GradTape::active()) {
        Data td = table.ptr(), od = o.ptr();
        GradTape::record([td, od, ids, c]() {
            if (!has_out_grad(od)) return;
            ensure_grad_buf(td);
            const float* go = od->grad.data();
            for (size_t i = 0; i < ids.size(); ++i) {
                float* dst = td->grad.data() + static_cast<size_t>(ids[i]) * c;
                const float* src = go + i * c;
                for (int j = 0; j < c; ++j) dst[j] += src[j];
            }
        });
    }
    return o;
}

Tensor cross_entropy(const Tensor& logits, const std::vector<int>& targets,
                     int ignore_index) {
    const Shape& s = logits.shape();
    if (s.size() != 2) throw std::invalid_argument("cross_entropy: logits must be rank 2");
    int n = s[0], v = s[1];
    if (static_cast<int>(targets.size()) != n) {
        throw std::invalid_argument("cross_entropy: " + std::to_string(targets.size()) +
                                    " targets for " + std::to_string(n) + " rows");
    }
    const float* lv = logits.data();
    double loss = 0.0;
    int valid = 0;
    for (int i = 0; i < n; ++i) {
        int t = targets[i];
        if (t == ignore_index) continue;
        if (t < 0 || t >= v) {
            throw std::invalid_argument("cross_entropy: target " + std::to_string(t) +
                                        " out of range [0," + std::to_string(v) + ")");
        }
        const float* x = lv + static_cast<size_t>(i) * v;
        float mx = x[0];
        for (int j = 1; j < v; ++j) mx = std::max(mx, x[j]);
        double sum = 0.0;
        for (int j = 0; j < v; ++j) sum += std::exp(static_cast<double>(x[j]) - mx);
        loss += std::log(sum) + mx - x[t];
        ++valid;
    }
    if (valid == 0) throw std::invalid_argument("cross_entropy: no valid targets");
    std::vector<float> out{static_cast<float>(loss / valid)};
    check_finite("cross_entropy", out);
    Tensor o = wrap({1}, std::move(out));
    if (GradTape::active()) {
        Data ld = logits.ptr(), od = o.ptr();
        GradTape::record([ld, od, targets, ignore_index, n, v, valid]() {
            if (!has_out_grad(od)) return;
            ensure_grad_buf(ld);
            const float g = od->grad[0] / valid;
            const float* lvv = ld->val.data();
            float* gl = ld->grad.data();
            for (int i = 0; i < n; ++i) {
                int t = targets[i];
                if (t == ignore_index) continue;
                const float* x = lvv + static_cast<size_t>(i) * v;
                float* gr = gl + static_cast<size_t>(i) * v;
                float mx = x[0];
                for (int j = 1; j < v; ++j) mx = std::max(mx, x[j]);
                double sum = 0.0;
                for (int j = 0; j < v; ++j) sum += std::exp(static_cast<double>(x[j]) - mx);
                for (int j = 0; j < v; ++j) {
                    float p = static_cast<float>(std::exp(static_cast<double>(x[j]) - mx) / sum);
                    gr[j] += g * (p - (j == t ? 1.0f : 0.0f));
                }
            }
        });
    }
    return o;
}

Tensor mse(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) shape_error("mse", a.shape(), b.shape());
    const float* av = a.data();
    const float* bv = b.data();
    int64_t n = a.numel();
    double acc = 0.0;
    for (int64_t i = 0; i < n; ++i) {
        double d = static_cast<double>(av[i]) - bv[i];
        acc += d * d;
    }
    std::vector<float> out{static_cast<float>(acc / n)};
    check_finite("mse", out);
    Tensor o = wrap({1}, std::move(out));
    if (GradTape::active()) {
        Data ad = a.ptr(), bd = b.ptr(), od = o.ptr();
        GradTape::record([ad, bd, od, n]() {
            if (!has_out_grad(od)) return;
            ensure_grad_buf(ad);
            ensure_grad_buf(bd);
            const float g = od->grad[0] * 2.0f / n;
            for (int64_t i = 0; i < n; ++i) {
                float d = g * (ad->val[i] - bd->val[i]);
                ad->grad[i] += d;
                bd->grad[i] -= d;
            }
        });
    }
    return o;
}

// ---- rotary ------------------------------------------------------------------

Tensor rope(const Tensor& x, const std::vector<int>& positions) {
    const Shape& s = x.shape();
    if (s.size() < 2) throw std::invalid_argument("rope: rank must be >= 2");
    int d = s.back();
    int t = s[s.size() - 2];
    if (d % 2 != 0) throw std::invalid_argument("rope: head dim must be even");
    if (static_cast<int>(positions.size()) != t) {
        throw std::invalid_argument("rope: " + std::to_string(positions.size()) +
                                    " positions for " + std::to_string(t) + " rows");
    }
    int64_t batch = x.numel() / (static_cast<int64_t>(t) * d);
    int half = d / 2;
    std::vector<float> cs(static_cast<size_t>(t) * half), sn(static_cast<size_t>(t) * half);
    for (int ti = 0; ti < t; ++ti) {
        for (int i = 0; i < half; ++i) {
            double freq = std::pow(10000.0, -2.0 * i / d);
            double ang = positions[ti] * freq;
            cs[static_cast<size_t>(ti) * half + i] = static_cast<float>(std::cos(ang));
            sn[static_cast<size_t>(ti) * half + i] = static_cast<float>(std::sin(ang));
        }
    }
    std::vector<float> out(x.numel());
    const float* xv = x.data();
    for (int64_t b = 0; b < batch; ++b) {
        for (int ti = 0; ti < t; ++ti) {
            const float* xr = xv + (b * t + ti) * d;
            float* yr = out.data() + (b * t + ti) * d;
            const float* cr = cs.data() + static_cast<size_t>(ti) * half;
            const float* sr = sn.data() + static_cast<size_t>(ti) * half;
            for (int i = 0; i < half; ++i) {
                float x0 = xr[2 * i], x1 = xr[2 * i + 1];
                yr[2 * i] = x0 * cr[i] - x1 * sr[i];
                yr[2 * i + 1] = x0 * sr[i] + x1 * cr[i];
            }
        }
    }
    check_finite("rope", out);
    Tensor o = wrap(s, std::move(out));
    if (GradTape::active()) {
        Data xd = x.ptr(), od = o.ptr();
        auto cs_p = std::make_shared<std::vector<float>>(std::move(cs));
        auto sn_p = std::make_shared<std::vector<float>>(std::move(sn));
        GradTape::record([xd, od, cs_p, sn_p, batch, t, d, half]() {
            if (!has_out_grad(od)) return;
            ensure_grad_buf(xd);
            const float* go = od->grad.data();
            float* gx = xd->grad.data();
            for (int64_t b = 0; b < batch; ++b) {
                for (int ti = 0; ti < t; ++ti) {
                    const float* gr = go + (b * t + ti) * d;
                    float* gxr = gx + (b * t + ti) * d;
                    const float* cr = cs_p->data() + static_cast<size_t>(ti) * half;
                    const float* sr = sn_p->data() + static_cast<size_t>(ti) * half;
                    for (int i = 0; i < half; ++i) {
                        float g0 = gr[2 * i], g1 = gr[2 * i + 1];
                        gxr[2 * i] += g0 * cr[i] + g1 * sr[i];
                        gxr[2 * i + 1] += -g0 * sr[i] + g1 * cr[i];
                    }
                }
            }
        });
    }
    return o;
}

// ---- reductions ---------------------------------------------------------------

Tensor sum_all(const Tensor& a) {
    double acc = 0.0;
    for (float v : a.values()) acc += v;
    std::vector<float> out{static_cast<float>(acc)};
    check_finite("sum", out);
    Tensor o = wrap({1}, std::move(out));
    if (GradTape::active()) {
        Data ad = a.ptr(), od = o.ptr();
        GradTape::record([ad, od]() {
            if (!has_out_grad(od)) return;
            ensure_grad_buf(ad);
            const float g = od->grad[0];
            for (float& gv : ad->grad) gv += g;
        });
    }
    return o;
}

Tensor mean_all(const Tensor& a) {
    return scale(sum_all(a), 1.0f / static_cast<float>(a.numel()));
}

std::vector<float> sinusoid_features(double t, int dim, double max_period) {
    if (dim % 2 != 0) throw std::invalid_argument("sinusoid_features: dim must be even");
    std::vector<float> out(dim);
    int half = dim / 2;
    // t in [0,1] scaled onto the usual integer-step range so channel
    // frequencies span [1000/max_period, 1000] radians
    const double s = 1000.0 * t;
    for (int i = 0; i < half; ++i) {
        double freq = std::exp(-std::log(max_period) * i / half);
        out[i] = static_cast<float>(std::sin(s * freq));
        out[half + i] = static_cast<float>(std::cos(s * freq));
    }
    return out;
}

Tensor sinusoid_table(int max_pos, int dim) {
    if (dim % 2 != 0) throw std::invalid_argument("sinusoid_table: dim must be even");
    std::vector<float> v(static_cast<size_t>(max_pos) * dim);
    int half = dim / 2;
    for (int p = 0; p < max_pos; ++p) {
        for (int i = 0; i < half; ++i) {
            double freq = std::pow(10000.0, -2.0 * i / dim);
            v[static_cast<size_t>(p) * dim + 2 * i] = static_cast<float>(std::sin(p * freq));
            v[static_cast<size_t>(p) * dim + 2 * i + 1] = static_cast<float>(std::cos(p * freq));
        }
    }
    return Tensor::from({max_pos, dim}, std::move(v));
}

int argmax(const std::vector<float>& v) {
    int best = 0;
    for (size_t i = 1; i < v.size(); ++i) {
        if (v[i] > v[best]) best = static_cast<int>(i);
    }
    return best;
}

}  // namespace chaintok
