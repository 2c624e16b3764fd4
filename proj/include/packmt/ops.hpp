#pragma once

// Primitive tensor operations recorded on the tape: matmul, adds, softmax,
// layer norm, embedding lookup, cross entropy, dropout and a few elementwise
// helpers. Inner GEMM loops are delegated to Eigen; every backward rule here
// is hand-written and covered by finite-difference tests.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "packmt/tape.hpp"

namespace packmt {
namespace detail {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using MapConst = Eigen::Map<const RowMat<T>>;

// C (+)= A[m,k] * B[k,n]
template <typename T>
void gemm_ab(const T* a, const T* b, T* c, std::int64_t m, std::int64_t k, std::int64_t n, bool acc) {
    MapConst<T> ma(a, m, k), mb(b, k, n);
    MapMat<T> mc(c, m, n);
    if (acc)
        mc.noalias() += ma * mb;
    else
        mc.noalias() = ma * mb;
}

// C (+)= A[m,k] * B[n,k]^T
template <typename T>
void gemm_abt(const T* a, const T* b, T* c, std::int64_t m, std::int64_t k, std::int64_t n, bool acc) {
    MapConst<T> ma(a, m, k), mb(b, n, k);
    MapMat<T> mc(c, m, n);
    if (acc)
        mc.noalias() += ma * mb.transpose();
    else
        mc.noalias() = ma * mb.transpose();
}

// C (+)= A[m,k]^T * B[m,n], C is [k,n]
template <typename T>
void gemm_atb(const T* a, const T* b, T* c, std::int64_t m, std::int64_t k, std::int64_t n, bool acc) {
    MapConst<T> ma(a, m, k), mb(b, m, n);
    MapMat<T> mc(c, k, n);
    if (acc)
        mc.noalias() += ma.transpose() * mb;
    else
        mc.noalias() = ma.transpose() * mb;
}

inline std::int64_t batch_count(const std::vector<std::int64_t>& shape) {
    std::int64_t b = 1;
    for (std::size_t i = 0; i + 2 < shape.size(); ++i) b *= shape[i];
    return b;
}

}  // namespace detail

namespace ops {

// Matrix product with optional leading batch dimensions on `a` (and on `b`
// when its batch matches; a rank-2 `b` is shared across the batch). With
// trans_b the last two dims of `b` are read as [n,k].
template <typename T>
int matmul(Tape<T>& tape, int a, int b, bool trans_b = false) {
    const auto& av = tape.value(a);
    const auto& bv = tape.value(b);
    if (av.rank() < 2 || bv.rank() < 2)
        throw ContractViolation("matmul: operands must have rank >= 2");
    const std::int64_t m = av.shape[av.shape.size() - 2];
    const std::int64_t k = av.shape[av.shape.size() - 1];
    const std::int64_t bk = trans_b ? bv.shape[bv.shape.size() - 1] : bv.shape[bv.shape.size() - 2];
    const std::int64_t n = trans_b ? bv.shape[bv.shape.size() - 2] : bv.shape[bv.shape.size() - 1];
    if (k != bk)
        throw ContractViolation("matmul: inner dimensions differ: " + shape_str(av.shape) + " x " + shape_str(bv.shape));
    const std::int64_t batches = detail::batch_count(av.shape);
    const std::int64_t b_batches = detail::batch_count(bv.shape);
    if (b_batches != 1 && b_batches != batches)
        throw ContractViolation("matmul: batch dimensions incompatible");

    std::vector<std::int64_t> out_shape(av.shape.begin(), av.shape.end() - 1);
    out_shape.back() = m;
    out_shape.push_back(n);
    Tensor<T> out = Tensor<T>::zeros(out_shape);
    for (std::int64_t i = 0; i < batches; ++i) {
        const T* pa = av.data.data() + i * m * k;
        const T* pb = bv.data.data() + (b_batches == 1 ? 0 : i * n * k);
        T* pc = out.data.data() + i * m * n;
        if (trans_b)
            detail::gemm_abt(pa, pb, pc, m, k, n, false);
        else
            detail::gemm_ab(pa, pb, pc, m, k, n, false);
    }

    auto backward = [m, k, n, batches, b_batches, trans_b](Tape<T>& t, const typename Tape<T>::Node& node) {
        const int ia = node.inputs[0], ib = node.inputs[1];
        const auto& dy = t.adjoint(node.output);
        const auto& va = t.value(ia);
        const auto& vb = t.value(ib);
        if (t.wants_grad(ia)) {
            auto& da = t.adjoint(ia);
            for (std::int64_t i = 0; i < batches; ++i) {
                const T* pdy = dy.data.data() + i * m * n;
                const T* pb = vb.data.data() + (b_batches == 1 ? 0 : i * n * k);
                T* pda = da.data.data() + i * m * k;
                if (trans_b)
                    detail::gemm_ab(pdy, pb, pda, m, n, k, true);   // dA += dY * B
                else
                    detail::gemm_abt(pdy, pb, pda, m, n, k, true);  // dA += dY * B^T
            }
        }
        if (t.wants_grad(ib)) {
            auto& db = t.adjoint(ib);
            for (std::int64_t i = 0; i < batches; ++i) {
                const T* pdy = dy.data.data() + i * m * n;
                const T* pa = va.data.data() + i * m * k;
                T* pdb = db.data.data() + (b_batches == 1 ? 0 : i * n * k);
                if (trans_b)
                    detail::gemm_atb(pdy, pa, pdb, m, n, k, true);  // dB += dY^T * A
                else
                    detail::gemm_atb(pa, pdy, pdb, m, k, n, true);  // dB += A^T * dY
            }
        }
    };
    return tape.push("matmul", {a, b}, std::move(out), std::move(backward));
}

template <typename T>
int add(Tape<T>& tape, int a, int b) {
    const auto& av = tape.value(a);
    const auto& bv = tape.value(b);
    if (!av.same_shape(bv))
        throw ContractViolation("add: shape mismatch " + shape_str(av.shape) + " vs " + shape_str(bv.shape));
    Tensor<T> out = av;
    out.name.clear();
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] += bv[i];
    auto backward = [](Tape<T>& t, const typename Tape<T>::Node& node) {
        const auto& dy = t.adjoint(node.output);
        for (int in : node.inputs) {
            if (!t.wants_grad(in)) continue;
            auto& d = t.adjoint(in);
            for (std::int64_t i = 0; i < dy.numel(); ++i) d[i] += dy[i];
        }
    };
    return tape.push("add", {a, b}, std::move(out), std::move(backward));
}

// x viewed as [rows, d] plus a bias of width d broadcast over the rows.
template <typename T>
int add_bias(Tape<T>& tape, int x, int bias) {
    const auto& xv = tape.value(x);
    const auto& bv = tape.value(bias);
    const std::int64_t d = bv.numel();
    if (xv.numel() % d != 0 || xv.shape.back() != d)
        throw ContractViolation("add_bias: width mismatch");
    const std::int64_t rows = xv.numel() / d;
    Tensor<T> out = xv;
    out.name.clear();
    for (std::int64_t r = 0; r < rows; ++r)
        for (std::int64_t j = 0; j < d; ++j) out[r * d + j] += bv[j];
    auto backward = [rows, d](Tape<T>& t, const typename Tape<T>::Node& node) {
        const auto& dy = t.adjoint(node.output);
        if (t.wants_grad(node.inputs[0])) {
            auto& dx = t.adjoint(node.inputs[0]);
            for (std::int64_t i = 0; i < dy.numel(); ++i) dx[i] += dy[i];
        }
        if (t.wants_grad(node.inputs[1])) {
            auto& db = t.adjoint(node.inputs[1]);
            for (std::int64_t r = 0; r < rows; ++r)
                for (std::int64_t j = 0; j < d; ++j) db[j] += dy[r * d + j];
        }
    };
    return tape.push("add_bias", {x, bias}, std::move(out), std::move(backward));
}

// x [B, L, d] plus the first L rows of a (usually constant) table [Lmax, d],
// broadcast over the leading batch dimension.
template <typename T>
int add_rows(Tape<T>& tape, int x, int table) {
    const auto& xv = tape.value(x);
    const auto& tv = tape.value(table);
    if (xv.rank() != 3 || tv.rank() != 2 || xv.shape[2] != tv.shape[1] || xv.shape[1] > tv.shape[0])
        throw ContractViolation("add_rows: incompatible shapes");
    const std::int64_t B = xv.shape[0], L = xv.shape[1], d = xv.shape[2];
    Tensor<T> out = xv;
    out.name.clear();
    for (std::int64_t b = 0; b < B; ++b)
        for (std::int64_t l = 0; l < L; ++l)
            for (std::int64_t j = 0; j < d; ++j) out[(b * L + l) * d + j] += tv[l * tv.shape[1] + j];
    auto backward = [B, L, d](Tape<T>& t, const typename Tape<T>::Node& node) {
        const auto& dy = t.adjoint(node.output);
        if (t.wants_grad(node.inputs[0])) {
            auto& dx = t.adjoint(node.inputs[0]);
            for (std::int64_t i = 0; i < dy.numel(); ++i) dx[i] += dy[i];
        }
        if (t.wants_grad(node.inputs[1])) {
            auto& dt = t.adjoint(node.inputs[1]);
            const std::int64_t dw = t.value(node.inputs[1]).shape[1];
            for (std::int64_t b = 0; b < B; ++b)
                for (std::int64_t l = 0; l < L; ++l)
                    for (std::int64_t j = 0; j < d; ++j) dt[l * dw + j] += dy[(b * L + l) * d + j];
        }
    };
    return tape.push("add_rows", {x, table}, std::move(out), std::move(backward));
}

// Attention scores [B, H, Lq, Lk] plus an additive mask [B, Lq, Lk]
// broadcast over heads. The mask is expected to be a constant slot.
template <typename T>
int add_attn_mask(Tape<T>& tape, int scores, int mask) {
    const auto& sv = tape.value(scores);
    const auto& mv = tape.value(mask);
    if (sv.rank() != 4 || mv.rank() != 3 || sv.shape[0] != mv.shape[0] || sv.shape[2] != mv.shape[1] ||
        sv.shape[3] != mv.shape[2])
        throw ContractViolation("add_attn_mask: incompatible shapes");
    const std::int64_t B = sv.shape[0], H = sv.shape[1], plane = sv.shape[2] * sv.shape[3];
    Tensor<T> out = sv;
    out.name.clear();
    for (std::int64_t b = 0; b < B; ++b)
        for (std::int64_t h = 0; h < H; ++h)
            for (std::int64_t i = 0; i < plane; ++i) out[(b * H + h) * plane + i] += mv[b * plane + i];
    auto backward = [](Tape<T>& t, const typename Tape<T>::Node& node) {
        if (!t.wants_grad(node.inputs[0])) return;
        const auto& dy = t.adjoint(node.output);
        auto& dx = t.adjoint(node.inputs[0]);
        for (std::int64_t i = 0; i < dy.numel(); ++i) dx[i] += dy[i];
    };
    return tape.push("add_attn_mask", {scores, mask}, std::move(out), std::move(backward));
}

template <typename T>
int scale(Tape<T>& tape, int x, double c) {
    Tensor<T> out = tape.value(x);
    out.name.clear();
    for (auto& v : out.data) v = static_cast<T>(v * c);
    auto backward = [c](Tape<T>& t, const typename Tape<T>::Node& node) {
        if (!t.wants_grad(node.inputs[0])) return;
        const auto& dy = t.adjoint(node.output);
        auto& dx = t.adjoint(node.inputs[0]);
        for (std::int64_t i = 0; i < dy.numel(); ++i) dx[i] += static_cast<T>(dy[i] * c);
    };
    return tape.push("scale", {x}, std::move(out), std::move(backward));
}

template <typename T>
int mul(Tape<T>& tape, int a, int b) {
    const auto& av = tape.value(a);
    const auto& bv = tape.value(b);
    if (!av.same_shape(bv)) throw ContractViolation("mul: shape mismatch");
    Tensor<T> out = av;
    out.name.clear();
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] *= bv[i];
    auto backward = [](Tape<T>& t, const typename Tape<T>::Node& node) {
        const auto& dy = t.adjoint(node.output);
        const auto& va = t.value(node.inputs[0]);
        const auto& vb = t.value(node.inputs[1]);
        if (t.wants_grad(node.inputs[0])) {
            auto& da = t.adjoint(node.inputs[0]);
            for (std::int64_t i = 0; i < dy.numel(); ++i) da[i] += dy[i] * vb[i];
        }
        if (t.wants_grad(node.inputs[1])) {
            auto& db = t.adjoint(node.inputs[1]);
            for (std::int64_t i = 0; i < dy.numel(); ++i) db[i] += dy[i] * va[i];
        }
    };
    return tape.push("mul", {a, b}, std::move(out), std::move(backward));
}

template <typename T>
int relu(Tape<T>& tape, int x) {
    Tensor<T> out = tape.value(x);
    out.name.clear();
    for (auto& v : out.data) v = v > T(0) ? v : T(0);
    auto backward = [](Tape<T>& t, const typename Tape<T>::Node& node) {
        if (!t.wants_grad(node.inputs[0])) return;
        const auto& dy = t.adjoint(node.output);
        const auto& vx = t.value(node.inputs[0]);
        auto& dx = t.adjoint(node.inputs[0]);
        for (std::int64_t i = 0; i < dy.numel(); ++i)
            if (vx[i] > T(0)) dx[i] += dy[i];
    };
    return tape.push("relu", {x}, std::move(out), std::move(backward));
}

// Numerically stable softmax over the last dimension.
template <typename T>
int softmax(Tape<T>& tape, int x) {
    const auto& xv = tape.value(x);
    const std::int64_t n = xv.shape.back();
    const std::int64_t rows = xv.numel() / n;
    Tensor<T> out = Tensor<T>::zeros(xv.shape);
    for (std::int64_t r = 0; r < rows; ++r) {
        const T* in = xv.data.data() + r * n;
        T* o = out.data.data() + r * n;
        T mx = in[0];
        for (std::int64_t j = 1; j < n; ++j) mx = std::max(mx, in[j]);
        T sum = T(0);
        for (std::int64_t j = 0; j < n; ++j) {
            o[j] = std::exp(in[j] - mx);
            sum += o[j];
        }
        const T inv = T(1) / sum;
        for (std::int64_t j = 0; j < n; ++j) o[j] *= inv;
    }
    auto backward = [n, rows](Tape<T>& t, const typename Tape<T>::Node& node) {
        if (!t.wants_grad(node.inputs[0])) return;
        const auto& dy = t.adjoint(node.output);
        const auto& y = t.value(node.output);
        auto& dx = t.adjoint(node.inputs[0]);
        for (std::int64_t r = 0; r < rows; ++r) {
            const T* py = y.data.data() + r * n;
            const T* pdy = dy.data.data() + r * n;
            T* pdx = dx.data.data() + r * n;
            T dot = T(0);
            for (std::int64_t j = 0; j < n; ++j) dot += pdy[j] * py[j];
            for (std::int64_t j = 0; j < n; ++j) pdx[j] += py[j] * (pdy[j] - dot);
        }
    };
    return tape.push("softmax", {x}, std::move(out), std::move(backward));
}

// Layer normalization over the last dimension with learned gain and bias.
template <typename T>
int layer_norm(Tape<T>& tape, int x, int gain, int bias, double eps = 1e-5) {
    const auto& xv = tape.value(x);
    const auto& gv = tape.value(gain);
    const auto& bv = tape.value(bias);
    const std::int64_t d = xv.shape.back();
    if (gv.numel() != d || bv.numel() != d) throw ContractViolation("layer_norm: gain/bias width mismatch");
    const std::int64_t rows = xv.numel() / d;
    Tensor<T> out = Tensor<T>::zeros(xv.shape);
    Tensor<T> xhat = Tensor<T>::zeros(xv.shape);
    std::vector<T> inv_std(static_cast<std::size_t>(rows));
    for (std::int64_t r = 0; r < rows; ++r) {
        const T* in = xv.data.data() + r * d;
        T mean = T(0);
        for (std::int64_t j = 0; j < d; ++j) mean += in[j];
        mean /= static_cast<T>(d);
        T var = T(0);
        for (std::int64_t j = 0; j < d; ++j) {
            const T c = in[j] - mean;
            var += c * c;
        }
        var /= static_cast<T>(d);
        const T istd = T(1) / std::sqrt(var + static_cast<T>(eps));
        inv_std[static_cast<std::size_t>(r)] = istd;
        T* ph = xhat.data.data() + r * d;
        T* po = out.data.data() + r * d;
        for (std::int64_t j = 0; j < d; ++j) {
            ph[j] = (in[j] - mean) * istd;
            po[j] = ph[j] * gv[j] + bv[j];
        }
    }
    auto backward = [d, rows, xhat = std::move(xhat), inv_std = std::move(inv_std)](
                        Tape<T>& t, const typename Tape<T>::Node& node) {
        const auto& dy = t.adjoint(node.output);
        const auto& gv = t.value(node.inputs[1]);
        if (t.wants_grad(node.inputs[1])) {
            auto& dg = t.adjoint(node.inputs[1]);
            for (std::int64_t r = 0; r < rows; ++r)
                for (std::int64_t j = 0; j < d; ++j) dg[j] += dy[r * d + j] * xhat[r * d + j];
        }
        if (t.wants_grad(node.inputs[2])) {
            auto& db = t.adjoint(node.inputs[2]);
            for (std::int64_t r = 0; r < rows; ++r)
                for (std::int64_t j = 0; j < d; ++j) db[j] += dy[r * d + j];
        }
        if (t.wants_grad(node.inputs[0])) {
            auto& dx = t.adjoint(node.inputs[0]);
            for (std::int64_t r = 0; r < rows; ++r) {
                const T* pdy = dy.data.data() + r * d;
                const T* ph = xhat.data.data() + r * d;
                T* pdx = dx.data.data() + r * d;
                T sum_dh = T(0), sum_dh_h = T(0);
                // dh = dy * gain
                for (std::int64_t j = 0; j < d; ++j) {
                    const T dh = pdy[j] * gv[j];
                    sum_dh += dh;
                    sum_dh_h += dh * ph[j];
                }
                const T istd = inv_std[static_cast<std::size_t>(r)];
                const T inv_d = T(1) / static_cast<T>(d);
                for (std::int64_t j = 0; j < d; ++j) {
                    const T dh = pdy[j] * gv[j];
                    pdx[j] += istd * (dh - sum_dh * inv_d - ph[j] * sum_dh_h * inv_d);
                }
            }
        }
    };
    return tape.push("layer_norm", {x, gain, bias}, std::move(out), std::move(backward));
}

// Row gather from an embedding table; ids are validated against the table.
template <typename T>
int embedding(Tape<T>& tape, int table, std::vector<std::int32_t> ids) {
    const auto& tv = tape.value(table);
    if (tv.rank() != 2) throw ContractViolation("embedding: table must be [vocab, dim]");
    const std::int64_t V = tv.shape[0], d = tv.shape[1];
    for (std::int32_t id : ids)
        if (id < 0 || id >= V)
            throw ContractViolation("embedding: token id " + std::to_string(id) + " outside vocabulary of " + std::to_string(V));
    const std::int64_t N = static_cast<std::int64_t>(ids.size());
    Tensor<T> out = Tensor<T>::zeros({N, d});
    for (std::int64_t i = 0; i < N; ++i)
        std::copy_n(tv.data.data() + static_cast<std::int64_t>(ids[static_cast<std::size_t>(i)]) * d, d,
                    out.data.data() + i * d);
    auto backward = [d, ids = std::move(ids)](Tape<T>& t, const typename Tape<T>::Node& node) {
        if (!t.wants_grad(node.inputs[0])) return;
        const auto& dy = t.adjoint(node.output);
        auto& dt = t.adjoint(node.inputs[0]);
        for (std::size_t i = 0; i < ids.size(); ++i) {
            T* row = dt.data.data() + static_cast<std::int64_t>(ids[i]) * d;
            const T* g = dy.data.data() + static_cast<std::int64_t>(i) * d;
            for (std::int64_t j = 0; j < d; ++j) row[j] += g[j];
        }
    };
    return tape.push("embedding", {table}, std::move(out), std::move(backward));
}

// Mean token-level cross entropy with an ignored padding id. Fused
// log-softmax keeps it stable; returns a scalar slot.
template <typename T>
int cross_entropy_mean(Tape<T>& tape, int logits, std::vector<std::int32_t> targets, std::int32_t ignore_id) {
    const auto& lv = tape.value(logits);
    const std::int64_t V = lv.shape.back();
    const std::int64_t N = lv.numel() / V;
    if (static_cast<std::int64_t>(targets.size()) != N)
        throw ContractViolation("cross_entropy: target count mismatch");
    std::int64_t counted = 0;
    Tensor<T> probs = Tensor<T>::zeros({N, V});
    double loss = 0.0;
    for (std::int64_t i = 0; i < N; ++i) {
        const std::int32_t tgt = targets[static_cast<std::size_t>(i)];
        if (tgt == ignore_id) continue;
        if (tgt < 0 || tgt >= V)
            throw ContractViolation("cross_entropy: target id " + std::to_string(tgt) + " outside vocabulary");
        const T* in = lv.data.data() + i * V;
        T* p = probs.data.data() + i * V;
        T mx = in[0];
        for (std::int64_t j = 1; j < V; ++j) mx = std::max(mx, in[j]);
        T sum = T(0);
        for (std::int64_t j = 0; j < V; ++j) {
            p[j] = std::exp(in[j] - mx);
            sum += p[j];
        }
        const T inv = T(1) / sum;
        for (std::int64_t j = 0; j < V; ++j) p[j] *= inv;
        loss += static_cast<double>(std::log(sum)) + static_cast<double>(mx) - static_cast<double>(in[tgt]);
        ++counted;
    }
    if (counted == 0) throw ContractViolation("cross_entropy: every position is padding");
    Tensor<T> out = Tensor<T>::scalar(static_cast<T>(loss / static_cast<double>(counted)));
    auto backward = [V, N, counted, ignore_id, targets = std::move(targets), probs = std::move(probs)](
                        Tape<T>& t, const typename Tape<T>::Node& node) {
        if (!t.wants_grad(node.inputs[0])) return;
        const T up = t.adjoint(node.output)[0];
        auto& dl = t.adjoint(node.inputs[0]);
        const T w = up / static_cast<T>(counted);
        for (std::int64_t i = 0; i < N; ++i) {
            const std::int32_t tgt = targets[static_cast<std::size_t>(i)];
            if (tgt == ignore_id) continue;
            const T* p = probs.data.data() + i * V;
            T* g = dl.data.data() + i * V;
            for (std::int64_t j = 0; j < V; ++j) g[j] += w * p[j];
            g[tgt] -= w;
        }
    };
    return tape.push("cross_entropy", {logits}, std::move(out), std::move(backward));
}

// Inverted dropout with the keep mask drawn from a named stream and kept on
// the tape, so a training step replays bit-identically under the same seed.
template <typename T>
int dropout(Tape<T>& tape, int x, double p, rng::Stream& rs) {
    if (p < 0.0 || p >= 1.0) throw ContractViolation("dropout: p must be in [0,1)");
    const auto& xv = tape.value(x);
    if (p == 0.0) return x;
    std::vector<T> mask(static_cast<std::size_t>(xv.numel()));
    const T keep_scale = static_cast<T>(1.0 / (1.0 - p));
    for (auto& m : mask) m = rs.real01() >= p ? keep_scale : T(0);
    Tensor<T> out = xv;
    out.name.clear();
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] *= mask[static_cast<std::size_t>(i)];
    auto backward = [mask = std::move(mask)](Tape<T>& t, const typename Tape<T>::Node& node) {
        if (!t.wants_grad(node.inputs[0])) return;
        const auto& dy = t.adjoint(node.output);
        auto& dx = t.adjoint(node.inputs[0]);
        for (std::int64_t i = 0; i < dy.numel(); ++i) dx[i] += dy[i] * mask[static_cast<std::size_t>(i)];
    };
    return tape.push("dropout", {x}, std::move(out), std::move(backward));
}

template <typename T>
int reshape(Tape<T>& tape, int x, std::vector<std::int64_t> new_shape) {
    const auto& xv = tape.value(x);
    if (Tensor<T>::numel_of(new_shape) != xv.numel())
        throw ContractViolation("reshape: element count mismatch");
    Tensor<T> out(std::move(new_shape), xv.data);
    auto backward = [](Tape<T>& t, const typename Tape<T>::Node& node) {
        if (!t.wants_grad(node.inputs[0])) return;
        const auto& dy = t.adjoint(node.output);
        auto& dx = t.adjoint(node.inputs[0]);
        for (std::int64_t i = 0; i < dy.numel(); ++i) dx[i] += dy[i];
    };
    return tape.push("reshape", {x}, std::move(out), std::move(backward));
}

// [B, L, H*hd] -> [B, H, L, hd]
template <typename T>
int split_heads(Tape<T>& tape, int x, std::int64_t heads) {
    const auto& xv = tape.value(x);
    if (xv.rank() != 3 || xv.shape[2] % heads != 0) throw ContractViolation("split_heads: bad shape");
    const std::int64_t B = xv.shape[0], L = xv.shape[1], hd = xv.shape[2] / heads;
    Tensor<T> out = Tensor<T>::zeros({B, heads, L, hd});
    for (std::int64_t b = 0; b < B; ++b)
        for (std::int64_t l = 0; l < L; ++l)
            for (std::int64_t h = 0; h < heads; ++h)
                std::copy_n(xv.data.data() + ((b * L + l) * heads + h) * hd, hd,
                            out.data.data() + (((b * heads + h) * L) + l) * hd);
    auto backward = [B, L, heads, hd](Tape<T>& t, const typename Tape<T>::Node& node) {
        if (!t.wants_grad(node.inputs[0])) return;
        const auto& dy = t.adjoint(node.output);
        auto& dx = t.adjoint(node.inputs[0]);
        for (std::int64_t b = 0; b < B; ++b)
            for (std::int64_t l = 0; l < L; ++l)
                for (std::int64_t h = 0; h < heads; ++h) {
                    const T* src = dy.data.data() + (((b * heads + h) * L) + l) * hd;
                    T* dst = dx.data.data() + ((b * L + l) * heads + h) * hd;
                    for (std::int64_t j = 0; j < hd; ++j) dst[j] += src[j];
                }
    };
    return tape.push("split_heads", {x}, std::move(out), std::move(backward));
}

// [B, H, L, hd] -> [B, L, H*hd]
template <typename T>
int merge_heads(Tape<T>& tape, int x) {
    const auto& xv = tape.value(x);
    if (xv.rank() != 4) throw ContractViolation("merge_heads: bad shape");
    const std::int64_t B = xv.shape[0], H = xv.shape[1], L = xv.shape[2], hd = xv.shape[3];
    Tensor<T> out = Tensor<T>::zeros({B, L, H * hd});
    for (std::int64_t b = 0; b < B; ++b)
        for (std::int64_t h = 0; h < H; ++h)
            for (std::int64_t l = 0; l < L; ++l)
                std::copy_n(xv.data.data() + (((b * H + h) * L) + l) * hd, hd,
                            out.data.data() + ((b * L + l) * H + h) * hd);
    auto backward = [B, H, L, hd](Tape<T>& t, const typename Tape<T>::Node& node) {
        if (!t.wants_grad(node.inputs[0])) return;
        const auto& dy = t.adjoint(node.output);
        auto& dx = t.adjoint(node.inputs[0]);
        for (std::int64_t b = 0; b < B; ++b)
            for (std::int64_t h = 0; h < H; ++h)
                for (std::int64_t l = 0; l < L; ++l) {
                    const T* src = dy.data.data() + ((b * L + l) * H + h) * hd;
                    T* dst = dx.data.data() + (((b * H + h) * L) + l) * hd;
                    for (std::int64_t j = 0; j < hd; ++j) dst[j] += src[j];
                }
    };
    return tape.push("merge_heads", {x}, std::move(out), std::move(backward));
}

template <typename T>
int sum_all(Tape<T>& tape, int x) {
    const auto& xv = tape.value(x);
    double s = 0.0;
    for (T v : xv.data) s += static_cast<double>(v);
    auto backward = [](Tape<T>& t, const typename Tape<T>::Node& node) {
        if (!t.wants_grad(node.inputs[0])) return;
        const T up = t.adjoint(node.output)[0];
        auto& dx = t.adjoint(node.inputs[0]);
        for (std::int64_t i = 0; i < dx.numel(); ++i) dx[i] += up;
    };
    return tape.push("sum_all", {x}, Tensor<T>::scalar(static_cast<T>(s)), std::move(backward));
}

}  // namespace ops
}  // namespace packmt
