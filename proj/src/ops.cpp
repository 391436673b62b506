#include "langlab/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <memory>
#include <string>

#include "langlab/error.hpp"

namespace langlab {

namespace {

constexpr double kGeluCoeff = 0.044715;
const double kSqrt2OverPi = std::sqrt(2.0 / 3.14159265358979323846);

bool grad_needed(std::initializer_list<const Tensor*> ts) {
    for (const Tensor* t : ts) {
        if (t->requires_grad()) return true;
    }
    return false;
}

void attach(Tensor& out, const char* op, std::vector<Tensor> inputs,
            std::function<void()> backward) {
    out.set_requires_grad(true);
    auto node = std::make_shared<Node>();
    node->op = op;
    node->inputs = std::move(inputs);
    node->backward = std::move(backward);
    out.impl()->node = std::move(node);
}

size_t last_dim(const Tensor& t) { return t.shape().back(); }

size_t rows_of(const Tensor& t) { return t.numel() / last_dim(t); }

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw ContractError(std::string(op) + ": shape mismatch");
    }
}

// out[N,M] += A[N,K] * B[K,M]
void mm_acc(float* __restrict out, const float* __restrict a, const float* __restrict b,
            size_t n, size_t k_dim, size_t m) {
    for (size_t i = 0; i < n; ++i) {
        const float* arow = a + i * k_dim;
        float* __restrict orow = out + i * m;
        for (size_t k = 0; k < k_dim; ++k) {
            const float av = arow[k];
            if (av == 0.0f) continue;
            const float* brow = b + k * m;
#pragma omp simd
            for (size_t j = 0; j < m; ++j) orow[j] += av * brow[j];
        }
    }
}

// out[N,M] += A[N,K] * B[M,K]^T
void mm_nt_acc(float* __restrict out, const float* __restrict a, const float* __restrict b,
               size_t n, size_t k_dim, size_t m) {
    for (size_t i = 0; i < n; ++i) {
        const float* arow = a + i * k_dim;
        float* __restrict orow = out + i * m;
        for (size_t j = 0; j < m; ++j) {
            const float* brow = b + j * k_dim;
            float acc = 0.0f;
#pragma omp simd reduction(+ : acc)
            for (size_t k = 0; k < k_dim; ++k) acc += arow[k] * brow[k];
            orow[j] += acc;
        }
    }
}

// out[K,M] += A[N,K]^T * B[N,M]
void mm_tn_acc(float* __restrict out, const float* __restrict a, const float* __restrict b,
               size_t n, size_t k_dim, size_t m) {
    for (size_t i = 0; i < n; ++i) {
        const float* arow = a + i * k_dim;
        const float* brow = b + i * m;
        for (size_t k = 0; k < k_dim; ++k) {
            const float av = arow[k];
            if (av == 0.0f) continue;
            float* __restrict orow = out + k * m;
#pragma omp simd
            for (size_t j = 0; j < m; ++j) orow[j] += av * brow[j];
        }
    }
}

}  // namespace

IdBatch IdBatch::from_rows(const std::vector<std::vector<int32_t>>& rows) {
    IdBatch b;
    b.batch = rows.size();
    b.seq = rows.empty() ? 0 : rows[0].size();
    b.ids.reserve(b.batch * b.seq);
    for (const auto& r : rows) {
        if (r.size() != b.seq) throw ContractError("IdBatch: ragged rows");
        b.ids.insert(b.ids.end(), r.begin(), r.end());
    }
    return b;
}

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    Tensor out = Tensor::zeros(a.shape());
    const size_t n = out.numel();
    for (size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] + b.data()[i];
    if (grad_needed({&a, &b})) {
        TensorImpl* o = out.raw();
        attach(out, "add", {a, b}, [a, b, o, n]() mutable {
            const float* g = o->grad.data();
            if (a.requires_grad()) {
                a.ensure_grad();
                for (size_t i = 0; i < n; ++i) a.grad()[i] += g[i];
            }
            if (b.requires_grad()) {
                b.ensure_grad();
                for (size_t i = 0; i < n; ++i) b.grad()[i] += g[i];
            }
        });
    }
    check_finite(out, "add");
    return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "sub");
    Tensor out = Tensor::zeros(a.shape());
    const size_t n = out.numel();
    for (size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] - b.data()[i];
    if (grad_needed({&a, &b})) {
        TensorImpl* o = out.raw();
        attach(out, "sub", {a, b}, [a, b, o, n]() mutable {
            const float* g = o->grad.data();
            if (a.requires_grad()) {
                a.ensure_grad();
                for (size_t i = 0; i < n; ++i) a.grad()[i] += g[i];
            }
            if (b.requires_grad()) {
                b.ensure_grad();
                for (size_t i = 0; i < n; ++i) b.grad()[i] -= g[i];
            }
        });
    }
    check_finite(out, "sub");
    return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mul");
    Tensor out = Tensor::zeros(a.shape());
    const size_t n = out.numel();
    for (size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] * b.data()[i];
    if (grad_needed({&a, &b})) {
        TensorImpl* o = out.raw();
        attach(out, "mul", {a, b}, [a, b, o, n]() mutable {
            const float* g = o->grad.data();
            if (a.requires_grad()) {
                a.ensure_grad();
                for (size_t i = 0; i < n; ++i) a.grad()[i] += g[i] * b.data()[i];
            }
            if (b.requires_grad()) {
                b.ensure_grad();
                for (size_t i = 0; i < n; ++i) b.grad()[i] += g[i] * a.data()[i];
            }
        });
    }
    check_finite(out, "mul");
    return out;
}

Tensor scale(const Tensor& a, double c) {
    Tensor out = Tensor::zeros(a.shape());
    const float cf = static_cast<float>(c);
    const size_t n = out.numel();
    for (size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] * cf;
    if (a.requires_grad()) {
        TensorImpl* o = out.raw();
        attach(out, "scale", {a}, [a, o, cf, n]() mutable {
            const float* g = o->grad.data();
            a.ensure_grad();
            for (size_t i = 0; i < n; ++i) a.grad()[i] += g[i] * cf;
        });
    }
    check_finite(out, "scale");
    return out;
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
    if (bias.rank() != 1 || last_dim(x) != bias.dim(0)) {
        throw ContractError("add_bias: bias must match the last dim of x");
    }
    const size_t d = bias.dim(0);
    const size_t rows = rows_of(x);
    Tensor out = Tensor::zeros(x.shape());
    for (size_t r = 0; r < rows; ++r) {
        const float* xr = x.data() + r * d;
        float* orow = out.data() + r * d;
        for (size_t j = 0; j < d; ++j) orow[j] = xr[j] + bias.data()[j];
    }
    if (grad_needed({&x, &bias})) {
        TensorImpl* o = out.raw();
        attach(out, "add_bias", {x, bias}, [x, bias, o, rows, d]() mutable {
            const float* g = o->grad.data();
            if (x.requires_grad()) {
                x.ensure_grad();
                const size_t n = rows * d;
                for (size_t i = 0; i < n; ++i) x.grad()[i] += g[i];
            }
            if (bias.requires_grad()) {
                bias.ensure_grad();
                for (size_t r = 0; r < rows; ++r) {
                    const float* grow = g + r * d;
                    for (size_t j = 0; j < d; ++j) bias.grad()[j] += grow[j];
                }
            }
        });
    }
    check_finite(out, "add_bias");
    return out;
}

Tensor matmul(const Tensor& a, const Tensor& w) {
    if (w.rank() != 2 || last_dim(a) != w.dim(0)) {
        throw ContractError("matmul: inner dimensions do not match");
    }
    const size_t k_dim = w.dim(0);
    const size_t m = w.dim(1);
    const size_t n = rows_of(a);
    std::vector<size_t> out_shape = a.shape();
    out_shape.back() = m;
    Tensor out = Tensor::zeros(out_shape);
    mm_acc(out.data(), a.data(), w.data(), n, k_dim, m);
    if (grad_needed({&a, &w})) {
        TensorImpl* o = out.raw();
        attach(out, "matmul", {a, w}, [a, w, o, n, k_dim, m]() mutable {
            const float* g = o->grad.data();
            if (a.requires_grad()) {
                a.ensure_grad();
                mm_nt_acc(a.grad().data(), g, w.data(), n, m, k_dim);
            }
            if (w.requires_grad()) {
                w.ensure_grad();
                mm_tn_acc(w.grad().data(), a.data(), g, n, k_dim, m);
            }
        });
    }
    check_finite(out, "matmul");
    return out;
}

Tensor matmul_nt(const Tensor& a, const Tensor& w) {
    if (w.rank() != 2 || last_dim(a) != w.dim(1)) {
        throw ContractError("matmul_nt: inner dimensions do not match");
    }
    const size_t k_dim = w.dim(1);
    const size_t m = w.dim(0);
    const size_t n = rows_of(a);
    std::vector<size_t> out_shape = a.shape();
    out_shape.back() = m;
    Tensor out = Tensor::zeros(out_shape);
    mm_nt_acc(out.data(), a.data(), w.data(), n, k_dim, m);
    if (grad_needed({&a, &w})) {
        TensorImpl* o = out.raw();
        attach(out, "matmul_nt", {a, w}, [a, w, o, n, k_dim, m]() mutable {
            const float* g = o->grad.data();
            if (a.requires_grad()) {
                a.ensure_grad();
                mm_acc(a.grad().data(), g, w.data(), n, m, k_dim);
            }
            if (w.requires_grad()) {
                w.ensure_grad();
                mm_tn_acc(w.grad().data(), g, a.data(), n, m, k_dim);
            }
        });
    }
    check_finite(out, "matmul_nt");
    return out;
}

Tensor embedding(const Tensor& table, const IdBatch& ids) {
    if (table.rank() != 2) throw ContractError("embedding: table must be [V, d]");
    const size_t vocab = table.dim(0);
    const size_t d = table.dim(1);
    for (int32_t id : ids.ids) {
        if (id < 0 || static_cast<size_t>(id) >= vocab) {
            throw ContractError("embedding: id " + std::to_string(id) + " out of range");
        }
    }
    Tensor out = Tensor::zeros({ids.batch, ids.seq, d});
    const size_t rows = ids.batch * ids.seq;
    for (size_t r = 0; r < rows; ++r) {
        std::memcpy(out.data() + r * d, table.data() + static_cast<size_t>(ids.ids[r]) * d,
                    d * sizeof(float));
    }
    if (table.requires_grad()) {
        TensorImpl* o = out.raw();
        auto id_copy = std::make_shared<std::vector<int32_t>>(ids.ids);
        attach(out, "embedding", {table}, [table, o, id_copy, rows, d]() mutable {
            const float* g = o->grad.data();
            table.ensure_grad();
            for (size_t r = 0; r < rows; ++r) {
                float* trow = table.grad().data() + static_cast<size_t>((*id_copy)[r]) * d;
                const float* grow = g + r * d;
                for (size_t j = 0; j < d; ++j) trow[j] += grow[j];
            }
        });
    }
    check_finite(out, "embedding");
    return out;
}

Tensor gather_rows(const Tensor& x, const std::vector<int32_t>& row_idx) {
    if (x.rank() != 3) throw ContractError("gather_rows: x must be [B, T, d]");
    const size_t batch = x.dim(0);
    const size_t seq = x.dim(1);
    const size_t d = x.dim(2);
    if (row_idx.size() != batch) throw ContractError("gather_rows: one index per batch row");
    for (int32_t t : row_idx) {
        if (t < 0 || static_cast<size_t>(t) >= seq) {
            throw ContractError("gather_rows: index out of range");
        }
    }
    Tensor out = Tensor::zeros({batch, d});
    for (size_t b = 0; b < batch; ++b) {
        std::memcpy(out.data() + b * d,
                    x.data() + (b * seq + static_cast<size_t>(row_idx[b])) * d, d * sizeof(float));
    }
    if (x.requires_grad()) {
        TensorImpl* o = out.raw();
        auto idx = std::make_shared<std::vector<int32_t>>(row_idx);
        attach(out, "gather_rows", {x}, [x, o, idx, batch, seq, d]() mutable {
            const float* g = o->grad.data();
            x.ensure_grad();
            for (size_t b = 0; b < batch; ++b) {
                float* xrow = x.grad().data() + (b * seq + static_cast<size_t>((*idx)[b])) * d;
                const float* grow = g + b * d;
                for (size_t j = 0; j < d; ++j) xrow[j] += grow[j];
            }
        });
    }
    check_finite(out, "gather_rows");
    return out;
}

Tensor gelu(const Tensor& x) {
    Tensor out = Tensor::zeros(x.shape());
    const size_t n = out.numel();
    for (size_t i = 0; i < n; ++i) {
        const double v = x.data()[i];
        const double u = kSqrt2OverPi * (v + kGeluCoeff * v * v * v);
        out.data()[i] = static_cast<float>(0.5 * v * (1.0 + std::tanh(u)));
    }
    if (x.requires_grad()) {
        TensorImpl* o = out.raw();
        attach(out, "gelu", {x}, [x, o, n]() mutable {
            const float* g = o->grad.data();
            x.ensure_grad();
            for (size_t i = 0; i < n; ++i) {
                const double v = x.data()[i];
                const double u = kSqrt2OverPi * (v + kGeluCoeff * v * v * v);
                const double t = std::tanh(u);
                const double du = kSqrt2OverPi * (1.0 + 3.0 * kGeluCoeff * v * v);
                const double dydx = 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du;
                x.grad()[i] += g[i] * static_cast<float>(dydx);
            }
        });
    }
    check_finite(out, "gelu");
    return out;
}

Tensor relu(const Tensor& x) {
    Tensor out = Tensor::zeros(x.shape());
    const size_t n = out.numel();
    for (size_t i = 0; i < n; ++i) out.data()[i] = x.data()[i] > 0.0f ? x.data()[i] : 0.0f;
    if (x.requires_grad()) {
        TensorImpl* o = out.raw();
        attach(out, "relu", {x}, [x, o, n]() mutable {
            const float* g = o->grad.data();
            x.ensure_grad();
            for (size_t i = 0; i < n; ++i) {
                if (x.data()[i] > 0.0f) x.grad()[i] += g[i];
            }
        });
    }
    check_finite(out, "relu");
    return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
    const size_t d = last_dim(x);
    if (gain.rank() != 1 || bias.rank() != 1 || gain.dim(0) != d || bias.dim(0) != d) {
        throw ContractError("layer_norm: gain/bias must be [d]");
    }
    const size_t rows = rows_of(x);
    Tensor out = Tensor::zeros(x.shape());
    auto mean = std::make_shared<std::vector<double>>(rows);
    auto rstd = std::make_shared<std::vector<double>>(rows);
    for (size_t r = 0; r < rows; ++r) {
        const float* xr = x.data() + r * d;
        double mu = 0.0;
        for (size_t j = 0; j < d; ++j) mu += xr[j];
        mu /= static_cast<double>(d);
        double var = 0.0;
        for (size_t j = 0; j < d; ++j) {
            const double c = xr[j] - mu;
            var += c * c;
        }
        var /= static_cast<double>(d);
        const double rs = 1.0 / std::sqrt(var + eps);
        (*mean)[r] = mu;
        (*rstd)[r] = rs;
        float* orow = out.data() + r * d;
        for (size_t j = 0; j < d; ++j) {
            const double xhat = (xr[j] - mu) * rs;
            orow[j] = static_cast<float>(xhat * gain.data()[j] + bias.data()[j]);
        }
    }
    if (grad_needed({&x, &gain, &bias})) {
        TensorImpl* o = out.raw();
        attach(out, "layer_norm", {x, gain, bias}, [x, gain, bias, o, mean, rstd, rows, d]() mutable {
            const float* g = o->grad.data();
            const bool dx = x.requires_grad();
            const bool dg = gain.requires_grad();
            const bool db = bias.requires_grad();
            if (dx) x.ensure_grad();
            if (dg) gain.ensure_grad();
            if (db) bias.ensure_grad();
            for (size_t r = 0; r < rows; ++r) {
                const float* xr = x.data() + r * d;
                const float* grow = g + r * d;
                const double mu = (*mean)[r];
                const double rs = (*rstd)[r];
                double sum_dxhat = 0.0;
                double sum_dxhat_xhat = 0.0;
                for (size_t j = 0; j < d; ++j) {
                    const double xhat = (xr[j] - mu) * rs;
                    const double dxhat = static_cast<double>(grow[j]) * gain.data()[j];
                    sum_dxhat += dxhat;
                    sum_dxhat_xhat += dxhat * xhat;
                    if (dg) gain.grad()[j] += static_cast<float>(grow[j] * xhat);
                    if (db) bias.grad()[j] += grow[j];
                }
                if (dx) {
                    const double inv_d = 1.0 / static_cast<double>(d);
                    for (size_t j = 0; j < d; ++j) {
                        const double xhat = (xr[j] - mu) * rs;
                        const double dxhat = static_cast<double>(grow[j]) * gain.data()[j];
                        x.grad()[r * d + j] += static_cast<float>(
                            rs * (dxhat - inv_d * sum_dxhat - xhat * inv_d * sum_dxhat_xhat));
                    }
                }
            }
        });
    }
    check_finite(out, "layer_norm");
    return out;
}

Tensor softmax_rows(const Tensor& x) {
    const size_t d = last_dim(x);
    const size_t rows = rows_of(x);
    Tensor out = Tensor::zeros(x.shape());
    for (size_t r = 0; r < rows; ++r) {
        const float* xr = x.data() + r * d;
        float* orow = out.data() + r * d;
        float mx = xr[0];
        for (size_t j = 1; j < d; ++j) mx = std::max(mx, xr[j]);
        double denom = 0.0;
        for (size_t j = 0; j < d; ++j) {
            const double e = std::exp(static_cast<double>(xr[j]) - mx);
            orow[j] = static_cast<float>(e);
            denom += e;
        }
        const double inv = 1.0 / denom;
        for (size_t j = 0; j < d; ++j) orow[j] = static_cast<float>(orow[j] * inv);
    }
    if (x.requires_grad()) {
        TensorImpl* o = out.raw();
        auto probs = std::make_shared<std::vector<float>>(out.vec());
        attach(out, "softmax_rows", {x}, [x, o, probs, rows, d]() mutable {
            const float* g = o->grad.data();
            x.ensure_grad();
            for (size_t r = 0; r < rows; ++r) {
                const float* p = probs->data() + r * d;
                const float* grow = g + r * d;
                double dot = 0.0;
                for (size_t j = 0; j < d; ++j) dot += static_cast<double>(grow[j]) * p[j];
                for (size_t j = 0; j < d; ++j) {
                    x.grad()[r * d + j] += static_cast<float>(p[j] * (grow[j] - dot));
                }
            }
        });
    }
    check_finite(out, "softmax_rows");
    return out;
}

Tensor attention_core(const Tensor& q, const Tensor& k, const Tensor& v, size_t n_heads) {
    if (q.rank() != 3) throw ContractError("attention_core: inputs must be [B, T, d]");
    require_same_shape(q, k, "attention_core");
    require_same_shape(q, v, "attention_core");
    const size_t batch = q.dim(0);
    const size_t seq = q.dim(1);
    const size_t d = q.dim(2);
    if (n_heads == 0 || d % n_heads != 0) {
        throw ContractError("attention_core: d_model must be divisible by n_heads");
    }
    const size_t hd = d / n_heads;
    const double inv_scale = 1.0 / std::sqrt(static_cast<double>(hd));

    Tensor out = Tensor::zeros(q.shape());
    // Lower-triangular probs, stored dense per (batch, head).
    auto probs = std::make_shared<std::vector<float>>(batch * n_heads * seq * seq, 0.0f);
    const bool needs_grad = grad_needed({&q, &k, &v});

    for (size_t b = 0; b < batch; ++b) {
        for (size_t h = 0; h < n_heads; ++h) {
            float* p_bh = probs->data() + (b * n_heads + h) * seq * seq;
            const size_t col = h * hd;
            for (size_t i = 0; i < seq; ++i) {
                const float* qi = q.data() + (b * seq + i) * d + col;
                float* prow = p_bh + i * seq;
                // scores for j <= i only; masked entries never enter the sums
                float mx = -std::numeric_limits<float>::infinity();
                for (size_t j = 0; j <= i; ++j) {
                    const float* kj = k.data() + (b * seq + j) * d + col;
                    float s = 0.0f;
                    for (size_t c = 0; c < hd; ++c) s += qi[c] * kj[c];
                    s = static_cast<float>(s * inv_scale);
                    prow[j] = s;
                    mx = std::max(mx, s);
                }
                double denom = 0.0;
                for (size_t j = 0; j <= i; ++j) {
                    const double e = std::exp(static_cast<double>(prow[j]) - mx);
                    prow[j] = static_cast<float>(e);
                    denom += e;
                }
                const double inv = 1.0 / denom;
                for (size_t j = 0; j <= i; ++j) prow[j] = static_cast<float>(prow[j] * inv);
                float* orow = out.data() + (b * seq + i) * d + col;
                for (size_t j = 0; j <= i; ++j) {
                    const float pij = prow[j];
                    const float* vj = v.data() + (b * seq + j) * d + col;
                    for (size_t c = 0; c < hd; ++c) orow[c] += pij * vj[c];
                }
            }
        }
    }

    if (needs_grad) {
        TensorImpl* o = out.raw();
        attach(out, "attention_core", {q, k, v},
               [q, k, v, o, probs, batch, seq, d, n_heads, hd, inv_scale]() mutable {
                   const float* g = o->grad.data();
                   q.ensure_grad();
                   k.ensure_grad();
                   v.ensure_grad();
                   std::vector<float> dscore(seq);
                   for (size_t b = 0; b < batch; ++b) {
                       for (size_t h = 0; h < n_heads; ++h) {
                           const float* p_bh = probs->data() + (b * n_heads + h) * seq * seq;
                           const size_t col = h * hd;
                           for (size_t i = 0; i < seq; ++i) {
                               const float* prow = p_bh + i * seq;
                               const float* grow = g + (b * seq + i) * d + col;
                               // dP[i][j] = dout_i . v_j ; dS = P o (dP - sum(dP o P))
                               double dot = 0.0;
                               for (size_t j = 0; j <= i; ++j) {
                                   const float* vj = v.data() + (b * seq + j) * d + col;
                                   float dp = 0.0f;
                                   for (size_t c = 0; c < hd; ++c) dp += grow[c] * vj[c];
                                   dscore[j] = dp;
                                   dot += static_cast<double>(dp) * prow[j];
                               }
                               for (size_t j = 0; j <= i; ++j) {
                                   const float ds = static_cast<float>(
                                       prow[j] * (dscore[j] - dot) * inv_scale);
                                   const float pij = prow[j];
                                   const float* kj = k.data() + (b * seq + j) * d + col;
                                   const float* qi = q.data() + (b * seq + i) * d + col;
                                   float* dqi = q.grad().data() + (b * seq + i) * d + col;
                                   float* dkj = k.grad().data() + (b * seq + j) * d + col;
                                   float* dvj = v.grad().data() + (b * seq + j) * d + col;
                                   for (size_t c = 0; c < hd; ++c) {
                                       dqi[c] += ds * kj[c];
                                       dkj[c] += ds * qi[c];
                                       dvj[c] += pij * grow[c];
                                   }
                               }
                           }
                       }
                   }
               });
    }
    check_finite(out, "attention_core");
    return out;
}

Tensor cross_entropy_rows(const Tensor& logits, const std::vector<int32_t>& targets) {
    const size_t vocab = last_dim(logits);
    const size_t rows = rows_of(logits);
    if (targets.size() != rows) {
        throw ContractError("cross_entropy_rows: one target per logit row");
    }
    size_t counted = 0;
    auto logz = std::make_shared<std::vector<double>>(rows, 0.0);
    double total = 0.0;
    for (size_t r = 0; r < rows; ++r) {
        const int32_t t = targets[r];
        if (t < 0) continue;
        if (static_cast<size_t>(t) >= vocab) {
            throw ContractError("cross_entropy_rows: target out of range");
        }
        const float* zr = logits.data() + r * vocab;
        float mx = zr[0];
        for (size_t j = 1; j < vocab; ++j) mx = std::max(mx, zr[j]);
        double denom = 0.0;
        for (size_t j = 0; j < vocab; ++j) denom += std::exp(static_cast<double>(zr[j]) - mx);
        const double lz = mx + std::log(denom);
        (*logz)[r] = lz;
        total += lz - static_cast<double>(zr[t]);
        ++counted;
    }
    if (counted == 0) throw ContractError("cross_entropy_rows: no counted rows");
    const double mean_loss = total / static_cast<double>(counted);
    Tensor out = Tensor::scalar(static_cast<float>(mean_loss));
    out.impl()->scalar_f64 = mean_loss;
    if (logits.requires_grad()) {
        TensorImpl* o = out.raw();
        auto tgt = std::make_shared<std::vector<int32_t>>(targets);
        attach(out, "cross_entropy", {logits},
               [logits, o, tgt, logz, rows, vocab, counted]() mutable {
                   const float gout = o->grad[0];
                   const float inv_count = 1.0f / static_cast<float>(counted);
                   logits.ensure_grad();
                   for (size_t r = 0; r < rows; ++r) {
                       const int32_t t = (*tgt)[r];
                       if (t < 0) continue;
                       const float* zr = logits.data() + r * vocab;
                       float* gr = logits.grad().data() + r * vocab;
                       const double lz = (*logz)[r];
                       for (size_t j = 0; j < vocab; ++j) {
                           const double p = std::exp(static_cast<double>(zr[j]) - lz);
                           const double onehot = (static_cast<size_t>(t) == j) ? 1.0 : 0.0;
                           gr[j] += static_cast<float>(gout * inv_count * (p - onehot));
                       }
                   }
               });
    }
    check_finite(out, "cross_entropy");
    return out;
}

Tensor sum_scalar(const Tensor& x) {
    double total = 0.0;
    for (float v : x.vec()) total += v;
    Tensor out = Tensor::scalar(static_cast<float>(total));
    out.impl()->scalar_f64 = total;
    if (x.requires_grad()) {
        TensorImpl* o = out.raw();
        attach(out, "sum", {x}, [x, o]() mutable {
            const float g = o->grad[0];
            x.ensure_grad();
            for (auto& gv : x.grad()) gv += g;
        });
    }
    return out;
}

Tensor mean_scalar(const Tensor& x) {
    double total = 0.0;
    for (float v : x.vec()) total += v;
    const double m = total / static_cast<double>(x.numel());
    Tensor out = Tensor::scalar(static_cast<float>(m));
    out.impl()->scalar_f64 = m;
    if (x.requires_grad()) {
        TensorImpl* o = out.raw();
        const float inv = 1.0f / static_cast<float>(x.numel());
        attach(out, "mean", {x}, [x, o, inv]() mutable {
            const float g = o->grad[0] * inv;
            x.ensure_grad();
            for (auto& gv : x.grad()) gv += g;
        });
    }
    return out;
}

Tensor split_half(const Tensor& x, int half) {
    const size_t d = last_dim(x);
    if (d % 2 != 0) throw ConfigError("split_half: last dim must be even");
    if (half != 0 && half != 1) throw ContractError("split_half: half must be 0 or 1");
    const size_t hd = d / 2;
    const size_t rows = rows_of(x);
    std::vector<size_t> out_shape = x.shape();
    out_shape.back() = hd;
    Tensor out = Tensor::zeros(out_shape);
    const size_t off = half == 0 ? 0 : hd;
    for (size_t r = 0; r < rows; ++r) {
        std::memcpy(out.data() + r * hd, x.data() + r * d + off, hd * sizeof(float));
    }
    if (x.requires_grad()) {
        TensorImpl* o = out.raw();
        attach(out, "split_half", {x}, [x, o, rows, d, hd, off]() mutable {
            const float* g = o->grad.data();
            x.ensure_grad();
            for (size_t r = 0; r < rows; ++r) {
                float* xr = x.grad().data() + r * d + off;
                const float* grow = g + r * hd;
                for (size_t j = 0; j < hd; ++j) xr[j] += grow[j];
            }
        });
    }
    return out;
}

Tensor concat_halves(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "concat_halves");
    const size_t hd = last_dim(a);
    const size_t rows = rows_of(a);
    std::vector<size_t> out_shape = a.shape();
    out_shape.back() = 2 * hd;
    Tensor out = Tensor::zeros(out_shape);
    for (size_t r = 0; r < rows; ++r) {
        std::memcpy(out.data() + r * 2 * hd, a.data() + r * hd, hd * sizeof(float));
        std::memcpy(out.data() + r * 2 * hd + hd, b.data() + r * hd, hd * sizeof(float));
    }
    if (grad_needed({&a, &b})) {
        TensorImpl* o = out.raw();
        attach(out, "concat_halves", {a, b}, [a, b, o, rows, hd]() mutable {
            const float* g = o->grad.data();
            if (a.requires_grad()) {
                a.ensure_grad();
                for (size_t r = 0; r < rows; ++r) {
                    const float* grow = g + r * 2 * hd;
                    float* ar = a.grad().data() + r * hd;
                    for (size_t j = 0; j < hd; ++j) ar[j] += grow[j];
                }
            }
            if (b.requires_grad()) {
                b.ensure_grad();
                for (size_t r = 0; r < rows; ++r) {
                    const float* grow = g + r * 2 * hd + hd;
                    float* br = b.grad().data() + r * hd;
                    for (size_t j = 0; j < hd; ++j) br[j] += grow[j];
                }
            }
        });
    }
    return out;
}

}  // namespace langlab
