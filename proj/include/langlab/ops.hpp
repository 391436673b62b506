#pragma once

#include <cstdint>
#include <vector>

#include "langlab/tensor.hpp"

namespace langlab {

// Row-major [batch, seq] token ids.
struct IdBatch {
    size_t batch = 0;
    size_t seq = 0;
    std::vector<int32_t> ids;

    static IdBatch from_rows(const std::vector<std::vector<int32_t>>& rows);
    int32_t at(size_t b, size_t t) const { return ids[b * seq + t]; }
};

// Elementwise / broadcast -------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
// x: [..., d] plus bias [d] broadcast over leading dims.
Tensor add_bias(const Tensor& x, const Tensor& bias);

// Linear algebra ----------------------------------------------------------

// a: [..., K] times w: [K, M] -> [..., M]. Leading dims are flattened.
Tensor matmul(const Tensor& a, const Tensor& w);
// a: [..., K] times transpose(w) where w: [M, K] -> [..., M]. Used for the
// tied LM head (logits = h * wte^T) without materializing a transpose.
Tensor matmul_nt(const Tensor& a, const Tensor& w);

// Lookup ------------------------------------------------------------------

// table: [V, d], ids: [B, T] -> [B, T, d]. Backward scatter-adds into table.
Tensor embedding(const Tensor& table, const IdBatch& ids);
// x: [B, T, d], one row index per batch element -> [B, d].
Tensor gather_rows(const Tensor& x, const std::vector<int32_t>& row_idx);

// Activations / normalization ----------------------------------------------

// tanh-approximation GELU: 0.5x(1 + tanh(sqrt(2/pi)(x + 0.044715 x^3))).
Tensor gelu(const Tensor& x);
Tensor relu(const Tensor& x);
// Per-row layer norm over the last dim, f64 mean/var accumulation.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);
// Softmax over the last dim, f64 denominator.
Tensor softmax_rows(const Tensor& x);

// Attention ----------------------------------------------------------------

// Causal multi-head attention core: softmax(q k^T / sqrt(hd) + causal) v.
// q, k, v: [B, T, d]; masked positions are excluded from the reduction, so
// logits at position t are bitwise independent of tokens after t.
Tensor attention_core(const Tensor& q, const Tensor& k, const Tensor& v, size_t n_heads);

// Losses / reductions --------------------------------------------------------

// logits: [..., V]; targets: one id per row, -1 means "ignore this row".
// Returns mean cross-entropy over counted rows (scalar).
Tensor cross_entropy_rows(const Tensor& logits, const std::vector<int32_t>& targets);
Tensor sum_scalar(const Tensor& x);
Tensor mean_scalar(const Tensor& x);

// Shape ----------------------------------------------------------------------

// x: [..., d] with even d; half 0 is columns [0, d/2), half 1 is [d/2, d).
Tensor split_half(const Tensor& x, int half);
Tensor concat_halves(const Tensor& a, const Tensor& b);

}  // namespace langlab
