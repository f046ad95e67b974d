#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "mrb/ad/tape.hpp"
#include "mrb/ad/tensor.hpp"

// Differentiable operations. The set is closed: every model in the library
// is composed from these and nothing else touches the tape directly.
//
// Binary elementwise ops broadcast their second operand when it is 1x1, a
// single row (1xc) or a single column (rx1).

namespace mrb::ad {

Var matmul(Var a, Var b);
Var transpose(Var a);

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double factor);
Var add_scalar(Var a, double offset);

/// x·W + b with b broadcast over rows.
Var affine(Var x, Var weight, Var bias);

Var tanh(Var a);
/// Exact GELU, x·Φ(x).
Var gelu(Var a);
Var exp(Var a);
/// Natural log; every entry must be strictly positive.
Var log(Var a);

/// Row-wise softmax with max subtraction. Rejects non-finite input.
Var softmax_rows(Var a);
/// Each row divided by its Euclidean norm. Rejects zero rows.
Var l2_normalize_rows(Var a);

Var sum(Var a);
Var mean(Var a);
/// Column means, 1xc.
Var mean_rows(Var a);
/// Means over consecutive row segments of the given lengths; one output row per segment.
Var segment_mean_rows(Var a, std::span<const std::size_t> lengths);

/// Rows of `a` at the given indices (repeats allowed).
Var gather_rows(Var a, std::span<const std::size_t> indices);
Var concat_cols(std::span<const Var> parts);
Var concat_rows(std::span<const Var> parts);

struct BlockAttention {
  Var output;
  /// Row r holds the softmax weights over its own block's keys, left-aligned
  /// and zero-padded to the widest block. Not differentiable.
  Tensor weights;
};

/// Ragged cross-attention: query block b (q_rows[b] rows) attends only to key/value
/// block b (kv_rows[b] rows): softmax(scale·Q_b·K_bᵀ)·V_b, blocks stacked in order.
BlockAttention block_attention(Var q, Var k, Var v, std::span<const std::size_t> q_rows,
                               std::span<const std::size_t> kv_rows, double scale);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }

// Plain tensor kernels shared with non-differentiable code paths.
namespace kernels {
Tensor matmul(const Tensor& a, const Tensor& b);
/// a·bᵀ
Tensor matmul_nt(const Tensor& a, const Tensor& b);
/// aᵀ·b
Tensor matmul_tn(const Tensor& a, const Tensor& b);
Tensor softmax_rows(const Tensor& a);
}  // namespace kernels

}  // namespace mrb::ad
