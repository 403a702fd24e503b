#pragma once

#include <vector>

#include "bridgecond/tensor.hpp"

namespace bridgecond {
namespace ops {

// Elementwise
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
Tensor gelu(const Tensor& a);

// x: [m x n], v: [n] or [1 x n], broadcast over rows
Tensor add_row_vector(const Tensor& x, const Tensor& v);

// Matrix products (2-D). matmul_nt(a, b) = a * b^T.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor matmul_nt(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

// Row/column assembly
Tensor slice_rows(const Tensor& x, int r0, int r1);
Tensor slice_cols(const Tensor& x, int c0, int c1);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor concat_cols(const std::vector<Tensor>& parts);

// Reductions
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

// Row-wise softmax over the last axis of a 2-D tensor, max-subtracted.
Tensor softmax(const Tensor& x);

// Per-row normalization over the last axis with affine gamma/beta of size d.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

// softmax(Q K^T / sqrt(d)) V
Tensor scaled_dot_attention(const Tensor& q, const Tensor& k, const Tensor& v);

// x [m x d_in] -> x W^T + b. Pass an undefined Tensor{} to skip the bias.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b = Tensor{});

// base(x) + (alpha/r) * (x A^T) B^T with the base projection frozen.
Tensor lora_linear(const Tensor& x, const Parameter& base_w, const Parameter& a,
                   const Parameter& b, double alpha);

// mean((a-b)^2) over all elements
Tensor mse(const Tensor& a, const Tensor& b);

// mean over rows of -log softmax(logits)[target]
Tensor nll_loss(const Tensor& logits, const std::vector<int>& targets);
// same, restricted to explicit (row, target) pairs
Tensor nll_at(const Tensor& logits, const std::vector<std::pair<int, int>>& row_targets);

// rows of `table` selected by ids; gradient scatter-adds into the table
Tensor embedding_rows(const Tensor& table, const std::vector<int>& ids);

// out flat element i = x flat element idx[i]; used for (un)patchify moves
Tensor gather_flat(const Tensor& x, const std::vector<int>& idx, std::vector<int> out_shape);

void check_finite(const Tensor& t, const char* op_name);

}  // namespace ops
}  // namespace bridgecond
