#pragma once

#include <vector>

#include "ptu/tensor.hpp"

namespace ptu {

// Deterministic intra-op parallelism: loops are partitioned so each output
// element is written by exactly one thread, so results are bitwise identical
// for any thread count. Default 1.
int compute_threads();
void set_compute_threads(int n);

namespace ops {

// Elementwise (same shape unless noted).
Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scalar_mul(const Tensor& x, double c);
Tensor scalar_add(const Tensor& x, double c);
// [L x D] + [D], broadcast over rows.
Tensor add_rowvec(const Tensor& m, const Tensor& v);

// Dense 2-D linear algebra.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& x);

// Row/column plumbing (2-D).
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor slice_rows(const Tensor& x, int64_t begin, int64_t count);
Tensor concat_cols(const Tensor& a, const Tensor& b);
// out row i = x row rows[i]; gradient scatter-adds into the gathered rows.
Tensor gather_rows(const Tensor& x, const std::vector<int64_t>& rows);

// Nonlinearities and normalization.
Tensor softmax(const Tensor& x, int64_t axis);
// 2-D row softmax where excluded_cols marks key columns that receive zero
// probability. A row with every column excluded is an error.
Tensor masked_row_softmax(const Tensor& x, const std::vector<bool>& excluded_cols);
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);
Tensor gelu(const Tensor& x);
Tensor l2_normalize_rows(const Tensor& x);

// Reductions and losses.
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
// logits [N x V], targets[i] in [0, V). Mean cross-entropy between
// softmax(logits) rows and the target ids; gradient is (p - onehot)/N.
Tensor cross_entropy_logits_mean(const Tensor& logits, const std::vector<int64_t>& targets);

// Fused block-diagonal multi-head self-attention over a packed batch:
// q/k/v are [R x D] with sample s occupying rows [offsets[s], offsets[s+1]).
// Attention never crosses sample boundaries. key_excluded (optional, per
// global row) removes key positions. Cross-checked against the single-head
// attention composition in the backbone module.
Tensor packed_mha(const Tensor& q, const Tensor& k, const Tensor& v,
                  const std::vector<int64_t>& offsets, int64_t heads,
                  const std::vector<bool>& key_excluded = {});

}  // namespace ops
}  // namespace ptu
