#pragma once

// Dense kernels behind the micro-transformer. Two implementations are kept:
// `kernels::` is the OpenMP-parallel path used everywhere, and
// `kernels::reference::` is a plain serial version kept for tests and the
// benchmark. Parallel kernels split work over output elements only, so each
// output is summed in a fixed order and results do not depend on the thread
// count. Vectorised reductions round differently from the serial loops, so
// the two paths agree to rounding, not bit for bit.

#include <span>
#include <vector>

#include "editlab/tensor.hpp"

namespace editlab::kernels {

/// y = x * w^T. x: [T x in], w: [out x in], y: [T x out] (overwritten).
void matmul_nt(const MatrixD& x, const MatrixF& w, MatrixD& y);

/// dx += dy * w. dy: [T x out], w: [out x in], dx: [T x in].
void matmul_nn_acc(const MatrixD& dy, const MatrixF& w, MatrixD& dx);

/// dw += dy^T * x. dy: [T x out], x: [T x in], dw: [out x in].
void matmul_tn_acc(const MatrixD& dy, const MatrixD& x, MatrixD& dw);

/// Causal multi-head attention over packed [T x d_model] projections.
/// Fills one [T x T] post-softmax matrix per head (future entries are 0)
/// and the concatenated per-head context into ctx.
void causal_attention(const MatrixD& q, const MatrixD& k, const MatrixD& v,
                      std::size_t n_heads, std::vector<MatrixD>& attention,
                      MatrixD& ctx);

/// Deterministic double-accumulated dot product of a float row and a double
/// vector.
double dot(std::span<const float> a, std::span<const double> b);

namespace reference {

void matmul_nt(const MatrixD& x, const MatrixF& w, MatrixD& y);
void matmul_nn_acc(const MatrixD& dy, const MatrixF& w, MatrixD& dx);
void matmul_tn_acc(const MatrixD& dy, const MatrixD& x, MatrixD& dw);
void causal_attention(const MatrixD& q, const MatrixD& k, const MatrixD& v,
                      std::size_t n_heads, std::vector<MatrixD>& attention,
                      MatrixD& ctx);

}  // namespace reference

}  // namespace editlab::kernels
