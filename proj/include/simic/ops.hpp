#pragma once

#include <utility>
#include <vector>

#include "simic/tensor.hpp"

namespace simic {

// ---- elementwise and shape ops ------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor relu(const Tensor& x);
Tensor tanh_act(const Tensor& x);
Tensor concat(const std::vector<Tensor>& xs, int axis);
Tensor reshape(const Tensor& x, std::vector<int> shape);
Tensor flatten2(const Tensor& x);  // [d0, ...] -> [d0, prod(rest)]
Tensor sum_all(const Tensor& x);   // -> scalar

// Softmax over the last axis, max-subtracted for stability. NaN input is an
// error.
Tensor softmax_lastdim(const Tensor& x);

// ---- dense layers ---------------------------------------------------------

// x [N,din] * w[dout,din]^T + b[dout]; pass an undefined bias to skip it.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);

// Cross-correlation, x [N,C,H,W], w [F,C,kh,kw], b [F] (or undefined).
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int padding);

// Per-channel spatial conv, w [C,1,kh,kw], b [C] (or undefined).
Tensor depthwise_conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride,
                        int padding);

// Depthwise 3x3-style filter followed by a 1x1 pointwise mix; exactly the
// two-step composition. dw [C,1,kh,kw], pw [F,C,1,1], bias on the pointwise.
Tensor depthwise_separable_conv(const Tensor& x, const Tensor& dw, const Tensor& pw,
                                const Tensor& bias, int stride, int padding);

// Batch normalization over [N,C,H,W]. Train mode normalizes by batch
// statistics and updates the running buffers in place; eval mode reads them.
Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  Tensor& running_mean, Tensor& running_var, bool training,
                  double eps = 1e-5, double momentum = 0.1);

Tensor global_avg_pool(const Tensor& x);  // [B,C,H,W] -> [B,C]

// [B,C,H,W] -> [B,H*W,C]: one row-vector per spatial position.
Tensor to_positions(const Tensor& x);

Tensor repeat_rows(const Tensor& row, int n);  // [1,d] -> [n,d]

// Appends x/y coordinate channels in [-1,1]; [B,1,H,W] -> [B,3,H,W].
Tensor add_coord_channels(const Tensor& x);

// ---- attention cores ------------------------------------------------------

// Additive scoring: score_j = u . tanh(qp + kp_j), weights softmaxed over
// positions, z = sum_j alpha_j v_j. qp [B,d] must already carry the query
// projection and kp [B,N,d] the key projection. Returns (z [B,d],
// alpha [B,1,N]); alpha is detached.
std::pair<Tensor, Tensor> additive_attention_core(const Tensor& qp, const Tensor& kp,
                                                  const Tensor& v, const Tensor& u);

// Raw additive scores (no tape); shares the scoring routine with the core.
Tensor additive_attention_scores(const Tensor& qp, const Tensor& kp, const Tensor& u);

// Scaled dot-product attention with `heads` slices of the embedding; inputs
// are the already-projected q [B,d], k [B,N,d], v [B,N,d]. Per head,
// score_j = q_h . k_hj / sqrt(d/heads). Returns (z [B,d], alpha [B,h,N]);
// alpha is detached.
std::pair<Tensor, Tensor> multihead_attention_core(const Tensor& q, const Tensor& k,
                                                   const Tensor& v, int heads);

// ---- losses ---------------------------------------------------------------

// Sum over all elements of the piecewise form: e^2/(2*delta) for |e| <= delta,
// |e| - delta/2 otherwise, with e = pred - target.
Tensor huber_loss(const Tensor& pred, const Tensor& target, double delta);

// ---- raw kernels (shared by ops; exposed for reuse) ------------------------

namespace detail {

// C[m,n] (+)= A[m,k] * B[k,n]
void matmul_nn(const double* a, const double* b, double* c, int m, int k, int n,
               bool accumulate);
// C[m,n] (+)= A[m,k] * B[n,k]^T
void matmul_nt(const double* a, const double* b, double* c, int m, int k, int n,
               bool accumulate);
// C[m,n] (+)= A[k,m]^T * B[k,n]
void matmul_tn(const double* a, const double* b, double* c, int m, int k, int n,
               bool accumulate);

void stable_softmax_row(const double* in, double* out, int n);

}  // namespace detail

}  // namespace simic
