#include "simic/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>

namespace simic {

namespace detail {

void matmul_nn(const double* a, const double* b, double* c, int m, int k, int n,
               bool accumulate) {
  if (!accumulate) std::fill(c, c + static_cast<std::size_t>(m) * n, 0.0);
  for (int i = 0; i < m; ++i) {
    const double* arow = a + static_cast<std::size_t>(i) * k;
    double* crow = c + static_cast<std::size_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      const double av = arow[p];
      const double* brow = b + static_cast<std::size_t>(p) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

void matmul_nt(const double* a, const double* b, double* c, int m, int k, int n,
               bool accumulate) {
  for (int i = 0; i < m; ++i) {
    const double* arow = a + static_cast<std::size_t>(i) * k;
    double* crow = c + static_cast<std::size_t>(i) * n;
    for (int j = 0; j < n; ++j) {
      const double* brow = b + static_cast<std::size_t>(j) * k;
      double s = 0.0;
      for (int p = 0; p < k; ++p) s += arow[p] * brow[p];
      if (accumulate)
        crow[j] += s;
      else
        crow[j] = s;
    }
  }
}

void matmul_tn(const double* a, const double* b, double* c, int m, int k, int n,
               bool accumulate) {
  if (!accumulate) std::fill(c, c + static_cast<std::size_t>(m) * n, 0.0);
  for (int p = 0; p < k; ++p) {
    const double* arow = a + static_cast<std::size_t>(p) * m;
    const double* brow = b + static_cast<std::size_t>(p) * n;
    for (int i = 0; i < m; ++i) {
      const double av = arow[i];
      double* crow = c + static_cast<std::size_t>(i) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

void stable_softmax_row(const double* in, double* out, int n) {
  double mx = in[0];
  for (int j = 1; j < n; ++j) mx = std::max(mx, in[j]);
  double denom = 0.0;
  for (int j = 0; j < n; ++j) {
    out[j] = std::exp(in[j] - mx);
    denom += out[j];
  }
  for (int j = 0; j < n; ++j) out[j] /= denom;
}

namespace {

void check_defined(const Tensor& t, const char* op, const char* name) {
  if (!t.defined())
    throw std::invalid_argument(std::string(op) + ": " + name + " is undefined");
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                                " vs " + shape_str(b.shape()));
}

// im2col for [C,H,W] -> cols [C*kh*kw, OH*OW]; out-of-range taps read zero.
void im2col(const double* x, int C, int H, int W, int kh, int kw, int stride, int pad, int OH,
            int OW, double* cols) {
  const std::size_t P = static_cast<std::size_t>(OH) * OW;
  for (int c = 0; c < C; ++c) {
    for (int ki = 0; ki < kh; ++ki) {
      for (int kj = 0; kj < kw; ++kj) {
        double* row = cols + (static_cast<std::size_t>((c * kh + ki) * kw) + kj) * P;
        for (int oy = 0; oy < OH; ++oy) {
          const int iy = oy * stride - pad + ki;
          if (iy < 0 || iy >= H) {
            std::fill(row + static_cast<std::size_t>(oy) * OW,
                      row + static_cast<std::size_t>(oy + 1) * OW, 0.0);
            continue;
          }
          const double* xrow = x + (static_cast<std::size_t>(c) * H + iy) * W;
          for (int ox = 0; ox < OW; ++ox) {
            const int ix = ox * stride - pad + kj;
            row[static_cast<std::size_t>(oy) * OW + ox] =
                (ix >= 0 && ix < W) ? xrow[ix] : 0.0;
          }
        }
      }
    }
  }
}

// Scatter-add of cols [C*kh*kw, OH*OW] back onto the input image gradient.
void col2im_accum(const double* cols, int C, int H, int W, int kh, int kw, int stride, int pad,
                  int OH, int OW, double* dx) {
  const std::size_t P = static_cast<std::size_t>(OH) * OW;
  for (int c = 0; c < C; ++c) {
    for (int ki = 0; ki < kh; ++ki) {
      for (int kj = 0; kj < kw; ++kj) {
        const double* row = cols + (static_cast<std::size_t>((c * kh + ki) * kw) + kj) * P;
        for (int oy = 0; oy < OH; ++oy) {
          const int iy = oy * stride - pad + ki;
          if (iy < 0 || iy >= H) continue;
          double* xrow = dx + (static_cast<std::size_t>(c) * H + iy) * W;
          for (int ox = 0; ox < OW; ++ox) {
            const int ix = ox * stride - pad + kj;
            if (ix >= 0 && ix < W) xrow[ix] += row[static_cast<std::size_t>(oy) * OW + ox];
          }
        }
      }
    }
  }
}

int conv_out_dim(int in, int k, int stride, int pad, const char* op) {
  const int out = (in + 2 * pad - k) / stride + 1;
  if (in + 2 * pad < k || out < 1)
    throw std::invalid_argument(std::string(op) + ": kernel " + std::to_string(k) +
                                " does not fit input extent " + std::to_string(in) +
                                " with padding " + std::to_string(pad));
  return out;
}

}  // namespace

}  // namespace detail

using detail::check_defined;
using detail::check_same_shape;

// ---- elementwise and shape ops ------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  check_defined(a, "add", "lhs");
  check_defined(b, "add", "rhs");
  check_same_shape(a, b, "add");
  Tensor out(a.shape());
  const std::size_t n = a.numel();
  for (std::size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] + b.data()[i];
  auto ai = a.impl();
  auto bi = b.impl();
  record(out, {a, b}, [ai, bi, n](const TensorImpl& o) {
    if (ai->requires_grad) {
      ensure_grad(*ai);
      for (std::size_t i = 0; i < n; ++i) ai->grad[i] += o.grad[i];
    }
    if (bi->requires_grad) {
      ensure_grad(*bi);
      for (std::size_t i = 0; i < n; ++i) bi->grad[i] += o.grad[i];
    }
  });
  return out;
}

Tensor relu(const Tensor& x) {
  check_defined(x, "relu", "input");
  Tensor out(x.shape());
  const std::size_t n = x.numel();
  for (std::size_t i = 0; i < n; ++i) out.data()[i] = x.data()[i] > 0.0 ? x.data()[i] : 0.0;
  auto xi = x.impl();
  record(out, {x}, [xi, n](const TensorImpl& o) {
    if (!xi->requires_grad) return;
    ensure_grad(*xi);
    for (std::size_t i = 0; i < n; ++i)
      if (xi->data[i] > 0.0) xi->grad[i] += o.grad[i];
  });
  return out;
}

Tensor tanh_act(const Tensor& x) {
  check_defined(x, "tanh", "input");
  Tensor out(x.shape());
  const std::size_t n = x.numel();
  for (std::size_t i = 0; i < n; ++i) out.data()[i] = std::tanh(x.data()[i]);
  auto xi = x.impl();
  record(out, {x}, [xi, n](const TensorImpl& o) {
    if (!xi->requires_grad) return;
    ensure_grad(*xi);
    for (std::size_t i = 0; i < n; ++i) xi->grad[i] += (1.0 - o.data[i] * o.data[i]) * o.grad[i];
  });
  return out;
}

Tensor concat(const std::vector<Tensor>& xs, int axis) {
  if (xs.empty()) throw std::invalid_argument("concat: no inputs");
  for (const Tensor& t : xs) check_defined(t, "concat", "input");
  const std::vector<int>& ref = xs[0].shape();
  const int nd = static_cast<int>(ref.size());
  if (axis < 0 || axis >= nd)
    throw std::invalid_argument("concat: axis " + std::to_string(axis) +
                                " out of range for rank " + std::to_string(nd));
  int axis_total = 0;
  for (const Tensor& t : xs) {
    if (static_cast<int>(t.shape().size()) != nd)
      throw std::invalid_argument("concat: rank mismatch " + shape_str(ref) + " vs " +
                                  shape_str(t.shape()));
    for (int d = 0; d < nd; ++d)
      if (d != axis && t.shape()[d] != ref[d])
        throw std::invalid_argument("concat: shape mismatch outside axis: " + shape_str(ref) +
                                    " vs " + shape_str(t.shape()));
    axis_total += t.shape()[axis];
  }
  std::vector<int> oshape = ref;
  oshape[axis] = axis_total;

  std::size_t outer = 1, inner = 1;
  for (int d = 0; d < axis; ++d) outer *= static_cast<std::size_t>(ref[d]);
  for (int d = axis + 1; d < nd; ++d) inner *= static_cast<std::size_t>(ref[d]);

  Tensor out(oshape);
  const std::size_t ostride = static_cast<std::size_t>(axis_total) * inner;
  std::size_t off = 0;
  std::vector<std::size_t> in_strides;  // per input: axis-span in elements
  for (const Tensor& t : xs) {
    const std::size_t span = static_cast<std::size_t>(t.shape()[axis]) * inner;
    in_strides.push_back(span);
    for (std::size_t blk = 0; blk < outer; ++blk)
      std::copy(t.data() + blk * span, t.data() + (blk + 1) * span,
                out.data() + blk * ostride + off);
    off += span;
  }

  std::vector<std::shared_ptr<TensorImpl>> impls;
  for (const Tensor& t : xs) impls.push_back(t.impl());
  record(out, xs, [impls, in_strides, outer, ostride](const TensorImpl& o) {
    std::size_t off2 = 0;
    for (std::size_t t = 0; t < impls.size(); ++t) {
      const std::size_t span = in_strides[t];
      if (impls[t]->requires_grad) {
        ensure_grad(*impls[t]);
        for (std::size_t blk = 0; blk < outer; ++blk) {
          const double* src = o.grad.data() + blk * ostride + off2;
          double* dst = impls[t]->grad.data() + blk * span;
          for (std::size_t i = 0; i < span; ++i) dst[i] += src[i];
        }
      }
      off2 += span;
    }
  });
  return out;
}

Tensor reshape(const Tensor& x, std::vector<int> shape) {
  check_defined(x, "reshape", "input");
  const std::size_t want = shape_numel(shape);
  if (want != x.numel())
    throw std::invalid_argument("reshape: cannot view " + shape_str(x.shape()) + " as " +
                                shape_str(shape) + " (element count differs)");
  Tensor out(std::move(shape));
  std::copy(x.data(), x.data() + x.numel(), out.data());
  auto xi = x.impl();
  const std::size_t n = x.numel();
  record(out, {x}, [xi, n](const TensorImpl& o) {
    if (!xi->requires_grad) return;
    ensure_grad(*xi);
    for (std::size_t i = 0; i < n; ++i) xi->grad[i] += o.grad[i];
  });
  return out;
}

Tensor flatten2(const Tensor& x) {
  check_defined(x, "flatten", "input");
  if (x.shape().empty()) throw std::invalid_argument("flatten: input has rank 0");
  int rest = 1;
  for (std::size_t d = 1; d < x.shape().size(); ++d) rest *= x.shape()[d];
  return reshape(x, {x.shape()[0], rest});
}

Tensor sum_all(const Tensor& x) {
  check_defined(x, "sum", "input");
  Tensor out({1});
  double s = 0.0;
  const std::size_t n = x.numel();
  for (std::size_t i = 0; i < n; ++i) s += x.data()[i];
  out.data()[0] = s;
  auto xi = x.impl();
  record(out, {x}, [xi, n](const TensorImpl& o) {
    if (!xi->requires_grad) return;
    ensure_grad(*xi);
    const double g = o.grad[0];
    for (std::size_t i = 0; i < n; ++i) xi->grad[i] += g;
  });
  return out;
}

Tensor softmax_lastdim(const Tensor& x) {
  check_defined(x, "softmax", "input");
  if (x.shape().empty()) throw std::invalid_argument("softmax: input has rank 0");
  const int n = x.shape().back();
  const std::size_t rows = x.numel() / static_cast<std::size_t>(n);
  for (std::size_t i = 0; i < x.numel(); ++i)
    if (std::isnan(x.data()[i])) throw std::invalid_argument("softmax: NaN in input");
  Tensor out(x.shape());
  for (std::size_t r = 0; r < rows; ++r)
    detail::stable_softmax_row(x.data() + r * n, out.data() + r * n, n);
  auto xi = x.impl();
  record(out, {x}, [xi, rows, n](const TensorImpl& o) {
    if (!xi->requires_grad) return;
    ensure_grad(*xi);
    for (std::size_t r = 0; r < rows; ++r) {
      const double* y = o.data.data() + r * n;
      const double* dy = o.grad.data() + r * n;
      double dot = 0.0;
      for (int j = 0; j < n; ++j) dot += y[j] * dy[j];
      double* dx = xi->grad.data() + r * n;
      for (int j = 0; j < n; ++j) dx[j] += y[j] * (dy[j] - dot);
    }
  });
  return out;
}

// ---- dense layers ---------------------------------------------------------

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  check_defined(x, "linear", "input");
  check_defined(w, "linear", "weight");
  if (x.ndim() != 2 || w.ndim() != 2)
    throw std::invalid_argument("linear: expected 2-d input and weight, got " +
                                shape_str(x.shape()) + " and " + shape_str(w.shape()));
  const int N = x.shape()[0], din = x.shape()[1];
  const int dout = w.shape()[0];
  if (w.shape()[1] != din)
    throw std::invalid_argument("linear: weight " + shape_str(w.shape()) +
                                " does not match input feature size " + std::to_string(din));
  if (b.defined() && (b.ndim() != 1 || b.shape()[0] != dout))
    throw std::invalid_argument("linear: bias " + shape_str(b.shape()) + " does not match " +
                                std::to_string(dout) + " outputs");

  Tensor out({N, dout});
  detail::matmul_nt(x.data(), w.data(), out.data(), N, din, dout, false);
  if (b.defined())
    for (int i = 0; i < N; ++i)
      for (int j = 0; j < dout; ++j) out.data()[static_cast<std::size_t>(i) * dout + j] +=
          b.data()[j];

  auto xi = x.impl();
  auto wi = w.impl();
  auto bi = b.defined() ? b.impl() : nullptr;
  std::vector<Tensor> ins = {x, w};
  if (b.defined()) ins.push_back(b);
  record(out, ins, [xi, wi, bi, N, din, dout](const TensorImpl& o) {
    if (xi->requires_grad) {
      ensure_grad(*xi);
      detail::matmul_nn(o.grad.data(), wi->data.data(), xi->grad.data(), N, dout, din, true);
    }
    if (wi->requires_grad) {
      ensure_grad(*wi);
      detail::matmul_tn(o.grad.data(), xi->data.data(), wi->grad.data(), dout, N, din, true);
    }
    if (bi && bi->requires_grad) {
      ensure_grad(*bi);
      for (int i = 0; i < N; ++i)
        for (int j = 0; j < dout; ++j)
          bi->grad[j] += o.grad[static_cast<std::size_t>(i) * dout + j];
    }
  });
  return out;
}

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int padding) {
  check_defined(x, "conv2d", "input");
  check_defined(w, "conv2d", "weight");
  if (x.ndim() != 4 || w.ndim() != 4)
    throw std::invalid_argument("conv2d: expected 4-d input and weight, got " +
                                shape_str(x.shape()) + " and " + shape_str(w.shape()));
  if (stride < 1) throw std::invalid_argument("conv2d: stride must be >= 1");
  if (padding < 0) throw std::invalid_argument("conv2d: padding must be >= 0");
  const int N = x.shape()[0], C = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
  const int F = w.shape()[0], kh = w.shape()[2], kw = w.shape()[3];
  if (w.shape()[1] != C)
    throw std::invalid_argument("conv2d: weight expects " + std::to_string(w.shape()[1]) +
                                " input channels, input has " + std::to_string(C));
  if (b.defined() && (b.ndim() != 1 || b.shape()[0] != F))
    throw std::invalid_argument("conv2d: bias " + shape_str(b.shape()) + " does not match " +
                                std::to_string(F) + " filters");
  const int OH = detail::conv_out_dim(H, kh, stride, padding, "conv2d");
  const int OW = detail::conv_out_dim(W, kw, stride, padding, "conv2d");

  const int K = C * kh * kw;
  const std::size_t P = static_cast<std::size_t>(OH) * OW;
  Tensor out({N, F, OH, OW});

  // Patch matrices are kept for the whole batch so backward can reuse them.
  auto cols = std::make_shared<std::vector<double>>(static_cast<std::size_t>(N) * K * P);
  const std::size_t x_stride = static_cast<std::size_t>(C) * H * W;
  const std::size_t o_stride = static_cast<std::size_t>(F) * P;
  for (int n = 0; n < N; ++n) {
    double* cn = cols->data() + static_cast<std::size_t>(n) * K * P;
    detail::im2col(x.data() + n * x_stride, C, H, W, kh, kw, stride, padding, OH, OW, cn);
    detail::matmul_nn(w.data(), cn, out.data() + n * o_stride, F, K, static_cast<int>(P),
                      false);
  }
  if (b.defined())
    for (int n = 0; n < N; ++n)
      for (int f = 0; f < F; ++f) {
        double* orow = out.data() + n * o_stride + static_cast<std::size_t>(f) * P;
        const double bv = b.data()[f];
        for (std::size_t p = 0; p < P; ++p) orow[p] += bv;
      }

  auto xi = x.impl();
  auto wi = w.impl();
  auto bi = b.defined() ? b.impl() : nullptr;
  std::vector<Tensor> ins = {x, w};
  if (b.defined()) ins.push_back(b);
  record(out, ins,
         [xi, wi, bi, cols, N, C, H, W, F, kh, kw, stride, padding, OH, OW, K, P, x_stride,
          o_stride](const TensorImpl& o) {
           std::vector<double> dcols(static_cast<std::size_t>(K) * P);
           for (int n = 0; n < N; ++n) {
             const double* don = o.grad.data() + n * o_stride;
             const double* cn = cols->data() + static_cast<std::size_t>(n) * K * P;
             if (bi && bi->requires_grad) {
               ensure_grad(*bi);
               for (int f = 0; f < F; ++f) {
                 double s = 0.0;
                 const double* row = don + static_cast<std::size_t>(f) * P;
                 for (std::size_t p = 0; p < P; ++p) s += row[p];
                 bi->grad[f] += s;
               }
             }
             if (wi->requires_grad) {
               ensure_grad(*wi);
               detail::matmul_nt(don, cn, wi->grad.data(), F, static_cast<int>(P), K, true);
             }
             if (xi->requires_grad) {
               ensure_grad(*xi);
               detail::matmul_tn(wi->data.data(), don, dcols.data(), K, F,
                                 static_cast<int>(P), false);
               detail::col2im_accum(dcols.data(), C, H, W, kh, kw, stride, padding, OH, OW,
                                    xi->grad.data() + n * x_stride);
             }
           }
         });
  return out;
}

Tensor depthwise_conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride,
                        int padding) {
  check_defined(x, "depthwise_conv2d", "input");
  check_defined(w, "depthwise_conv2d", "weight");
  if (x.ndim() != 4 || w.ndim() != 4)
    throw std::invalid_argument("depthwise_conv2d: expected 4-d input and weight, got " +
                                shape_str(x.shape()) + " and " + shape_str(w.shape()));
  if (stride < 1) throw std::invalid_argument("depthwise_conv2d: stride must be >= 1");
  if (padding < 0) throw std::invalid_argument("depthwise_conv2d: padding must be >= 0");
  const int N = x.shape()[0], C = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
  const int kh = w.shape()[2], kw = w.shape()[3];
  if (w.shape()[0] != C || w.shape()[1] != 1)
    throw std::invalid_argument("depthwise_conv2d: weight must be [" + std::to_string(C) +
                                ",1,kh,kw], got " + shape_str(w.shape()));
  if (b.defined() && (b.ndim() != 1 || b.shape()[0] != C))
    throw std::invalid_argument("depthwise_conv2d: bias " + shape_str(b.shape()) +
                                " does not match " + std::to_string(C) + " channels");
  const int OH = detail::conv_out_dim(H, kh, stride, padding, "depthwise_conv2d");
  const int OW = detail::conv_out_dim(W, kw, stride, padding, "depthwise_conv2d");

  Tensor out({N, C, OH, OW});
  const std::size_t plane_in = static_cast<std::size_t>(H) * W;
  const std::size_t plane_out = static_cast<std::size_t>(OH) * OW;
  for (int n = 0; n < N; ++n) {
    for (int c = 0; c < C; ++c) {
      const double* xp = x.data() + (static_cast<std::size_t>(n) * C + c) * plane_in;
      const double* wp = w.data() + static_cast<std::size_t>(c) * kh * kw;
      double* op = out.data() + (static_cast<std::size_t>(n) * C + c) * plane_out;
      const double bv = b.defined() ? b.data()[c] : 0.0;
      for (int oy = 0; oy < OH; ++oy) {
        for (int ox = 0; ox < OW; ++ox) {
          double s = bv;
          for (int ki = 0; ki < kh; ++ki) {
            const int iy = oy * stride - padding + ki;
            if (iy < 0 || iy >= H) continue;
            for (int kj = 0; kj < kw; ++kj) {
              const int ix = ox * stride - padding + kj;
              if (ix >= 0 && ix < W)
                s += xp[static_cast<std::size_t>(iy) * W + ix] * wp[ki * kw + kj];
            }
          }
          op[static_cast<std::size_t>(oy) * OW + ox] = s;
        }
      }
    }
  }

  auto xi = x.impl();
  auto wi = w.impl();
  auto bi = b.defined() ? b.impl() : nullptr;
  std::vector<Tensor> ins = {x, w};
  if (b.defined()) ins.push_back(b);
  record(out, ins,
         [xi, wi, bi, N, C, H, W, kh, kw, stride, padding, OH, OW, plane_in,
          plane_out](const TensorImpl& o) {
           if (xi->requires_grad) ensure_grad(*xi);
           if (wi->requires_grad) ensure_grad(*wi);
           if (bi && bi->requires_grad) ensure_grad(*bi);
           for (int n = 0; n < N; ++n) {
             for (int c = 0; c < C; ++c) {
               const double* xp = xi->data.data() + (static_cast<std::size_t>(n) * C + c) * plane_in;
               const double* wp = wi->data.data() + static_cast<std::size_t>(c) * kh * kw;
               const double* dop = o.grad.data() + (static_cast<std::size_t>(n) * C + c) * plane_out;
               double* dxp = xi->requires_grad
                                 ? xi->grad.data() + (static_cast<std::size_t>(n) * C + c) * plane_in
                                 : nullptr;
               double* dwp = wi->requires_grad
                                 ? wi->grad.data() + static_cast<std::size_t>(c) * kh * kw
                                 : nullptr;
               for (int oy = 0; oy < OH; ++oy) {
                 for (int ox = 0; ox < OW; ++ox) {
                   const double g = dop[static_cast<std::size_t>(oy) * OW + ox];
                   if (g == 0.0) continue;
                   if (bi && bi->requires_grad) bi->grad[c] += g;
                   for (int ki = 0; ki < kh; ++ki) {
                     const int iy = oy * stride - padding + ki;
                     if (iy < 0 || iy >= H) continue;
                     for (int kj = 0; kj < kw; ++kj) {
                       const int ix = ox * stride - padding + kj;
                       if (ix < 0 || ix >= W) continue;
                       const std::size_t xoff = static_cast<std::size_t>(iy) * W + ix;
                       if (dwp) dwp[ki * kw + kj] += g * xp[xoff];
                       if (dxp) dxp[xoff] += g * wp[ki * kw + kj];
                     }
                   }
                 }
               }
             }
           }
         });
  return out;
}

Tensor depthwise_separable_conv(const Tensor& x, const Tensor& dw, const Tensor& pw,
                                const Tensor& bias, int stride, int padding) {
  Tensor mid = depthwise_conv2d(x, dw, Tensor(), stride, padding);
  return conv2d(mid, pw, bias, 1, 0);
}

Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  Tensor& running_mean, Tensor& running_var, bool training, double eps,
                  double momentum) {
  check_defined(x, "batch_norm", "input");
  check_defined(gamma, "batch_norm", "gamma");
  check_defined(beta, "batch_norm", "beta");
  check_defined(running_mean, "batch_norm", "running_mean");
  check_defined(running_var, "batch_norm", "running_var");
  if (x.ndim() != 4)
    throw std::invalid_argument("batch_norm: expected 4-d input, got " + shape_str(x.shape()));
  const int N = x.shape()[0], C = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
  for (const Tensor* t : std::initializer_list<const Tensor*>{&gamma, &beta, &running_mean,
                                                              &running_var})
    if (t->ndim() != 1 || t->shape()[0] != C)
      throw std::invalid_argument("batch_norm: per-channel parameter must have shape [" +
                                  std::to_string(C) + "], got " + shape_str(t->shape()));
  if (training && N < 2)
    throw std::invalid_argument(
        "batch_norm: training mode needs a batch of at least 2, got " + std::to_string(N));

  const std::size_t plane = static_cast<std::size_t>(H) * W;
  const std::size_t cstride = static_cast<std::size_t>(C) * plane;
  const double m = static_cast<double>(N) * static_cast<double>(plane);

  std::vector<double> mean(C), invstd(C);
  if (training) {
    for (int c = 0; c < C; ++c) {
      double s = 0.0;
      for (int n = 0; n < N; ++n) {
        const double* p = x.data() + n * cstride + c * plane;
        for (std::size_t i = 0; i < plane; ++i) s += p[i];
      }
      const double mu = s / m;
      double v = 0.0;
      for (int n = 0; n < N; ++n) {
        const double* p = x.data() + n * cstride + c * plane;
        for (std::size_t i = 0; i < plane; ++i) {
          const double d = p[i] - mu;
          v += d * d;
        }
      }
      const double var = v / m;  // biased, used for normalization
      mean[c] = mu;
      invstd[c] = 1.0 / std::sqrt(var + eps);
      // Running buffers track the unbiased estimate.
      const double var_unbiased = m > 1.0 ? var * m / (m - 1.0) : var;
      running_mean.data()[c] = (1.0 - momentum) * running_mean.data()[c] + momentum * mu;
      running_var.data()[c] = (1.0 - momentum) * running_var.data()[c] + momentum * var_unbiased;
    }
  } else {
    for (int c = 0; c < C; ++c) {
      mean[c] = running_mean.data()[c];
      invstd[c] = 1.0 / std::sqrt(running_var.data()[c] + eps);
    }
  }

  Tensor out(x.shape());
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const double* p = x.data() + n * cstride + c * plane;
      double* q = out.data() + n * cstride + c * plane;
      const double mu = mean[c], is = invstd[c], g = gamma.data()[c], bt = beta.data()[c];
      for (std::size_t i = 0; i < plane; ++i) q[i] = g * (p[i] - mu) * is + bt;
    }

  auto xi = x.impl();
  auto gi = gamma.impl();
  auto bi = beta.impl();
  record(out, {x, gamma, beta},
         [xi, gi, bi, mean, invstd, training, N, C, plane, cstride, m](const TensorImpl& o) {
           if (xi->requires_grad) ensure_grad(*xi);
           if (gi->requires_grad) ensure_grad(*gi);
           if (bi->requires_grad) ensure_grad(*bi);
           for (int c = 0; c < C; ++c) {
             const double mu = mean[c], is = invstd[c], g = gi->data[c];
             double sum_dy = 0.0, sum_dy_xhat = 0.0;
             for (int n = 0; n < N; ++n) {
               const double* xp = xi->data.data() + n * cstride + c * plane;
               const double* dyp = o.grad.data() + n * cstride + c * plane;
               for (std::size_t i = 0; i < plane; ++i) {
                 sum_dy += dyp[i];
                 sum_dy_xhat += dyp[i] * (xp[i] - mu) * is;
               }
             }
             if (gi->requires_grad) gi->grad[c] += sum_dy_xhat;
             if (bi->requires_grad) bi->grad[c] += sum_dy;
             if (!xi->requires_grad) continue;
             for (int n = 0; n < N; ++n) {
               const double* xp = xi->data.data() + n * cstride + c * plane;
               const double* dyp = o.grad.data() + n * cstride + c * plane;
               double* dxp = xi->grad.data() + n * cstride + c * plane;
               if (training) {
                 for (std::size_t i = 0; i < plane; ++i) {
                   const double xhat = (xp[i] - mu) * is;
                   dxp[i] += g * is * (dyp[i] - sum_dy / m - xhat * sum_dy_xhat / m);
                 }
               } else {
                 for (std::size_t i = 0; i < plane; ++i) dxp[i] += g * is * dyp[i];
               }
             }
           }
         });
  return out;
}

Tensor global_avg_pool(const Tensor& x) {
  check_defined(x, "global_avg_pool", "input");
  if (x.ndim() != 4)
    throw std::invalid_argument("global_avg_pool: expected 4-d input, got " +
                                shape_str(x.shape()));
  const int N = x.shape()[0], C = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
  const std::size_t plane = static_cast<std::size_t>(H) * W;
  Tensor out({N, C});
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const double* p = x.data() + (static_cast<std::size_t>(n) * C + c) * plane;
      double s = 0.0;
      for (std::size_t i = 0; i < plane; ++i) s += p[i];
      out.data()[static_cast<std::size_t>(n) * C + c] = s / static_cast<double>(plane);
    }
  auto xi = x.impl();
  record(out, {x}, [xi, N, C, plane](const TensorImpl& o) {
    if (!xi->requires_grad) return;
    ensure_grad(*xi);
    for (int n = 0; n < N; ++n)
      for (int c = 0; c < C; ++c) {
        const double g =
            o.grad[static_cast<std::size_t>(n) * C + c] / static_cast<double>(plane);
        double* dp = xi->grad.data() + (static_cast<std::size_t>(n) * C + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) dp[i] += g;
      }
  });
  return out;
}

Tensor to_positions(const Tensor& x) {
  check_defined(x, "to_positions", "input");
  if (x.ndim() != 4)
    throw std::invalid_argument("to_positions: expected 4-d input, got " + shape_str(x.shape()));
  const int N = x.shape()[0], C = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
  const int P = H * W;
  Tensor out({N, P, C});
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const double* src = x.data() + (static_cast<std::size_t>(n) * C + c) * P;
      for (int p = 0; p < P; ++p)
        out.data()[(static_cast<std::size_t>(n) * P + p) * C + c] = src[p];
    }
  auto xi = x.impl();
  record(out, {x}, [xi, N, C, P](const TensorImpl& o) {
    if (!xi->requires_grad) return;
    ensure_grad(*xi);
    for (int n = 0; n < N; ++n)
      for (int c = 0; c < C; ++c) {
        double* dst = xi->grad.data() + (static_cast<std::size_t>(n) * C + c) * P;
        for (int p = 0; p < P; ++p)
          dst[p] += o.grad[(static_cast<std::size_t>(n) * P + p) * C + c];
      }
  });
  return out;
}

Tensor repeat_rows(const Tensor& row, int n) {
  check_defined(row, "repeat_rows", "input");
  if (row.ndim() != 2 || row.shape()[0] != 1)
    throw std::invalid_argument("repeat_rows: expected [1,d] input, got " +
                                shape_str(row.shape()));
  if (n < 1) throw std::invalid_argument("repeat_rows: count must be >= 1");
  const int d = row.shape()[1];
  Tensor out({n, d});
  for (int i = 0; i < n; ++i)
    std::copy(row.data(), row.data() + d, out.data() + static_cast<std::size_t>(i) * d);
  auto ri = row.impl();
  record(out, {row}, [ri, n, d](const TensorImpl& o) {
    if (!ri->requires_grad) return;
    ensure_grad(*ri);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < d; ++j) ri->grad[j] += o.grad[static_cast<std::size_t>(i) * d + j];
  });
  return out;
}

Tensor add_coord_channels(const Tensor& x) {
  check_defined(x, "add_coord_channels", "input");
  if (x.ndim() != 4 || x.shape()[1] != 1)
    throw std::invalid_argument("add_coord_channels: expected [B,1,H,W] input, got " +
                                shape_str(x.shape()));
  const int B = x.shape()[0], H = x.shape()[2], W = x.shape()[3];
  // Coordinates span [-1,1] along each axis; a 1-wide axis maps to 0.
  std::vector<double> xs(W), ys(H);
  for (int j = 0; j < W; ++j) xs[j] = W > 1 ? -1.0 + 2.0 * j / (W - 1) : 0.0;
  for (int i = 0; i < H; ++i) ys[i] = H > 1 ? -1.0 + 2.0 * i / (H - 1) : 0.0;
  Tensor xg({B, 1, H, W});
  Tensor yg({B, 1, H, W});
  for (int b = 0; b < B; ++b)
    for (int i = 0; i < H; ++i)
      for (int j = 0; j < W; ++j) {
        const std::size_t off =
            ((static_cast<std::size_t>(b) * H) + i) * W + j;
        xg.data()[off] = xs[j];
        yg.data()[off] = ys[i];
      }
  return concat({x, xg, yg}, 1);
}

// ---- attention cores ------------------------------------------------------

namespace {

void check_attention_inputs(const Tensor& q, const Tensor& k, const Tensor& v,
                            const char* op) {
  check_defined(q, op, "query");
  check_defined(k, op, "keys");
  check_defined(v, op, "values");
  if (q.ndim() != 2 || k.ndim() != 3 || v.ndim() != 3)
    throw std::invalid_argument(std::string(op) + ": expected q [B,d], k [B,N,d], v [B,N,d]; got " +
                                shape_str(q.shape()) + ", " + shape_str(k.shape()) + ", " +
                                shape_str(v.shape()));
  if (k.shape() != v.shape())
    throw std::invalid_argument(std::string(op) + ": keys " + shape_str(k.shape()) +
                                " and values " + shape_str(v.shape()) + " differ");
  if (q.shape()[0] != k.shape()[0] || q.shape()[1] != k.shape()[2])
    throw std::invalid_argument(std::string(op) + ": query " + shape_str(q.shape()) +
                                " incompatible with keys " + shape_str(k.shape()));
}

// score_j = u . tanh(qp + kp_j); fills scores [N] and, when tanh_out is
// non-null, the intermediate tanh activations [N,d].
void additive_scores_row(const double* qp, const double* kp, const double* u, int N, int d,
                         double* scores, double* tanh_out) {
  for (int j = 0; j < N; ++j) {
    const double* kj = kp + static_cast<std::size_t>(j) * d;
    double s = 0.0;
    for (int c = 0; c < d; ++c) {
      const double t = std::tanh(qp[c] + kj[c]);
      if (tanh_out) tanh_out[static_cast<std::size_t>(j) * d + c] = t;
      s += u[c] * t;
    }
    scores[j] = s;
  }
}

}  // namespace

std::pair<Tensor, Tensor> additive_attention_core(const Tensor& qp, const Tensor& kp,
                                                  const Tensor& v, const Tensor& u) {
  check_attention_inputs(qp, kp, v, "additive_attention");
  check_defined(u, "additive_attention", "score vector");
  const int B = qp.shape()[0], d = qp.shape()[1], N = kp.shape()[1];
  if (u.ndim() != 1 || u.shape()[0] != d)
    throw std::invalid_argument("additive_attention: score vector must have shape [" +
                                std::to_string(d) + "], got " + shape_str(u.shape()));

  Tensor z({B, d});
  Tensor alpha({B, 1, N});
  auto tanh_cache = std::make_shared<std::vector<double>>(
      static_cast<std::size_t>(B) * N * d);
  std::vector<double> scores(N);
  for (int b = 0; b < B; ++b) {
    const double* qpb = qp.data() + static_cast<std::size_t>(b) * d;
    const double* kpb = kp.data() + static_cast<std::size_t>(b) * N * d;
    additive_scores_row(qpb, kpb, u.data(), N, d, scores.data(),
                        tanh_cache->data() + static_cast<std::size_t>(b) * N * d);
    double* ab = alpha.data() + static_cast<std::size_t>(b) * N;
    detail::stable_softmax_row(scores.data(), ab, N);
    double* zb = z.data() + static_cast<std::size_t>(b) * d;
    std::fill(zb, zb + d, 0.0);
    const double* vb = v.data() + static_cast<std::size_t>(b) * N * d;
    for (int j = 0; j < N; ++j) {
      const double a = ab[j];
      const double* vj = vb + static_cast<std::size_t>(j) * d;
      for (int c = 0; c < d; ++c) zb[c] += a * vj[c];
    }
  }

  auto qi = qp.impl();
  auto ki = kp.impl();
  auto vi = v.impl();
  auto ui = u.impl();
  auto ai = alpha.impl();  // weights read back during the gradient sweep
  record(z, {qp, kp, v, u}, [qi, ki, vi, ui, ai, tanh_cache, B, N, d](const TensorImpl& o) {
    if (qi->requires_grad) ensure_grad(*qi);
    if (ki->requires_grad) ensure_grad(*ki);
    if (vi->requires_grad) ensure_grad(*vi);
    if (ui->requires_grad) ensure_grad(*ui);
    std::vector<double> dalpha(N), ds(N);
    for (int b = 0; b < B; ++b) {
      const double* dz = o.grad.data() + static_cast<std::size_t>(b) * d;
      const double* ab = ai->data.data() + static_cast<std::size_t>(b) * N;
      const double* vb = vi->data.data() + static_cast<std::size_t>(b) * N * d;
      const double* tb = tanh_cache->data() + static_cast<std::size_t>(b) * N * d;
      for (int j = 0; j < N; ++j) {
        const double* vj = vb + static_cast<std::size_t>(j) * d;
        double s = 0.0;
        for (int c = 0; c < d; ++c) s += vj[c] * dz[c];
        dalpha[j] = s;
        if (vi->requires_grad) {
          double* dvj = vi->grad.data() + (static_cast<std::size_t>(b) * N + j) * d;
          const double a = ab[j];
          for (int c = 0; c < d; ++c) dvj[c] += a * dz[c];
        }
      }
      double dot = 0.0;
      for (int j = 0; j < N; ++j) dot += ab[j] * dalpha[j];
      for (int j = 0; j < N; ++j) ds[j] = ab[j] * (dalpha[j] - dot);
      if (!qi->requires_grad && !ki->requires_grad && !ui->requires_grad) continue;
      double* dq = qi->requires_grad ? qi->grad.data() + static_cast<std::size_t>(b) * d
                                     : nullptr;
      for (int j = 0; j < N; ++j) {
        const double g = ds[j];
        const double* tj = tb + static_cast<std::size_t>(j) * d;
        double* dkj = ki->requires_grad
                          ? ki->grad.data() + (static_cast<std::size_t>(b) * N + j) * d
                          : nullptr;
        for (int c = 0; c < d; ++c) {
          if (ui->requires_grad) ui->grad[c] += g * tj[c];
          const double dpre = g * ui->data[c] * (1.0 - tj[c] * tj[c]);
          if (dq) dq[c] += dpre;
          if (dkj) dkj[c] += dpre;
        }
      }
    }
  });
  return {z, alpha};
}

Tensor additive_attention_scores(const Tensor& qp, const Tensor& kp, const Tensor& u) {
  check_defined(qp, "additive_attention", "query");
  check_defined(kp, "additive_attention", "keys");
  check_defined(u, "additive_attention", "score vector");
  if (qp.ndim() != 2 || kp.ndim() != 3 || qp.shape()[0] != kp.shape()[0] ||
      qp.shape()[1] != kp.shape()[2])
    throw std::invalid_argument("additive_attention: query " + shape_str(qp.shape()) +
                                " incompatible with keys " + shape_str(kp.shape()));
  const int B = qp.shape()[0], d = qp.shape()[1], N = kp.shape()[1];
  if (u.ndim() != 1 || u.shape()[0] != d)
    throw std::invalid_argument("additive_attention: score vector must have shape [" +
                                std::to_string(d) + "], got " + shape_str(u.shape()));
  Tensor scores({B, N});
  for (int b = 0; b < B; ++b)
    additive_scores_row(qp.data() + static_cast<std::size_t>(b) * d,
                        kp.data() + static_cast<std::size_t>(b) * N * d, u.data(), N, d,
                        scores.data() + static_cast<std::size_t>(b) * N, nullptr);
  return scores;
}

std::pair<Tensor, Tensor> multihead_attention_core(const Tensor& q, const Tensor& k,
                                                   const Tensor& v, int heads) {
  check_attention_inputs(q, k, v, "multihead_attention");
  const int B = q.shape()[0], d = q.shape()[1], N = k.shape()[1];
  if (heads < 1)
    throw std::invalid_argument("multihead_attention: heads must be >= 1, got " +
                                std::to_string(heads));
  if (d % heads != 0)
    throw std::invalid_argument("multihead_attention: embedding size " + std::to_string(d) +
                                " is not divisible by " + std::to_string(heads) + " heads");
  const int dh = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  Tensor z({B, d});
  Tensor alpha({B, heads, N});
  std::vector<double> scores(N);
  for (int b = 0; b < B; ++b) {
    const double* qb = q.data() + static_cast<std::size_t>(b) * d;
    const double* kb = k.data() + static_cast<std::size_t>(b) * N * d;
    const double* vb = v.data() + static_cast<std::size_t>(b) * N * d;
    double* zb = z.data() + static_cast<std::size_t>(b) * d;
    for (int h = 0; h < heads; ++h) {
      const int c0 = h * dh;
      for (int j = 0; j < N; ++j) {
        const double* kj = kb + static_cast<std::size_t>(j) * d + c0;
        double s = 0.0;
        for (int c = 0; c < dh; ++c) s += qb[c0 + c] * kj[c];
        scores[j] = s * scale;
      }
      double* ab = alpha.data() + (static_cast<std::size_t>(b) * heads + h) * N;
      detail::stable_softmax_row(scores.data(), ab, N);
      double* zh = zb + c0;
      std::fill(zh, zh + dh, 0.0);
      for (int j = 0; j < N; ++j) {
        const double a = ab[j];
        const double* vj = vb + static_cast<std::size_t>(j) * d + c0;
        for (int c = 0; c < dh; ++c) zh[c] += a * vj[c];
      }
    }
  }

  auto qi = q.impl();
  auto ki = k.impl();
  auto vi = v.impl();
  auto ai = alpha.impl();
  record(z, {q, k, v}, [qi, ki, vi, ai, B, N, d, heads, dh, scale](const TensorImpl& o) {
    if (qi->requires_grad) ensure_grad(*qi);
    if (ki->requires_grad) ensure_grad(*ki);
    if (vi->requires_grad) ensure_grad(*vi);
    std::vector<double> dalpha(N), ds(N);
    for (int b = 0; b < B; ++b) {
      const double* dz = o.grad.data() + static_cast<std::size_t>(b) * d;
      const double* qb = qi->data.data() + static_cast<std::size_t>(b) * d;
      const double* kb = ki->data.data() + static_cast<std::size_t>(b) * N * d;
      const double* vb = vi->data.data() + static_cast<std::size_t>(b) * N * d;
      for (int h = 0; h < heads; ++h) {
        const int c0 = h * dh;
        const double* ab = ai->data.data() + (static_cast<std::size_t>(b) * heads + h) * N;
        const double* dzh = dz + c0;
        for (int j = 0; j < N; ++j) {
          const double* vj = vb + static_cast<std::size_t>(j) * d + c0;
          double s = 0.0;
          for (int c = 0; c < dh; ++c) s += vj[c] * dzh[c];
          dalpha[j] = s;
          if (vi->requires_grad) {
            double* dvj = vi->grad.data() + (static_cast<std::size_t>(b) * N + j) * d + c0;
            const double a = ab[j];
            for (int c = 0; c < dh; ++c) dvj[c] += a * dzh[c];
          }
        }
        double dot = 0.0;
        for (int j = 0; j < N; ++j) dot += ab[j] * dalpha[j];
        for (int j = 0; j < N; ++j) ds[j] = ab[j] * (dalpha[j] - dot);
        if (qi->requires_grad) {
          double* dqh = qi->grad.data() + static_cast<std::size_t>(b) * d + c0;
          for (int j = 0; j < N; ++j) {
            const double g = ds[j] * scale;
            const double* kj = kb + static_cast<std::size_t>(j) * d + c0;
            for (int c = 0; c < dh; ++c) dqh[c] += g * kj[c];
          }
        }
        if (ki->requires_grad) {
          for (int j = 0; j < N; ++j) {
            const double g = ds[j] * scale;
            double* dkj = ki->grad.data() + (static_cast<std::size_t>(b) * N + j) * d + c0;
            for (int c = 0; c < dh; ++c) dkj[c] += g * qb[c0 + c];
          }
        }
      }
    }
  });
  return {z, alpha};
}

// ---- losses ---------------------------------------------------------------

Tensor huber_loss(const Tensor& pred, const Tensor& target, double delta) {
  check_defined(pred, "huber_loss", "predictions");
  check_defined(target, "huber_loss", "targets");
  check_same_shape(pred, target, "huber_loss");
  if (!(delta > 0.0))
    throw std::invalid_argument("huber_loss: delta must be positive, got " +
                                std::to_string(delta));
  const std::size_t n = pred.numel();
  Tensor out({1});
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double e = pred.data()[i] - target.data()[i];
    const double ae = std::fabs(e);
    total += ae <= delta ? e * e / (2.0 * delta) : ae - delta / 2.0;
  }
  out.data()[0] = total;
  auto pi = pred.impl();
  auto ti = target.impl();
  record(out, {pred, target}, [pi, ti, delta, n](const TensorImpl& o) {
    const double go = o.grad[0];
    if (pi->requires_grad) ensure_grad(*pi);
    if (ti->requires_grad) ensure_grad(*ti);
    for (std::size_t i = 0; i < n; ++i) {
      const double e = pi->data[i] - ti->data[i];
      const double g =
          go * (std::fabs(e) <= delta ? e / delta : (e > 0.0 ? 1.0 : -1.0));
      if (pi->requires_grad) pi->grad[i] += g;
      if (ti->requires_grad) ti->grad[i] -= g;
    }
  });
  return out;
}

}  // namespace simic
