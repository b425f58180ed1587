#include "editlab/kernels.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace editlab::kernels {

namespace {

// Below this many multiply-adds a parallel region costs more than it saves.
constexpr std::size_t kParallelThreshold = 1u << 15;

double dot_dd(const double* a, const double* b, std::size_t n) {
  double s = 0.0;
#pragma omp simd reduction(+ : s)
  for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

double dot_fd(const float* a, const double* b, std::size_t n) {
  double s = 0.0;
#pragma omp simd reduction(+ : s)
  for (std::size_t i = 0; i < n; ++i) s += static_cast<double>(a[i]) * b[i];
  return s;
}

void check_attention_shapes(const MatrixD& q, const MatrixD& k, const MatrixD& v,
                            std::size_t n_heads) {
  if (!q.same_shape(k) || !q.same_shape(v))
    throw std::invalid_argument("causal_attention: q/k/v shape mismatch");
  if (n_heads == 0 || q.cols() % n_heads != 0)
    throw std::invalid_argument("causal_attention: width not divisible by heads");
}

}  // namespace

double dot(std::span<const float> a, std::span<const double> b) {
  return dot_fd(a.data(), b.data(), a.size());
}

void matmul_nt(const MatrixD& x, const MatrixF& w, MatrixD& y) {
  const std::size_t T = x.rows(), in = x.cols(), out = w.rows();
  if (w.cols() != in) throw std::invalid_argument("matmul_nt: inner dimension mismatch");
  if (y.rows() != T || y.cols() != out) y = MatrixD(T, out);
  const long long total = static_cast<long long>(T * out);
#pragma omp parallel for schedule(static) if (T * out * in > kParallelThreshold)
  for (long long idx = 0; idx < total; ++idx) {
    const std::size_t t = static_cast<std::size_t>(idx) / out;
    const std::size_t o = static_cast<std::size_t>(idx) % out;
    y(t, o) = dot_fd(w.row(o).data(), x.row(t).data(), in);
  }
}

void matmul_nn_acc(const MatrixD& dy, const MatrixF& w, MatrixD& dx) {
  const std::size_t T = dy.rows(), out = w.rows(), in = w.cols();
  if (dy.cols() != out || dx.rows() != T || dx.cols() != in)
    throw std::invalid_argument("matmul_nn_acc: shape mismatch");
  const long long n_rows = static_cast<long long>(T);
#pragma omp parallel for schedule(static) if (T * out * in > kParallelThreshold)
  for (long long tt = 0; tt < n_rows; ++tt) {
    const std::size_t t = static_cast<std::size_t>(tt);
    double* dxr = dx.row(t).data();
    for (std::size_t o = 0; o < out; ++o) {
      const double g = dy(t, o);
      if (g == 0.0) continue;
      const float* wr = w.row(o).data();
#pragma omp simd
      for (std::size_t i = 0; i < in; ++i) dxr[i] += g * static_cast<double>(wr[i]);
    }
  }
}

void matmul_tn_acc(const MatrixD& dy, const MatrixD& x, MatrixD& dw) {
  const std::size_t T = dy.rows(), out = dy.cols(), in = x.cols();
  if (x.rows() != T || dw.rows() != out || dw.cols() != in)
    throw std::invalid_argument("matmul_tn_acc: shape mismatch");
  const long long n_out = static_cast<long long>(out);
#pragma omp parallel for schedule(static) if (T * out * in > kParallelThreshold)
  for (long long oo = 0; oo < n_out; ++oo) {
    const std::size_t o = static_cast<std::size_t>(oo);
    double* row = dw.row(o).data();
    for (std::size_t t = 0; t < T; ++t) {
      const double g = dy(t, o);
      if (g == 0.0) continue;
      const double* xr = x.row(t).data();
#pragma omp simd
      for (std::size_t i = 0; i < in; ++i) row[i] += g * xr[i];
    }
  }
}

void causal_attention(const MatrixD& q, const MatrixD& k, const MatrixD& v,
                      std::size_t n_heads, std::vector<MatrixD>& attention,
                      MatrixD& ctx) {
  check_attention_shapes(q, k, v, n_heads);
  const std::size_t T = q.rows(), d = q.cols(), hd = d / n_heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
  attention.assign(n_heads, MatrixD(T, T));
  ctx = MatrixD(T, d);
  const long long total = static_cast<long long>(n_heads * T);
#pragma omp parallel for schedule(static) if (T * T * d > kParallelThreshold)
  for (long long idx = 0; idx < total; ++idx) {
    const std::size_t h = static_cast<std::size_t>(idx) / T;
    const std::size_t i = static_cast<std::size_t>(idx) % T;
    const std::size_t off = h * hd;
    auto a = attention[h].row(i);
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j <= i; ++j) {
      a[j] = dot_dd(q.row(i).data() + off, k.row(j).data() + off, hd) * scale;
      mx = std::max(mx, a[j]);
    }
    double sum = 0.0;
    for (std::size_t j = 0; j <= i; ++j) {
      a[j] = std::exp(a[j] - mx);
      sum += a[j];
    }
    for (std::size_t j = 0; j <= i; ++j) a[j] /= sum;
    double* c = ctx.row(i).data() + off;
    for (std::size_t j = 0; j <= i; ++j) {
      const double* vr = v.row(j).data() + off;
      for (std::size_t e = 0; e < hd; ++e) c[e] += a[j] * vr[e];
    }
  }
}

namespace reference {

void matmul_nt(const MatrixD& x, const MatrixF& w, MatrixD& y) {
  if (w.cols() != x.cols()) throw std::invalid_argument("matmul_nt: inner dimension mismatch");
  y = MatrixD(x.rows(), w.rows());
  for (std::size_t t = 0; t < x.rows(); ++t)
    for (std::size_t o = 0; o < w.rows(); ++o) {
      double s = 0.0;
      for (std::size_t i = 0; i < x.cols(); ++i) s += static_cast<double>(w(o, i)) * x(t, i);
      y(t, o) = s;
    }
}

void matmul_nn_acc(const MatrixD& dy, const MatrixF& w, MatrixD& dx) {
  for (std::size_t t = 0; t < dy.rows(); ++t)
    for (std::size_t o = 0; o < w.rows(); ++o)
      for (std::size_t i = 0; i < w.cols(); ++i)
        dx(t, i) += dy(t, o) * static_cast<double>(w(o, i));
}

void matmul_tn_acc(const MatrixD& dy, const MatrixD& x, MatrixD& dw) {
  for (std::size_t t = 0; t < dy.rows(); ++t)
    for (std::size_t o = 0; o < dy.cols(); ++o)
      for (std::size_t i = 0; i < x.cols(); ++i) dw(o, i) += dy(t, o) * x(t, i);
}

void causal_attention(const MatrixD& q, const MatrixD& k, const MatrixD& v,
                      std::size_t n_heads, std::vector<MatrixD>& attention,
                      MatrixD& ctx) {
  check_attention_shapes(q, k, v, n_heads);
  const std::size_t T = q.rows(), d = q.cols(), hd = d / n_heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
  attention.assign(n_heads, MatrixD(T, T));
  ctx = MatrixD(T, d);
  for (std::size_t h = 0; h < n_heads; ++h) {
    for (std::size_t i = 0; i < T; ++i) {
      std::vector<double> s(i + 1);
      for (std::size_t j = 0; j <= i; ++j) {
        double acc = 0.0;
        for (std::size_t e = 0; e < hd; ++e) acc += q(i, h * hd + e) * k(j, h * hd + e);
        s[j] = acc * scale;
      }
      const double mx = *std::max_element(s.begin(), s.end());
      double sum = 0.0;
      for (auto& x : s) sum += (x = std::exp(x - mx));
      for (std::size_t j = 0; j <= i; ++j) {
        attention[h](i, j) = s[j] / sum;
        for (std::size_t e = 0; e < hd; ++e)
          ctx(i, h * hd + e) += attention[h](i, j) * v(j, h * hd + e);
      }
    }
  }
}

}  // namespace reference

}  // namespace editlab::kernels
