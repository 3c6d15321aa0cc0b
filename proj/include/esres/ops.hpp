#pragma once

#include <cmath>
#include <cstring>
#include <limits>
#include <span>
#include <vector>

#include "esres/tensor.hpp"

namespace esres::nn {

inline void check_shape(bool ok, const std::string& msg) {
  if (!ok) throw ShapeError(msg);
}

inline int conv_out_dim(int in, int k, int stride, int pad) {
  return (in + 2 * pad - k) / stride + 1;
}

namespace detail {

// cols layout: (C*kh*kw) rows by (OH*OW) columns, row index c*kh*kw + ky*kw + kx.
template <typename T>
void im2col(const T* x, int C, int H, int W, int kh, int kw, int sy, int sx,
            int ph, int pw, int OH, int OW, T* cols) {
  const size_t plane = static_cast<size_t>(OH) * OW;
  size_t row = 0;
  for (int c = 0; c < C; ++c) {
    const T* src = x + static_cast<size_t>(c) * H * W;
    for (int ky = 0; ky < kh; ++ky) {
      for (int kx = 0; kx < kw; ++kx, ++row) {
        T* dst = cols + row * plane;
        for (int oy = 0; oy < OH; ++oy) {
          const int iy = oy * sy + ky - ph;
          T* out_row = dst + static_cast<size_t>(oy) * OW;
          if (iy < 0 || iy >= H) {
            std::fill(out_row, out_row + OW, T(0));
            continue;
          }
          const T* in_row = src + static_cast<size_t>(iy) * W;
          for (int ox = 0; ox < OW; ++ox) {
            const int ix = ox * sx + kx - pw;
            out_row[ox] = (ix >= 0 && ix < W) ? in_row[ix] : T(0);
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_acc(const T* cols, int C, int H, int W, int kh, int kw, int sy, int sx,
                int ph, int pw, int OH, int OW, T* x_grad) {
  const size_t plane = static_cast<size_t>(OH) * OW;
  size_t row = 0;
  for (int c = 0; c < C; ++c) {
    T* dst = x_grad + static_cast<size_t>(c) * H * W;
    for (int ky = 0; ky < kh; ++ky) {
      for (int kx = 0; kx < kw; ++kx, ++row) {
        const T* src = cols + row * plane;
        for (int oy = 0; oy < OH; ++oy) {
          const int iy = oy * sy + ky - ph;
          if (iy < 0 || iy >= H) continue;
          const T* in_row = src + static_cast<size_t>(oy) * OW;
          T* out_row = dst + static_cast<size_t>(iy) * W;
          for (int ox = 0; ox < OW; ++ox) {
            const int ix = ox * sx + kx - pw;
            if (ix >= 0 && ix < W) out_row[ix] += in_row[ox];
          }
        }
      }
    }
  }
}

// C (MxN) += A (MxK) * B (KxN), row accumulation in double.
template <typename T>
void matmul_acc(const T* A, const T* B, T* C, int M, int K, int N) {
  std::vector<double> acc(static_cast<size_t>(N));
  for (int i = 0; i < M; ++i) {
    std::fill(acc.begin(), acc.end(), 0.0);
    const T* a = A + static_cast<size_t>(i) * K;
    for (int k = 0; k < K; ++k) {
      const double av = static_cast<double>(a[k]);
      const T* b = B + static_cast<size_t>(k) * N;
      for (int j = 0; j < N; ++j) acc[j] += av * static_cast<double>(b[j]);
    }
    T* c = C + static_cast<size_t>(i) * N;
    for (int j = 0; j < N; ++j) c[j] += static_cast<T>(acc[j]);
  }
}

// C (MxN) += A (MxK) * B^T with B stored (NxK).
template <typename T>
void matmul_abt_acc(const T* A, const T* B, T* C, int M, int K, int N) {
  for (int i = 0; i < M; ++i) {
    const T* a = A + static_cast<size_t>(i) * K;
    T* c = C + static_cast<size_t>(i) * N;
    for (int j = 0; j < N; ++j) {
      const T* b = B + static_cast<size_t>(j) * K;
      double dot = 0.0;
      for (int k = 0; k < K; ++k) dot += static_cast<double>(a[k]) * static_cast<double>(b[k]);
      c[j] += static_cast<T>(dot);
    }
  }
}

// C (KxN) = A^T * B with A stored (MxK), B (MxN). C is overwritten.
template <typename T>
void matmul_atb(const T* A, const T* B, T* C, int M, int K, int N) {
  std::vector<double> acc(static_cast<size_t>(N));
  for (int k = 0; k < K; ++k) {
    std::fill(acc.begin(), acc.end(), 0.0);
    for (int i = 0; i < M; ++i) {
      const double av = static_cast<double>(A[static_cast<size_t>(i) * K + k]);
      if (av == 0.0) continue;
      const T* b = B + static_cast<size_t>(i) * N;
      for (int j = 0; j < N; ++j) acc[j] += av * static_cast<double>(b[j]);
    }
    T* c = C + static_cast<size_t>(k) * N;
    for (int j = 0; j < N; ++j) c[j] = static_cast<T>(acc[j]);
  }
}

}  // namespace detail

// General conv over NCHW input; weight (O, C, kh, kw); optional bias (O).
// Lowered to im2col + matmul; the backward pass recomputes the column buffer.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias,
                 int sy, int sx, int ph, int pw) {
  check_shape(x.rank() == 4, "conv2d: input rank " + std::to_string(x.rank()));
  check_shape(w.rank() == 4, "conv2d: weight rank " + std::to_string(w.rank()));
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int O = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  check_shape(w.dim(1) == C, "conv2d: weight expects " + std::to_string(w.dim(1)) +
                                 " input channels, got " + std::to_string(C));
  if (bias.defined())
    check_shape(bias.rank() == 1 && bias.dim(0) == O, "conv2d: bias shape mismatch");
  const int OH = conv_out_dim(H, kh, sy, ph);
  const int OW = conv_out_dim(W, kw, sx, pw);
  check_shape(OH > 0 && OW > 0, "conv2d: empty output for input " + shape_str(x.shape()));

  const int ckk = C * kh * kw;
  const size_t plane = static_cast<size_t>(OH) * OW;
  std::vector<T> out(static_cast<size_t>(N) * O * plane, T(0));
  std::vector<T> cols(static_cast<size_t>(ckk) * plane);
  for (int n = 0; n < N; ++n) {
    const T* xn = x.value().data() + static_cast<size_t>(n) * C * H * W;
    T* on = out.data() + static_cast<size_t>(n) * O * plane;
    detail::im2col(xn, C, H, W, kh, kw, sy, sx, ph, pw, OH, OW, cols.data());
    detail::matmul_acc(w.value().data(), cols.data(), on, O, ckk, static_cast<int>(plane));
    if (bias.defined()) {
      for (int o = 0; o < O; ++o) {
        const T b = bias.value()[o];
        T* row = on + static_cast<size_t>(o) * plane;
        for (size_t j = 0; j < plane; ++j) row[j] += b;
      }
    }
  }

  std::vector<Tensor<T>> parents = {x, w};
  if (bias.defined()) parents.push_back(bias);
  return Tensor<T>::make_op(
      {N, O, OH, OW}, std::move(out), std::move(parents),
      [x, w, bias, sy, sx, ph, pw, OH, OW](Node<T>& self) {
        const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
        const int O = w.dim(0), kh = w.dim(2), kw = w.dim(3);
        const int ckk = C * kh * kw;
        const size_t plane = static_cast<size_t>(OH) * OW;
        std::vector<T> cols;
        std::vector<T> dcols;
        if (w.requires_grad()) cols.resize(static_cast<size_t>(ckk) * plane);
        if (x.requires_grad()) dcols.resize(static_cast<size_t>(ckk) * plane);
        for (int n = 0; n < N; ++n) {
          const T* dy = self.grad.data() + static_cast<size_t>(n) * O * plane;
          if (w.requires_grad()) {
            const T* xn = x.value().data() + static_cast<size_t>(n) * C * H * W;
            detail::im2col(xn, C, H, W, kh, kw, sy, sx, ph, pw, OH, OW, cols.data());
            detail::matmul_abt_acc(dy, cols.data(), w.node()->ensure_grad().data(), O,
                                   static_cast<int>(plane), ckk);
          }
          if (x.requires_grad()) {
            detail::matmul_atb(w.value().data(), dy, dcols.data(), O, ckk,
                               static_cast<int>(plane));
            T* dx = x.node()->ensure_grad().data() + static_cast<size_t>(n) * C * H * W;
            detail::col2im_acc(dcols.data(), C, H, W, kh, kw, sy, sx, ph, pw, OH, OW, dx);
          }
        }
        if (bias.defined() && bias.requires_grad()) {
          auto& db = bias.node()->ensure_grad();
          for (int n = 0; n < N; ++n)
            for (int o = 0; o < O; ++o) {
              const T* dy = self.grad.data() + (static_cast<size_t>(n) * O + o) * plane;
              double s = 0.0;
              for (size_t j = 0; j < plane; ++j) s += static_cast<double>(dy[j]);
              db[o] += static_cast<T>(s);
            }
        }
      });
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, int sy, int sx, int ph, int pw) {
  return conv2d(x, w, Tensor<T>(), sy, sx, ph, pw);
}

// Per-channel conv; weight (C, 1, kh, kw). Channel c of the output sees only
// channel c of the input.
template <typename T>
Tensor<T> depthwise_conv2d(const Tensor<T>& x, const Tensor<T>& w, int sy, int sx,
                           int ph, int pw) {
  check_shape(x.rank() == 4 && w.rank() == 4, "depthwise_conv2d: rank mismatch");
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int kh = w.dim(2), kw = w.dim(3);
  check_shape(w.dim(0) == C && w.dim(1) == 1,
              "depthwise_conv2d: weight " + shape_str(w.shape()) + " for " +
                  std::to_string(C) + " channels");
  const int OH = conv_out_dim(H, kh, sy, ph);
  const int OW = conv_out_dim(W, kw, sx, pw);
  check_shape(OH > 0 && OW > 0, "depthwise_conv2d: empty output");

  std::vector<T> out(static_cast<size_t>(N) * C * OH * OW);
  size_t idx = 0;
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const T* src = x.value().data() + (static_cast<size_t>(n) * C + c) * H * W;
      const T* ker = w.value().data() + static_cast<size_t>(c) * kh * kw;
      for (int oy = 0; oy < OH; ++oy)
        for (int ox = 0; ox < OW; ++ox) {
          double acc = 0.0;
          for (int ky = 0; ky < kh; ++ky) {
            const int iy = oy * sy + ky - ph;
            if (iy < 0 || iy >= H) continue;
            for (int kx = 0; kx < kw; ++kx) {
              const int ix = ox * sx + kx - pw;
              if (ix < 0 || ix >= W) continue;
              acc += static_cast<double>(src[static_cast<size_t>(iy) * W + ix]) *
                     static_cast<double>(ker[ky * kw + kx]);
            }
          }
          out[idx++] = static_cast<T>(acc);
        }
    }

  return Tensor<T>::make_op(
      {N, C, OH, OW}, std::move(out), {x, w},
      [x, w, sy, sx, ph, pw, OH, OW](Node<T>& self) {
        const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
        const int kh = w.dim(2), kw = w.dim(3);
        std::vector<double> dw(x.requires_grad() || w.requires_grad()
                                   ? static_cast<size_t>(C) * kh * kw
                                   : 0,
                               0.0);
        T* dx = x.requires_grad() ? x.node()->ensure_grad().data() : nullptr;
        size_t idx = 0;
        for (int n = 0; n < N; ++n)
          for (int c = 0; c < C; ++c) {
            const T* src = x.value().data() + (static_cast<size_t>(n) * C + c) * H * W;
            const T* ker = w.value().data() + static_cast<size_t>(c) * kh * kw;
            T* dxc = dx ? dx + (static_cast<size_t>(n) * C + c) * H * W : nullptr;
            double* dwc = dw.empty() ? nullptr : dw.data() + static_cast<size_t>(c) * kh * kw;
            for (int oy = 0; oy < OH; ++oy)
              for (int ox = 0; ox < OW; ++ox) {
                const double g = static_cast<double>(self.grad[idx++]);
                if (g == 0.0) continue;
                for (int ky = 0; ky < kh; ++ky) {
                  const int iy = oy * sy + ky - ph;
                  if (iy < 0 || iy >= H) continue;
                  for (int kx = 0; kx < kw; ++kx) {
                    const int ix = ox * sx + kx - pw;
                    if (ix < 0 || ix >= W) continue;
                    if (dxc)
                      dxc[static_cast<size_t>(iy) * W + ix] +=
                          static_cast<T>(g * static_cast<double>(ker[ky * kw + kx]));
                    if (dwc)
                      dwc[ky * kw + kx] +=
                          g * static_cast<double>(src[static_cast<size_t>(iy) * W + ix]);
                  }
                }
              }
          }
        if (w.requires_grad()) {
          auto& gw = w.node()->ensure_grad();
          for (size_t i = 0; i < gw.size(); ++i) gw[i] += static_cast<T>(dw[i]);
        }
      });
}

// Four-dim element lookup helpers kept trivial; everything is row-major NCHW.

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  std::vector<T> out(x.value());
  for (auto& v : out) v = v > T(0) ? v : T(0);
  return Tensor<T>::make_op(x.shape(), std::move(out), {x}, [x](Node<T>& self) {
    if (!x.requires_grad()) return;
    auto& gx = x.node()->ensure_grad();
    const auto& xv = x.value();
    for (size_t i = 0; i < gx.size(); ++i)
      if (xv[i] > T(0)) gx[i] += self.grad[i];
  });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  std::vector<T> out(x.numel());
  const auto& xv = x.value();
  for (size_t i = 0; i < out.size(); ++i)
    out[i] = static_cast<T>(1.0 / (1.0 + std::exp(-static_cast<double>(xv[i]))));
  return Tensor<T>::make_op(x.shape(), std::move(out), {x}, [x](Node<T>& self) {
    if (!x.requires_grad()) return;
    auto& gx = x.node()->ensure_grad();
    for (size_t i = 0; i < gx.size(); ++i) {
      const T s = self.value[i];
      gx[i] += self.grad[i] * s * (T(1) - s);
    }
  });
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  check_shape(a.shape() == b.shape(), "add: " + shape_str(a.shape()) + " vs " +
                                          shape_str(b.shape()));
  std::vector<T> out(a.value());
  const auto& bv = b.value();
  for (size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return Tensor<T>::make_op(a.shape(), std::move(out), {a, b}, [a, b](Node<T>& self) {
    if (a.requires_grad()) {
      auto& ga = a.node()->ensure_grad();
      for (size_t i = 0; i < ga.size(); ++i) ga[i] += self.grad[i];
    }
    if (b.requires_grad()) {
      auto& gb = b.node()->ensure_grad();
      for (size_t i = 0; i < gb.size(); ++i) gb[i] += self.grad[i];
    }
  });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  check_shape(a.shape() == b.shape(), "mul: " + shape_str(a.shape()) + " vs " +
                                          shape_str(b.shape()));
  std::vector<T> out(a.value());
  const auto& bv = b.value();
  for (size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  return Tensor<T>::make_op(a.shape(), std::move(out), {a, b}, [a, b](Node<T>& self) {
    if (a.requires_grad()) {
      auto& ga = a.node()->ensure_grad();
      const auto& bv = b.value();
      for (size_t i = 0; i < ga.size(); ++i) ga[i] += self.grad[i] * bv[i];
    }
    if (b.requires_grad()) {
      auto& gb = b.node()->ensure_grad();
      const auto& av = a.value();
      for (size_t i = 0; i < gb.size(); ++i) gb[i] += self.grad[i] * av[i];
    }
  });
}

// Broadcast multiply of an (N,C,H,W) activation by an (N,C,1,1) gate.
template <typename T>
Tensor<T> mul_channels(const Tensor<T>& x, const Tensor<T>& gate) {
  check_shape(x.rank() == 4 && gate.rank() == 4, "mul_channels: rank mismatch");
  check_shape(gate.dim(0) == x.dim(0) && gate.dim(1) == x.dim(1) && gate.dim(2) == 1 &&
                  gate.dim(3) == 1,
              "mul_channels: gate " + shape_str(gate.shape()) + " for " +
                  shape_str(x.shape()));
  const int N = x.dim(0), C = x.dim(1);
  const size_t plane = static_cast<size_t>(x.dim(2)) * x.dim(3);
  std::vector<T> out(x.value());
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const T g = gate.value()[static_cast<size_t>(n) * C + c];
      T* row = out.data() + (static_cast<size_t>(n) * C + c) * plane;
      for (size_t j = 0; j < plane; ++j) row[j] *= g;
    }
  return Tensor<T>::make_op(
      x.shape(), std::move(out), {x, gate}, [x, gate](Node<T>& self) {
        const int N = x.dim(0), C = x.dim(1);
        const size_t plane = static_cast<size_t>(x.dim(2)) * x.dim(3);
        if (x.requires_grad()) {
          auto& gx = x.node()->ensure_grad();
          for (int n = 0; n < N; ++n)
            for (int c = 0; c < C; ++c) {
              const T g = gate.value()[static_cast<size_t>(n) * C + c];
              const size_t base = (static_cast<size_t>(n) * C + c) * plane;
              for (size_t j = 0; j < plane; ++j) gx[base + j] += self.grad[base + j] * g;
            }
        }
        if (gate.requires_grad()) {
          auto& gg = gate.node()->ensure_grad();
          for (int n = 0; n < N; ++n)
            for (int c = 0; c < C; ++c) {
              const size_t base = (static_cast<size_t>(n) * C + c) * plane;
              double s = 0.0;
              for (size_t j = 0; j < plane; ++j)
                s += static_cast<double>(self.grad[base + j]) *
                     static_cast<double>(x.value()[base + j]);
              gg[static_cast<size_t>(n) * C + c] += static_cast<T>(s);
            }
        }
      });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, double factor) {
  std::vector<T> out(x.value());
  for (auto& v : out) v = static_cast<T>(static_cast<double>(v) * factor);
  return Tensor<T>::make_op(x.shape(), std::move(out), {x}, [x, factor](Node<T>& self) {
    if (!x.requires_grad()) return;
    auto& gx = x.node()->ensure_grad();
    for (size_t i = 0; i < gx.size(); ++i)
      gx[i] += static_cast<T>(static_cast<double>(self.grad[i]) * factor);
  });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, const Shape& shape) {
  check_shape(shape_numel(shape) == x.numel(), "reshape: " + shape_str(x.shape()) +
                                                   " to " + shape_str(shape));
  std::vector<T> out(x.value());
  return Tensor<T>::make_op(shape, std::move(out), {x}, [x](Node<T>& self) {
    if (!x.requires_grad()) return;
    auto& gx = x.node()->ensure_grad();
    for (size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[i];
  });
}

template <typename T>
Tensor<T> max_pool2d(const Tensor<T>& x, int k, int stride, int pad) {
  check_shape(x.rank() == 4, "max_pool2d: input rank " + std::to_string(x.rank()));
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int OH = conv_out_dim(H, k, stride, pad);
  const int OW = conv_out_dim(W, k, stride, pad);
  check_shape(OH > 0 && OW > 0, "max_pool2d: empty output");

  std::vector<T> out(static_cast<size_t>(N) * C * OH * OW);
  auto argmax = std::make_shared<std::vector<int32_t>>(out.size());
  size_t idx = 0;
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const T* src = x.value().data() + (static_cast<size_t>(n) * C + c) * H * W;
      for (int oy = 0; oy < OH; ++oy)
        for (int ox = 0; ox < OW; ++ox) {
          T best = -std::numeric_limits<T>::infinity();
          int32_t best_at = -1;
          for (int ky = 0; ky < k; ++ky) {
            const int iy = oy * stride + ky - pad;
            if (iy < 0 || iy >= H) continue;
            for (int kx = 0; kx < k; ++kx) {
              const int ix = ox * stride + kx - pad;
              if (ix < 0 || ix >= W) continue;
              const T v = src[static_cast<size_t>(iy) * W + ix];
              if (v > best) {
                best = v;
                best_at = static_cast<int32_t>(iy * W + ix);
              }
            }
          }
          check_shape(best_at >= 0, "max_pool2d: window misses the input entirely");
          out[idx] = best;
          (*argmax)[idx] = best_at;
          ++idx;
        }
    }

  return Tensor<T>::make_op(
      {N, C, OH, OW}, std::move(out), {x}, [x, argmax, OH, OW](Node<T>& self) {
        if (!x.requires_grad()) return;
        const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
        auto& gx = x.node()->ensure_grad();
        const size_t plane = static_cast<size_t>(OH) * OW;
        for (int n = 0; n < N; ++n)
          for (int c = 0; c < C; ++c) {
            T* dst = gx.data() + (static_cast<size_t>(n) * C + c) * H * W;
            const size_t base = (static_cast<size_t>(n) * C + c) * plane;
            for (size_t j = 0; j < plane; ++j) dst[(*argmax)[base + j]] += self.grad[base + j];
          }
      });
}

template <typename T>
Tensor<T> global_avg_pool2d(const Tensor<T>& x) {
  check_shape(x.rank() == 4, "global_avg_pool2d: input rank " + std::to_string(x.rank()));
  const int N = x.dim(0), C = x.dim(1);
  const size_t plane = static_cast<size_t>(x.dim(2)) * x.dim(3);
  check_shape(plane > 0, "global_avg_pool2d: empty plane");
  std::vector<T> out(static_cast<size_t>(N) * C);
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const T* src = x.value().data() + (static_cast<size_t>(n) * C + c) * plane;
      double s = 0.0;
      for (size_t j = 0; j < plane; ++j) s += static_cast<double>(src[j]);
      out[static_cast<size_t>(n) * C + c] = static_cast<T>(s / static_cast<double>(plane));
    }
  return Tensor<T>::make_op({N, C, 1, 1}, std::move(out), {x}, [x](Node<T>& self) {
    if (!x.requires_grad()) return;
    const int N = x.dim(0), C = x.dim(1);
    const size_t plane = static_cast<size_t>(x.dim(2)) * x.dim(3);
    const T inv = static_cast<T>(1.0 / static_cast<double>(plane));
    auto& gx = x.node()->ensure_grad();
    for (int n = 0; n < N; ++n)
      for (int c = 0; c < C; ++c) {
        const T g = self.grad[static_cast<size_t>(n) * C + c] * inv;
        T* dst = gx.data() + (static_cast<size_t>(n) * C + c) * plane;
        for (size_t j = 0; j < plane; ++j) dst[j] += g;
      }
  });
}

// x (N,F) by weight (O,F) plus bias (O) -> (N,O).
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  check_shape(x.rank() == 2 && w.rank() == 2, "linear: rank mismatch");
  const int N = x.dim(0), F = x.dim(1), O = w.dim(0);
  check_shape(w.dim(1) == F, "linear: weight expects " + std::to_string(w.dim(1)) +
                                 " features, got " + std::to_string(F));
  if (b.defined()) check_shape(b.rank() == 1 && b.dim(0) == O, "linear: bias shape mismatch");
  std::vector<T> out(static_cast<size_t>(N) * O);
  for (int n = 0; n < N; ++n) {
    const T* xn = x.value().data() + static_cast<size_t>(n) * F;
    for (int o = 0; o < O; ++o) {
      const T* wo = w.value().data() + static_cast<size_t>(o) * F;
      double dot = b.defined() ? static_cast<double>(b.value()[o]) : 0.0;
      for (int f = 0; f < F; ++f) dot += static_cast<double>(xn[f]) * static_cast<double>(wo[f]);
      out[static_cast<size_t>(n) * O + o] = static_cast<T>(dot);
    }
  }
  std::vector<Tensor<T>> parents = {x, w};
  if (b.defined()) parents.push_back(b);
  return Tensor<T>::make_op(
      {N, O}, std::move(out), std::move(parents), [x, w, b](Node<T>& self) {
        const int N = x.dim(0), F = x.dim(1), O = w.dim(0);
        if (x.requires_grad()) {
          auto& gx = x.node()->ensure_grad();
          detail::matmul_acc(self.grad.data(), w.value().data(), gx.data(), N, O, F);
        }
        if (w.requires_grad()) {
          auto& gw = w.node()->ensure_grad();
          // dW = dY^T (OxN) * X (NxF)
          for (int o = 0; o < O; ++o) {
            T* row = gw.data() + static_cast<size_t>(o) * F;
            for (int n = 0; n < N; ++n) {
              const double g = static_cast<double>(self.grad[static_cast<size_t>(n) * O + o]);
              if (g == 0.0) continue;
              const T* xn = x.value().data() + static_cast<size_t>(n) * F;
              for (int f = 0; f < F; ++f) row[f] += static_cast<T>(g * static_cast<double>(xn[f]));
            }
          }
        }
        if (b.defined() && b.requires_grad()) {
          auto& gb = b.node()->ensure_grad();
          for (int n = 0; n < N; ++n)
            for (int o = 0; o < O; ++o) gb[o] += self.grad[static_cast<size_t>(n) * O + o];
        }
      });
}

// Mean cross-entropy over rows of logits (N,K) with integer labels.
// Log-sum-exp is shifted by the row max and accumulated in double.
template <typename T>
Tensor<T> softmax_cross_entropy(const Tensor<T>& logits, const std::vector<int>& labels) {
  check_shape(logits.rank() == 2, "softmax_cross_entropy: logits rank");
  const int N = logits.dim(0), K = logits.dim(1);
  check_shape(static_cast<int>(labels.size()) == N,
              "softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                  std::to_string(N) + " rows");
  for (int n = 0; n < N; ++n)
    check_shape(labels[n] >= 0 && labels[n] < K,
                "softmax_cross_entropy: label " + std::to_string(labels[n]) +
                    " outside [0, " + std::to_string(K) + ")");

  auto probs = std::make_shared<std::vector<double>>(static_cast<size_t>(N) * K);
  double loss = 0.0;
  for (int n = 0; n < N; ++n) {
    const T* row = logits.value().data() + static_cast<size_t>(n) * K;
    double m = static_cast<double>(row[0]);
    for (int k = 1; k < K; ++k) m = std::max(m, static_cast<double>(row[k]));
    double sum = 0.0;
    double* p = probs->data() + static_cast<size_t>(n) * K;
    for (int k = 0; k < K; ++k) {
      p[k] = std::exp(static_cast<double>(row[k]) - m);
      sum += p[k];
    }
    for (int k = 0; k < K; ++k) p[k] /= sum;
    loss -= static_cast<double>(row[labels[n]]) - m - std::log(sum);
  }
  loss /= static_cast<double>(N);

  return Tensor<T>::make_op(
      {1}, {static_cast<T>(loss)}, {logits}, [logits, labels, probs](Node<T>& self) {
        if (!logits.requires_grad()) return;
        const int N = logits.dim(0), K = logits.dim(1);
        const double g = static_cast<double>(self.grad[0]) / static_cast<double>(N);
        auto& gx = logits.node()->ensure_grad();
        for (int n = 0; n < N; ++n) {
          const double* p = probs->data() + static_cast<size_t>(n) * K;
          T* row = gx.data() + static_cast<size_t>(n) * K;
          for (int k = 0; k < K; ++k)
            row[k] += static_cast<T>(g * (p[k] - (k == labels[n] ? 1.0 : 0.0)));
        }
      });
}

// Batch norm over NCHW with affine parameters. Training mode normalizes by
// biased batch statistics and folds the unbiased variance into the running
// buffers; eval mode normalizes by the running buffers. The backward pass in
// training mode uses batch statistics only, so running buffers never affect
// gradients.
template <typename T>
Tensor<T> batch_norm2d(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                       std::vector<T>& running_mean, std::vector<T>& running_var,
                       bool training, double momentum = 0.1, double eps = 1e-5) {
  check_shape(x.rank() == 4, "batch_norm2d: input rank " + std::to_string(x.rank()));
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  check_shape(gamma.rank() == 1 && gamma.dim(0) == C && beta.rank() == 1 && beta.dim(0) == C,
              "batch_norm2d: affine shape mismatch for " + std::to_string(C) + " channels");
  check_shape(static_cast<int>(running_mean.size()) == C &&
                  static_cast<int>(running_var.size()) == C,
              "batch_norm2d: running buffer size mismatch");
  const int64_t nhw = static_cast<int64_t>(N) * H * W;
  if (training && nhw <= 1)
    throw ShapeError("batch_norm2d: training needs more than one value per channel");

  auto mean = std::make_shared<std::vector<double>>(C);
  auto invstd = std::make_shared<std::vector<double>>(C);
  const size_t plane = static_cast<size_t>(H) * W;
  const auto& xv = x.value();

  if (training) {
    for (int c = 0; c < C; ++c) {
      double s = 0.0;
      for (int n = 0; n < N; ++n) {
        const T* src = xv.data() + (static_cast<size_t>(n) * C + c) * plane;
        for (size_t j = 0; j < plane; ++j) s += static_cast<double>(src[j]);
      }
      const double m = s / static_cast<double>(nhw);
      double var = 0.0;
      for (int n = 0; n < N; ++n) {
        const T* src = xv.data() + (static_cast<size_t>(n) * C + c) * plane;
        for (size_t j = 0; j < plane; ++j) {
          const double d = static_cast<double>(src[j]) - m;
          var += d * d;
        }
      }
      var /= static_cast<double>(nhw);
      (*mean)[c] = m;
      (*invstd)[c] = 1.0 / std::sqrt(var + eps);
      const double unbiased = var * static_cast<double>(nhw) / static_cast<double>(nhw - 1);
      running_mean[c] = static_cast<T>((1.0 - momentum) * static_cast<double>(running_mean[c]) +
                                       momentum * m);
      running_var[c] = static_cast<T>((1.0 - momentum) * static_cast<double>(running_var[c]) +
                                      momentum * unbiased);
    }
  } else {
    for (int c = 0; c < C; ++c) {
      (*mean)[c] = static_cast<double>(running_mean[c]);
      (*invstd)[c] = 1.0 / std::sqrt(static_cast<double>(running_var[c]) + eps);
    }
  }

  std::vector<T> out(xv.size());
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const double m = (*mean)[c], is = (*invstd)[c];
      const double g = static_cast<double>(gamma.value()[c]);
      const double b = static_cast<double>(beta.value()[c]);
      const T* src = xv.data() + (static_cast<size_t>(n) * C + c) * plane;
      T* dst = out.data() + (static_cast<size_t>(n) * C + c) * plane;
      for (size_t j = 0; j < plane; ++j)
        dst[j] = static_cast<T>((static_cast<double>(src[j]) - m) * is * g + b);
    }

  return Tensor<T>::make_op(
      x.shape(), std::move(out), {x, gamma, beta},
      [x, gamma, beta, mean, invstd, training](Node<T>& self) {
        const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
        const size_t plane = static_cast<size_t>(H) * W;
        const double nhw = static_cast<double>(static_cast<int64_t>(N) * H * W);
        const auto& xv = x.value();
        for (int c = 0; c < C; ++c) {
          const double m = (*mean)[c], is = (*invstd)[c];
          double sum_dy = 0.0, sum_dy_xhat = 0.0;
          for (int n = 0; n < N; ++n) {
            const size_t base = (static_cast<size_t>(n) * C + c) * plane;
            for (size_t j = 0; j < plane; ++j) {
              const double dy = static_cast<double>(self.grad[base + j]);
              sum_dy += dy;
              sum_dy_xhat += dy * (static_cast<double>(xv[base + j]) - m) * is;
            }
          }
          if (gamma.requires_grad())
            gamma.node()->ensure_grad()[c] += static_cast<T>(sum_dy_xhat);
          if (beta.requires_grad()) beta.node()->ensure_grad()[c] += static_cast<T>(sum_dy);
          if (!x.requires_grad()) continue;
          auto& gx = x.node()->ensure_grad();
          const double g = static_cast<double>(gamma.value()[c]);
          if (training) {
            for (int n = 0; n < N; ++n) {
              const size_t base = (static_cast<size_t>(n) * C + c) * plane;
              for (size_t j = 0; j < plane; ++j) {
                const double dy = static_cast<double>(self.grad[base + j]);
                const double xhat = (static_cast<double>(xv[base + j]) - m) * is;
                gx[base + j] += static_cast<T>(
                    g * is * (dy - sum_dy / nhw - xhat * sum_dy_xhat / nhw));
              }
            }
          } else {
            for (int n = 0; n < N; ++n) {
              const size_t base = (static_cast<size_t>(n) * C + c) * plane;
              for (size_t j = 0; j < plane; ++j)
                gx[base + j] +=
                    static_cast<T>(static_cast<double>(self.grad[base + j]) * g * is);
            }
          }
        }
      });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  double s = 0.0;
  for (const T v : x.value()) s += static_cast<double>(v);
  return Tensor<T>::make_op({1}, {static_cast<T>(s)}, {x}, [x](Node<T>& self) {
    if (!x.requires_grad()) return;
    auto& gx = x.node()->ensure_grad();
    for (size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[0];
  });
}

}  // namespace esres::nn
