#include "stablekd/ops.hpp"

#include <algorithm>
#include <vector>

#include "stablekd/errors.hpp"

namespace skd {

namespace {

template <typename T>
void require_same_tape(const Var<T>& a, const Var<T>& b, const char* op) {
  if (&a.tape() != &b.tape()) throw ContractError(std::string(op) + ": operands on different tapes");
}

template <typename T>
void require_rank(const Var<T>& x, std::size_t rank, const char* op) {
  if (x.shape().rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) +
                         " input, got " + x.shape().str());
  }
}

// c[m×q] += a[m×p]·b[p×q]
template <typename T>
void gemm_nn(const T* a, const T* b, T* c, std::size_t m, std::size_t p, std::size_t q) {
  for (std::size_t i = 0; i < m; ++i) {
    T* crow = c + i * q;
    for (std::size_t k = 0; k < p; ++k) {
      const T aik = a[i * p + k];
      const T* brow = b + k * q;
      for (std::size_t j = 0; j < q; ++j) crow[j] += aik * brow[j];
    }
  }
}

// c[m×p] += g[m×q]·b[p×q]ᵀ
template <typename T>
void gemm_nt(const T* g, const T* b, T* c, std::size_t m, std::size_t p, std::size_t q) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t k = 0; k < p; ++k) {
      T acc{0};
      const T* grow = g + i * q;
      const T* brow = b + k * q;
      for (std::size_t j = 0; j < q; ++j) acc += grow[j] * brow[j];
      c[i * p + k] += acc;
    }
  }
}

// c[p×q] += a[m×p]ᵀ·g[m×q]
template <typename T>
void gemm_tn(const T* a, const T* g, T* c, std::size_t m, std::size_t p, std::size_t q) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* grow = g + i * q;
    for (std::size_t k = 0; k < p; ++k) {
      const T aik = a[i * p + k];
      T* crow = c + k * q;
      for (std::size_t j = 0; j < q; ++j) crow[j] += aik * grow[j];
    }
  }
}

struct ConvGeometry {
  std::size_t n, c, h, w, f, kh, kw, stride, pad, oh, ow;
};

// Lowered input: row (c, ky, kx), column (n, oy, ox); padded taps are 0.
template <typename T>
std::vector<T> im2col(const ConvGeometry& g, const T* in) {
  const std::size_t plane = g.oh * g.ow, cols = g.n * plane;
  std::vector<T> out(g.c * g.kh * g.kw * cols, T{0});
  for (std::size_t c = 0; c < g.c; ++c) {
    for (std::size_t ky = 0; ky < g.kh; ++ky) {
      for (std::size_t kx = 0; kx < g.kw; ++kx) {
        T* row = out.data() + ((c * g.kh + ky) * g.kw + kx) * cols;
        for (std::size_t n = 0; n < g.n; ++n) {
          const T* src = in + (n * g.c + c) * g.h * g.w;
          for (std::size_t oy = 0; oy < g.oh; ++oy) {
            const std::size_t iy = oy * g.stride + ky;
            if (iy < g.pad || iy - g.pad >= g.h) continue;
            for (std::size_t ox = 0; ox < g.ow; ++ox) {
              const std::size_t ix = ox * g.stride + kx;
              if (ix < g.pad || ix - g.pad >= g.w) continue;
              row[n * plane + oy * g.ow + ox] = src[(iy - g.pad) * g.w + (ix - g.pad)];
            }
          }
        }
      }
    }
  }
  return out;
}

// Adjoint of im2col: accumulates lowered gradients back into the input.
template <typename T>
void col2im_add(const ConvGeometry& g, const T* lowered, T* gin) {
  const std::size_t plane = g.oh * g.ow, cols = g.n * plane;
  for (std::size_t c = 0; c < g.c; ++c) {
    for (std::size_t ky = 0; ky < g.kh; ++ky) {
      for (std::size_t kx = 0; kx < g.kw; ++kx) {
        const T* row = lowered + ((c * g.kh + ky) * g.kw + kx) * cols;
        for (std::size_t n = 0; n < g.n; ++n) {
          T* dst = gin + (n * g.c + c) * g.h * g.w;
          for (std::size_t oy = 0; oy < g.oh; ++oy) {
            const std::size_t iy = oy * g.stride + ky;
            if (iy < g.pad || iy - g.pad >= g.h) continue;
            for (std::size_t ox = 0; ox < g.ow; ++ox) {
              const std::size_t ix = ox * g.stride + kx;
              if (ix < g.pad || ix - g.pad >= g.w) continue;
              dst[(iy - g.pad) * g.w + (ix - g.pad)] += row[n * plane + oy * g.ow + ox];
            }
          }
        }
      }
    }
  }
}

template <typename T>
void conv_forward(const ConvGeometry& g, const T* in, const T* ker, T* out) {
  const std::size_t plane = g.oh * g.ow, cols = g.n * plane, depth = g.c * g.kh * g.kw;
  const std::vector<T> lowered = im2col(g, in);
  std::vector<T> prod(g.f * cols, T{0});
  gemm_nn(ker, lowered.data(), prod.data(), g.f, depth, cols);
  for (std::size_t n = 0; n < g.n; ++n) {
    for (std::size_t f = 0; f < g.f; ++f) {
      std::copy_n(prod.data() + f * cols + n * plane, plane, out + (n * g.f + f) * plane);
    }
  }
}

template <typename T>
void conv_backward(const ConvGeometry& g, const T* in, const T* ker, const T* gout, T* gin,
                   T* gker) {
  const std::size_t plane = g.oh * g.ow, cols = g.n * plane, depth = g.c * g.kh * g.kw;
  std::vector<T> gprod(g.f * cols);
  for (std::size_t n = 0; n < g.n; ++n) {
    for (std::size_t f = 0; f < g.f; ++f) {
      std::copy_n(gout + (n * g.f + f) * plane, plane, gprod.data() + f * cols + n * plane);
    }
  }
  if (gker) {
    const std::vector<T> lowered = im2col(g, in);
    gemm_nt(gprod.data(), lowered.data(), gker, g.f, depth, cols);
  }
  if (gin) {
    std::vector<T> glowered(depth * cols, T{0});
    gemm_tn(ker, gprod.data(), glowered.data(), g.f, depth, cols);
    col2im_add(g, glowered.data(), gin);
  }
}

}  // namespace

std::size_t conv_output_extent(std::size_t in, std::size_t kernel, std::size_t stride,
                               std::size_t padding) {
  if (stride == 0) throw ConfigError("stride must be positive");
  const std::size_t padded = in + 2 * padding;
  if (kernel == 0 || kernel > padded) {
    throw ConfigError("kernel extent " + std::to_string(kernel) + " exceeds padded input extent " +
                      std::to_string(padded));
  }
  if ((padded - kernel) % stride != 0) {
    throw ConfigError("output extent (" + std::to_string(padded) + " - " + std::to_string(kernel) +
                      ") / " + std::to_string(stride) + " + 1 is not integral");
  }
  return (padded - kernel) / stride + 1;
}

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
  require_same_tape(a, b, "matmul");
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.rank() != 2 || sb.rank() != 2 || sa[1] != sb[0]) {
    throw DimensionError("matmul: shapes " + sa.str() + " and " + sb.str() + " are incompatible");
  }
  const std::size_t m = sa[0], p = sa[1], q = sb[1];
  Tensor<T> out(Shape{m, q});
  gemm_nn(a.value().data(), b.value().data(), out.data(), m, p, q);
  const std::size_t ia = a.index(), ib = b.index();
  return a.tape().record(std::move(out), OpKind::MatMul, {ia, ib},
                         [ia, ib, m, p, q](Tape<T>& tape, const Tensor<T>& g) {
                           if (Tensor<T>* ga = tape.grad_buffer(ia)) {
                             gemm_nt(g.data(), tape.value(ib).data(), ga->data(), m, p, q);
                           }
                           if (Tensor<T>* gb = tape.grad_buffer(ib)) {
                             gemm_tn(tape.value(ia).data(), g.data(), gb->data(), m, p, q);
                           }
                         });
}

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  require_same_tape(a, b, "add");
  if (a.shape() != b.shape()) {
    throw DimensionError("add: shapes " + a.shape().str() + " and " + b.shape().str() + " differ");
  }
  Tensor<T> out = a.value();
  auto dst = out.values();
  auto src = b.value().values();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
  const std::size_t ia = a.index(), ib = b.index();
  return a.tape().record(std::move(out), OpKind::Add, {ia, ib},
                         [ia, ib](Tape<T>& tape, const Tensor<T>& g) {
                           tape.accumulate(ia, g);
                           tape.accumulate(ib, g);
                         });
}

template <typename T>
Var<T> add_row_bias(Var<T> x, Var<T> bias) {
  require_same_tape(x, bias, "add_row_bias");
  require_rank(x, 2, "add_row_bias");
  const std::size_t n = x.shape()[0], d = x.shape()[1];
  if (bias.shape() != Shape{d}) {
    throw DimensionError("add_row_bias: bias " + bias.shape().str() + " does not match rows of " +
                         x.shape().str());
  }
  Tensor<T> out = x.value();
  const T* b = bias.value().data();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) out[i * d + j] += b[j];
  }
  const std::size_t ix = x.index(), ib = bias.index();
  return x.tape().record(std::move(out), OpKind::AddRowBias, {ix, ib},
                         [ix, ib, n, d](Tape<T>& tape, const Tensor<T>& g) {
                           tape.accumulate(ix, g);
                           if (Tensor<T>* gb = tape.grad_buffer(ib)) {
                             for (std::size_t i = 0; i < n; ++i) {
                               for (std::size_t j = 0; j < d; ++j) (*gb)[j] += g[i * d + j];
                             }
                           }
                         });
}

template <typename T>
Var<T> add_channel_bias(Var<T> x, Var<T> bias) {
  require_same_tape(x, bias, "add_channel_bias");
  require_rank(x, 4, "add_channel_bias");
  const Shape& s = x.shape();
  const std::size_t n = s[0], c = s[1], plane = s[2] * s[3];
  if (bias.shape() != Shape{c}) {
    throw DimensionError("add_channel_bias: bias " + bias.shape().str() +
                         " does not match channels of " + s.str());
  }
  Tensor<T> out = x.value();
  const T* b = bias.value().data();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      T* p = out.data() + (i * c + ch) * plane;
      for (std::size_t j = 0; j < plane; ++j) p[j] += b[ch];
    }
  }
  const std::size_t ix = x.index(), ib = bias.index();
  return x.tape().record(std::move(out), OpKind::AddChannelBias, {ix, ib},
                         [ix, ib, n, c, plane](Tape<T>& tape, const Tensor<T>& g) {
                           tape.accumulate(ix, g);
                           if (Tensor<T>* gb = tape.grad_buffer(ib)) {
                             for (std::size_t i = 0; i < n; ++i) {
                               for (std::size_t ch = 0; ch < c; ++ch) {
                                 const T* p = g.data() + (i * c + ch) * plane;
                                 T acc{0};
                                 for (std::size_t j = 0; j < plane; ++j) acc += p[j];
                                 (*gb)[ch] += acc;
                               }
                             }
                           }
                         });
}

template <typename T>
Var<T> affine(Var<T> x, Var<T> weight, Var<T> bias) {
  if (x.shape().rank() != 2 || weight.shape().rank() != 2 || x.shape()[1] != weight.shape()[0]) {
    throw DimensionError("affine: input " + x.shape().str() + " and weight " +
                         weight.shape().str() + " are incompatible");
  }
  return add_row_bias(matmul(x, weight), bias);
}

template <typename T>
Var<T> conv2d(Var<T> input, Var<T> kernel, std::size_t stride, std::size_t padding) {
  require_same_tape(input, kernel, "conv2d");
  require_rank(input, 4, "conv2d");
  require_rank(kernel, 4, "conv2d");
  const Shape& si = input.shape();
  const Shape& sk = kernel.shape();
  if (si[1] != sk[1]) {
    throw DimensionError("conv2d: input " + si.str() + " has " + std::to_string(si[1]) +
                         " channels but kernel " + sk.str() + " expects " + std::to_string(sk[1]));
  }
  ConvGeometry g{si[0], si[1], si[2], si[3], sk[0], sk[2], sk[3], stride, padding, 0, 0};
  g.oh = conv_output_extent(g.h, g.kh, stride, padding);
  g.ow = conv_output_extent(g.w, g.kw, stride, padding);
  Tensor<T> out(Shape{g.n, g.f, g.oh, g.ow});
  conv_forward(g, input.value().data(), kernel.value().data(), out.data());
  const std::size_t ii = input.index(), ik = kernel.index();
  return input.tape().record(
      std::move(out), OpKind::Conv2d, {ii, ik}, [ii, ik, g](Tape<T>& tape, const Tensor<T>& gout) {
        Tensor<T>* gin = tape.grad_buffer(ii);
        Tensor<T>* gker = tape.grad_buffer(ik);
        conv_backward(g, tape.value(ii).data(), tape.value(ik).data(), gout.data(),
                      gin ? gin->data() : nullptr, gker ? gker->data() : nullptr);
      });
}

template <typename T>
Var<T> relu(Var<T> x) {
  Tensor<T> out = x.value();
  // NaN passes through so non-finite activations reach the loss check.
  for (T& v : out.values()) v = v < T{0} ? T{0} : v;
  const std::size_t ix = x.index();
  return x.tape().record(std::move(out), OpKind::Relu, {ix},
                         [ix](Tape<T>& tape, const Tensor<T>& g) {
                           Tensor<T>* gx = tape.grad_buffer(ix);
                           if (!gx) return;
                           const Tensor<T>& in = tape.value(ix);
                           for (std::size_t i = 0; i < g.numel(); ++i) {
                             if (in[i] > T{0}) (*gx)[i] += g[i];
                           }
                         });
}

template <typename T>
Var<T> avgpool2d(Var<T> x, std::size_t window) {
  require_rank(x, 4, "avgpool2d");
  if (window == 0) throw ConfigError("avgpool2d: window must be positive");
  const Shape& s = x.shape();
  const std::size_t planes = s[0] * s[1], h = s[2], w = s[3];
  if (h % window != 0 || w % window != 0) {
    throw ConfigError("avgpool2d: extent " + s.str() + " not divisible by window " +
                      std::to_string(window));
  }
  const std::size_t oh = h / window, ow = w / window;
  const T inv = T{1} / static_cast<T>(window * window);
  Tensor<T> out(Shape{s[0], s[1], oh, ow});
  const T* in = x.value().data();
  for (std::size_t p = 0; p < planes; ++p) {
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox) {
        T acc{0};
        for (std::size_t dy = 0; dy < window; ++dy) {
          for (std::size_t dx = 0; dx < window; ++dx) {
            acc += in[(p * h + oy * window + dy) * w + ox * window + dx];
          }
        }
        out[(p * oh + oy) * ow + ox] = acc * inv;
      }
    }
  }
  const std::size_t ix = x.index();
  return x.tape().record(std::move(out), OpKind::AvgPool2d, {ix},
                         [ix, planes, h, w, oh, ow, window, inv](Tape<T>& tape,
                                                                const Tensor<T>& g) {
                           Tensor<T>* gx = tape.grad_buffer(ix);
                           if (!gx) return;
                           for (std::size_t p = 0; p < planes; ++p) {
                             for (std::size_t oy = 0; oy < oh; ++oy) {
                               for (std::size_t ox = 0; ox < ow; ++ox) {
                                 const T share = g[(p * oh + oy) * ow + ox] * inv;
                                 for (std::size_t dy = 0; dy < window; ++dy) {
                                   for (std::size_t dx = 0; dx < window; ++dx) {
                                     (*gx)[(p * h + oy * window + dy) * w + ox * window + dx] +=
                                         share;
                                   }
                                 }
                               }
                             }
                           }
                         });
}

template <typename T>
Var<T> reshape(Var<T> x, Shape shape) {
  Tensor<T> out = x.value().reshaped(std::move(shape));
  const std::size_t ix = x.index();
  return x.tape().record(std::move(out), OpKind::Reshape, {ix},
                         [ix](Tape<T>& tape, const Tensor<T>& g) {
                           if (Tensor<T>* gx = tape.grad_buffer(ix)) {
                             for (std::size_t i = 0; i < g.numel(); ++i) (*gx)[i] += g[i];
                           }
                         });
}

template <typename T>
Var<T> flatten(Var<T> x) {
  const Shape& s = x.shape();
  if (s.rank() < 2) throw DimensionError("flatten: expected batched input, got " + s.str());
  return reshape(x, Shape{s[0], s.numel() / s[0]});
}

template <typename T>
Var<T> sum(Var<T> x) {
  T acc{0};
  for (T v : x.value().values()) acc += v;
  const std::size_t ix = x.index();
  return x.tape().record(Tensor<T>::scalar(acc), OpKind::Sum, {ix},
                         [ix](Tape<T>& tape, const Tensor<T>& g) {
                           if (Tensor<T>* gx = tape.grad_buffer(ix)) {
                             for (T& v : gx->values()) v += g[0];
                           }
                         });
}

template <typename T>
Var<T> scale(Var<T> x, T factor) {
  Tensor<T> out = x.value();
  for (T& v : out.values()) v *= factor;
  const std::size_t ix = x.index();
  return x.tape().record(std::move(out), OpKind::Scale, {ix},
                         [ix, factor](Tape<T>& tape, const Tensor<T>& g) {
                           if (Tensor<T>* gx = tape.grad_buffer(ix)) {
                             for (std::size_t i = 0; i < g.numel(); ++i) (*gx)[i] += g[i] * factor;
                           }
                         });
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  require_same_tape(a, b, "mul");
  if (a.shape() != b.shape()) {
    throw DimensionError("mul: shapes " + a.shape().str() + " and " + b.shape().str() + " differ");
  }
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= b.value()[i];
  const std::size_t ia = a.index(), ib = b.index();
  return a.tape().record(std::move(out), OpKind::Mul, {ia, ib},
                         [ia, ib](Tape<T>& tape, const Tensor<T>& g) {
                           if (Tensor<T>* ga = tape.grad_buffer(ia)) {
                             const Tensor<T>& vb = tape.value(ib);
                             for (std::size_t i = 0; i < g.numel(); ++i) (*ga)[i] += g[i] * vb[i];
                           }
                           if (Tensor<T>* gb = tape.grad_buffer(ib)) {
                             const Tensor<T>& va = tape.value(ia);
                             for (std::size_t i = 0; i < g.numel(); ++i) (*gb)[i] += g[i] * va[i];
                           }
                         });
}

#define SKD_INSTANTIATE_OPS(T)                                              \
  template Var<T> matmul(Var<T>, Var<T>);                                   \
  template Var<T> add(Var<T>, Var<T>);                                      \
  template Var<T> add_row_bias(Var<T>, Var<T>);                             \
  template Var<T> add_channel_bias(Var<T>, Var<T>);                         \
  template Var<T> affine(Var<T>, Var<T>, Var<T>);                           \
  template Var<T> conv2d(Var<T>, Var<T>, std::size_t, std::size_t);         \
  template Var<T> relu(Var<T>);                                             \
  template Var<T> avgpool2d(Var<T>, std::size_t);                           \
  template Var<T> reshape(Var<T>, Shape);                                   \
  template Var<T> flatten(Var<T>);                                          \
  template Var<T> sum(Var<T>);                                              \
  template Var<T> scale(Var<T>, T);                                         \
  template Var<T> mul(Var<T>, Var<T>);

SKD_INSTANTIATE_OPS(float)
SKD_INSTANTIATE_OPS(double)

#undef SKD_INSTANTIATE_OPS

}  // namespace skd
