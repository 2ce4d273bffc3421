#include "amcseg/tensor.hpp"

#include <omp.h>

#include <algorithm>
#include <cmath>
#include <mutex>
#include <sstream>
#include <unordered_set>

namespace amcseg {

namespace {

thread_local bool g_grad_enabled = true;

// Register-tiled kernels for the thin row-major products convolution needs.
// Batch items are mapped over OpenMP threads; each kernel call is
// single-threaded, so results do not depend on the thread count.

// C (M x N) = A (M x K) * B (K x N) [+ bias per row] [+= when accumulate]
template <class T>
void gemm_rowmajor(int M, int N, int K, const T* A, const T* B, T* C, const T* bias,
                   bool accumulate) {
  constexpr int MR = 8;
  constexpr int TN = 32;
  alignas(64) T acc[MR][TN];
  for (int m0 = 0; m0 < M; m0 += MR) {
    const int mb = std::min(MR, M - m0);
    for (int n0 = 0; n0 < N; n0 += TN) {
      const int nb = std::min(TN, N - n0);
      for (int mi = 0; mi < mb; ++mi) {
        const T base = bias ? bias[m0 + mi] : T(0);
        if (accumulate) {
          const T* crow = C + static_cast<std::size_t>(m0 + mi) * N + n0;
          for (int j = 0; j < nb; ++j) acc[mi][j] = crow[j] + base;
        } else {
          for (int j = 0; j < nb; ++j) acc[mi][j] = base;
        }
      }
      for (int k = 0; k < K; ++k) {
        const T* bk = B + static_cast<std::size_t>(k) * N + n0;
        for (int mi = 0; mi < mb; ++mi) {
          const T a = A[static_cast<std::size_t>(m0 + mi) * K + k];
#pragma omp simd
          for (int j = 0; j < nb; ++j) acc[mi][j] += a * bk[j];
        }
      }
      for (int mi = 0; mi < mb; ++mi) {
        T* crow = C + static_cast<std::size_t>(m0 + mi) * N + n0;
        for (int j = 0; j < nb; ++j) crow[j] = acc[mi][j];
      }
    }
  }
}

// C (M x P) += A (M x N) * B^T (B is P x N): the weight-gradient reduction.
template <class T>
void gemm_abt_acc(int M, int P, int N, const T* A, const T* B, T* C) {
  constexpr int MR = 4;
  constexpr int PR = 4;
  for (int m0 = 0; m0 < M; m0 += MR) {
    const int mb = std::min(MR, M - m0);
    for (int p0 = 0; p0 < P; p0 += PR) {
      const int pb = std::min(PR, P - p0);
      T acc[MR][PR] = {};
      for (int mi = 0; mi < mb; ++mi) {
        const T* arow = A + static_cast<std::size_t>(m0 + mi) * N;
        for (int pi = 0; pi < pb; ++pi) {
          const T* brow = B + static_cast<std::size_t>(p0 + pi) * N;
          T s = T(0);
#pragma omp simd reduction(+ : s)
          for (int n = 0; n < N; ++n) s += arow[n] * brow[n];
          acc[mi][pi] = s;
        }
      }
      for (int mi = 0; mi < mb; ++mi)
        for (int pi = 0; pi < pb; ++pi)
          C[static_cast<std::size_t>(m0 + mi) * P + p0 + pi] += acc[mi][pi];
    }
  }
}

std::size_t numel_of(const std::vector<int>& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d <= 0) throw std::invalid_argument("non-positive extent in shape " + shape_str(shape));
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

template <class T>
std::shared_ptr<TensorNode<T>> make_node(std::vector<int> shape) {
  auto n = std::make_shared<TensorNode<T>>();
  n->value.resize(numel_of(shape));
  n->shape = std::move(shape);
  return n;
}

template <class T>
bool track(std::initializer_list<const Tensor<T>*> inputs) {
  if (!g_grad_enabled) return false;
  for (const auto* t : inputs)
    if (t->node()->requires_grad) return true;
  return false;
}

template <class T>
void attach(const std::shared_ptr<TensorNode<T>>& out,
            std::initializer_list<const Tensor<T>*> inputs,
            std::function<void()> fn) {
  out->requires_grad = true;
  for (const auto* t : inputs) out->parents.push_back(t->node());
  out->backward = std::move(fn);
}

void require_4d(const std::vector<int>& s, const char* op) {
  if (s.size() != 4)
    throw std::invalid_argument(std::string(op) + ": expected 4-d BCHW tensor, got " + shape_str(s));
}

// col is laid out (C*KH*KW) x (OH*OW) so that GEMM runs without transposing
// the output and stride-1 rows are contiguous copies.
template <class T>
void im2col(const T* x, int C, int H, int W, int KH, int KW, int dil, int pad,
            int stride, int OH, int OW, T* col) {
  const std::size_t N = static_cast<std::size_t>(OH) * OW;
  for (int c = 0; c < C; ++c) {
    const T* xc = x + static_cast<std::size_t>(c) * H * W;
    for (int ky = 0; ky < KH; ++ky) {
      for (int kx = 0; kx < KW; ++kx) {
        T* dst = col + (static_cast<std::size_t>(c * KH + ky) * KW + kx) * N;
        for (int oy = 0; oy < OH; ++oy) {
          const int iy = oy * stride - pad + ky * dil;
          T* drow = dst + static_cast<std::size_t>(oy) * OW;
          if (iy < 0 || iy >= H) {
            std::fill(drow, drow + OW, T(0));
            continue;
          }
          const T* xrow = xc + static_cast<std::size_t>(iy) * W;
          if (stride == 1) {
            const int ix0 = kx * dil - pad;  // input x for ox = 0
            const int lo = std::clamp(-ix0, 0, OW);
            const int hi = std::clamp(W - ix0, 0, OW);
            std::fill(drow, drow + lo, T(0));
            std::fill(drow + std::max(hi, lo), drow + OW, T(0));
            if (hi > lo) std::copy(xrow + ix0 + lo, xrow + ix0 + hi, drow + lo);
          } else {
            for (int ox = 0; ox < OW; ++ox) {
              const int ix = ox * stride - pad + kx * dil;
              drow[ox] = (ix >= 0 && ix < W) ? xrow[ix] : T(0);
            }
          }
        }
      }
    }
  }
}

template <class T>
void col2im_add(const T* col, int C, int H, int W, int KH, int KW, int dil,
                int pad, int stride, int OH, int OW, T* dx) {
  const std::size_t N = static_cast<std::size_t>(OH) * OW;
  for (int c = 0; c < C; ++c) {
    T* xc = dx + static_cast<std::size_t>(c) * H * W;
    for (int ky = 0; ky < KH; ++ky) {
      for (int kx = 0; kx < KW; ++kx) {
        const T* src = col + (static_cast<std::size_t>(c * KH + ky) * KW + kx) * N;
        for (int oy = 0; oy < OH; ++oy) {
          const int iy = oy * stride - pad + ky * dil;
          if (iy < 0 || iy >= H) continue;
          const T* srow = src + static_cast<std::size_t>(oy) * OW;
          T* xrow = xc + static_cast<std::size_t>(iy) * W;
          if (stride == 1) {
            const int ix0 = kx * dil - pad;
            const int lo = std::clamp(-ix0, 0, OW);
            const int hi = std::clamp(W - ix0, 0, OW);
            for (int ox = lo; ox < hi; ++ox) xrow[ix0 + ox] += srow[ox];
          } else {
            for (int ox = 0; ox < OW; ++ox) {
              const int ix = ox * stride - pad + kx * dil;
              if (ix >= 0 && ix < W) xrow[ix] += srow[ox];
            }
          }
        }
      }
    }
  }
}

template <class T>
std::vector<T>& col_scratch() {
  static thread_local std::vector<T> buf;
  return buf;
}

}  // namespace

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

std::string shape_str(const std::vector<int>& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ')';
  return os.str();
}

template <class T>
Tensor<T> Tensor<T>::zeros(std::vector<int> shape, bool requires_grad) {
  auto n = make_node<T>(std::move(shape));
  n->requires_grad = requires_grad;
  return Tensor<T>(n);
}

template <class T>
Tensor<T> Tensor<T>::full(std::vector<int> shape, T value) {
  auto n = make_node<T>(std::move(shape));
  std::fill(n->value.begin(), n->value.end(), value);
  return Tensor<T>(n);
}

template <class T>
Tensor<T> Tensor<T>::scalar(T value) {
  return full({1}, value);
}

template <class T>
Tensor<T> Tensor<T>::from_data(std::vector<int> shape, std::vector<T> data,
                               bool requires_grad) {
  if (numel_of(shape) != data.size())
    throw std::invalid_argument("from_data: shape " + shape_str(shape) + " wants " +
                                std::to_string(numel_of(shape)) + " values, got " +
                                std::to_string(data.size()));
  auto n = std::make_shared<TensorNode<T>>();
  n->shape = std::move(shape);
  n->value = std::move(data);
  n->requires_grad = requires_grad;
  return Tensor<T>(n);
}

// ---- conv2d ----------------------------------------------------------------

template <class T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b,
                 int stride, int dilation, int pad) {
  require_4d(x.shape(), "conv2d");
  require_4d(w.shape(), "conv2d weight");
  if (b.ndim() != 1)
    throw std::invalid_argument("conv2d: bias must be 1-d, got " + shape_str(b.shape()));
  if (stride < 1 || dilation < 1 || pad < 0)
    throw std::invalid_argument("conv2d: stride/dilation must be positive, pad non-negative");

  const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int O = w.dim(0), I = w.dim(1), KH = w.dim(2), KW = w.dim(3);
  if (C != I)
    throw std::invalid_argument("conv2d: input channels (" + std::to_string(C) +
                                ") != weight in_channels (" + std::to_string(I) + ")");
  if (b.dim(0) != O)
    throw std::invalid_argument("conv2d: bias size != out_channels");
  const int ext_h = (KH - 1) * dilation + 1;
  const int ext_w = (KW - 1) * dilation + 1;
  if (ext_h > H + 2 * pad || ext_w > W + 2 * pad)
    throw std::invalid_argument("conv2d: effective kernel extent " + std::to_string(ext_h) +
                                " exceeds padded input " + std::to_string(H + 2 * pad));
  const int OH = (H + 2 * pad - ext_h) / stride + 1;
  const int OW = (W + 2 * pad - ext_w) / stride + 1;

  const int K = C * KH * KW;
  const std::size_t N = static_cast<std::size_t>(OH) * OW;
  const bool pointwise = (KH == 1 && KW == 1 && pad == 0 && stride == 1);

  auto out = make_node<T>({B, O, OH, OW});
  const T* xd = x.data().data();
  const T* wd = w.data().data();
  const T* bd = b.data().data();
  T* od = out->value.data();

#pragma omp parallel for schedule(static) if (B > 1)
  for (int bi = 0; bi < B; ++bi) {
    const T* xb = xd + static_cast<std::size_t>(bi) * C * H * W;
    T* ob = od + static_cast<std::size_t>(bi) * O * N;
    const T* colp = xb;
    if (!pointwise) {
      auto& col = col_scratch<T>();
      col.resize(static_cast<std::size_t>(K) * N);
      im2col(xb, C, H, W, KH, KW, dilation, pad, stride, OH, OW, col.data());
      colp = col.data();
    }
    gemm_rowmajor(O, static_cast<int>(N), K, wd, colp, ob, bd, false);
  }

  Tensor<T> result(out);
  if (track<T>({&x, &w, &b})) {
    auto* xn = x.node().get();
    auto* wn = w.node().get();
    auto* bn = b.node().get();
    auto* on = out.get();
    attach<T>(out, {&x, &w, &b},
              [=]() {
                const T* g = on->grad.data();
                const bool need_dx = xn->requires_grad;
                const bool need_dw = wn->requires_grad;
                const bool need_db = bn->requires_grad;
                if (need_dx) xn->ensure_grad();
                if (need_dw) wn->ensure_grad();
                if (need_db) bn->ensure_grad();

                // Per-item weight/bias partials keep the summation order fixed
                // regardless of how many threads run the batch loop.
                std::vector<std::vector<T>> dw_part, db_part;
                if (need_dw) dw_part.assign(B, std::vector<T>(wn->value.size(), T(0)));
                if (need_db) db_part.assign(B, std::vector<T>(static_cast<std::size_t>(O), T(0)));

                // W^T once, shared read-only by every batch item.
                std::vector<T> wt;
                if (need_dx) {
                  wt.resize(static_cast<std::size_t>(K) * O);
                  for (int o = 0; o < O; ++o)
                    for (int k = 0; k < K; ++k)
                      wt[static_cast<std::size_t>(k) * O + o] =
                          wd[static_cast<std::size_t>(o) * K + k];
                }

#pragma omp parallel for schedule(static) if (B > 1)
                for (int bi = 0; bi < B; ++bi) {
                  const T* gb = g + static_cast<std::size_t>(bi) * O * N;
                  const T* xb = xn->value.data() + static_cast<std::size_t>(bi) * C * H * W;
                  if (need_db) {
                    T* dbp = db_part[bi].data();
                    for (int o = 0; o < O; ++o) {
                      const T* row = gb + static_cast<std::size_t>(o) * N;
                      T acc = T(0);
                      for (std::size_t i = 0; i < N; ++i) acc += row[i];
                      dbp[o] = acc;
                    }
                  }
                  const T* colp = xb;
                  if (!pointwise && need_dw) {
                    auto& col = col_scratch<T>();
                    col.resize(static_cast<std::size_t>(K) * N);
                    im2col(xb, C, H, W, KH, KW, dilation, pad, stride, OH, OW, col.data());
                    colp = col.data();
                  }
                  if (need_dw)
                    gemm_abt_acc(O, K, static_cast<int>(N), gb, colp, dw_part[bi].data());
                  if (need_dx) {
                    T* dxb = xn->grad.data() + static_cast<std::size_t>(bi) * C * H * W;
                    if (pointwise) {
                      gemm_rowmajor(K, static_cast<int>(N), O, wt.data(), gb, dxb,
                                    static_cast<const T*>(nullptr), true);
                    } else {
                      static thread_local std::vector<T> dcol;
                      dcol.resize(static_cast<std::size_t>(K) * N);
                      gemm_rowmajor(K, static_cast<int>(N), O, wt.data(), gb, dcol.data(),
                                    static_cast<const T*>(nullptr), false);
                      col2im_add(dcol.data(), C, H, W, KH, KW, dilation, pad, stride,
                                 OH, OW, dxb);
                    }
                  }
                }
                if (need_dw) {
                  T* dw = wn->grad.data();
                  for (int bi = 0; bi < B; ++bi)
                    for (std::size_t i = 0; i < wn->value.size(); ++i) dw[i] += dw_part[bi][i];
                }
                if (need_db) {
                  T* db = bn->grad.data();
                  for (int bi = 0; bi < B; ++bi)
                    for (int o = 0; o < O; ++o) db[o] += db_part[bi][o];
                }
              });
  }
  return result;
}

// ---- pooling / upsampling ---------------------------------------------------

template <class T>
Tensor<T> maxpool2d(const Tensor<T>& x) {
  require_4d(x.shape(), "maxpool2d");
  const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (H % 2 != 0 || W % 2 != 0)
    throw std::invalid_argument("maxpool2d: H and W must be even, got " + shape_str(x.shape()));
  const int OH = H / 2, OW = W / 2;
  auto out = make_node<T>({B, C, OH, OW});
  auto argmax = std::make_shared<std::vector<std::size_t>>(out->numel());

  const T* xd = x.data().data();
  T* od = out->value.data();
  std::size_t oi = 0;
  for (int bc = 0; bc < B * C; ++bc) {
    const T* plane = xd + static_cast<std::size_t>(bc) * H * W;
    const std::size_t base = static_cast<std::size_t>(bc) * H * W;
    for (int oy = 0; oy < OH; ++oy) {
      for (int ox = 0; ox < OW; ++ox, ++oi) {
        const int iy = 2 * oy, ix = 2 * ox;
        std::size_t best = static_cast<std::size_t>(iy) * W + ix;
        T bv = plane[best];
        const std::size_t cand[3] = {best + 1, best + W, best + W + 1};
        for (std::size_t c : cand) {
          if (plane[c] > bv) { bv = plane[c]; best = c; }
        }
        od[oi] = bv;
        (*argmax)[oi] = base + best;
      }
    }
  }

  Tensor<T> result(out);
  if (track<T>({&x})) {
    auto* xn = x.node().get();
    auto* on = out.get();
    attach<T>(out, {&x}, [xn, on, argmax]() {
      xn->ensure_grad();
      T* dx = xn->grad.data();
      const T* g = on->grad.data();
      for (std::size_t i = 0; i < on->numel(); ++i) dx[(*argmax)[i]] += g[i];
    });
  }
  return result;
}

template <class T>
Tensor<T> upsample2d(const Tensor<T>& x) {
  require_4d(x.shape(), "upsample2d");
  const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  auto out = make_node<T>({B, C, 2 * H, 2 * W});
  const T* xd = x.data().data();
  T* od = out->value.data();
  for (int bc = 0; bc < B * C; ++bc) {
    const T* src = xd + static_cast<std::size_t>(bc) * H * W;
    T* dst = od + static_cast<std::size_t>(bc) * 4 * H * W;
    for (int y = 0; y < H; ++y) {
      T* r0 = dst + static_cast<std::size_t>(2 * y) * 2 * W;
      T* r1 = r0 + 2 * W;
      for (int xI = 0; xI < W; ++xI) {
        const T v = src[static_cast<std::size_t>(y) * W + xI];
        r0[2 * xI] = v;
        r0[2 * xI + 1] = v;
        r1[2 * xI] = v;
        r1[2 * xI + 1] = v;
      }
    }
  }
  Tensor<T> result(out);
  if (track<T>({&x})) {
    auto* xn = x.node().get();
    auto* on = out.get();
    attach<T>(out, {&x}, [xn, on, B, C, H, W]() {
      xn->ensure_grad();
      T* dx = xn->grad.data();
      const T* g = on->grad.data();
      for (int bc = 0; bc < B * C; ++bc) {
        T* dst = dx + static_cast<std::size_t>(bc) * H * W;
        const T* src = g + static_cast<std::size_t>(bc) * 4 * H * W;
        for (int y = 0; y < H; ++y) {
          const T* r0 = src + static_cast<std::size_t>(2 * y) * 2 * W;
          const T* r1 = r0 + 2 * W;
          for (int xI = 0; xI < W; ++xI)
            dst[static_cast<std::size_t>(y) * W + xI] +=
                r0[2 * xI] + r0[2 * xI + 1] + r1[2 * xI] + r1[2 * xI + 1];
        }
      }
    });
  }
  return result;
}

template <class T>
Tensor<T> concat_channels(const std::vector<Tensor<T>>& xs) {
  if (xs.empty()) throw std::invalid_argument("concat_channels: empty input list");
  require_4d(xs[0].shape(), "concat_channels");
  const int B = xs[0].dim(0), H = xs[0].dim(2), W = xs[0].dim(3);
  int C = 0;
  for (const auto& t : xs) {
    require_4d(t.shape(), "concat_channels");
    if (t.dim(0) != B || t.dim(2) != H || t.dim(3) != W)
      throw std::invalid_argument("concat_channels: mismatched shapes " +
                                  shape_str(xs[0].shape()) + " vs " + shape_str(t.shape()));
    C += t.dim(1);
  }
  auto out = make_node<T>({B, C, H, W});
  const std::size_t plane = static_cast<std::size_t>(H) * W;
  T* od = out->value.data();
  for (int bi = 0; bi < B; ++bi) {
    std::size_t off = static_cast<std::size_t>(bi) * C * plane;
    for (const auto& t : xs) {
      const int c = t.dim(1);
      const T* src = t.data().data() + static_cast<std::size_t>(bi) * c * plane;
      std::copy(src, src + static_cast<std::size_t>(c) * plane, od + off);
      off += static_cast<std::size_t>(c) * plane;
    }
  }

  bool any = false;
  if (g_grad_enabled)
    for (const auto& t : xs) any = any || t.requires_grad();
  Tensor<T> result(out);
  if (any) {
    std::vector<std::shared_ptr<TensorNode<T>>> parents;
    parents.reserve(xs.size());
    for (const auto& t : xs) parents.push_back(t.node());
    auto* on = out.get();
    out->requires_grad = true;
    out->parents = parents;
    out->backward = [on, parents, B, C, H, W]() {
      const std::size_t plane = static_cast<std::size_t>(H) * W;
      const T* g = on->grad.data();
      for (auto& p : parents)
        if (p->requires_grad) p->ensure_grad();
      for (int bi = 0; bi < B; ++bi) {
        std::size_t off = static_cast<std::size_t>(bi) * C * plane;
        for (auto& p : parents) {
          const int c = p->shape[1];
          const std::size_t n = static_cast<std::size_t>(c) * plane;
          if (p->requires_grad) {
            T* dst = p->grad.data() + static_cast<std::size_t>(bi) * n;
            const T* src = g + off;
            for (std::size_t i = 0; i < n; ++i) dst[i] += src[i];
          }
          off += n;
        }
      }
    };
  }
  return result;
}

template <class T>
Tensor<T> spatial_dropout(const Tensor<T>& x, double p, std::mt19937_64& rng) {
  require_4d(x.shape(), "spatial_dropout");
  if (p < 0.0 || p >= 1.0)
    throw std::invalid_argument("spatial_dropout: p must be in [0,1)");
  if (p == 0.0) return x;
  const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t plane = static_cast<std::size_t>(H) * W;
  auto keep = std::make_shared<std::vector<T>>(static_cast<std::size_t>(B) * C);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const T scale = static_cast<T>(1.0 / (1.0 - p));
  for (auto& k : *keep) k = (u(rng) < p) ? T(0) : scale;

  auto out = make_node<T>(x.shape());
  const T* xd = x.data().data();
  T* od = out->value.data();
  for (int bc = 0; bc < B * C; ++bc) {
    const T k = (*keep)[static_cast<std::size_t>(bc)];
    const T* src = xd + static_cast<std::size_t>(bc) * plane;
    T* dst = od + static_cast<std::size_t>(bc) * plane;
    for (std::size_t i = 0; i < plane; ++i) dst[i] = src[i] * k;
  }
  Tensor<T> result(out);
  if (track<T>({&x})) {
    auto* xn = x.node().get();
    auto* on = out.get();
    attach<T>(out, {&x}, [xn, on, keep, plane]() {
      xn->ensure_grad();
      T* dx = xn->grad.data();
      const T* g = on->grad.data();
      for (std::size_t bc = 0; bc < keep->size(); ++bc) {
        const T k = (*keep)[bc];
        for (std::size_t i = 0; i < plane; ++i) dx[bc * plane + i] += g[bc * plane + i] * k;
      }
    });
  }
  return result;
}

// ---- elementwise ------------------------------------------------------------

namespace {

template <class T, class Fwd, class Bwd>
Tensor<T> unary_op(const Tensor<T>& x, const char* /*name*/, Fwd fwd, Bwd mk_bwd) {
  auto out = make_node<T>(x.shape());
  const T* xd = x.data().data();
  T* od = out->value.data();
  const std::size_t n = x.numel();
  for (std::size_t i = 0; i < n; ++i) od[i] = fwd(xd[i]);
  Tensor<T> result(out);
  if (track<T>({&x})) {
    auto* xn = x.node().get();
    auto* on = out.get();
    attach<T>(out, {&x}, mk_bwd(xn, on, n));
  }
  return result;
}

}  // namespace

template <class T>
Tensor<T> relu(const Tensor<T>& x) {
  return unary_op<T>(
      x, "relu", [](T v) { return v > T(0) ? v : T(0); },
      [](TensorNode<T>* xn, TensorNode<T>* on, std::size_t n) {
        return [xn, on, n]() {
          xn->ensure_grad();
          const T* xd = xn->value.data();
          const T* g = on->grad.data();
          T* dx = xn->grad.data();
          for (std::size_t i = 0; i < n; ++i)
            if (xd[i] > T(0)) dx[i] += g[i];
        };
      });
}

template <class T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  return unary_op<T>(
      x, "sigmoid",
      [](T v) {
        // Split by sign so exp never overflows.
        if (v >= T(0)) return T(1) / (T(1) + std::exp(-v));
        const T e = std::exp(v);
        return e / (T(1) + e);
      },
      [](TensorNode<T>* xn, TensorNode<T>* on, std::size_t n) {
        return [xn, on, n]() {
          xn->ensure_grad();
          const T* s = on->value.data();
          const T* g = on->grad.data();
          T* dx = xn->grad.data();
          for (std::size_t i = 0; i < n; ++i) dx[i] += g[i] * s[i] * (T(1) - s[i]);
        };
      });
}

template <class T>
Tensor<T> affine(const Tensor<T>& x, T a, T b) {
  return unary_op<T>(
      x, "affine", [a, b](T v) { return a * v + b; },
      [a](TensorNode<T>* xn, TensorNode<T>* on, std::size_t n) {
        return [xn, on, n, a]() {
          xn->ensure_grad();
          const T* g = on->grad.data();
          T* dx = xn->grad.data();
          for (std::size_t i = 0; i < n; ++i) dx[i] += a * g[i];
        };
      });
}

template <class T>
Tensor<T> log(const Tensor<T>& x) {
  return unary_op<T>(
      x, "log", [](T v) { return std::log(v); },
      [](TensorNode<T>* xn, TensorNode<T>* on, std::size_t n) {
        return [xn, on, n]() {
          xn->ensure_grad();
          const T* xd = xn->value.data();
          const T* g = on->grad.data();
          T* dx = xn->grad.data();
          for (std::size_t i = 0; i < n; ++i) dx[i] += g[i] / xd[i];
        };
      });
}

template <class T>
Tensor<T> pow_scalar(const Tensor<T>& x, T e) {
  return unary_op<T>(
      x, "pow", [e](T v) { return std::pow(v, e); },
      [e](TensorNode<T>* xn, TensorNode<T>* on, std::size_t n) {
        return [xn, on, n, e]() {
          xn->ensure_grad();
          const T* xd = xn->value.data();
          const T* g = on->grad.data();
          T* dx = xn->grad.data();
          for (std::size_t i = 0; i < n; ++i)
            dx[i] += g[i] * e * std::pow(xd[i], e - T(1));
        };
      });
}

template <class T>
Tensor<T> clamp(const Tensor<T>& x, T lo, T hi) {
  return unary_op<T>(
      x, "clamp", [lo, hi](T v) { return std::min(std::max(v, lo), hi); },
      [lo, hi](TensorNode<T>* xn, TensorNode<T>* on, std::size_t n) {
        return [xn, on, n, lo, hi]() {
          xn->ensure_grad();
          const T* xd = xn->value.data();
          const T* g = on->grad.data();
          T* dx = xn->grad.data();
          for (std::size_t i = 0; i < n; ++i)
            if (xd[i] > lo && xd[i] < hi) dx[i] += g[i];
        };
      });
}

namespace {

enum class Bcast { kNone, kScalarA, kScalarB, kChannelB };

template <class T>
Bcast binary_mode(const Tensor<T>& a, const Tensor<T>& b, bool allow_channel,
                  const char* op) {
  if (a.shape() == b.shape()) return Bcast::kNone;
  if (b.numel() == 1) return Bcast::kScalarB;
  if (a.numel() == 1) return Bcast::kScalarA;
  if (allow_channel && a.ndim() == 4 && b.ndim() == 4 && b.dim(1) == 1 &&
      a.dim(0) == b.dim(0) && a.dim(2) == b.dim(2) && a.dim(3) == b.dim(3))
    return Bcast::kChannelB;
  throw std::invalid_argument(std::string(op) + ": incompatible shapes " +
                              shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

}  // namespace

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  const Bcast mode = binary_mode(a, b, false, "add");
  const Tensor<T>& big = (mode == Bcast::kScalarA) ? b : a;
  auto out = make_node<T>(big.shape());
  const T* ad = a.data().data();
  const T* bd = b.data().data();
  T* od = out->value.data();
  const std::size_t n = out->numel();
  switch (mode) {
    case Bcast::kNone:
      for (std::size_t i = 0; i < n; ++i) od[i] = ad[i] + bd[i];
      break;
    case Bcast::kScalarB:
      for (std::size_t i = 0; i < n; ++i) od[i] = ad[i] + bd[0];
      break;
    case Bcast::kScalarA:
      for (std::size_t i = 0; i < n; ++i) od[i] = ad[0] + bd[i];
      break;
    default:
      break;
  }
  Tensor<T> result(out);
  if (track<T>({&a, &b})) {
    auto* an = a.node().get();
    auto* bn = b.node().get();
    auto* on = out.get();
    attach<T>(out, {&a, &b}, [an, bn, on, n]() {
      const T* g = on->grad.data();
      for (auto [pn, _] : {std::pair{an, 0}, std::pair{bn, 1}}) {
        if (!pn->requires_grad) continue;
        pn->ensure_grad();
        T* d = pn->grad.data();
        if (pn->numel() == n) {
          for (std::size_t i = 0; i < n; ++i) d[i] += g[i];
        } else {  // scalar side
          T acc = T(0);
          for (std::size_t i = 0; i < n; ++i) acc += g[i];
          d[0] += acc;
        }
      }
    });
  }
  return result;
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  const Bcast mode = binary_mode(a, b, true, "mul");
  const Tensor<T>& big = (mode == Bcast::kScalarA) ? b : a;
  auto out = make_node<T>(big.shape());
  const T* ad = a.data().data();
  const T* bd = b.data().data();
  T* od = out->value.data();
  const std::size_t n = out->numel();
  const int C = (mode == Bcast::kChannelB) ? a.dim(1) : 1;
  const std::size_t plane =
      (mode == Bcast::kChannelB) ? static_cast<std::size_t>(a.dim(2)) * a.dim(3) : 0;
  switch (mode) {
    case Bcast::kNone:
      for (std::size_t i = 0; i < n; ++i) od[i] = ad[i] * bd[i];
      break;
    case Bcast::kScalarB:
      for (std::size_t i = 0; i < n; ++i) od[i] = ad[i] * bd[0];
      break;
    case Bcast::kScalarA:
      for (std::size_t i = 0; i < n; ++i) od[i] = ad[0] * bd[i];
      break;
    case Bcast::kChannelB: {
      const int B = a.dim(0);
      for (int bi = 0; bi < B; ++bi) {
        const T* bplane = bd + static_cast<std::size_t>(bi) * plane;
        for (int c = 0; c < C; ++c) {
          const std::size_t off = (static_cast<std::size_t>(bi) * C + c) * plane;
          for (std::size_t i = 0; i < plane; ++i) od[off + i] = ad[off + i] * bplane[i];
        }
      }
      break;
    }
  }
  Tensor<T> result(out);
  if (track<T>({&a, &b})) {
    auto* an = a.node().get();
    auto* bn = b.node().get();
    auto* on = out.get();
    const int B4 = (mode == Bcast::kChannelB) ? a.dim(0) : 0;
    attach<T>(out, {&a, &b}, [an, bn, on, n, mode, B4, C, plane]() {
      const T* g = on->grad.data();
      const T* av = an->value.data();
      const T* bv = bn->value.data();
      if (an->requires_grad) {
        an->ensure_grad();
        T* da = an->grad.data();
        switch (mode) {
          case Bcast::kNone:
            for (std::size_t i = 0; i < n; ++i) da[i] += g[i] * bv[i];
            break;
          case Bcast::kScalarB:
            for (std::size_t i = 0; i < n; ++i) da[i] += g[i] * bv[0];
            break;
          case Bcast::kScalarA: {
            T acc = T(0);
            for (std::size_t i = 0; i < n; ++i) acc += g[i] * bv[i];
            da[0] += acc;
            break;
          }
          case Bcast::kChannelB:
            for (int bi = 0; bi < B4; ++bi) {
              const T* bp = bv + static_cast<std::size_t>(bi) * plane;
              for (int c = 0; c < C; ++c) {
                const std::size_t off = (static_cast<std::size_t>(bi) * C + c) * plane;
                for (std::size_t i = 0; i < plane; ++i) da[off + i] += g[off + i] * bp[i];
              }
            }
            break;
        }
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        T* db = bn->grad.data();
        switch (mode) {
          case Bcast::kNone:
            for (std::size_t i = 0; i < n; ++i) db[i] += g[i] * av[i];
            break;
          case Bcast::kScalarA:
            for (std::size_t i = 0; i < n; ++i) db[i] += g[i] * av[0];
            break;
          case Bcast::kScalarB: {
            T acc = T(0);
            for (std::size_t i = 0; i < n; ++i) acc += g[i] * av[i];
            db[0] += acc;
            break;
          }
          case Bcast::kChannelB:
            for (int bi = 0; bi < B4; ++bi) {
              T* dbp = db + static_cast<std::size_t>(bi) * plane;
              for (int c = 0; c < C; ++c) {
                const std::size_t off = (static_cast<std::size_t>(bi) * C + c) * plane;
                for (std::size_t i = 0; i < plane; ++i) dbp[i] += g[off + i] * av[off + i];
              }
            }
            break;
        }
      }
    });
  }
  return result;
}

template <class T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
  const Bcast mode = binary_mode(a, b, false, "div");
  const Tensor<T>& big = (mode == Bcast::kScalarA) ? b : a;
  auto out = make_node<T>(big.shape());
  const T* ad = a.data().data();
  const T* bd = b.data().data();
  T* od = out->value.data();
  const std::size_t n = out->numel();
  switch (mode) {
    case Bcast::kNone:
      for (std::size_t i = 0; i < n; ++i) od[i] = ad[i] / bd[i];
      break;
    case Bcast::kScalarB:
      for (std::size_t i = 0; i < n; ++i) od[i] = ad[i] / bd[0];
      break;
    case Bcast::kScalarA:
      for (std::size_t i = 0; i < n; ++i) od[i] = ad[0] / bd[i];
      break;
    default:
      break;
  }
  Tensor<T> result(out);
  if (track<T>({&a, &b})) {
    auto* an = a.node().get();
    auto* bn = b.node().get();
    auto* on = out.get();
    attach<T>(out, {&a, &b}, [an, bn, on, n, mode]() {
      const T* g = on->grad.data();
      const T* av = an->value.data();
      const T* bv = bn->value.data();
      if (an->requires_grad) {
        an->ensure_grad();
        T* da = an->grad.data();
        if (mode == Bcast::kScalarA) {
          T acc = T(0);
          for (std::size_t i = 0; i < n; ++i) acc += g[i] / bv[i];
          da[0] += acc;
        } else if (mode == Bcast::kScalarB) {
          for (std::size_t i = 0; i < n; ++i) da[i] += g[i] / bv[0];
        } else {
          for (std::size_t i = 0; i < n; ++i) da[i] += g[i] / bv[i];
        }
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        T* db = bn->grad.data();
        if (mode == Bcast::kScalarB) {
          T acc = T(0);
          for (std::size_t i = 0; i < n; ++i) acc += -g[i] * av[i] / (bv[0] * bv[0]);
          db[0] += acc;
        } else if (mode == Bcast::kScalarA) {
          for (std::size_t i = 0; i < n; ++i) db[i] += -g[i] * av[0] / (bv[i] * bv[i]);
        } else {
          for (std::size_t i = 0; i < n; ++i) db[i] += -g[i] * av[i] / (bv[i] * bv[i]);
        }
      }
    });
  }
  return result;
}

// ---- reductions -------------------------------------------------------------

template <class T>
Tensor<T> sum(const Tensor<T>& x) {
  auto out = make_node<T>({1});
  const T* xd = x.data().data();
  T acc = T(0);
  const std::size_t n = x.numel();
  for (std::size_t i = 0; i < n; ++i) acc += xd[i];
  out->value[0] = acc;
  Tensor<T> result(out);
  if (track<T>({&x})) {
    auto* xn = x.node().get();
    auto* on = out.get();
    attach<T>(out, {&x}, [xn, on, n]() {
      xn->ensure_grad();
      const T g = on->grad[0];
      T* dx = xn->grad.data();
      for (std::size_t i = 0; i < n; ++i) dx[i] += g;
    });
  }
  return result;
}

template <class T>
Tensor<T> mean(const Tensor<T>& x) {
  const T scale = T(1) / static_cast<T>(x.numel());
  return affine(sum(x), scale, T(0));
}

// ---- backward ---------------------------------------------------------------

template <class T>
void backward(const Tensor<T>& loss) {
  if (loss.numel() != 1)
    throw std::invalid_argument("backward: loss must be scalar, got " +
                                shape_str(loss.shape()));
  if (!loss.requires_grad())
    throw std::invalid_argument("backward: loss is not connected to any tracked tensor");

  // Linearize the recorded graph (reverse topological order) and replay it.
  std::vector<TensorNode<T>*> order;
  std::unordered_set<TensorNode<T>*> seen;
  struct Frame {
    TensorNode<T>* n;
    std::size_t next;
  };
  std::vector<Frame> stack{{loss.node().get(), 0}};
  seen.insert(loss.node().get());
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next < f.n->parents.size()) {
      TensorNode<T>* p = f.n->parents[f.next++].get();
      if (p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.push_back({p, 0});
      }
    } else {
      order.push_back(f.n);
      stack.pop_back();
    }
  }

  // Leaves accumulate across calls; interior nodes start each pass fresh.
  for (auto* n : order) {
    if (!n->parents.empty())
      n->grad.assign(n->value.size(), T(0));
    else
      n->ensure_grad();
  }
  loss.node()->ensure_grad();
  loss.node()->grad[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it)
    if ((*it)->backward) (*it)->backward();
}

template <class T>
bool all_finite(const Tensor<T>& x) {
  for (T v : x.data())
    if (!std::isfinite(v)) return false;
  return true;
}

// ---- explicit instantiations --------------------------------------------------

#define AMCSEG_INSTANTIATE(T)                                                      \
  template class Tensor<T>;                                                        \
  template Tensor<T> conv2d<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, \
                               int, int, int);                                     \
  template Tensor<T> maxpool2d<T>(const Tensor<T>&);                               \
  template Tensor<T> upsample2d<T>(const Tensor<T>&);                              \
  template Tensor<T> concat_channels<T>(const std::vector<Tensor<T>>&);            \
  template Tensor<T> spatial_dropout<T>(const Tensor<T>&, double, std::mt19937_64&); \
  template Tensor<T> relu<T>(const Tensor<T>&);                                    \
  template Tensor<T> sigmoid<T>(const Tensor<T>&);                                 \
  template Tensor<T> add<T>(const Tensor<T>&, const Tensor<T>&);                   \
  template Tensor<T> mul<T>(const Tensor<T>&, const Tensor<T>&);                   \
  template Tensor<T> div<T>(const Tensor<T>&, const Tensor<T>&);                   \
  template Tensor<T> affine<T>(const Tensor<T>&, T, T);                            \
  template Tensor<T> log<T>(const Tensor<T>&);                                     \
  template Tensor<T> pow_scalar<T>(const Tensor<T>&, T);                           \
  template Tensor<T> clamp<T>(const Tensor<T>&, T, T);                             \
  template Tensor<T> sum<T>(const Tensor<T>&);                                     \
  template Tensor<T> mean<T>(const Tensor<T>&);                                    \
  template void backward<T>(const Tensor<T>&);                                     \
  template bool all_finite<T>(const Tensor<T>&);

AMCSEG_INSTANTIATE(float)
AMCSEG_INSTANTIATE(double)

#undef AMCSEG_INSTANTIATE

}  // namespace amcseg
