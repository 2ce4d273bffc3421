#pragma once

#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "amcseg/tensor.hpp"

namespace amcseg::test {

template <class T>
Tensor<T> random_tensor(std::vector<int> shape, std::mt19937_64& rng, T lo = T(-1),
                        T hi = T(1), bool requires_grad = false) {
  std::uniform_real_distribution<double> u(lo, hi);
  auto t = Tensor<T>::zeros(std::move(shape), requires_grad);
  for (auto& v : t.data()) v = static_cast<T>(u(rng));
  return t;
}

template <class T>
Tensor<T> random_binary(std::vector<int> shape, std::mt19937_64& rng, double p = 0.5) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  auto t = Tensor<T>::zeros(std::move(shape));
  for (auto& v : t.data()) v = u(rng) < p ? T(1) : T(0);
  return t;
}

// Central-difference check of the scalar expression built by `fwd` against the
// analytic gradients of `leaves`. Returns the maximum relative error, where
// relative means |analytic - numeric| / max(1, |analytic|, |numeric|).
inline double grad_check(const std::function<Tensor<double>()>& fwd,
                         const std::vector<Tensor<double>>& leaves, double h = 1e-5) {
  for (const auto& l : leaves) const_cast<Tensor<double>&>(l).zero_grad();
  auto loss = fwd();
  backward(loss);
  std::vector<std::vector<double>> analytic;
  analytic.reserve(leaves.size());
  for (const auto& l : leaves) analytic.push_back(l.grad());

  double max_err = 0.0;
  for (std::size_t li = 0; li < leaves.size(); ++li) {
    auto& data = const_cast<Tensor<double>&>(leaves[li]).data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double saved = data[i];
      NoGradGuard ng;
      data[i] = saved + h;
      const double fp = fwd().item();
      data[i] = saved - h;
      const double fm = fwd().item();
      data[i] = saved;
      const double numeric = (fp - fm) / (2.0 * h);
      const double a = analytic[li][i];
      const double denom = std::max({1.0, std::abs(a), std::abs(numeric)});
      max_err = std::max(max_err, std::abs(a - numeric) / denom);
    }
  }
  return max_err;
}

// Direct six-loop convolution used as the independent oracle for conv2d.
template <class T>
std::vector<T> naive_conv2d(const std::vector<T>& x, int B, int C, int H, int W,
                            const std::vector<T>& w, int O, int KH, int KW,
                            const std::vector<T>& bias, int stride, int dil, int pad,
                            int* oh_out = nullptr, int* ow_out = nullptr) {
  const int OH = (H + 2 * pad - ((KH - 1) * dil + 1)) / stride + 1;
  const int OW = (W + 2 * pad - ((KW - 1) * dil + 1)) / stride + 1;
  if (oh_out) *oh_out = OH;
  if (ow_out) *ow_out = OW;
  std::vector<T> out(static_cast<std::size_t>(B) * O * OH * OW, T(0));
  for (int b = 0; b < B; ++b)
    for (int o = 0; o < O; ++o)
      for (int oy = 0; oy < OH; ++oy)
        for (int ox = 0; ox < OW; ++ox) {
          T acc = bias[o];
          for (int c = 0; c < C; ++c)
            for (int ky = 0; ky < KH; ++ky)
              for (int kx = 0; kx < KW; ++kx) {
                const int iy = oy * stride - pad + ky * dil;
                const int ix = ox * stride - pad + kx * dil;
                if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
                acc += x[((static_cast<std::size_t>(b) * C + c) * H + iy) * W + ix] *
                       w[((static_cast<std::size_t>(o) * C + c) * KH + ky) * KW + kx];
              }
          out[((static_cast<std::size_t>(b) * O + o) * OH + oy) * OW + ox] = acc;
        }
  return out;
}

}  // namespace amcseg::test
