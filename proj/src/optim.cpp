#include "amcseg/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace amcseg {

template <class T>
void adam_step(std::span<T> param, std::span<const T> grad, std::span<T> m,
               std::span<T> v, long t, const AdamConfig& cfg) {
  if (param.size() != grad.size() || param.size() != m.size() || param.size() != v.size())
    throw std::invalid_argument("adam_step: size mismatch between parameter, gradient and state");
  const T b1 = static_cast<T>(cfg.beta1);
  const T b2 = static_cast<T>(cfg.beta2);
  const T corr1 = T(1) - static_cast<T>(std::pow(cfg.beta1, static_cast<double>(t)));
  const T corr2 = T(1) - static_cast<T>(std::pow(cfg.beta2, static_cast<double>(t)));
  const T lr = static_cast<T>(cfg.lr);
  const T eps = static_cast<T>(cfg.eps);
  for (std::size_t i = 0; i < param.size(); ++i) {
    m[i] = b1 * m[i] + (T(1) - b1) * grad[i];
    v[i] = b2 * v[i] + (T(1) - b2) * grad[i] * grad[i];
    const T mhat = m[i] / corr1;
    const T vhat = v[i] / corr2;
    param[i] -= lr * mhat / (std::sqrt(vhat) + eps);
  }
}

template <class T>
Adam<T>::Adam(const std::vector<NamedParam<T>>& params, AdamConfig cfg) : cfg_(cfg) {
  m_.reserve(params.size());
  v_.reserve(params.size());
  for (const auto& p : params) {
    m_.emplace_back(p.tensor.numel(), T(0));
    v_.emplace_back(p.tensor.numel(), T(0));
  }
}

template <class T>
void Adam<T>::step(std::vector<NamedParam<T>>& params) {
  if (params.size() != m_.size())
    throw std::invalid_argument("Adam::step: parameter list changed size");
  ++t_;
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& t = params[i].tensor;
    adam_step<T>(t.data(), t.grad(), m_[i], v_[i], t_, cfg_);
  }
}

template void adam_step<float>(std::span<float>, std::span<const float>,
                               std::span<float>, std::span<float>, long,
                               const AdamConfig&);
template void adam_step<double>(std::span<double>, std::span<const double>,
                                std::span<double>, std::span<double>, long,
                                const AdamConfig&);
template class Adam<float>;
template class Adam<double>;

}  // namespace amcseg
