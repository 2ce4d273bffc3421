#include "amcseg/losses.hpp"

#include <algorithm>
#include <stdexcept>

namespace amcseg {

namespace {

template <class T>
void check_shapes(const Tensor<T>& pred, const Tensor<T>& target, const char* op) {
  if (pred.shape() != target.shape())
    throw std::invalid_argument(std::string(op) + ": prediction shape " +
                                shape_str(pred.shape()) + " != target shape " +
                                shape_str(target.shape()));
}

template <class T>
Tensor<T> one_minus(const Tensor<T>& x) {
  return affine(x, T(-1), T(1));
}

}  // namespace

LossConfig LossConfig::defaults(LossKind kind) {
  LossConfig cfg;
  cfg.kind = kind;
  switch (kind) {
    case LossKind::FL:
      cfg.alpha = 0.8;
      cfg.gamma = 2.0;
      break;
    case LossKind::TL:
    case LossKind::FTL:
      cfg.alpha = 0.7;
      cfg.beta = 0.3;
      cfg.gamma = 2.0;
      break;
    default:
      break;
  }
  return cfg;
}

void LossConfig::validate() const {
  if (alpha < 0 || beta < 0)
    throw std::invalid_argument("loss config: alpha and beta must be >= 0");
  if (gamma <= 0) throw std::invalid_argument("loss config: gamma must be > 0");
}

LossKind loss_kind_from(const std::string& name) {
  if (name == "CE") return LossKind::CE;
  if (name == "FL") return LossKind::FL;
  if (name == "DL") return LossKind::DL;
  if (name == "CEDL") return LossKind::CEDL;
  if (name == "IOU" || name == "IoU") return LossKind::IOU;
  if (name == "TL") return LossKind::TL;
  if (name == "FTL") return LossKind::FTL;
  throw std::invalid_argument("unknown loss '" + name +
                              "' (expected CE, FL, DL, CEDL, IOU, TL or FTL)");
}

std::string loss_kind_name(LossKind kind) {
  switch (kind) {
    case LossKind::CE: return "CE";
    case LossKind::FL: return "FL";
    case LossKind::DL: return "DL";
    case LossKind::CEDL: return "CEDL";
    case LossKind::IOU: return "IOU";
    case LossKind::TL: return "TL";
    case LossKind::FTL: return "FTL";
  }
  return "?";
}

template <class T>
Tensor<T> cross_entropy(const Tensor<T>& pred, const Tensor<T>& target) {
  check_shapes(pred, target, "cross_entropy");
  auto p = clamp(pred, T(kProbEps), T(1) - T(kProbEps));
  auto ll = add(mul(target, log(p)), mul(one_minus(target), log(one_minus(p))));
  return affine(mean(ll), T(-1), T(0));
}

template <class T>
Tensor<T> focal_loss(const Tensor<T>& pred, const Tensor<T>& target, T alpha, T gamma) {
  check_shapes(pred, target, "focal_loss");
  auto p = clamp(pred, T(kProbEps), T(1) - T(kProbEps));
  auto pt = add(mul(target, p), mul(one_minus(target), one_minus(p)));
  auto focal = mul(pow_scalar(one_minus(pt), gamma), log(pt));
  return affine(mean(focal), -alpha, T(0));
}

template <class T>
Tensor<T> dice_loss(const Tensor<T>& pred, const Tensor<T>& target, T smooth) {
  check_shapes(pred, target, "dice_loss");
  auto inter = sum(mul(target, pred));
  auto total = add(sum(target), sum(pred));
  auto ratio = div(affine(inter, T(2), smooth), affine(total, T(1), smooth));
  return one_minus(ratio);
}

template <class T>
Tensor<T> cedl_loss(const Tensor<T>& pred, const Tensor<T>& target) {
  return add(cross_entropy(pred, target), dice_loss(pred, target));
}

template <class T>
Tensor<T> iou_loss(const Tensor<T>& pred, const Tensor<T>& target, T smooth) {
  check_shapes(pred, target, "iou_loss");
  auto inter = sum(mul(target, pred));
  auto uni = add(add(sum(target), sum(pred)), affine(inter, T(-1), T(0)));
  auto ratio = div(affine(inter, T(1), smooth), affine(uni, T(1), smooth));
  return one_minus(ratio);
}

template <class T>
Tensor<T> tversky_loss(const Tensor<T>& pred, const Tensor<T>& target, T alpha, T beta,
                       T smooth) {
  check_shapes(pred, target, "tversky_loss");
  auto tp = sum(mul(target, pred));
  auto fp = sum(mul(one_minus(target), pred));
  auto fn = sum(mul(target, one_minus(pred)));
  auto den = add(tp, add(affine(fp, beta, T(0)), affine(fn, alpha, smooth)));
  return one_minus(div(affine(tp, T(1), smooth), den));
}

template <class T>
Tensor<T> focal_tversky_loss(const Tensor<T>& pred, const Tensor<T>& target, T alpha,
                             T beta, T gamma, FtlConvention convention) {
  auto tl = tversky_loss(pred, target, alpha, beta);
  if (convention == FtlConvention::kAsPrinted)
    return pow_scalar(one_minus(tl), T(1) / gamma);
  return pow_scalar(tl, T(1) / gamma);
}

template <class T>
Tensor<T> compute_loss(const LossConfig& cfg, const Tensor<T>& pred,
                       const Tensor<T>& target) {
  cfg.validate();
  const T a = static_cast<T>(cfg.alpha);
  const T b = static_cast<T>(cfg.beta);
  const T g = static_cast<T>(cfg.gamma);
  switch (cfg.kind) {
    case LossKind::CE: return cross_entropy(pred, target);
    case LossKind::FL: return focal_loss(pred, target, a, g);
    case LossKind::DL: return dice_loss(pred, target);
    case LossKind::CEDL: return cedl_loss(pred, target);
    case LossKind::IOU: return iou_loss(pred, target);
    case LossKind::TL: return tversky_loss(pred, target, a, b);
    case LossKind::FTL: return focal_tversky_loss(pred, target, a, b, g, cfg.ftl);
  }
  throw std::invalid_argument("compute_loss: bad loss kind");
}

#define AMCSEG_INSTANTIATE(T)                                                        \
  template Tensor<T> cross_entropy<T>(const Tensor<T>&, const Tensor<T>&);          \
  template Tensor<T> focal_loss<T>(const Tensor<T>&, const Tensor<T>&, T, T);       \
  template Tensor<T> dice_loss<T>(const Tensor<T>&, const Tensor<T>&, T);          \
  template Tensor<T> cedl_loss<T>(const Tensor<T>&, const Tensor<T>&);              \
  template Tensor<T> iou_loss<T>(const Tensor<T>&, const Tensor<T>&, T);            \
  template Tensor<T> tversky_loss<T>(const Tensor<T>&, const Tensor<T>&, T, T, T);  \
  template Tensor<T> focal_tversky_loss<T>(const Tensor<T>&, const Tensor<T>&, T, T, \
                                           T, FtlConvention);                       \
  template Tensor<T> compute_loss<T>(const LossConfig&, const Tensor<T>&,           \
                                     const Tensor<T>&);

AMCSEG_INSTANTIATE(float)
AMCSEG_INSTANTIATE(double)

#undef AMCSEG_INSTANTIATE

}  // namespace amcseg
