#pragma once

#include <string>

#include "amcseg/tensor.hpp"

namespace amcseg {

// Candidate training losses. Predictions are probability maps in (0,1),
// targets are binary masks of the same shape. Pixel losses (CE, FL) reduce by
// mean over every pixel in the batch; region losses (DL, IoU, TL, FTL) are
// computed from sums over the whole batch.

enum class LossKind { CE, FL, DL, CEDL, IOU, TL, FTL };

// Eq-as-printed FTL is (1 - TL)^(1/gamma), i.e. the Tversky index raised to
// 1/gamma; kComplement gives the usual TL^(1/gamma) decreasing-in-error form.
enum class FtlConvention { kAsPrinted, kComplement };

struct LossConfig {
  LossKind kind = LossKind::FL;
  double alpha = 0.8;
  double beta = 0.3;
  double gamma = 2.0;
  FtlConvention ftl = FtlConvention::kAsPrinted;

  static LossConfig defaults(LossKind kind);
  void validate() const;
};

LossKind loss_kind_from(const std::string& name);
std::string loss_kind_name(LossKind kind);

inline constexpr double kProbEps = 1e-7;  // clamp bound for log arguments

template <class T>
Tensor<T> cross_entropy(const Tensor<T>& pred, const Tensor<T>& target);
template <class T>
Tensor<T> focal_loss(const Tensor<T>& pred, const Tensor<T>& target, T alpha, T gamma);
// Region losses carry the formulas' +1 smoothing by default; the exact
// TL(0.5,0.5) == DL identity holds on the smoothing-free core (smooth = 0).
template <class T>
Tensor<T> dice_loss(const Tensor<T>& pred, const Tensor<T>& target, T smooth = T(1));
template <class T>
Tensor<T> cedl_loss(const Tensor<T>& pred, const Tensor<T>& target);
template <class T>
Tensor<T> iou_loss(const Tensor<T>& pred, const Tensor<T>& target, T smooth = T(1));
template <class T>
Tensor<T> tversky_loss(const Tensor<T>& pred, const Tensor<T>& target, T alpha, T beta,
                       T smooth = T(1));
template <class T>
Tensor<T> focal_tversky_loss(const Tensor<T>& pred, const Tensor<T>& target, T alpha,
                             T beta, T gamma,
                             FtlConvention convention = FtlConvention::kAsPrinted);

template <class T>
Tensor<T> compute_loss(const LossConfig& cfg, const Tensor<T>& pred,
                       const Tensor<T>& target);

}  // namespace amcseg
