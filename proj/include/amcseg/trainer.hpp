#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "amcseg/augment.hpp"
#include "amcseg/data.hpp"
#include "amcseg/losses.hpp"
#include "amcseg/network.hpp"
#include "amcseg/optim.hpp"

namespace amcseg {

struct TrainConfig {
  int batch_size = 16;
  int epochs = 70;
  double lr = 0.001;
  LossConfig loss = LossConfig::defaults(LossKind::FL);
  AugmentConfig augment;
  std::uint64_t seed = 0;
  bool oversample_infected = false;

  void validate() const;
};

struct EpochStats {
  double train_loss = 0.0;
  double train_dsc = 0.0;
  double val_loss = 0.0;
  double val_dsc = 0.0;
};

struct LearningCurve {
  std::vector<EpochStats> epochs;
  int best_epoch = -1;  // 0-based; the checkpoint that was kept
};

void write_curve_csv(const LearningCurve& curve, const std::string& path);

// Runs the full loop over `net`, which ends up holding the weights of the
// best-validation-DSC epoch (earliest on ties; final weights when the
// validation set is empty). Patches are owned elsewhere; the sets are views.
LearningCurve train(Network<float>& net, const std::vector<const PatchSample*>& train_set,
                    const std::vector<const PatchSample*>& val_set,
                    const TrainConfig& cfg,
                    const std::function<void(int, const EpochStats&)>& on_epoch = {});

// Patch-level DSC of a model over a set at threshold 0.5 (no augmentation).
double evaluate_patch_dsc(const Network<float>& net,
                          const std::vector<const PatchSample*>& set, int batch_size = 16);

}  // namespace amcseg
