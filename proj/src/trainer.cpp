#include "amcseg/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "amcseg/eval.hpp"

namespace amcseg {

void TrainConfig::validate() const {
  if (batch_size < 1) throw std::invalid_argument("train config: batch_size must be >= 1");
  if (epochs < 1) throw std::invalid_argument("train config: epochs must be >= 1");
  if (lr < 0.0) throw std::invalid_argument("train config: learning rate must be >= 0");
  loss.validate();
  augment.validate();
}

void write_curve_csv(const LearningCurve& curve, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open for writing: " + path);
  os << "epoch,train_loss,train_dsc,val_loss,val_dsc\n";
  for (std::size_t i = 0; i < curve.epochs.size(); ++i) {
    const auto& e = curve.epochs[i];
    os << (i + 1) << ',' << e.train_loss << ',' << e.train_dsc << ',' << e.val_loss << ','
       << e.val_dsc << '\n';
  }
  if (!os) throw std::runtime_error("failed writing curve: " + path);
}

namespace {

struct BatchTensors {
  Tensor<float> images;
  Tensor<float> masks;
  std::size_t items = 0;
};

BatchTensors make_batch(const std::vector<const PatchSample*>& set,
                        const std::vector<std::size_t>& order, std::size_t begin,
                        std::size_t end, int patch, const AugmentConfig* aug,
                        std::mt19937_64* rng) {
  const int B = static_cast<int>(end - begin);
  const std::size_t px = static_cast<std::size_t>(patch) * patch;
  BatchTensors bt;
  bt.items = static_cast<std::size_t>(B);
  std::vector<float> img(static_cast<std::size_t>(B) * px);
  std::vector<float> msk(static_cast<std::size_t>(B) * px);
  std::vector<float> img_buf;
  std::vector<std::uint8_t> msk_buf;
  for (std::size_t i = begin; i < end; ++i) {
    const PatchSample& s = *set[order[i]];
    if (s.image.size() != px)
      throw std::invalid_argument("train: patch size mismatch in dataset");
    const std::size_t off = (i - begin) * px;
    if (aug && aug->enabled) {
      img_buf = s.image;
      msk_buf = s.mask;
      augment_patch(img_buf, msk_buf, patch, patch, *aug, *rng);
      std::copy(img_buf.begin(), img_buf.end(), img.begin() + off);
      for (std::size_t k = 0; k < px; ++k) msk[off + k] = msk_buf[k] ? 1.0f : 0.0f;
    } else {
      std::copy(s.image.begin(), s.image.end(), img.begin() + off);
      for (std::size_t k = 0; k < px; ++k) msk[off + k] = s.mask[k] ? 1.0f : 0.0f;
    }
  }
  bt.images = Tensor<float>::from_data({B, 1, patch, patch}, std::move(img));
  bt.masks = Tensor<float>::from_data({B, 1, patch, patch}, std::move(msk));
  return bt;
}

void tally_confusion(const Tensor<float>& probs, const Tensor<float>& masks,
                     ConfusionCounts& counts) {
  const float* p = probs.data().data();
  const float* m = masks.data().data();
  for (std::size_t i = 0; i < probs.numel(); ++i) {
    const bool pred = p[i] >= 0.5f;
    const bool truth = m[i] >= 0.5f;
    if (pred && truth)
      ++counts.tp;
    else if (pred)
      ++counts.fp;
    else if (truth)
      ++counts.fn;
    else
      ++counts.tn;
  }
}

}  // namespace

double evaluate_patch_dsc(const Network<float>& net,
                          const std::vector<const PatchSample*>& set, int batch_size) {
  if (set.empty()) return 0.0;
  NoGradGuard ng;
  const int patch = static_cast<int>(std::lround(std::sqrt(set[0]->image.size())));
  std::vector<std::size_t> order(set.size());
  std::iota(order.begin(), order.end(), 0);
  ConfusionCounts counts;
  for (std::size_t b = 0; b < set.size(); b += static_cast<std::size_t>(batch_size)) {
    const std::size_t e = std::min(set.size(), b + static_cast<std::size_t>(batch_size));
    auto bt = make_batch(set, order, b, e, patch, nullptr, nullptr);
    auto probs = net.forward(bt.images, false);
    tally_confusion(probs, bt.masks, counts);
  }
  return dsc(counts);
}

LearningCurve train(Network<float>& net, const std::vector<const PatchSample*>& train_set,
                    const std::vector<const PatchSample*>& val_set, const TrainConfig& cfg,
                    const std::function<void(int, const EpochStats&)>& on_epoch) {
  cfg.validate();
  if (train_set.empty()) throw std::invalid_argument("train: empty training set");
  const int patch = static_cast<int>(std::lround(std::sqrt(train_set[0]->image.size())));

  std::mt19937_64 rng(cfg.seed);
  Adam<float> opt(net.params(), AdamConfig{.lr = cfg.lr});

  // Base visiting order; oversampling appends extra infected passes.
  std::vector<std::size_t> base(train_set.size());
  std::iota(base.begin(), base.end(), 0);
  if (cfg.oversample_infected) {
    std::vector<std::size_t> infected;
    std::size_t negatives = 0;
    for (std::size_t i = 0; i < train_set.size(); ++i) {
      if (train_set[i]->label == SliceLabel::INFECTED)
        infected.push_back(i);
      else
        ++negatives;
    }
    // Duplicate infected patches until the two labels are roughly balanced.
    std::size_t inf_count = infected.size();
    while (inf_count > 0 && inf_count < negatives) {
      for (std::size_t i : infected) {
        if (inf_count >= negatives) break;
        base.push_back(i);
        ++inf_count;
      }
    }
  }

  LearningCurve curve;
  double best_val = -1.0;
  std::vector<std::vector<float>> best_state;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<std::size_t> order = base;
    std::shuffle(order.begin(), order.end(), rng);

    EpochStats stats;
    ConfusionCounts train_counts;
    double loss_weighted = 0.0;
    std::size_t items_seen = 0;

    for (std::size_t b = 0; b < order.size(); b += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t e = std::min(order.size(), b + static_cast<std::size_t>(cfg.batch_size));
      const std::string where = "epoch " + std::to_string(epoch + 1) + ", batch " +
                                std::to_string(b / static_cast<std::size_t>(cfg.batch_size) + 1);
      auto bt = make_batch(train_set, order, b, e, patch,
                           cfg.augment.enabled ? &cfg.augment : nullptr, &rng);
      Tensor<float> probs, loss;
      try {
        probs = net.forward(bt.images, true, &rng);
        loss = compute_loss(cfg.loss, probs, bt.masks);
      } catch (const std::runtime_error& err) {
        throw std::runtime_error("training diverged at " + where + ": " + err.what());
      }
      const double loss_value = loss.item();
      if (!std::isfinite(loss_value))
        throw std::runtime_error("training diverged: non-finite loss at " + where);
      net.zero_grads();
      backward(loss);
      opt.step(net.params());

      tally_confusion(probs, bt.masks, train_counts);
      loss_weighted += loss_value * static_cast<double>(bt.items);
      items_seen += bt.items;
    }
    stats.train_loss = loss_weighted / static_cast<double>(items_seen);
    stats.train_dsc = dsc(train_counts);

    if (!val_set.empty()) {
      NoGradGuard ng;
      ConfusionCounts val_counts;
      double val_loss_weighted = 0.0;
      std::size_t val_items = 0;
      std::vector<std::size_t> vorder(val_set.size());
      std::iota(vorder.begin(), vorder.end(), 0);
      for (std::size_t b = 0; b < val_set.size();
           b += static_cast<std::size_t>(cfg.batch_size)) {
        const std::size_t e =
            std::min(val_set.size(), b + static_cast<std::size_t>(cfg.batch_size));
        auto bt = make_batch(val_set, vorder, b, e, patch, nullptr, nullptr);
        auto probs = net.forward(bt.images, false);
        auto loss = compute_loss(cfg.loss, probs, bt.masks);
        val_loss_weighted += loss.item() * static_cast<double>(bt.items);
        val_items += bt.items;
        tally_confusion(probs, bt.masks, val_counts);
      }
      stats.val_loss = val_loss_weighted / static_cast<double>(val_items);
      stats.val_dsc = dsc(val_counts);
      if (stats.val_dsc > best_val) {
        best_val = stats.val_dsc;
        best_state = net.snapshot();
        curve.best_epoch = epoch;
      }
    }

    curve.epochs.push_back(stats);
    if (on_epoch) on_epoch(epoch, stats);
  }

  if (!best_state.empty())
    net.restore(best_state);
  else
    curve.best_epoch = cfg.epochs - 1;
  return curve;
}

}  // namespace amcseg
