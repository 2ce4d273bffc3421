// Finite-difference suites: every differentiable primitive and loss against
// central differences in double precision, randomized small tensors.
#include <random>

#include "amcseg/losses.hpp"
#include "amcseg/network.hpp"
#include "amcseg/tensor.hpp"
#include "doctest.h"
#include "testutil.hpp"

using namespace amcseg;
using namespace amcseg::test;

namespace {

constexpr double kTol = 1e-4;
constexpr int kTrials = 50;

// Keeps values away from kinks (relu at 0, maxpool ties) so the central
// difference is valid at h = 1e-5.
Tensor<double> separated_tensor(std::vector<int> shape, std::mt19937_64& rng,
                                bool requires_grad) {
  auto t = random_tensor<double>(std::move(shape), rng, -1.0, 1.0, requires_grad);
  for (auto& v : t.data()) {
    if (std::abs(v) < 1e-3) v += (v >= 0 ? 1e-3 : -1e-3);
    v = std::round(v * 1e4) / 1e4 + 0.33e-4;  // decollide near-equal values
  }
  return t;
}

}  // namespace

TEST_CASE("gradcheck: conv2d with dilations 1, 2, 3 and 5") {
  std::mt19937_64 rng(101);
  for (int dil : {1, 2, 3, 5}) {
    for (int trial = 0; trial < kTrials; ++trial) {
      const int H = (dil - 1) * 2 + 4 + static_cast<int>(rng() % 3);
      auto x = random_tensor<double>({1, 2, H, H}, rng, -1.0, 1.0, true);
      auto w = random_tensor<double>({2, 2, 3, 3}, rng, -1.0, 1.0, true);
      auto b = random_tensor<double>({2}, rng, -1.0, 1.0, true);
      const double err = grad_check(
          [&] { return sum(mul(conv2d(x, w, b, 1, dil, dil), conv2d(x, w, b, 1, dil, dil))); },
          {x, w, b});
      CHECK(err < kTol);
    }
  }
}

TEST_CASE("gradcheck: maxpool2d routes gradient to the argmax only") {
  std::mt19937_64 rng(102);
  for (int trial = 0; trial < kTrials; ++trial) {
    auto x = separated_tensor({1, 2, 4, 4}, rng, true);
    const double err =
        grad_check([&] { return sum(mul(maxpool2d(x), maxpool2d(x))); }, {x});
    CHECK(err < kTol);
  }
}

TEST_CASE("gradcheck: upsample2d") {
  std::mt19937_64 rng(103);
  for (int trial = 0; trial < kTrials; ++trial) {
    auto x = random_tensor<double>({1, 2, 3, 3}, rng, -1.0, 1.0, true);
    const double err =
        grad_check([&] { return sum(mul(upsample2d(x), upsample2d(x))); }, {x});
    CHECK(err < kTol);
  }
}

TEST_CASE("gradcheck: activations, elementwise and reductions") {
  std::mt19937_64 rng(104);
  for (int trial = 0; trial < kTrials; ++trial) {
    auto x = separated_tensor({2, 3}, rng, true);
    auto y = separated_tensor({2, 3}, rng, true);
    CHECK(grad_check([&] { return sum(relu(x)); }, {x}) < kTol);
    CHECK(grad_check([&] { return sum(sigmoid(x)); }, {x}) < kTol);
    CHECK(grad_check([&] { return mean(mul(x, y)); }, {x, y}) < kTol);
    CHECK(grad_check([&] { return sum(div(x, add(mul(y, y), Tensor<double>::scalar(1.0)))); },
                     {x, y}) < kTol);
    CHECK(grad_check([&] { return sum(affine(x, 2.5, -0.5)); }, {x}) < kTol);
  }
}

TEST_CASE("gradcheck: channel-broadcast multiply") {
  std::mt19937_64 rng(105);
  for (int trial = 0; trial < kTrials; ++trial) {
    auto x = random_tensor<double>({2, 3, 4, 4}, rng, -1.0, 1.0, true);
    auto g = random_tensor<double>({2, 1, 4, 4}, rng, -1.0, 1.0, true);
    CHECK(grad_check([&] { return sum(mul(mul(x, g), mul(x, g))); }, {x, g}) < kTol);
  }
}

TEST_CASE("gradcheck: attention gate w.r.t. skip and gating") {
  std::mt19937_64 rng(106);
  for (int trial = 0; trial < kTrials; ++trial) {
    AttentionGateParams<double> p;
    p.gate_w = random_tensor<double>({2, 3, 1, 1}, rng, -1.0, 1.0, true);
    p.gate_b = random_tensor<double>({2}, rng, -0.5, 0.5, true);
    p.skip_w = random_tensor<double>({2, 2, 1, 1}, rng, -1.0, 1.0, true);
    p.skip_b = random_tensor<double>({2}, rng, -0.5, 0.5, true);
    p.psi_w = random_tensor<double>({1, 2, 1, 1}, rng, -1.0, 1.0, true);
    p.psi_b = random_tensor<double>({1}, rng, -0.5, 0.5, true);
    auto skip = random_tensor<double>({1, 2, 4, 4}, rng, -1.0, 1.0, true);
    auto gate = random_tensor<double>({1, 3, 4, 4}, rng, -1.0, 1.0, true);
    const double err = grad_check(
        [&] { return sum(attention_gate(skip, gate, p)); },
        {skip, gate, p.gate_w, p.gate_b, p.skip_w, p.skip_b, p.psi_w, p.psi_b});
    CHECK(err < kTol);
  }
}

TEST_CASE("gradcheck: ms_block w.r.t. input and every conv") {
  std::mt19937_64 rng(107);
  const std::array<int, 4> rates{1, 2, 3, 5};
  for (int trial = 0; trial < kTrials; ++trial) {
    MsBlockParams<double> p;
    std::vector<Tensor<double>> leaves;
    for (std::size_t i = 0; i < 4; ++i) {
      p.w[i] = random_tensor<double>({2, 2, 3, 3}, rng, -0.5, 0.5, true);
      p.b[i] = random_tensor<double>({2}, rng, -0.2, 0.2, true);
      leaves.push_back(p.w[i]);
      leaves.push_back(p.b[i]);
    }
    p.proj_w = random_tensor<double>({2, 8, 1, 1}, rng, -0.5, 0.5, true);
    p.proj_b = random_tensor<double>({2}, rng, -0.2, 0.2, true);
    leaves.push_back(p.proj_w);
    leaves.push_back(p.proj_b);
    auto x = random_tensor<double>({1, 2, 12, 12}, rng, -1.0, 1.0, true);
    leaves.push_back(x);
    const double err =
        grad_check([&] { return sum(mul(ms_block(x, p, rates), ms_block(x, p, rates))); },
                   leaves);
    CHECK(err < kTol);
  }
}

TEST_CASE("gradcheck: all six losses w.r.t. the prediction map") {
  std::mt19937_64 rng(108);
  for (int trial = 0; trial < kTrials; ++trial) {
    auto pred = random_tensor<double>({1, 1, 8, 8}, rng, 0.05, 0.95, true);
    auto target = random_binary<double>({1, 1, 8, 8}, rng);
    CHECK(grad_check([&] { return cross_entropy(pred, target); }, {pred}) < kTol);
    CHECK(grad_check([&] { return focal_loss(pred, target, 0.8, 2.0); }, {pred}) < kTol);
    CHECK(grad_check([&] { return dice_loss(pred, target); }, {pred}) < kTol);
    CHECK(grad_check([&] { return cedl_loss(pred, target); }, {pred}) < kTol);
    CHECK(grad_check([&] { return iou_loss(pred, target); }, {pred}) < kTol);
    CHECK(grad_check([&] { return tversky_loss(pred, target, 0.7, 0.3); }, {pred}) < kTol);
    CHECK(grad_check(
              [&] {
                return focal_tversky_loss(pred, target, 0.7, 0.3, 2.0,
                                          FtlConvention::kAsPrinted);
              },
              {pred}) < kTol);
    CHECK(grad_check(
              [&] {
                return focal_tversky_loss(pred, target, 0.7, 0.3, 2.0,
                                          FtlConvention::kComplement);
              },
              {pred}) < kTol);
  }
}

TEST_CASE("gradcheck: spatial dropout mask is treated as constant") {
  std::mt19937_64 seeds(109);
  for (int trial = 0; trial < 10; ++trial) {
    auto x = random_tensor<double>({1, 6, 3, 3}, seeds, -1.0, 1.0, true);
    const std::uint64_t s = seeds();
    const double err = grad_check(
        [&] {
          std::mt19937_64 rng(s);  // same mask for every evaluation
          return sum(mul(spatial_dropout(x, 0.3, rng), x));
        },
        {x});
    CHECK(err < kTol);
  }
}
