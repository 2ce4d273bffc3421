#include <random>

#include "amcseg/eval.hpp"
#include "doctest.h"

using namespace amcseg;

TEST_CASE("confusion counts match a brute-force tally") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<std::uint8_t> pred(256), truth(256);
    for (auto& v : pred) v = rng() % 2;
    for (auto& v : truth) v = rng() % 2;
    auto c = confusion(pred, truth);
    std::uint64_t tp = 0, fp = 0, tn = 0, fn = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
      tp += pred[i] && truth[i];
      fp += pred[i] && !truth[i];
      fn += !pred[i] && truth[i];
      tn += !pred[i] && !truth[i];
    }
    CHECK(c.tp == tp);
    CHECK(c.fp == fp);
    CHECK(c.tn == tn);
    CHECK(c.fn == fn);
    CHECK(c.total() == 256);
  }

  std::vector<std::uint8_t> p(4, 1), t(4, 0);
  CHECK(confusion(p, t).fp == 4);
  auto inv = confusion(p, t);
  CHECK(inv.tp == 0);
  std::vector<std::uint8_t> shorter(3, 0);
  CHECK_THROWS_AS(confusion(p, shorter), std::invalid_argument);
}

TEST_CASE("dsc, precision and sensitivity values and conventions") {
  ConfusionCounts c{.tp = 2, .fp = 1, .tn = 10, .fn = 1};
  CHECK(dsc(c) == doctest::Approx(4.0 / 6.0));
  CHECK(precision(c) == doctest::Approx(2.0 / 3.0));
  CHECK(sensitivity(c) == doctest::Approx(2.0 / 3.0));

  ConfusionCounts perfect{.tp = 5, .fp = 0, .tn = 5, .fn = 0};
  CHECK(dsc(perfect) == 1.0);
  CHECK(precision(perfect) == 1.0);
  CHECK(sensitivity(perfect) == 1.0);

  ConfusionCounts miss{.tp = 0, .fp = 2, .tn = 5, .fn = 3};
  CHECK(dsc(miss) == 0.0);
  CHECK(precision(miss) == 0.0);
  CHECK(sensitivity(miss) == 0.0);

  // Empty prediction and empty truth: perfect agreement.
  ConfusionCounts empty{.tp = 0, .fp = 0, .tn = 9, .fn = 0};
  CHECK(dsc(empty) == 1.0);
  CHECK(precision(empty) == 1.0);
  CHECK(sensitivity(empty) == 1.0);
}

TEST_CASE("harmonic-mean identity links dsc to precision and sensitivity") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    ConfusionCounts c{.tp = rng() % 50 + 1, .fp = rng() % 50, .tn = rng() % 50,
                      .fn = rng() % 50};
    const double p = precision(c), s = sensitivity(c);
    if (p > 0 && s > 0) CHECK(dsc(c) == doctest::Approx(2 * p * s / (p + s)).epsilon(1e-12));
  }
}

TEST_CASE("roc auc: separable, inverted, tied and single-class inputs") {
  std::vector<float> probs{0.9f, 0.8f, 0.2f, 0.1f};
  std::vector<std::uint8_t> truth{1, 1, 0, 0};
  CHECK(*roc_auc(probs, truth) == doctest::Approx(1.0));

  std::vector<std::uint8_t> inverted{0, 0, 1, 1};
  CHECK(*roc_auc(probs, inverted) == doctest::Approx(0.0));

  std::vector<float> flat(10, 0.5f);
  std::vector<std::uint8_t> mixed{1, 0, 1, 0, 1, 0, 1, 0, 1, 0};
  CHECK(*roc_auc(flat, mixed) == doctest::Approx(0.5));

  std::vector<std::uint8_t> ones(4, 1);
  CHECK_FALSE(roc_auc(probs, ones).has_value());
}

TEST_CASE("roc auc equals the brute-force pairwise rank statistic") {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t n = 32 * 32;
    std::vector<float> probs(n);
    std::vector<std::uint8_t> truth(n);
    for (auto& v : probs) v = std::round(u(rng) * 20.0f) / 20.0f;  // force ties
    for (auto& v : truth) v = rng() % 3 == 0;
    auto auc = roc_auc(probs, truth);
    if (!auc) continue;
    double wins = 0;
    std::uint64_t pairs = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (!truth[i]) continue;
      for (std::size_t j = 0; j < n; ++j) {
        if (truth[j]) continue;
        ++pairs;
        if (probs[i] > probs[j])
          wins += 1.0;
        else if (probs[i] == probs[j])
          wins += 0.5;
      }
    }
    CHECK(*auc == doctest::Approx(wins / static_cast<double>(pairs)).epsilon(1e-9));
  }
}

TEST_CASE("severity bands close at the top") {
  CHECK(grade_from_involvement(0.0) == SeverityGrade::CT0);
  CHECK(grade_from_involvement(25.0) == SeverityGrade::CT1);
  CHECK(grade_from_involvement(25.01) == SeverityGrade::CT2);
  CHECK(grade_from_involvement(50.0) == SeverityGrade::CT2);
  CHECK(grade_from_involvement(50.01) == SeverityGrade::CT3);
  CHECK(grade_from_involvement(57.71) == SeverityGrade::CT3);
  CHECK(grade_from_involvement(75.0) == SeverityGrade::CT3);
  CHECK(grade_from_involvement(75.01) == SeverityGrade::CT4);
  CHECK(grade_from_involvement(100.0) == SeverityGrade::CT4);
  CHECK_THROWS_AS(grade_from_involvement(-1.0), std::invalid_argument);
  CHECK(severity_grade_name(SeverityGrade::CT3) == "CT-3");
}

TEST_CASE("severity_grade is monotone in added infected voxels") {
  MaskVolume ref;
  ref.slices = 1;
  ref.height = ref.width = 10;
  ref.voxels.assign(100, 1);
  MaskVolume mask = ref;
  mask.voxels.assign(100, 0);

  SeverityGrade prev = SeverityGrade::CT0;
  for (int i = 0; i < 100; ++i) {
    mask.voxels[static_cast<std::size_t>(i)] = 1;
    auto rep = severity_grade(mask, ref);
    CHECK(static_cast<int>(rep.grade) >= static_cast<int>(prev));
    prev = rep.grade;
  }
  CHECK(prev == SeverityGrade::CT4);

  MaskVolume empty_ref = ref;
  empty_ref.voxels.assign(100, 0);
  CHECK_THROWS_AS(severity_grade(mask, empty_ref), std::invalid_argument);
}

TEST_CASE("body_reference thresholds on the HU floor") {
  Volume v;
  v.slices = 1;
  v.height = 1;
  v.width = 4;
  v.voxels = {-1000.0f, -600.0f, -400.0f, 40.0f};
  auto ref = body_reference(v);
  CHECK(ref.voxels == std::vector<std::uint8_t>{0, 0, 1, 1});
}

TEST_CASE("jet ramp endpoints and midpoint") {
  auto red = jet_color(1.0);
  CHECK(red[0] == 255);
  CHECK(red[1] == 0);
  CHECK(red[2] == 0);
  auto blue = jet_color(0.0);
  CHECK(blue[0] == 0);
  CHECK(blue[2] == 255);
  auto mid = jet_color(0.5);
  CHECK(mid[1] == 255);  // green-dominant
  CHECK(mid[0] == 0);
  CHECK(mid[2] == 0);
  auto cyan = jet_color(0.25);
  CHECK(cyan[1] == 255);
  CHECK(cyan[2] == 255);
}

TEST_CASE("jet overlay leaves sub-threshold pixels as the base image") {
  std::vector<float> base(16, 0.5f);
  std::vector<float> probs(16, 0.0f);
  probs[5] = 0.9f;
  auto img = jet_overlay(probs, base, 4, 4);
  CHECK(img.height == 4);
  CHECK(img.width == 4);
  const std::uint8_t gray = 128;
  for (std::size_t i = 0; i < 16; ++i) {
    if (i == 5) continue;
    CHECK(img.pixels[3 * i] == gray);
    CHECK(img.pixels[3 * i + 1] == gray);
    CHECK(img.pixels[3 * i + 2] == gray);
  }
  CHECK(img.pixels[3 * 5] > gray);  // red-shifted blend

  auto empty = jet_overlay(std::vector<float>(16, 0.0f), base, 4, 4);
  for (std::size_t i = 0; i < 16; ++i) {
    CHECK(empty.pixels[3 * i] == gray);
    CHECK(empty.pixels[3 * i + 1] == gray);
    CHECK(empty.pixels[3 * i + 2] == gray);
  }
}

TEST_CASE("dataset aggregation: population mean and sd") {
  VolumeMetrics a;
  a.name = "a";
  a.dsc = 0.8;
  a.precision = 0.8;
  a.sensitivity = 0.8;
  VolumeMetrics b = a;
  b.name = "b";
  b.dsc = 1.0;
  b.precision = 1.0;
  b.sensitivity = 1.0;

  auto single = aggregate_metrics({a});
  CHECK(single.dsc.mean == doctest::Approx(0.8));
  CHECK(single.dsc.sd == doctest::Approx(0.0));

  auto both = aggregate_metrics({a, b});
  CHECK(both.dsc.mean == doctest::Approx(0.9));
  CHECK(both.dsc.sd == doctest::Approx(0.1));

  const std::string csv = metric_report_csv(both);
  CHECK(csv.find("volume,dsc,precision,sensitivity,auc") == 0);
  CHECK(csv.find("mean,0.9") != std::string::npos);
}

TEST_CASE("evaluate_volume wires confusion, metrics and optional AUC") {
  MaskVolume truth;
  truth.slices = 1;
  truth.height = truth.width = 4;
  truth.voxels = {0, 0, 0, 0, 0, 1, 1, 0, 0, 1, 1, 0, 0, 0, 0, 0};
  MaskVolume pred = truth;
  auto m = evaluate_volume("v", pred, truth);
  CHECK(m.dsc == doctest::Approx(1.0));
  CHECK_FALSE(m.auc.has_value());

  Volume probs;
  probs.slices = 1;
  probs.height = probs.width = 4;
  probs.voxels.assign(16, 0.1f);
  for (std::size_t i = 0; i < 16; ++i)
    if (truth.voxels[i]) probs.voxels[i] = 0.9f;
  auto m2 = evaluate_volume("v", pred, truth, &probs);
  REQUIRE(m2.auc.has_value());
  CHECK(*m2.auc == doctest::Approx(1.0));
}
