#include <algorithm>
#include <filesystem>
#include <random>

#include "amcseg/ensemble.hpp"
#include "doctest.h"

using namespace amcseg;

TEST_CASE("lopo splits pair member i with patient N+1-i") {
  std::vector<std::string> patients;
  for (int i = 1; i <= 10; ++i) patients.push_back("P" + std::to_string(i));
  auto splits = make_lopo_splits(patients);
  REQUIRE(splits.size() == 10);
  CHECK(splits[0].member_id == "M1");
  CHECK(splits[0].val_patient == "P10");
  CHECK(splits[0].train_patients.size() == 9);
  CHECK(std::find(splits[0].train_patients.begin(), splits[0].train_patients.end(), "P10") ==
        splits[0].train_patients.end());
  CHECK(splits[9].member_id == "M10");
  CHECK(splits[9].val_patient == "P1");

  // Union of train and val is the full set; val patients pairwise distinct.
  std::set<std::string> vals;
  for (const auto& s : splits) {
    std::set<std::string> all(s.train_patients.begin(), s.train_patients.end());
    all.insert(s.val_patient);
    CHECK(all == std::set<std::string>(patients.begin(), patients.end()));
    vals.insert(s.val_patient);
  }
  CHECK(vals.size() == 10);
}

TEST_CASE("lopo splits: two patients, duplicates rejected") {
  auto splits = make_lopo_splits({"A", "B"});
  REQUIRE(splits.size() == 2);
  CHECK(splits[0].val_patient == "B");
  CHECK(splits[0].train_patients == std::vector<std::string>{"A"});
  CHECK(splits[1].val_patient == "A");

  CHECK_THROWS_AS(make_lopo_splits({"A"}), std::invalid_argument);
  CHECK_THROWS_AS(make_lopo_splits({"A", "A"}), std::invalid_argument);
}

TEST_CASE("fuse: identical members reproduce the single binarization") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  std::vector<float> map(256);
  for (auto& v : map) v = u(rng);
  for (std::size_t n : {1u, 2u, 3u, 4u, 7u}) {
    std::vector<std::vector<float>> members(n, map);
    auto fused = fuse(members, FusionRule::MAJORITY, 0.5);
    for (std::size_t i = 0; i < map.size(); ++i)
      CHECK(fused[i] == (map[i] >= 0.5f ? 1 : 0));
  }
}

TEST_CASE("fuse: majority vote, even-tie mean fallback and errors") {
  std::vector<std::vector<float>> three{{0.9f}, {0.8f}, {0.1f}};
  CHECK(fuse(three, FusionRule::MAJORITY, 0.5)[0] == 1);  // votes (1,1,0)

  std::vector<std::vector<float>> two_tie_high{{0.9f}, {0.2f}};
  CHECK(fuse(two_tie_high, FusionRule::MAJORITY, 0.5)[0] == 1);  // mean 0.55
  std::vector<std::vector<float>> two_tie_low{{0.6f}, {0.1f}};
  CHECK(fuse(two_tie_low, FusionRule::MAJORITY, 0.5)[0] == 0);  // mean 0.35

  std::vector<std::vector<float>> mean_rule{{0.45f}, {0.35f}, {0.9f}};
  CHECK(fuse(mean_rule, FusionRule::MEAN_PROB, 0.5)[0] == 1);  // mean ~0.567

  CHECK_THROWS_AS(fuse(std::vector<std::vector<float>>{}, FusionRule::MAJORITY, 0.5),
                  std::invalid_argument);
  std::vector<std::vector<float>> ragged{{0.1f, 0.2f}, {0.3f}};
  CHECK_THROWS_AS(fuse(ragged, FusionRule::MAJORITY, 0.5), std::invalid_argument);
}

TEST_CASE("fuse equals a brute-force per-pixel recount on random members") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 1 + rng() % 10;
    const std::size_t px = 64;
    std::vector<std::vector<float>> members(n, std::vector<float>(px));
    for (auto& m : members)
      for (auto& v : m) v = u(rng);
    auto fused = fuse(members, FusionRule::MAJORITY, 0.5);
    for (std::size_t i = 0; i < px; ++i) {
      std::size_t votes = 0;
      double mean = 0;
      for (const auto& m : members) {
        votes += m[i] >= 0.5f;
        mean += m[i];
      }
      mean /= static_cast<double>(n);
      int expect;
      if (votes >= n / 2 + 1)
        expect = 1;
      else if (n % 2 == 0 && votes == n / 2)
        expect = mean >= 0.5 ? 1 : 0;
      else
        expect = 0;
      CHECK(fused[i] == expect);
    }
  }
}

TEST_CASE("fuse is permutation- and duplication-invariant, and monotone") {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 2 + rng() % 6;
    std::vector<std::vector<float>> members(n, std::vector<float>(32));
    for (auto& m : members)
      for (auto& v : m) v = u(rng);

    auto base = fuse(members, FusionRule::MAJORITY, 0.5);

    auto shuffled = members;
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    CHECK(fuse(shuffled, FusionRule::MAJORITY, 0.5) == base);

    auto doubled = members;
    doubled.insert(doubled.end(), members.begin(), members.end());
    CHECK(fuse(doubled, FusionRule::MAJORITY, 0.5) == base);

    // Raising one member's probabilities never turns a positive pixel off.
    auto raised = members;
    for (auto& v : raised[0]) v = std::min(1.0f, v + 0.3f);
    auto up = fuse(raised, FusionRule::MAJORITY, 0.5);
    for (std::size_t i = 0; i < base.size(); ++i)
      if (base[i] == 1) CHECK(up[i] == 1);
  }
}

namespace {

PatchStore tiny_store(int patients, int per_patient, int size, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> pos(1, size - 6);
  PatchStore store;
  store.patch = size;
  for (int p = 0; p < patients; ++p) {
    for (int i = 0; i < per_patient; ++i) {
      PatchSample s;
      s.image.assign(static_cast<std::size_t>(size) * size, 0.1f);
      s.mask.assign(static_cast<std::size_t>(size) * size, 0);
      const int r = pos(rng), c = pos(rng);
      for (int y = r; y < r + 4; ++y)
        for (int x = c; x < c + 4; ++x) {
          s.image[static_cast<std::size_t>(y) * size + x] = 0.9f;
          s.mask[static_cast<std::size_t>(y) * size + x] = 1;
        }
      s.label = SliceLabel::INFECTED;
      s.patient = "P" + std::to_string(p + 1);
      s.slice = i;
      store.samples.push_back(std::move(s));
    }
  }
  return store;
}

ModelSpec tiny_spec() {
  ModelSpec spec;
  spec.variant = Variant::AMC_NET;
  spec.base_channels = 2;
  spec.input_h = spec.input_w = 16;
  spec.dropout_p = 0.0;
  return spec;
}

TrainConfig tiny_train() {
  TrainConfig cfg;
  cfg.batch_size = 4;
  cfg.epochs = 2;
  cfg.lr = 0.002;
  cfg.seed = 31;
  cfg.augment.enabled = false;
  return cfg;
}

}  // namespace

TEST_CASE("train_ensemble: one member per split, deterministic across calls") {
  auto store = tiny_store(2, 6, 16, 11);
  auto splits = make_lopo_splits(store.patients());
  auto a = train_ensemble(splits, store, tiny_spec(), tiny_train());
  auto b = train_ensemble(splits, store, tiny_spec(), tiny_train());
  REQUIRE(a.members.size() == 2);
  CHECK(a.members[0].split.val_patient == "P2");
  CHECK(a.members[1].split.val_patient == "P1");
  CHECK(a.members[0].train_seed != a.members[1].train_seed);
  CHECK(a.mean_val_dsc() == doctest::Approx((a.members[0].val_dsc + a.members[1].val_dsc) / 2));
  for (std::size_t i = 0; i < a.models.size(); ++i)
    CHECK(a.models[i].snapshot() == b.models[i].snapshot());

  // Parallel member training must equal sequential execution.
  auto c = train_ensemble(splits, store, tiny_spec(), tiny_train(), 2);
  for (std::size_t i = 0; i < a.models.size(); ++i)
    CHECK(a.models[i].snapshot() == c.models[i].snapshot());
}

TEST_CASE("bundle manifests round-trip") {
  namespace fs = std::filesystem;
  const auto dir = fs::temp_directory_path() / "amcseg_bundle_test";
  fs::create_directories(dir);

  auto store = tiny_store(2, 4, 16, 13);
  auto bundle = train_ensemble(make_lopo_splits(store.patients()), store, tiny_spec(),
                               tiny_train());
  for (std::size_t i = 0; i < bundle.members.size(); ++i) {
    bundle.members[i].checkpoint_path = bundle.members[i].split.member_id + ".amc";
    save_checkpoint(bundle.models[i],
                    (dir / bundle.members[i].checkpoint_path).string());
  }
  save_bundle_manifest(bundle, (dir / "bundle.json").string());

  auto back = load_bundle((dir / "bundle.json").string());
  REQUIRE(back.members.size() == 2);
  CHECK(back.fusion == bundle.fusion);
  CHECK(back.members[0].val_dsc == doctest::Approx(bundle.members[0].val_dsc));
  for (std::size_t i = 0; i < 2; ++i)
    CHECK(back.models[i].snapshot() == bundle.models[i].snapshot());
  fs::remove_all(dir);
}

TEST_CASE("predict_volume stitches patches and honours geometry errors") {
  ModelSpec spec;
  spec.variant = Variant::UNET;
  spec.base_channels = 1;
  spec.input_h = spec.input_w = 128;
  Network<float> net(spec);
  // Force an always-negative head so an air volume maps to an empty mask.
  auto& params = net.params();
  for (auto& p : params) {
    if (p.name == "conv_19.b") std::fill(p.tensor.data().begin(), p.tensor.data().end(), -9.0f);
  }

  Volume air;
  air.slices = 2;
  air.height = air.width = 512;
  air.voxels.assign(static_cast<std::size_t>(2) * 512 * 512, -1000.0f);

  std::vector<const Network<float>*> models{&net};
  auto pred = predict_volume(models, FusionRule::MAJORITY, 0.5, air);
  CHECK(pred.mask.slices == 2);
  for (auto v : pred.mask.voxels) CHECK(v == 0);
  CHECK(pred.mean_prob.voxels.size() == air.voxels.size());
  for (auto v : pred.mean_prob.voxels) CHECK(v < 0.5f);

  // A single-member bundle equals that model's thresholded stitched probs.
  std::mt19937_64 rng(5);
  Volume noisy = air;
  std::uniform_real_distribution<float> u(-1000.0f, 500.0f);
  for (auto& v : noisy.voxels) v = u(rng);
  auto single = predict_volume(models, FusionRule::MAJORITY, 0.5, noisy);
  for (std::size_t i = 0; i < single.mask.voxels.size(); ++i)
    CHECK(single.mask.voxels[i] == (single.mean_prob.voxels[i] >= 0.5f ? 1 : 0));

  Volume misaligned;
  misaligned.slices = 1;
  misaligned.height = 500;
  misaligned.width = 512;
  misaligned.voxels.assign(500 * 512, 0.0f);
  CHECK_THROWS(predict_volume(models, FusionRule::MAJORITY, 0.5, misaligned));
  PredictOptions opts;
  opts.resample_misaligned = true;
  auto res = predict_volume(models, FusionRule::MAJORITY, 0.5, misaligned, opts);
  CHECK(res.mask.height == 500);
  CHECK(res.mask.width == 512);
}
