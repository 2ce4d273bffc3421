#include "amcseg/ensemble.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <future>
#include <set>
#include <stdexcept>

#include "json.hpp"

namespace amcseg {

std::vector<LopoSplit> make_lopo_splits(const std::vector<std::string>& patients) {
  if (patients.size() < 2)
    throw std::invalid_argument("make_lopo_splits: need at least 2 patients");
  std::set<std::string> uniq(patients.begin(), patients.end());
  if (uniq.size() != patients.size())
    throw std::invalid_argument("make_lopo_splits: duplicate patient ids");

  const std::size_t n = patients.size();
  std::vector<LopoSplit> splits;
  splits.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    LopoSplit s;
    s.member_id = "M" + std::to_string(i + 1);
    s.val_patient = patients[n - 1 - i];
    for (const auto& p : patients)
      if (p != s.val_patient) s.train_patients.push_back(p);
    splits.push_back(std::move(s));
  }
  return splits;
}

FusionRule fusion_rule_from(const std::string& name) {
  if (name == "MAJORITY") return FusionRule::MAJORITY;
  if (name == "MEAN_PROB") return FusionRule::MEAN_PROB;
  throw std::invalid_argument("unknown fusion rule '" + name +
                              "' (expected MAJORITY or MEAN_PROB)");
}

std::string fusion_rule_name(FusionRule r) {
  return r == FusionRule::MAJORITY ? "MAJORITY" : "MEAN_PROB";
}

double EnsembleBundle::mean_val_dsc() const {
  if (members.empty()) return 0.0;
  double acc = 0.0;
  for (const auto& m : members) acc += m.val_dsc;
  return acc / static_cast<double>(members.size());
}

double EnsembleBundle::sd_val_dsc() const {
  if (members.empty()) return 0.0;
  const double mean = mean_val_dsc();
  double var = 0.0;
  for (const auto& m : members) var += (m.val_dsc - mean) * (m.val_dsc - mean);
  return std::sqrt(var / static_cast<double>(members.size()));
}

std::vector<std::uint8_t> fuse(const std::vector<const float*>& member_probs,
                               std::size_t n, FusionRule rule, double vote_threshold) {
  if (member_probs.empty()) throw std::invalid_argument("fuse: no members");
  const std::size_t m = member_probs.size();
  std::vector<std::uint8_t> out(n);
  const float thr = static_cast<float>(vote_threshold);
  const std::size_t majority = m / 2 + 1;
  for (std::size_t i = 0; i < n; ++i) {
    if (rule == FusionRule::MEAN_PROB) {
      double acc = 0.0;
      for (const float* p : member_probs) acc += p[i];
      out[i] = (acc / static_cast<double>(m) >= vote_threshold) ? 1 : 0;
      continue;
    }
    std::size_t votes = 0;
    for (const float* p : member_probs) votes += (p[i] >= thr);
    if (votes >= majority) {
      out[i] = 1;
    } else if (m % 2 == 0 && votes == m / 2) {
      // Even split: defer to the mean probability.
      double acc = 0.0;
      for (const float* p : member_probs) acc += p[i];
      out[i] = (acc / static_cast<double>(m) >= vote_threshold) ? 1 : 0;
    } else {
      out[i] = 0;
    }
  }
  return out;
}

std::vector<std::uint8_t> fuse(const std::vector<std::vector<float>>& member_probs,
                               FusionRule rule, double vote_threshold) {
  if (member_probs.empty()) throw std::invalid_argument("fuse: no members");
  const std::size_t n = member_probs[0].size();
  std::vector<const float*> ptrs;
  ptrs.reserve(member_probs.size());
  for (const auto& v : member_probs) {
    if (v.size() != n) throw std::invalid_argument("fuse: member map sizes differ");
    ptrs.push_back(v.data());
  }
  return fuse(ptrs, n, rule, vote_threshold);
}

EnsembleBundle train_ensemble(
    const std::vector<LopoSplit>& splits, const PatchStore& store,
    const ModelSpec& base_spec, const TrainConfig& cfg, int jobs,
    const std::function<void(const MemberRecord&, const LearningCurve&)>& on_member) {
  if (splits.empty()) throw std::invalid_argument("train_ensemble: no splits");
  if (jobs < 1) jobs = 1;

  struct MemberOut {
    MemberRecord record;
    std::optional<Network<float>> model;
    LearningCurve curve;
  };
  std::vector<MemberOut> outs(splits.size());

  auto run_member = [&](std::size_t i) {
    const LopoSplit& split = splits[i];
    std::vector<const PatchSample*> train_set, val_set;
    for (const auto& s : store.samples) {
      if (s.patient == split.val_patient)
        val_set.push_back(&s);
      else if (std::find(split.train_patients.begin(), split.train_patients.end(),
                         s.patient) != split.train_patients.end())
        train_set.push_back(&s);
    }
    if (train_set.empty())
      throw std::runtime_error("train_ensemble: member " + split.member_id +
                               " has no training patches");

    ModelSpec spec = base_spec;
    spec.init_seed = base_spec.init_seed + i;
    TrainConfig mcfg = cfg;
    mcfg.seed = cfg.seed + i;

    MemberOut& out = outs[i];
    out.record.split = split;
    out.record.train_seed = mcfg.seed;
    out.record.init_seed = spec.init_seed;
    out.model.emplace(spec);
    try {
      out.curve = train(*out.model, train_set, val_set, mcfg);
    } catch (const std::exception& e) {
      throw std::runtime_error("train_ensemble: member " + split.member_id +
                               " failed: " + e.what());
    }
    out.record.val_dsc = out.curve.best_epoch >= 0
                             ? out.curve.epochs[static_cast<std::size_t>(out.curve.best_epoch)].val_dsc
                             : 0.0;
  };

  if (jobs == 1) {
    for (std::size_t i = 0; i < splits.size(); ++i) run_member(i);
  } else {
    std::vector<std::future<void>> futures;
    std::size_t next = 0;
    while (next < splits.size() || !futures.empty()) {
      while (next < splits.size() && futures.size() < static_cast<std::size_t>(jobs))
        futures.push_back(std::async(std::launch::async, run_member, next++));
      futures.front().get();
      futures.erase(futures.begin());
    }
  }

  EnsembleBundle bundle;
  for (auto& out : outs) {
    if (on_member) on_member(out.record, out.curve);
    bundle.members.push_back(std::move(out.record));
    bundle.models.push_back(std::move(*out.model));
  }
  return bundle;
}

// ---- volume prediction ---------------------------------------------------------

VolumePrediction predict_volume(const std::vector<const Network<float>*>& models,
                                FusionRule rule, double vote_threshold,
                                const Volume& raw, const PredictOptions& opts) {
  if (models.empty()) throw std::invalid_argument("predict_volume: no models");
  const int p = opts.patch;

  const bool aligned = raw.height % p == 0 && raw.width % p == 0;
  if (!aligned && !opts.resample_misaligned)
    throw std::runtime_error("predict_volume: slice extent " + std::to_string(raw.height) +
                             "x" + std::to_string(raw.width) +
                             " is not divisible by the patch size " + std::to_string(p) +
                             "; enable resampling or fix the input");

  const int work_h = aligned ? raw.height : 512;
  const int work_w = aligned ? raw.width : 512;

  VolumePrediction out;
  out.mask.slices = raw.slices;
  out.mask.height = raw.height;
  out.mask.width = raw.width;
  out.mask.voxels.assign(raw.voxels.size(), 0);
  out.mean_prob.slices = raw.slices;
  out.mean_prob.height = raw.height;
  out.mean_prob.width = raw.width;
  out.mean_prob.voxels.assign(raw.voxels.size(), 0.0f);

  Volume norm = normalize_hu(raw);
  NoGradGuard ng;

  const std::size_t slice_px = static_cast<std::size_t>(work_h) * work_w;
  for (int s = 0; s < raw.slices; ++s) {
    std::vector<float> slice_view;
    const float* slice_px_ptr = norm.slice(s);
    if (!aligned) {
      slice_view = resample_slice(slice_px_ptr, raw.height, raw.width, work_h, work_w);
      slice_px_ptr = slice_view.data();
    }

    auto tiles = extract_test_patches(slice_px_ptr, nullptr, work_h, work_w, p, "", s);
    const int B = static_cast<int>(tiles.size());
    std::vector<float> batch(static_cast<std::size_t>(B) * p * p);
    for (int t = 0; t < B; ++t)
      std::copy(tiles[static_cast<std::size_t>(t)].image.begin(),
                tiles[static_cast<std::size_t>(t)].image.end(),
                batch.begin() + static_cast<std::size_t>(t) * p * p);
    auto input = Tensor<float>::from_data({B, 1, p, p}, std::move(batch));

    // Stitch each member's tile probabilities back into a slice map.
    std::vector<std::vector<float>> member_maps;
    member_maps.reserve(models.size());
    for (const auto* model : models) {
      auto probs = model->forward(input, false);
      std::vector<std::vector<float>> tile_maps(static_cast<std::size_t>(B));
      for (int t = 0; t < B; ++t) {
        const float* src = probs.data().data() + static_cast<std::size_t>(t) * p * p;
        tile_maps[static_cast<std::size_t>(t)].assign(src, src + static_cast<std::size_t>(p) * p);
      }
      std::vector<float> map(slice_px);
      stitch_patch_grid(tile_maps, work_h, work_w, p, map.data());
      member_maps.push_back(std::move(map));
    }

    auto fused = fuse(member_maps, rule, vote_threshold);
    std::vector<float> mean_map(slice_px, 0.0f);
    for (const auto& m : member_maps)
      for (std::size_t i = 0; i < slice_px; ++i) mean_map[i] += m[i];
    for (auto& v : mean_map) v /= static_cast<float>(member_maps.size());

    if (aligned) {
      std::copy(fused.begin(), fused.end(), out.mask.slice(s));
      std::copy(mean_map.begin(), mean_map.end(), out.mean_prob.slice(s));
    } else {
      // Map back to the original geometry: nearest for the mask, bilinear for
      // the probabilities.
      std::uint8_t* dst_m = out.mask.slice(s);
      for (int y = 0; y < raw.height; ++y) {
        const int sy = std::min(work_h - 1, static_cast<int>(std::lround(
                                                (y + 0.5) * work_h / raw.height - 0.5)));
        for (int x = 0; x < raw.width; ++x) {
          const int sx = std::min(work_w - 1, static_cast<int>(std::lround(
                                                  (x + 0.5) * work_w / raw.width - 0.5)));
          dst_m[static_cast<std::size_t>(y) * raw.width + x] =
              fused[static_cast<std::size_t>(sy) * work_w + sx];
        }
      }
      auto prob_back = resample_slice(mean_map.data(), work_h, work_w, raw.height, raw.width);
      std::copy(prob_back.begin(), prob_back.end(), out.mean_prob.slice(s));
    }
  }
  return out;
}

VolumePrediction predict_volume(const EnsembleBundle& bundle, const Volume& raw,
                                const PredictOptions& opts) {
  std::vector<const Network<float>*> models;
  models.reserve(bundle.models.size());
  for (const auto& m : bundle.models) models.push_back(&m);
  return predict_volume(models, bundle.fusion, bundle.vote_threshold, raw, opts);
}

// ---- bundle manifests ------------------------------------------------------------

void save_bundle_manifest(const EnsembleBundle& bundle, const std::string& path) {
  nlohmann::json j;
  j["fusion"] = fusion_rule_name(bundle.fusion);
  j["vote_threshold"] = bundle.vote_threshold;
  j["mean_val_dsc"] = bundle.mean_val_dsc();
  j["sd_val_dsc"] = bundle.sd_val_dsc();
  auto& arr = j["members"] = nlohmann::json::array();
  for (const auto& m : bundle.members) {
    nlohmann::json e;
    e["id"] = m.split.member_id;
    e["train_patients"] = m.split.train_patients;
    e["val_patient"] = m.split.val_patient;
    e["train_seed"] = m.train_seed;
    e["init_seed"] = m.init_seed;
    e["val_dsc"] = m.val_dsc;
    e["checkpoint"] = m.checkpoint_path;
    arr.push_back(std::move(e));
  }
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open for writing: " + path);
  os << j.dump(2) << '\n';
  if (!os) throw std::runtime_error("failed writing bundle manifest: " + path);
}

BundleManifest load_bundle_manifest(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open bundle manifest: " + path);
  nlohmann::json j;
  is >> j;
  BundleManifest b;
  b.fusion = fusion_rule_from(j.at("fusion").get<std::string>());
  b.vote_threshold = j.at("vote_threshold").get<double>();
  for (const auto& e : j.at("members")) {
    MemberRecord m;
    m.split.member_id = e.at("id").get<std::string>();
    m.split.train_patients = e.at("train_patients").get<std::vector<std::string>>();
    m.split.val_patient = e.at("val_patient").get<std::string>();
    m.train_seed = e.at("train_seed").get<std::uint64_t>();
    m.init_seed = e.at("init_seed").get<std::uint64_t>();
    m.val_dsc = e.at("val_dsc").get<double>();
    m.checkpoint_path = e.at("checkpoint").get<std::string>();
    b.members.push_back(std::move(m));
  }
  return b;
}

EnsembleBundle load_bundle(const std::string& manifest_path) {
  BundleManifest bm = load_bundle_manifest(manifest_path);
  EnsembleBundle bundle;
  bundle.fusion = bm.fusion;
  bundle.vote_threshold = bm.vote_threshold;
  const auto dir = std::filesystem::path(manifest_path).parent_path();
  for (auto& m : bm.members) {
    std::filesystem::path ckpt(m.checkpoint_path);
    if (ckpt.is_relative()) ckpt = dir / ckpt;
    bundle.models.push_back(load_checkpoint(ckpt.string()));
    bundle.members.push_back(std::move(m));
  }
  return bundle;
}

}  // namespace amcseg
