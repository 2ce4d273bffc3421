#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "amcseg/data.hpp"
#include "amcseg/network.hpp"
#include "amcseg/trainer.hpp"

namespace amcseg {

struct LopoSplit {
  std::string member_id;                    // M1..MN
  std::vector<std::string> train_patients;  // everyone but the holdout
  std::string val_patient;
};

// Member Mi validates on patient P(N+1-i): M1 holds out the last patient,
// MN the first.
std::vector<LopoSplit> make_lopo_splits(const std::vector<std::string>& patients);

enum class FusionRule { MAJORITY, MEAN_PROB };

FusionRule fusion_rule_from(const std::string& name);
std::string fusion_rule_name(FusionRule r);

struct MemberRecord {
  LopoSplit split;
  std::uint64_t train_seed = 0;
  std::uint64_t init_seed = 0;
  double val_dsc = 0.0;
  std::string checkpoint_path;  // set when the bundle lives on disk
};

struct EnsembleBundle {
  std::vector<MemberRecord> members;
  std::vector<Network<float>> models;  // aligned with members
  FusionRule fusion = FusionRule::MAJORITY;
  double vote_threshold = 0.5;

  double mean_val_dsc() const;
  double sd_val_dsc() const;  // population convention
};

// Pixel-wise fusion of member probability maps. MAJORITY binarizes each
// member at vote_threshold and requires floor(N/2)+1 votes; an exact N/2 tie
// (even N) falls back to mean probability >= vote_threshold. MEAN_PROB
// thresholds the mean probability directly.
std::vector<std::uint8_t> fuse(const std::vector<const float*>& member_probs,
                               std::size_t n, FusionRule rule, double vote_threshold);
std::vector<std::uint8_t> fuse(const std::vector<std::vector<float>>& member_probs,
                               FusionRule rule = FusionRule::MAJORITY,
                               double vote_threshold = 0.5);

// Trains one member per split. Member i uses train seed cfg.seed + i and init
// seed base_spec.init_seed + i. `jobs` bounds concurrent member training;
// results are identical to sequential execution.
EnsembleBundle train_ensemble(
    const std::vector<LopoSplit>& splits, const PatchStore& store,
    const ModelSpec& base_spec, const TrainConfig& cfg, int jobs = 1,
    const std::function<void(const MemberRecord&, const LearningCurve&)>& on_member = {});

struct PredictOptions {
  int patch = kPatchSize;
  bool resample_misaligned = false;  // resample to 512x512 instead of rejecting
  int jobs = 1;
};

struct VolumePrediction {
  MaskVolume mask;
  Volume mean_prob;  // mean member probability, same dims as the input
};

// Slices the volume into the non-overlapping patch grid, runs every member,
// fuses per pixel and stitches patches back. Input voxels are raw HU.
VolumePrediction predict_volume(const std::vector<const Network<float>*>& models,
                                FusionRule rule, double vote_threshold,
                                const Volume& raw, const PredictOptions& opts = {});
VolumePrediction predict_volume(const EnsembleBundle& bundle, const Volume& raw,
                                const PredictOptions& opts = {});

// Bundle manifest JSON: fusion rule, thresholds and per-member records.
void save_bundle_manifest(const EnsembleBundle& bundle, const std::string& path);
struct BundleManifest {
  FusionRule fusion = FusionRule::MAJORITY;
  double vote_threshold = 0.5;
  std::vector<MemberRecord> members;
};
BundleManifest load_bundle_manifest(const std::string& path);
EnsembleBundle load_bundle(const std::string& manifest_path);

}  // namespace amcseg
