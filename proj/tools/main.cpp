#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "amcseg/config.hpp"
#include "amcseg/data.hpp"
#include "amcseg/ensemble.hpp"
#include "amcseg/eval.hpp"
#include "amcseg/imageio.hpp"
#include "amcseg/manifest.hpp"
#include "amcseg/network.hpp"
#include "amcseg/trainer.hpp"

#include <omp.h>

namespace fs = std::filesystem;
using namespace amcseg;

namespace {

struct RunContext {
  RunManifest manifest;
  fs::path out_dir;
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();

  void begin(const std::string& command, const fs::path& out,
             const std::vector<std::string>& argv) {
    manifest.command = command;
    manifest.argv = argv;
    out_dir = out;
    fs::create_directories(out_dir);
  }
  fs::path out(const std::string& name) {
    manifest.outputs.push_back(name);
    return out_dir / name;
  }
  void input(const std::string& path) { manifest.inputs.push_back(path); }
  void finish() {
    manifest.duration_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    manifest.write((out_dir / "manifest.json").string());
  }
};

struct TrainSetup {
  ModelSpec spec;
  TrainConfig train;
  FusionRule fusion = FusionRule::MAJORITY;
  double vote_threshold = 0.5;
};

TrainSetup parse_train_config(Config& cfg, std::uint64_t seed) {
  TrainSetup s;
  s.spec.variant = variant_from(cfg.get_string("variant", "AMC_NET"));
  s.spec.base_channels = cfg.get_int("base_channels", 16);
  auto rates = cfg.get_int_list("dilation_rates", {1, 2, 3, 5});
  if (rates.size() != 4)
    cfg.fail("dilation_rates", "expected exactly 4 rates");
  else
    std::copy(rates.begin(), rates.end(), s.spec.dilation_rates.begin());
  s.spec.input_h = cfg.get_int("input_size", kPatchSize);
  s.spec.input_w = s.spec.input_h;
  s.spec.dropout_p = cfg.get_double("dropout", 0.2);
  s.spec.init_seed = cfg.get_u64("init_seed", seed);

  auto kind = loss_kind_from(cfg.get_string("loss", "FL"));
  s.train.loss = LossConfig::defaults(kind);
  s.train.loss.alpha = cfg.get_double("alpha", s.train.loss.alpha);
  s.train.loss.beta = cfg.get_double("beta", s.train.loss.beta);
  s.train.loss.gamma = cfg.get_double("gamma", s.train.loss.gamma);
  const std::string conv = cfg.get_string("ftl_convention", "as_printed");
  if (conv == "as_printed")
    s.train.loss.ftl = FtlConvention::kAsPrinted;
  else if (conv == "complement")
    s.train.loss.ftl = FtlConvention::kComplement;
  else
    cfg.fail("ftl_convention", "expected 'as_printed' or 'complement'");

  s.train.lr = cfg.get_double("lr", 0.001);
  s.train.epochs = cfg.get_int("epochs", 70);
  s.train.batch_size = cfg.get_int("batch_size", 16);
  s.train.seed = seed;
  s.train.oversample_infected = cfg.get_bool("oversample_infected", false);

  s.train.augment.enabled = cfg.get_bool("augment", true);
  s.train.augment.rotation_deg = cfg.get_double("rotation_deg", 10.0);
  s.train.augment.shift_frac = cfg.get_double("shift_frac", 0.2);
  s.train.augment.zoom_frac = cfg.get_double("zoom_frac", 0.2);

  s.fusion = fusion_rule_from(cfg.get_string("fusion", "MAJORITY"));
  s.vote_threshold = cfg.get_double("vote_threshold", 0.5);
  return s;
}

std::string patient_name_from(const fs::path& vol_path) {
  std::string stem = vol_path.stem().string();
  if (stem.rfind("vol_", 0) == 0) stem = stem.substr(4);
  return stem;
}

// Volume/mask pairs in a directory: vol_<name>.ctv with mask_<name>.msk.
std::vector<std::pair<fs::path, fs::path>> find_volume_pairs(const fs::path& dir) {
  std::vector<std::pair<fs::path, fs::path>> pairs;
  if (!fs::is_directory(dir)) throw std::runtime_error("not a directory: " + dir.string());
  std::vector<fs::path> vols;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.path().extension() == ".ctv" && e.path().filename().string().rfind("vol_", 0) == 0)
      vols.push_back(e.path());
  }
  std::sort(vols.begin(), vols.end());
  for (const auto& v : vols) {
    fs::path mask = v.parent_path() / ("mask_" + patient_name_from(v) + ".msk");
    if (!fs::exists(mask))
      throw std::runtime_error("no mask for volume " + v.string() + " (expected " +
                               mask.string() + ")");
    pairs.emplace_back(v, mask);
  }
  if (pairs.empty())
    throw std::runtime_error("no vol_*.ctv volumes found in " + dir.string());
  return pairs;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open for writing: " + path.string());
  os << text;
  if (!os) throw std::runtime_error("failed writing: " + path.string());
}

// ---- commands -----------------------------------------------------------------

int cmd_phantom(RunContext& ctx, std::uint64_t seed, int patients, int slices,
                double fraction, int infected_slices, bool write_lungs) {
  ctx.manifest.seeds = {seed};
  LesionSpec ls;
  ls.area_fraction = fraction;
  ls.infected_slices = infected_slices;
  for (int i = 0; i < patients; ++i) {
    const std::string name = "P" + std::to_string(i + 1);
    Phantom ph = make_phantom(seed + static_cast<std::uint64_t>(i), slices, ls);
    save_volume(ph.hu, ctx.out("vol_" + name + ".ctv").string());
    save_mask(ph.lesions, ctx.out("mask_" + name + ".msk").string());
    if (write_lungs) save_mask(ph.lungs, ctx.out("lungs_" + name + ".msk").string());
  }
  std::cout << "wrote " << patients << " phantom volume/mask pairs to " << ctx.out_dir
            << "\n";
  return 0;
}

int cmd_prep(RunContext& ctx, const fs::path& volumes_dir, std::uint64_t seed,
             int roi_boxes, int negatives, bool resample) {
  ctx.manifest.seeds = {seed};
  ExtractConfig ec;
  ec.roi_boxes = roi_boxes;
  ec.negatives_per_slice = negatives;

  PatchStore store;
  std::mt19937_64 rng(seed);
  for (const auto& [vol_path, mask_path] : find_volume_pairs(volumes_dir)) {
    ctx.input(vol_path.string());
    ctx.input(mask_path.string());
    const std::string patient = patient_name_from(vol_path);
    Volume vol = normalize_hu(load_volume(vol_path.string()));
    MaskVolume mask = load_mask(mask_path.string());
    if (vol.slices != mask.slices || vol.height != mask.height || vol.width != mask.width)
      throw std::runtime_error(vol_path.string() + ": volume and mask dimensions differ");
    auto labels = label_slices(vol, mask);
    for (int s = 0; s < vol.slices; ++s) {
      const float* px = vol.slice(s);
      const std::uint8_t* mp = mask.slice(s);
      std::vector<float> rs_img;
      std::vector<std::uint8_t> rs_mask;
      int h = vol.height, w = vol.width;
      if (h % ec.patch != 0 || w % ec.patch != 0) {
        if (!resample)
          throw std::runtime_error(vol_path.string() +
                                   ": slices are not patch-aligned; pass --resample");
        rs_img = resample_slice(px, h, w, 512, 512);
        rs_mask.resize(512 * 512);
        for (int y = 0; y < 512; ++y)
          for (int x = 0; x < 512; ++x) {
            const int sy = std::min(h - 1, static_cast<int>(std::lround((y + 0.5) * h / 512.0 - 0.5)));
            const int sx = std::min(w - 1, static_cast<int>(std::lround((x + 0.5) * w / 512.0 - 0.5)));
            rs_mask[static_cast<std::size_t>(y) * 512 + x] =
                mp[static_cast<std::size_t>(sy) * w + sx];
          }
        px = rs_img.data();
        mp = rs_mask.data();
        h = w = 512;
      }
      auto patches = extract_train_patches(px, mp, h, w, labels[static_cast<std::size_t>(s)],
                                           ec, rng, patient, s);
      for (auto& p : patches) store.samples.push_back(std::move(p));
    }
  }
  save_patch_store(store, ctx.out("patches.pst").string());
  write_patch_manifest(store, ctx.out("patches.csv").string());
  std::cout << "extracted " << store.samples.size() << " patches from "
            << store.patients().size() << " patients\n";
  return 0;
}

int cmd_train(RunContext& ctx, const fs::path& patches, const fs::path& config_path,
              std::uint64_t seed, const std::string& val_patient) {
  ctx.manifest.seeds = {seed};
  ctx.manifest.config_path = config_path.string();
  ctx.input(patches.string());
  ctx.input(config_path.string());

  Config cfg = Config::parse_file(config_path.string());
  TrainSetup setup = parse_train_config(cfg, seed);
  cfg.finish();

  PatchStore store = load_patch_store(patches.string());
  std::vector<const PatchSample*> train_set, val_set;
  for (const auto& s : store.samples) {
    if (s.patient == val_patient)
      val_set.push_back(&s);
    else
      train_set.push_back(&s);
  }
  if (!val_patient.empty() && val_set.empty())
    throw std::runtime_error("no patches for validation patient '" + val_patient + "'");

  Network<float> net(setup.spec);
  auto curve = train(net, train_set, val_set, setup.train, [](int epoch, const EpochStats& e) {
    std::cout << "epoch " << (epoch + 1) << ": train_loss=" << e.train_loss
              << " train_dsc=" << e.train_dsc << " val_loss=" << e.val_loss
              << " val_dsc=" << e.val_dsc << "\n";
  });
  save_checkpoint(net, ctx.out("model.amc").string());
  write_curve_csv(curve, ctx.out("curve.csv").string());
  std::cout << "best epoch " << (curve.best_epoch + 1) << "\n";
  return 0;
}

int cmd_train_ensemble(RunContext& ctx, const fs::path& patches,
                       const fs::path& config_path, std::uint64_t seed, int jobs) {
  ctx.manifest.seeds = {seed};
  ctx.manifest.config_path = config_path.string();
  ctx.input(patches.string());
  ctx.input(config_path.string());

  Config cfg = Config::parse_file(config_path.string());
  TrainSetup setup = parse_train_config(cfg, seed);
  cfg.finish();

  PatchStore store = load_patch_store(patches.string());
  auto splits = make_lopo_splits(store.patients());

  auto bundle = train_ensemble(splits, store, setup.spec, setup.train, jobs);
  bundle.fusion = setup.fusion;
  bundle.vote_threshold = setup.vote_threshold;

  for (std::size_t i = 0; i < bundle.members.size(); ++i) {
    const std::string name = bundle.members[i].split.member_id;
    bundle.members[i].checkpoint_path = name + ".amc";
    save_checkpoint(bundle.models[i], ctx.out(name + ".amc").string());
  }
  save_bundle_manifest(bundle, ctx.out("bundle.json").string());
  std::cout << "trained " << bundle.members.size()
            << " members; mean val DSC = " << bundle.mean_val_dsc()
            << " (sd " << bundle.sd_val_dsc() << ")\n";
  return 0;
}

int cmd_predict(RunContext& ctx, const std::string& bundle_path,
                const std::string& model_path, const fs::path& volume_path,
                bool write_probs, bool overlays, bool resample) {
  ctx.input(volume_path.string());
  Volume raw = load_volume(volume_path.string());

  PredictOptions opts;
  opts.resample_misaligned = resample;

  VolumePrediction pred;
  if (!bundle_path.empty()) {
    ctx.input(bundle_path);
    EnsembleBundle bundle = load_bundle(bundle_path);
    pred = predict_volume(bundle, raw, opts);
  } else {
    ctx.input(model_path);
    Network<float> net = load_checkpoint(model_path);
    std::vector<const Network<float>*> models{&net};
    pred = predict_volume(models, FusionRule::MAJORITY, 0.5, raw, opts);
  }

  save_mask(pred.mask, ctx.out("pred.msk").string());
  if (write_probs) save_volume(pred.mean_prob, ctx.out("probs.ctv").string());
  if (overlays) {
    Volume norm = normalize_hu(raw);
    for (int s = 0; s < raw.slices; ++s) {
      auto img = jet_overlay(
          std::span<const float>(pred.mean_prob.slice(s), pred.mean_prob.slice_stride()),
          std::span<const float>(norm.slice(s), norm.slice_stride()), raw.height,
          raw.width);
      write_png_rgb8(ctx.out("overlay_s" + std::to_string(s) + ".png").string(),
                     img.pixels, img.width, img.height);
    }
  }
  std::cout << "predicted " << raw.slices << " slices\n";
  return 0;
}

int cmd_evaluate(RunContext& ctx, const std::vector<std::string>& preds,
                 const std::vector<std::string>& truths,
                 const std::vector<std::string>& probs) {
  if (preds.size() != truths.size())
    throw std::runtime_error("evaluate: need one --truth per --pred");
  if (!probs.empty() && probs.size() != preds.size())
    throw std::runtime_error("evaluate: need one --probs per --pred when given");

  std::vector<VolumeMetrics> rows;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    ctx.input(preds[i]);
    ctx.input(truths[i]);
    MaskVolume p = load_mask(preds[i]);
    MaskVolume t = load_mask(truths[i]);
    std::optional<Volume> pr;
    if (!probs.empty()) {
      ctx.input(probs[i]);
      pr = load_volume(probs[i]);
    }
    rows.push_back(evaluate_volume(fs::path(preds[i]).stem().string(), p, t,
                                   pr ? &*pr : nullptr));
  }
  auto report = aggregate_metrics(std::move(rows));
  write_text(ctx.out("metrics.csv"), metric_report_csv(report));

  std::ostringstream os;
  os << "volumes evaluated: " << report.per_volume.size() << "\n"
     << "DSC         " << report.dsc.mean << " +/- " << report.dsc.sd << "\n"
     << "Precision   " << report.precision.mean << " +/- " << report.precision.sd << "\n"
     << "Sensitivity " << report.sensitivity.mean << " +/- " << report.sensitivity.sd
     << "\n";
  if (report.auc.n)
    os << "AUC         " << report.auc.mean << " +/- " << report.auc.sd << "\n";
  else
    os << "AUC         n/a (no probability volumes)\n";
  write_text(ctx.out("summary.txt"), os.str());
  std::cout << os.str();
  return 0;
}

int cmd_severity(RunContext& ctx, const fs::path& mask_path,
                 const std::string& reference_path, const std::string& volume_path,
                 double hu_floor) {
  ctx.input(mask_path.string());
  MaskVolume mask = load_mask(mask_path.string());

  SeverityReport rep;
  if (!reference_path.empty()) {
    ctx.input(reference_path);
    rep = severity_grade(mask, load_mask(reference_path));
    rep.reference_kind = "lung-mask";
  } else if (!volume_path.empty()) {
    ctx.input(volume_path);
    Volume vol = load_volume(volume_path);
    rep = severity_grade(mask, body_reference(vol, static_cast<float>(hu_floor)));
    rep.reference_kind = "body-hu-floor(" + std::to_string(hu_floor) + ")";
  } else {
    throw std::runtime_error("severity: pass --reference LUNG.msk or --volume VOL.ctv");
  }

  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.2f", rep.involvement_pct);
  std::ostringstream os;
  os << "involvement_pct=" << buf << "\n"
     << "grade=" << severity_grade_name(rep.grade) << "\n"
     << "infected_voxels=" << rep.infected_voxels << "\n"
     << "reference_voxels=" << rep.reference_voxels << "\n"
     << "reference=" << rep.reference_kind << "\n";
  write_text(ctx.out("severity.txt"), os.str());
  std::cout << os.str();
  return 0;
}

int cmd_features(RunContext& ctx, const fs::path& model_path, const fs::path& volume_path,
                 int slice_idx, int block, int row, int col) {
  ctx.input(model_path.string());
  ctx.input(volume_path.string());
  Network<float> net = load_checkpoint(model_path.string());
  Volume vol = normalize_hu(load_volume(volume_path.string()));
  if (slice_idx < 0 || slice_idx >= vol.slices)
    throw std::runtime_error("slice index out of range (volume has " +
                             std::to_string(vol.slices) + " slices)");

  const int p = net.spec().input_h;
  if (row < 0) row = std::max(0, (vol.height - p) / 2);
  if (col < 0) col = std::max(0, (vol.width - p) / 2);
  if (row + p > vol.height || col + p > vol.width)
    throw std::runtime_error("patch offset out of bounds");

  std::vector<float> patch(static_cast<std::size_t>(p) * p);
  const float* sp = vol.slice(slice_idx);
  for (int y = 0; y < p; ++y)
    std::copy(sp + static_cast<std::size_t>(row + y) * vol.width + col,
              sp + static_cast<std::size_t>(row + y) * vol.width + col + p,
              patch.begin() + static_cast<std::size_t>(y) * p);
  auto input = Tensor<float>::from_data({1, 1, p, p}, std::move(patch));

  int h = 0, w = 0;
  auto maps = net.block_features(input, block, &h, &w);
  for (std::size_t c = 0; c < maps.size(); ++c) {
    auto px = to_gray8(maps[c]);
    write_png_gray8(
        ctx.out("feat_b" + std::to_string(block) + "_c" + std::to_string(c) + ".png")
            .string(),
        px, w, h);
  }
  std::cout << "wrote " << maps.size() << " feature maps (" << h << "x" << w << ")\n";
  return 0;
}

int cmd_params(RunContext* ctx, const std::string& variant, int base_channels,
               const std::vector<int>& dils) {
  ModelSpec spec;
  spec.variant = variant_from(variant);
  spec.base_channels = base_channels;
  if (!dils.empty()) {
    if (dils.size() != 4) throw std::runtime_error("params: need exactly 4 dilation rates");
    std::copy(dils.begin(), dils.end(), spec.dilation_rates.begin());
  }
  Network<float> net(spec);
  const std::size_t count = net.parameter_count();
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.2fM", static_cast<double>(count) / 1e6);
  std::ostringstream os;
  os << "variant=" << variant << "\n"
     << "parameters=" << count << "\n"
     << "parameters_millions=" << buf << "\n";
  std::cout << os.str();
  if (ctx) write_text(ctx->out("params.txt"), os.str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Lung-CT infection segmentation: attention-gated multi-scale "
               "encoder-decoder, LOPO ensembles, severity grading"};
  app.require_subcommand(1);
  std::vector<std::string> raw_args(argv, argv + argc);

  int jobs = 0;
  app.add_option("--jobs", jobs, "Bound internal parallelism (default: all cores)");

  // phantom
  auto* sc_phantom = app.add_subcommand("phantom", "Generate synthetic phantom volumes");
  std::uint64_t seed = 0;
  int patients = 1, slices = 8, infected_slices = -1;
  double fraction = 0.10;
  bool lungs = false;
  std::string out_dir;
  sc_phantom->add_option("--seed", seed, "Base seed")->required();
  sc_phantom->add_option("--patients", patients, "Number of volumes")->check(CLI::PositiveNumber);
  sc_phantom->add_option("--slices", slices, "Slices per volume")->check(CLI::PositiveNumber);
  sc_phantom->add_option("--fraction", fraction, "Lesion area fraction of the lung fields");
  sc_phantom->add_option("--infected-slices", infected_slices,
                         "Infected slices per volume (-1: three quarters)");
  sc_phantom->add_flag("--lungs", lungs, "Also write lung-field masks");
  sc_phantom->add_option("--out", out_dir, "Output directory")->required();

  // prep
  auto* sc_prep = app.add_subcommand("prep", "Extract training patches from volumes");
  std::string volumes_dir;
  int roi_boxes = 20, negatives = 12;
  bool resample = false;
  sc_prep->add_option("--volumes", volumes_dir, "Directory of vol_*.ctv / mask_*.msk")->required();
  sc_prep->add_option("--seed", seed, "Sampling seed")->required();
  sc_prep->add_option("--roi-boxes", roi_boxes, "Random ROI boxes per infected slice");
  sc_prep->add_option("--negatives", negatives, "Random patches per non-infected slice");
  sc_prep->add_flag("--resample", resample, "Resample misaligned slices to 512x512");
  sc_prep->add_option("--out", out_dir, "Output directory")->required();

  // train
  auto* sc_train = app.add_subcommand("train", "Train a single model");
  std::string patches_path, config_path, val_patient;
  sc_train->add_option("--patches", patches_path, "Patch store (.pst)")->required();
  sc_train->add_option("--config", config_path, "Training config (key = value)")->required();
  sc_train->add_option("--seed", seed, "Training seed")->required();
  sc_train->add_option("--val-patient", val_patient, "Patient held out for validation");
  sc_train->add_option("--out", out_dir, "Output directory")->required();

  // train-ensemble
  auto* sc_ens = app.add_subcommand("train-ensemble", "Train a leave-one-patient-out ensemble");
  sc_ens->add_option("--patches", patches_path, "Patch store (.pst)")->required();
  sc_ens->add_option("--config", config_path, "Training config (key = value)")->required();
  sc_ens->add_option("--seed", seed, "Base training seed")->required();
  sc_ens->add_option("--out", out_dir, "Output directory")->required();

  // predict
  auto* sc_predict = app.add_subcommand("predict", "Segment a volume with a bundle or model");
  std::string bundle_path, model_path, volume_path;
  bool write_probs = false, overlays = false;
  sc_predict->add_option("--bundle", bundle_path, "Ensemble bundle manifest (.json)");
  sc_predict->add_option("--model", model_path, "Single model checkpoint (.amc)");
  sc_predict->add_option("--volume", volume_path, "Input CT volume (.ctv)")->required();
  sc_predict->add_flag("--probs", write_probs, "Also write the mean probability volume");
  sc_predict->add_flag("--overlay", overlays, "Write JET overlay PNGs per slice");
  sc_predict->add_flag("--resample", resample, "Resample misaligned slices instead of rejecting");
  sc_predict->add_option("--out", out_dir, "Output directory")->required();

  // evaluate
  auto* sc_eval = app.add_subcommand("evaluate", "Score predictions against ground truth");
  std::vector<std::string> pred_paths, truth_paths, prob_paths;
  sc_eval->add_option("--pred", pred_paths, "Predicted mask volume(s)")->required();
  sc_eval->add_option("--truth", truth_paths, "Ground-truth mask volume(s)")->required();
  sc_eval->add_option("--probs", prob_paths, "Probability volume(s) for AUC");
  sc_eval->add_option("--out", out_dir, "Output directory")->required();

  // severity
  auto* sc_sev = app.add_subcommand("severity", "Grade infection involvement");
  std::string mask_path, reference_path;
  double hu_floor = -500.0;
  sc_sev->add_option("--mask", mask_path, "Infection mask volume (.msk)")->required();
  sc_sev->add_option("--reference", reference_path, "Lung-field mask volume (.msk)");
  sc_sev->add_option("--volume", volume_path, "CT volume for the body-reference fallback");
  sc_sev->add_option("--hu-floor", hu_floor, "HU floor for the body reference");
  sc_sev->add_option("--out", out_dir, "Output directory")->required();

  // features
  auto* sc_feat = app.add_subcommand("features", "Export per-channel block activations");
  int slice_idx = 0, block = 1, row = -1, col = -1;
  sc_feat->add_option("--model", model_path, "Model checkpoint (.amc)")->required();
  sc_feat->add_option("--volume", volume_path, "Input CT volume (.ctv)")->required();
  sc_feat->add_option("--slice", slice_idx, "Slice index");
  sc_feat->add_option("--block", block, "Coding block 1..9")->required();
  sc_feat->add_option("--row", row, "Patch row offset (default: centered)");
  sc_feat->add_option("--col", col, "Patch column offset (default: centered)");
  sc_feat->add_option("--out", out_dir, "Output directory")->required();

  // params
  auto* sc_params = app.add_subcommand("params", "Report the parameter count of a spec");
  std::string variant = "AMC_NET";
  int base_channels = 16;
  std::vector<int> dils;
  sc_params->add_option("--variant", variant, "UNET | ATT_UNET | MSU_NET | AMC_NET");
  sc_params->add_option("--base-channels", base_channels, "First-block width");
  sc_params->add_option("--dilations", dils, "Four dilation rates")->delimiter(',');
  sc_params->add_option("--out", out_dir, "Optional output directory for the report");

  CLI11_PARSE(app, argc, argv);
  if (jobs > 0) omp_set_num_threads(jobs);

  try {
    RunContext ctx;
    if (sc_phantom->parsed()) {
      ctx.begin("phantom", out_dir, raw_args);
      cmd_phantom(ctx, seed, patients, slices, fraction, infected_slices, lungs);
    } else if (sc_prep->parsed()) {
      ctx.begin("prep", out_dir, raw_args);
      cmd_prep(ctx, volumes_dir, seed, roi_boxes, negatives, resample);
    } else if (sc_train->parsed()) {
      ctx.begin("train", out_dir, raw_args);
      cmd_train(ctx, patches_path, config_path, seed, val_patient);
    } else if (sc_ens->parsed()) {
      ctx.begin("train-ensemble", out_dir, raw_args);
      ctx.manifest.seeds = {seed};
      cmd_train_ensemble(ctx, patches_path, config_path, seed, jobs > 0 ? jobs : 1);
    } else if (sc_predict->parsed()) {
      if (bundle_path.empty() == model_path.empty())
        throw std::runtime_error("predict: pass exactly one of --bundle or --model");
      ctx.begin("predict", out_dir, raw_args);
      cmd_predict(ctx, bundle_path, model_path, volume_path, write_probs, overlays, resample);
    } else if (sc_eval->parsed()) {
      ctx.begin("evaluate", out_dir, raw_args);
      cmd_evaluate(ctx, pred_paths, truth_paths, prob_paths);
    } else if (sc_sev->parsed()) {
      ctx.begin("severity", out_dir, raw_args);
      cmd_severity(ctx, mask_path, reference_path, volume_path, hu_floor);
    } else if (sc_feat->parsed()) {
      ctx.begin("features", out_dir, raw_args);
      cmd_features(ctx, model_path, volume_path, slice_idx, block, row, col);
    } else if (sc_params->parsed()) {
      if (out_dir.empty()) {
        cmd_params(nullptr, variant, base_channels, dils);
        return 0;  // no outputs, no manifest
      }
      ctx.begin("params", out_dir, raw_args);
      cmd_params(&ctx, variant, base_channels, dils);
    }
    ctx.finish();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
