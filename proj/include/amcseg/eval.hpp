#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "amcseg/data.hpp"

namespace amcseg {

struct ConfusionCounts {
  std::uint64_t tp = 0, fp = 0, tn = 0, fn = 0;

  std::uint64_t total() const { return tp + fp + tn + fn; }
  ConfusionCounts& operator+=(const ConfusionCounts& o) {
    tp += o.tp;
    fp += o.fp;
    tn += o.tn;
    fn += o.fn;
    return *this;
  }
};

ConfusionCounts confusion(std::span<const std::uint8_t> pred,
                          std::span<const std::uint8_t> truth);

// Empty prediction and empty truth count as perfect agreement (1); empty
// truth with predictions scores 0.
double dsc(const ConfusionCounts& c);
double precision(const ConfusionCounts& c);
double sensitivity(const ConfusionCounts& c);

// Rank-statistic AUC with tie averaging; equals the trapezoidal area under
// the ROC curve swept over all distinct thresholds. Undefined (nullopt) when
// truth is single-class.
std::optional<double> roc_auc(std::span<const float> probs,
                              std::span<const std::uint8_t> truth);

// ---- severity -----------------------------------------------------------------

enum class SeverityGrade { CT0, CT1, CT2, CT3, CT4 };

std::string severity_grade_name(SeverityGrade g);

struct SeverityReport {
  SeverityGrade grade = SeverityGrade::CT0;
  double involvement_pct = 0.0;
  std::uint64_t infected_voxels = 0;
  std::uint64_t reference_voxels = 0;
  std::string reference_kind;  // "lung-mask" or "body-hu-floor"
};

// Bands close at the top: 0 -> CT0, (0,25] -> CT1, (25,50] -> CT2,
// (50,75] -> CT3, (75,100] -> CT4.
SeverityGrade grade_from_involvement(double involvement_pct);

SeverityReport severity_grade(const MaskVolume& mask, const MaskVolume& reference);

// Fallback reference when no lung mask is available: body voxels above an HU
// floor (default -500) in the raw volume.
MaskVolume body_reference(const Volume& hu_volume, float hu_floor = -500.0f);

// ---- rendering ------------------------------------------------------------------

struct RgbImage {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> pixels;  // interleaved RGB
};

// Piecewise-linear JET ramp: blue, cyan, green, yellow, red at 0, .25, .5,
// .75, 1.
std::array<std::uint8_t, 3> jet_color(double v);

// Blends the JET-colored probability map over a grayscale base slice; pixels
// below `threshold` show the base unchanged.
RgbImage jet_overlay(std::span<const float> probs, std::span<const float> base, int h,
                     int w, double threshold = 0.5, double alpha = 0.5);

// ---- dataset aggregation ---------------------------------------------------------

struct VolumeMetrics {
  std::string name;
  ConfusionCounts counts;
  double dsc = 0.0;
  double precision = 0.0;
  double sensitivity = 0.0;
  std::optional<double> auc;
};

struct MetricSummary {
  double mean = 0.0;
  double sd = 0.0;  // population convention
  int n = 0;
};

struct MetricReport {
  std::vector<VolumeMetrics> per_volume;
  MetricSummary dsc, precision, sensitivity, auc;
};

VolumeMetrics evaluate_volume(const std::string& name, const MaskVolume& pred,
                              const MaskVolume& truth,
                              const Volume* probs = nullptr);
MetricReport aggregate_metrics(std::vector<VolumeMetrics> rows);
std::string metric_report_csv(const MetricReport& report);

}  // namespace amcseg
