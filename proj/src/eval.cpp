#include "amcseg/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace amcseg {

ConfusionCounts confusion(std::span<const std::uint8_t> pred,
                          std::span<const std::uint8_t> truth) {
  if (pred.size() != truth.size())
    throw std::invalid_argument("confusion: prediction and truth sizes differ");
  ConfusionCounts c;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool p = pred[i] != 0, t = truth[i] != 0;
    if (p && t)
      ++c.tp;
    else if (p && !t)
      ++c.fp;
    else if (!p && t)
      ++c.fn;
    else
      ++c.tn;
  }
  return c;
}

double dsc(const ConfusionCounts& c) {
  const std::uint64_t den = 2 * c.tp + c.fp + c.fn;
  if (den == 0) return 1.0;
  return 2.0 * static_cast<double>(c.tp) / static_cast<double>(den);
}

double precision(const ConfusionCounts& c) {
  if (c.tp + c.fp == 0) return (c.fn == 0) ? 1.0 : 0.0;
  return static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp);
}

double sensitivity(const ConfusionCounts& c) {
  if (c.tp + c.fn == 0) return (c.fp == 0) ? 1.0 : 0.0;
  return static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
}

std::optional<double> roc_auc(std::span<const float> probs,
                              std::span<const std::uint8_t> truth) {
  if (probs.size() != truth.size())
    throw std::invalid_argument("roc_auc: probs and truth sizes differ");
  std::uint64_t pos = 0;
  for (auto t : truth) pos += (t != 0);
  const std::uint64_t neg = truth.size() - pos;
  if (pos == 0 || neg == 0) return std::nullopt;

  std::vector<std::size_t> idx(probs.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(),
            [&](std::size_t a, std::size_t b) { return probs[a] < probs[b]; });

  // Mann-Whitney rank sum with average ranks for ties.
  double rank_sum_pos = 0.0;
  std::size_t i = 0;
  while (i < idx.size()) {
    std::size_t j = i;
    while (j + 1 < idx.size() && probs[idx[j + 1]] == probs[idx[i]]) ++j;
    const double avg_rank = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j + 1));
    for (std::size_t k = i; k <= j; ++k)
      if (truth[idx[k]]) rank_sum_pos += avg_rank;
    i = j + 1;
  }
  const double p = static_cast<double>(pos);
  const double n = static_cast<double>(neg);
  return (rank_sum_pos - p * (p + 1.0) / 2.0) / (p * n);
}

// ---- severity -----------------------------------------------------------------

std::string severity_grade_name(SeverityGrade g) {
  switch (g) {
    case SeverityGrade::CT0: return "CT-0";
    case SeverityGrade::CT1: return "CT-1";
    case SeverityGrade::CT2: return "CT-2";
    case SeverityGrade::CT3: return "CT-3";
    case SeverityGrade::CT4: return "CT-4";
  }
  return "?";
}

SeverityGrade grade_from_involvement(double pct) {
  if (pct < 0.0 || pct > 100.0)
    throw std::invalid_argument("involvement percentage out of [0,100]");
  if (pct == 0.0) return SeverityGrade::CT0;
  if (pct <= 25.0) return SeverityGrade::CT1;
  if (pct <= 50.0) return SeverityGrade::CT2;
  if (pct <= 75.0) return SeverityGrade::CT3;
  return SeverityGrade::CT4;
}

SeverityReport severity_grade(const MaskVolume& mask, const MaskVolume& reference) {
  if (mask.slices != reference.slices || mask.height != reference.height ||
      mask.width != reference.width)
    throw std::invalid_argument("severity_grade: mask and reference dimensions differ");
  SeverityReport r;
  for (std::size_t i = 0; i < mask.voxels.size(); ++i) {
    if (reference.voxels[i]) {
      ++r.reference_voxels;
      if (mask.voxels[i]) ++r.infected_voxels;
    }
  }
  if (r.reference_voxels == 0)
    throw std::invalid_argument("severity_grade: reference region is empty");
  r.involvement_pct =
      100.0 * static_cast<double>(r.infected_voxels) / static_cast<double>(r.reference_voxels);
  r.grade = grade_from_involvement(r.involvement_pct);
  r.reference_kind = "lung-mask";
  return r;
}

MaskVolume body_reference(const Volume& hu_volume, float hu_floor) {
  MaskVolume m;
  m.slices = hu_volume.slices;
  m.height = hu_volume.height;
  m.width = hu_volume.width;
  m.voxels.resize(hu_volume.voxels.size());
  for (std::size_t i = 0; i < m.voxels.size(); ++i)
    m.voxels[i] = hu_volume.voxels[i] > hu_floor ? 1 : 0;
  return m;
}

// ---- rendering ------------------------------------------------------------------

std::array<std::uint8_t, 3> jet_color(double v) {
  v = std::clamp(v, 0.0, 1.0);
  // Anchors: blue, cyan, green, yellow, red.
  static constexpr double anchors[5][3] = {
      {0, 0, 255}, {0, 255, 255}, {0, 255, 0}, {255, 255, 0}, {255, 0, 0}};
  const double t = v * 4.0;
  const int seg = std::min(3, static_cast<int>(t));
  const double f = t - seg;
  std::array<std::uint8_t, 3> out{};
  for (int c = 0; c < 3; ++c) {
    const double x = anchors[seg][c] + f * (anchors[seg + 1][c] - anchors[seg][c]);
    out[static_cast<std::size_t>(c)] = static_cast<std::uint8_t>(std::lround(x));
  }
  return out;
}

RgbImage jet_overlay(std::span<const float> probs, std::span<const float> base, int h,
                     int w, double threshold, double alpha) {
  const std::size_t n = static_cast<std::size_t>(h) * w;
  if (probs.size() != n || base.size() != n)
    throw std::invalid_argument("jet_overlay: map size does not match h*w");
  RgbImage img;
  img.height = h;
  img.width = w;
  img.pixels.resize(3 * n);
  for (std::size_t i = 0; i < n; ++i) {
    const double g = std::clamp(static_cast<double>(base[i]), 0.0, 1.0) * 255.0;
    double r = g, gg = g, b = g;
    if (probs[i] >= threshold) {
      const auto c = jet_color(probs[i]);
      r = (1 - alpha) * g + alpha * c[0];
      gg = (1 - alpha) * g + alpha * c[1];
      b = (1 - alpha) * g + alpha * c[2];
    }
    img.pixels[3 * i] = static_cast<std::uint8_t>(std::lround(r));
    img.pixels[3 * i + 1] = static_cast<std::uint8_t>(std::lround(gg));
    img.pixels[3 * i + 2] = static_cast<std::uint8_t>(std::lround(b));
  }
  return img;
}

// ---- dataset aggregation ---------------------------------------------------------

VolumeMetrics evaluate_volume(const std::string& name, const MaskVolume& pred,
                              const MaskVolume& truth, const Volume* probs) {
  if (pred.voxels.size() != truth.voxels.size())
    throw std::invalid_argument("evaluate_volume: prediction and truth dimensions differ");
  VolumeMetrics m;
  m.name = name;
  m.counts = confusion(pred.voxels, truth.voxels);
  m.dsc = dsc(m.counts);
  m.precision = precision(m.counts);
  m.sensitivity = sensitivity(m.counts);
  if (probs) {
    if (probs->voxels.size() != truth.voxels.size())
      throw std::invalid_argument("evaluate_volume: probability volume dimensions differ");
    m.auc = roc_auc(probs->voxels, truth.voxels);
  }
  return m;
}

namespace {

MetricSummary summarize(const std::vector<double>& xs) {
  MetricSummary s;
  s.n = static_cast<int>(xs.size());
  if (xs.empty()) return s;
  s.mean = std::accumulate(xs.begin(), xs.end(), 0.0) / xs.size();
  double var = 0.0;
  for (double x : xs) var += (x - s.mean) * (x - s.mean);
  s.sd = std::sqrt(var / xs.size());
  return s;
}

}  // namespace

MetricReport aggregate_metrics(std::vector<VolumeMetrics> rows) {
  MetricReport rep;
  std::vector<double> d, p, s, a;
  for (const auto& r : rows) {
    d.push_back(r.dsc);
    p.push_back(r.precision);
    s.push_back(r.sensitivity);
    if (r.auc) a.push_back(*r.auc);
  }
  rep.per_volume = std::move(rows);
  rep.dsc = summarize(d);
  rep.precision = summarize(p);
  rep.sensitivity = summarize(s);
  rep.auc = summarize(a);
  return rep;
}

std::string metric_report_csv(const MetricReport& report) {
  std::ostringstream os;
  os << "volume,dsc,precision,sensitivity,auc,tp,fp,tn,fn\n";
  auto row = [&os](const std::string& name, double d, double p, double s,
                   const std::optional<double>& a, const ConfusionCounts* c) {
    os << name << ',' << d << ',' << p << ',' << s << ',';
    if (a) os << *a;
    else os << "n/a";
    if (c)
      os << ',' << c->tp << ',' << c->fp << ',' << c->tn << ',' << c->fn;
    else
      os << ",,,,";
    os << '\n';
  };
  for (const auto& r : report.per_volume)
    row(r.name, r.dsc, r.precision, r.sensitivity, r.auc, &r.counts);
  row("mean", report.dsc.mean, report.precision.mean, report.sensitivity.mean,
      report.auc.n ? std::optional<double>(report.auc.mean) : std::nullopt, nullptr);
  row("sd", report.dsc.sd, report.precision.sd, report.sensitivity.sd,
      report.auc.n ? std::optional<double>(report.auc.sd) : std::nullopt, nullptr);
  return os.str();
}

}  // namespace amcseg
