#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <array>
#include <cstring>
#include <random>

#include "amcseg/data.hpp"
#include "amcseg/ensemble.hpp"
#include "amcseg/eval.hpp"
#include "amcseg/losses.hpp"
#include "amcseg/manifest.hpp"
#include "amcseg/network.hpp"
#include "amcseg/trainer.hpp"

namespace py = pybind11;
using namespace amcseg;

namespace {

using ArrayF = py::array_t<float, py::array::c_style | py::array::forcecast>;
using ArrayU8 = py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>;

Tensor<float> tensor_from_array(const ArrayF& a) {
  std::vector<int> shape(static_cast<std::size_t>(a.ndim()));
  for (py::ssize_t i = 0; i < a.ndim(); ++i)
    shape[static_cast<std::size_t>(i)] = static_cast<int>(a.shape(i));
  std::vector<float> data(a.data(), a.data() + a.size());
  return Tensor<float>::from_data(std::move(shape), std::move(data));
}

py::array_t<float> array_from_tensor(const Tensor<float>& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  py::array_t<float> out(shape);
  std::memcpy(out.mutable_data(), t.data().data(), t.numel() * sizeof(float));
  return out;
}

Volume volume_from_array(const ArrayF& a) {
  if (a.ndim() != 3) throw std::invalid_argument("expected a (slices, h, w) array");
  Volume v;
  v.slices = static_cast<int>(a.shape(0));
  v.height = static_cast<int>(a.shape(1));
  v.width = static_cast<int>(a.shape(2));
  v.voxels.assign(a.data(), a.data() + a.size());
  return v;
}

py::array_t<float> array_from_volume(const Volume& v) {
  py::array_t<float> out({v.slices, v.height, v.width});
  std::memcpy(out.mutable_data(), v.voxels.data(), v.voxels.size() * sizeof(float));
  return out;
}

MaskVolume mask_from_array(const ArrayU8& a) {
  if (a.ndim() != 3) throw std::invalid_argument("expected a (slices, h, w) array");
  MaskVolume m;
  m.slices = static_cast<int>(a.shape(0));
  m.height = static_cast<int>(a.shape(1));
  m.width = static_cast<int>(a.shape(2));
  m.voxels.assign(a.data(), a.data() + a.size());
  return m;
}

py::array_t<std::uint8_t> array_from_mask(const MaskVolume& m) {
  py::array_t<std::uint8_t> out({m.slices, m.height, m.width});
  std::memcpy(out.mutable_data(), m.voxels.data(), m.voxels.size());
  return out;
}

ModelSpec make_spec(const std::string& variant, int base_channels,
                    std::vector<int> dilation_rates, int input_size,
                    std::uint64_t init_seed, double dropout) {
  ModelSpec s;
  s.variant = variant_from(variant);
  s.base_channels = base_channels;
  if (dilation_rates.size() != 4)
    throw std::invalid_argument("dilation_rates must have exactly 4 entries");
  std::copy(dilation_rates.begin(), dilation_rates.end(), s.dilation_rates.begin());
  s.input_h = s.input_w = input_size;
  s.init_seed = init_seed;
  s.dropout_p = dropout;
  s.validate();
  return s;
}

LossConfig make_loss(const std::string& kind, py::object alpha, py::object beta,
                     py::object gamma, const std::string& ftl_convention) {
  LossConfig cfg = LossConfig::defaults(loss_kind_from(kind));
  if (!alpha.is_none()) cfg.alpha = alpha.cast<double>();
  if (!beta.is_none()) cfg.beta = beta.cast<double>();
  if (!gamma.is_none()) cfg.gamma = gamma.cast<double>();
  if (ftl_convention == "as_printed")
    cfg.ftl = FtlConvention::kAsPrinted;
  else if (ftl_convention == "complement")
    cfg.ftl = FtlConvention::kComplement;
  else
    throw std::invalid_argument("ftl_convention must be 'as_printed' or 'complement'");
  cfg.validate();
  return cfg;
}

}  // namespace

PYBIND11_MODULE(_amcseg, m) {
  m.doc() = "Lung-CT infection segmentation: attention-gated multi-scale "
            "encoder-decoder, LOPO ensembles, severity grading";
  m.attr("__version__") = kToolVersion;

  py::class_<Network<float>>(m, "Model")
      .def(py::init([](const std::string& variant, int base_channels,
                       std::vector<int> dilation_rates, int input_size,
                       std::uint64_t init_seed, double dropout) {
             return Network<float>(make_spec(variant, base_channels,
                                             std::move(dilation_rates), input_size,
                                             init_seed, dropout));
           }),
           py::arg("variant") = "AMC_NET", py::arg("base_channels") = 16,
           py::arg("dilation_rates") = std::vector<int>{1, 2, 3, 5},
           py::arg("input_size") = 128, py::arg("init_seed") = 0,
           py::arg("dropout") = 0.2)
      .def_property_readonly(
          "variant",
          [](const Network<float>& n) { return variant_name(n.spec().variant); })
      .def_property_readonly(
          "parameter_count",
          [](const Network<float>& n) { return n.parameter_count(); })
      .def("parameter_names",
           [](const Network<float>& n) {
             std::vector<std::string> names;
             for (const auto& p : n.params()) names.push_back(p.name);
             return names;
           })
      .def(
          "forward",
          [](const Network<float>& n, const ArrayF& batch) {
            auto x = tensor_from_array(batch);
            NoGradGuard ng;
            return array_from_tensor(n.forward(x, false));
          },
          py::arg("batch"),
          "Run inference on a (B,1,H,W) batch; returns probabilities.")
      .def("block_features",
           [](const Network<float>& n, const ArrayF& input, int block) {
             auto x = tensor_from_array(input);
             int h = 0, w = 0;
             auto maps = n.block_features(x, block, &h, &w);
             py::array_t<float> out({static_cast<int>(maps.size()), h, w});
             for (std::size_t c = 0; c < maps.size(); ++c)
               std::memcpy(out.mutable_data() + c * maps[c].size(), maps[c].data(),
                           maps[c].size() * sizeof(float));
             return out;
           },
           py::arg("input"), py::arg("block"))
      .def("save", [](const Network<float>& n, const std::string& path) {
        save_checkpoint(n, path);
      });
  m.def("load_model", &load_checkpoint, py::arg("path"));

  m.def(
      "compute_loss",
      [](const std::string& kind, const ArrayF& pred, const ArrayF& target,
         py::object alpha, py::object beta, py::object gamma,
         const std::string& ftl_convention) {
        auto cfg = make_loss(kind, alpha, beta, gamma, ftl_convention);
        auto p = tensor_from_array(pred);
        auto t = tensor_from_array(target);
        return compute_loss(cfg, p, t).item();
      },
      py::arg("kind"), py::arg("pred"), py::arg("target"),
      py::arg("alpha") = py::none(), py::arg("beta") = py::none(),
      py::arg("gamma") = py::none(), py::arg("ftl_convention") = "as_printed",
      "Evaluate a named loss (CE, FL, DL, CEDL, IOU, TL, FTL) on numpy maps.");

  m.def(
      "make_phantom",
      [](std::uint64_t seed, int n_slices, double area_fraction, int infected_slices) {
        LesionSpec ls;
        ls.area_fraction = area_fraction;
        ls.infected_slices = infected_slices;
        Phantom ph = make_phantom(seed, n_slices, ls);
        return py::make_tuple(array_from_volume(ph.hu), array_from_mask(ph.lesions),
                              array_from_mask(ph.lungs));
      },
      py::arg("seed"), py::arg("n_slices"), py::arg("area_fraction") = 0.10,
      py::arg("infected_slices") = -1,
      "Synthetic volume; returns (hu, lesion_mask, lung_mask) arrays.");

  m.def("normalize_hu", [](const ArrayF& vol) {
    return array_from_volume(normalize_hu(volume_from_array(vol)));
  });

  m.def(
      "extract_train_patches",
      [](const ArrayF& slice, const ArrayU8& mask, std::uint64_t seed, int roi_boxes,
         int negatives) {
        if (slice.ndim() != 2 || mask.ndim() != 2)
          throw std::invalid_argument("expected 2-d slice and mask");
        const int h = static_cast<int>(slice.shape(0));
        const int w = static_cast<int>(slice.shape(1));
        bool infected = false;
        for (py::ssize_t i = 0; i < mask.size(); ++i)
          infected = infected || mask.data()[i];
        ExtractConfig cfg;
        cfg.roi_boxes = roi_boxes;
        cfg.negatives_per_slice = negatives;
        std::mt19937_64 rng(seed);
        auto patches = extract_train_patches(
            slice.data(), mask.data(), h, w,
            infected ? SliceLabel::INFECTED : SliceLabel::NON_INFECTED, cfg, rng, "P", 0);
        py::list out;
        for (const auto& p : patches) {
          py::array_t<float> img({cfg.patch, cfg.patch});
          std::memcpy(img.mutable_data(), p.image.data(),
                      p.image.size() * sizeof(float));
          py::array_t<std::uint8_t> msk({cfg.patch, cfg.patch});
          std::memcpy(msk.mutable_data(), p.mask.data(), p.mask.size());
          out.append(py::make_tuple(img, msk,
                                    p.label == SliceLabel::INFECTED ? "INFECTED"
                                                                    : "NON_INFECTED",
                                    p.row_off, p.col_off));
        }
        return out;
      },
      py::arg("slice"), py::arg("mask"), py::arg("seed"), py::arg("roi_boxes") = 20,
      py::arg("negatives") = 12);

  m.def("extract_test_patches", [](const ArrayF& slice) {
    if (slice.ndim() != 2) throw std::invalid_argument("expected a 2-d slice");
    const int h = static_cast<int>(slice.shape(0));
    const int w = static_cast<int>(slice.shape(1));
    auto tiles = extract_test_patches(slice.data(), nullptr, h, w, kPatchSize, "P", 0);
    py::list out;
    for (const auto& t : tiles) {
      py::array_t<float> img({kPatchSize, kPatchSize});
      std::memcpy(img.mutable_data(), t.image.data(), t.image.size() * sizeof(float));
      out.append(py::make_tuple(img, t.row_off, t.col_off));
    }
    return out;
  });

  m.def(
      "fuse",
      [](const std::vector<ArrayF>& members, const std::string& rule, double threshold) {
        if (members.empty()) throw std::invalid_argument("fuse: no members");
        std::vector<std::vector<float>> maps;
        for (const auto& a : members)
          maps.emplace_back(a.data(), a.data() + a.size());
        auto fused = fuse(maps, fusion_rule_from(rule), threshold);
        std::vector<py::ssize_t> shape(members[0].shape(),
                                       members[0].shape() + members[0].ndim());
        py::array_t<std::uint8_t> out(shape);
        std::memcpy(out.mutable_data(), fused.data(), fused.size());
        return out;
      },
      py::arg("members"), py::arg("rule") = "MAJORITY", py::arg("threshold") = 0.5);

  m.def(
      "predict_volume",
      [](const Network<float>& model, const ArrayF& raw_hu) {
        std::vector<const Network<float>*> models{&model};
        auto pred = predict_volume(models, FusionRule::MAJORITY, 0.5,
                                   volume_from_array(raw_hu));
        return py::make_tuple(array_from_mask(pred.mask),
                              array_from_volume(pred.mean_prob));
      },
      py::arg("model"), py::arg("raw_hu"),
      "Tile, segment and stitch a raw-HU volume; returns (mask, probabilities).");

  m.def("confusion", [](const ArrayU8& pred, const ArrayU8& truth) {
    auto c = confusion(std::span(pred.data(), static_cast<std::size_t>(pred.size())),
                       std::span(truth.data(), static_cast<std::size_t>(truth.size())));
    py::dict out;
    out["tp"] = c.tp;
    out["fp"] = c.fp;
    out["tn"] = c.tn;
    out["fn"] = c.fn;
    out["dsc"] = dsc(c);
    out["precision"] = precision(c);
    out["sensitivity"] = sensitivity(c);
    return out;
  });

  m.def("roc_auc", [](const ArrayF& probs, const ArrayU8& truth) -> py::object {
    auto auc = roc_auc(std::span(probs.data(), static_cast<std::size_t>(probs.size())),
                       std::span(truth.data(), static_cast<std::size_t>(truth.size())));
    if (!auc) return py::none();
    return py::float_(*auc);
  });

  m.def(
      "severity",
      [](const ArrayU8& mask, const ArrayU8& reference) {
        auto rep = severity_grade(mask_from_array(mask), mask_from_array(reference));
        py::dict out;
        out["grade"] = severity_grade_name(rep.grade);
        out["involvement_pct"] = rep.involvement_pct;
        out["infected_voxels"] = rep.infected_voxels;
        out["reference_voxels"] = rep.reference_voxels;
        return out;
      },
      py::arg("mask"), py::arg("reference"));

  m.def("jet_color", [](double v) {
    auto c = jet_color(v);
    return py::make_tuple(c[0], c[1], c[2]);
  });
}
