#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "aadf/harness.hpp"

namespace py = pybind11;
using namespace aadf;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Image to_image(const Array& a) {
  if (a.ndim() != 3 || a.shape(2) != 3) throw PreconditionError("expected an (H, W, 3) array");
  Image img(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)));
  std::copy(a.data(), a.data() + a.size(), img.data.begin());
  return img;
}

Array from_image(const Image& img) {
  Array a({img.rows, img.cols, 3});
  std::copy(img.data.begin(), img.data.end(), a.mutable_data());
  return a;
}

Grid to_grid(const Array& a) {
  if (a.ndim() != 2) throw PreconditionError("expected an (H, W) array");
  Grid g(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)));
  std::copy(a.data(), a.data() + a.size(), g.data.begin());
  return g;
}

Array from_grid(const Grid& g) {
  Array a({g.rows, g.cols});
  std::copy(g.data.begin(), g.data.end(), a.mutable_data());
  return a;
}

std::vector<PredictionRecord> to_records(const std::vector<double>& scores, const std::vector<int>& labels) {
  if (scores.size() != labels.size()) throw PreconditionError("scores and labels differ in length");
  std::vector<PredictionRecord> out(scores.size());
  for (size_t i = 0; i < scores.size(); ++i) {
    out[i].id = std::to_string(i);
    out[i].p = scores[i];
    out[i].y = labels[i];
  }
  return out;
}

}  // namespace

PYBIND11_MODULE(_aadf, m) {
  m.doc() = "Attack-aware forgery detection core";

  py::register_exception<IoError>(m, "IoError", PyExc_OSError);
  py::register_exception<FormatError>(m, "FormatError", PyExc_ValueError);
  py::register_exception<PreconditionError>(m, "PreconditionError", PyExc_ValueError);
  py::register_exception<ManifestError>(m, "ManifestError", PyExc_ValueError);
  py::register_exception<UndefinedMetricError>(m, "UndefinedMetricError", PyExc_ValueError);

  // image core
  m.def("load_image", [](const fs::path& p) { return from_image(load_image(p)); });
  m.def("save_image", [](const Array& a, const fs::path& p) { save_image(to_image(a), p); });
  m.def("resize_bilinear", [](const Array& a, int h, int w) { return from_image(resize_bilinear(to_image(a), h, w)); });
  m.def(
      "jpeg_sim",
      [](const Array& a, int quality, bool chroma) { return from_image(jpeg_sim(to_image(a), {quality, chroma})); },
      py::arg("img"), py::arg("quality") = 75, py::arg("chroma_subsample") = false);
  m.def("luma_quant_table", &luma_quant_table);
  m.def("chroma_quant_table", &chroma_quant_table);
  m.def("psnr", [](const Array& a, const Array& b) { return psnr(to_image(a), to_image(b)); });

  // attacks and priors
  m.def("sample_attack", [](const std::string& family, std::uint64_t seed) {
    return serialize(sample_attack(parse_family(family), seed));
  });
  m.def(
      "apply_attack",
      [](const Array& a, const std::string& record, std::optional<Array> prior) {
        const Image img = to_image(a);
        std::optional<Grid> g;
        if (prior) g = to_grid(*prior);
        return from_image(apply_attack(img, parse_attack(record), g ? &*g : nullptr));
      },
      py::arg("img"), py::arg("record"), py::arg("prior") = py::none());
  m.def(
      "build_prior",
      [](std::array<double, 4> box, int srcH, int srcW, int workingSize) {
        return from_grid(build_prior({box[0], box[1], box[2], box[3]}, srcH, srcW, workingSize).grid);
      },
      py::arg("box"), py::arg("src_h"), py::arg("src_w"), py::arg("working_size") = 384);

  // detector
  py::class_<DetectorParams>(m, "DetectorParams")
      .def_static("initialize", &DetectorParams::initialize, py::arg("seed"), py::arg("grid") = 32,
                  py::arg("hidden") = 16)
      .def_static("load", [](const fs::path& p) { return load_params(p); })
      .def("save", [](const DetectorParams& p, const fs::path& path) { save_params(p, path); })
      .def_readonly("grid", &DetectorParams::grid)
      .def_readonly("hidden", &DetectorParams::hidden)
      .def("flatten", &DetectorParams::flatten)
      .def("count", &DetectorParams::count);
  m.def(
      "forward",
      [](const Array& a, const DetectorParams& p, int workingSize) {
        const ModelOutput o = forward(pi_preprocess(to_image(a), workingSize), p);
        return py::make_tuple(o.logit, from_grid(o.evidence));
      },
      py::arg("img"), py::arg("params"), py::arg("working_size") = 384);
  m.def(
      "ttd_predict",
      [](const Array& a, const DetectorParams& p, int n, std::uint64_t seed, int workingSize) {
        DefenseConfig cfg;
        cfg.N = n;
        cfg.seed = seed;
        const DefendedPrediction d = ttd_predict(to_image(a), p, cfg, workingSize);
        py::dict out;
        out["probability"] = d.probability;
        out["mean_logit"] = d.meanLogit;
        out["per_view_logits"] = d.perViewLogits;
        out["evidence"] = from_grid(d.evidence);
        return out;
      },
      py::arg("img"), py::arg("params"), py::arg("n") = 3, py::arg("seed") = 0, py::arg("working_size") = 384);
  m.def(
      "grad_check",
      [](std::uint64_t seed, bool linearOnly, int trials) {
        LossWeights w;
        if (linearOnly) w.lambdaMask = w.gammaClean = w.lambdaEdge = w.lambdaSize = w.lambdaCons = 0.0;
        const GradCheckCase gc = make_gradcheck_case(seed);
        return grad_check(gc.sample, gc.params, w, trials, seed).maxRelError;
      },
      py::arg("seed") = 0, py::arg("linear_only") = false, py::arg("trials") = 3);

  // metrics
  m.def("rank_metrics", [](const std::vector<double>& s, const std::vector<int>& y) {
    const RankMetrics r = rank_metrics(to_records(s, y));
    return py::make_tuple(r.auc, r.ap);
  });
  m.def(
      "calib_metrics",
      [](const std::vector<double>& s, const std::vector<int>& y, int bins) {
        const CalibMetrics c = calib_metrics(to_records(s, y), bins);
        return py::make_tuple(c.ece, c.brier, c.nll);
      },
      py::arg("scores"), py::arg("labels"), py::arg("bins") = 10);
  m.def("aurc", [](const std::vector<double>& s, const std::vector<int>& y) {
    return selective_metrics(to_records(s, y)).aurc;
  });
  m.def("accuracy_at", [](const std::vector<double>& s, const std::vector<int>& y, double tau) {
    return accuracy(confusion_at(to_records(s, y), tau));
  });
  m.def("tune_tau", [](const std::map<std::string, std::pair<std::vector<double>, std::vector<int>>>& splits) {
    std::map<std::string, std::vector<PredictionRecord>> by;
    for (const auto& [name, sy] : splits) by[name] = to_records(sy.first, sy.second);
    const TauResult t = tune_tau(by);
    return py::make_tuple(t.tau, t.worstAcc);
  });
  m.def(
      "weak_localization",
      [](const Array& e, const Array& g, double theta, int radius) {
        const WeakLocalization w = weak_localization(to_grid(e), to_grid(g), theta, radius);
        py::dict out;
        out["ewr"] = w.ewr;
        out["precision_in_roi"] = w.precisionInRoi;
        out["empty_prediction"] = w.emptyPrediction;
        out["dilated_iou"] = w.dilatedIoU;
        out["soft_iou"] = w.softIoU;
        out["hard_iou"] = w.hardIoU;
        return out;
      },
      py::arg("evidence"), py::arg("prior"), py::arg("theta") = 0.5, py::arg("dilate_radius") = 8);

  // harness
  m.def(
      "gen_synth",
      [](int count, std::uint64_t seed, const fs::path& outDir, int size) {
        SynthOptions opt;
        opt.size = size;
        return gen_synth(count, seed, outDir, opt).entries.size();
      },
      py::arg("count"), py::arg("seed"), py::arg("out_dir"), py::arg("size") = 256);
  m.def(
      "train",
      [](const fs::path& manifest, const std::string& config, const fs::path& outDir) {
        const RunConfig cfg = RunConfig::parse(config);
        run_train(load_manifest(manifest), cfg, outDir);
      },
      py::arg("manifest"), py::arg("config") = "", py::arg("out_dir") = "out");
  m.def(
      "evaluate",
      [](const fs::path& manifest, const fs::path& params, const std::string& config, const fs::path& outDir) {
        const RunConfig cfg = RunConfig::parse(config);
        return metrics_json(run_eval(load_manifest(manifest), load_params(params), cfg, outDir));
      },
      py::arg("manifest"), py::arg("params"), py::arg("config") = "", py::arg("out_dir") = "out");
  m.def(
      "render_overlay",
      [](const Array& img, const Array& evidence, const fs::path& out) {
        render_overlay(to_image(img), to_grid(evidence), out);
      });
}
