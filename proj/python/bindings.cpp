#include "layerscope/cca.hpp"
#include "layerscope/error.hpp"
#include "layerscope/features.hpp"
#include "layerscope/probes.hpp"
#include "layerscope/protocol.hpp"
#include "layerscope/synthetic.hpp"
#include "layerscope/tensor_io.hpp"

#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

namespace py = pybind11;
using namespace layerscope;
using Eigen::MatrixXd;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;

WeightNorm parse_norm(const std::string& name) {
  if (name == "l2") return WeightNorm::kL2;
  if (name == "l1") return WeightNorm::kL1;
  throw Error(ErrorCode::kInvalidConfig, "weight_norm must be 'l1' or 'l2'");
}

py::dict result_dict(const CcaResult& r) {
  py::dict d;
  d["rho"] = r.rho;
  d["alpha"] = r.alpha;
  d["pwcca"] = r.pwcca;
  d["zero_variance"] = r.zero_variance;
  d["uniform_weights"] = r.uniform_weights;
  return d;
}

FloatArray to_array(const RepMatrix& m) {
  FloatArray out({static_cast<py::ssize_t>(m.rows), static_cast<py::ssize_t>(m.cols)});
  std::copy(m.values.begin(), m.values.end(), out.mutable_data());
  return out;
}

RepMatrix from_array(const FloatArray& a, std::uint32_t layer_id, Granularity g) {
  if (a.ndim() != 2) throw Error(ErrorCode::kShapeMismatch, "expected a 2-D array");
  RepMatrix m;
  m.rows = static_cast<std::uint32_t>(a.shape(0));
  m.cols = static_cast<std::uint32_t>(a.shape(1));
  m.values.assign(a.data(), a.data() + a.size());
  m.layer_id = layer_id;
  m.granularity = g;
  return m;
}

}  // namespace

PYBIND11_MODULE(_layerscope, m) {
  m.doc() = "Layer-wise PWCCA analysis of speech encoder representations";

  static py::exception<Error> error_type(m, "LayerscopeError", PyExc_RuntimeError);
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      py::object exc = py::handle(error_type.ptr())(e.what());
      exc.attr("code") = std::string(e.name());
      exc.attr("detail") = e.detail();
      PyErr_SetObject(error_type.ptr(), exc.ptr());
    }
  });

  // tensor-io
  m.def(
      "read_rep",
      [](const std::filesystem::path& path) {
        const RepMatrix r = read_rep(path);
        return py::make_tuple(to_array(r), r.layer_id, std::string(granularity_name(r.granularity)));
      },
      py::arg("path"), "Read an LREP1 file as (float32 array, layer_id, granularity).");
  m.def(
      "write_rep",
      [](const std::filesystem::path& path, const FloatArray& values, std::uint32_t layer_id,
         const std::string& granularity) { write_rep(from_array(values, layer_id, parse_granularity(granularity)), path); },
      py::arg("path"), py::arg("values"), py::arg("layer_id") = 0, py::arg("granularity") = "frame");
  m.def(
      "validate_manifest",
      [](const std::filesystem::path& path) {
        py::list issues;
        try {
          for (const auto& i : validate_manifest(load_manifest(path))) {
            py::dict d;
            d["error"] = i.error;
            d["message"] = i.message;
            d["layer_id"] = i.layer_id ? py::object(py::int_(*i.layer_id)) : py::object(py::none());
            issues.append(d);
          }
        } catch (const Error& e) {
          py::dict d;
          d["error"] = std::string(e.name());
          d["message"] = e.detail();
          d["layer_id"] = py::none();
          issues.append(d);
        }
        return issues;
      },
      py::arg("manifest"), "List every problem in a manifest; empty when clean.");

  // cca-core
  m.def(
      "canonical_correlations",
      [](const MatrixXd& x, const MatrixXd& y, double eps_x, double eps_y) {
        py::gil_scoped_release release;
        return fit_cca(x, y, {eps_x, eps_y}).fit_rho;
      },
      py::arg("x"), py::arg("y"), py::arg("eps_x") = 0.0, py::arg("eps_y") = 0.0);
  m.def(
      "pwcca",
      [](const MatrixXd& x_train, const MatrixXd& y_train, std::optional<MatrixXd> x_test,
         std::optional<MatrixXd> y_test, double eps_x, double eps_y, const std::string& weight_norm) {
        if (x_test.has_value() != y_test.has_value()) {
          throw Error(ErrorCode::kDimensionMismatch, "pass both x_test and y_test or neither");
        }
        const MatrixXd& xt = x_test ? *x_test : x_train;
        const MatrixXd& yt = y_test ? *y_test : y_train;
        CcaResult r;
        {
          py::gil_scoped_release release;
          r = pwcca_similarity(x_train, y_train, xt, yt, {eps_x, eps_y}, parse_norm(weight_norm));
        }
        return result_dict(r);
      },
      py::arg("x_train"), py::arg("y_train"), py::arg("x_test") = py::none(), py::arg("y_test") = py::none(),
      py::arg("eps_x") = 0.0, py::arg("eps_y") = 0.0, py::arg("weight_norm") = "l2",
      "Fit CCA on the training pair and return PWCCA on the test pair (defaults to the training pair).");
  m.def(
      "onehot",
      [](const std::vector<std::size_t>& labels, std::size_t vocab_size) { return onehot(labels, vocab_size); },
      py::arg("labels"), py::arg("vocab_size"));

  // features
  m.def(
      "log_mel",
      [](const FloatArray& waveform, std::uint32_t sample_rate, std::uint32_t n_mels, double win_ms, double hop_ms,
         double fmin_hz, std::optional<double> fmax_hz, double log_floor) {
        if (waveform.ndim() != 1) throw Error(ErrorCode::kShapeMismatch, "expected a 1-D waveform");
        MelConfig cfg;
        cfg.sample_rate_hz = sample_rate;
        cfg.n_mels = n_mels;
        cfg.win_ms = win_ms;
        cfg.hop_ms = hop_ms;
        cfg.fmin_hz = fmin_hz;
        cfg.fmax_hz = fmax_hz;
        cfg.log_floor = log_floor;
        return to_array(mel_filterbank(std::span(waveform.data(), static_cast<std::size_t>(waveform.size())),
                                       sample_rate, cfg));
      },
      py::arg("waveform"), py::arg("sample_rate") = 16000, py::arg("n_mels") = 80, py::arg("win_ms") = 25.0,
      py::arg("hop_ms") = 20.0, py::arg("fmin_hz") = 0.0, py::arg("fmax_hz") = py::none(),
      py::arg("log_floor") = 1e-10, "Log mel filterbank, frames x n_mels.");

  // probes
  m.def(
      "train_probe",
      [](const MatrixXd& x, const std::vector<std::size_t>& labels, std::size_t num_classes, double step, double l2,
         double tol, std::size_t max_iters) {
        ProbeConfig cfg{step, l2, tol, max_iters};
        LinearProbe p;
        {
          py::gil_scoped_release release;
          p = train_probe(x, labels, num_classes, cfg);
        }
        return py::make_tuple(p.weights, p.bias);
      },
      py::arg("x"), py::arg("labels"), py::arg("num_classes"), py::arg("step") = 0.1, py::arg("l2") = 1e-4,
      py::arg("tol") = 1e-6, py::arg("max_iters") = 5000, "Returns (weights d x C, bias C).");
  m.def(
      "probe_accuracy",
      [](const MatrixXd& weights, const Eigen::VectorXd& bias, const MatrixXd& x, const std::vector<std::size_t>& labels) {
        LinearProbe p{weights, bias, {}};
        return eval_probe(p, x, labels);
      },
      py::arg("weights"), py::arg("bias"), py::arg("x"), py::arg("labels"));
  m.def(
      "spearman", [](const std::vector<double>& a, const std::vector<double>& b) { return spearman(a, b); },
      py::arg("a"), py::arg("b"), "Spearman rank correlation with average ranks.");

  // protocol
  m.def(
      "analyze",
      [](const std::filesystem::path& manifest_path, const std::string& target, std::uint64_t seed,
         std::size_t workers, const std::string& weight_norm) {
        const Manifest manifest = load_manifest(manifest_path);
        AnalysisConfig cfg;
        cfg.seed = seed;
        cfg.workers = workers;
        cfg.weight_norm = parse_norm(weight_norm);
        AnalysisCurve curve;
        {
          py::gil_scoped_release release;
          curve = run_cca_analysis(manifest, parse_target(target), cfg);
        }
        py::list rows;
        for (const auto& l : curve.layers) {
          py::dict d;
          d["layer"] = l.layer;
          d["mean"] = l.score.mean;
          d["std"] = l.score.std;
          d["runs"] = l.score.per_run();
          rows.append(d);
        }
        return rows;
      },
      py::arg("manifest"), py::arg("target"), py::arg("seed") = 0, py::arg("workers") = 1,
      py::arg("weight_norm") = "l2", "Nine-run PWCCA curve over layers for one target.");
  m.def(
      "write_synthetic_dump",
      [](const std::filesystem::path& dir, const std::string& kind, std::uint32_t num_layers, std::uint32_t peak_layer,
         std::uint32_t num_utterances, std::uint64_t seed, bool audio) {
        SyntheticSpec spec;
        if (kind == "planted") {
          spec.kind = SyntheticKind::kPlanted;
        } else if (kind == "melcopy") {
          spec.kind = SyntheticKind::kMelCopy;
        } else {
          throw Error(ErrorCode::kInvalidConfig, "kind must be 'planted' or 'melcopy'");
        }
        spec.num_layers = num_layers;
        spec.peak_layer = peak_layer;
        spec.num_utterances = num_utterances;
        spec.seed = seed;
        spec.write_audio = audio;
        return write_synthetic_dump(spec, dir).manifest;
      },
      py::arg("dir"), py::arg("kind") = "planted", py::arg("num_layers") = 12, py::arg("peak_layer") = 6,
      py::arg("num_utterances") = 150, py::arg("seed") = 7, py::arg("audio") = false,
      "Write a synthetic dump and return the manifest path.");
}
