#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <torch/torch.h>

#include "fairtranslate/classify.hpp"
#include "fairtranslate/common.hpp"
#include "fairtranslate/config.hpp"
#include "fairtranslate/dataset.hpp"
#include "fairtranslate/evaluate.hpp"
#include "fairtranslate/metrics.hpp"
#include "fairtranslate/pac.hpp"
#include "fairtranslate/trainer.hpp"

namespace py = pybind11;
using namespace fairtranslate;

namespace {

torch::Tensor images_from_numpy(const py::array_t<float, py::array::c_style>& array) {
  auto buf = array.request();
  if (buf.ndim != 4 || buf.shape[1] != 3) {
    throw ValidationError("images", "expected a float32 array of shape (N,3,H,W)");
  }
  auto t = torch::from_blob(buf.ptr, {buf.shape[0], buf.shape[1], buf.shape[2], buf.shape[3]},
                            torch::kFloat32);
  return t.clone();
}

py::array_t<float> numpy_from_tensor(const torch::Tensor& tensor) {
  auto t = tensor.detach().contiguous().to(torch::kFloat32).cpu();
  std::vector<py::ssize_t> shape(t.sizes().begin(), t.sizes().end());
  py::array_t<float> out(shape);
  std::memcpy(out.mutable_data(), t.data_ptr<float>(), sizeof(float) * t.numel());
  return out;
}

Eigen::MatrixXd matrix_from_numpy(const py::array_t<double, py::array::c_style>& array) {
  auto buf = array.request();
  if (buf.ndim != 2) throw ValidationError("matrix", "expected a 2-D float64 array");
  Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> map(
      static_cast<double*>(buf.ptr), buf.shape[0], buf.shape[1]);
  return Eigen::MatrixXd(map);
}

Eigen::VectorXd vector_from_numpy(const py::array_t<double, py::array::c_style>& array) {
  auto buf = array.request();
  if (buf.ndim != 1) throw ValidationError("vector", "expected a 1-D float64 array");
  return Eigen::Map<Eigen::VectorXd>(static_cast<double*>(buf.ptr), buf.shape[0]);
}

py::array_t<double> numpy_from_matrix(const Eigen::MatrixXd& m) {
  py::array_t<double> out({static_cast<py::ssize_t>(m.rows()), static_cast<py::ssize_t>(m.cols())});
  Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> map(
      out.mutable_data(), m.rows(), m.cols());
  map = m;
  return out;
}

py::array_t<double> numpy_from_vector(const Eigen::VectorXd& v) {
  py::array_t<double> out(static_cast<py::ssize_t>(v.size()));
  Eigen::Map<Eigen::VectorXd>(out.mutable_data(), v.size()) = v;
  return out;
}

SyntheticSpec spec_from_kwargs(int resolution, int num_samples, double correlation,
                               std::uint64_t seed, int domain) {
  SyntheticSpec spec;
  spec.resolution = resolution;
  spec.num_samples = num_samples;
  spec.correlation = correlation;
  spec.seed = seed;
  spec.domain = domain;
  return spec;
}

GroupedPredictions preds_from_arrays(const std::vector<int>& predicted,
                                     const std::vector<int>& label,
                                     const std::vector<int>& group) {
  GroupedPredictions preds;
  preds.predicted = predicted;
  preds.label = label;
  preds.group = group;
  return preds;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "fairness-aware image translation toolkit (C++ core)";

  py::register_exception<ValidationError>(m, "ValidationError", PyExc_ValueError);
  py::register_exception<FormatError>(m, "FormatError", PyExc_ValueError);
  py::register_exception<TrainingDivergence>(m, "TrainingDivergence", PyExc_RuntimeError);

  m.def(
      "generate_synthetic",
      [](int resolution, int num_samples, double correlation, std::uint64_t seed, int domain) {
        auto spec = spec_from_kwargs(resolution, num_samples, correlation, seed, domain);
        auto records = generate_synthetic_dataset(spec);
        std::vector<std::size_t> all(records.size());
        std::iota(all.begin(), all.end(), 0);
        auto images = stack_images(records, all);
        auto attrs = stack_attrs(records, all);
        py::array_t<int> protected_classes(static_cast<py::ssize_t>(records.size()));
        auto* p = protected_classes.mutable_data();
        for (std::size_t i = 0; i < records.size(); ++i) {
          p[i] = records[i].protected_labels.gender.value_or(-1);
        }
        return py::make_tuple(numpy_from_tensor(images), numpy_from_tensor(attrs),
                              protected_classes);
      },
      py::arg("resolution") = 64, py::arg("num_samples") = 200, py::arg("correlation") = 0.0,
      py::arg("seed") = 0, py::arg("domain") = 0,
      "Generate (images, target_attrs, protected_classes) synthetic arrays");

  m.def(
      "write_synthetic_dataset",
      [](const std::string& out_dir, int resolution, int num_samples, double correlation,
         std::uint64_t seed, int domain) {
        auto spec = spec_from_kwargs(resolution, num_samples, correlation, seed, domain);
        auto records = generate_synthetic_dataset(spec);
        std::vector<std::string> names;
        for (const auto& f : spec.target_factors) names.push_back(f.name);
        write_dataset(out_dir, records, names, true);
        spec.write(out_dir + "/synthetic_spec.cfg");
        return records.size();
      },
      py::arg("out_dir"), py::arg("resolution") = 64, py::arg("num_samples") = 200,
      py::arg("correlation") = 0.0, py::arg("seed") = 0, py::arg("domain") = 0);

  m.def(
      "decode_synthetic_labels",
      [](const py::array_t<float, py::array::c_style>& images, int resolution) {
        SyntheticSpec spec;
        spec.resolution = resolution;
        auto batch = images_from_numpy(images);
        const auto n = batch.size(0);
        auto bits = torch::zeros({n, static_cast<std::int64_t>(spec.target_factors.size())});
        py::array_t<int> protected_classes(static_cast<py::ssize_t>(n));
        auto* p = protected_classes.mutable_data();
        for (std::int64_t i = 0; i < n; ++i) {
          bits[i] = decode_target_bits(batch[i], spec);
          p[i] = decode_protected_class(batch[i], spec, 0);
        }
        return py::make_tuple(numpy_from_tensor(bits), protected_classes);
      },
      py::arg("images"), py::arg("resolution"));

  m.def(
      "gaussian_stats",
      [](const py::array_t<double, py::array::c_style>& rows) {
        auto stats = gaussian_stats(matrix_from_numpy(rows));
        return py::make_tuple(numpy_from_vector(stats.mean), numpy_from_matrix(stats.cov));
      },
      py::arg("rows"));

  m.def(
      "frechet_distance",
      [](const py::array_t<double, py::array::c_style>& mean_a,
         const py::array_t<double, py::array::c_style>& cov_a,
         const py::array_t<double, py::array::c_style>& mean_b,
         const py::array_t<double, py::array::c_style>& cov_b) {
        GaussianStats a{vector_from_numpy(mean_a), matrix_from_numpy(cov_a)};
        GaussianStats b{vector_from_numpy(mean_b), matrix_from_numpy(cov_b)};
        return frechet_distance(a, b);
      },
      py::arg("mean_a"), py::arg("cov_a"), py::arg("mean_b"), py::arg("cov_b"));

  m.def(
      "frechet_from_embeddings",
      [](const py::array_t<double, py::array::c_style>& x,
         const py::array_t<double, py::array::c_style>& y) {
        return frechet_distance(gaussian_stats(matrix_from_numpy(x)),
                                gaussian_stats(matrix_from_numpy(y)));
      },
      py::arg("x"), py::arg("y"));

  m.def(
      "kid_from_embeddings",
      [](const py::array_t<double, py::array::c_style>& x,
         const py::array_t<double, py::array::c_style>& y, int num_subsets, int subset_size,
         std::uint64_t seed) {
        return kid_from_embeddings(matrix_from_numpy(x), matrix_from_numpy(y), num_subsets,
                                   subset_size, seed);
      },
      py::arg("x"), py::arg("y"), py::arg("num_subsets") = 100, py::arg("subset_size") = 0,
      py::arg("seed") = 0);

  m.def("equality_of_opportunity_from_rates", &equality_of_opportunity_from_rates,
        py::arg("tpr_a"), py::arg("tpr_b"));
  m.def("equalized_odds_from_rates", &equalized_odds_from_rates, py::arg("tpr_a"),
        py::arg("fpr_a"), py::arg("tpr_b"), py::arg("fpr_b"));

  m.def(
      "equality_of_opportunity",
      [](const std::vector<int>& predicted, const std::vector<int>& label,
         const std::vector<int>& group) {
        return equality_of_opportunity(preds_from_arrays(predicted, label, group));
      },
      py::arg("predicted"), py::arg("label"), py::arg("group"));
  m.def(
      "equalized_odds",
      [](const std::vector<int>& predicted, const std::vector<int>& label,
         const std::vector<int>& group) {
        return equalized_odds(preds_from_arrays(predicted, label, group));
      },
      py::arg("predicted"), py::arg("label"), py::arg("group"));
  m.def(
      "confusion_rates",
      [](const std::vector<int>& predicted, const std::vector<int>& label,
         const std::vector<int>& group, int which) {
        auto rates = confusion_rates(preds_from_arrays(predicted, label, group), which);
        return py::make_tuple(rates.tpr, rates.fpr);
      },
      py::arg("predicted"), py::arg("label"), py::arg("group"), py::arg("which"));

  m.def(
      "train_pac",
      [](const std::string& source_dir, const std::string& target_dir, const std::string& out,
         int resolution, int base_channels, int epochs, double grl_lambda, std::uint64_t seed) {
        PacConfig pc;
        pc.resolution = resolution;
        pc.base_channels = base_channels;
        pc.epochs = epochs;
        pc.grl_lambda = grl_lambda;
        pc.seed = seed;
        LoadOptions opts;
        opts.resolution = resolution;
        auto source = load_annotated_dataset(source_dir, source_dir + "/annotations.csv", opts);
        LoadOptions topts = opts;
        topts.domain_label = 1;
        std::vector<DatasetRecord> target;
        if (!target_dir.empty()) {
          target = load_annotated_dataset(target_dir, target_dir + "/annotations.csv", topts);
        }
        auto model = train_pac(pc, source, target);
        save_pac(out, model);
        return out;
      },
      py::arg("source_dir"), py::arg("target_dir"), py::arg("out"), py::arg("resolution") = 64,
      py::arg("base_channels") = 32, py::arg("epochs") = 5, py::arg("grl_lambda") = 1.0,
      py::arg("seed") = 0);

  m.def(
      "fpad",
      [](const std::string& pac_path, const py::array_t<float, py::array::c_style>& real,
         const py::array_t<float, py::array::c_style>& generated) {
        auto pac = load_pac(pac_path);
        return fpad(pac, images_from_numpy(real), images_from_numpy(generated));
      },
      py::arg("pac_path"), py::arg("real"), py::arg("generated"));

  m.def(
      "translate_images",
      [](const std::string& checkpoint, const py::array_t<float, py::array::c_style>& images,
         const py::array_t<float, py::array::c_style>& attrs) {
        auto gen = load_generator(checkpoint);
        auto image_t = images_from_numpy(images);
        auto buf = attrs.request();
        if (buf.ndim != 2) throw ValidationError("attrs", "expected (N,K) float32");
        auto attr_t =
            torch::from_blob(buf.ptr, {buf.shape[0], buf.shape[1]}, torch::kFloat32).clone();
        return numpy_from_tensor(translate_batched(gen, image_t, attr_t));
      },
      py::arg("checkpoint"), py::arg("images"), py::arg("attrs"));

  m.attr("__version__") = "0.1.0";
}
