#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <random>

#include "facegan/error.hpp"
#include "facegan/evaluation.hpp"
#include "facegan/generation.hpp"
#include "facegan/io.hpp"
#include "facegan/pipeline.hpp"
#include "facegan/synth.hpp"
#include "facegan/training.hpp"

namespace py = pybind11;
using namespace facegan;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;

py::array_t<float> map_array(const UVMap& m) {
  py::array_t<float> a({m.channels, m.height, m.width});
  std::copy(m.data.begin(), m.data.end(), a.mutable_data());
  return a;
}

py::array_t<bool> map_valid(const UVMap& m) {
  py::array_t<bool> a({m.height, m.width});
  auto* out = a.mutable_data();
  for (std::size_t i = 0; i < m.valid.size(); ++i) out[i] = m.valid[i] != 0;
  return a;
}

UVMap map_from_array(FloatArray a, std::optional<py::array_t<bool, py::array::c_style | py::array::forcecast>> valid) {
  if (a.ndim() != 3) throw ShapeError("UV map array must be (C, H, W)");
  UVMap m(int(a.shape(1)), int(a.shape(2)), int(a.shape(0)));
  std::copy(a.data(), a.data() + a.size(), m.data.begin());
  if (valid) {
    if (valid->ndim() != 2 || valid->shape(0) != m.height || valid->shape(1) != m.width)
      throw ShapeError("validity mask must be (H, W)");
    for (std::size_t i = 0; i < m.valid.size(); ++i) m.valid[i] = valid->data()[i] ? 1 : 0;
  } else {
    std::fill(m.valid.begin(), m.valid.end(), std::uint8_t{1});
  }
  return m;
}

py::dict net_config_dict(const NetConfig& c) {
  py::dict d;
  d["resolution"] = c.resolution;
  d["base_filters"] = c.base_filters;
  d["latent_dim"] = c.latent_dim;
  d["label_channels"] = c.label_channels;
  d["skip_levels"] = c.skip_levels;
  return d;
}

PairedDataset as_dataset(const std::vector<UVMap>& maps, std::optional<int> label, int label_count) {
  if (label && label_count == 0) throw DataError("model is not label-conditioned");
  std::vector<int> labels;
  if (label_count > 0) labels.assign(maps.size(), label.value_or(0));
  return representation_dataset(maps, std::move(labels), label_count);
}

struct Model {
  Checkpoint ck;
  const NetParams<float>& net() const { return inference_network(ck); }
};

}  // namespace

PYBIND11_MODULE(_facegan, m) {
  m.doc() = "UV-map face autoencoder GAN: geometry, training artifacts and metrics";

  auto base = py::register_exception<Error>(m, "Error");
  py::register_exception<ShapeError>(m, "ShapeError", base.ptr());
  py::register_exception<DataError>(m, "DataError", base.ptr());
  py::register_exception<NumericalError>(m, "NumericalError", base.ptr());

  py::class_<Mesh>(m, "Mesh")
      .def(py::init([](Points v, Triangles f, std::map<std::string, int> lm) {
             Mesh mesh{std::move(v), std::move(f), std::move(lm)};
             mesh.validate();
             return mesh;
           }),
           py::arg("vertices"), py::arg("faces"), py::arg("landmarks") = std::map<std::string, int>{})
      .def_readwrite("vertices", &Mesh::vertices)
      .def_readwrite("faces", &Mesh::faces)
      .def_readwrite("landmarks", &Mesh::landmarks)
      .def_property_readonly("vertex_count", &Mesh::vertex_count)
      .def("bbox_diagonal", &Mesh::bbox_diagonal)
      .def("__repr__", [](const Mesh& x) {
        return "<Mesh " + std::to_string(x.vertex_count()) + " vertices, " + std::to_string(x.faces.rows()) + " faces>";
      });

  py::class_<UVLayout>(m, "UVLayout")
      .def_readonly("uv", &UVLayout::uv)
      .def_readonly("faces", &UVLayout::faces);

  py::class_<UVMap>(m, "UVMap")
      .def(py::init(&map_from_array), py::arg("array"), py::arg("valid") = py::none())
      .def_readonly("height", &UVMap::height)
      .def_readonly("width", &UVMap::width)
      .def_readonly("channels", &UVMap::channels)
      .def_property_readonly("array", &map_array)
      .def_property_readonly("valid", &map_valid)
      .def("__eq__", [](const UVMap& a, const UVMap& b) { return a == b; });

  m.def("load_obj", &load_obj, py::arg("path"));
  m.def("save_obj", &save_obj, py::arg("path"), py::arg("mesh"));
  m.def("load_landmarks", &load_landmarks, py::arg("path"));
  m.def("load_uvmap", &load_uvmap, py::arg("path"));
  m.def("save_uvmap", &save_uvmap, py::arg("path"), py::arg("map"));
  m.def("load_layout", &load_layout, py::arg("path"));

  m.def("cylindrical_unwrap", &cylindrical_unwrap, py::arg("template"));
  m.def("rasterize_uv", py::overload_cast<const Mesh&, const UVLayout&, int>(&rasterize_uv), py::arg("mesh"),
        py::arg("layout"), py::arg("resolution"));
  m.def("sample_positions", &sample_positions, py::arg("map"), py::arg("layout"));
  m.def("normalize", [](const std::vector<Mesh>& meshes) {
    auto n = normalize_dataset(meshes);
    return py::make_tuple(n.meshes, n.scale);
  }, py::arg("meshes"), "Centre and scale into [-1, 1]; returns (meshes, scale).");

  m.def(
      "synth",
      [](int subjects, int modes, double noise, int labels, std::uint64_t seed, int grid) {
        SynthOptions o;
        o.subjects = subjects;
        o.modes = modes;
        o.noise = noise;
        o.labels = labels;
        o.seed = seed;
        o.grid = grid;
        SynthDataset s = synth_dataset(o);
        py::dict d;
        d["template"] = s.templ;
        d["meshes"] = s.meshes;
        d["noisy"] = s.noisy;
        d["subject"] = s.subject;
        d["label"] = s.label;
        d["label_names"] = s.label_names;
        d["label_offsets"] = s.label_offsets;
        return d;
      },
      py::arg("subjects") = 100, py::arg("modes") = 10, py::arg("noise") = 0.0, py::arg("labels") = 0,
      py::arg("seed") = 0, py::arg("grid") = 45);

  m.def(
      "preprocess",
      [](const std::vector<Mesh>& meshes, const Mesh& templ, int resolution, int threads) {
        PreprocessOptions o;
        o.resolution = resolution;
        o.threads = threads;
        Preprocessed p;
        {
          py::gil_scoped_release nogil;
          p = preprocess(meshes, templ, o);
        }
        py::dict d;
        d["layout"] = p.layout;
        d["meshes"] = p.meshes;
        d["maps"] = p.maps;
        d["scale"] = p.scale;
        return d;
      },
      py::arg("meshes"), py::arg("template"), py::arg("resolution") = 32, py::arg("threads") = 1);

  py::class_<LatentGaussian>(m, "LatentGaussian")
      .def_readonly("mean", &LatentGaussian::mean)
      .def_readonly("factor", &LatentGaussian::factor)
      .def_readonly("label", &LatentGaussian::label)
      .def_property_readonly("covariance", &LatentGaussian::covariance)
      .def(
          "sample",
          [](const LatentGaussian& g, int n, std::uint64_t seed) {
            std::mt19937_64 rng(seed);
            Eigen::MatrixXd out(n, g.dim());
            for (int i = 0; i < n; ++i) out.row(i) = sample_latent(g, rng).transpose();
            return out;
          },
          py::arg("n"), py::arg("seed") = 0);
  m.def(
      "fit_latent_gaussian", [](const Eigen::MatrixXd& z) { return fit_latent_gaussian(z.transpose()); },
      py::arg("z"), "Gaussian from an (N, N_b) matrix of bottleneck codes.");
  m.def("load_gaussians", &load_gaussians, py::arg("path"));

  py::class_<Model>(m, "Model")
      .def_static(
          "load", [](const fs::path& p) { return Model{load_checkpoint(p)}; }, py::arg("path"))
      .def_property_readonly("phase", [](const Model& x) { return x.ck.phase; })
      .def_property_readonly("epoch", [](const Model& x) { return x.ck.epoch; })
      .def_property_readonly("meta", [](const Model& x) { return x.ck.meta; })
      .def_property_readonly("config", [](const Model& x) { return net_config_dict(x.net().config); })
      .def_property_readonly("parameter_count", [](const Model& x) { return x.net().count(); })
      .def_property_readonly("history", [](const Model& x) { return x.ck.history; })
      .def(
          "reconstruct",
          [](const Model& x, const std::vector<UVMap>& maps, std::optional<int> label) {
            const PairedDataset ds = as_dataset(maps, label, x.net().config.label_channels);
            py::gil_scoped_release nogil;
            return reconstruct(x.net(), ds);
          },
          py::arg("maps"), py::arg("label") = py::none())
      .def(
          "encode",
          [](const Model& x, const std::vector<UVMap>& maps, std::optional<int> label) {
            const PairedDataset ds = as_dataset(maps, label, x.net().config.label_channels);
            Eigen::MatrixXd z;
            {
              py::gil_scoped_release nogil;
              z = collect_bottlenecks(x.net(), ds);
            }
            return Eigen::MatrixXd(z.transpose());
          },
          py::arg("maps"), py::arg("label") = py::none(), "Bottleneck codes as an (N, N_b) matrix.")
      .def(
          "decode", [](const Model& x, const Eigen::VectorXd& z) { return decode_latent(x.net(), z); }, py::arg("z"),
          "Decoder-only pass with zero skip features.");

  m.def(
      "pretrain",
      [](const std::vector<UVMap>& maps, const fs::path& out, const std::string& config) {
        RunConfig rc = parse_config(config);
        rc.net.resolution = maps.empty() ? rc.net.resolution : maps.front().height;
        const PairedDataset ds = representation_dataset(maps);
        PretrainState st = pretrain_init(rc.net, rc.train);
        {
          py::gil_scoped_release nogil;
          pretrain_discriminator(st, ds, rc.train);
        }
        save_checkpoint(out, make_checkpoint(st, rc.train));
        return st.history;
      },
      py::arg("maps"), py::arg("out"), py::arg("config") = "",
      "Pre-train the autoencoder on maps and write a checkpoint; config uses the key = value file syntax.");

  py::class_<Specificity>(m, "Specificity")
      .def_readonly("mean", &Specificity::mean)
      .def_readonly("std", &Specificity::std)
      .def_readonly("distances", &Specificity::distances);
  py::class_<CedCurve>(m, "CedCurve")
      .def_readonly("x", &CedCurve::x)
      .def_readonly("y", &CedCurve::y)
      .def_readonly("auc", &CedCurve::auc)
      .def_readonly("fr", &CedCurve::fr)
      .def_readonly("x_max", &CedCurve::x_max)
      .def_readonly("threshold", &CedCurve::threshold);

  m.def(
      "generalization_errors",
      [](const std::vector<Mesh>& rec, const std::vector<Mesh>& test) {
        return generalization_errors(rec, test).values;
      },
      py::arg("reconstructions"), py::arg("test"));
  m.def(
      "ced_auc_fr",
      [](std::vector<double> errors, double x_max, double threshold, int points) {
        return ced_auc_fr(make_distribution(std::move(errors)), x_max, threshold, points);
      },
      py::arg("errors"), py::arg("x_max") = 0.01, py::arg("threshold") = 0.0, py::arg("points") = 101);
  m.def(
      "specificity",
      [](const std::vector<Mesh>& gen, const std::vector<Mesh>& test) { return specificity(gen, test); },
      py::arg("generated"), py::arg("test"));
  m.def("rmse3d_translation", &rmse3d_translation, py::arg("pred"), py::arg("gt"), py::arg("crop_radius") = 150.0);
}
