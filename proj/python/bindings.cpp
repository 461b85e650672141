#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "loopalign/errors.hpp"
#include "loopalign/harness.hpp"
#include "loopalign/manifold.hpp"
#include "loopalign/training.hpp"

namespace py = pybind11;
using namespace loopalign;

namespace {

// Configs and metrics cross the boundary as JSON text; the Python side turns
// them into dicts.
std::string config_json(const std::string& json_text, const std::vector<std::string>& overrides) {
  nlohmann::json doc = RunConfig{};
  if (!json_text.empty()) doc.merge_patch(nlohmann::json::parse(json_text));
  apply_overrides(doc, overrides);
  RunConfig cfg = doc.get<RunConfig>();
  cfg.validate();
  return nlohmann::json(cfg).dump();
}

RunConfig parse_config(const std::string& json_text) {
  RunConfig cfg = nlohmann::json::parse(json_text).get<RunConfig>();
  cfg.validate();
  return cfg;
}

py::dict accuracy_dict(const Accuracy& a) {
  py::dict d;
  d["pi"] = a.per_instance;
  d["pc"] = a.per_class;
  d["n"] = a.total;
  return d;
}

py::dict report_dict(const harness::Report& r) {
  py::list checks;
  for (const auto& c : r.checks) {
    py::dict d;
    d["name"] = c.name;
    d["measured"] = c.measured;
    d["limit"] = c.limit;
    d["passed"] = c.passed;
    d["detail"] = c.detail;
    checks.append(d);
  }
  py::dict out;
  out["suite"] = r.suite;
  out["passed"] = r.passed();
  out["seconds"] = r.seconds;
  out["checks"] = checks;
  return out;
}

geo::Vector frechet(const std::string& model, const std::vector<geo::Vector>& points,
                    const std::vector<double>& weights, double curvature, double tol, int max_iters) {
  const geo::FrechetOptions opts{tol, max_iters};
  if (model == "poincare") return geo::frechet_mean(geo::PoincareBall(curvature), points, weights, opts).mean;
  if (model == "lorentz") return geo::frechet_mean(geo::Hyperboloid(curvature), points, weights, opts).mean;
  throw ConfigError("unknown model '" + model + "' (expected poincare or lorentz)");
}

}  // namespace

PYBIND11_MODULE(_loopalign, m) {
  m.doc() = "Native core of the loopalign package";

  py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<DataError>(m, "DataError", PyExc_ValueError);
  py::register_exception<DomainError>(m, "DomainError", PyExc_ValueError);
  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<IoError>(m, "IoError", PyExc_OSError);
  py::register_exception<TrainingError>(m, "TrainingError", PyExc_RuntimeError);

  m.def("poincare_exp0", [](const geo::Vector& v, double c) { return geo::PoincareBall(c).exp0(v); },
        py::arg("v"), py::arg("c") = 1.0);
  m.def("poincare_log0", [](const geo::Vector& y, double c) { return geo::PoincareBall(c).log0(y); },
        py::arg("y"), py::arg("c") = 1.0);
  m.def("mobius_add",
        [](const geo::Vector& u, const geo::Vector& v, double c) { return geo::PoincareBall(c).mobius_add(u, v); },
        py::arg("u"), py::arg("v"), py::arg("c") = 1.0);
  m.def("poincare_dist",
        [](const geo::Vector& u, const geo::Vector& v, double c) { return geo::PoincareBall(c).dist(u, v); },
        py::arg("u"), py::arg("v"), py::arg("c") = 1.0);
  m.def("lorentz_dist",
        [](const geo::Vector& x, const geo::Vector& y, double c) { return geo::Hyperboloid(c).dist(x, y); },
        py::arg("x"), py::arg("y"), py::arg("c") = 1.0);
  m.def("poincare_to_lorentz", &geo::poincare_to_lorentz, py::arg("p"), py::arg("c") = 1.0);
  m.def("lorentz_to_poincare", &geo::lorentz_to_poincare, py::arg("x"), py::arg("c") = 1.0);
  m.def("frechet_mean", &frechet, py::arg("model"), py::arg("points"), py::arg("weights"), py::arg("c") = 1.0,
        py::arg("tol") = 1e-10, py::arg("max_iters") = 1000);

  m.def("config_json", &config_json, py::arg("json_text") = "", py::arg("overrides") = std::vector<std::string>{});
  m.def("accuracy", [](const std::vector<std::string>& truth, const std::vector<std::string>& predicted) {
    return accuracy_dict(accuracy(truth, predicted));
  });

  m.def(
      "generate_synthetic",
      [](const std::string& out, int classes, int samples_per_class, int frames, double noise, std::uint64_t seed) {
        SyntheticTaskSpec spec;
        spec.classes = classes;
        spec.samples_per_class = samples_per_class;
        spec.frames = frames;
        spec.min_frames = frames;
        spec.noise = noise;
        spec.seed = seed;
        return generate_synthetic(spec, out).records.size();
      },
      py::arg("out"), py::arg("classes") = 10, py::arg("samples_per_class") = 200, py::arg("frames") = 16,
      py::arg("noise") = 0.1, py::arg("seed") = 0);

  m.def(
      "train",
      [](const std::string& json_text) {
        const RunConfig cfg = parse_config(json_text);
        const Dataset data = Dataset::load(cfg.data.manifest);
        Pipeline pipeline(cfg, data.vocabulary());
        const TrainResult r = train(pipeline, data);
        py::dict out;
        out["losses"] = r.losses;
        out["checkpoint"] = r.checkpoint_path;
        out["parameters"] = pipeline.parameters().scalar_count();
        if (r.evaluated) out["eval"] = accuracy_dict(r.final_eval);
        return out;
      },
      py::arg("config_json"));

  m.def(
      "evaluate",
      [](const std::string& checkpoint, std::string manifest, std::string split) {
        const auto pipeline = load_checkpoint(checkpoint);
        if (manifest.empty()) manifest = pipeline->config().data.manifest;
        if (split.empty()) split = pipeline->config().data.eval_split;
        const Dataset data = Dataset::load(manifest);
        return accuracy_dict(evaluate(*pipeline, data, data.split(split),
                                      static_cast<std::size_t>(pipeline->config().optim.batch_size)));
      },
      py::arg("checkpoint"), py::arg("manifest") = "", py::arg("split") = "");

  m.def(
      "export_embeddings",
      [](const std::string& checkpoint, const std::string& out, std::string manifest) {
        const auto pipeline = load_checkpoint(checkpoint);
        if (manifest.empty()) manifest = pipeline->config().data.manifest;
        const Dataset data = Dataset::load(manifest);
        export_embeddings(*pipeline, data, out, static_cast<std::size_t>(pipeline->config().optim.batch_size));
        return data.size();
      },
      py::arg("checkpoint"), py::arg("out"), py::arg("manifest") = "");

  m.def("geomtest", [](std::uint64_t seed) { return report_dict(harness::geometry_suite(seed)); },
        py::arg("seed") = 0);
  m.def("frechet_suite", [](std::uint64_t seed) { return report_dict(harness::frechet_suite(seed)); },
        py::arg("seed") = 0);
  m.def("gradcheck", [](std::uint64_t seed) { return report_dict(harness::gradient_suite(seed)); },
        py::arg("seed") = 0);
  m.def("ablation_axes", &harness::ablation_axes);
}
