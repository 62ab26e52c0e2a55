#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <nlohmann/json.hpp>

#include "splitvfu/checkpoint.hpp"
#include "splitvfu/errors.hpp"
#include "splitvfu/evaluation.hpp"
#include "splitvfu/experiment.hpp"
#include "splitvfu/unlearning.hpp"

namespace py = pybind11;
using namespace splitvfu;

namespace {

py::dict metrics_dict(const MetricsRecord& m) {
  py::dict d;
  d["clean_acc"] = m.clean_acc;
  d["backdoor_success"] = m.backdoor_success;
  d["mia_auc"] = m.mia_auc;
  d["mia_acc"] = m.mia_acc;
  d["kl_to_gold"] = m.kl_to_gold;
  return d;
}

UnlearnMode mode_of(const std::string& s) { return unlearn_mode_from_string(s); }

// Config plus prepared data, so repeated runs skip the data pipeline.
class Experiment {
 public:
  explicit Experiment(ExperimentConfig cfg) : cfg_(std::move(cfg)) {}

  const ExperimentConfig& config() const { return cfg_; }
  std::string to_json() const { return config_to_json(cfg_); }
  std::string hash() const { return hex64(config_hash(cfg_)); }
  std::uint64_t seed() const { return cfg_.seed; }
  void set_seed(std::uint64_t s) {
    cfg_.seed = s;
    data_.reset();
  }
  void set_unlearn(std::optional<double> c, std::optional<double> alpha, std::optional<std::string> mode) {
    if (c) cfg_.unlearn.c = *c;
    if (alpha) cfg_.unlearn.alpha = *alpha;
    if (mode) cfg_.unlearn.mode = mode_of(*mode);
    validate(cfg_.unlearn);
  }

  py::dict run() {
    RunResult r;
    {
      py::gil_scoped_release release;
      r = run_experiment(cfg_, data());
    }
    py::dict models;
    for (const ModelReport& m : r.models) models[py::str(m.name)] = metrics_dict(m.metrics);
    py::list trace;
    for (const TraceRecord& t : r.trace) {
      py::dict d;
      d["round"] = t.round;
      d["epoch"] = t.epoch;
      d["forget_loss"] = t.forget_loss;
      d["retain_loss"] = t.retain_loss;
      d["cosine"] = t.cosine;
      d["projected"] = t.projected;
      trace.append(d);
    }
    py::dict out;
    out["models"] = models;
    out["timings"] = r.timings;
    out["trace"] = trace;
    out["anchor_distance_before"] = r.anchor_distance_before;
    out["anchor_distance_after"] = r.anchor_distance_after;
    return out;
  }

 private:
  const PreparedData& data() {
    if (!data_) data_ = prepare_data(cfg_);
    return *data_;
  }

  ExperimentConfig cfg_;
  std::optional<PreparedData> data_;
};

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Split VFL simulator core";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const DimensionError& e) {
      py::set_error(PyExc_ValueError, e.what());
    } catch (const ArgumentError& e) {
      py::set_error(PyExc_ValueError, e.what());
    } catch (const FormatError& e) {
      py::set_error(PyExc_OSError, e.what());
    }
  });

  py::class_<Experiment>(m, "Experiment")
      .def_property_readonly("hash", &Experiment::hash)
      .def_property("seed", &Experiment::seed, &Experiment::set_seed)
      .def("to_json", &Experiment::to_json)
      .def("set_unlearn", &Experiment::set_unlearn, py::arg("c") = py::none(), py::arg("alpha") = py::none(),
           py::arg("mode") = py::none())
      .def("run", &Experiment::run, "Pretrain, unlearn, retrain and evaluate; returns metrics per model");

  m.def("parse_config", [](const std::string& text) { return Experiment(parse_config(text)); }, py::arg("text"));
  m.def("load_config", [](const std::string& path) { return Experiment(load_config(path)); }, py::arg("path"));

  m.def("sample_unit_sphere", &sample_unit_sphere, py::arg("dim"), py::arg("seed"));
  m.def(
      "cosine", [](const Vector& a, const Vector& b) { return cosine(GradientVector(a), GradientVector(b)); },
      py::arg("a"), py::arg("b"));
  m.def(
      "project_retention",
      [](const Vector& g_r, const Vector& g_f) {
        Projection p = project_retention(GradientVector(g_r), GradientVector(g_f));
        return py::make_tuple(Vector(p.grad.values()), p.projected);
      },
      py::arg("g_r"), py::arg("g_f"), "Returns (projected retention gradient, whether projection applied)");
  m.def(
      "coordinated_update",
      [](const Vector& g_f, const Vector& g_r, double alpha, const std::string& mode, std::uint64_t seed) {
        UnlearnConfig cfg;
        cfg.alpha = alpha;
        cfg.mode = mode_of(mode);
        Rng rng(seed);
        CoordinatedStep s = coordinated_update(GradientVector(g_f), GradientVector(g_r), cfg, &rng);
        return py::make_tuple(Vector(s.delta.values()), s.projected);
      },
      py::arg("g_f"), py::arg("g_r"), py::arg("alpha") = 1e-3, py::arg("mode") = "coordinated",
      py::arg("seed") = 0);
  m.def(
      "kl_predictive", [](const Matrix& p, const Matrix& q) { return kl_predictive(p, q); }, py::arg("p_gold"),
      py::arg("p_other"));
  m.def(
      "roc_auc", [](const std::vector<double>& s, const std::vector<int>& y) { return roc_auc(s, y); },
      py::arg("scores"), py::arg("labels"));
  m.def(
      "checkpoint_info",
      [](const std::string& path) {
        const Checkpoint ck = load_checkpoint(path);
        py::dict d;
        d["label"] = ck.meta.label;
        d["config_hash"] = hex64(ck.meta.config_hash);
        d["seed"] = ck.meta.seed;
        d["parameter_count"] = ck.model.parameter_count();
        d["parameters"] = Vector(ck.model.flatten());
        return d;
      },
      py::arg("path"));
}
