#include <pybind11/functional.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "msinfluence/checkpoint_io.hpp"
#include "msinfluence/config.hpp"
#include "msinfluence/idx_io.hpp"
#include "msinfluence/influence.hpp"
#include "msinfluence/scenarios.hpp"
#include "msinfluence/solver.hpp"
#include "msinfluence/validation.hpp"

namespace py = pybind11;
using namespace msi;

namespace {

py::array_t<double> to_array(std::span<const double> v) {
  py::array_t<double> out(std::vector<py::ssize_t>{static_cast<py::ssize_t>(v.size())});
  std::copy(v.begin(), v.end(), out.mutable_data());
  return out;
}

std::vector<double> from_array(const py::array_t<double, py::array::c_style>& a) {
  return std::vector<double>(a.data(), a.data() + a.size());
}

ParamVector params_like(const TwoStageModel& model, const py::array_t<double>& flat) {
  ParamVector params = model.init_params();
  if (static_cast<std::size_t>(flat.size()) != params.size()) {
    throw py::value_error("parameter array has the wrong length");
  }
  auto data = params.data();
  auto view = flat.unchecked<1>();
  for (py::ssize_t i = 0; i < flat.size(); ++i) data[i] = view(i);
  return params;
}

const ad::LossFunction& loss_by_name(const TwoStageModel& model, const std::string& name) {
  if (name == "pretrain") return model.pretrain_loss();
  if (name == "finetune") return model.finetune_loss();
  if (name == "finetune_eval") return model.finetune_eval_loss();
  throw py::value_error("unknown loss '" + name + "' (pretrain | finetune | finetune_eval)");
}

Objective objective_of(const TwoStageModel& model, const std::string& loss,
                       const Dataset& data, const std::vector<std::string>& wrt) {
  const ad::LossFunction& fn = loss_by_name(model, loss);
  std::vector<std::string> use = wrt;
  if (use.empty()) use.assign(fn.reads().begin(), fn.reads().end());
  return Objective(fn, data, use);
}

}  // namespace

PYBIND11_MODULE(_msinfluence, m) {
  m.doc() = "Multi-stage influence functions: two-stage training, Hessian-vector products, "
            "conjugate-gradient IHVPs, and influence scores for pretraining data";
  m.attr("__version__") = kToolVersion;

  py::register_exception<ConfigError>(m, "ConfigError");
  py::register_exception<CheckpointError>(m, "CheckpointError");
  py::register_exception<ScenarioError>(m, "ScenarioError");
  py::register_exception<NumericError>(m, "NumericError");

  py::class_<Dataset>(m, "Dataset")
      .def_property_readonly("features",
                             [](const Dataset& d) {
                               py::array_t<double> out({static_cast<py::ssize_t>(d.size()),
                                                        static_cast<py::ssize_t>(d.dim())});
                               std::copy(d.features.data.begin(), d.features.data.end(),
                                         out.mutable_data());
                               return out;
                             })
      .def_property_readonly("labels", [](const Dataset& d) { return d.labels; })
      .def_property_readonly("targets", [](const Dataset& d) { return d.targets; })
      .def_property_readonly("class_set", [](const Dataset& d) { return d.class_set; })
      .def("__len__", &Dataset::size);

  m.def(
      "make_synthetic",
      [](int num_classes, int dim, int per_class, std::uint64_t seed, double noise_sigma,
         double label_noise) {
        SyntheticSpec spec;
        spec.num_classes = num_classes;
        spec.dim = dim;
        spec.per_class = per_class;
        spec.class_means_seed = seed;
        spec.noise_sigma = noise_sigma;
        spec.label_noise = label_noise;
        return make_synthetic(spec);
      },
      py::arg("num_classes"), py::arg("dim"), py::arg("per_class"), py::arg("seed") = 1,
      py::arg("noise_sigma") = 1.0, py::arg("label_noise") = 0.0,
      "Gaussian-cluster dataset, one mean per class, reproducible from the seed");

  m.def("filter_classes",
        [](const Dataset& source, const std::vector<int>& class_set, int limit) {
          return filter_classes(source, class_set, source.role, limit);
        },
        py::arg("source"), py::arg("class_set"), py::arg("limit") = 0);

  m.def(
      "load_idx",
      [](const std::string& images, const std::string& labels, const std::set<int>& filter,
         int limit) { return load_idx(images, labels, filter, limit); },
      py::arg("images_path"), py::arg("labels_path"), py::arg("class_filter"),
      py::arg("limit") = 0);

  py::class_<ModelArch>(m, "ModelArch")
      .def(py::init<>())
      .def_readwrite("input_dim", &ModelArch::input_dim)
      .def_readwrite("embed_dims", &ModelArch::embed_dims)
      .def_readwrite("num_pretrain_classes", &ModelArch::num_pretrain_classes)
      .def_readwrite("num_finetune_classes", &ModelArch::num_finetune_classes)
      .def_readwrite("embed_output_activation", &ModelArch::embed_output_activation)
      .def_readwrite("identity_pretrain_head", &ModelArch::identity_pretrain_head)
      .def_readwrite("l2_pretrain", &ModelArch::l2_pretrain)
      .def_readwrite("l2_finetune", &ModelArch::l2_finetune)
      .def_readwrite("init_seed", &ModelArch::init_seed);

  py::class_<TwoStageModel>(m, "TwoStageModel")
      .def(py::init<ModelArch>())
      .def_property_readonly("num_params",
                             [](const TwoStageModel& model) { return model.init_params().size(); })
      .def("init_params",
           [](const TwoStageModel& model) { return to_array(model.init_params().data()); })
      .def("segments",
           [](const TwoStageModel& model) {
             py::dict out;
             const ParamVector params = model.init_params();
             for (const Segment& s : params.segments()) {
               out[py::str(s.name)] = py::make_tuple(s.offset, s.length);
             }
             return out;
           })
      .def(
          "value",
          [](const TwoStageModel& model, const std::string& loss, const py::array_t<double>& params,
             const Dataset& data) {
            Objective obj = objective_of(model, loss, data, {});
            return obj.value(params_like(model, params));
          },
          py::arg("loss"), py::arg("params"), py::arg("data"))
      .def(
          "grad",
          [](const TwoStageModel& model, const std::string& loss, const py::array_t<double>& params,
             const Dataset& data, const std::vector<std::string>& wrt) {
            Objective obj = objective_of(model, loss, data, wrt);
            return to_array(obj.grad(params_like(model, params)));
          },
          py::arg("loss"), py::arg("params"), py::arg("data"),
          py::arg("wrt") = std::vector<std::string>{})
      .def(
          "hvp",
          [](const TwoStageModel& model, const std::string& loss, const py::array_t<double>& params,
             const Dataset& data, const py::array_t<double>& v,
             const std::vector<std::string>& wrt) {
            Objective obj = objective_of(model, loss, data, wrt);
            return to_array(obj.hvp(params_like(model, params), from_array(v)));
          },
          py::arg("loss"), py::arg("params"), py::arg("data"), py::arg("v"),
          py::arg("wrt") = std::vector<std::string>{})
      .def(
          "cross_hvp",
          [](const TwoStageModel& model, const std::string& loss, const py::array_t<double>& params,
             const Dataset& data, const std::string& row_seg, const std::string& col_seg,
             const py::array_t<double>& v) {
            Objective obj = objective_of(model, loss, data, {});
            return to_array(obj.cross_hvp(params_like(model, params), row_seg, col_seg,
                                          from_array(v)));
          },
          py::arg("loss"), py::arg("params"), py::arg("data"), py::arg("row_seg"),
          py::arg("col_seg"), py::arg("v"))
      .def(
          "dense_hessian",
          [](const TwoStageModel& model, const std::string& loss, const py::array_t<double>& params,
             const Dataset& data, const std::vector<std::string>& wrt, std::size_t cap) {
            Objective obj = objective_of(model, loss, data, wrt);
            Tensor h = dense_hessian(obj, params_like(model, params), cap);
            py::array_t<double> out({static_cast<py::ssize_t>(h.rows()),
                                     static_cast<py::ssize_t>(h.cols())});
            std::copy(h.data.begin(), h.data.end(), out.mutable_data());
            return out;
          },
          py::arg("loss"), py::arg("params"), py::arg("data"),
          py::arg("wrt") = std::vector<std::string>{}, py::arg("cap") = 512)
      .def("test_loss_sum",
           [](const TwoStageModel& model, const py::array_t<double>& params, const Dataset& data) {
             return model.finetune_loss_sum(params_like(model, params), data);
           })
      .def("accuracy",
           [](const TwoStageModel& model, const py::array_t<double>& params, const Dataset& data) {
             return model.finetune_accuracy(params_like(model, params), data);
           });

  py::class_<TrainConfig>(m, "TrainConfig")
      .def(py::init<>())
      .def_readwrite("lr", &TrainConfig::lr)
      .def_readwrite("batch_size", &TrainConfig::batch_size)
      .def_readwrite("max_steps", &TrainConfig::max_steps)
      .def_readwrite("grad_tol", &TrainConfig::grad_tol)
      .def_readwrite("check_every", &TrainConfig::check_every)
      .def_readwrite("seed", &TrainConfig::seed)
      .def_readwrite("proximal_alpha", &TrainConfig::proximal_alpha)
      .def_property(
          "optimizer",
          [](const TrainConfig& c) {
            return c.optimizer == OptimizerKind::Adam  ? "adam"
                   : c.optimizer == OptimizerKind::Sgd ? "sgd"
                                                       : "newton";
          },
          [](TrainConfig& c, const std::string& name) {
            c.optimizer = name == "adam"  ? OptimizerKind::Adam
                          : name == "sgd" ? OptimizerKind::Sgd
                                          : OptimizerKind::Newton;
          });

  py::enum_<FinetuneMode>(m, "FinetuneMode")
      .value("fixed_W", FinetuneMode::FixedW)
      .value("update_W", FinetuneMode::UpdateW);

  py::class_<Checkpoint>(m, "Checkpoint")
      .def_property_readonly("params", [](const Checkpoint& c) { return to_array(c.params.data()); })
      .def_readonly("objective_value", &Checkpoint::objective_value)
      .def_readonly("grad_norm", &Checkpoint::grad_norm)
      .def_readonly("converged", &Checkpoint::converged)
      .def_readonly("steps", &Checkpoint::steps)
      .def_readonly("config_hash", &Checkpoint::config_hash)
      .def_readonly("proximal_alpha", &Checkpoint::proximal_alpha);

  m.def(
      "train_pretrain",
      [](const TwoStageModel& model, const Dataset& Z, const TrainConfig& cfg,
         const std::vector<double>& weights) {
        return train_pretrain(model, Z, cfg, weights);
      },
      py::arg("model"), py::arg("Z"), py::arg("cfg"),
      py::arg("weights") = std::vector<double>{});

  m.def(
      "train_finetune",
      [](const TwoStageModel& model, const Dataset& X, const Checkpoint& start, FinetuneMode mode,
         const TrainConfig& cfg) { return train_finetune(model, X, start, mode, cfg); },
      py::arg("model"), py::arg("X"), py::arg("start"), py::arg("mode"), py::arg("cfg"));

  m.def("save_checkpoint", &save_checkpoint, py::arg("checkpoint"), py::arg("path"));
  m.def("load_checkpoint", &load_checkpoint, py::arg("path"));

  py::class_<SolverConfig>(m, "SolverConfig")
      .def(py::init<>())
      .def_readwrite("damping_lambda", &SolverConfig::damping_lambda)
      .def_readwrite("cg_tol", &SolverConfig::cg_tol)
      .def_readwrite("cg_max_iters", &SolverConfig::cg_max_iters)
      .def_readwrite("hessian_subsample", &SolverConfig::hessian_subsample)
      .def_readwrite("subsample_seed", &SolverConfig::subsample_seed);

  py::class_<SolveReport>(m, "SolveReport")
      .def_readonly("iterations", &SolveReport::iterations)
      .def_readonly("residual", &SolveReport::residual)
      .def_readonly("converged", &SolveReport::converged);

  m.def(
      "solve_ihvp",
      [](const std::function<py::array_t<double>(py::array_t<double>)>& hvp,
         const py::array_t<double>& b, const SolverConfig& cfg) {
        HvpOracle oracle = [&hvp](std::span<const double> v) {
          py::array_t<double> arg(std::vector<py::ssize_t>{static_cast<py::ssize_t>(v.size())});
          std::copy(v.begin(), v.end(), arg.mutable_data());
          py::array_t<double> out = hvp(arg);
          return std::vector<double>(out.data(), out.data() + out.size());
        };
        auto [x, report] = solve_ihvp(oracle, from_array(b), cfg);
        return py::make_tuple(to_array(x), report);
      },
      py::arg("hvp"), py::arg("b"), py::arg("cfg"),
      "Conjugate gradient on the damped squared-Hessian system (H^2 + lambda I) x = H b");

  py::class_<InfluenceConfig>(m, "InfluenceConfig")
      .def(py::init<>())
      .def_readwrite("pretrain_solver", &InfluenceConfig::pretrain_solver)
      .def_readwrite("finetune_solver", &InfluenceConfig::finetune_solver)
      .def_readwrite("alpha", &InfluenceConfig::alpha)
      .def_readwrite("identity_hessian", &InfluenceConfig::identity_hessian);

  py::class_<InfluenceRecord>(m, "InfluenceRecord")
      .def_readonly("z_id", &InfluenceRecord::z_id)
      .def_readonly("x_id", &InfluenceRecord::x_id)
      .def_readonly("score", &InfluenceRecord::score)
      .def_readonly("finetune_report", &InfluenceRecord::finetune_report)
      .def_readonly("pretrain_report", &InfluenceRecord::pretrain_report);

  py::class_<InfluenceEngine>(m, "InfluenceEngine")
      .def(py::init<const TwoStageModel&, const Dataset&, const Dataset&, const Checkpoint&,
                    const Checkpoint&, InfluenceConfig>(),
           py::arg("model"), py::arg("Z"), py::arg("X"), py::arg("pretrain_checkpoint"),
           py::arg("finetune_checkpoint"), py::arg("config"), py::keep_alive<1, 2>(),
           py::keep_alive<1, 3>(), py::keep_alive<1, 4>(), py::keep_alive<1, 5>(),
           py::keep_alive<1, 6>())
      .def(
          "influence_z_w",
          [](const InfluenceEngine& engine, long z_id) {
            auto [v, report] = engine.influence_z_w(z_id);
            return py::make_tuple(to_array(v), report);
          },
          py::arg("z_id"))
      .def(
          "influence_fixed",
          [](InfluenceEngine& engine, const std::vector<long>& z_ids, const Dataset& test,
             const std::vector<long>& x_ids, int jobs) {
            return engine.influence_fixed(z_ids, test, x_ids, jobs);
          },
          py::arg("z_ids"), py::arg("test"), py::arg("x_ids"), py::arg("jobs") = 1)
      .def(
          "influence_updated",
          [](InfluenceEngine& engine, const std::vector<long>& z_ids, const Dataset& test,
             const std::vector<long>& x_ids, int jobs) {
            return engine.influence_updated(z_ids, test, x_ids, jobs);
          },
          py::arg("z_ids"), py::arg("test"), py::arg("x_ids"), py::arg("jobs") = 1)
      .def(
          "group_influence",
          [](InfluenceEngine& engine, const std::vector<long>& z_ids, const Dataset& test,
             const std::vector<long>& x_ids, FinetuneMode mode) {
            return engine.group_influence(z_ids, test, x_ids, mode);
          },
          py::arg("z_ids"), py::arg("test"), py::arg("x_ids"), py::arg("mode"))
      .def_property_readonly("warnings", &InfluenceEngine::warnings);

  m.def("pearson_r", [](const std::vector<double>& xs, const std::vector<double>& ys) {
    return pearson_r(xs, ys);
  });

  // Configuration-driven pipelines and the validation studies.
  py::class_<Pipeline>(m, "Pipeline")
      .def_property_readonly("model", [](const Pipeline& p) { return p.model.get(); },
                             py::return_value_policy::reference_internal)
      .def_readonly("Z", &Pipeline::Z)
      .def_readonly("X", &Pipeline::X)
      .def_readonly("test", &Pipeline::test);

  py::class_<RunConfig>(m, "RunConfig");
  m.def("parse_config", &parse_config, py::arg("text"));
  m.def("config_hash", &config_hash, py::arg("config"));
  m.def("serialize_config", &serialize_config, py::arg("config"));
  m.def("build_pipeline", &build_pipeline, py::arg("config"));
  m.def("run_scenario", [](const RunConfig& cfg) {
    ScenarioOutcome out = run_scenario(cfg);
    py::dict d;
    d["name"] = out.name;
    d["config_hash"] = out.config_hash;
    d["metrics"] = out.metrics;
    return d;
  });
}
