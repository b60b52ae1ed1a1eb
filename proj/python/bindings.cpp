#include "icl/cli.hpp"
#include "icl/dual.hpp"
#include "icl/generalization.hpp"
#include "icl/harness.hpp"

#include <pybind11/eigen.h>
#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

namespace py = pybind11;
using namespace icl;

PYBIND11_MODULE(_icldual, m) {
  m.doc() = "Attention / dual-model numerical laboratory";

  auto error = py::register_exception<Error>(m, "Error");
  auto validation = py::register_exception<ValidationError>(m, "ValidationError", error.ptr());
  py::register_exception<UnsupportedVariantError>(m, "UnsupportedVariantError", validation.ptr());
  auto numerical = py::register_exception<NumericalError>(m, "NumericalError", error.ptr());
  py::register_exception<RangeError>(m, "RangeError", numerical.ptr());
  py::register_exception<SingularSystemError>(m, "SingularSystemError", numerical.ptr());
  py::register_exception<DegenerateError>(m, "DegenerateError", numerical.ptr());
  py::register_exception<DivergenceError>(m, "DivergenceError", numerical.ptr());

  py::class_<FeatureMap>(m, "FeatureMap")
      .def_static(
          "positive_random",
          [](Index input_dim, Index feature_dim, std::uint64_t seed) {
            SeededRng rng(seed);
            return FeatureMap::positive_random(input_dim, feature_dim, rng);
          },
          py::arg("input_dim"), py::arg("feature_dim"), py::arg("seed") = 0)
      .def_static("from_omega", [](const Matrix& omega) { return FeatureMap::positive_random(omega); })
      .def_static("elu_plus_one", &FeatureMap::elu_plus_one, py::arg("input_dim"))
      .def_property_readonly("kind", [](const FeatureMap& f) { return to_string(f.kind()); })
      .def_property_readonly("input_dim", &FeatureMap::input_dim)
      .def_property_readonly("feature_dim", &FeatureMap::feature_dim)
      .def_property_readonly("omega", &FeatureMap::omega)
      .def("apply", py::overload_cast<const Matrix&>(&FeatureMap::apply, py::const_),
           py::arg("columns"))
      .def("kernel", &FeatureMap::kernel, py::arg("x"), py::arg("y"));

  py::class_<AttentionWeights>(m, "AttentionWeights")
      .def(py::init([](Matrix q, Matrix k, Matrix v) {
             AttentionWeights w{std::move(q), std::move(k), std::move(v)};
             w.validate();
             return w;
           }),
           py::arg("query"), py::arg("key"), py::arg("value"))
      .def_static(
          "random",
          [](Index d_o, Index d_i, std::uint64_t seed) {
            SeededRng rng(seed);
            return AttentionWeights::random(d_o, d_i, rng);
          },
          py::arg("d_o"), py::arg("d_i"), py::arg("seed") = 0)
      .def_readwrite("query", &AttentionWeights::query)
      .def_readwrite("key", &AttentionWeights::key)
      .def_readwrite("value", &AttentionWeights::value);

  m.def("softmax_kernel_exact", &softmax_kernel_exact, py::arg("x"), py::arg("y"));
  m.def("assemble_context", &assemble_context, py::arg("demos"), py::arg("prior_queries"),
        py::arg("query"), py::arg("include_query_self") = true);
  m.def("attention_matrix", &attention_matrix, py::arg("tokens"), py::arg("weights"),
        py::arg("temperature_scaled") = true);
  m.def("exact_attention_query", &exact_attention_query, py::arg("context"), py::arg("query"),
        py::arg("weights"), py::arg("temperature_scaled") = true);
  m.def("kernel_attention_query", &kernel_attention_query, py::arg("context"), py::arg("query"),
        py::arg("weights"), py::arg("features"));
  m.def("ridge_attention", &ridge_attention, py::arg("tokens"), py::arg("weights"),
        py::arg("features"), py::arg("alpha"));
  m.def("regularized_attention", &regularized_attention, py::arg("demos"),
        py::arg("prior_queries"), py::arg("query"), py::arg("weights"), py::arg("alpha"),
        py::arg("include_query_self") = true);
  m.def("negative_attention", &negative_attention, py::arg("demos"), py::arg("prior_queries"),
        py::arg("query"), py::arg("weights"), py::arg("beta"), py::arg("k"),
        py::arg("include_query_self") = true);

  py::class_<EquivalenceReport>(m, "EquivalenceReport")
      .def_readonly("step_errors", &EquivalenceReport::step_errors)
      .def_readonly("reference_norm", &EquivalenceReport::reference_norm)
      .def_readonly("steps", &EquivalenceReport::steps)
      .def_property_readonly("final_error", &EquivalenceReport::final_error)
      .def_property_readonly("final_relative_error", &EquivalenceReport::final_relative_error);

  m.def(
      "verify_equivalence",
      [](const Matrix& demos, const Matrix& prior, const Vector& query, const AttentionWeights& w,
         const FeatureMap& fm, bool self, double eta, const std::string& schedule) {
        UpdateSchedule s = UpdateSchedule::Incremental;
        if (schedule == "full_batch")
          s = UpdateSchedule::FullBatch;
        else if (schedule == "reversed")
          s = UpdateSchedule::Reversed;
        else if (schedule != "incremental")
          throw ValidationError("schedule must be incremental, reversed or full_batch");
        return verify_equivalence(demos, prior, query, w, fm, self, eta, s);
      },
      py::arg("demos"), py::arg("prior_queries"), py::arg("query"), py::arg("weights"),
      py::arg("features"), py::arg("include_query_self") = true, py::arg("learning_rate") = 1.0,
      py::arg("schedule") = "incremental");

  m.def("gram_trace",
        [](const Matrix& demos, const Matrix& wk, const FeatureMap& fm) {
          return gram_trace(demos, wk, fm).trace;
        },
        py::arg("demos"), py::arg("key_weights"), py::arg("features"));
  m.def(
      "bound_surrogate",
      [](double trace, double w, double rho, Index d_o, Index n, double delta,
         std::optional<double> r) {
        BoundInputs b{w, rho, d_o, n, delta, r};
        return bound_surrogate(b, trace);
      },
      py::arg("trace"), py::arg("w") = 1.0, py::arg("rho") = 1.0, py::arg("d_o") = 1,
      py::arg("n") = 1, py::arg("delta") = 0.05, py::arg("r") = py::none());

  m.def(
      "rank_bound_experiment",
      [](Index d, const std::vector<Index>& dh, Index batches, Index reps, std::uint64_t seed,
         bool force_active) {
        std::vector<std::pair<Index, double>> out;
        for (const RankBoundRow& r : rank_bound_experiment(d, dh, batches, reps, seed, force_active))
          out.emplace_back(r.hidden_dim, r.mean_bound);
        return out;
      },
      py::arg("d"), py::arg("hidden_dims"), py::arg("batches") = 128, py::arg("reps") = 3,
      py::arg("seed") = 0, py::arg("force_active") = false);

  m.def(
      "train",
      [](const std::string& task, Index dt, Index ds, Index tokens, Index steps, Index epochs,
         double lr, Index dr, std::uint64_t seed) {
        TrainConfig cfg;
        cfg.tokens_per_step = tokens;
        cfg.steps_per_epoch = steps;
        cfg.epochs = epochs;
        cfg.learning_rate = lr;
        cfg.feature_dim = dr;
        cfg.seed = seed;
        py::gil_scoped_release release;
        return train_attention_model(make_task(parse_task_kind(task), dt, ds, seed), cfg)
            .epoch_losses;
      },
      py::arg("task") = "linear", py::arg("dt") = 11, py::arg("ds") = 1, py::arg("tokens") = 16,
      py::arg("steps") = 1024, py::arg("epochs") = 50, py::arg("lr") = 0.003,
      py::arg("dr") = 1200, py::arg("seed") = 0);

  m.def(
      "run_command",
      [](const std::vector<std::string>& args) {
        std::ostringstream out, err;
        int code;
        {
          py::gil_scoped_release release;
          code = run_command(args, out, err);
        }
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"), "Runs a CLI command; returns (exit_code, stdout, stderr).");

  m.attr("__version__") = ICLDUAL_VERSION;
}
