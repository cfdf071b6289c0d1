// Python bindings for the core operations: tokenizer/model forward passes,
// return-to-go handling, FLOP counting and the Rademacher trace-bound suite.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "utr/analysis.hpp"
#include "utr/data.hpp"
#include "utr/train.hpp"

namespace py = pybind11;

namespace {

using utr::Array;

Array array_from_numpy(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
  Array out;
  out.shape.assign(a.shape(), a.shape() + a.ndim());
  out.data.assign(a.data(), a.data() + a.size());
  return out;
}

py::array_t<double> numpy_from_tensor(const utr::Tensor& t) {
  py::array_t<double> out(t.shape());
  std::copy_n(t.data(), t.numel(), out.mutable_data());
  return out;
}

utr::ModelConfig config_from_kwargs(const std::string& kind, int64_t context_len,
                                    int64_t embed_dim, int64_t depth, int64_t n_heads,
                                    int64_t kernel_size, int64_t expand_dim, int64_t return_dim,
                                    int64_t state_dim, int64_t action_dim, bool discrete,
                                    int64_t t_max) {
  utr::ModelConfig cfg;
  cfg.kind = utr::model_kind_from_name(kind);
  cfg.context_len = context_len;
  cfg.embed_dim = embed_dim;
  cfg.depth = depth;
  cfg.n_heads = n_heads;
  cfg.kernel_size = kernel_size;
  cfg.expand_dim = expand_dim;
  cfg.return_dim = return_dim;
  cfg.state_dim = state_dim;
  cfg.action_dim = action_dim;
  cfg.action_space = utr::ActionSpace{discrete, action_dim};
  cfg.t_max = t_max;
  cfg.validate();
  return cfg;
}

}  // namespace

PYBIND11_MODULE(_utr, m) {
  m.doc() = "unified-token decision models: core operations";

  m.def("compute_rtg", &utr::compute_rtg, py::arg("rewards"),
        "Reverse cumulative sum of rewards (undiscounted return-to-go).");

  m.def(
      "shift_actions",
      [](const py::array_t<double, py::array::c_style | py::array::forcecast>& actions) {
        if (actions.ndim() != 2) throw std::invalid_argument("actions must be [L, d_a]");
        utr::Tape tape;
        utr::NoGradGuard guard(tape);
        const Array arr = array_from_numpy(actions);
        utr::Tensor t = utr::Tensor::leaf(arr.shape, arr.data);
        return numpy_from_tensor(utr::shift_actions(tape, t));
      },
      py::arg("actions"), "Shift the action sequence one step forward; row 0 becomes zero.");

  m.def("trace_bound_merged",
        [](double trace, double rho, double s) {
          return utr::trace_bound_merged(utr::CovSpec::from_rho_s(trace, rho, s));
        },
        py::arg("trace"), py::arg("rho"), py::arg("s"));
  m.def("trace_bound_separated",
        [](double trace, double rho, double s) {
          return utr::trace_bound_separated(utr::CovSpec::from_rho_s(trace, rho, s));
        },
        py::arg("trace"), py::arg("rho"), py::arg("s"));
  m.def("rademacher_ratio_bound",
        [](double rho, double s) {
          return utr::rademacher_ratio_bound(utr::CovSpec::from_rho_s(1.0, rho, s));
        },
        py::arg("rho"), py::arg("s"));
  m.def("generalization_bound", &utr::generalization_bound, py::arg("emp_risk"),
        py::arg("rademacher"), py::arg("n"), py::arg("delta"));

  m.def(
      "empirical_rademacher_linear",
      [](const py::array_t<double, py::array::c_style | py::array::forcecast>& data,
         double norm_budget, int64_t draws, uint64_t seed) {
        if (data.ndim() != 2) throw std::invalid_argument("data must be [n, d]");
        utr::Rng rng(seed);
        const utr::RademacherEstimate est =
            utr::empirical_rademacher_linear(array_from_numpy(data),
                                             utr::RademacherQuery{norm_budget, draws}, rng);
        return py::make_tuple(est.value, est.stderr_value);
      },
      py::arg("data"), py::arg("norm_budget") = 1.0, py::arg("draws") = 100, py::arg("seed") = 0,
      "Monte-Carlo empirical Rademacher complexity of a norm-bounded linear class; "
      "returns (estimate, stderr).");

  m.def(
      "count_flops",
      [](const std::string& kind, int64_t context_len, int64_t embed_dim, int64_t depth,
         int64_t n_heads, int64_t kernel_size, int64_t expand_dim, int64_t return_dim,
         int64_t state_dim, int64_t action_dim, bool discrete, int64_t t_max) {
        const utr::FlopsBreakdown f = utr::count_flops(
            config_from_kwargs(kind, context_len, embed_dim, depth, n_heads, kernel_size,
                               expand_dim, return_dim, state_dim, action_dim, discrete, t_max));
        py::dict out;
        out["tokenizer"] = f.tokenizer;
        out["attn_proj"] = f.attn_proj;
        out["attn_scores"] = f.attn_scores;
        out["softmax_scale"] = f.softmax_scale;
        out["ffn"] = f.ffn;
        out["conv_mix"] = f.conv_mix;
        out["norms_residual"] = f.norms_residual;
        out["head"] = f.head;
        out["total"] = f.total();
        return out;
      },
      py::arg("kind"), py::arg("context_len") = 16, py::arg("embed_dim") = 64,
      py::arg("depth") = 3, py::arg("n_heads") = 4, py::arg("kernel_size") = 4,
      py::arg("expand_dim") = 0, py::arg("return_dim") = 32, py::arg("state_dim") = 8,
      py::arg("action_dim") = 2, py::arg("discrete") = false, py::arg("t_max") = 64,
      "Analytic forward FLOPs per sequence, split by component.");

  py::class_<utr::PolicyModel>(m, "Policy")
      .def(py::init([](const std::string& kind, int64_t context_len, int64_t embed_dim,
                       int64_t depth, int64_t n_heads, int64_t kernel_size, int64_t expand_dim,
                       int64_t return_dim, int64_t state_dim, int64_t action_dim, bool discrete,
                       int64_t t_max, uint64_t seed) {
             return utr::PolicyModel(
                 config_from_kwargs(kind, context_len, embed_dim, depth, n_heads, kernel_size,
                                    expand_dim, return_dim, state_dim, action_dim, discrete,
                                    t_max),
                 seed);
           }),
           py::arg("kind"), py::arg("context_len") = 16, py::arg("embed_dim") = 64,
           py::arg("depth") = 3, py::arg("n_heads") = 4, py::arg("kernel_size") = 4,
           py::arg("expand_dim") = 0, py::arg("return_dim") = 32, py::arg("state_dim") = 8,
           py::arg("action_dim") = 2, py::arg("discrete") = false, py::arg("t_max") = 64,
           py::arg("seed") = 0)
      .def_static("load", &utr::PolicyModel::load_file, py::arg("path"))
      .def("save", [](const utr::PolicyModel& model,
                      const std::string& path) { model.save(path); },
           py::arg("path"))
      .def("count_params", &utr::PolicyModel::count_params)
      .def("kind",
           [](const utr::PolicyModel& model) { return utr::model_kind_name(model.config().kind); })
      .def(
          "forward",
          [](const utr::PolicyModel& model,
             const py::array_t<double, py::array::c_style | py::array::forcecast>& rtg,
             const py::array_t<double, py::array::c_style | py::array::forcecast>& states,
             const py::array_t<double, py::array::c_style | py::array::forcecast>& actions,
             const std::vector<int64_t>& timesteps) {
            utr::Tape tape;
            utr::NoGradGuard guard(tape);
            return numpy_from_tensor(model.forward(tape, array_from_numpy(rtg),
                                                   array_from_numpy(states),
                                                   array_from_numpy(actions), timesteps));
          },
          py::arg("rtg"), py::arg("states"), py::arg("actions"), py::arg("timesteps"),
          "One window: rtg [L,1], states [L,d_s], actions [L,d_a] -> predictions [L, out].");
}
