#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "crit/apjn.hpp"
#include "crit/blocks.hpp"
#include "crit/cifar.hpp"
#include "crit/commands.hpp"
#include "crit/config.hpp"
#include "crit/error.hpp"
#include "crit/losses.hpp"
#include "crit/meanfield.hpp"
#include "crit/tuner.hpp"
#include "crit/verify.hpp"

namespace py = pybind11;
using namespace crit;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const Array& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor(std::move(shape), std::vector<double>(a.data(), a.data() + a.size()));
}

Array to_array(const Tensor& t) {
  Array out(std::vector<py::ssize_t>(t.shape().begin(), t.shape().end()));
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

Tensor batch_or_gaussian(const NetworkSpec& spec, const std::optional<Array>& x, std::size_t batch,
                         std::uint64_t seed) {
  if (x) return to_tensor(*x);
  RngStream r(seed, 2);
  return gaussian_batch(spec, batch, r);
}

py::dict trace_dict(const TuneTrace& trace) {
  py::list j, loss, aw, ab, eta;
  for (const auto& s : trace.steps) {
    j.append(s.j);
    loss.append(s.loss);
    aw.append(s.a_w);
    ab.append(s.a_b);
    eta.append(s.eta);
  }
  py::dict d;
  d["J"] = j;
  d["loss"] = loss;
  d["a_W"] = aw;
  d["a_b"] = ab;
  d["eta"] = eta;
  return d;
}

}  // namespace

PYBIND11_MODULE(_crittuner, m) {
  m.doc() = "APJN measurement and auxiliary-scalar tuning";

  const auto base = py::register_exception<Error>(m, "CritError");
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<DivergenceError>(m, "DivergenceError", base.ptr());

  py::enum_<ActivationKind>(m, "Activation")
      .value("relu", ActivationKind::relu)
      .value("gelu", ActivationKind::gelu)
      .value("tanh", ActivationKind::tanh)
      .value("linear", ActivationKind::linear);
  py::enum_<LossKind>(m, "Loss").value("jll", LossKind::jll).value("jsl", LossKind::jsl).value("jkl", LossKind::jkl);

  py::class_<NetworkSpec>(m, "NetworkSpec")
      .def_property_readonly("groups", &NetworkSpec::groups)
      .def_property_readonly("layers", &NetworkSpec::size)
      .def_property_readonly("input_shape", &NetworkSpec::input_shape)
      .def("width", &NetworkSpec::width)
      .def("to_text", [](const NetworkSpec& s) { return serialize_network(s); })
      .def("__eq__", [](const NetworkSpec& a, const NetworkSpec& b) { return a == b; });

  m.def("mlp", &mlp, py::arg("depth"), py::arg("width"), py::arg("sigma_w"), py::arg("sigma_b") = 0.0,
        py::arg("act") = ActivationKind::relu, py::arg("input_width") = 0);
  m.def("prebn_resmlp", &prebn_resmlp, py::arg("depth"), py::arg("width"), py::arg("sigma_w"),
        py::arg("sigma_b") = 0.0, py::arg("mu") = 1.0, py::arg("act") = ActivationKind::relu,
        py::arg("bn_eps") = 1e-5);
  m.def(
      "resmlp_toy",
      [](std::size_t depth, std::size_t dim, double sigma_w, double mu, double eps_ls, ActivationKind act) {
        ResMlpOptions o;
        o.depth = depth;
        o.dim = dim;
        o.sigma_w = sigma_w;
        o.mu = mu;
        o.eps_ls = eps_ls;
        o.act = act;
        return resmlp_toy(o);
      },
      py::arg("depth") = 2, py::arg("dim") = 64, py::arg("sigma_w") = 1.0, py::arg("mu") = 1.0,
      py::arg("eps_ls") = 0.1, py::arg("act") = ActivationKind::gelu);
  m.def("network_from_text", [](const std::string& text) { return parse_config_string(text).network.build(); });

  m.def(
      "apjn_profile",
      [](const NetworkSpec& spec, std::size_t k, std::optional<Array> x, std::size_t batch, bool estimated,
         std::size_t n_v, std::size_t samples, std::uint64_t seed) {
        const Tensor t = batch_or_gaussian(spec, x, batch, seed);
        ApjnOptions opt;
        opt.method = estimated ? ApjnMethod::estimated : ApjnMethod::exact;
        opt.n_v = n_v;
        const Measurement r = measure_network(spec, t, profile_pairs(spec.groups(), k), opt, samples,
                                              RngStream(seed, 1));
        py::dict d;
        d["J"] = r.report.values();
        std::vector<double> se;
        for (const auto& p : r.report.pairs) se.push_back(p.stderr_);
        d["stderr"] = se;
        d["kernels"] = r.kernels;
        return d;
      },
      py::arg("spec"), py::arg("k") = 1, py::arg("x") = py::none(), py::arg("batch") = 16,
      py::arg("estimated") = false, py::arg("n_v") = 10, py::arg("samples") = 1, py::arg("seed") = 0);

  m.def(
      "forward",
      [](const NetworkSpec& spec, const Array& x, std::uint64_t seed) {
        const ParamSet p = init_params(spec, RngStream(seed, 1));
        return to_array(forward_output(spec, p, AuxScalars::ones(spec.size()), to_tensor(x)));
      },
      py::arg("spec"), py::arg("x"), py::arg("seed") = 0);

  m.def(
      "tune",
      [](const NetworkSpec& spec, const std::string& loss, double eta, std::size_t steps, double lambda_,
         const std::string& schedule, const std::string& grad_mode, std::size_t batch, std::optional<Array> x,
         std::uint64_t seed) {
        TuneConfig cfg;
        cfg.loss = parse_loss(loss);
        cfg.eta = eta;
        cfg.steps = steps;
        cfg.lambda = lambda_;
        cfg.schedule = parse_schedule(schedule);
        cfg.grad_mode = parse_grad_mode(grad_mode);
        const ParamSet p = init_params(spec, RngStream(seed, 1));
        const Tensor t = batch_or_gaussian(spec, x, batch, seed);
        const TuneResult r = tune(spec, p, t, cfg, RngStream(seed, 3));
        py::dict d = trace_dict(r.trace);
        d["converged"] = r.converged;
        d["spec"] = r.spec;
        return d;
      },
      py::arg("spec"), py::arg("loss") = "jll", py::arg("eta") = 0.01, py::arg("steps") = 100,
      py::arg("lambda_") = 0.0, py::arg("schedule") = "constant", py::arg("grad_mode") = "finite-difference",
      py::arg("batch") = 16, py::arg("x") = py::none(), py::arg("seed") = 0);

  m.def("jll", [](const std::vector<double>& j) { return jll(j).total; });
  m.def("jsl", [](const std::vector<double>& j) { return jsl(j).total; });
  m.def(
      "jkl",
      [](const std::vector<double>& j, const std::vector<double>& k, double lambda_, bool interior_only) {
        return jkl(j, k, lambda_, interior_only ? PairRange::interior_only : PairRange::include_io).total;
      },
      py::arg("j"), py::arg("k"), py::arg("lambda_"), py::arg("interior_only") = false);

  m.def("eta_bound", [](const std::vector<double>& j, double sigma_w, LossKind l) { return eta_bound(j, sigma_w, l); });
  m.def("eta_one_step", &eta_one_step);
  m.def("eta_zero", &eta_zero, py::arg("a_w"), py::arg("sigma_w"), py::arg("loss"));
  m.def(
      "relu_dynamics",
      [](const std::vector<double>& j0, double sigma_w, double eta, std::size_t steps, LossKind loss) {
        return relu_dynamics(j0, sigma_w, std::span<const double>(&eta, 1), steps, loss).j;
      },
      py::arg("j0"), py::arg("sigma_w"), py::arg("eta"), py::arg("steps"), py::arg("loss") = LossKind::jll);
  m.def(
      "relu_kernel_map",
      [](double K, double sigma_w, double sigma_b, std::size_t steps) {
        MeanFieldState s;
        s.K_diag = K;
        s.sigma_w = sigma_w;
        s.sigma_b = sigma_b;
        std::vector<double> out{K};
        for (std::size_t i = 0; i < steps; ++i) {
          s = nngp_step(s, ActivationKind::relu);
          out.push_back(s.K_diag);
        }
        return out;
      },
      py::arg("K"), py::arg("sigma_w"), py::arg("sigma_b"), py::arg("steps"));
  m.def(
      "bn_apjn_limit",
      [](double mu, double sigma_w, double sigma_b, std::size_t depth) {
        MeanFieldState s;
        s.sigma_w = sigma_w;
        s.sigma_b = sigma_b;
        s.mu = mu;
        return bn_apjn_limit(mu, ActivationKind::relu, bn_kernel_after(s, ActivationKind::relu, depth));
      },
      py::arg("mu"), py::arg("sigma_w"), py::arg("sigma_b"), py::arg("depth"));
  m.def("resmlp_apjn", &resmlp_apjn, py::arg("K"), py::arg("sigma_w"), py::arg("sigma_b"), py::arg("mu"),
        py::arg("eps_ls"), py::arg("act") = ActivationKind::gelu);

  m.def(
      "load_cifar10",
      [](const std::string& path, std::size_t n, bool normalize) {
        return to_array(load_cifar10(resolve_data_path(path), n, normalize));
      },
      py::arg("path"), py::arg("n"), py::arg("normalize") = true);

  m.def("run_command", [](const std::string& command, const std::string& config, std::optional<std::uint64_t> seed,
                          const std::string& out, const std::string& format, std::size_t workers) {
    CommandOptions o;
    o.out = out;
    o.format = parse_output_format(format);
    o.workers = workers;
    std::ostringstream err;
    const int rc = run_command(command, config, seed, o, err);
    return py::make_tuple(rc, err.str());
  }, py::arg("command"), py::arg("config") = "", py::arg("seed") = py::none(), py::arg("out") = "",
        py::arg("format") = "csv", py::arg("workers") = 1);

  m.def("suite_names", &suite_names);
  m.def(
      "run_suite",
      [](const std::string& name, bool quick, std::uint64_t seed) {
        VerifyOptions o;
        o.quick = quick;
        o.seed = seed;
        const SuiteResult r = run_suite(name, o);
        py::dict d;
        d["name"] = r.name;
        d["passed"] = r.passed;
        d["detail"] = r.detail;
        d["seconds"] = r.seconds;
        return d;
      },
      py::arg("name"), py::arg("quick") = true, py::arg("seed") = 0);
}
