#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <chrono>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "qrfsel/baselines.hpp"
#include "qrfsel/config.hpp"
#include "qrfsel/dataset.hpp"
#include "qrfsel/forward_selection.hpp"
#include "qrfsel/quantile_forest.hpp"
#include "qrfsel/report.hpp"
#include "qrfsel/scoring.hpp"
#include "qrfsel/simulation.hpp"

namespace py = pybind11;
using namespace qrfsel;

namespace {

using Options = std::map<std::string, std::string>;

Dataset from_arrays(py::array_t<double, py::array::c_style | py::array::forcecast> y,
                    py::array_t<double, py::array::c_style | py::array::forcecast> x,
                    std::optional<std::vector<std::string>> names, const std::string& response) {
  if (y.ndim() != 1 || x.ndim() != 2) throw std::invalid_argument("y must be 1-d and X 2-d");
  const auto n = static_cast<std::size_t>(x.shape(0)), d = static_cast<std::size_t>(x.shape(1));
  if (static_cast<std::size_t>(y.shape(0)) != n) throw std::invalid_argument("y and X have different row counts");
  auto xv = x.unchecked<2>();
  auto yv = y.unchecked<1>();
  std::vector<double> resp(n);
  std::vector<std::vector<double>> cols(d, std::vector<double>(n));
  for (std::size_t i = 0; i < n; ++i) {
    resp[i] = yv(static_cast<py::ssize_t>(i));
    for (std::size_t j = 0; j < d; ++j) cols[j][i] = xv(static_cast<py::ssize_t>(i), static_cast<py::ssize_t>(j));
  }
  if (!names) {
    names.emplace();
    for (std::size_t j = 0; j < d; ++j) names->push_back("X" + std::to_string(j + 1));
  }
  return Dataset(std::move(resp), std::move(cols), *names, response);
}

py::array_t<double> covariate_matrix(const Dataset& data) {
  py::array_t<double> out({data.n(), data.d()});
  auto v = out.mutable_unchecked<2>();
  for (std::size_t i = 0; i < data.n(); ++i)
    for (std::size_t j = 0; j < data.d(); ++j)
      v(static_cast<py::ssize_t>(i), static_cast<py::ssize_t>(j)) = data.x(i, j);
  return out;
}

RunConfig run_config(const Options& options, std::optional<std::uint64_t> seed) {
  RunConfig c;
  for (const auto& [k, v] : options) apply_config_value(c, k, v);
  if (seed) c.seed = seed;
  c.validate();
  return c;
}

IndexSet to_index_set(const std::vector<std::size_t>& v) {
  IndexSet s;
  for (auto i : v) s.insert(i);
  return s;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Forward variable selection for quantile random forests under the CRPS";

  auto data_error = py::register_exception<DataError>(m, "DataError", PyExc_ValueError);
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<MissingFileError>(m, "MissingFileError", data_error.ptr());

  py::class_<Dataset>(m, "Dataset")
      .def(py::init(&from_arrays), py::arg("y"), py::arg("X"), py::arg("names") = py::none(), py::arg("response") = "y")
      .def_static(
          "from_csv", [](const std::string& path, const std::string& response) { return load_csv(path, response); },
          py::arg("path"), py::arg("response") = "y")
      .def(
          "to_csv", [](const Dataset& d, const std::string& path) { write_csv(d, path); }, py::arg("path"))
      .def_property_readonly("n", &Dataset::n)
      .def_property_readonly("d", &Dataset::d)
      .def_property_readonly("names", &Dataset::names)
      .def_property_readonly("response_name", &Dataset::response_name)
      .def_property_readonly(
          "y", [](const Dataset& d) { return std::vector<double>(d.response().begin(), d.response().end()); })
      .def_property_readonly("X", &covariate_matrix)
      .def("__repr__", [](const Dataset& d) {
        return "<Dataset n=" + std::to_string(d.n()) + " d=" + std::to_string(d.d()) + ">";
      });

  py::class_<QuantileForest>(m, "QuantileForest")
      .def_static(
          "fit",
          [](const Dataset& data, const std::vector<std::size_t>& covariates, std::uint64_t seed,
             const Options& options, std::size_t threads) {
            const auto c = run_config(options, seed);
            py::gil_scoped_release release;
            return QuantileForest::fit(data, to_index_set(covariates), c.forest, seed, threads);
          },
          py::arg("data"), py::arg("covariates"), py::arg("seed"), py::arg("options") = Options{},
          py::arg("threads") = 1)
      .def_static(
          "load", [](const std::string& path) { return QuantileForest::load(path); }, py::arg("path"))
      .def(
          "save", [](const QuantileForest& f, const std::string& path) { f.save(path); }, py::arg("path"))
      .def_property_readonly("n_trees", [](const QuantileForest& f) { return f.trees().size(); })
      .def_property_readonly("covariates", [](const QuantileForest& f) { return f.covariates().items(); })
      .def(
          "predict_quantiles",
          [](const QuantileForest& f, const std::vector<double>& x, const std::vector<double>& levels) {
            return f.predict_quantiles(x, levels);
          },
          py::arg("x"), py::arg("levels"))
      .def(
          "oob_quantiles",
          [](const QuantileForest& f, std::size_t i, std::size_t k) {
            return f.oob_predict_quantiles(i, QuantileGrid(k));
          },
          py::arg("i"), py::arg("k") = 50)
      .def("oob_tree_count", &QuantileForest::oob_tree_count, py::arg("i"));

  m.def(
      "oob_risk",
      [](const Dataset& data, const std::vector<std::size_t>& covariates, std::uint64_t seed, const Options& options,
         std::size_t threads) {
        const auto c = run_config(options, seed);
        py::gil_scoped_release release;
        return estimate_risk(data, to_index_set(covariates), c.forest, QuantileGrid(c.crps_grid_k), seed, threads).risk;
      },
      py::arg("data"), py::arg("covariates"), py::arg("seed"), py::arg("options") = Options{}, py::arg("threads") = 1,
      "Out-of-bag CRPS risk of a covariate set.");

  m.def(
      "select_json",
      [](const Dataset& data, std::uint64_t seed, const Options& options, std::size_t threads) {
        auto c = run_config(options, seed);
        c.threads = threads;
        const auto t0 = std::chrono::steady_clock::now();
        SelectionTrace trace;
        {
          py::gil_scoped_release release;
          trace = select(data, c);
        }
        return dump_report(selection_report(trace, data, {threads, seconds_since(t0)}));
      },
      py::arg("data"), py::arg("seed"), py::arg("options") = Options{}, py::arg("threads") = 1);

  m.def(
      "backmse_json",
      [](const Dataset& data, std::uint64_t seed, std::size_t trees, std::size_t replicates, std::size_t threads) {
        BackwardOptions o;
        o.forest.trees = trees;
        o.replicates = replicates;
        o.seed = seed;
        o.threads = threads;
        const auto t0 = std::chrono::steady_clock::now();
        BackwardResult r;
        {
          py::gil_scoped_release release;
          r = backward_select_mse(data, o);
        }
        return dump_report(backward_report(r, o, data, {threads, seconds_since(t0)}));
      },
      py::arg("data"), py::arg("seed"), py::arg("trees") = 2000, py::arg("replicates") = 20, py::arg("threads") = 1);

  m.def(
      "ngr_json",
      [](const Dataset& data, std::size_t threads) {
        const NgrOptions o;
        const auto t0 = std::chrono::steady_clock::now();
        auto r = ngr_bic_stepwise(data, o, threads);
        return dump_report(ngr_report(r, o, data, {threads, seconds_since(t0)}));
      },
      py::arg("data"), py::arg("threads") = 1);

  m.def(
      "simulate",
      [](int model, std::size_t n, double rho, std::size_t d, std::uint64_t seed) {
        SimulationConfig c;
        c.model = model;
        c.n = n;
        c.rho = rho;
        c.d = d;
        c.seed = seed;
        c.validate();
        return simulate_model(c).data;
      },
      py::arg("model"), py::arg("n"), py::arg("rho") = 0.0, py::arg("d") = 25, py::arg("seed") = 0);

  m.def(
      "crps_from_quantiles", [](double y, const std::vector<double>& q) { return crps_from_quantiles(y, q); },
      py::arg("y"), py::arg("quantiles"));
  m.def("crps_gaussian", &crps_gaussian, py::arg("y"), py::arg("mu"), py::arg("sigma"));
  m.def(
      "weighted_quantile",
      [](const std::vector<double>& v, const std::vector<double>& w, double tau) {
        return weighted_quantile(v, w, tau);
      },
      py::arg("values"), py::arg("weights"), py::arg("tau"));
  m.def("binomial_critical", &binomial_critical, py::arg("m"), py::arg("alpha"));
}
