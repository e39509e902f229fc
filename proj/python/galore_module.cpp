#include <cstring>
#include <string>

#include <json.hpp>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "galore/error.hpp"
#include "galore/harness.hpp"
#include "galore/linalg.hpp"
#include "galore/memory.hpp"
#include "galore/optim.hpp"
#include "galore/projector.hpp"
#include "galore/quant8.hpp"

namespace py = pybind11;
using nlohmann::json;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

galore::Matrix to_matrix(const Array& a) {
  if (a.ndim() != 2) throw galore::InvalidInput("expected a 2-D array");
  const auto rows = static_cast<std::size_t>(a.shape(0));
  const auto cols = static_cast<std::size_t>(a.shape(1));
  return {rows, cols, std::vector<double>(a.data(), a.data() + rows * cols)};
}

Array to_array(const galore::Matrix& m) {
  Array out({m.rows(), m.cols()});
  if (m.size() > 0) std::memcpy(out.mutable_data(), m.data().data(), m.size() * sizeof(double));
  return out;
}

py::object to_py(const json& j) { return py::module_::import("json").attr("loads")(j.dump()); }

json from_py(const py::object& o) {
  return json::parse(py::module_::import("json").attr("dumps")(o).cast<std::string>());
}

py::dict report_dict(const galore::memory::MemoryReport& r) {
  py::dict d;
  d["method"] = galore::memory::method_name(r.method);
  d["weight_params"] = r.weight_params;
  d["optimizer_params"] = r.optimizer_params;
  d["weight_bytes"] = r.weight_bytes;
  d["optimizer_bytes"] = r.optimizer_bytes;
  d["total_bytes"] = r.total_bytes;
  d["notes"] = r.notes;
  return d;
}

// Owns one GaLore-wrapped weight and its step counter.
class GaLoreOptimizer {
 public:
  GaLoreOptimizer(std::size_t rows, std::size_t cols, std::size_t rank, std::int64_t switch_freq, double alpha,
                  const std::string& rule, bool eight_bit)
      : state_(rows, cols, make_options(rank, switch_freq, alpha, rule, eight_bit)) {}

  Array step(const Array& weights, const Array& grad, double eta) {
    galore::Matrix w = to_matrix(weights);
    galore::galore_step(w, to_matrix(grad), state_, eta, step_++);
    return to_array(w);
  }

  std::size_t state_entries() const { return state_.state_entries(); }
  std::size_t refresh_count() const { return state_.projector().refresh_count(); }

 private:
  static galore::GaLoreOptions make_options(std::size_t rank, std::int64_t switch_freq, double alpha,
                                            const std::string& rule, bool eight_bit) {
    galore::GaLoreOptions o;
    o.projector.rank = rank;
    o.projector.switch_freq = switch_freq;
    o.alpha = alpha;
    if (rule == "adam") {
      o.rule = galore::InnerRule::Adam;
    } else if (rule == "adafactor") {
      o.rule = galore::InnerRule::Adafactor;
    } else if (rule == "identity") {
      o.rule = galore::InnerRule::Identity;
    } else {
      throw galore::InvalidInput("unknown inner rule: " + rule);
    }
    if (eight_bit) o.storage = galore::StateStorage::Int8Blockwise;
    return o;
  }

  galore::GaLoreState state_;
  std::int64_t step_ = 0;
};

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Gradient low-rank projection toolkit";

  static py::exception<galore::ConfigError> config_error(m, "ConfigError", PyExc_ValueError);
  static py::exception<galore::DivergenceError> divergence_error(m, "DivergenceError", PyExc_RuntimeError);
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const galore::ConfigError& e) {
      PyErr_SetObject(config_error.ptr(), py::make_tuple(e.what(), e.path()).ptr());
    } catch (const galore::DivergenceError& e) {
      PyErr_SetObject(divergence_error.ptr(), py::make_tuple(e.what(), e.last_valid_step()).ptr());
    } catch (const galore::InvalidInput& e) {
      PyErr_SetString(PyExc_ValueError, e.what());
    }
  });

  m.attr("NEVER_SWITCH") = galore::kNeverSwitch;
  m.attr("VERIFY_SEED") = galore::harness::kVerifySeed;

  m.def("svd", [](const Array& a) {
    const auto r = galore::linalg::svd_thin(to_matrix(a));
    return py::make_tuple(to_array(r.U), r.S, to_array(r.V));
  }, "Thin SVD A = U diag(s) Vᵀ with s descending.");
  m.def("stable_rank", [](const Array& a) { return galore::linalg::stable_rank(to_matrix(a)); });
  m.def("numerical_rank", [](const Array& a, double tol) { return galore::linalg::numerical_rank(to_matrix(a), tol); },
        py::arg("a"), py::arg("rel_tol") = 1e-10);

  m.def("q8_roundtrip", [](const Array& a, std::size_t block) {
    return to_array(galore::q8_roundtrip(to_matrix(a), block).dequantized);
  }, py::arg("a"), py::arg("block_size") = galore::kDefaultQuantBlock);

  py::class_<galore::Projector>(m, "Projector")
      .def(py::init([](std::size_t rows, std::size_t cols, std::size_t rank, std::int64_t switch_freq, bool two_sided) {
             galore::ProjectorOptions o;
             o.rank = rank;
             o.switch_freq = switch_freq;
             o.mode = two_sided ? galore::ProjectionMode::TwoSided : galore::ProjectionMode::OneSided;
             return galore::Projector(rows, cols, o);
           }),
           py::arg("rows"), py::arg("cols"), py::arg("rank"), py::arg("switch_freq") = 200,
           py::arg("two_sided") = false)
      .def("maybe_refresh", [](galore::Projector& p, const Array& g, std::int64_t step) {
        return p.maybe_refresh(to_matrix(g), step);
      })
      .def("project", [](const galore::Projector& p, const Array& g) { return to_array(p.project(to_matrix(g))); })
      .def("project_back", [](const galore::Projector& p, const Array& r, double alpha) {
        return to_array(p.project_back(to_matrix(r), alpha));
      }, py::arg("compact"), py::arg("alpha") = 1.0)
      .def_property_readonly("rank", &galore::Projector::rank)
      .def_property_readonly("refresh_count", &galore::Projector::refresh_count)
      .def_property_readonly("left", [](const galore::Projector& p) {
        return p.has_left() ? py::object(to_array(p.left())) : py::object(py::none());
      })
      .def_property_readonly("right", [](const galore::Projector& p) {
        return p.has_right() ? py::object(to_array(p.right())) : py::object(py::none());
      });

  py::class_<GaLoreOptimizer>(m, "GaLoreOptimizer")
      .def(py::init<std::size_t, std::size_t, std::size_t, std::int64_t, double, const std::string&, bool>(),
           py::arg("rows"), py::arg("cols"), py::arg("rank"), py::arg("switch_freq") = 200, py::arg("alpha") = 0.25,
           py::arg("rule") = "adam", py::arg("eight_bit") = false)
      .def("step", &GaLoreOptimizer::step, py::arg("weights"), py::arg("grad"), py::arg("eta"),
           "Returns the updated weights; ascent convention W += eta * update.")
      .def_property_readonly("state_entries", &GaLoreOptimizer::state_entries)
      .def_property_readonly("refresh_count", &GaLoreOptimizer::refresh_count);

  m.def("estimate_layer", [](std::size_t rows, std::size_t cols, std::size_t rank, const std::string& method,
                             std::uint64_t bytes) {
    return report_dict(galore::memory::estimate_layer(galore::memory::LayerDims::make(rows, cols, rank),
                                                      galore::memory::parse_method(method), bytes));
  }, py::arg("rows"), py::arg("cols"), py::arg("rank"), py::arg("method"), py::arg("bytes_per_entry") = 2);

  m.def("estimate_memory", [](const py::object& request) {
    py::list out;
    for (const auto& r : galore::harness::run_memory(galore::harness::memory_request_from_json(from_py(request)))) {
      out.append(report_dict(r));
    }
    return out;
  }, "Per-method reports for a memory request dict.");

  m.def("train", [](const py::object& config) {
    const auto c = galore::harness::RunConfig::from_json(from_py(config));
    const auto r = galore::harness::run_train(c);
    json rows = json::array();
    for (const auto& row : r.rows) rows.push_back(galore::harness::to_json(row));
    json j = galore::harness::summary_json(c, r);
    j["rows"] = std::move(rows);
    return to_py(j);
  }, "Runs one training config dict; returns the summary plus metrics rows.");

  m.def("theory", [](const py::object& spec) {
    const auto tr = galore::theory::simulate_dynamics(galore::harness::dynamics_spec_from_json(from_py(spec)));
    return to_py(galore::harness::theory_summary_json(tr));
  });

  m.def("verify", [](std::uint64_t seed) {
    py::list out;
    for (const auto& c : galore::harness::run_verify({}, seed).checks) {
      py::dict d;
      d["name"] = c.name;
      d["value"] = c.value;
      d["tolerance"] = c.tolerance;
      d["passed"] = c.passed;
      d["informational"] = c.informational;
      d["detail"] = c.detail;
      out.append(d);
    }
    return out;
  }, py::arg("seed") = galore::harness::kVerifySeed);
}
