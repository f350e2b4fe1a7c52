#include <pybind11/complex.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "psilab/bohm.hpp"
#include "psilab/cli.hpp"
#include "psilab/errors.hpp"
#include "psilab/nogo.hpp"

namespace py = pybind11;
using namespace psilab;

namespace {

// Structured results cross the boundary as JSON text; the Python package
// decodes them into dicts.
std::string pbr_check(const std::string& scene_name, std::size_t cells, std::size_t shared, double theta,
                      std::size_t qubits, double tol) {
  std::optional<Scene> scene;
  if (scene_name == "overlap" || scene_name == "disjoint") {
    scene = pbr_two_qubit_scene();
  } else if (scene_name == "orthogonal") {
    scene = orthogonal_scene();
  } else if (scene_name == "pbr-n") {
    scene = pbr_n_scene(theta, qubits);
    if (!scene) throw DomainError("no basis found for theta and qubits");
  } else {
    throw DomainError("unknown scene '" + scene_name + "'");
  }
  const OntModel model = support_pattern_model(*scene, cells, scene_name == "disjoint" ? 0 : shared);
  const FeasibilityProblem problem = build_feasibility_problem(*scene, model);
  const FeasibilityReport report = lp_feasibility(problem, tol);
  nlohmann::json j = to_json(problem, report);
  const auto cert = analytic_contradiction(model, problem.zeros);
  j["analytic"] = cert ? to_json(*cert) : nlohmann::json(nullptr);
  return j.dump();
}

std::string escape(const std::string& name) {
  EscapeScene scene;
  if (name == "beam-splitter") {
    scene = EscapeScene::BeamSplitter;
  } else if (name == "orthogonal") {
    scene = EscapeScene::SingleQubitOrthogonal;
  } else {
    throw DomainError("unknown escape scene '" + name + "'");
  }
  const OntModel m = contextual_escape(scene);
  return nlohmann::json{{"model", to_json(m)},
                        {"classification", to_string(classify(m))},
                        {"deterministic", determinism_check(m).deterministic},
                        {"born_discrepancy", born_discrepancy(m)}}
      .dump();
}

std::string stern_gerlach(double theta, std::size_t n, std::uint64_t seed, std::size_t threads,
                          double t_final, std::size_t cells, double dt, double b1) {
  bohm::SternGerlachConfig cfg;
  cfg.t_final = t_final;
  cfg.grid.cells = cells;
  cfg.dt = dt;
  cfg.b1 = b1;
  const bohm::EnsembleRun run = bohm::run_ensemble(cfg, theta, n, seed, threads);
  nlohmann::json outcomes = nlohmann::json::array();
  nlohmann::json finals = nlohmann::json::array();
  for (const auto& t : run.trajectories) {
    outcomes.push_back(bohm::to_string(t.outcome));
    finals.push_back(t.x.back());
  }
  return nlohmann::json{{"stats", bohm::to_json(run.stats)},
                        {"x0", run.x0},
                        {"x_final", finals},
                        {"outcome", outcomes}}
      .dump();
}

std::string beam_splitter(const std::string& prep, std::size_t n, std::uint64_t seed, std::size_t threads) {
  const bohm::BeamSplitterRun run =
      bohm::beam_splitter_scene(bohm::BeamSplitterConfig{}, bohm::parse_beam_preparation(prep), n, seed, threads);
  return nlohmann::json{{"preparation", prep},
                        {"gate3", run.gate3},
                        {"gate4", run.gate4},
                        {"unresolved", run.unresolved},
                        {"valid", run.valid},
                        {"transmission", std::norm(run.calibration.t)},
                        {"gate", run.gate},
                        {"x0", run.x0}}
      .dump();
}

py::tuple run_cli(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  int code = 0;
  {
    py::gil_scoped_release release;
    code = cli::run(args, out, err);
  }
  return py::make_tuple(code, out.str(), err.str());
}

}  // namespace

PYBIND11_MODULE(_psilab, m) {
  m.doc() = "Native core of psilab";

  py::register_exception<DomainError>(m, "DomainError", PyExc_ValueError);
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<LookupError>(m, "LookupError", PyExc_KeyError);

  m.def("make_qubit_pair", [](double theta) {
    const auto [a, b] = make_qubit_pair(theta);
    return py::make_tuple(std::vector<complex>(a.amplitudes().begin(), a.amplitudes().end()),
                          std::vector<complex>(b.amplitudes().begin(), b.amplitudes().end()));
  }, py::arg("theta"));

  m.def("born", [](const std::vector<complex>& phi, const std::vector<complex>& psi) {
    std::size_t qubits = 0;
    while ((std::size_t{1} << qubits) < phi.size()) ++qubits;
    return born(QState(qubits, phi), QState(qubits, psi));
  }, py::arg("phi"), py::arg("psi"));

  m.def("pbr_table", [] {
    const Scene s = pbr_two_qubit_scene();
    std::vector<QState> rows;
    for (std::size_t t = 0; t < s.preparation_tuples(); ++t) rows.push_back(s.product_state(s.tuple(t)));
    return coefficient_table(rows, s.basis);
  });

  m.def("zero_constraints", [](const std::string& name) {
    const Scene s = name == "orthogonal" ? orthogonal_scene() : pbr_two_qubit_scene();
    std::vector<py::tuple> out;
    for (const auto& z : zero_constraints(s)) out.push_back(py::make_tuple(z.outcome, z.preparation, z.born));
    return out;
  }, py::arg("scene") = "pbr-2qubit");

  m.def("pbr_check_json", &pbr_check, py::arg("scene") = "overlap", py::arg("cells") = 4,
        py::arg("shared") = 2, py::arg("theta") = 0.7853981633974483, py::arg("qubits") = 3,
        py::arg("tol") = 1e-9, py::call_guard<py::gil_scoped_release>());

  m.def("escape_json", &escape, py::arg("scene"));

  m.def("stern_gerlach_json", &stern_gerlach, py::arg("theta"), py::arg("n"), py::arg("seed") = 1,
        py::arg("threads") = 1, py::arg("t_final") = 3.0, py::arg("cells") = 1024, py::arg("dt") = 1e-3,
        py::arg("b1") = -10.0, py::call_guard<py::gil_scoped_release>());

  m.def("beam_splitter_json", &beam_splitter, py::arg("prep"), py::arg("n"), py::arg("seed") = 1,
        py::arg("threads") = 1, py::call_guard<py::gil_scoped_release>());

  m.def("run_cli", &run_cli, py::arg("args"));
}
