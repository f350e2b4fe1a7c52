#include "psilab/nogo.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "psilab/errors.hpp"
#include "simplex.hpp"

namespace psilab {

namespace {

std::size_t checked_power(std::size_t base, std::size_t exp) {
  std::size_t out = 1;
  for (std::size_t k = 0; k < exp; ++k) {
    if (base != 0 && out > (std::size_t{1} << 26) / base) throw DomainError("tuple space too large");
    out *= base;
  }
  return out;
}

// Mixed-radix digits of `index`, most significant first.
std::vector<std::size_t> digits(std::size_t index, std::size_t base, std::size_t count) {
  std::vector<std::size_t> out(count);
  for (std::size_t k = count; k-- > 0;) {
    out[k] = index % base;
    index /= base;
  }
  return out;
}

std::size_t flatten(std::span<const std::size_t> tuple, std::size_t base) {
  std::size_t index = 0;
  for (std::size_t d : tuple) index = index * base + d;
  return index;
}

void check_scene(const Scene& scene) {
  if (scene.labels.size() != scene.states.size() || scene.labels.empty()) {
    throw DomainError("scene needs one state per preparation label");
  }
  if (scene.arity == 0) throw DomainError("scene arity must be at least 1");
  const std::size_t q = scene.states.front().qubits();
  for (const QState& s : scene.states) {
    if (s.qubits() != q) throw DomainError("scene states have mixed qubit counts");
  }
  if (scene.basis.qubits() != q * scene.arity) {
    throw DomainError("scene basis acts on " + std::to_string(scene.basis.qubits()) +
                      " qubits, preparations span " + std::to_string(q * scene.arity));
  }
}

std::string join(std::span<const std::string> parts, char sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out += sep;
    out += parts[i];
  }
  return out;
}

std::vector<std::string> tuple_labels(const Scene& scene, std::span<const std::size_t> tuple) {
  std::vector<std::string> out;
  for (std::size_t p : tuple) out.push_back(scene.labels[p]);
  return out;
}

}  // namespace

std::size_t Scene::preparation_tuples() const { return checked_power(labels.size(), arity); }

std::vector<std::size_t> Scene::tuple(std::size_t index) const {
  return digits(index, labels.size(), arity);
}

QState Scene::product_state(std::span<const std::size_t> tuple) const {
  std::vector<QState> factors;
  for (std::size_t p : tuple) factors.push_back(states.at(p));
  return tensor(factors);
}

Scene pbr_two_qubit_scene() {
  return Scene{"pbr-2qubit", "phi", {"psi_1", "psi_2"}, {ket0(), ket_plus()}, 2, pbr_basis_2qubit()};
}

Scene orthogonal_scene() {
  return Scene{"orthogonal", "pm", {"psi_1", "psi_2"}, {ket_minus(), ket_plus()}, 1,
               plus_minus_basis()};
}

std::optional<Scene> pbr_n_scene(double theta, std::size_t qubits, const BasisSearchConfig& config) {
  BasisSearchResult search = pbr_basis_n(theta, qubits, config);
  if (!search.found()) return std::nullopt;
  const auto [psi0, psi1] = make_qubit_pair(theta);
  return Scene{"pbr-n", "phi", {"psi_0", "psi_1"}, {psi0, psi1}, qubits, std::move(*search.basis)};
}

std::vector<std::vector<double>> born_table(const Scene& scene) {
  check_scene(scene);
  std::vector<std::vector<double>> table;
  for (std::size_t t = 0; t < scene.preparation_tuples(); ++t) {
    const QState product = scene.product_state(scene.tuple(t));
    std::vector<double> row;
    for (const QState& v : scene.basis.vectors()) row.push_back(born(v, product));
    table.push_back(std::move(row));
  }
  return table;
}

std::vector<ZeroConstraint> zero_constraints(const Scene& scene, double tol) {
  const auto table = born_table(scene);
  std::vector<ZeroConstraint> out;
  for (std::size_t i = 0; i < scene.basis.size(); ++i) {
    for (std::size_t t = 0; t < table.size(); ++t) {
      if (table[t][i] < tol) out.push_back({i, tuple_labels(scene, scene.tuple(t)), table[t][i]});
    }
  }
  return out;
}

OntModel preparation_model(const Scene& scene, LambdaSpace space,
                           std::vector<PreparationDensity> densities) {
  check_scene(scene);
  for (const std::string& label : scene.labels) {
    const bool present = std::any_of(densities.begin(), densities.end(),
                                     [&](const PreparationDensity& d) { return d.label == label; });
    if (!present) throw LookupError("no density given for preparation '" + label + "'");
  }
  const std::size_t outcomes = scene.basis.size();
  const std::size_t tuples = checked_power(space.size(), scene.arity);
  UniversalResponse response{scene.setting, scene.basis.labels(),
                             std::vector<double>(outcomes * tuples, 1.0 / static_cast<double>(outcomes))};
  QuantumAnnotation quantum;
  for (std::size_t p = 0; p < scene.labels.size(); ++p) quantum.states.emplace(scene.labels[p], scene.states[p]);
  quantum.measurements.emplace(scene.setting, scene.basis);
  return OntModel(std::move(space), std::move(densities), std::move(response), scene.arity,
                  std::move(quantum));
}

OntModel support_pattern_model(const Scene& scene, std::size_t cells, std::size_t shared) {
  if (scene.labels.size() != 2) throw DomainError("support pattern needs exactly two preparations");
  if (cells == 0 || shared > cells) throw DomainError("need 0 <= shared <= cells and cells >= 1");
  LambdaSpace space = LambdaSpace::uniform(2 * cells - shared);
  std::vector<std::size_t> first(cells), second(cells);
  for (std::size_t c = 0; c < cells; ++c) {
    first[c] = c;
    second[c] = cells - shared + c;
  }
  std::vector<PreparationDensity> densities{uniform_density(space, scene.labels[0], first),
                                            uniform_density(space, scene.labels[1], second)};
  return preparation_model(scene, std::move(space), std::move(densities));
}

std::optional<ContradictionCertificate> analytic_contradiction(
    const OntModel& model, std::span<const ZeroConstraint> constraints, std::optional<double> eps) {
  if (model.is_contextual()) {
    throw DomainError(
        "analytic_contradiction: the response is conditioned on the preparation, so zero "
        "constraints from different preparations constrain different functions and cannot be "
        "combined at a common lambda");
  }
  const std::size_t arity = model.arity();
  const std::size_t outcomes = model.outcomes().size();
  const std::size_t n = model.space().size();

  std::map<std::string, std::vector<bool>> in_support;
  std::vector<bool> in_union(n, false);
  for (const auto& [label, d] : model.preparations()) {
    std::vector<bool> mask(n, false);
    for (std::size_t l : eps ? support(d, *eps) : support(d)) {
      mask[l] = true;
      in_union[l] = true;
    }
    in_support.emplace(label, std::move(mask));
  }
  for (const ZeroConstraint& c : constraints) {
    if (c.preparation.size() != arity) throw DomainError("constraint arity does not match the model");
    if (c.outcome >= outcomes) throw DomainError("constraint outcome out of range");
    for (const std::string& label : c.preparation) {
      if (!in_support.contains(label)) throw LookupError("unknown preparation '" + label + "'");
    }
  }

  std::vector<std::size_t> domain;
  for (std::size_t l = 0; l < n; ++l) {
    if (in_union[l]) domain.push_back(l);
  }
  if (domain.empty()) return std::nullopt;

  const std::size_t count = checked_power(domain.size(), arity);
  for (std::size_t t = 0; t < count; ++t) {
    std::vector<std::size_t> witness = digits(t, domain.size(), arity);
    for (std::size_t& d : witness) d = domain[d];

    std::vector<const ZeroConstraint*> forcing(outcomes, nullptr);
    std::size_t forced = 0;
    for (const ZeroConstraint& c : constraints) {
      if (forcing[c.outcome] != nullptr) continue;
      bool active = true;
      for (std::size_t k = 0; k < arity && active; ++k) {
        active = in_support.at(c.preparation[k])[witness[k]];
      }
      if (active) {
        forcing[c.outcome] = &c;
        ++forced;
      }
    }
    if (forced == outcomes) {
      ContradictionCertificate cert;
      cert.witness = std::move(witness);
      for (const ZeroConstraint* c : forcing) cert.forcing.push_back(*c);
      return cert;
    }
  }
  return std::nullopt;
}

FeasibilityProblem build_feasibility_problem(const Scene& scene, const OntModel& model, bool reproduce) {
  check_scene(scene);
  if (model.arity() != scene.arity) throw DomainError("model arity does not match the scene");
  if (model.outcomes().size() != scene.basis.size()) {
    throw DomainError("model outcome count does not match the scene basis");
  }
  const LambdaSpace& space = model.space();
  const std::size_t n = space.size();
  const std::size_t outcomes = scene.basis.size();

  // mass[p][l] = rho_p(l) w(l), zero below the support threshold
  std::vector<std::vector<double>> mass;
  std::vector<bool> in_union(n, false);
  for (const std::string& label : scene.labels) {
    const PreparationDensity& d = model.preparation(label);
    std::vector<double> m(n, 0.0);
    for (std::size_t l : support(d)) {
      m[l] = d.density[l] * space.weight(l);
      in_union[l] = true;
    }
    mass.push_back(std::move(m));
  }
  std::vector<std::size_t> domain;
  for (std::size_t l = 0; l < n; ++l) {
    if (in_union[l]) domain.push_back(l);
  }

  FeasibilityProblem problem{scene, model, zero_constraints(scene), {}, born_table(scene), 0, 0, 0, {}, {}, {}};
  const std::size_t tuples = checked_power(domain.size(), scene.arity);
  for (std::size_t t = 0; t < tuples; ++t) {
    std::vector<std::size_t> tuple = digits(t, domain.size(), scene.arity);
    for (std::size_t& d : tuple) d = domain[d];
    problem.tuples.push_back(std::move(tuple));
  }

  problem.cols = outcomes * tuples;
  problem.normalization_rows = tuples;
  const std::size_t prep_tuples = reproduce ? scene.preparation_tuples() : 0;
  problem.rows = tuples + prep_tuples * outcomes;
  problem.matrix.assign(problem.rows * problem.cols, 0.0);
  problem.rhs.assign(problem.rows, 0.0);

  for (std::size_t t = 0; t < tuples; ++t) {
    for (std::size_t i = 0; i < outcomes; ++i) problem.matrix[t * problem.cols + i * tuples + t] = 1.0;
    problem.rhs[t] = 1.0;
    std::string name = "normalization[";
    for (std::size_t k = 0; k < scene.arity; ++k) {
      name += (k ? "," : "") + std::to_string(problem.tuples[t][k]);
    }
    problem.row_names.push_back(name + "]");
  }

  for (std::size_t p = 0; p < prep_tuples; ++p) {
    const std::vector<std::size_t> prep = scene.tuple(p);
    std::vector<double> joint(tuples);
    for (std::size_t t = 0; t < tuples; ++t) {
      double m = 1.0;
      for (std::size_t k = 0; k < scene.arity; ++k) m *= mass[prep[k]][problem.tuples[t][k]];
      joint[t] = m;
    }
    for (std::size_t i = 0; i < outcomes; ++i) {
      const std::size_t row = tuples + p * outcomes + i;
      for (std::size_t t = 0; t < tuples; ++t) problem.matrix[row * problem.cols + i * tuples + t] = joint[t];
      problem.rhs[row] = problem.born[p][i];
      problem.row_names.push_back("born[" + scene.basis.labels()[i] + "|" +
                                  join(tuple_labels(scene, prep), ',') + "]");
    }
  }
  return problem;
}

const char* to_string(FeasibilityStatus s) {
  switch (s) {
    case FeasibilityStatus::Feasible: return "Feasible";
    case FeasibilityStatus::Infeasible: return "Infeasible";
    case FeasibilityStatus::Indeterminate: return "Indeterminate";
  }
  return "Indeterminate";
}

double witness_residual(const FeasibilityProblem& problem, std::span<const double> xi) {
  if (xi.size() != problem.cols) throw DomainError("witness has the wrong number of entries");
  double worst = 0.0;
  for (double v : xi) worst = std::max(worst, -v);
  for (std::size_t r = 0; r < problem.rows; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < problem.cols; ++c) s += problem.matrix[r * problem.cols + c] * xi[c];
    worst = std::max(worst, std::abs(s - problem.rhs[r]));
  }
  return worst;
}

FeasibilityReport lp_feasibility(const FeasibilityProblem& problem, double tol, std::size_t max_iterations) {
  const detail::PhaseOneResult lp =
      detail::phase_one(problem.matrix, problem.rows, problem.cols, problem.rhs, tol, max_iterations);
  FeasibilityReport report;
  report.iterations = lp.iterations;
  report.artificial_residual = lp.artificial_sum;
  switch (lp.status) {
    case detail::PhaseOneStatus::Feasible:
      report.witness = lp.x;
      report.constraint_residual = witness_residual(problem, report.witness);
      report.status = report.constraint_residual <= tol ? FeasibilityStatus::Feasible
                                                        : FeasibilityStatus::Indeterminate;
      break;
    case detail::PhaseOneStatus::Infeasible:
      report.status = FeasibilityStatus::Infeasible;
      report.certificate = analytic_contradiction(problem.model, problem.zeros);
      break;
    case detail::PhaseOneStatus::IterationLimit:
      report.status = FeasibilityStatus::Indeterminate;
      break;
  }
  return report;
}

OntModel witness_model(const FeasibilityProblem& problem, const FeasibilityReport& report) {
  if (report.status != FeasibilityStatus::Feasible) throw DomainError("report carries no witness");
  const OntModel& base = problem.model;
  const std::size_t n = base.space().size();
  const std::size_t outcomes = problem.scene.basis.size();
  const std::size_t all = base.tuple_count();
  const std::size_t tuples = problem.tuples.size();

  std::vector<double> table(outcomes * all, 1.0 / static_cast<double>(outcomes));
  for (std::size_t t = 0; t < tuples; ++t) {
    const std::size_t full = flatten(problem.tuples[t], n);
    double sum = 0.0;
    for (std::size_t i = 0; i < outcomes; ++i) sum += std::max(0.0, report.witness[i * tuples + t]);
    for (std::size_t i = 0; i < outcomes; ++i) {
      table[i * all + full] = std::max(0.0, report.witness[i * tuples + t]) / sum;
    }
  }
  std::vector<PreparationDensity> preps;
  for (const auto& [label, d] : base.preparations()) preps.push_back(d);
  return OntModel(base.space(), std::move(preps),
                  UniversalResponse{problem.scene.setting, problem.scene.basis.labels(), std::move(table)},
                  base.arity(), base.quantum());
}

OntModel construct_disjoint_model(const QState& psi1, const QState& psi2, const MeasurementBasis& basis) {
  if (psi1.qubits() != psi2.qubits() || basis.qubits() != 2 * psi1.qubits()) {
    throw DomainError("basis must act on the product of the two preparations");
  }
  LambdaSpace space = LambdaSpace::uniform(2);
  std::vector<PreparationDensity> preps{make_density(space, "psi_1", {1.0, 0.0}),
                                        make_density(space, "psi_2", {0.0, 1.0})};
  const std::vector<QState> states{psi1, psi2};
  const std::size_t outcomes = basis.size();
  std::vector<double> table(outcomes * 4);
  for (std::size_t j = 0; j < 2; ++j) {
    for (std::size_t k = 0; k < 2; ++k) {
      const QState product = tensor(std::vector{states[j], states[k]});
      for (std::size_t i = 0; i < outcomes; ++i) table[i * 4 + j * 2 + k] = born(basis[i], product);
    }
  }
  // Born values of a complete basis sum to one only up to rounding.
  for (std::size_t t = 0; t < 4; ++t) {
    double sum = 0.0;
    for (std::size_t i = 0; i < outcomes; ++i) sum += table[i * 4 + t];
    for (std::size_t i = 0; i < outcomes; ++i) table[i * 4 + t] /= sum;
  }
  QuantumAnnotation quantum;
  quantum.states.emplace("psi_1", psi1);
  quantum.states.emplace("psi_2", psi2);
  quantum.measurements.emplace("phi", basis);
  return OntModel(std::move(space), std::move(preps),
                  UniversalResponse{"phi", basis.labels(), std::move(table)}, 2, std::move(quantum));
}

OntModel contextual_escape(EscapeScene scene) {
  if (scene == EscapeScene::BeamSplitter) return build_beam_splitter_model();

  // psi_1 = |->, psi_2 = |+>, both spread over the same four cells.
  LambdaSpace space = LambdaSpace::uniform(4, 0.25);
  const std::vector<std::size_t> all{0, 1, 2, 3};
  std::vector<PreparationDensity> preps{uniform_density(space, "psi_1", all),
                                        uniform_density(space, "psi_2", all)};
  ContextualResponse response;
  response.outcomes = {"+", "-"};
  response.tables[{"psi_1", "pm"}] = {0, 0, 0, 0, 1, 1, 1, 1};
  response.tables[{"psi_2", "pm"}] = {1, 1, 1, 1, 0, 0, 0, 0};
  QuantumAnnotation quantum;
  quantum.states.emplace("psi_1", ket_minus());
  quantum.states.emplace("psi_2", ket_plus());
  quantum.measurements.emplace("pm", plus_minus_basis());
  return OntModel(std::move(space), std::move(preps), std::move(response), 1, std::move(quantum));
}

DeterminismReport determinism_check(const OntModel& model, double tol) {
  DeterminismReport report;
  auto scan = [&](const std::string& context, std::span<const double> table, std::size_t tuples) {
    for (std::size_t idx = 0; idx < table.size(); ++idx) {
      const double v = table[idx];
      if (std::abs(v) > tol && std::abs(v - 1.0) > tol) {
        report.offending.push_back({context, idx / tuples, idx % tuples, v});
      }
    }
  };
  if (const auto* u = std::get_if<UniversalResponse>(&model.response())) {
    scan("universal", u->table, model.tuple_count());
  } else {
    for (const auto& [key, table] : std::get<ContextualResponse>(model.response()).tables) {
      scan(key.first + "/" + key.second, table, model.space().size());
    }
  }
  report.deterministic = report.offending.empty();
  return report;
}

double born_discrepancy(const OntModel& model) {
  const QuantumAnnotation& q = model.quantum();
  double worst = 0.0;
  bool compared = false;
  for (const auto& [setting, basis] : q.measurements) {
    if (const auto* u = std::get_if<UniversalResponse>(&model.response())) {
      if (u->setting != setting) continue;
      std::vector<std::string> labels;
      std::vector<QState> states;
      for (const auto& [label, s] : q.states) {
        labels.push_back(label);
        states.push_back(s);
      }
      if (labels.empty()) continue;
      const std::size_t count = checked_power(labels.size(), model.arity());
      for (std::size_t t = 0; t < count; ++t) {
        const std::vector<std::size_t> tuple = digits(t, labels.size(), model.arity());
        std::vector<std::string> names;
        std::vector<QState> factors;
        for (std::size_t p : tuple) {
          names.push_back(labels[p]);
          factors.push_back(states[p]);
        }
        const QState product = tensor(factors);
        if (product.dim() != basis[0].dim()) continue;
        for (std::size_t i = 0; i < basis.size(); ++i) {
          const double predicted = model.arity() == 1
                                       ? predict(model, names[0], setting, u->outcomes[i])
                                       : predict_product(model, names, basis, i);
          worst = std::max(worst, std::abs(predicted - born(basis[i], product)));
          compared = true;
        }
      }
    } else {
      const auto& c = std::get<ContextualResponse>(model.response());
      for (const auto& [label, state] : q.states) {
        if (!c.tables.contains({label, setting})) continue;
        for (std::size_t i = 0; i < basis.size(); ++i) {
          worst = std::max(worst, std::abs(predict(model, label, setting, c.outcomes[i]) -
                                           born(basis[i], state)));
          compared = true;
        }
      }
    }
  }
  if (!compared) throw DomainError("model carries no quantum states and measurements to compare");
  return worst;
}

nlohmann::json to_json(const ZeroConstraint& c) {
  return {{"outcome", c.outcome}, {"preparation", c.preparation}, {"born", c.born}};
}

nlohmann::json to_json(const ContradictionCertificate& c) {
  nlohmann::json forcing = nlohmann::json::array();
  for (const ZeroConstraint& z : c.forcing) forcing.push_back(to_json(z));
  return {{"witness", c.witness},
          {"forcing", forcing},
          {"violated", "sum_i xi(i|witness) = 1 while every xi(i|witness) = 0"}};
}

nlohmann::json to_json(const FeasibilityProblem& problem, const FeasibilityReport& report) {
  using nlohmann::json;
  json zeros = json::array();
  for (const ZeroConstraint& z : problem.zeros) zeros.push_back(to_json(z));
  json j{{"scene", problem.scene.name},
         {"status", to_string(report.status)},
         {"rows", problem.rows},
         {"cols", problem.cols},
         {"iterations", report.iterations},
         {"artificial_residual", report.artificial_residual},
         {"constraint_residual", report.constraint_residual},
         {"zero_constraints", zeros},
         {"certificate", report.certificate ? to_json(*report.certificate) : json(nullptr)}};
  json witness = json::array();
  if (report.status == FeasibilityStatus::Feasible) {
    const std::size_t tuples = problem.tuples.size();
    for (std::size_t c = 0; c < problem.cols; ++c) {
      if (report.witness[c] <= 0.0) continue;
      witness.push_back({{"outcome", problem.scene.basis.labels()[c / tuples]},
                         {"lambda", problem.tuples[c % tuples]},
                         {"xi", report.witness[c]}});
    }
  }
  j["witness"] = std::move(witness);
  return j;
}

}  // namespace psilab
