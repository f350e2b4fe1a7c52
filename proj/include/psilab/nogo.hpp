#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "psilab/ontology.hpp"
#include "psilab/qcore.hpp"

namespace psilab {

// A set of single-system preparations measured `arity` at a time in a joint
// basis. Joint preparations are indexed by tuples over `labels`, first
// system most significant.
struct Scene {
  std::string name;
  std::string setting;
  std::vector<std::string> labels;
  std::vector<QState> states;
  std::size_t arity = 1;
  MeasurementBasis basis;

  std::size_t preparation_tuples() const;
  std::vector<std::size_t> tuple(std::size_t index) const;
  QState product_state(std::span<const std::size_t> tuple) const;
};

// Psi_1 = |0>, Psi_2 = |+>, measured in pairs in the four-vector entangled basis.
Scene pbr_two_qubit_scene();

// Psi_1 = |->, Psi_2 = |+>, measured singly in {|+>, |->}.
Scene orthogonal_scene();

// psi_0, psi_1 of make_qubit_pair(theta) measured n at a time in a searched
// basis; empty when the basis search fails.
std::optional<Scene> pbr_n_scene(double theta, std::size_t qubits,
                                 const BasisSearchConfig& config = {});

// born_table[t][i] = |<basis_i | product_state(tuple t)>|^2
std::vector<std::vector<double>> born_table(const Scene& scene);

struct ZeroConstraint {
  std::size_t outcome = 0;
  std::vector<std::string> preparation;  // one label per system
  double born = 0.0;
};

// Every (outcome, preparation tuple) whose Born probability is below tol,
// ordered by outcome, then tuple.
std::vector<ZeroConstraint> zero_constraints(const Scene& scene, double tol = tolerance::verification);

// Model over `space` carrying the scene's preparation densities and a
// placeholder uniform universal response of the scene's arity. The
// impossibility arguments only consult the densities.
OntModel preparation_model(const Scene& scene, LambdaSpace space,
                           std::vector<PreparationDensity> densities);

// Two-preparation model with uniform densities on `cells` points each, the
// last `shared` points of the first support being the first of the second.
// shared = 0 gives disjoint supports.
OntModel support_pattern_model(const Scene& scene, std::size_t cells = 4, std::size_t shared = 2);

struct ContradictionCertificate {
  std::vector<std::size_t> witness;       // lambda tuple where every xi is forced to 0
  std::vector<ZeroConstraint> forcing;    // forcing[i] pins outcome i at the witness
};

// Searches for a lambda tuple inside the supports where every outcome is
// pinned to zero by some zero constraint, which contradicts
// sum_i xi(i|tuple) = 1. Empty when no such tuple exists. Throws DomainError
// for contextual models: with xi conditioned on the preparation, different
// constraints no longer act on the same response and nothing is forced.
std::optional<ContradictionCertificate> analytic_contradiction(
    const OntModel& model, std::span<const ZeroConstraint> constraints,
    std::optional<double> eps = std::nullopt);

// Linear system for the existence of a psi-independent response reproducing
// the scene. Variables xi(i|tuple) >= 0 for tuples inside the union of
// supports, column i * tuples.size() + t. Rows: one normalization per tuple,
// then one reproduction row per (preparation tuple, outcome).
struct FeasibilityProblem {
  Scene scene;
  OntModel model;
  std::vector<ZeroConstraint> zeros;
  std::vector<std::vector<std::size_t>> tuples;
  std::vector<std::vector<double>> born;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t normalization_rows = 0;
  std::vector<double> matrix;  // row-major rows x cols
  std::vector<double> rhs;
  std::vector<std::string> row_names;
};

FeasibilityProblem build_feasibility_problem(const Scene& scene, const OntModel& model,
                                             bool reproduce = true);

enum class FeasibilityStatus { Feasible, Infeasible, Indeterminate };

const char* to_string(FeasibilityStatus s);

struct FeasibilityReport {
  FeasibilityStatus status = FeasibilityStatus::Indeterminate;
  std::vector<double> witness;  // xi values per column when Feasible
  std::optional<ContradictionCertificate> certificate;
  double artificial_residual = 0.0;   // phase-1 objective at termination
  double constraint_residual = 0.0;   // max |A xi - b| of the witness
  std::size_t iterations = 0;
};

inline constexpr std::size_t kLpIterationCap = 1'000'000;

FeasibilityReport lp_feasibility(const FeasibilityProblem& problem, double tol = 1e-9,
                                 std::size_t max_iterations = kLpIterationCap);

// max(|A xi - b|_inf, -min xi): zero for an exact feasible point.
double witness_residual(const FeasibilityProblem& problem, std::span<const double> xi);

// Universal model whose response is the LP witness; tuples outside the
// supports get the uniform response.
OntModel witness_model(const FeasibilityProblem& problem, const FeasibilityReport& report);

// lambda in bijection with the two states: rho_j is a point mass on lambda_j
// and xi(i|lambda_j, lambda_k) = Born(basis_i, psi_j (x) psi_k).
OntModel construct_disjoint_model(const QState& psi1, const QState& psi2,
                                  const MeasurementBasis& basis);

enum class EscapeScene { BeamSplitter, SingleQubitOrthogonal };

// Psi-conditioned model with overlapping supports that reproduces the scene.
OntModel contextual_escape(EscapeScene scene);

struct OffendingEntry {
  std::string context;  // "universal" or "<preparation>/<setting>"
  std::size_t outcome = 0;
  std::size_t lambda = 0;  // lambda tuple index
  double value = 0.0;
};

struct DeterminismReport {
  bool deterministic = true;
  std::vector<OffendingEntry> offending;
};

// Every response entry within tol of 0 or 1.
DeterminismReport determinism_check(const OntModel& model, double tol = 1e-12);

// Max |prediction - Born| over every annotated preparation (or product of
// preparations, for universal models of arity > 1), setting and outcome.
double born_discrepancy(const OntModel& model);

nlohmann::json to_json(const ZeroConstraint& c);
nlohmann::json to_json(const ContradictionCertificate& c);
nlohmann::json to_json(const FeasibilityProblem& problem, const FeasibilityReport& report);

}  // namespace psilab
