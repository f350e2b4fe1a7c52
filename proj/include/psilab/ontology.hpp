#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include <json.hpp>

#include "psilab/qcore.hpp"

namespace psilab {

struct LambdaPoint {
  std::optional<double> coordinate;  // position along the packet axis, if geometric
  double weight = 1.0;               // cell measure
};

// Finite, ordered set of ontic states.
class LambdaSpace {
 public:
  explicit LambdaSpace(std::vector<LambdaPoint> points);

  // n points of equal weight, no coordinates.
  static LambdaSpace uniform(std::size_t n, double weight = 1.0);

  std::size_t size() const { return points_.size(); }
  const LambdaPoint& operator[](std::size_t i) const { return points_[i]; }
  const std::vector<LambdaPoint>& points() const { return points_; }
  double weight(std::size_t i) const { return points_[i].weight; }
  double total_weight() const;

 private:
  std::vector<LambdaPoint> points_;
};

// rho(lambda|Psi) as a probability per unit weight at every point.
struct PreparationDensity {
  std::string label;
  std::vector<double> density;

  double max() const;
};

// Validates non-negativity and sum(density * weight) == 1 within 1e-10.
PreparationDensity make_density(const LambdaSpace& space, std::string label,
                                std::vector<double> density);

// Uniform over the listed points, zero elsewhere.
PreparationDensity uniform_density(const LambdaSpace& space, std::string label,
                                   std::span<const std::size_t> points);

// Psi-independent response xi(outcome | lambda_1..lambda_arity) for a single
// measurement setting. table[o * tuples + t] where t enumerates lambda tuples
// with the first coordinate most significant.
struct UniversalResponse {
  std::string setting;
  std::vector<std::string> outcomes;
  std::vector<double> table;
};

// Psi-conditioned response P(outcome | lambda, Psi, setting); one table
// [o * |Lambda| + l] per (preparation label, setting).
struct ContextualResponse {
  std::vector<std::string> outcomes;
  std::map<std::pair<std::string, std::string>, std::vector<double>> tables;
};

using ResponseModel = std::variant<UniversalResponse, ContextualResponse>;

// Quantum states and measurements the labels stand for, when known.
struct QuantumAnnotation {
  std::map<std::string, QState> states;
  std::map<std::string, MeasurementBasis> measurements;  // outcome i = basis vector i
};

class OntModel {
 public:
  // arity > 1 is only meaningful for a UniversalResponse and means joint
  // preparations factorize as rho_j(lambda) rho_k(lambda') ...
  OntModel(LambdaSpace space, std::vector<PreparationDensity> preparations,
           ResponseModel response, std::size_t arity = 1, QuantumAnnotation quantum = {});

  const LambdaSpace& space() const { return space_; }
  const std::map<std::string, PreparationDensity>& preparations() const { return preparations_; }
  const PreparationDensity& preparation(const std::string& label) const;
  const ResponseModel& response() const { return response_; }
  std::size_t arity() const { return arity_; }
  const QuantumAnnotation& quantum() const { return quantum_; }

  bool is_contextual() const { return std::holds_alternative<ContextualResponse>(response_); }
  const std::vector<std::string>& outcomes() const;
  std::size_t outcome_index(const std::string& name) const;
  std::size_t tuple_count() const { return tuple_count_; }

 private:
  LambdaSpace space_;
  std::map<std::string, PreparationDensity> preparations_;
  ResponseModel response_;
  std::size_t arity_;
  std::size_t tuple_count_;
  QuantumAnnotation quantum_;
};

// sum_lambda response(outcome|lambda[,prep,setting]) rho(lambda|prep) w(lambda).
double predict(const OntModel& model, const std::string& preparation, const std::string& setting,
               const std::string& outcome);

// Joint-preparation prediction for a universal model of matching arity:
// sum over lambda tuples of xi(i|tuple) prod_k rho_{label_k}(lambda_k) w(lambda_k).
double predict_product(const OntModel& model, std::span<const std::string> labels,
                       const MeasurementBasis& basis, std::size_t outcome);

// P(outcome, lambda | prep) = P(outcome | lambda, prep) rho(lambda|prep) w(lambda),
// indexed [outcome][lambda]. Marginalizing lambda gives predict().
std::vector<std::vector<double>> joint_distribution(const OntModel& model,
                                                    const std::string& preparation,
                                                    const std::string& setting);

// Default support cutoff: 1e-12 of the density's maximum.
double default_support_threshold(const PreparationDensity& density);

// Points where density > eps.
std::vector<std::size_t> support(const PreparationDensity& density, double eps);
std::vector<std::size_t> support(const PreparationDensity& density);

// Total weight of support(d1) intersect support(d2).
double overlap(const LambdaSpace& space, const PreparationDensity& d1, const PreparationDensity& d2,
               std::optional<double> eps = std::nullopt);

enum class Classification { PsiOntic, PsiEpistemic };

const char* to_string(Classification c);

// PsiOntic iff every pair of distinct preparations has zero overlap.
Classification classify(const OntModel& model, std::optional<double> eps = std::nullopt);

// Two disjoint entrance packets of `cells_per_gate` cells each (gate 1 at
// negative coordinates, gate 2 at positive). Preparations psi_1, psi_2, plus,
// minus; contextual responses for setting "gates" with outcomes "3" and "4".
//
// plus always exits at gate 3 and minus at gate 4. For psi_1 and psi_2 the
// lower half of the packet (by coordinate) exits at gate 3, the upper half at
// gate 4, so P(3|+) = P(4|-) = 1.
OntModel build_beam_splitter_model(std::size_t cells_per_gate = 4);

nlohmann::json to_json(const OntModel& model);
OntModel model_from_json(const nlohmann::json& j);

}  // namespace psilab
