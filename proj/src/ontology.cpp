#include "psilab/ontology.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>

#include "psilab/errors.hpp"

namespace psilab {

namespace {

constexpr double kNormalizationTol = 1e-10;
constexpr double kResponseTol = 1e-12;

void check_response_table(std::span<const double> table, std::size_t outcomes, std::size_t tuples,
                          const std::string& what) {
  if (table.size() != outcomes * tuples) {
    throw DomainError(what + ": table has " + std::to_string(table.size()) + " entries, expected " +
                      std::to_string(outcomes * tuples));
  }
  for (double v : table) {
    if (!(v >= 0.0 && v <= 1.0)) throw DomainError(what + ": response entry outside [0, 1]");
  }
  for (std::size_t t = 0; t < tuples; ++t) {
    double sum = 0.0;
    for (std::size_t o = 0; o < outcomes; ++o) sum += table[o * tuples + t];
    if (std::abs(sum - 1.0) > kResponseTol) {
      throw DomainError(what + ": responses at lambda tuple " + std::to_string(t) +
                        " sum to " + std::to_string(sum));
    }
  }
}

std::size_t outcome_lookup(const std::vector<std::string>& outcomes, const std::string& name) {
  const auto it = std::find(outcomes.begin(), outcomes.end(), name);
  if (it == outcomes.end()) throw LookupError("unknown outcome '" + name + "'");
  return static_cast<std::size_t>(it - outcomes.begin());
}

// Response row P(outcome | lambda, ...) for an arity-1 prediction.
std::span<const double> response_row(const OntModel& model, const std::string& preparation,
                                     const std::string& setting, std::size_t outcome) {
  const std::size_t n = model.space().size();
  if (const auto* u = std::get_if<UniversalResponse>(&model.response())) {
    if (model.arity() != 1) {
      throw DomainError("model has arity " + std::to_string(model.arity()) +
                        "; use predict_product for joint preparations");
    }
    if (u->setting != setting) throw LookupError("unknown measurement setting '" + setting + "'");
    return std::span<const double>(u->table).subspan(outcome * n, n);
  }
  const auto& c = std::get<ContextualResponse>(model.response());
  const auto it = c.tables.find({preparation, setting});
  if (it == c.tables.end()) {
    throw LookupError("no response for preparation '" + preparation + "' and setting '" + setting +
                      "'");
  }
  return std::span<const double>(it->second).subspan(outcome * n, n);
}

nlohmann::json state_to_json(const QState& s) {
  nlohmann::json amps = nlohmann::json::array();
  for (const complex& a : s.amplitudes()) amps.push_back({a.real(), a.imag()});
  return {{"qubits", s.qubits()}, {"amplitudes", amps}};
}

QState state_from_json(const nlohmann::json& j) {
  std::vector<complex> amps;
  for (const auto& a : j.at("amplitudes")) amps.emplace_back(a.at(0).get<double>(), a.at(1).get<double>());
  return QState(j.at("qubits").get<std::size_t>(), std::move(amps));
}

}  // namespace

LambdaSpace::LambdaSpace(std::vector<LambdaPoint> points) : points_(std::move(points)) {
  if (points_.empty()) throw DomainError("a lambda space needs at least one point");
  for (const LambdaPoint& p : points_) {
    if (!(p.weight > 0.0) || !std::isfinite(p.weight)) {
      throw DomainError("lambda point weights must be finite and strictly positive");
    }
  }
}

LambdaSpace LambdaSpace::uniform(std::size_t n, double weight) {
  return LambdaSpace(std::vector<LambdaPoint>(n, LambdaPoint{std::nullopt, weight}));
}

double LambdaSpace::total_weight() const {
  double sum = 0.0;
  for (const LambdaPoint& p : points_) sum += p.weight;
  return sum;
}

double PreparationDensity::max() const {
  return density.empty() ? 0.0 : *std::max_element(density.begin(), density.end());
}

PreparationDensity make_density(const LambdaSpace& space, std::string label,
                                std::vector<double> density) {
  if (density.size() != space.size()) {
    throw DomainError("density for '" + label + "' has " + std::to_string(density.size()) +
                      " values on a space of " + std::to_string(space.size()) + " points");
  }
  double mass = 0.0;
  for (std::size_t i = 0; i < density.size(); ++i) {
    if (!(density[i] >= 0.0) || !std::isfinite(density[i])) {
      throw DomainError("density for '" + label + "' must be finite and non-negative");
    }
    mass += density[i] * space.weight(i);
  }
  if (std::abs(mass - 1.0) > kNormalizationTol) {
    throw DomainError("density for '" + label + "' integrates to " + std::to_string(mass));
  }
  return PreparationDensity{std::move(label), std::move(density)};
}

PreparationDensity uniform_density(const LambdaSpace& space, std::string label,
                                   std::span<const std::size_t> points) {
  if (points.empty()) throw DomainError("uniform density over an empty support");
  double mass = 0.0;
  for (std::size_t p : points) {
    if (p >= space.size()) throw DomainError("support point out of range");
    mass += space.weight(p);
  }
  std::vector<double> density(space.size(), 0.0);
  for (std::size_t p : points) density[p] = 1.0 / mass;
  return make_density(space, std::move(label), std::move(density));
}

OntModel::OntModel(LambdaSpace space, std::vector<PreparationDensity> preparations,
                   ResponseModel response, std::size_t arity, QuantumAnnotation quantum)
    : space_(std::move(space)),
      response_(std::move(response)),
      arity_(arity),
      tuple_count_(1),
      quantum_(std::move(quantum)) {
  if (arity_ == 0) throw DomainError("arity must be at least 1");
  if (is_contextual() && arity_ != 1) throw DomainError("contextual responses have arity 1");
  for (std::size_t k = 0; k < arity_; ++k) {
    if (tuple_count_ > (std::size_t{1} << 26) / space_.size()) {
      throw DomainError("lambda tuple space too large");
    }
    tuple_count_ *= space_.size();
  }

  for (PreparationDensity& d : preparations) {
    PreparationDensity checked = make_density(space_, d.label, std::move(d.density));
    const std::string label = checked.label;
    if (!preparations_.emplace(label, std::move(checked)).second) {
      throw DomainError("duplicate preparation label '" + label + "'");
    }
  }

  if (const auto* u = std::get_if<UniversalResponse>(&response_)) {
    if (u->outcomes.empty()) throw DomainError("response needs at least one outcome");
    check_response_table(u->table, u->outcomes.size(), tuple_count_, "universal response");
  } else {
    const auto& c = std::get<ContextualResponse>(response_);
    if (c.outcomes.empty()) throw DomainError("response needs at least one outcome");
    for (const auto& [key, table] : c.tables) {
      if (!preparations_.contains(key.first)) {
        throw DomainError("response references unknown preparation '" + key.first + "'");
      }
      check_response_table(table, c.outcomes.size(), space_.size(),
                           "response for (" + key.first + ", " + key.second + ")");
    }
  }

  for (const auto& [label, state] : quantum_.states) {
    if (!preparations_.contains(label)) {
      throw DomainError("quantum state given for unknown preparation '" + label + "'");
    }
  }
  for (const auto& [setting, basis] : quantum_.measurements) {
    if (basis.size() != outcomes().size()) {
      throw DomainError("measurement '" + setting + "' has " + std::to_string(basis.size()) +
                        " vectors for " + std::to_string(outcomes().size()) + " outcomes");
    }
  }
}

const PreparationDensity& OntModel::preparation(const std::string& label) const {
  const auto it = preparations_.find(label);
  if (it == preparations_.end()) throw LookupError("unknown preparation '" + label + "'");
  return it->second;
}

const std::vector<std::string>& OntModel::outcomes() const {
  return std::visit([](const auto& r) -> const std::vector<std::string>& { return r.outcomes; },
                    response_);
}

std::size_t OntModel::outcome_index(const std::string& name) const {
  return outcome_lookup(outcomes(), name);
}

double predict(const OntModel& model, const std::string& preparation, const std::string& setting,
               const std::string& outcome) {
  const PreparationDensity& rho = model.preparation(preparation);
  const std::span<const double> row =
      response_row(model, preparation, setting, model.outcome_index(outcome));
  double p = 0.0;
  for (std::size_t l = 0; l < row.size(); ++l) p += row[l] * rho.density[l] * model.space().weight(l);
  return p;
}

double predict_product(const OntModel& model, std::span<const std::string> labels,
                       const MeasurementBasis& basis, std::size_t outcome) {
  const auto* u = std::get_if<UniversalResponse>(&model.response());
  if (u == nullptr) throw DomainError("predict_product needs a universal response");
  if (labels.size() != model.arity()) {
    throw DomainError("arity mismatch: model has arity " + std::to_string(model.arity()) + ", got " +
                      std::to_string(labels.size()) + " labels");
  }
  if (basis.size() != u->outcomes.size()) {
    throw DomainError("basis size does not match the response's outcome count");
  }
  if (outcome >= basis.size()) throw LookupError("outcome index out of range");

  const LambdaSpace& space = model.space();
  const std::size_t n = space.size();
  std::vector<std::vector<double>> mass;  // mass[k][l] = rho_{label_k}(l) w(l)
  for (const std::string& label : labels) {
    const PreparationDensity& rho = model.preparation(label);
    std::vector<double> m(n);
    for (std::size_t l = 0; l < n; ++l) m[l] = rho.density[l] * space.weight(l);
    mass.push_back(std::move(m));
  }

  const std::size_t tuples = model.tuple_count();
  const double* row = u->table.data() + outcome * tuples;
  double p = 0.0;
  for (std::size_t t = 0; t < tuples; ++t) {
    double joint = 1.0;
    std::size_t rest = t;
    for (std::size_t k = labels.size(); k-- > 0;) {
      joint *= mass[k][rest % n];
      rest /= n;
    }
    p += row[t] * joint;
  }
  return p;
}

std::vector<std::vector<double>> joint_distribution(const OntModel& model,
                                                    const std::string& preparation,
                                                    const std::string& setting) {
  const PreparationDensity& rho = model.preparation(preparation);
  std::vector<std::vector<double>> joint;
  for (std::size_t o = 0; o < model.outcomes().size(); ++o) {
    const std::span<const double> row = response_row(model, preparation, setting, o);
    std::vector<double> r(row.size());
    for (std::size_t l = 0; l < row.size(); ++l) r[l] = row[l] * rho.density[l] * model.space().weight(l);
    joint.push_back(std::move(r));
  }
  return joint;
}

double default_support_threshold(const PreparationDensity& density) {
  return 1e-12 * density.max();
}

std::vector<std::size_t> support(const PreparationDensity& density, double eps) {
  if (!(eps >= 0.0)) throw DomainError("support threshold must be non-negative");
  std::vector<std::size_t> points;
  for (std::size_t l = 0; l < density.density.size(); ++l) {
    if (density.density[l] > eps) points.push_back(l);
  }
  return points;
}

std::vector<std::size_t> support(const PreparationDensity& density) {
  return support(density, default_support_threshold(density));
}

double overlap(const LambdaSpace& space, const PreparationDensity& d1, const PreparationDensity& d2,
               std::optional<double> eps) {
  if (d1.density.size() != space.size() || d2.density.size() != space.size()) {
    throw DomainError("densities live on different lambda spaces");
  }
  const std::vector<std::size_t> s1 = eps ? support(d1, *eps) : support(d1);
  const std::vector<std::size_t> s2 = eps ? support(d2, *eps) : support(d2);
  std::vector<std::size_t> common;
  std::set_intersection(s1.begin(), s1.end(), s2.begin(), s2.end(), std::back_inserter(common));
  double w = 0.0;
  for (std::size_t l : common) w += space.weight(l);
  return w;
}

const char* to_string(Classification c) {
  return c == Classification::PsiOntic ? "psi-ontic" : "psi-epistemic";
}

Classification classify(const OntModel& model, std::optional<double> eps) {
  const auto& preps = model.preparations();
  if (preps.size() < 2) throw DomainError("classification needs at least two preparations");
  for (auto a = preps.begin(); a != preps.end(); ++a) {
    for (auto b = std::next(a); b != preps.end(); ++b) {
      if (overlap(model.space(), a->second, b->second, eps) > 0.0) {
        return Classification::PsiEpistemic;
      }
    }
  }
  return Classification::PsiOntic;
}

OntModel build_beam_splitter_model(std::size_t cells_per_gate) {
  if (cells_per_gate < 2 || cells_per_gate % 2 != 0) {
    throw DomainError("each entrance packet needs an even number of cells, at least 2");
  }
  const std::size_t m = cells_per_gate;
  const double cells = static_cast<double>(m);

  std::vector<LambdaPoint> points;
  for (std::size_t c = 0; c < m; ++c) points.push_back({-cells - 0.5 + static_cast<double>(c), 1.0});
  for (std::size_t c = 0; c < m; ++c) points.push_back({1.5 + static_cast<double>(c), 1.0});
  LambdaSpace space(std::move(points));

  std::vector<std::size_t> gate1(m), gate2(m), both(2 * m);
  for (std::size_t c = 0; c < m; ++c) {
    gate1[c] = c;
    gate2[c] = m + c;
  }
  for (std::size_t c = 0; c < 2 * m; ++c) both[c] = c;

  std::vector<PreparationDensity> preps{
      uniform_density(space, "psi_1", gate1), uniform_density(space, "psi_2", gate2),
      uniform_density(space, "plus", both), uniform_density(space, "minus", both)};

  const std::size_t n = space.size();
  auto constant = [n](std::size_t outcome) {
    std::vector<double> t(2 * n, 0.0);
    for (std::size_t l = 0; l < n; ++l) t[outcome * n + l] = 1.0;
    return t;
  };
  // Lower half of each entrance packet exits at gate 3.
  std::vector<double> split(2 * n, 0.0);
  for (std::size_t l = 0; l < n; ++l) {
    const bool lower = (l % m) < m / 2;
    split[(lower ? 0 : 1) * n + l] = 1.0;
  }

  ContextualResponse response;
  response.outcomes = {"3", "4"};
  response.tables[{"plus", "gates"}] = constant(0);
  response.tables[{"minus", "gates"}] = constant(1);
  response.tables[{"psi_1", "gates"}] = split;
  response.tables[{"psi_2", "gates"}] = split;

  const double r = 1.0 / std::numbers::sqrt2;
  const complex i1(0.0, 1.0);
  QuantumAnnotation quantum;
  quantum.states.emplace("psi_1", ket0());
  quantum.states.emplace("psi_2", ket1());
  quantum.states.emplace("plus", QState(1, {r, i1 * r}));
  quantum.states.emplace("minus", QState(1, {r, -i1 * r}));
  quantum.measurements.emplace(
      "gates", MeasurementBasis({QState(1, {r, i1 * r}), QState(1, {r, -i1 * r})}, {"3", "4"}));

  return OntModel(std::move(space), std::move(preps), std::move(response), 1, std::move(quantum));
}

nlohmann::json to_json(const OntModel& model) {
  using nlohmann::json;
  json j;
  json lambda = json::array();
  for (const LambdaPoint& p : model.space().points()) {
    lambda.push_back({{"coordinate", p.coordinate ? json(*p.coordinate) : json(nullptr)},
                      {"weight", p.weight}});
  }
  j["lambda"] = std::move(lambda);
  j["arity"] = model.arity();

  json preps = json::array();
  for (const auto& [label, d] : model.preparations()) {
    preps.push_back({{"label", label}, {"density", d.density}});
  }
  j["preparations"] = std::move(preps);

  if (const auto* u = std::get_if<UniversalResponse>(&model.response())) {
    j["response"] = {{"kind", "universal"},
                     {"setting", u->setting},
                     {"outcomes", u->outcomes},
                     {"table", u->table}};
  } else {
    const auto& c = std::get<ContextualResponse>(model.response());
    json tables = json::array();
    for (const auto& [key, table] : c.tables) {
      tables.push_back({{"preparation", key.first}, {"setting", key.second}, {"table", table}});
    }
    j["response"] = {{"kind", "contextual"}, {"outcomes", c.outcomes}, {"tables", tables}};
  }

  json states = json::array();
  for (const auto& [label, s] : model.quantum().states) {
    json e = state_to_json(s);
    e["label"] = label;
    states.push_back(std::move(e));
  }
  json measurements = json::array();
  for (const auto& [setting, basis] : model.quantum().measurements) {
    json vectors = json::array();
    for (const QState& v : basis.vectors()) vectors.push_back(state_to_json(v));
    measurements.push_back({{"setting", setting}, {"labels", basis.labels()}, {"vectors", vectors}});
  }
  j["quantum"] = {{"states", states}, {"measurements", measurements}};
  return j;
}

OntModel model_from_json(const nlohmann::json& j) {
  std::vector<LambdaPoint> points;
  for (const auto& p : j.at("lambda")) {
    LambdaPoint lp;
    if (!p.at("coordinate").is_null()) lp.coordinate = p.at("coordinate").get<double>();
    lp.weight = p.at("weight").get<double>();
    points.push_back(lp);
  }
  LambdaSpace space(std::move(points));

  std::vector<PreparationDensity> preps;
  for (const auto& p : j.at("preparations")) {
    preps.push_back({p.at("label").get<std::string>(), p.at("density").get<std::vector<double>>()});
  }

  const auto& r = j.at("response");
  ResponseModel response;
  const std::string kind = r.at("kind").get<std::string>();
  if (kind == "universal") {
    response = UniversalResponse{r.at("setting").get<std::string>(),
                                 r.at("outcomes").get<std::vector<std::string>>(),
                                 r.at("table").get<std::vector<double>>()};
  } else if (kind == "contextual") {
    ContextualResponse c;
    c.outcomes = r.at("outcomes").get<std::vector<std::string>>();
    for (const auto& t : r.at("tables")) {
      c.tables[{t.at("preparation").get<std::string>(), t.at("setting").get<std::string>()}] =
          t.at("table").get<std::vector<double>>();
    }
    response = std::move(c);
  } else {
    throw DomainError("unknown response kind '" + kind + "'");
  }

  QuantumAnnotation quantum;
  if (j.contains("quantum")) {
    for (const auto& s : j.at("quantum").at("states")) {
      quantum.states.emplace(s.at("label").get<std::string>(), state_from_json(s));
    }
    for (const auto& m : j.at("quantum").at("measurements")) {
      std::vector<QState> vectors;
      for (const auto& v : m.at("vectors")) vectors.push_back(state_from_json(v));
      quantum.measurements.emplace(
          m.at("setting").get<std::string>(),
          MeasurementBasis(std::move(vectors), m.at("labels").get<std::vector<std::string>>()));
    }
  }
  return OntModel(std::move(space), std::move(preps), std::move(response),
                  j.at("arity").get<std::size_t>(), std::move(quantum));
}

}  // namespace psilab
