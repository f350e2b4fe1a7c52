#include "psilab/cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <numbers>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "psilab/bohm.hpp"
#include "psilab/errors.hpp"
#include "psilab/nogo.hpp"
#include "psilab/ontology.hpp"
#include "psilab/qcore.hpp"
#include "psilab/random.hpp"

namespace psilab::cli {

using nlohmann::json;

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

enum class Kind { Real, Count, Text };

struct KeySpec {
  std::string name;
  std::string fallback;
  Kind kind;
  std::string help;
  bool hashed = true;
};

struct Raw {
  std::string value;
  std::string origin;
};

// Typed view over the merged key=value settings of one subcommand.
class Values {
 public:
  Values(const std::vector<KeySpec>& specs, std::map<std::string, Raw> raw) : raw_(std::move(raw)) {
    for (const KeySpec& k : specs) {
      const Raw& r = raw_.at(k.name);
      std::string canon;
      switch (k.kind) {
        case Kind::Real: {
          const double v = parse_real(k.name, r);
          reals_[k.name] = v;
          canon = fmt17(v);
          break;
        }
        case Kind::Count: {
          const std::uint64_t v = parse_count(k.name, r);
          counts_[k.name] = v;
          canon = std::to_string(v);
          break;
        }
        case Kind::Text:
          canon = r.value;
          break;
      }
      texts_[k.name] = canon;
      if (k.hashed) canonical_[k.name] = canon;
    }
  }

  double real(const std::string& key) const { return reals_.at(key); }
  std::uint64_t count(const std::string& key) const { return counts_.at(key); }
  const std::string& text(const std::string& key) const { return texts_.at(key); }
  const std::string& origin(const std::string& key) const { return raw_.at(key).origin; }
  const std::map<std::string, std::string>& canonical() const { return canonical_; }

  [[noreturn]] void fail(const std::string& key, const std::string& message) const {
    throw ConfigError(origin(key) + ": " + key + ": " + message);
  }

 private:
  static double parse_real(const std::string& key, const Raw& r) {
    const char* begin = r.value.c_str();
    char* end = nullptr;
    const double v = std::strtod(begin, &end);
    if (r.value.empty() || *end != '\0' || !std::isfinite(v)) {
      throw ConfigError(r.origin + ": " + key + ": expected a finite number, got '" + r.value + "'");
    }
    return v;
  }

  static std::uint64_t parse_count(const std::string& key, const Raw& r) {
    const bool digits = !r.value.empty() && std::all_of(r.value.begin(), r.value.end(),
                                                          [](char c) { return c >= '0' && c <= '9'; });
    errno = 0;
    const std::uint64_t v = digits ? std::strtoull(r.value.c_str(), nullptr, 10) : 0;
    if (!digits || errno == ERANGE) {
      throw ConfigError(r.origin + ": " + key + ": expected a non-negative integer, got '" + r.value + "'");
    }
    return v;
  }

  std::map<std::string, Raw> raw_;
  std::map<std::string, double> reals_;
  std::map<std::string, std::uint64_t> counts_;
  std::map<std::string, std::string> texts_;
  std::map<std::string, std::string> canonical_;
};

// Output directory and emit flags shared by every subcommand.
class Sink {
 public:
  Sink(const Values& v, std::string scenario) : dir_(v.text("out")), scenario_(std::move(scenario)) {
    hash_ = config_hash(scenario_, v.canonical());
    std::stringstream list(v.text("emit"));
    std::string item;
    while (std::getline(list, item, ',')) {
      item = trim(item);
      if (item == "none" || item.empty()) continue;
      if (item != "csv" && item != "json" && item != "svg") {
        v.fail("emit", "unknown output kind '" + item + "' (expected csv, json, svg or none)");
      }
      kinds_.insert(item);
    }
  }

  const std::string& hash() const { return hash_; }
  bool wants(const std::string& kind) const { return kinds_.contains(kind); }

  void json_file(const std::string& name, const json& j) const {
    if (wants("json")) write(name, j.dump(2) + "\n");
  }

  void csv_file(const std::string& name, const std::string& body) const {
    if (wants("csv")) write(name, "# psilab " + scenario_ + " config_hash=" + hash_ + "\n" + body);
  }

  void svg_file(const std::string& name, const std::string& body) const {
    if (wants("svg")) write(name, body);
  }

 private:
  void write(const std::string& name, const std::string& content) const {
    std::filesystem::create_directories(dir_);
    const std::filesystem::path path = std::filesystem::path(dir_) / name;
    std::ofstream f(path, std::ios::binary);
    f << content;
    if (!f) throw std::runtime_error("cannot write " + path.string());
  }

  std::string dir_;
  std::string scenario_;
  std::string hash_;
  std::set<std::string> kinds_;
};

struct Context {
  const Values& values;
  const Sink& sink;
  std::ostream& out;
  std::ostream& err;
};

struct Command {
  std::string name;
  std::string help;
  std::vector<KeySpec> keys;
  std::function<int(Context&)> body;
};

const std::vector<KeySpec> kOutputKeys{
    {"out", "psilab_out", Kind::Text, "output directory (PSILAB_OUT overrides the config file)", false},
    {"emit", "csv,json", Kind::Text, "comma list of outputs to write: csv, json, svg", false},
};

std::vector<KeySpec> with_output_keys(std::vector<KeySpec> keys) {
  keys.insert(keys.end(), kOutputKeys.begin(), kOutputKeys.end());
  return keys;
}

json base_report(const Context& c, const std::string& scenario) {
  return {{"scenario", scenario}, {"config_hash", c.sink.hash()}};
}

// ---------------------------------------------------------------- pbr-table

const std::vector<std::vector<double>>& reference_table() {
  static const double h = 0.5, r = std::numbers::sqrt2 / 2.0;
  static const std::vector<std::vector<double>> t{
      {0.0, h, h, r}, {h, 0.0, r, h}, {h, r, 0.0, h}, {r, h, h, 0.0}};
  return t;
}

int cmd_pbr_table(Context& c) {
  const Scene scene = pbr_two_qubit_scene();
  std::vector<QState> rows;
  std::vector<std::string> labels;
  for (std::size_t t = 0; t < scene.preparation_tuples(); ++t) {
    const auto tuple = scene.tuple(t);
    rows.push_back(scene.product_state(tuple));
    labels.push_back(scene.labels[tuple[0]] + " x " + scene.labels[tuple[1]]);
  }
  const CoefficientTable table = coefficient_table(rows, scene.basis);
  double worst = 0.0;
  for (std::size_t j = 0; j < table.size(); ++j) {
    for (std::size_t i = 0; i < table[j].size(); ++i) {
      worst = std::max(worst, std::abs(table[j][i] - reference_table()[j][i]));
    }
  }
  std::ostringstream csv;
  write_coefficient_csv(csv, table, labels);
  c.out << csv.str();
  c.sink.csv_file("pbr_table.csv", csv.str());

  json j = base_report(c, "pbr-table");
  j["rows"] = labels;
  j["columns"] = scene.basis.labels();
  j["magnitudes"] = table;
  j["max_abs_error"] = worst;
  j["ok"] = worst < tolerance::construction;
  c.sink.json_file("pbr_table.json", j);
  if (worst >= tolerance::construction) {
    c.err << "psilab: coefficient table deviates from the expected magnitudes by " << worst << "\n";
    return kExitCheckFailed;
  }
  return kExitOk;
}

// ---------------------------------------------------------------- pbr-check

struct CheckSetup {
  Scene scene;
  OntModel model;
  bool overlapping;
};

CheckSetup check_setup(const Values& v) {
  const std::string& which = v.text("scene");
  const std::uint64_t cells = v.count("cells");
  if (cells < 1 || cells > 16) v.fail("cells", "must lie in [1, 16]");
  const std::uint64_t shared = v.count("shared");
  if (shared < 1 || shared > cells) v.fail("shared", "must lie in [1, cells]");
  auto densities = [&](const Scene& s, bool overlap) {
    return support_pattern_model(s, cells, overlap ? shared : 0);
  };
  if (which == "overlap" || which == "disjoint") {
    Scene s = pbr_two_qubit_scene();
    const bool overlap = which == "overlap";
    OntModel m = densities(s, overlap);
    return {std::move(s), std::move(m), overlap};
  }
  if (which == "orthogonal") {
    Scene s = orthogonal_scene();
    OntModel m = densities(s, true);
    return {std::move(s), std::move(m), true};
  }
  if (which == "pbr-n") {
    const double theta = v.real("theta");
    const std::uint64_t qubits = v.count("qubits");
    if (!(theta > 0.0 && theta < std::numbers::pi / 2)) v.fail("theta", "must lie in (0, pi/2)");
    if (qubits < 2 || qubits > 4) v.fail("qubits", "must lie in [2, 4]");
    BasisSearchConfig cfg;
    cfg.seed = v.count("seed");
    cfg.restarts = v.count("restarts");
    if (cfg.restarts == 0) v.fail("restarts", "must be at least 1");
    std::optional<Scene> s = pbr_n_scene(theta, qubits, cfg);
    if (!s) throw std::runtime_error("no basis orthogonal to every product state was found for theta = " +
                                     fmt17(theta) + ", n = " + std::to_string(qubits));
    OntModel m = densities(*s, true);
    return {std::move(*s), std::move(m), true};
  }
  v.fail("scene", "unknown scene '" + which + "' (expected overlap, disjoint, orthogonal or pbr-n)");
}

int cmd_pbr_check(Context& c) {
  const double tol = c.values.real("lp-tol");
  if (!(tol > 0.0)) c.values.fail("lp-tol", "must be positive");
  const CheckSetup setup = check_setup(c.values);
  const FeasibilityProblem problem = build_feasibility_problem(setup.scene, setup.model);
  const FeasibilityReport report = lp_feasibility(problem, tol);
  const auto certificate = analytic_contradiction(setup.model, problem.zeros);

  const FeasibilityStatus expected =
      setup.overlapping ? FeasibilityStatus::Infeasible : FeasibilityStatus::Feasible;
  const bool analytic_ok = certificate.has_value() == setup.overlapping;
  const bool ok = report.status == expected && analytic_ok;

  json supports = json::object();
  for (const auto& [label, d] : setup.model.preparations()) supports[label] = support(d);
  json j = base_report(c, "pbr-check");
  j["scene"] = c.values.text("scene");
  j["supports"] = supports;
  j["supports_overlap"] = setup.overlapping;
  j["expected_status"] = to_string(expected);
  j["analytic"] = {{"contradiction", certificate.has_value()},
                   {"certificate", certificate ? to_json(*certificate) : json(nullptr)}};
  j["lp"] = to_json(problem, report);
  j["status"] = to_string(report.status);
  j["ok"] = ok;
  c.out << j.dump(2) << "\n";
  c.sink.json_file("pbr_check.json", j);
  return ok ? kExitOk : kExitCheckFailed;
}

// -------------------------------------------------------------- escape-demo

json escape_report(const OntModel& model, bool& ok) {
  double best_overlap = 0.0;
  std::vector<std::string> labels;
  for (const auto& [label, d] : model.preparations()) labels.push_back(label);
  json pairs = json::array();
  for (std::size_t a = 0; a < labels.size(); ++a) {
    for (std::size_t b = a + 1; b < labels.size(); ++b) {
      const double o = overlap(model.space(), model.preparation(labels[a]), model.preparation(labels[b]));
      best_overlap = std::max(best_overlap, o);
      pairs.push_back({{"pair", {labels[a], labels[b]}}, {"overlap", o}});
    }
  }
  const double born = born_discrepancy(model);
  const DeterminismReport det = determinism_check(model);
  const Classification cls = classify(model);
  const bool pass = born < tolerance::construction && best_overlap > 0.0 && det.deterministic;
  ok = ok && pass;
  return {{"born_discrepancy", born},
          {"overlaps", pairs},
          {"max_overlap", best_overlap},
          {"classification", to_string(cls)},
          {"deterministic", det.deterministic},
          {"ok", pass},
          {"model", to_json(model)}};
}

int cmd_escape_demo(Context& c) {
  const std::string& which = c.values.text("scene");
  if (which != "all" && which != "beam-splitter" && which != "orthogonal") {
    c.values.fail("scene", "unknown scene '" + which + "' (expected beam-splitter, orthogonal or all)");
  }
  const std::uint64_t cells = c.values.count("cells");
  if (cells < 2 || cells % 2 != 0 || cells > 4096) c.values.fail("cells", "must be even and in [2, 4096]");
  bool ok = true;
  json j = base_report(c, "escape-demo");
  json scenes = json::object();
  if (which != "orthogonal") scenes["beam-splitter"] = escape_report(build_beam_splitter_model(cells), ok);
  if (which != "beam-splitter") {
    scenes["orthogonal"] = escape_report(contextual_escape(EscapeScene::SingleQubitOrthogonal), ok);
  }
  j["scenes"] = scenes;
  j["ok"] = ok;
  json summary = j;
  for (auto& [name, s] : summary["scenes"].items()) s.erase("model");
  c.out << summary.dump(2) << "\n";
  c.sink.json_file("escape_demo.json", j);
  return ok ? kExitOk : kExitCheckFailed;
}

// ------------------------------------------------------------------- bohm-*

void check_rng(const Values& v) {
  if (v.text("rng") != Rng::algorithm) {
    v.fail("rng", "unsupported generator '" + v.text("rng") + "' (available: " +
                      std::string(Rng::algorithm) + ")");
  }
}

std::size_t threads_of(const Values& v) {
  const std::uint64_t t = v.count("threads");
  if (t == 0 || t > 256) v.fail("threads", "must lie in [1, 256]");
  return static_cast<std::size_t>(t);
}

std::size_t samples_of(const Values& v) {
  const std::uint64_t n = v.count("n");
  if (n == 0 || n > 10'000'000) v.fail("n", "must lie in [1, 10000000]");
  return static_cast<std::size_t>(n);
}

bohm::Grid grid_of(const Values& v) {
  const std::uint64_t cells = v.count("cells");
  if (cells > (1u << 22)) v.fail("cells", "is too large");
  return {v.real("x-min"), v.real("x-max"), static_cast<std::size_t>(cells)};
}

bohm::SternGerlachConfig sg_config(const Values& v) {
  bohm::SternGerlachConfig c;
  c.units = {v.real("hbar"), v.real("mass")};
  c.mu = v.real("mu");
  c.b0 = v.real("b0");
  c.b1 = v.real("b1");
  c.t_on = v.real("t-on");
  c.t_off = v.real("t-off");
  c.grid = grid_of(v);
  c.dt = v.real("dt");
  c.t_final = v.real("t-final");
  c.snapshot_stride = v.count("stride");
  c.sigma0 = v.real("sigma0");
  c.x0 = v.real("x0");
  c.direction = v.text("direction");
  c.validate();
  return c;
}

// 3 sigma binomial band; zero width at p = 0 or 1.
double binomial_band(double p, std::size_t n) {
  return 3.0 * std::sqrt(p * (1.0 - p) / static_cast<double>(std::max<std::size_t>(n, 1)));
}

void emit_paths(const Context& c, const std::string& prefix, std::span<const bohm::Trajectory> paths,
                const bohm::Evolution& ev) {
  if (c.sink.wants("csv")) {
    std::ostringstream traj, field;
    bohm::write_trajectories_csv(traj, paths);
    c.sink.csv_file(prefix + "_trajectories.csv", traj.str());
    bohm::write_field_csv(field, ev, std::max<std::uint64_t>(c.values.count("field-stride"), 1));
    c.sink.csv_file(prefix + "_field.csv", field.str());
  }
  if (c.sink.wants("svg")) {
    std::ostringstream svg;
    bohm::write_trajectories_svg(svg, paths, ev, c.values.count("svg-paths"));
    c.sink.svg_file(prefix + "_trajectories.svg", svg.str());
  }
}

int cmd_bohm_sg(Context& c) {
  check_rng(c.values);
  const bohm::SternGerlachConfig config = sg_config(c.values);
  const double theta = c.values.real("theta");
  if (!(theta >= 0.0 && theta <= std::numbers::pi)) c.values.fail("theta", "must lie in [0, pi]");
  if (c.values.count("field-stride") == 0) c.values.fail("field-stride", "must be at least 1");
  const std::size_t n = samples_of(c.values);
  const bohm::EnsembleRun run =
      bohm::run_ensemble(config, theta, n, c.values.count("seed"), threads_of(c.values));

  const double c2 = std::cos(theta / 2.0);
  const double born = c2 * c2;
  const std::size_t resolved = run.stats.plus + run.stats.minus;
  const double band = binomial_band(born, resolved);
  const bool within = resolved > 0 && std::abs(run.stats.p_plus - born) <= band;
  const bool ok = run.stats.valid && within;

  json j = base_report(c, "bohm-sg");
  j["rng"] = std::string(Rng::algorithm);
  j["theta"] = theta;
  j["direction"] = config.direction;
  j["born_p_plus"] = born;
  j["band_3sigma"] = band;
  j["within_band"] = within;
  j["stats"] = bohm::to_json(run.stats);
  j["ok"] = ok;
  c.out << j.dump(2) << "\n";
  c.sink.json_file("bohm_sg_stats.json", j);
  emit_paths(c, "bohm_sg", run.trajectories, run.evolution);
  if (!ok) {
    c.err << "psilab: ensemble " << (run.stats.valid ? "misses the Born probability" : "is invalid") << "\n";
  }
  return ok ? kExitOk : kExitCheckFailed;
}

int cmd_bohm_bs(Context& c) {
  check_rng(c.values);
  const Values& v = c.values;
  bohm::BeamSplitterConfig config;
  config.units = {v.real("hbar"), v.real("mass")};
  config.grid = grid_of(v);
  config.dt = v.real("dt");
  config.k0 = v.real("k0");
  config.sigma0 = v.real("sigma0");
  config.offset = v.real("offset");
  config.t_final = v.real("t-final");
  config.snapshot_stride = v.count("stride");
  config.transmission = v.real("transmission");
  config.exit_margin = v.real("exit-margin");
  config.validate();
  if (v.count("field-stride") == 0) v.fail("field-stride", "must be at least 1");
  bohm::BeamPreparation prep;
  try {
    prep = bohm::parse_beam_preparation(v.text("prep"));
  } catch (const ConfigError& e) {
    v.fail("prep", e.what());
  }
  const std::size_t n = samples_of(v);
  const bohm::BeamSplitterRun run = bohm::beam_splitter_scene(config, prep, n, v.count("seed"), threads_of(v));

  const double t2 = std::norm(run.calibration.t);
  const double r2 = std::norm(run.calibration.r);
  const bool right = run.calibration.gate3_side > 0;
  double expected = 0.0;
  switch (prep) {
    case bohm::BeamPreparation::Psi1: expected = right ? t2 / (t2 + r2) : r2 / (t2 + r2); break;
    case bohm::BeamPreparation::Psi2: expected = right ? r2 / (t2 + r2) : t2 / (t2 + r2); break;
    case bohm::BeamPreparation::Plus: expected = 1.0; break;
    case bohm::BeamPreparation::Minus: expected = 0.0; break;
  }
  const std::size_t resolved = run.gate3 + run.gate4;
  const double f3 = resolved ? static_cast<double>(run.gate3) / static_cast<double>(resolved) : 0.0;
  const double band = binomial_band(expected, resolved);
  const bool ok = run.valid && resolved > 0 && std::abs(f3 - expected) <= band;

  const std::complex<double> ratio = run.calibration.r / run.calibration.t;
  json j = base_report(c, "bohm-bs");
  j["rng"] = std::string(Rng::algorithm);
  j["preparation"] = bohm::to_string(prep);
  j["calibration"] = {{"alpha", run.calibration.alpha},
                      {"transmission", t2},
                      {"reflection", r2},
                      {"r_over_t", {ratio.real(), ratio.imag()}},
                      {"gate3_side", run.calibration.gate3_side}};
  j["N"] = n;
  j["seed"] = run.seed;
  j["counts"] = {{"gate3", run.gate3}, {"gate4", run.gate4}, {"unresolved", run.unresolved}};
  j["p_gate3"] = f3;
  j["expected_p_gate3"] = expected;
  j["band_3sigma"] = band;
  j["valid"] = run.valid;
  j["ok"] = ok;
  c.out << j.dump(2) << "\n";
  c.sink.json_file("bohm_bs_stats.json", j);
  emit_paths(c, "bohm_bs", run.trajectories, run.evolution);
  return ok ? kExitOk : kExitCheckFailed;
}

// ----------------------------------------------------------------- selftest

int cmd_selftest(Context& c) {
  const std::size_t threads = threads_of(c.values);
  const std::size_t n = samples_of(c.values);
  const std::uint64_t seed = c.values.count("seed");
  json checks = json::array();
  bool all = true;
  auto record = [&](const std::string& name, bool pass, const std::string& detail) {
    c.out << (pass ? "PASS " : "FAIL ") << name << "  " << detail << "\n";
    checks.push_back({{"check", name}, {"pass", pass}, {"detail", detail}});
    all = all && pass;
  };
  auto guarded = [&](const std::string& name, const std::function<void()>& body) {
    try {
      body();
    } catch (const std::exception& e) {
      record(name, false, std::string("exception: ") + e.what());
    }
  };

  guarded("coefficient-table", [&] {
    const Scene s = pbr_two_qubit_scene();
    std::vector<QState> rows;
    for (std::size_t t = 0; t < 4; ++t) rows.push_back(s.product_state(s.tuple(t)));
    const CoefficientTable table = coefficient_table(rows, s.basis);
    double worst = 0.0;
    for (std::size_t j = 0; j < 4; ++j) {
      for (std::size_t i = 0; i < 4; ++i) worst = std::max(worst, std::abs(table[j][i] - reference_table()[j][i]));
    }
    record("coefficient-table", worst < 1e-12, "max error " + fmt17(worst));
  });

  guarded("zero-constraints", [&] {
    const auto z = zero_constraints(pbr_two_qubit_scene());
    const auto zo = zero_constraints(orthogonal_scene());
    double worst = 0.0;
    for (const auto& x : z) worst = std::max(worst, x.born);
    for (const auto& x : zo) worst = std::max(worst, x.born);
    record("zero-constraints", z.size() == 4 && zo.size() == 2 && worst < 1e-12,
           std::to_string(z.size()) + " + " + std::to_string(zo.size()) + " constraints, max " + fmt17(worst));
  });

  guarded("lp-feasibility", [&] {
    const Scene s = pbr_two_qubit_scene();
    const OntModel over = support_pattern_model(s, 4, 2);
    const OntModel disj = support_pattern_model(s, 4, 0);
    const auto r1 = lp_feasibility(build_feasibility_problem(s, over));
    const auto r2 = lp_feasibility(build_feasibility_problem(s, disj));
    record("lp-feasibility",
           r1.status == FeasibilityStatus::Infeasible && r1.certificate && r2.status == FeasibilityStatus::Feasible,
           std::string("overlap ") + to_string(r1.status) + ", disjoint " + to_string(r2.status));
  });

  guarded("contextual-escape", [&] {
    bool ok = true;
    for (EscapeScene e : {EscapeScene::BeamSplitter, EscapeScene::SingleQubitOrthogonal}) {
      const OntModel m = contextual_escape(e);
      ok = ok && born_discrepancy(m) < 1e-12 && determinism_check(m).deterministic &&
           classify(m) == Classification::PsiEpistemic;
    }
    record("contextual-escape", ok, "Born-exact, deterministic, overlapping");
  });

  guarded("conservation", [&] {
    bohm::SternGerlachConfig cfg;
    const bohm::SpinorStepper stepper = bohm::stern_gerlach_stepper(cfg);
    bohm::SpinorField f = bohm::stern_gerlach_packet(cfg, std::numbers::pi / 3);
    const double n0 = f.norm();
    for (int k = 0; k < 1000; ++k) stepper.step(f);
    const double drift = std::abs(f.norm() - n0);
    bohm::SpinorField before = f;
    stepper.step(f);
    bohm::SpinorField mid = f;
    stepper.step(f);
    const double resid = bohm::continuity_residual(before, mid, f, cfg.units, cfg.dt);
    record("conservation", drift < 1e-8 && resid < 1e-4,
           "norm drift " + fmt17(drift) + ", continuity " + fmt17(resid));
  });

  guarded("born-rule", [&] {
    bohm::SternGerlachConfig cfg;
    const double theta = std::numbers::pi / 3;
    const auto run = bohm::run_ensemble(cfg, theta, n, seed, threads);
    const double p = std::pow(std::cos(theta / 2), 2);
    const double band = binomial_band(p, run.stats.plus + run.stats.minus);
    record("born-rule", run.stats.valid && std::abs(run.stats.p_plus - p) <= band,
           "P(+) " + fmt17(run.stats.p_plus) + " vs " + fmt17(p) + " +- " + fmt17(band));

    const auto zero = bohm::run_ensemble(cfg, 0.0, n, seed, threads);
    const auto half = bohm::run_ensemble(cfg, std::numbers::pi / 2, n, seed, threads);
    const std::vector<bohm::LabeledEnsemble> ens{bohm::labeled(zero, "theta_0"),
                                                 bohm::labeled(run, "theta_pi_3"),
                                                 bohm::labeled(half, "theta_pi_2")};
    const OntModel m = bohm::ensemble_to_model(ens, cfg.direction,
                                               MeasurementBasis({ket0(), ket1()}, {"+1", "-1"}));
    record("loop-closure",
           classify(m) == Classification::PsiEpistemic && determinism_check(m).deterministic,
           std::string(to_string(classify(m))) + ", Born gap " + fmt17(born_discrepancy(m)));
  });

  json j = base_report(c, "selftest");
  j["checks"] = checks;
  j["ok"] = all;
  c.sink.json_file("selftest.json", j);
  return all ? kExitOk : kExitCheckFailed;
}

// ------------------------------------------------------------------ tables

std::vector<KeySpec> sg_keys() {
  return with_output_keys({
      {"theta", fmt17(std::numbers::pi / 3), Kind::Real, "preparation angle in [0, pi]"},
      {"n", "1000", Kind::Count, "number of trajectories"},
      {"seed", "1", Kind::Count, "sampling seed"},
      {"rng", std::string(Rng::algorithm), Kind::Text, "pseudo-random generator"},
      {"threads", "1", Kind::Count, "trajectory worker threads", false},
      {"mu", "1", Kind::Real, "magnetic moment"},
      {"hbar", "1", Kind::Real, "reduced Planck constant"},
      {"mass", "1", Kind::Real, "particle mass"},
      {"b0", "0", Kind::Real, "uniform field part"},
      {"b1", "-10", Kind::Real, "field gradient"},
      {"t-on", "0", Kind::Real, "field switch-on time"},
      {"t-off", "0.4", Kind::Real, "field switch-off time"},
      {"x-min", "-20", Kind::Real, "left wall"},
      {"x-max", "20", Kind::Real, "right wall"},
      {"cells", "1024", Kind::Count, "grid cells"},
      {"dt", "0.001", Kind::Real, "time step"},
      {"t-final", "3", Kind::Real, "final time"},
      {"stride", "10", Kind::Count, "steps between recorded frames"},
      {"sigma0", "1", Kind::Real, "initial position spread"},
      {"x0", "0", Kind::Real, "initial packet centre"},
      {"direction", "z", Kind::Text, "label of the analysed spin direction"},
      {"field-stride", "10", Kind::Count, "frames between field CSV dumps"},
      {"svg-paths", "200", Kind::Count, "trajectories drawn in the SVG"},
  });
}

std::vector<KeySpec> bs_keys() {
  return with_output_keys({
      {"prep", "plus", Kind::Text, "psi_1, psi_2, plus or minus"},
      {"n", "1000", Kind::Count, "number of trajectories"},
      {"seed", "1", Kind::Count, "sampling seed"},
      {"rng", std::string(Rng::algorithm), Kind::Text, "pseudo-random generator"},
      {"threads", "1", Kind::Count, "trajectory worker threads", false},
      {"hbar", "1", Kind::Real, "reduced Planck constant"},
      {"mass", "1", Kind::Real, "particle mass"},
      {"x-min", "-45", Kind::Real, "left wall"},
      {"x-max", "45", Kind::Real, "right wall"},
      {"cells", "3072", Kind::Count, "grid cells"},
      {"dt", "0.001", Kind::Real, "time step"},
      {"k0", "6", Kind::Real, "packet wavenumber"},
      {"sigma0", "4", Kind::Real, "packet position spread"},
      {"offset", "15", Kind::Real, "distance of each packet from the splitter"},
      {"t-final", "5.5", Kind::Real, "final time"},
      {"stride", "10", Kind::Count, "steps between recorded frames"},
      {"transmission", "0.5", Kind::Real, "target barrier transmission"},
      {"exit-margin", "1", Kind::Real, "distance from x = 0 needed to count an exit"},
      {"field-stride", "10", Kind::Count, "frames between field CSV dumps"},
      {"svg-paths", "200", Kind::Count, "trajectories drawn in the SVG"},
  });
}

std::vector<Command> commands() {
  return {
      {"pbr-table", "coefficient magnitudes of the product states in the entangled basis",
       with_output_keys({}), cmd_pbr_table},
      {"pbr-check", "zero constraints, analytic contradiction and LP feasibility for a scene",
       with_output_keys({
           {"scene", "overlap", Kind::Text, "overlap, disjoint, orthogonal or pbr-n"},
           {"theta", fmt17(std::numbers::pi / 4), Kind::Real, "pbr-n: state angle in (0, pi/2)"},
           {"qubits", "3", Kind::Count, "pbr-n: number of systems, 2 to 4"},
           {"seed", "20120101", Kind::Count, "pbr-n: basis search seed"},
           {"restarts", "16", Kind::Count, "pbr-n: basis search restarts"},
           {"cells", "4", Kind::Count, "lambda cells per preparation support"},
           {"shared", "2", Kind::Count, "cells common to both supports when they overlap"},
           {"lp-tol", "1e-9", Kind::Real, "simplex tolerance"},
       }),
       cmd_pbr_check},
      {"escape-demo", "build and verify the preparation-conditioned models",
       with_output_keys({
           {"scene", "all", Kind::Text, "beam-splitter, orthogonal or all"},
           {"cells", "4", Kind::Count, "beam-splitter: lambda cells per entrance packet"},
       }),
       cmd_escape_demo},
      {"bohm-sg", "Stern-Gerlach trajectory ensemble", sg_keys(), cmd_bohm_sg},
      {"bohm-bs", "beam-splitter trajectory scene", bs_keys(), cmd_bohm_bs},
      {"selftest", "run the invariant suite at reduced size",
       with_output_keys({
           {"n", "2000", Kind::Count, "trajectories per ensemble"},
           {"seed", "1", Kind::Count, "sampling seed"},
           {"threads", "1", Kind::Count, "trajectory worker threads", false},
       }),
       cmd_selftest},
  };
}

}  // namespace

std::map<std::string, ConfigEntry> parse_config_text(const std::string& text, const std::string& path) {
  std::map<std::string, ConfigEntry> out;
  std::istringstream in(text);
  std::string line;
  for (std::size_t number = 1; std::getline(in, line); ++number) {
    const std::string anchor = path + ":" + std::to_string(number);
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(anchor + ": expected key = value, got '" + line + "'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError(anchor + ": missing key before '='");
    if (value.empty()) throw ConfigError(anchor + ": " + key + ": missing value");
    if (out.contains(key)) {
      throw ConfigError(anchor + ": " + key + ": already set at " + out.at(key).origin);
    }
    out.emplace(key, ConfigEntry{value, anchor});
  }
  return out;
}

std::map<std::string, ConfigEntry> read_config_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ConfigError(path + ": cannot open config file");
  std::ostringstream text;
  text << f.rdbuf();
  return parse_config_text(text.str(), path);
}

std::string config_hash(const std::string& scenario, const std::map<std::string, std::string>& canonical) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  auto feed = [&](const std::string& s) {
    for (unsigned char ch : s) {
      h ^= ch;
      h *= 0x100000001b3ull;
    }
  };
  feed("scenario=" + scenario + "\n");
  for (const auto& [k, v] : canonical) feed(k + "=" + v + "\n");
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  const std::vector<Command> table = commands();
  CLI::App app{"psilab: ontological-model and pilot-wave experiments"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "psilab 0.1.0");

  struct Parsed {
    CLI::App* sub = nullptr;
    std::string config;
    std::map<std::string, std::string> flags;
    std::map<std::string, CLI::Option*> options;
    std::vector<std::pair<std::string, CLI::Option*>> scene_flags;
  };
  std::vector<Parsed> parsed(table.size());
  for (std::size_t i = 0; i < table.size(); ++i) {
    Parsed& p = parsed[i];
    p.sub = app.add_subcommand(table[i].name, table[i].help);
    p.sub->add_option("--config", p.config, "key = value config file");
    for (const KeySpec& k : table[i].keys) {
      p.options[k.name] = p.sub->add_option("--" + k.name, p.flags[k.name], k.help + " (default " + k.fallback + ")");
    }
    if (table[i].name == "pbr-check") {
      for (const char* s : {"overlap", "disjoint", "orthogonal"}) {
        CLI::Option* flag = p.sub->add_flag(std::string("--") + s);
        flag->description(std::string("shorthand for --scene ") + s);
        p.scene_flags.emplace_back(s, flag);
      }
    }
  }

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  std::size_t which = 0;
  while (which < table.size() && !parsed[which].sub->parsed()) ++which;
  if (which == table.size()) {
    err << "psilab: no subcommand given\n";
    return kExitUsage;
  }
  const Command& cmd = table[which];
  Parsed& p = parsed[which];

  try {
    std::map<std::string, Raw> raw;
    for (const KeySpec& k : cmd.keys) raw[k.name] = {k.fallback, "default"};
    if (!p.config.empty()) {
      for (const auto& [key, entry] : read_config_file(p.config)) {
        if (!raw.contains(key)) {
          throw ConfigError(entry.origin + ": unknown key '" + key + "' for " + cmd.name);
        }
        raw[key] = {entry.value, entry.origin};
      }
    }
    if (const char* env = std::getenv("PSILAB_OUT"); env != nullptr && *env != '\0') {
      raw["out"] = {env, "PSILAB_OUT"};
    }
    std::size_t scene_flags = 0;
    for (const auto& [scene, opt] : p.scene_flags) {
      if (opt->count() > 0) {
        raw["scene"] = {scene, "--" + scene};
        ++scene_flags;
      }
    }
    if (scene_flags > 1) throw ConfigError("--overlap, --disjoint and --orthogonal are mutually exclusive");
    for (const auto& [key, opt] : p.options) {
      if (opt->count() > 0) raw[key] = {p.flags[key], "--" + key};
    }
    const Values values(cmd.keys, std::move(raw));
    const Sink sink(values, cmd.name);
    Context ctx{values, sink, out, err};
    return cmd.body(ctx);
  } catch (const ConfigError& e) {
    err << "psilab " << cmd.name << ": " << e.what() << "\n";
    return kExitUsage;
  } catch (const DomainError& e) {
    err << "psilab " << cmd.name << ": " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "psilab " << cmd.name << ": " << e.what() << "\n";
    return kExitCheckFailed;
  }
}

int run(int argc, const char* const* argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run(args, std::cout, std::cerr);
}

}  // namespace psilab::cli
