#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "oracles.hpp"
#include "psilab/bohm.hpp"
#include "psilab/errors.hpp"
#include "psilab/nogo.hpp"

using namespace psilab;
using namespace psilab::bohm;

namespace {

std::vector<double> centres(const Grid& g) {
  std::vector<double> x(g.cells);
  for (std::size_t j = 0; j < g.cells; ++j) x[j] = g.x(j);
  return x;
}

std::vector<double> density(std::span<const cplx> psi) {
  std::vector<double> r;
  for (cplx a : psi) r.push_back(std::norm(a));
  return r;
}

SternGerlachConfig free_config() {
  SternGerlachConfig c;
  c.b1 = 0.0;
  return c;
}

}  // namespace

TEST_CASE("configuration validation") {
  SternGerlachConfig c;
  CHECK_NOTHROW(c.validate());
  auto bad = [](auto mutate) {
    SternGerlachConfig c;
    mutate(c);
    CHECK_THROWS_AS(c.validate(), ConfigError);
  };
  bad([](SternGerlachConfig& c) { c.dt = 0.0; });
  bad([](SternGerlachConfig& c) { c.dt = 0.01; });  // diffusion number 6.5
  bad([](SternGerlachConfig& c) { c.b1 = -1e4; });
  bad([](SternGerlachConfig& c) { c.t_off = c.t_on; });
  bad([](SternGerlachConfig& c) { c.grid.cells = 10; });
  bad([](SternGerlachConfig& c) { c.grid.x_max = c.grid.x_min; });
  bad([](SternGerlachConfig& c) { c.sigma0 = -1.0; });
  bad([](SternGerlachConfig& c) { c.units.mass = 0.0; });
  bad([](SternGerlachConfig& c) { c.x0 = 30.0; });
  bad([](SternGerlachConfig& c) { c.t_final = std::nan(""); });
  CHECK(c.field(1.0, 0.1) == -10.0);
  CHECK(c.field(1.0, 0.4) == 0.0);
}

TEST_CASE("initial packet is normalized with the requested moments") {
  const SternGerlachConfig c;
  const SpinorField f = stern_gerlach_packet(c, std::numbers::pi / 3);
  CHECK(std::abs(f.norm() - 1.0) < 1e-12);
  const auto rho = density_current(f, c.units).rho;
  const auto m = oracle::moments(centres(c.grid), rho);
  CHECK(std::abs(m.mean) < 1e-12);
  CHECK(std::abs(m.std - 1.0) < 1e-6);
  for (double x : {-1.3, 0.0, 0.7}) {
    const auto s = spin_projection(f, x);
    REQUIRE(s.has_value());
    CHECK(std::abs(*s - 0.5) < 1e-12);
  }
}

TEST_CASE("Crank-Nicolson evolution is unitary") {
  SternGerlachConfig c;
  const SpinorField f = evolve(stern_gerlach_packet(c, 1.0), c, 2000);
  CHECK(std::abs(f.norm() - 1.0) < 1e-10);
  CHECK(f.time == doctest::Approx(2.0));
}

TEST_CASE("free packet spreads at the analytic rate") {
  const SternGerlachConfig c = free_config();
  for (std::size_t steps : {500u, 1000u, 2000u}) {
    const SpinorField f = evolve(stern_gerlach_packet(c, 0.0), c, steps);
    const auto m = oracle::moments(centres(c.grid), density(f.up));
    const double t = static_cast<double>(steps) * c.dt;
    const double w = oracle::free_gaussian_width(1.0, t);
    CHECK(std::abs(m.std - w) < 1e-4 * w);
    CHECK(std::abs(m.mean) < 1e-10);
  }
}

TEST_CASE("Ehrenfest: each spin component accelerates uniformly") {
  // Force on the + component is -mu b1 = +10 while the field is on, so
  // <x>_+ = 5 t^2 and <x>_- = -5 t^2. The lattice group velocity lags
  // hbar k / M by about (k dx)^2 / 6, which bounds how long the default
  // grid stays within 1e-3; the finer grid covers the whole window.
  auto check = [](std::size_t cells, std::initializer_list<double> times) {
    SternGerlachConfig c;
    c.grid.cells = cells;
    SpinorField f = stern_gerlach_packet(c, std::numbers::pi / 2);
    const auto x = centres(c.grid);
    double t_prev = 0.0;
    for (double t : times) {
      f = evolve(f, c, static_cast<std::size_t>(std::llround((t - t_prev) / c.dt)));
      t_prev = t;
      const double expected = 5.0 * t * t;
      CHECK(std::abs(oracle::moments(x, density(f.up)).mean - expected) < 1e-3 * expected);
      CHECK(std::abs(oracle::moments(x, density(f.down)).mean + expected) < 1e-3 * expected);
    }
  };
  check(1024, {0.1, 0.2});
  check(2048, {0.1, 0.2, 0.4});

  // After the window closes the components coast at +-10 t_off.
  SternGerlachConfig c;
  const SpinorField g = evolve(stern_gerlach_packet(c, std::numbers::pi / 2), c, 1000);
  const double expected = 5.0 * 0.16 + 4.0 * (1.0 - 0.4);
  CHECK(std::abs(oracle::moments(centres(c.grid), density(g.up)).mean - expected) < 0.02 * expected);
}

TEST_CASE("a constant field shifts only the phase") {
  SternGerlachConfig plain = free_config();
  SternGerlachConfig shifted = plain;
  shifted.b0 = 1.0;
  const SpinorField a = evolve(stern_gerlach_packet(plain, 1.0), plain, 400);
  const SpinorField b = evolve(stern_gerlach_packet(shifted, 1.0), shifted, 400);
  double worst = 0.0;
  for (std::size_t j = 0; j < a.up.size(); ++j) {
    worst = std::max(worst, std::abs(std::abs(a.up[j]) - std::abs(b.up[j])));
    worst = std::max(worst, std::abs(std::abs(a.down[j]) - std::abs(b.down[j])));
  }
  CHECK(worst < 1e-6);
}

TEST_CASE("continuity equation holds and converges at second order") {
  auto residual = [](double dt) {
    SternGerlachConfig c;
    c.dt = dt;
    SpinorField before = evolve(stern_gerlach_packet(c, 1.0), c, static_cast<std::size_t>(std::llround(0.1 / dt)));
    SpinorField mid = evolve(before, c, 1);
    SpinorField after = evolve(mid, c, 1);
    const double lib = continuity_residual(before, mid, after, c.units, dt);
    const double ref = oracle::continuity_residual({before.up, before.down}, {mid.up, mid.down},
                                                   {after.up, after.down}, c.grid.dx(), dt);
    CHECK(std::abs(lib - ref) <= 1e-12 * std::max(1.0, ref));
    return lib;
  };
  const double r1 = residual(1e-3);
  const double r2 = residual(5e-4);
  MESSAGE("continuity residual " << r1 << " at dt=1e-3, " << r2 << " at dt=5e-4");
  CHECK(r1 < 1e-4);
  CHECK(r2 < r1 / 3.0);
}

TEST_CASE("a real packet at rest carries no current") {
  const SternGerlachConfig c;
  const auto dc = density_current(stern_gerlach_packet(c, 0.7), c.units);
  for (double j : dc.current) CHECK(j == 0.0);
}

TEST_CASE("a plane-wave factor on both components gives J = rho hbar k / M") {
  // Face fluxes of e^{ikx} carry sin(k dx)/dx instead of k, a relative
  // lag of (k dx)^2 / 6; the broad envelope keeps the face averaging small.
  Grid g;
  const double k = 0.5;
  const SpinorField f = gaussian_packet(g, 0.0, 5.0, k, 0.6, cplx(0.0, 0.8));
  const auto dc = density_current(f, Units{});
  for (std::size_t j = 0; j < g.cells; ++j) {
    if (std::abs(g.x(j)) > 3.0) continue;
    CHECK(std::abs(dc.current[j] - dc.rho[j] * k) < 1e-3 * dc.rho[j] * k);
  }
}

TEST_CASE("velocity of a broad plane-wave packet is hbar k / M") {
  Grid g;
  for (double k : {0.5, 1.0, -1.5}) {
    const SpinorField f = gaussian_packet(g, 0.0, 5.0, k, 1.0, 0.0);
    const auto v = velocity(f, 0.0, Units{});
    REQUIRE(v.has_value());
    CHECK(std::abs(*v - k) < 1e-3 * std::abs(k));
    const auto v2 = velocity(f, 0.0, Units{2.0, 4.0});
    REQUIRE(v2.has_value());
    CHECK(std::abs(*v2 - k / 2.0) < 1e-3 * std::abs(k));
  }
}

TEST_CASE("velocity of two interfering plane waves follows the phase gradient") {
  // psi = e^{i k1 x} + a e^{i k2 x}: v = (k1 + a^2 k2 + a (k1 + k2) cos dk x) / (1 + a^2 + 2 a cos dk x)
  Grid g;
  const double k1 = 0.4, k2 = -0.3, a = 0.5;
  SpinorField f{g, std::vector<cplx>(g.cells), std::vector<cplx>(g.cells), 0.0};
  for (std::size_t j = 0; j < g.cells; ++j) {
    const double x = g.x(j);
    f.up[j] = 0.02 * (std::polar(1.0, k1 * x) + a * std::polar(1.0, k2 * x));
  }
  for (double x : {-3.0, -0.7, 0.0, 1.9, 5.0}) {
    const double c = std::cos((k1 - k2) * x);
    const double expected = (k1 + a * a * k2 + a * (k1 + k2) * c) / (1.0 + a * a + 2.0 * a * c);
    const auto v = velocity(f, x, Units{});
    REQUIRE(v.has_value());
    CHECK(std::abs(*v - expected) < 2e-3);
  }
}

TEST_CASE("velocity and spin are undefined at nodes and outside the grid") {
  const SternGerlachConfig c;
  const SpinorField f = stern_gerlach_packet(c, 0.0);
  CHECK_FALSE(velocity(f, 19.0, c.units).has_value());
  CHECK_FALSE(spin_projection(f, 19.0).has_value());
  CHECK_THROWS_AS(velocity(f, 25.0, c.units), DomainError);
}

TEST_CASE("quantum potential of a Gaussian matches the closed form") {
  const SternGerlachConfig c;
  const SpinorField f = stern_gerlach_packet(c, 0.0);
  const QuantumPotential q = quantum_potential(f, c.units);
  for (std::size_t j = 0; j < c.grid.cells; ++j) {
    const double x = c.grid.x(j);
    if (std::abs(x) > 3.0) continue;
    REQUIRE(q.up[j].has_value());
    CHECK(std::abs(*q.up[j] - oracle::gaussian_quantum_potential(x, 0.0, 1.0)) < 1e-3);
    CHECK_FALSE(q.down[j].has_value());
  }
  CHECK_FALSE(q.up.front().has_value());
  CHECK_FALSE(q.up.back().has_value());
}

TEST_CASE("initial sampling follows the cell density") {
  const SternGerlachConfig c;
  const SpinorField f = stern_gerlach_packet(c, 1.0);
  const auto rho = density_current(f, c.units).rho;
  const std::size_t n = 20000;
  const auto xs = sample_initial(f, n, 7);
  CHECK(oracle::ks_distance(xs, oracle::cell_cdf(rho, c.grid.x_min, c.grid.dx())) <
        oracle::ks_critical_1pct(n));
  CHECK(sample_initial(f, n, 7) == xs);
  CHECK(sample_initial(f, n, 8) != xs);
}

TEST_CASE("Stern-Gerlach trajectories") {
  const SternGerlachConfig c;

  SUBCASE("spin up always deflects up") {
    const auto run = run_ensemble(c, 0.0, 100, 3);
    CHECK(run.stats.valid);
    CHECK(run.stats.plus == 100);
    CHECK(run.stats.p_plus == 1.0);
  }
  SUBCASE("spin down always deflects down") {
    const auto run = run_ensemble(c, std::numbers::pi, 100, 3);
    CHECK(run.stats.minus == 100);
  }
  SUBCASE("Born frequencies at theta = pi/3") {
    const std::size_t n = 2000;
    const auto run = run_ensemble(c, std::numbers::pi / 3, n, 1, 4);
    REQUIRE(run.stats.valid);
    const double p = std::pow(std::cos(std::numbers::pi / 6), 2);
    CHECK(std::abs(run.stats.p_plus - p) < oracle::binomial_3sigma(p, n));
    CHECK(run.stats.p_plus + run.stats.p_minus == doctest::Approx(1.0));
    // Outcome is fixed by the start point: upper starts go up.
    double max_minus = -1e300, min_plus = 1e300;
    for (std::size_t i = 0; i < n; ++i) {
      if (run.trajectories[i].outcome == Outcome::Plus) min_plus = std::min(min_plus, run.x0[i]);
      if (run.trajectories[i].outcome == Outcome::Minus) max_minus = std::max(max_minus, run.x0[i]);
    }
    CHECK(max_minus < min_plus);
  }
}

TEST_CASE("ensembles are reproducible and independent of the thread count") {
  const SternGerlachConfig c;
  const auto a = run_ensemble(c, 1.0, 300, 9, 1);
  const auto b = run_ensemble(c, 1.0, 300, 9, 4);
  REQUIRE(a.trajectories.size() == b.trajectories.size());
  for (std::size_t i = 0; i < a.trajectories.size(); ++i) {
    CHECK(a.trajectories[i].x == b.trajectories[i].x);
    CHECK(a.trajectories[i].outcome == b.trajectories[i].outcome);
  }
  CHECK(to_json(a.stats) == to_json(b.stats));
}

TEST_CASE("equivariance: transported samples follow |psi_t|^2") {
  SternGerlachConfig c;
  c.t_final = 1.5;
  const std::size_t n = 10000;
  const auto run = run_ensemble(c, std::numbers::pi / 2, n, 21, 4);
  const Frame& last = run.evolution.frames.back();
  std::vector<double> rho(last.rho_up.size());
  for (std::size_t j = 0; j < rho.size(); ++j) rho[j] = last.rho_up[j] + last.rho_down[j];
  std::vector<double> xs;
  for (const auto& t : run.trajectories) xs.push_back(t.x.back());
  const double ks = oracle::ks_distance(xs, oracle::cell_cdf(rho, c.grid.x_min, c.grid.dx()));
  MESSAGE("equivariance KS distance " << ks);
  CHECK(ks < 0.02);
}

TEST_CASE("trajectories converge under time-step refinement") {
  SternGerlachConfig c;
  c.t_final = 1.0;
  SternGerlachConfig fine = c;
  fine.dt = c.dt / 2.0;
  fine.snapshot_stride = 2 * c.snapshot_stride;
  const auto ev = record_evolution(stern_gerlach_packet(c, 1.0), stern_gerlach_stepper(c), c.units,
                                   c.steps(), c.snapshot_stride);
  const auto ev_fine = record_evolution(stern_gerlach_packet(fine, 1.0), stern_gerlach_stepper(fine),
                                        fine.units, fine.steps(), fine.snapshot_stride);
  for (double x0 : {-1.5, -0.3, 0.2, 1.1}) {
    const auto a = integrate_trajectory(x0, ev);
    const auto b = integrate_trajectory(x0, ev_fine);
    REQUIRE(a.x.size() == b.x.size());
    CHECK(std::abs(a.x.back() - b.x.back()) < 1e-3);
  }
}

TEST_CASE("beam splitter") {
  const BeamSplitterConfig c;
  const BarrierCalibration cal = calibrate_barrier(c);
  CHECK(std::abs(std::norm(cal.t) - 0.5) < 1e-9);
  CHECK(std::abs(std::norm(cal.t) + std::norm(cal.r) - 1.0) < 1e-9);

  const std::size_t n = 200;
  const auto plus = beam_splitter_scene(c, BeamPreparation::Plus, n, 5, 4);
  const auto minus = beam_splitter_scene(c, BeamPreparation::Minus, n, 5, 4);
  const auto psi1 = beam_splitter_scene(c, BeamPreparation::Psi1, n, 5, 4);
  CHECK(plus.valid);
  CHECK(plus.gate3 == n);
  CHECK(minus.gate4 == n);
  CHECK(psi1.valid);
  CHECK(std::abs(static_cast<double>(psi1.gate3) / n - 0.5) < oracle::binomial_3sigma(0.5, n));

  SUBCASE("exported model is psi-epistemic, deterministic and reproduces the gates") {
    const std::vector<LabeledEnsemble> ens{labeled(plus, "plus"), labeled(minus, "minus")};
    REQUIRE(ens[0].x0 == ens[1].x0);
    const OntModel m = ensemble_to_model(ens, "gates", MeasurementBasis({ket0(), ket1()}, {"3", "4"}));
    CHECK(classify(m) == Classification::PsiEpistemic);
    CHECK(determinism_check(m).deterministic);
    CHECK(predict(m, "plus", "gates", "3") == doctest::Approx(1.0));
    CHECK(predict(m, "minus", "gates", "4") == doctest::Approx(1.0));
  }
  SUBCASE("ensembles with different start points are rejected") {
    const std::vector<LabeledEnsemble> ens{labeled(plus, "plus"), labeled(psi1, "psi_1")};
    CHECK_THROWS_AS(ensemble_to_model(ens, "gates", MeasurementBasis({ket0(), ket1()}, {"3", "4"})),
                    DomainError);
  }
}

TEST_CASE("ensemble export rejects unresolved trajectories") {
  LabeledEnsemble e{"a", ket0(), {0.0, 1.0}, {0, -1}};
  const std::vector<LabeledEnsemble> ens{e};
  CHECK_THROWS_AS(ensemble_to_model(ens, "z", MeasurementBasis({ket0(), ket1()}, {"+1", "-1"})), DomainError);
}

TEST_CASE("CSV and SVG writers") {
  SternGerlachConfig c;
  c.t_final = 0.1;
  const auto run = run_ensemble(c, 1.0, 3, 2);
  std::ostringstream traj, field, svg;
  write_trajectories_csv(traj, run.trajectories);
  write_field_csv(field, run.evolution, 5);
  write_trajectories_svg(svg, run.trajectories, run.evolution);
  CHECK(traj.str().rfind("traj_id,t,x,sigma\n", 0) == 0);
  CHECK(field.str().rfind("t,x,rho_up,rho_down,current\n", 0) == 0);
  CHECK(svg.str().find("<svg") != std::string::npos);
  std::size_t lines = 0;
  for (char ch : traj.str()) lines += ch == '\n';
  CHECK(lines == 1 + 3 * run.trajectories[0].x.size());
}

TEST_CASE("quantum potential vanishes for a constant modulus") {
  Grid g;
  SpinorField f{g, std::vector<cplx>(g.cells), std::vector<cplx>(g.cells), 0.0};
  for (std::size_t j = 0; j < g.cells; ++j) f.up[j] = 0.1 * std::polar(1.0, 0.8 * g.x(j));
  const QuantumPotential q = quantum_potential(f, Units{});
  for (std::size_t j = 1; j + 1 < g.cells; ++j) {
    REQUIRE(q.up[j].has_value());
    CHECK(std::abs(*q.up[j]) < 1e-9);
  }
}

TEST_CASE("equal superposition has zero spin projection") {
  const SternGerlachConfig c;
  const SpinorField f = stern_gerlach_packet(c, std::numbers::pi / 2);
  for (double x : {-2.0, 0.0, 0.3, 2.5}) {
    const auto s = spin_projection(f, x);
    REQUIRE(s.has_value());
    CHECK(std::abs(*s) < 1e-15);
  }
}

TEST_CASE("sampling edge cases") {
  const Grid g;
  std::vector<double> delta(g.cells, 0.0);
  delta[700] = 3.0;
  for (double x : sample_initial(delta, g, 500, 1)) {
    CHECK(x >= g.x_min + 700 * g.dx());
    CHECK(x < g.x_min + 701 * g.dx());
  }
  const std::size_t n = 5000;
  const std::vector<double> flat(g.cells, 1.0);
  const auto xs = sample_initial(flat, g, n, 2);
  const double ks = oracle::ks_distance(xs, [&](double x) { return (x - g.x_min) / (g.x_max - g.x_min); });
  CHECK(ks < oracle::ks_critical_1pct(n));
}

TEST_CASE("continuity residual stays small at every sampled step") {
  const SternGerlachConfig c;
  const SpinorStepper stepper = stern_gerlach_stepper(c);
  SpinorField f = stern_gerlach_packet(c, 1.2);
  double worst = 0.0;
  for (std::size_t block = 0; block < 15; ++block) {
    for (int k = 0; k < 200; ++k) stepper.step(f);
    SpinorField before = f;
    stepper.step(f);
    SpinorField mid = f;
    stepper.step(f);
    worst = std::max(worst, continuity_residual(before, mid, f, c.units, c.dt));
  }
  MESSAGE("worst continuity residual " << worst);
  CHECK(worst < 1e-4);
}

TEST_CASE("equal superposition: trajectories split at the median and never cross") {
  const SternGerlachConfig c;
  const std::size_t n = 2000;
  const auto run = run_ensemble(c, std::numbers::pi / 2, n, 12, 4);
  REQUIRE(run.stats.valid);
  CHECK(std::abs(run.stats.p_plus - 0.5) < oracle::binomial_3sigma(0.5, n));

  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return run.x0[a] < run.x0[b]; });
  // Sorted by start point, outcomes are a block of minus followed by plus.
  std::size_t switches = 0;
  for (std::size_t i = 1; i < n; ++i) {
    switches += run.trajectories[order[i]].outcome != run.trajectories[order[i - 1]].outcome;
  }
  CHECK(switches == 1);
  CHECK(run.trajectories[order.front()].outcome == Outcome::Minus);
  CHECK(run.trajectories[order.back()].outcome == Outcome::Plus);

  for (std::size_t i = 1; i < n; ++i) {
    const auto& lo = run.trajectories[order[i - 1]];
    const auto& hi = run.trajectories[order[i]];
    REQUIRE(lo.x.size() == hi.x.size());
    bool ordered = true;
    for (std::size_t s = 0; s < lo.x.size(); ++s) ordered = ordered && lo.x[s] <= hi.x[s];
    CHECK(ordered);
  }
}

TEST_CASE("beam-splitter superpositions share their start points across both packets") {
  const BeamSplitterConfig c;
  const auto plus = beam_splitter_scene(c, BeamPreparation::Plus, 100, 31, 4);
  const auto minus = beam_splitter_scene(c, BeamPreparation::Minus, 100, 31, 4);
  CHECK(plus.x0 == minus.x0);
  const auto left = std::count_if(plus.x0.begin(), plus.x0.end(), [](double x) { return x < 0.0; });
  CHECK(left > 0);
  CHECK(left < 100);
  for (std::size_t i = 0; i < 100; ++i) CHECK(plus.gate[i] != minus.gate[i]);
}
