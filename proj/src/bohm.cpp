#include "psilab/bohm.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <exception>
#include <numbers>
#include <thread>

#include "psilab/errors.hpp"
#include "psilab/random.hpp"

namespace psilab::bohm {

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.15g", v);
  return buf;
}

void require(bool ok, const std::string& message) {
  if (!ok) throw ConfigError(message);
}

bool finite_all(std::initializer_list<double> values) {
  return std::all_of(values.begin(), values.end(), [](double v) { return std::isfinite(v); });
}

// Linear interpolation between cell centres, flat beyond the outer centres.
double interpolate(std::span<const double> values, const Grid& grid, double x) {
  const double u = (x - grid.x_min) / grid.dx() - 0.5;
  if (u <= 0.0) return values.front();
  const auto last = static_cast<double>(grid.cells - 1);
  if (u >= last) return values.back();
  const auto j = static_cast<std::size_t>(u);
  const double w = u - static_cast<double>(j);
  return (1.0 - w) * values[j] + w * values[j + 1];
}

void check_position(const Grid& grid, double x) {
  if (!std::isfinite(x) || !grid.contains(x)) {
    throw DomainError("position " + fmt(x) + " is outside the grid [" + fmt(grid.x_min) + ", " +
                      fmt(grid.x_max) + "]");
  }
}

std::vector<double> component_density(std::span<const cplx> psi) {
  std::vector<double> out(psi.size());
  std::transform(psi.begin(), psi.end(), out.begin(), [](cplx a) { return std::norm(a); });
  return out;
}

double max_of(std::span<const double> v) { return v.empty() ? 0.0 : *std::max_element(v.begin(), v.end()); }

// Samples of the evolution at (x, t): linear in both.
struct FieldProbe {
  double rho_up, rho_down, current, rho_floor;
};

FieldProbe probe(const Evolution& ev, double x, double t) {
  const std::size_t frames = ev.frames.size();
  double s = (t - ev.frames.front().t) / ev.frame_dt;
  std::size_t k = 0;
  if (frames > 1) {
    const double kf = std::clamp(std::floor(s), 0.0, static_cast<double>(frames - 2));
    k = static_cast<std::size_t>(kf);
    s = std::clamp(s - kf, 0.0, 1.0);
  } else {
    s = 0.0;
  }
  const Frame& a = ev.frames[k];
  const Frame& b = ev.frames[std::min(k + 1, frames - 1)];
  auto lerp = [&](const std::vector<double>& fa, const std::vector<double>& fb) {
    return (1.0 - s) * interpolate(fa, ev.grid, x) + s * interpolate(fb, ev.grid, x);
  };
  return {lerp(a.rho_up, b.rho_up), lerp(a.rho_down, b.rho_down), lerp(a.current, b.current),
          kNodeFraction * std::max(a.rho_max, b.rho_max)};
}

std::optional<double> probe_velocity(const Evolution& ev, double x, double t) {
  const FieldProbe p = probe(ev, x, t);
  const double rho = p.rho_up + p.rho_down;
  if (!(rho > p.rho_floor)) return std::nullopt;
  return p.current / rho;
}

double probe_sigma(const Evolution& ev, double x, double t) {
  const FieldProbe p = probe(ev, x, t);
  const double rho = p.rho_up + p.rho_down;
  if (!(rho > p.rho_floor)) return std::nan("");
  return (p.rho_up - p.rho_down) / rho;
}

QState spin_state(double theta) {
  return QState(1, {std::cos(theta / 2.0), std::sin(theta / 2.0)});
}

}  // namespace

void Grid::validate() const {
  require(finite_all({x_min, x_max}) && x_min < x_max, "grid extent must satisfy x_min < x_max");
  require(cells >= 64, "grid needs at least 64 cells, got " + std::to_string(cells));
}

double SternGerlachConfig::field(double x, double t) const {
  return (t >= t_on && t < t_off) ? b0 + b1 * x : 0.0;
}

std::size_t SternGerlachConfig::steps() const {
  return static_cast<std::size_t>(std::llround(t_final / dt));
}

void SternGerlachConfig::validate() const {
  grid.validate();
  require(finite_all({units.hbar, units.mass}) && units.hbar > 0.0 && units.mass > 0.0,
          "hbar and mass must be positive");
  require(finite_all({mu, b0, b1, t_on, t_off, dt, t_final, sigma0, x0}),
          "field, time and packet parameters must be finite");
  require(dt > 0.0, "dt must be positive");
  require(t_on < t_off, "field window needs t_on < t_off");
  require(t_final > 0.0, "t_final must be positive");
  require(steps() >= 1, "t_final is shorter than one step");
  require(snapshot_stride >= 1, "snapshot stride must be at least 1");
  require(sigma0 > 0.0, "sigma0 must be positive");
  require(x0 > grid.x_min && x0 < grid.x_max, "initial packet centre lies outside the grid");
  require(!direction.empty(), "spin direction label must be non-empty");
  const double dx = grid.dx();
  const double diffusion = dt * units.hbar / (units.mass * dx * dx);
  require(diffusion <= kMaxDiffusionNumber,
          "dt = " + fmt(dt) + " is too large for dx = " + fmt(dx) + " (dt hbar / (M dx^2) = " +
              fmt(diffusion) + " > " + fmt(kMaxDiffusionNumber) + ")");
  const double b_max = std::abs(b0) + std::abs(b1) * std::max(std::abs(grid.x_min), std::abs(grid.x_max));
  const double phase = dt * std::abs(mu) * b_max / units.hbar;
  require(phase <= kMaxPotentialPhase,
          "dt = " + fmt(dt) + " is too large for the field strength (potential phase per step " +
              fmt(phase) + " > " + fmt(kMaxPotentialPhase) + ")");
}

double SpinorField::norm() const {
  double s = 0.0;
  for (std::size_t j = 0; j < up.size(); ++j) s += std::norm(up[j]) + std::norm(down[j]);
  return s * grid.dx();
}

SpinorField gaussian_packet(const Grid& grid, double center, double sigma, double k, cplx a_up,
                            cplx a_down) {
  grid.validate();
  if (!(sigma > 0.0) || !finite_all({center, k})) throw DomainError("invalid Gaussian parameters");
  const double spin_norm = std::sqrt(std::norm(a_up) + std::norm(a_down));
  if (!(spin_norm > 0.0)) throw DomainError("spinor must be non-zero");
  SpinorField f{grid, std::vector<cplx>(grid.cells), std::vector<cplx>(grid.cells), 0.0};
  std::vector<cplx> env(grid.cells);
  double mass = 0.0;
  for (std::size_t j = 0; j < grid.cells; ++j) {
    const double x = grid.x(j);
    const double d = x - center;
    env[j] = std::exp(-d * d / (4.0 * sigma * sigma)) * std::polar(1.0, k * x);
    mass += std::norm(env[j]);
  }
  if (!(mass > 0.0)) throw DomainError("packet has no weight on the grid");
  const double scale = 1.0 / std::sqrt(mass * grid.dx());
  for (std::size_t j = 0; j < grid.cells; ++j) {
    f.up[j] = env[j] * scale * (a_up / spin_norm);
    f.down[j] = env[j] * scale * (a_down / spin_norm);
  }
  return f;
}

SpinorField stern_gerlach_packet(const SternGerlachConfig& config, double theta) {
  return gaussian_packet(config.grid, config.x0, config.sigma0, 0.0, std::cos(theta / 2.0),
                         std::sin(theta / 2.0));
}

Propagator::Propagator(const Grid& grid, const Units& units, double dt, std::vector<double> potential)
    : n_(grid.cells) {
  if (potential.size() != n_) throw DomainError("potential length does not match the grid");
  const double dx = grid.dx();
  const double kin = units.hbar * units.hbar / (units.mass * dx * dx);  // 2 x (hbar^2 / 2M dx^2)
  const cplx a(0.0, dt / (2.0 * units.hbar));
  off_ = -a * (kin / 2.0);
  diag_rhs_.resize(n_);
  c_prime_.resize(n_);
  inv_den_.resize(n_);
  cplx prev_c = 0.0;
  for (std::size_t j = 0; j < n_; ++j) {
    const cplx diag = 1.0 + a * (kin + potential[j]);
    diag_rhs_[j] = 1.0 - a * (kin + potential[j]);
    inv_den_[j] = 1.0 / (diag - off_ * prev_c);
    c_prime_[j] = off_ * inv_den_[j];
    prev_c = c_prime_[j];
  }
}

void Propagator::step(std::span<cplx> psi) const {
  if (psi.size() != n_) throw DomainError("field length does not match the propagator");
  // The explicit side has off-diagonal -off_; fold it into the forward sweep.
  cplx prev_psi = 0.0;
  cplx prev_d = 0.0;
  for (std::size_t j = 0; j < n_; ++j) {
    const cplx next = j + 1 < n_ ? psi[j + 1] : cplx(0.0);
    const cplx rhs = diag_rhs_[j] * psi[j] - off_ * (prev_psi + next);
    prev_psi = psi[j];
    prev_d = (rhs - off_ * prev_d) * inv_den_[j];
    psi[j] = prev_d;
  }
  for (std::size_t j = n_ - 1; j-- > 0;) psi[j] -= c_prime_[j] * psi[j + 1];
}

SpinorStepper::SpinorStepper(const Grid& grid, const Units& units, double dt, double t_on,
                             double t_off, std::vector<double> on_up, std::vector<double> on_down,
                             std::vector<double> off_up, std::vector<double> off_down)
    : dt_(dt),
      t_on_(t_on),
      t_off_(t_off),
      on_up_(grid, units, dt, std::move(on_up)),
      on_down_(grid, units, dt, std::move(on_down)),
      off_up_(grid, units, dt, std::move(off_up)),
      off_down_(grid, units, dt, std::move(off_down)) {}

void SpinorStepper::step(SpinorField& field) const {
  const double mid = field.time + dt_ / 2.0;
  const bool on = mid >= t_on_ && mid < t_off_;
  (on ? on_up_ : off_up_).step(field.up);
  (on ? on_down_ : off_down_).step(field.down);
  field.time += dt_;
}

SpinorStepper stern_gerlach_stepper(const SternGerlachConfig& config) {
  config.validate();
  const std::size_t n = config.grid.cells;
  std::vector<double> up(n), down(n), zero(n, 0.0);
  for (std::size_t j = 0; j < n; ++j) {
    up[j] = config.mu * (config.b0 + config.b1 * config.grid.x(j));
    down[j] = -up[j];
  }
  return SpinorStepper(config.grid, config.units, config.dt, config.t_on, config.t_off, std::move(up),
                       std::move(down), zero, zero);
}

SpinorField evolve(SpinorField field, const SternGerlachConfig& config, std::size_t steps) {
  const SpinorStepper stepper = stern_gerlach_stepper(config);
  if (field.up.size() != config.grid.cells || field.down.size() != config.grid.cells) {
    throw DomainError("field does not live on the config grid");
  }
  for (std::size_t s = 0; s < steps; ++s) stepper.step(field);
  return field;
}

std::vector<double> face_current(const SpinorField& field, const Units& units) {
  const std::size_t n = field.up.size();
  std::vector<double> f(n + 1, 0.0);
  const double scale = units.hbar / (units.mass * field.grid.dx());
  for (std::size_t j = 0; j + 1 < n; ++j) {
    f[j + 1] = scale * (std::imag(std::conj(field.up[j]) * field.up[j + 1]) +
                        std::imag(std::conj(field.down[j]) * field.down[j + 1]));
  }
  return f;
}

DensityCurrent density_current(const SpinorField& field, const Units& units) {
  const std::size_t n = field.up.size();
  const std::vector<double> f = face_current(field, units);
  DensityCurrent out{std::vector<double>(n), std::vector<double>(n)};
  for (std::size_t j = 0; j < n; ++j) {
    out.rho[j] = std::norm(field.up[j]) + std::norm(field.down[j]);
    out.current[j] = 0.5 * (f[j] + f[j + 1]);
  }
  return out;
}

double continuity_residual(const SpinorField& before, const SpinorField& mid, const SpinorField& after,
                           const Units& units, double dt) {
  const std::size_t n = mid.up.size();
  if (before.up.size() != n || after.up.size() != n) throw DomainError("fields live on different grids");
  const std::vector<double> f = face_current(mid, units);
  const double dx = mid.grid.dx();
  double sum = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    const double rho_a = std::norm(after.up[j]) + std::norm(after.down[j]);
    const double rho_b = std::norm(before.up[j]) + std::norm(before.down[j]);
    const double r = (rho_a - rho_b) / (2.0 * dt) + (f[j + 1] - f[j]) / dx;
    sum += r * r;
  }
  return std::sqrt(sum * dx);
}

std::optional<double> velocity(const SpinorField& field, double x, const Units& units) {
  check_position(field.grid, x);
  const DensityCurrent dc = density_current(field, units);
  const double rho = interpolate(dc.rho, field.grid, x);
  if (!(rho > kNodeFraction * max_of(dc.rho))) return std::nullopt;
  return interpolate(dc.current, field.grid, x) / rho;
}

std::optional<double> spin_projection(const SpinorField& field, double x) {
  check_position(field.grid, x);
  const std::vector<double> up = component_density(field.up);
  const std::vector<double> down = component_density(field.down);
  std::vector<double> rho(up.size());
  for (std::size_t j = 0; j < rho.size(); ++j) rho[j] = up[j] + down[j];
  const double r = interpolate(rho, field.grid, x);
  if (!(r > kNodeFraction * max_of(rho))) return std::nullopt;
  return (interpolate(up, field.grid, x) - interpolate(down, field.grid, x)) / r;
}

QuantumPotential quantum_potential(const SpinorField& field, const Units& units) {
  const double dx = field.grid.dx();
  const double scale = -units.hbar * units.hbar / (2.0 * units.mass);
  auto one = [&](std::span<const cplx> psi) {
    const std::size_t n = psi.size();
    std::vector<double> amp(n);
    double peak = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      amp[j] = std::abs(psi[j]);
      peak = std::max(peak, amp[j] * amp[j]);
    }
    std::vector<std::optional<double>> q(n);
    for (std::size_t j = 1; j + 1 < n; ++j) {
      if (!(amp[j] * amp[j] >= kNodeFraction * peak) || peak == 0.0) continue;
      const double lap = (amp[j + 1] - 2.0 * amp[j] + amp[j - 1]) / (dx * dx);
      q[j] = scale * lap / amp[j];
    }
    return q;
  };
  return {one(field.up), one(field.down)};
}

Evolution record_evolution(SpinorField initial, const SpinorStepper& stepper, const Units& units,
                           std::size_t steps, std::size_t stride) {
  if (stride == 0) throw DomainError("frame stride must be at least 1");
  Evolution ev{initial.grid, units, stepper.dt() * static_cast<double>(stride), {}, {}};
  auto record = [&](const SpinorField& f) {
    const DensityCurrent dc = density_current(f, units);
    Frame fr{f.time, component_density(f.up), component_density(f.down), dc.current, max_of(dc.rho)};
    ev.frames.push_back(std::move(fr));
  };
  record(initial);
  const double t0 = initial.time;
  for (std::size_t s = 1; s <= steps; ++s) {
    stepper.step(initial);
    initial.time = t0 + static_cast<double>(s) * stepper.dt();
    if (s % stride == 0) record(initial);
  }
  ev.final_field = std::move(initial);
  return ev;
}

const char* to_string(Outcome o) {
  switch (o) {
    case Outcome::Plus: return "+1";
    case Outcome::Minus: return "-1";
    case Outcome::Unresolved: return "unresolved";
  }
  return "unresolved";
}

Trajectory integrate_trajectory(double x0, const Evolution& evolution, const TrajectoryOptions& options) {
  if (evolution.frames.empty()) throw DomainError("evolution has no frames");
  check_position(evolution.grid, x0);
  const double h = options.step > 0.0 ? options.step : evolution.frame_dt;
  const double t0 = evolution.frames.front().t;
  const double span = evolution.t_final() - t0;
  const auto steps = static_cast<std::size_t>(std::llround(span / h));
  const double margin = options.wall_margin_cells * evolution.grid.dx();
  const double lo = evolution.grid.x_min + margin;
  const double hi = evolution.grid.x_max - margin;

  Trajectory tr;
  tr.x0 = x0;
  auto record = [&](double t, double x) {
    tr.t.push_back(t);
    tr.x.push_back(x);
    tr.sigma.push_back(probe_sigma(evolution, x, t));
  };

  // RK4 from (t, x) over dt; empty if any stage meets a node or the wall.
  auto rk4 = [&](double t, double x, double dt) -> std::optional<double> {
    auto v = [&](double tt, double xx) -> std::optional<double> {
      if (xx < lo || xx > hi) {
        tr.left_grid = true;
        return std::nullopt;
      }
      return probe_velocity(evolution, xx, tt);
    };
    const auto k1 = v(t, x);
    if (!k1) return std::nullopt;
    const auto k2 = v(t + dt / 2, x + dt / 2 * *k1);
    if (!k2) return std::nullopt;
    const auto k3 = v(t + dt / 2, x + dt / 2 * *k2);
    if (!k3) return std::nullopt;
    const auto k4 = v(t + dt, x + dt * *k3);
    if (!k4) return std::nullopt;
    return x + dt / 6 * (*k1 + 2 * *k2 + 2 * *k3 + *k4);
  };

  // Advances over [t, t + dt] by recursive halving around nodes.
  auto advance = [&](auto&& self, double t, double x, double dt, std::size_t depth) -> std::optional<double> {
    if (auto next = rk4(t, x, dt)) return next;
    if (tr.left_grid || depth >= options.max_halvings) return std::nullopt;
    const auto mid = self(self, t, x, dt / 2, depth + 1);
    if (!mid) return std::nullopt;
    return self(self, t + dt / 2, *mid, dt / 2, depth + 1);
  };

  double x = x0;
  record(t0, x);
  for (std::size_t k = 0; k < steps; ++k) {
    const double t = t0 + static_cast<double>(k) * h;
    const auto next = advance(advance, t, x, h, 0);
    if (!next) {
      tr.node_failure = !tr.left_grid;
      return tr;
    }
    x = *next;
    record(t0 + static_cast<double>(k + 1) * h, x);
  }
  const double sigma = tr.sigma.back();
  if (std::abs(sigma) > options.outcome_threshold) tr.outcome = sigma > 0 ? Outcome::Plus : Outcome::Minus;
  return tr;
}

std::vector<double> sample_initial(std::span<const double> rho, const Grid& grid, std::size_t n,
                                   std::uint64_t seed) {
  if (n == 0) throw DomainError("sample count must be at least 1");
  if (rho.size() != grid.cells) throw DomainError("density length does not match the grid");
  std::vector<double> cdf(rho.size());
  double total = 0.0;
  for (std::size_t j = 0; j < rho.size(); ++j) {
    if (!(rho[j] >= 0.0)) throw DomainError("density must be non-negative");
    total += rho[j];
    cdf[j] = total;
  }
  if (!(total > 0.0)) throw DomainError("density has no mass");
  Rng rng(seed);
  std::vector<double> out(n);
  const double dx = grid.dx();
  for (double& x : out) {
    const double u = rng.uniform() * total;
    auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
    // Skip zero-mass cells that share the cumulative value.
    while (it != cdf.end() && rho[static_cast<std::size_t>(it - cdf.begin())] == 0.0) ++it;
    const auto j = std::min(static_cast<std::size_t>(it - cdf.begin()), rho.size() - 1);
    x = grid.x_min + (static_cast<double>(j) + rng.uniform()) * dx;
  }
  return out;
}

std::vector<double> sample_initial(const SpinorField& field, std::size_t n, std::uint64_t seed) {
  std::vector<double> rho(field.up.size());
  for (std::size_t j = 0; j < rho.size(); ++j) rho[j] = std::norm(field.up[j]) + std::norm(field.down[j]);
  return sample_initial(rho, field.grid, n, seed);
}

std::vector<Trajectory> integrate_all(std::span<const double> starts, const Evolution& evolution,
                                      const TrajectoryOptions& options, std::size_t threads) {
  std::vector<Trajectory> out(starts.size());
  const std::size_t workers = std::clamp<std::size_t>(threads, 1, std::max<std::size_t>(starts.size(), 1));
  auto work = [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) out[i] = integrate_trajectory(starts[i], evolution, options);
  };
  if (workers == 1) {
    work(0, starts.size());
    return out;
  }
  std::vector<std::exception_ptr> errors(workers);
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    const std::size_t begin = starts.size() * w / workers;
    const std::size_t end = starts.size() * (w + 1) / workers;
    pool.emplace_back([&, w, begin, end] {
      try {
        work(begin, end);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (std::thread& t : pool) t.join();
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return out;
}

EnsembleRun run_ensemble(const SternGerlachConfig& config, double theta, std::size_t n,
                         std::uint64_t seed, std::size_t threads) {
  config.validate();
  if (!(theta >= 0.0 && theta <= std::numbers::pi)) throw DomainError("theta must lie in [0, pi]");
  if (n == 0) throw DomainError("sample count must be at least 1");
  EnsembleRun run;
  run.theta = theta;
  SpinorField field0 = stern_gerlach_packet(config, theta);
  run.x0 = sample_initial(field0, n, seed);
  run.evolution = record_evolution(std::move(field0), stern_gerlach_stepper(config), config.units,
                                   config.steps(), config.snapshot_stride);
  run.trajectories = integrate_all(run.x0, run.evolution, {}, threads);

  EnsembleStats& s = run.stats;
  s.samples = n;
  s.seed = seed;
  for (const Trajectory& t : run.trajectories) {
    if (t.left_grid) ++s.left_grid;
    switch (t.outcome) {
      case Outcome::Plus: ++s.plus; break;
      case Outcome::Minus: ++s.minus; break;
      case Outcome::Unresolved: ++s.unresolved; break;
    }
  }
  const std::size_t resolved = s.plus + s.minus;
  if (resolved > 0) {
    s.p_plus = static_cast<double>(s.plus) / static_cast<double>(resolved);
    s.p_minus = static_cast<double>(s.minus) / static_cast<double>(resolved);
    s.expectation = s.p_plus - s.p_minus;
  }
  s.valid = s.left_grid == 0 && resolved > 0 &&
            static_cast<double>(s.unresolved) <= kMaxUnresolvedFraction * static_cast<double>(n);
  return run;
}

std::size_t BeamSplitterConfig::steps() const {
  return static_cast<std::size_t>(std::llround(t_final / dt));
}

void BeamSplitterConfig::validate() const {
  grid.validate();
  require(grid.cells % 2 == 0, "beam splitter grid needs an even cell count");
  require(std::abs(grid.x_min + grid.x_max) <= 1e-12 * (grid.x_max - grid.x_min),
          "beam splitter grid must be symmetric about x = 0");
  require(finite_all({units.hbar, units.mass}) && units.hbar > 0.0 && units.mass > 0.0,
          "hbar and mass must be positive");
  require(finite_all({dt, k0, sigma0, offset, t_final, transmission, exit_margin}),
          "beam splitter parameters must be finite");
  require(dt > 0.0, "dt must be positive");
  require(k0 > 0.0, "k0 must be positive");
  require(sigma0 > 0.0, "sigma0 must be positive");
  require(offset > 0.0 && offset < grid.x_max, "packet offset must lie inside the grid");
  require(t_final > 0.0 && steps() >= 1, "t_final must cover at least one step");
  require(snapshot_stride >= 1, "snapshot stride must be at least 1");
  require(transmission > 0.0 && transmission < 1.0, "transmission must lie in (0, 1)");
  require(exit_margin >= 0.0, "exit margin must be non-negative");
  const double dx = grid.dx();
  const double diffusion = dt * units.hbar / (units.mass * dx * dx);
  require(diffusion <= kMaxDiffusionNumber,
          "dt = " + fmt(dt) + " is too large for dx = " + fmt(dx) + " (dt hbar / (M dx^2) = " +
              fmt(diffusion) + " > " + fmt(kMaxDiffusionNumber) + ")");
}

const char* to_string(BeamPreparation p) {
  switch (p) {
    case BeamPreparation::Psi1: return "psi_1";
    case BeamPreparation::Psi2: return "psi_2";
    case BeamPreparation::Plus: return "plus";
    case BeamPreparation::Minus: return "minus";
  }
  return "psi_1";
}

BeamPreparation parse_beam_preparation(const std::string& name) {
  if (name == "psi_1" || name == "psi1") return BeamPreparation::Psi1;
  if (name == "psi_2" || name == "psi2") return BeamPreparation::Psi2;
  if (name == "plus") return BeamPreparation::Plus;
  if (name == "minus") return BeamPreparation::Minus;
  throw ConfigError("unknown preparation '" + name + "' (expected psi_1, psi_2, plus or minus)");
}

namespace {

std::vector<double> barrier_potential(const Grid& grid, double alpha) {
  std::vector<double> v(grid.cells, 0.0);
  const std::size_t c = grid.cells / 2;
  v[c - 1] = v[c] = alpha / (2.0 * grid.dx());
  return v;
}

// Stationary scattering on the lattice: a pure transmitted wave on the right
// is integrated leftwards and split into incident and reflected parts.
std::pair<cplx, cplx> lattice_scattering(const BeamSplitterConfig& c, double alpha) {
  const Grid& g = c.grid;
  const double dx = g.dx();
  const double q = c.k0;
  const double kin = c.units.hbar * c.units.hbar / (c.units.mass * dx * dx);
  const double energy = kin * (1.0 - std::cos(q * dx));
  const std::vector<double> v = barrier_potential(g, alpha);
  const std::size_t n = g.cells;
  std::vector<cplx> psi(n);
  psi[n - 1] = std::polar(1.0, q * g.x(n - 1));
  psi[n - 2] = std::polar(1.0, q * g.x(n - 2));
  for (std::size_t j = n - 2; j >= 1; --j) {
    psi[j - 1] = 2.0 * psi[j] - psi[j + 1] - (2.0 / kin) * (energy - v[j]) * psi[j];
  }
  // psi_j = A e^{i q x_j} + B e^{-i q x_j} at j = 0, 1
  const cplx e0 = std::polar(1.0, q * g.x(0)), e1 = std::polar(1.0, q * g.x(1));
  const cplx det = e0 / e1 - e1 / e0;
  const cplx a = (psi[0] / e1 - psi[1] / e0) / det;
  const cplx b = (e0 * psi[1] - e1 * psi[0]) / det;
  return {1.0 / a, b / a};
}

}  // namespace

BarrierCalibration calibrate_barrier(const BeamSplitterConfig& config) {
  config.validate();
  auto transmission = [&](double alpha) { return std::norm(lattice_scattering(config, alpha).first); };
  double lo = 0.0, hi = 1.0;
  while (transmission(hi) > config.transmission) {
    lo = hi;
    hi *= 2.0;
    if (hi > 1e12) throw DomainError("barrier calibration did not bracket the target transmission");
  }
  for (int it = 0; it < 200 && hi - lo > 1e-14 * hi; ++it) {
    const double mid = 0.5 * (lo + hi);
    (transmission(mid) > config.transmission ? lo : hi) = mid;
  }
  BarrierCalibration cal;
  cal.alpha = 0.5 * (lo + hi);
  std::tie(cal.t, cal.r) = lattice_scattering(config, cal.alpha);
  // Right-hand output of (psi_1 + i psi_2)/sqrt2 has amplitude (t + i r)/sqrt2.
  cal.gate3_side = std::imag(cal.r / cal.t) < 0.0 ? +1 : -1;
  return cal;
}

SpinorField beam_splitter_packet(const BeamSplitterConfig& config, BeamPreparation prep) {
  config.validate();
  const SpinorField p1 = gaussian_packet(config.grid, -config.offset, config.sigma0, config.k0, 1.0, 0.0);
  SpinorField p2 = p1;
  std::reverse(p2.up.begin(), p2.up.end());
  if (prep == BeamPreparation::Psi1) return p1;
  if (prep == BeamPreparation::Psi2) return p2;
  const cplx phase = prep == BeamPreparation::Plus ? cplx(0.0, 1.0) : cplx(0.0, -1.0);
  SpinorField out = p1;
  for (std::size_t j = 0; j < out.up.size(); ++j) out.up[j] = p1.up[j] + phase * p2.up[j];
  const double scale = 1.0 / std::sqrt(out.norm());
  for (cplx& a : out.up) a *= scale;
  return out;
}

BeamSplitterRun beam_splitter_scene(const BeamSplitterConfig& config, BeamPreparation prep,
                                    std::size_t n, std::uint64_t seed, std::size_t threads) {
  if (n == 0) throw DomainError("sample count must be at least 1");
  BeamSplitterRun run;
  run.preparation = prep;
  run.seed = seed;
  run.calibration = calibrate_barrier(config);
  const std::vector<double> v = barrier_potential(config.grid, run.calibration.alpha);
  const SpinorStepper stepper(config.grid, config.units, config.dt, 0.0, config.t_final, v, v, v, v);
  SpinorField field0 = beam_splitter_packet(config, prep);
  run.x0 = sample_initial(field0, n, seed);
  run.evolution =
      record_evolution(std::move(field0), stepper, config.units, config.steps(), config.snapshot_stride);
  run.trajectories = integrate_all(run.x0, run.evolution, {}, threads);
  run.gate.resize(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    const Trajectory& t = run.trajectories[i];
    const bool finished = !t.left_grid && !t.node_failure && t.x.size() == run.trajectories[0].x.size();
    const double side = finished ? t.x.back() * run.calibration.gate3_side : 0.0;
    if (side > config.exit_margin) {
      run.gate[i] = 3;
      ++run.gate3;
    } else if (side < -config.exit_margin) {
      run.gate[i] = 4;
      ++run.gate4;
    } else {
      ++run.unresolved;
    }
  }
  run.valid = static_cast<double>(run.unresolved) <= kMaxUnresolvedFraction * static_cast<double>(n);
  return run;
}

LabeledEnsemble labeled(const EnsembleRun& run, const std::string& label) {
  LabeledEnsemble e{label, spin_state(run.theta), run.x0, {}};
  for (const Trajectory& t : run.trajectories) {
    e.outcome.push_back(t.outcome == Outcome::Plus ? 0 : t.outcome == Outcome::Minus ? 1 : -1);
  }
  return e;
}

LabeledEnsemble labeled(const BeamSplitterRun& run, const std::string& label) {
  const double h = std::numbers::sqrt2 / 2.0;
  std::vector<cplx> amps;
  switch (run.preparation) {
    case BeamPreparation::Psi1: amps = {1.0, 0.0}; break;
    case BeamPreparation::Psi2: amps = {0.0, 1.0}; break;
    case BeamPreparation::Plus: amps = {h, cplx(0.0, h)}; break;
    case BeamPreparation::Minus: amps = {h, cplx(0.0, -h)}; break;
  }
  LabeledEnsemble e{label, QState(1, std::move(amps)), run.x0, {}};
  for (int g : run.gate) e.outcome.push_back(g == 3 ? 0 : g == 4 ? 1 : -1);
  return e;
}

OntModel ensemble_to_model(std::span<const LabeledEnsemble> ensembles, const std::string& setting,
                           const MeasurementBasis& basis) {
  if (ensembles.empty()) throw DomainError("no ensembles to export");
  const std::vector<double>& points = ensembles.front().x0;
  const std::size_t n = points.size();
  if (n == 0) throw DomainError("ensembles are empty");
  const double w = 1.0 / static_cast<double>(n);
  std::vector<LambdaPoint> lambda;
  for (double x : points) lambda.push_back({x, w});
  LambdaSpace space(std::move(lambda));

  std::vector<PreparationDensity> preps;
  ContextualResponse response;
  response.outcomes = basis.labels();
  QuantumAnnotation quantum;
  quantum.measurements.emplace(setting, basis);
  for (const LabeledEnsemble& e : ensembles) {
    if (e.x0 != points) {
      throw DomainError("ensemble '" + e.label + "' was sampled from different start points");
    }
    if (e.outcome.size() != n) throw DomainError("ensemble '" + e.label + "' has missing outcomes");
    std::vector<double> table(basis.size() * n, 0.0);
    for (std::size_t l = 0; l < n; ++l) {
      const int o = e.outcome[l];
      if (o < 0 || static_cast<std::size_t>(o) >= basis.size()) {
        throw DomainError("ensemble '" + e.label + "' has an unresolved trajectory at lambda " +
                          std::to_string(l));
      }
      table[static_cast<std::size_t>(o) * n + l] = 1.0;
    }
    preps.push_back(make_density(space, e.label, std::vector<double>(n, 1.0)));
    response.tables.emplace(std::make_pair(e.label, setting), std::move(table));
    quantum.states.emplace(e.label, e.state);
  }
  return OntModel(std::move(space), std::move(preps), std::move(response), 1, std::move(quantum));
}

nlohmann::json to_json(const EnsembleStats& s) {
  return {{"N", s.samples},
          {"counts", {{"plus", s.plus}, {"minus", s.minus}, {"unresolved", s.unresolved}}},
          {"left_grid", s.left_grid},
          {"p_plus", s.p_plus},
          {"p_minus", s.p_minus},
          {"expectation_sigma", s.expectation},
          {"seed", s.seed},
          {"valid", s.valid}};
}

void write_trajectories_csv(std::ostream& out, std::span<const Trajectory> trajectories) {
  out << "traj_id,t,x,sigma\n";
  for (std::size_t i = 0; i < trajectories.size(); ++i) {
    const Trajectory& tr = trajectories[i];
    for (std::size_t k = 0; k < tr.x.size(); ++k) {
      out << i << ',' << fmt(tr.t[k]) << ',' << fmt(tr.x[k]) << ',' << fmt(tr.sigma[k]) << '\n';
    }
  }
}

void write_field_csv(std::ostream& out, const Evolution& evolution, std::size_t frame_stride) {
  if (frame_stride == 0) throw DomainError("frame stride must be at least 1");
  out << "t,x,rho_up,rho_down,current\n";
  for (std::size_t k = 0; k < evolution.frames.size(); k += frame_stride) {
    const Frame& f = evolution.frames[k];
    for (std::size_t j = 0; j < f.rho_up.size(); ++j) {
      out << fmt(f.t) << ',' << fmt(evolution.grid.x(j)) << ',' << fmt(f.rho_up[j]) << ','
          << fmt(f.rho_down[j]) << ',' << fmt(f.current[j]) << '\n';
    }
  }
}

void write_trajectories_svg(std::ostream& out, std::span<const Trajectory> trajectories,
                            const Evolution& evolution, std::size_t max_paths) {
  constexpr double width = 800.0, height = 400.0, strip = 30.0;
  const double t_span = std::max(evolution.t_final() - evolution.frames.front().t, 1e-300);
  const Grid& g = evolution.grid;
  auto px = [&](double t) { return (t - evolution.frames.front().t) / t_span * (width - strip); };
  auto py = [&](double x) { return height - (x - g.x_min) / (g.x_max - g.x_min) * height; };
  char buf[96];
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
      << "\" viewBox=\"0 0 " << width << ' ' << height << "\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";

  const Frame& last = evolution.frames.back();
  double peak = 0.0;
  for (std::size_t j = 0; j < last.rho_up.size(); ++j) peak = std::max(peak, last.rho_up[j] + last.rho_down[j]);
  const double cell_h = height / static_cast<double>(g.cells);
  for (std::size_t j = 0; j < last.rho_up.size() && peak > 0.0; ++j) {
    const double level = (last.rho_up[j] + last.rho_down[j]) / peak;
    if (level < 1e-3) continue;
    std::snprintf(buf, sizeof buf, "%.2f", py(g.x(j)) - cell_h / 2);
    out << "<rect x=\"" << width - strip << "\" y=\"" << buf << "\" width=\"" << strip << "\" height=\""
        << cell_h << "\" fill=\"black\" fill-opacity=\"";
    std::snprintf(buf, sizeof buf, "%.3f", level);
    out << buf << "\"/>\n";
  }

  const std::size_t count = std::min(max_paths, trajectories.size());
  for (std::size_t p = 0; p < count; ++p) {
    const Trajectory& tr = trajectories[p * trajectories.size() / count];
    const char* colour = tr.outcome == Outcome::Plus    ? "#c0392b"
                         : tr.outcome == Outcome::Minus ? "#2c6fbb"
                                                        : "#888888";
    out << "<polyline fill=\"none\" stroke=\"" << colour << "\" stroke-width=\"0.6\" points=\"";
    for (std::size_t k = 0; k < tr.x.size(); ++k) {
      std::snprintf(buf, sizeof buf, "%s%.2f,%.2f", k ? " " : "", px(tr.t[k]), py(tr.x[k]));
      out << buf;
    }
    out << "\"/>\n";
  }
  out << "</svg>\n";
}

}  // namespace psilab::bohm
