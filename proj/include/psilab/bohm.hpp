#pragma once

#include <complex>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "psilab/ontology.hpp"
#include "psilab/qcore.hpp"

namespace psilab::bohm {

using cplx = std::complex<double>;

// Uniform cell-centred grid on [x_min, x_max] with Dirichlet walls.
struct Grid {
  double x_min = -20.0;
  double x_max = 20.0;
  std::size_t cells = 1024;

  double dx() const { return (x_max - x_min) / static_cast<double>(cells); }
  double x(std::size_t j) const { return x_min + (static_cast<double>(j) + 0.5) * dx(); }
  bool contains(double x) const { return x >= x_min && x <= x_max; }
  void validate() const;
};

struct Units {
  double hbar = 1.0;
  double mass = 1.0;
};

// dt * hbar / (M dx^2) above this loses the short-wavelength content of the
// packet; the scheme stays unitary but the dynamics stop being meaningful.
inline constexpr double kMaxDiffusionNumber = 4.0;
// dt * max|V| / hbar above this aliases the potential phase per step.
inline constexpr double kMaxPotentialPhase = 1.0;

// Spin-1/2 packet in a time-windowed linear field B.a = b0 + b1 x.
// The + component feels +mu B.a, the - component -mu B.a.
struct SternGerlachConfig {
  Units units;
  double mu = 1.0;
  double b0 = 0.0;
  double b1 = -10.0;
  double t_on = 0.0;
  double t_off = 0.4;
  Grid grid;
  double dt = 1e-3;
  double t_final = 3.0;
  std::size_t snapshot_stride = 10;
  double sigma0 = 1.0;  // position std of the initial packet
  double x0 = 0.0;
  std::string direction = "z";

  double field(double x, double t) const;
  std::size_t steps() const;
  void validate() const;  // throws ConfigError
};

struct SpinorField {
  Grid grid;
  std::vector<cplx> up;    // psi_{+a}
  std::vector<cplx> down;  // psi_{-a}
  double time = 0.0;

  double norm() const;  // sum (|up|^2 + |down|^2) dx
};

// Gaussian envelope exp(-(x-center)^2 / (4 sigma^2) + i k x), normalized on
// the grid, times the spinor (a_up, a_down) normalized to unit length.
SpinorField gaussian_packet(const Grid& grid, double center, double sigma, double k, cplx a_up,
                            cplx a_down);

// cos(theta/2)|up> + sin(theta/2)|down> on the config's initial envelope.
SpinorField stern_gerlach_packet(const SternGerlachConfig& config, double theta);

// One Crank-Nicolson step for a single component with a fixed potential:
// (1 + i dt H / 2 hbar) psi' = (1 - i dt H / 2 hbar) psi.
class Propagator {
 public:
  Propagator(const Grid& grid, const Units& units, double dt, std::vector<double> potential);
  void step(std::span<cplx> psi) const;

 private:
  std::size_t n_;
  cplx off_;                    // off-diagonal of the implicit side
  std::vector<cplx> diag_rhs_;  // diagonal of the explicit side
  std::vector<cplx> c_prime_;   // Thomas forward-sweep coefficients
  std::vector<cplx> inv_den_;
};

// Steps a spinor with one potential pair while t + dt/2 lies in
// [t_on, t_off) and another outside.
class SpinorStepper {
 public:
  SpinorStepper(const Grid& grid, const Units& units, double dt, double t_on, double t_off,
                std::vector<double> on_up, std::vector<double> on_down,
                std::vector<double> off_up, std::vector<double> off_down);

  void step(SpinorField& field) const;
  double dt() const { return dt_; }

 private:
  double dt_, t_on_, t_off_;
  Propagator on_up_, on_down_, off_up_, off_down_;
};

SpinorStepper stern_gerlach_stepper(const SternGerlachConfig& config);

// Advances `steps` time steps in the config's field.
SpinorField evolve(SpinorField field, const SternGerlachConfig& config, std::size_t steps);

struct DensityCurrent {
  std::vector<double> rho;
  std::vector<double> current;
};

// Probability flux through the cells + 1 faces, (hbar/M) Im(psi_j* psi_{j+1}) / dx
// summed over components; the two wall faces carry zero.
std::vector<double> face_current(const SpinorField& field, const Units& units);

// rho = |up|^2 + |down|^2 per cell; J per cell is the mean of its two face
// fluxes, i.e. the central-difference form of (hbar/M) Im(psi* grad psi).
DensityCurrent density_current(const SpinorField& field, const Units& units);

// Grid L2 norm of (rho(after) - rho(before)) / (2 dt) + face-flux divergence
// of `mid`, for three fields one step dt apart.
double continuity_residual(const SpinorField& before, const SpinorField& mid, const SpinorField& after,
                           const Units& units, double dt);

// Node cutoff: rho below node_fraction * max(rho) has no velocity or spin.
inline constexpr double kNodeFraction = 1e-12;

// J/rho at x with J and rho interpolated linearly between cell centres.
// Empty at a node. Throws DomainError when x is outside the grid.
std::optional<double> velocity(const SpinorField& field, double x, const Units& units);

// (|up|^2 - |down|^2) / rho at x; empty at a node.
std::optional<double> spin_projection(const SpinorField& field, double x);

// -hbar^2 lap|psi| / (2 M |psi|) per component by central differences.
// Empty where |psi|^2 < kNodeFraction * max|psi|^2 and on the wall cells.
struct QuantumPotential {
  std::vector<std::optional<double>> up;
  std::vector<std::optional<double>> down;
};

QuantumPotential quantum_potential(const SpinorField& field, const Units& units);

// Recorded densities and current every `frame_dt`.
struct Frame {
  double t = 0.0;
  std::vector<double> rho_up;
  std::vector<double> rho_down;
  std::vector<double> current;
  double rho_max = 0.0;
};

struct Evolution {
  Grid grid;
  Units units;
  double frame_dt = 0.0;
  std::vector<Frame> frames;
  SpinorField final_field;

  double t_final() const { return frames.empty() ? 0.0 : frames.back().t; }
};

// Runs `steps` steps, recording a frame at t0 and after every `stride` steps.
Evolution record_evolution(SpinorField initial, const SpinorStepper& stepper, const Units& units,
                           std::size_t steps, std::size_t stride);

enum class Outcome { Plus, Minus, Unresolved };

const char* to_string(Outcome o);

struct Trajectory {
  double x0 = 0.0;
  std::vector<double> t;
  std::vector<double> x;
  std::vector<double> sigma;  // NaN where the path sits on a node
  Outcome outcome = Outcome::Unresolved;
  bool left_grid = false;     // crossed the wall margin: the run is invalid
  bool node_failure = false;  // a step could not be resolved around a node
};

struct TrajectoryOptions {
  double step = 0.0;  // RK4 step; 0 means the evolution's frame interval
  std::size_t max_halvings = 10;
  double outcome_threshold = 1.0 - 1e-2;
  double wall_margin_cells = 1.0;
};

// RK4 for dx/dt = J/rho with rho and J interpolated linearly in x and t.
// A step that meets a node is retried as two half steps, at most
// max_halvings deep.
Trajectory integrate_trajectory(double x0, const Evolution& evolution,
                                const TrajectoryOptions& options = {});

// Inverse-CDF draw over cells weighted by rho, uniform within the cell.
std::vector<double> sample_initial(std::span<const double> rho, const Grid& grid, std::size_t n,
                                   std::uint64_t seed);
std::vector<double> sample_initial(const SpinorField& field, std::size_t n, std::uint64_t seed);

// Trajectories for every start point in input order. Work is split across
// `threads` workers; results do not depend on the split.
std::vector<Trajectory> integrate_all(std::span<const double> starts, const Evolution& evolution,
                                      const TrajectoryOptions& options, std::size_t threads);

inline constexpr double kMaxUnresolvedFraction = 0.01;

struct EnsembleStats {
  std::size_t samples = 0;
  std::size_t plus = 0;
  std::size_t minus = 0;
  std::size_t unresolved = 0;
  std::size_t left_grid = 0;
  double p_plus = 0.0;   // among resolved trajectories
  double p_minus = 0.0;
  double expectation = 0.0;  // p_plus - p_minus
  std::uint64_t seed = 0;
  bool valid = false;
};

struct EnsembleRun {
  double theta = 0.0;
  std::vector<double> x0;
  std::vector<Trajectory> trajectories;
  Evolution evolution;
  EnsembleStats stats;
};

// Prepares cos(theta/2)|up> + sin(theta/2)|down>, evolves to t_final and
// integrates n trajectories from rho_0. theta in [0, pi].
EnsembleRun run_ensemble(const SternGerlachConfig& config, double theta, std::size_t n,
                         std::uint64_t seed, std::size_t threads = 1);

// Two packets of momentum +-k0 approach a delta-like barrier at x = 0 tuned
// to transmit half the flux.
struct BeamSplitterConfig {
  Units units;
  Grid grid{-45.0, 45.0, 3072};
  double dt = 1e-3;
  double k0 = 6.0;
  double sigma0 = 4.0;
  double offset = 15.0;  // packets start at -offset and +offset
  double t_final = 5.5;
  std::size_t snapshot_stride = 10;
  double transmission = 0.5;
  double exit_margin = 1.0;

  std::size_t steps() const;
  void validate() const;
};

enum class BeamPreparation { Psi1, Psi2, Plus, Minus };

const char* to_string(BeamPreparation p);
BeamPreparation parse_beam_preparation(const std::string& name);

struct BarrierCalibration {
  double alpha = 0.0;  // barrier strength; alpha / (2 dx) on the two centre cells
  cplx t;
  cplx r;
  int gate3_side = +1;  // sign of x where (psi_1 + i psi_2)/sqrt2 exits
};

// Solves the stationary lattice scattering problem at wavenumber k0 and
// bisects alpha until |t|^2 = transmission.
BarrierCalibration calibrate_barrier(const BeamSplitterConfig& config);

struct BeamSplitterRun {
  BeamPreparation preparation = BeamPreparation::Psi1;
  BarrierCalibration calibration;
  std::vector<double> x0;
  std::vector<Trajectory> trajectories;
  std::vector<int> gate;  // 3, 4, or 0 when the exit is unresolved
  std::size_t gate3 = 0;
  std::size_t gate4 = 0;
  std::size_t unresolved = 0;
  std::uint64_t seed = 0;
  bool valid = false;
  Evolution evolution;
};

// psi_1 starts left moving right, psi_2 is its mirror image; plus and minus
// are (psi_1 +- i psi_2)/sqrt2.
SpinorField beam_splitter_packet(const BeamSplitterConfig& config, BeamPreparation prep);

BeamSplitterRun beam_splitter_scene(const BeamSplitterConfig& config, BeamPreparation prep,
                                    std::size_t n, std::uint64_t seed, std::size_t threads = 1);

// One preparation's sampled start points and the outcome index each produced
// (-1 when unresolved).
struct LabeledEnsemble {
  std::string label;
  QState state;
  std::vector<double> x0;
  std::vector<int> outcome;
};

LabeledEnsemble labeled(const EnsembleRun& run, const std::string& label);
LabeledEnsemble labeled(const BeamSplitterRun& run, const std::string& label);

// Contextual model with lambda = the shared start points (weight 1/N each,
// every preparation uniform over all of them) and response = the observed
// outcome. All ensembles must share the same start points and be fully
// resolved.
OntModel ensemble_to_model(std::span<const LabeledEnsemble> ensembles, const std::string& setting,
                           const MeasurementBasis& basis);

nlohmann::json to_json(const EnsembleStats& stats);

// traj_id,t,x,sigma
void write_trajectories_csv(std::ostream& out, std::span<const Trajectory> trajectories);

// t,x,rho_up,rho_down,current for every `frame_stride`-th frame.
void write_field_csv(std::ostream& out, const Evolution& evolution, std::size_t frame_stride);

// Trajectory bundle as x-versus-t polylines, at most `max_paths` of them,
// over a density heat-line of the final frame.
void write_trajectories_svg(std::ostream& out, std::span<const Trajectory> trajectories,
                            const Evolution& evolution, std::size_t max_paths = 200);

}  // namespace psilab::bohm
