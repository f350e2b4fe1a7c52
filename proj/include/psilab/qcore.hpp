#pragma once

#include <complex>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "psilab/random.hpp"

namespace psilab {

using complex = std::complex<double>;

namespace tolerance {
inline constexpr double construction = 1e-12;
inline constexpr double verification = 1e-10;
inline constexpr double search = 1e-9;
}  // namespace tolerance

// Pure state of `qubits` qubits in the computational basis. Index bits are
// ordered with the leftmost tensor factor as the most significant bit.
//
// Construction normalizes the amplitudes and fixes the global phase so the
// first nonzero amplitude is real and positive.
class QState {
 public:
  QState(std::size_t qubits, std::vector<complex> amplitudes);

  static QState basis_state(std::size_t qubits, std::size_t index);

  std::size_t qubits() const { return qubits_; }
  std::size_t dim() const { return amps_.size(); }
  std::span<const complex> amplitudes() const { return amps_; }
  complex operator[](std::size_t i) const { return amps_[i]; }

  // <this|other>
  complex inner(const QState& other) const;

 private:
  std::size_t qubits_;
  std::vector<complex> amps_;
};

// Orthonormal basis of the 2^n-dimensional space, one vector per outcome.
class MeasurementBasis {
 public:
  // Throws DomainError unless the vectors form an orthonormal basis within
  // tolerance::verification. Labels default to "phi_1".."phi_{2^n}".
  explicit MeasurementBasis(std::vector<QState> vectors,
                            std::vector<std::string> labels = {});

  std::size_t qubits() const { return vectors_.front().qubits(); }
  std::size_t size() const { return vectors_.size(); }
  const QState& operator[](std::size_t i) const { return vectors_[i]; }
  const std::vector<QState>& vectors() const { return vectors_; }
  const std::vector<std::string>& labels() const { return labels_; }

  // max |<v_i|v_j> - delta_ij|
  double gram_deviation() const;

 private:
  std::vector<QState> vectors_;
  std::vector<std::string> labels_;
};

// The pair cos(t/2)|0> -+ sin(t/2)|1> with overlap cos(theta). The phase chi
// of |0> + tan(theta) e^{i chi}|1> is absorbed into the basis definition and
// does not appear in the returned amplitudes.
std::pair<QState, QState> make_qubit_pair(double theta, double chi = 0.0);

QState tensor(std::span<const QState> factors);

// |<phi|psi>|^2
double born(const QState& phi, const QState& psi);

// Named single-qubit states.
QState ket0();
QState ket1();
QState ket_plus();
QState ket_minus();

// {|+>, |->} with labels "+", "-".
MeasurementBasis plus_minus_basis();
MeasurementBasis computational_basis(std::size_t qubits);

// Two-qubit basis whose vector i is orthogonal to exactly one of the four
// products of |0> and |+>.
MeasurementBasis pbr_basis_2qubit();

// Haar-distributed orthonormal basis.
MeasurementBasis random_basis(std::size_t qubits, Rng& rng);

// entry[j][i] = |<basis_i|states_j>|
using CoefficientTable = std::vector<std::vector<double>>;

CoefficientTable coefficient_table(std::span<const QState> states,
                                   const MeasurementBasis& basis);

// CSV with header `state,phi_1,...` and 15 significant digits.
void write_coefficient_csv(std::ostream& out, const CoefficientTable& table,
                           std::span<const std::string> row_labels);

struct BasisSearchConfig {
  std::uint64_t seed = 20120101;
  std::size_t restarts = 16;
  std::size_t max_iterations = 200;
  double tolerance = tolerance::search;
};

struct BasisSearchResult {
  std::optional<MeasurementBasis> basis;
  double residual = 0.0;  // sqrt(sum_x |<Phi_x|Psi(x)>|^2) of the best attempt
  std::size_t restarts_used = 0;
  std::size_t iterations = 0;

  bool found() const { return basis.has_value(); }
};

// Products Psi(x) = psi_{x_1} (x) ... (x) psi_{x_n} of the make_qubit_pair
// states, in bit-string order.
std::vector<QState> product_states(double theta, std::size_t qubits);

// Searches for an orthonormal basis where vector x is orthogonal to Psi(x)
// for every bit string x. Gauss-Newton on the unitary group with a Cayley
// retraction, restarted from Haar-random points. Absence of a solution is a
// result (basis empty), not an error.
BasisSearchResult pbr_basis_n(double theta, std::size_t qubits,
                              const BasisSearchConfig& config = {});

}  // namespace psilab
