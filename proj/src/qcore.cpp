#include "psilab/qcore.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numbers>

#include "psilab/errors.hpp"

namespace psilab {

namespace {

using Matrix = Eigen::MatrixXcd;

std::size_t checked_dim(std::size_t qubits) {
  if (qubits == 0 || qubits > 20) {
    throw DomainError("qubit count must be in [1, 20], got " + std::to_string(qubits));
  }
  return std::size_t{1} << qubits;
}

std::string format_g15(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.15g", v);
  return buf;
}

Matrix haar_unitary(std::size_t dim, Rng& rng) {
  Matrix z(dim, dim);
  for (Eigen::Index c = 0; c < z.cols(); ++c) {
    for (Eigen::Index r = 0; r < z.rows(); ++r) {
      const double re = rng.normal();
      z(r, c) = complex(re, rng.normal());
    }
  }
  Eigen::HouseholderQR<Matrix> qr(z);
  Matrix q = qr.householderQ();
  const Matrix& r = qr.matrixQR();
  for (Eigen::Index c = 0; c < q.cols(); ++c) {
    const complex d = r(c, c);
    if (std::abs(d) > 0.0) q.col(c) *= d / std::abs(d);
  }
  return q;
}

MeasurementBasis basis_from_columns(const Matrix& u, std::size_t qubits) {
  std::vector<QState> vectors;
  vectors.reserve(static_cast<std::size_t>(u.cols()));
  for (Eigen::Index c = 0; c < u.cols(); ++c) {
    std::vector<complex> amps(u.col(c).data(), u.col(c).data() + u.rows());
    vectors.emplace_back(qubits, std::move(amps));
  }
  return MeasurementBasis(std::move(vectors));
}

}  // namespace

QState::QState(std::size_t qubits, std::vector<complex> amplitudes)
    : qubits_(qubits), amps_(std::move(amplitudes)) {
  const std::size_t dim = checked_dim(qubits);
  if (amps_.size() != dim) {
    throw DomainError("amplitude vector has length " + std::to_string(amps_.size()) +
                      ", expected " + std::to_string(dim));
  }
  double norm2 = 0.0;
  double peak = 0.0;
  for (const complex& a : amps_) {
    if (!std::isfinite(a.real()) || !std::isfinite(a.imag())) {
      throw DomainError("amplitude is not finite");
    }
    norm2 += std::norm(a);
    peak = std::max(peak, std::abs(a));
  }
  if (!(norm2 > 0.0)) throw DomainError("cannot normalize the zero vector");

  // Phase reference: first amplitude that is not negligible against the peak.
  const auto ref = std::find_if(amps_.begin(), amps_.end(), [&](const complex& a) {
    return std::abs(a) > tolerance::construction * peak;
  });
  // Already canonical input is kept bit for bit, so serialized states
  // round-trip exactly.
  const bool canonical = std::abs(norm2 - 1.0) <= 8.0 * std::numeric_limits<double>::epsilon() &&
                         ref->imag() == 0.0 && ref->real() > 0.0;
  if (canonical) return;
  const complex phase = *ref / std::abs(*ref);
  const complex scale = std::conj(phase) / std::sqrt(norm2);
  for (complex& a : amps_) a *= scale;
  *ref = complex(std::abs(*ref), 0.0);
}

QState QState::basis_state(std::size_t qubits, std::size_t index) {
  const std::size_t dim = checked_dim(qubits);
  if (index >= dim) throw DomainError("basis index out of range");
  std::vector<complex> amps(dim);
  amps[index] = 1.0;
  return QState(qubits, std::move(amps));
}

complex QState::inner(const QState& other) const {
  if (dim() != other.dim()) {
    throw DomainError("dimension mismatch: " + std::to_string(qubits_) + " vs " +
                      std::to_string(other.qubits_) + " qubits");
  }
  complex sum{};
  for (std::size_t i = 0; i < amps_.size(); ++i) sum += std::conj(amps_[i]) * other.amps_[i];
  return sum;
}

MeasurementBasis::MeasurementBasis(std::vector<QState> vectors, std::vector<std::string> labels)
    : vectors_(std::move(vectors)), labels_(std::move(labels)) {
  if (vectors_.empty()) throw DomainError("a basis needs at least one vector");
  const std::size_t q = vectors_.front().qubits();
  for (const QState& v : vectors_) {
    if (v.qubits() != q) throw DomainError("basis vectors have mixed qubit counts");
  }
  if (vectors_.size() != vectors_.front().dim()) {
    throw DomainError("basis has " + std::to_string(vectors_.size()) + " vectors for dimension " +
                      std::to_string(vectors_.front().dim()));
  }
  if (labels_.empty()) {
    for (std::size_t i = 0; i < vectors_.size(); ++i) labels_.push_back("phi_" + std::to_string(i + 1));
  } else if (labels_.size() != vectors_.size()) {
    throw DomainError("basis label count does not match vector count");
  }
  if (gram_deviation() > tolerance::verification) {
    throw DomainError("basis vectors are not orthonormal");
  }
}

double MeasurementBasis::gram_deviation() const {
  double worst = 0.0;
  for (std::size_t i = 0; i < vectors_.size(); ++i) {
    for (std::size_t j = i; j < vectors_.size(); ++j) {
      const complex g = vectors_[i].inner(vectors_[j]);
      worst = std::max(worst, std::abs(g - (i == j ? 1.0 : 0.0)));
    }
  }
  return worst;
}

std::pair<QState, QState> make_qubit_pair(double theta, double chi) {
  if (!std::isfinite(theta) || theta < 0.0 || theta >= std::numbers::pi / 2) {
    throw DomainError("theta must lie in [0, pi/2)");
  }
  if (!std::isfinite(chi)) throw DomainError("chi must be finite");
  const double c = std::cos(theta / 2);
  const double s = std::sin(theta / 2);
  return {QState(1, {c, -s}), QState(1, {c, s})};
}

QState tensor(std::span<const QState> factors) {
  if (factors.empty()) throw DomainError("tensor product of an empty list");
  std::size_t qubits = 0;
  std::vector<complex> amps{1.0};
  for (const QState& f : factors) {
    qubits += f.qubits();
    std::vector<complex> next;
    next.reserve(amps.size() * f.dim());
    for (const complex& a : amps) {
      for (const complex& b : f.amplitudes()) next.push_back(a * b);
    }
    amps = std::move(next);
  }
  return QState(qubits, std::move(amps));
}

double born(const QState& phi, const QState& psi) {
  return std::min(1.0, std::norm(phi.inner(psi)));
}

QState ket0() { return QState(1, {1.0, 0.0}); }
QState ket1() { return QState(1, {0.0, 1.0}); }
QState ket_plus() { return QState(1, {1.0, 1.0}); }
QState ket_minus() { return QState(1, {1.0, -1.0}); }

MeasurementBasis plus_minus_basis() {
  return MeasurementBasis({ket_plus(), ket_minus()}, {"+", "-"});
}

MeasurementBasis computational_basis(std::size_t qubits) {
  const std::size_t dim = checked_dim(qubits);
  std::vector<QState> vectors;
  for (std::size_t i = 0; i < dim; ++i) vectors.push_back(QState::basis_state(qubits, i));
  return MeasurementBasis(std::move(vectors));
}

MeasurementBasis pbr_basis_2qubit() {
  const QState z0 = ket0(), z1 = ket1(), p = ket_plus(), m = ket_minus();
  auto pair = [](const QState& a, const QState& b, const QState& c, const QState& d) {
    const QState ab = tensor(std::vector{a, b});
    const QState cd = tensor(std::vector{c, d});
    std::vector<complex> amps(4);
    for (std::size_t i = 0; i < 4; ++i) amps[i] = ab[i] + cd[i];
    return QState(2, std::move(amps));
  };
  return MeasurementBasis({pair(z0, z1, z1, z0), pair(z0, m, z1, p), pair(p, z1, m, z0),
                           pair(p, m, m, p)});
}

MeasurementBasis random_basis(std::size_t qubits, Rng& rng) {
  return basis_from_columns(haar_unitary(checked_dim(qubits), rng), qubits);
}

CoefficientTable coefficient_table(std::span<const QState> states, const MeasurementBasis& basis) {
  CoefficientTable table;
  table.reserve(states.size());
  for (const QState& s : states) {
    if (s.dim() != basis[0].dim()) throw DomainError("state and basis dimensions differ");
    std::vector<double> row;
    row.reserve(basis.size());
    for (const QState& v : basis.vectors()) row.push_back(std::abs(v.inner(s)));
    table.push_back(std::move(row));
  }
  return table;
}

void write_coefficient_csv(std::ostream& out, const CoefficientTable& table,
                           std::span<const std::string> row_labels) {
  if (row_labels.size() != table.size()) throw DomainError("row label count mismatch");
  const std::size_t cols = table.empty() ? 0 : table.front().size();
  out << "state";
  for (std::size_t i = 0; i < cols; ++i) out << ",phi_" << (i + 1);
  out << '\n';
  for (std::size_t r = 0; r < table.size(); ++r) {
    out << row_labels[r];
    for (double v : table[r]) out << ',' << format_g15(v);
    out << '\n';
  }
}

std::vector<QState> product_states(double theta, std::size_t qubits) {
  const std::size_t dim = checked_dim(qubits);
  const auto [psi0, psi1] = make_qubit_pair(theta);
  std::vector<QState> out;
  out.reserve(dim);
  for (std::size_t x = 0; x < dim; ++x) {
    std::vector<QState> factors;
    for (std::size_t k = 0; k < qubits; ++k) {
      const bool bit = (x >> (qubits - 1 - k)) & 1u;
      factors.push_back(bit ? psi1 : psi0);
    }
    out.push_back(tensor(factors));
  }
  return out;
}

BasisSearchResult pbr_basis_n(double theta, std::size_t qubits, const BasisSearchConfig& config) {
  if (qubits < 2) throw DomainError("pbr_basis_n needs at least 2 qubits");
  if (!std::isfinite(theta) || theta <= 0.0 || theta >= std::numbers::pi / 2) {
    throw DomainError("theta must lie in (0, pi/2)");
  }
  const std::size_t dim = checked_dim(qubits);
  const auto d = static_cast<Eigen::Index>(dim);

  Matrix targets(d, d);  // column x = Psi(x)
  {
    const std::vector<QState> products = product_states(theta, qubits);
    for (Eigen::Index x = 0; x < d; ++x) {
      for (Eigen::Index i = 0; i < d; ++i) targets(i, x) = products[static_cast<std::size_t>(x)][static_cast<std::size_t>(i)];
    }
  }

  // r_x = <Psi(x)| U e_x>, the quantities that must vanish.
  auto residuals = [&](const Matrix& u) {
    Eigen::VectorXcd r(d);
    for (Eigen::Index x = 0; x < d; ++x) r(x) = targets.col(x).dot(u.col(x));
    return r;
  };

  const Eigen::Index params = d * d;
  BasisSearchResult result;
  result.residual = std::numeric_limits<double>::infinity();
  Rng rng(config.seed);
  const Matrix identity = Matrix::Identity(d, d);

  for (std::size_t attempt = 0; attempt < config.restarts; ++attempt) {
    Matrix u = haar_unitary(dim, rng);
    double norm = residuals(u).norm();
    std::size_t it = 0;
    for (; it < config.max_iterations && norm > 1e-14; ++it) {
      const Eigen::VectorXcd r = residuals(u);
      const Matrix w = targets.adjoint() * u;  // w(x, a) = <Psi(x)|u_a>
      // Real Jacobian of (Re r, Im r) against the d^2 generators of u(d).
      Eigen::MatrixXd jac = Eigen::MatrixXd::Zero(2 * d, params);
      auto put = [&](Eigen::Index row, Eigen::Index col, complex v) {
        jac(row, col) += v.real();
        jac(row + d, col) += v.imag();
      };
      const complex i1(0.0, 1.0);
      Eigen::Index g = 0;
      for (Eigen::Index a = 0; a < d; ++a) put(a, g++, i1 * w(a, a));
      for (Eigen::Index a = 0; a < d; ++a) {
        for (Eigen::Index b = a + 1; b < d; ++b) {
          put(b, g, w(b, a));
          put(a, g, -w(a, b));
          ++g;
          put(b, g, i1 * w(b, a));
          put(a, g, i1 * w(a, b));
          ++g;
        }
      }
      Eigen::VectorXd rhs(2 * d);
      rhs << -r.real(), -r.imag();
      const Eigen::VectorXd step = jac.completeOrthogonalDecomposition().solve(rhs);

      Matrix k = Matrix::Zero(d, d);
      g = 0;
      for (Eigen::Index a = 0; a < d; ++a) k(a, a) += i1 * step(g++);
      for (Eigen::Index a = 0; a < d; ++a) {
        for (Eigen::Index b = a + 1; b < d; ++b) {
          k(a, b) += step(g);
          k(b, a) -= step(g);
          ++g;
          k(a, b) += i1 * step(g);
          k(b, a) += i1 * step(g);
          ++g;
        }
      }
      const Matrix cayley = (identity - 0.5 * k).partialPivLu().solve(identity + 0.5 * k);
      u = u * cayley;
      norm = residuals(u).norm();
    }
    result.iterations += it;
    result.restarts_used = attempt + 1;
    if (norm < result.residual) result.residual = norm;

    const Eigen::VectorXcd r = residuals(u);
    if (r.cwiseAbs().maxCoeff() <= config.tolerance) {
      MeasurementBasis basis = basis_from_columns(u, qubits);
      result.residual = norm;
      result.basis.emplace(std::move(basis));
      return result;
    }
  }
  return result;
}

}  // namespace psilab
