#include "simplex.hpp"

#include <cmath>
#include <limits>

#include "psilab/errors.hpp"

namespace psilab::detail {

PhaseOneResult phase_one(std::span<const double> a, std::size_t rows, std::size_t cols,
                         std::span<const double> b, double tol, std::size_t max_iterations) {
  if (a.size() != rows * cols || b.size() != rows) {
    throw DomainError("phase_one: constraint matrix dimensions are inconsistent");
  }
  PhaseOneResult result;
  if (rows == 0) {
    result.status = PhaseOneStatus::Feasible;
    result.x.assign(cols, 0.0);
    return result;
  }

  // Columns: [x (cols) | artificials (rows) | rhs]; last row holds the
  // reduced costs of the phase-1 objective.
  const std::size_t width = cols + rows + 1;
  const std::size_t rhs = width - 1;
  std::vector<double> t((rows + 1) * width, 0.0);
  auto at = [&](std::size_t r, std::size_t c) -> double& { return t[r * width + c]; };

  std::vector<std::size_t> basis(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double sign = b[r] < 0.0 ? -1.0 : 1.0;
    for (std::size_t c = 0; c < cols; ++c) at(r, c) = sign * a[r * cols + c];
    at(r, cols + r) = 1.0;
    at(r, rhs) = sign * b[r];
    basis[r] = cols + r;
  }
  for (std::size_t c = 0; c < width; ++c) {
    if (c >= cols && c < cols + rows) continue;
    double s = 0.0;
    for (std::size_t r = 0; r < rows; ++r) s += at(r, c);
    at(rows, c) = -s;
  }

  constexpr double kPivotTol = 1e-12;
  for (;;) {
    std::size_t entering = width;
    for (std::size_t c = 0; c < rhs; ++c) {
      if (at(rows, c) < -tol) {
        entering = c;
        break;
      }
    }
    if (entering == width) break;
    if (result.iterations >= max_iterations) {
      result.status = PhaseOneStatus::IterationLimit;
      result.artificial_sum = -at(rows, rhs);
      return result;
    }

    std::size_t leaving = rows;
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t r = 0; r < rows; ++r) {
      const double coef = at(r, entering);
      if (coef <= kPivotTol) continue;
      const double ratio = at(r, rhs) / coef;
      if (ratio < best - 1e-15 || (leaving < rows && std::abs(ratio - best) <= 1e-15 && basis[r] < basis[leaving])) {
        best = ratio;
        leaving = r;
      }
    }
    // Phase-1 objective is bounded below by 0, so a pivot row always exists.
    if (leaving == rows) break;

    const double pivot = at(leaving, entering);
    for (std::size_t c = 0; c < width; ++c) at(leaving, c) /= pivot;
    for (std::size_t r = 0; r <= rows; ++r) {
      if (r == leaving) continue;
      const double f = at(r, entering);
      if (f == 0.0) continue;
      double* dst = &t[r * width];
      const double* src = &t[leaving * width];
      for (std::size_t c = 0; c < width; ++c) dst[c] -= f * src[c];
    }
    basis[leaving] = entering;
    ++result.iterations;
  }

  result.artificial_sum = -at(rows, rhs);
  result.x.assign(cols, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    if (basis[r] < cols) result.x[basis[r]] = at(r, rhs);
  }
  result.status = result.artificial_sum > tol ? PhaseOneStatus::Infeasible : PhaseOneStatus::Feasible;
  return result;
}

}  // namespace psilab::detail
