#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace psilab::detail {

enum class PhaseOneStatus { Feasible, Infeasible, IterationLimit };

struct PhaseOneResult {
  PhaseOneStatus status = PhaseOneStatus::IterationLimit;
  std::vector<double> x;        // basic feasible point when Feasible
  double artificial_sum = 0.0;  // phase-1 objective at termination
  std::size_t iterations = 0;
};

// Decides whether {x >= 0 : A x = b} is non-empty. A is dense row-major,
// rows x cols. Dense tableau simplex on the sum of artificial variables with
// Bland's rule, so it terminates without cycling.
PhaseOneResult phase_one(std::span<const double> a, std::size_t rows, std::size_t cols,
                         std::span<const double> b, double tol, std::size_t max_iterations);

}  // namespace psilab::detail
