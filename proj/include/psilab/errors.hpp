#pragma once

#include <stdexcept>
#include <string>

namespace psilab {

// Argument outside an operation's mathematical domain (bad angle, empty list,
// dimension mismatch, unnormalizable vector).
class DomainError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Unknown preparation label, measurement setting or outcome name.
class LookupError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

// Invalid simulation or scenario configuration.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

}  // namespace psilab
