#pragma once

#include <stdexcept>
#include <string>

namespace crowdkernel {

/// A model or fit parameter is outside its admissible range.
struct ParameterError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// An argument violates a precondition (shape, emptiness, unknown id).
struct ArgumentError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Inputs are outside the mathematical domain of the operation.
struct DomainError : std::domain_error {
  using std::domain_error::domain_error;
};

/// A malformed request reached the annotation service.
struct ProtocolError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace crowdkernel
