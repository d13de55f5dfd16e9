#pragma once

#include <stdexcept>
#include <string>

namespace fedce {

// Base class for every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class PlayerCountExceeded : public Error {
 public:
  PlayerCountExceeded(int n, int cap, const std::string& what)
      : Error(what + ": " + std::to_string(n) + " players exceeds cap of " +
              std::to_string(cap)) {}
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

class LpInfeasible : public Error {
 public:
  using Error::Error;
};

class LpUnbounded : public Error {
 public:
  using Error::Error;
};

class NumericalBreakdown : public Error {
 public:
  using Error::Error;
};

class DegenerateTightSet : public Error {
 public:
  using Error::Error;
};

class EmptyDataset : public Error {
 public:
  using Error::Error;
};

class EmptyCoalition : public Error {
 public:
  using Error::Error;
};

class RoundOrderViolation : public Error {
 public:
  using Error::Error;
};

class MemoryBudgetExceeded : public Error {
 public:
  using Error::Error;
};

class TooFewSamples : public Error {
 public:
  using Error::Error;
};

// IDX parsing failures.
class BadMagic : public Error {
 public:
  using Error::Error;
};

class CountMismatch : public Error {
 public:
  using Error::Error;
};

class TruncatedFile : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class MissingResults : public Error {
 public:
  using Error::Error;
};

}  // namespace fedce
