#pragma once

#include <stdexcept>
#include <string>

namespace fmr {

// Error categories map onto CLI exit codes (see tools/fmr_main.cpp).
enum class ErrorKind {
  kContract,   // precondition violated by the caller
  kConfig,     // bad configuration or input data
  kAdapter,    // model / generator / oracle adapter failure
  kIntegrity,  // persisted artifact does not match its manifest
  kNumeric,    // non-finite loss, activation or gradient
  kSolver,     // iterative solver diverged
  kInsufficientData,
  kUndefinedMetric,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

struct ContractViolation : Error {
  explicit ContractViolation(const std::string& w) : Error(ErrorKind::kContract, w) {}
};
struct ConfigError : Error {
  explicit ConfigError(const std::string& w) : Error(ErrorKind::kConfig, w) {}
};
struct AdapterError : Error {
  explicit AdapterError(const std::string& w) : Error(ErrorKind::kAdapter, w) {}
};
struct IntegrityError : Error {
  explicit IntegrityError(const std::string& w) : Error(ErrorKind::kIntegrity, w) {}
};
struct NumericError : Error {
  explicit NumericError(const std::string& w) : Error(ErrorKind::kNumeric, w) {}
};
struct SolverError : Error {
  explicit SolverError(const std::string& w) : Error(ErrorKind::kSolver, w) {}
};
struct InsufficientDataError : Error {
  explicit InsufficientDataError(const std::string& w) : Error(ErrorKind::kInsufficientData, w) {}
};
struct UndefinedMetricError : Error {
  explicit UndefinedMetricError(const std::string& w) : Error(ErrorKind::kUndefinedMetric, w) {}
};

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw ContractViolation(msg);
}

}  // namespace fmr
