#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace cvpm {

using Vec = std::vector<double>;

struct Error : std::runtime_error {
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

// Dimension mismatch; message names both shapes.
struct ShapeError : Error {
  using Error::Error;
};
// Malformed input text.
struct ParseError : Error {
  using Error::Error;
};
// Well-formed input with invalid values.
struct ValidationError : Error {
  using Error::Error;
};
// Dataset-level impossibility: no overlap, unknown entity id.
struct DataError : Error {
  using Error::Error;
};
// Bad configuration or command-line usage.
struct ConfigError : Error {
  using Error::Error;
};
// Optimization failure: divergence, non-finite loss.
struct TrainError : Error {
  using Error::Error;
};
// Evaluation impossibility: empty test set, no candidates.
struct EvalError : Error {
  using Error::Error;
};
// Internal invariant broken, e.g. nondeterministic loss under a fixed seed.
struct ContractError : Error {
  using Error::Error;
};

// Process exit code for a thrown error: 2 usage/config, 3 data, 4 training,
// 5 evaluation, 1 anything else.
int exit_code_for(const std::exception& e);

// Shortest decimal string that parses back to exactly v.
std::string format_double(double v);

}  // namespace cvpm
