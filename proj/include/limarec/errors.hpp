#pragma once

#include <stdexcept>
#include <string>

namespace limarec {

// Malformed or inconsistent input data (bad TSV rows, corrupt records,
// vocabulary mismatches). Maps to CLI exit code 2.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A NaN or Inf appeared in model state or outputs. Maps to CLI exit code 3.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace limarec
