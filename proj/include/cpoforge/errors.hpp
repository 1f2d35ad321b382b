#pragma once

#include <stdexcept>
#include <string>

namespace cpoforge {

// Bad input data, missing files, malformed records. Maps to CLI exit code 1.
class UserError : public std::runtime_error {
 public:
  explicit UserError(const std::string& what) : std::runtime_error(what) {}
};

// Broken internal invariants (shape mismatches, non-finite state).
// Maps to CLI exit code 2.
class InternalError : public std::logic_error {
 public:
  explicit InternalError(const std::string& what) : std::logic_error(what) {}
};

}  // namespace cpoforge
