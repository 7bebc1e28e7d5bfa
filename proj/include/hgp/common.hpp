#pragma once

#include <stdexcept>
#include <string>

namespace hgp {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Size/shape mismatches and invalid argument values.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

// A matrix that was required to be symmetric positive definite turned out
// not to be (within working precision). The message names the offending
// block and suggests the standard remedies.
class NotSpdError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace hgp
