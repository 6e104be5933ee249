#pragma once

#include <stdexcept>
#include <string>

namespace mmpt {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad user input: malformed labels, shapes, configs, indices.
class ValidationError : public Error {
 public:
  using Error::Error;
};

// On-disk artifact does not match its manifest.
class CorruptionError : public Error {
 public:
  using Error::Error;
};

// An evaluation protocol precondition does not hold (e.g. no unseen samples).
class ProtocolError : public Error {
 public:
  using Error::Error;
};

// Non-finite values reached a checked boundary.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace mmpt
