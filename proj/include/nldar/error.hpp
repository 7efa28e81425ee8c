#pragma once

#include <stdexcept>
#include <string>

namespace nldar {

// Base for every failure raised by the library. Violations that are data
// (validation reports, skipped steps) are returned, not thrown.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidWorkflow : public Error {
 public:
  using Error::Error;
};

class NotFound : public Error {
 public:
  using Error::Error;
};

class SchemaMismatch : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  using Error::Error;
};

class Inconsistent : public Error {
 public:
  using Error::Error;
};

}  // namespace nldar
