#pragma once

#include <stdexcept>
#include <string>

namespace linabs {

// Base for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid grid, pulse or experiment configuration.
class ConfigurationError : public Error {
 public:
  using Error::Error;
};

// Argument outside the domain an operation is defined on.
class DomainError : public Error {
 public:
  using Error::Error;
};

// Time propagation lost unitarity beyond tolerance.
class IntegrationError : public Error {
 public:
  using Error::Error;
};

}  // namespace linabs
