#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace xicl {

/// Base class for everything thrown by this library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input data, bad configuration, or a violated precondition.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// A remote endpoint could not be reached (retries exhausted) or is disabled.
class TransportError : public Error {
 public:
  explicit TransportError(const std::string& what, int attempts = 0)
      : Error(what), attempts_(attempts) {}
  int attempts() const { return attempts_; }

 private:
  int attempts_ = 0;
};

/// The endpoint answered, but the payload violates the wire contract.
class ProtocolError : public Error {
 public:
  using Error::Error;
};

/// A prompt cannot be made to fit the token budget even with zero
/// demonstrations.
class BudgetError : public Error {
 public:
  BudgetError(const std::string& what, std::int64_t example_id, int token_count)
      : Error(what), example_id_(example_id), token_count_(token_count) {}
  std::int64_t example_id() const { return example_id_; }
  int token_count() const { return token_count_; }

 private:
  std::int64_t example_id_;
  int token_count_;
};

}  // namespace xicl
