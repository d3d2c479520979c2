#pragma once

#include <stdexcept>
#include <string>

namespace dpts {

// Base class for all engine errors.
class Error : public std::runtime_error {
public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

class InvalidInput : public Error {
public:
  using Error::Error;
};

class InvalidConfig : public Error {
public:
  using Error::Error;
};

class NotFound : public Error {
public:
  using Error::Error;
};

class EmptyBatch : public Error {
public:
  using Error::Error;
};

// A backend (or a caller of one) broke the batch contract: wrong shapes,
// out-of-range confidences, padding impurity, rewards on live children.
class ProtocolViolation : public Error {
public:
  using Error::Error;
};

class LimitExceeded : public Error {
public:
  using Error::Error;
};

class BackendUnavailable : public Error {
public:
  using Error::Error;
};

class BackendError : public Error {
public:
  BackendError(int status, const std::string& msg) : Error(msg), status_(status) {}
  int status() const { return status_; }

private:
  int status_;
};

class IoError : public Error {
public:
  using Error::Error;
};

class NoBestPath : public Error {
public:
  using Error::Error;
};

class EmptyTrace : public Error {
public:
  using Error::Error;
};

}  // namespace dpts
