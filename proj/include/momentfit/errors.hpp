#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace momentfit {

/// Argument outside the mathematical domain of an operation.
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Summary or mixture file that does not conform to its schema. `path()` is a
/// JSON-pointer-like location such as "bins[2].upper".
class ParseError : public std::runtime_error {
 public:
  ParseError(std::string path, const std::string& what)
      : std::runtime_error(path.empty() ? what : path + ": " + what), path_(std::move(path)) {}

  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
};

/// A covariance or Hessian that stays non-factorizable after diagonal jitter.
class SingularMatrixError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Optimizer failure (non-finite objective at every start, etc).
class FitError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace momentfit
