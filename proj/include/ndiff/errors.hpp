#ifndef NDIFF_ERRORS_HPP
#define NDIFF_ERRORS_HPP

#include <optional>
#include <stdexcept>
#include <string>
#include <utility>

namespace ndiff {

/// Bad input to an operation: wrong sizes, nonpositive steps, non-finite data.
class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A factorization or innovation variance collapsed numerically.
///
/// Carries the abscissa index (0-based) and, for measurement updates, the
/// index of the measurement within that abscissa, when known.
class ConditioningError : public std::runtime_error {
 public:
  explicit ConditioningError(std::string reason, std::optional<std::size_t> abscissa = std::nullopt,
                             std::optional<std::size_t> measurement = std::nullopt)
      : std::runtime_error(decorate(reason, abscissa, measurement)),
        reason_(std::move(reason)),
        abscissa_(abscissa),
        measurement_(measurement) {}

  const std::string& reason() const noexcept { return reason_; }
  std::optional<std::size_t> abscissa() const noexcept { return abscissa_; }
  std::optional<std::size_t> measurement() const noexcept { return measurement_; }

  /// Same failure, relocated to abscissa `k` (and measurement `j`).
  ConditioningError at(std::size_t k, std::optional<std::size_t> j = std::nullopt) const {
    return ConditioningError(reason_, k, j);
  }

 private:
  static std::string decorate(const std::string& reason, std::optional<std::size_t> k,
                              std::optional<std::size_t> j) {
    if (!k) return reason;
    std::string out = reason + " (abscissa " + std::to_string(*k);
    if (j) out += ", measurement " + std::to_string(*j);
    return out + ")";
  }

  std::string reason_;
  std::optional<std::size_t> abscissa_;
  std::optional<std::size_t> measurement_;
};

/// Parameter estimation could not proceed (e.g. the likelihood is non-finite
/// over the whole search range).
class FittingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A violated internal invariant; indicates a bug rather than bad data.
class InternalError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Malformed input file. `line()` is 1-based, 0 when not tied to a line.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : std::runtime_error(line ? what + " (line " + std::to_string(line) + ")" : what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

}  // namespace ndiff

#endif  // NDIFF_ERRORS_HPP
