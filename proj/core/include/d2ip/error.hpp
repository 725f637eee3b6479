#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>

namespace d2ip {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A precondition on argument values or shapes was violated.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// A file or sidecar does not match the expected layout or metadata.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// A file could not be opened, read or written.
class IoError : public Error {
 public:
  using Error::Error;
};

/// A metric is undefined for its input (constant signal, zero reference).
class UndefinedMetric : public Error {
 public:
  using Error::Error;
};

/// A sensitivity matrix row cannot be normalized.
class DegenerateOperator : public Error {
 public:
  DegenerateOperator(const std::string& what, std::size_t row)
      : Error(what), row_(row) {}
  std::size_t row() const noexcept { return row_; }

 private:
  std::size_t row_;
};

/// A non-finite value appeared during a computation.
///
/// `stage` names the computation ("upws", "frame", "loss", "tv", ...);
/// `iteration` and `frame` are set when the failure happened inside an
/// iterative solver or a sequence run.
class NumericalError : public Error {
 public:
  NumericalError(const std::string& what, std::string stage,
                 std::optional<int> iteration = std::nullopt,
                 std::optional<int> frame = std::nullopt)
      : Error(what), stage_(std::move(stage)), iteration_(iteration), frame_(frame) {}

  const std::string& stage() const noexcept { return stage_; }
  std::optional<int> iteration() const noexcept { return iteration_; }
  std::optional<int> frame() const noexcept { return frame_; }

 private:
  std::string stage_;
  std::optional<int> iteration_;
  std::optional<int> frame_;
};

}  // namespace d2ip
