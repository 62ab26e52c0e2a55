#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace splitvfu {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

class ArgumentError : public Error {
 public:
  using Error::Error;
};

// Operation called in the wrong lifecycle state (e.g. backward before forward).
class StateError : public Error {
 public:
  using Error::Error;
};

class UnsupportedOperation : public Error {
 public:
  using Error::Error;
};

class EvaluationError : public Error {
 public:
  using Error::Error;
};

// Malformed file content. `offset` is the byte position where parsing failed.
class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::size_t offset)
      : Error(what + " (at byte offset " + std::to_string(offset) + ")"), offset_(offset) {}
  std::size_t offset() const { return offset_; }

 private:
  std::size_t offset_;
};

// Violation of the round protocol on the message bus.
class ProtocolError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf encountered during training or unlearning.
class NumericError : public Error {
 public:
  NumericError(const std::string& phase, std::uint64_t round, const std::string& detail)
      : Error(phase + ": non-finite value at round " + std::to_string(round) + ": " + detail),
        phase_(phase),
        round_(round) {}
  const std::string& phase() const { return phase_; }
  std::uint64_t round() const { return round_; }

 private:
  std::string phase_;
  std::uint64_t round_;
};

// Invalid experiment configuration; `field` is a dotted path such as "dataset.idx.train_images".
class ConfigError : public Error {
 public:
  ConfigError(std::string field, const std::string& detail)
      : Error(field + ": " + detail), field_(std::move(field)) {}
  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

}  // namespace splitvfu
