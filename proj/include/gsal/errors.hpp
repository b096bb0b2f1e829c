#pragma once

#include <stdexcept>
#include <string>

namespace gsal {

struct InputShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct IndexError : std::out_of_range {
  using std::out_of_range::out_of_range;
};

struct ArgumentError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct ConfigError : ArgumentError {
  using ArgumentError::ArgumentError;
};

struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct CorruptRecordError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct StalePartitionError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct UndefinedCorrelation : std::domain_error {
  using std::domain_error::domain_error;
};

class TrainingFailure : public std::runtime_error {
 public:
  TrainingFailure(const std::string& what, std::size_t epoch)
      : std::runtime_error(what + " (epoch " + std::to_string(epoch) + ")"), epoch_(epoch) {}

  std::size_t epoch() const noexcept { return epoch_; }

 private:
  std::size_t epoch_;
};

}  // namespace gsal
