#pragma once
#include <stdexcept>
#include <string>

namespace meepo {

// Error taxonomy used across the library. The CLI maps usage problems to
// exit code 1 and everything below to exit code 2.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Tensor extents do not line up.
struct DimensionError : Error {
  using Error::Error;
};

// A scalar argument is outside its legal range (kernel size, stride, ...).
struct ParameterError : Error {
  using Error::Error;
};

// Input data violates a contract (empty cloud, label out of range, ...).
struct DataError : Error {
  using Error::Error;
};

// Coordinate outside the encodable range.
struct RangeError : Error {
  using Error::Error;
};

// Malformed file; carries the byte offset where parsing failed.
struct FormatError : Error {
  FormatError(const std::string& what, std::size_t offset)
      : Error(what + " (at byte " + std::to_string(offset) + ")"), byte_offset(offset) {}
  std::size_t byte_offset;
};

// Non-finite value produced where a finite one is required.
struct NumericError : Error {
  using Error::Error;
};

// Model configuration is inconsistent; raised at build time, not run time.
struct ConfigError : Error {
  using Error::Error;
};

// The numeric kernels live in meepo::num; expose the taxonomy there too.
namespace num {
using meepo::ConfigError;
using meepo::DataError;
using meepo::DimensionError;
using meepo::Error;
using meepo::FormatError;
using meepo::NumericError;
using meepo::ParameterError;
using meepo::RangeError;
}  // namespace num

}  // namespace meepo
