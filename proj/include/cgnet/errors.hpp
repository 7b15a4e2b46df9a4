#pragma once

#include <stdexcept>
#include <string>

namespace cgnet {

/// Every label in the batch equals the ignore index, so the masked loss is undefined.
class AllIgnoredError : public std::runtime_error {
 public:
  AllIgnoredError() : std::runtime_error("softmax_ce_masked: every pixel is ignored; loss is undefined") {}
};

/// Malformed or unsupported file contents.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ChecksumError : public FormatError {
 public:
  using FormatError::FormatError;
};

/// A non-finite gradient reached the optimizer.
class NonFiniteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace cgnet
