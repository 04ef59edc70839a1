#pragma once

#include <stdexcept>
#include <string>

namespace topicrag {

// Base of every error the library throws. The CLI maps each subclass to a
// distinct exit code (see tools/topicrag.cpp).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor or embedding shapes disagree.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Input data violates a documented invariant (taxonomy cycle, duplicate id,
// missing embedding, ...).
class ValidationError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf produced where the math must stay finite, or training diverged.
class NumericError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Network failure or a 5xx reply. Callers may retry.
class TransportError : public Error {
 public:
  using Error::Error;
};

// The remote side answered, but not in the agreed wire format.
class ProtocolError : public Error {
 public:
  using Error::Error;
};

// Generation failed after the prompt was assembled. Keeps the prompt so the
// request can be replayed by hand.
class GenerationError : public Error {
 public:
  GenerationError(const std::string& what, std::string prompt)
      : Error(what), prompt_(std::move(prompt)) {}

  const std::string& prompt() const noexcept { return prompt_; }

 private:
  std::string prompt_;
};

}  // namespace topicrag
