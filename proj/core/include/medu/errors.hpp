#pragma once

#include <stdexcept>
#include <string>

namespace medu {

/// Malformed experiment configuration. The CLI maps this to exit code 2.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A serialized store or checkpoint that cannot be parsed (bad magic,
/// unsupported version, truncation). Messages name the failing location.
class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Structurally valid history whose payload cannot be decoded
/// (out-of-range point index, corrupt scale). Messages carry (round, user).
class DecodeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace medu
