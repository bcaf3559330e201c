#pragma once

#include <stdexcept>
#include <string>

#include "alnet/real.hpp"

ALNET_NS_BEGIN

enum class ErrorKind {
  Config,      // inconsistent shapes or settings
  Input,       // bad runtime data
  Parse,       // malformed text
  Validation,  // well-formed but violates an invariant
  Usage,       // API or command misuse
  Io,
  CheckpointMagic,
  CheckpointVersion,
  CheckpointTruncated,
  CheckpointShape,
  Numeric,     // divergence
};

const char* to_string(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) {
  throw Error(kind, what);
}

inline void require(bool cond, ErrorKind kind, const std::string& what) {
  if (!cond) throw Error(kind, what);
}

ALNET_NS_END
