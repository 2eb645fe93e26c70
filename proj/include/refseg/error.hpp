// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace refseg {

// Error categories. `config` and `schema` map to CLI exit code 2,
// everything else to 3.
enum class Errc {
  config,
  schema,
  run,
  empty_mask,
  dim_mismatch,
  parse,
  scorer,
};

class Error : public std::runtime_error {
public:
  Error(Errc code, const std::string& msg) : std::runtime_error(msg), code_(code) {}
  Errc code() const noexcept { return code_; }

private:
  Errc code_;
};

[[noreturn]] inline void throw_error(Errc c, const std::string& msg) { throw Error(c, msg); }

inline int exit_code_for(Errc c) {
  return (c == Errc::config || c == Errc::schema) ? 2 : 3;
}

}  // namespace refseg
