#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace latchange {

enum class ErrorKind {
  io,
  format,
  truncated,
  unsupported,
  shape_mismatch,
  invalid_argument,
  empty_mask,
  degenerate,
  rank_deficient,
  unresolvable_point,
  demodulation,
  not_found,
  invariant,
};

constexpr std::string_view to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::io: return "io";
    case ErrorKind::format: return "format";
    case ErrorKind::truncated: return "truncated";
    case ErrorKind::unsupported: return "unsupported";
    case ErrorKind::shape_mismatch: return "shape mismatch";
    case ErrorKind::invalid_argument: return "invalid argument";
    case ErrorKind::empty_mask: return "empty mask";
    case ErrorKind::degenerate: return "degenerate";
    case ErrorKind::rank_deficient: return "rank deficient";
    case ErrorKind::unresolvable_point: return "unresolvable point";
    case ErrorKind::demodulation: return "demodulation";
    case ErrorKind::not_found: return "not found";
    case ErrorKind::invariant: return "invariant";
  }
  return "unknown";
}

// Every engine failure carries a kind so the CLI can map it to an exit code
// and the service to an HTTP status. what() always starts with the kind name.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& detail)
      : std::runtime_error(std::string(to_string(kind)) + ": " + detail), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace latchange
