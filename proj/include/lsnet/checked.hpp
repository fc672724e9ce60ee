#pragma once

#include <cstdint>
#include <string>

#include "lsnet/errors.hpp"

namespace lsnet {

inline std::uint64_t checked_mul(std::uint64_t a, std::uint64_t b) {
  std::uint64_t r = 0;
  if (__builtin_mul_overflow(a, b, &r)) {
    throw ArithmeticError("MAC tally overflow: " + std::to_string(a) + " * " + std::to_string(b));
  }
  return r;
}

inline std::uint64_t checked_add(std::uint64_t a, std::uint64_t b) {
  std::uint64_t r = 0;
  if (__builtin_add_overflow(a, b, &r)) {
    throw ArithmeticError("MAC tally overflow: " + std::to_string(a) + " + " + std::to_string(b));
  }
  return r;
}

template <typename... Rest>
std::uint64_t checked_mul(std::uint64_t a, std::uint64_t b, Rest... rest) {
  return checked_mul(checked_mul(a, b), static_cast<std::uint64_t>(rest)...);
}

}  // namespace lsnet
