#pragma once

#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>

namespace dkn {

// Shape/precondition violations on tensor arguments.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Invalid hyperparameters or impossible output geometry.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Violated API contract (programming error, not bad data).
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// File parsing / serialization failures.
class IoError : public std::runtime_error {
 public:
  enum class Kind { MalformedHeader, UnexpectedEof, Unsupported, BadMagic, BadVersion, Mismatch, Other };
  IoError(Kind kind, const std::string& msg) : std::runtime_error(msg), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

namespace detail {

inline void cat_into(std::ostringstream&) {}

template <typename A, typename... Rest>
void cat_into(std::ostringstream& os, A&& a, Rest&&... rest) {
  os << std::forward<A>(a);
  cat_into(os, std::forward<Rest>(rest)...);
}

template <typename... Args>
std::string cat(Args&&... args) {
  std::ostringstream os;
  cat_into(os, std::forward<Args>(args)...);
  return os.str();
}

}  // namespace detail

}  // namespace dkn

#define DKN_CHECK(cond, err_type, ...)                            \
  do {                                                            \
    if (!(cond)) throw err_type(::dkn::detail::cat(__VA_ARGS__)); \
  } while (0)
