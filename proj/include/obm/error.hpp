#pragma once

#include <stdexcept>
#include <string>

namespace obm {

// Exception categories map one-to-one onto CLI exit codes.
class config_error : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class numerical_error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class io_error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace exit_code {
inline constexpr int ok = 0;
inline constexpr int config = 2;
inline constexpr int numerical = 3;
inline constexpr int io = 4;
}  // namespace exit_code

}  // namespace obm
