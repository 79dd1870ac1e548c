#pragma once

#include <stdexcept>
#include <string>

namespace panelcf {

// Every failure raised by the library. Messages name the offending
// unit, period, file line or parameter.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace panelcf
