#pragma once

#include <stdexcept>
#include <string>

namespace ltseg {

// Every failure raised by the library. Messages name the offending index,
// layer, file or parameter so the CLI can print them verbatim.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace ltseg
